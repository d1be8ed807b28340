//! Traffic accounting and the analytic communication cost model.
//!
//! Costs are expressed in bytes moved per byte of confirmed request, where a
//! request counts with its full wire size (body plus id, tag and length).
//! Client-to-replica traffic is part of the receiving replica's cost; acks are
//! part of the sending replica's cost.

mod measure;
mod model;

use serde::Serialize;

use crate::message::Category;
use crate::types::{ReplicaId, Time};

pub use measure::{measured_costs, MeasuredCosts, ReplicaCost, Window};
pub use model::{
    analytic_leader_cost, analytic_replica_cost, baseline_scaleup_ratio, retrieval_cost_bounds, scaleup_ratio,
    scaling_factor, Attack, CostModelInputs, RetrievalBound,
};

const CATEGORIES: usize = Category::ALL.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Direction {
    Sent,
    Received,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Sent => "sent",
            Direction::Received => "received",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub bytes: u64,
    pub count: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplicaLedger {
    pub sent: [Tally; CATEGORIES],
    pub received: [Tally; CATEGORIES],
}

impl ReplicaLedger {
    pub fn get(&self, dir: Direction, cat: Category) -> Tally {
        match dir {
            Direction::Sent => self.sent[cat.index()],
            Direction::Received => self.received[cat.index()],
        }
    }

    pub fn total(&self, dir: Direction) -> u64 {
        let side = match dir {
            Direction::Sent => &self.sent,
            Direction::Received => &self.received,
        };
        side.iter().map(|t| t.bytes).sum()
    }
}

/// One BFTblock executed for the first time by some honest replica.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfirmationMark {
    pub time: Time,
    pub serial: u64,
    /// Requests executed for the first time by this block.
    pub requests: u64,
    /// Cumulative bytes per (replica, direction, category) at this instant.
    snapshot: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ViewChangeRecord {
    pub view: u64,
    pub started: Time,
    pub installed: Option<Time>,
}

/// One CSV row of the ledger export.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LedgerRow {
    pub replica: u32,
    pub category: &'static str,
    pub direction: &'static str,
    pub bytes: u64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricsLedger {
    pub n: usize,
    pub payload: usize,
    pub request_size: usize,
    pub replicas: Vec<ReplicaLedger>,
    pub confirmed_requests: u64,
    pub confirmed_payload_bits: u64,
    pub marks: Vec<ConfirmationMark>,
    /// Submit to first ack, per acknowledged request, in acknowledgement order.
    pub latencies: Vec<Time>,
    pub view_changes: Vec<ViewChangeRecord>,
}

impl MetricsLedger {
    pub fn new(n: usize, payload: usize, request_size: usize) -> Self {
        MetricsLedger {
            n,
            payload,
            request_size,
            replicas: vec![ReplicaLedger::default(); n],
            confirmed_requests: 0,
            confirmed_payload_bits: 0,
            marks: Vec::new(),
            latencies: Vec::new(),
            view_changes: Vec::new(),
        }
    }

    pub fn record(&mut self, replica: ReplicaId, dir: Direction, cat: Category, bytes: usize) {
        let r = &mut self.replicas[replica.index()];
        let t = match dir {
            Direction::Sent => &mut r.sent[cat.index()],
            Direction::Received => &mut r.received[cat.index()],
        };
        t.bytes += bytes as u64;
        t.count += 1;
    }

    /// Folds in traffic counted elsewhere, e.g. by a replica process.
    pub fn add(&mut self, replica: ReplicaId, dir: Direction, cat: Category, tally: Tally) {
        let r = &mut self.replicas[replica.index()];
        let t = match dir {
            Direction::Sent => &mut r.sent[cat.index()],
            Direction::Received => &mut r.received[cat.index()],
        };
        t.bytes += tally.bytes;
        t.count += tally.count;
    }

    fn snapshot(&self) -> Vec<u64> {
        let mut v = Vec::with_capacity(self.n * 2 * CATEGORIES);
        for r in &self.replicas {
            v.extend(r.sent.iter().map(|t| t.bytes));
            v.extend(r.received.iter().map(|t| t.bytes));
        }
        v
    }

    pub fn record_confirmation(&mut self, time: Time, serial: u64, requests: u64) {
        self.confirmed_requests += requests;
        self.confirmed_payload_bits += requests * self.payload as u64 * 8;
        let snapshot = self.snapshot();
        self.marks.push(ConfirmationMark {
            time,
            serial,
            requests,
            snapshot,
        });
    }

    pub fn record_latency(&mut self, latency: Time) {
        self.latencies.push(latency);
    }

    pub fn view_change_started(&mut self, view: u64, at: Time) {
        if !self.view_changes.iter().any(|v| v.view == view) {
            self.view_changes.push(ViewChangeRecord {
                view,
                started: at,
                installed: None,
            });
        }
    }

    pub fn view_installed(&mut self, view: u64, at: Time) {
        match self.view_changes.iter_mut().find(|v| v.view == view) {
            Some(v) => {
                if v.installed.is_none() {
                    v.installed = Some(at);
                }
            }
            None => self.view_changes.push(ViewChangeRecord {
                view,
                started: at,
                installed: Some(at),
            }),
        }
    }

    pub fn total(&self, replica: ReplicaId) -> u64 {
        let r = &self.replicas[replica.index()];
        r.total(Direction::Sent) + r.total(Direction::Received)
    }

    /// Bytes sent and received between replicas, excluding client traffic.
    pub fn replica_traffic(&self) -> (u64, u64) {
        let skip = Category::ClientTraffic.index();
        let sum = |side: &[Tally; CATEGORIES]| -> u64 {
            side.iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, t)| t.bytes)
                .sum()
        };
        self.replicas
            .iter()
            .fold((0, 0), |(s, r), l| (s + sum(&l.sent), r + sum(&l.received)))
    }

    /// Percentile of request latency, `q` in `[0, 1]`.
    pub fn latency_quantile(&self, q: f64) -> Option<Time> {
        if self.latencies.is_empty() {
            return None;
        }
        let mut v = self.latencies.clone();
        v.sort_unstable();
        let idx = ((v.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
        Some(v[idx])
    }

    /// One row per (replica, category, direction) with nonzero traffic.
    pub fn rows(&self) -> Vec<LedgerRow> {
        let mut rows = Vec::new();
        for (i, r) in self.replicas.iter().enumerate() {
            for cat in Category::ALL {
                for dir in [Direction::Sent, Direction::Received] {
                    let t = r.get(dir, cat);
                    if t.count == 0 {
                        continue;
                    }
                    rows.push(LedgerRow {
                        replica: i as u32,
                        category: cat.name(),
                        direction: dir.name(),
                        bytes: t.bytes,
                        count: t.count,
                    });
                }
            }
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_to_totals() {
        let mut l = MetricsLedger::new(4, 128, 149);
        l.record(ReplicaId(1), Direction::Received, Category::Datablock, 1000);
        l.record(ReplicaId(1), Direction::Received, Category::Ready, 37);
        l.record(ReplicaId(1), Direction::Sent, Category::BftBlock, 100);
        l.record(ReplicaId(2), Direction::Sent, Category::Datablock, 1000);
        for r in 0..4 {
            let from_rows: u64 = l
                .rows()
                .iter()
                .filter(|row| row.replica == r)
                .map(|row| row.bytes)
                .sum();
            assert_eq!(from_rows, l.total(ReplicaId(r)));
        }
        assert_eq!(l.total(ReplicaId(1)), 1137);
    }

    #[test]
    fn payload_bits_follow_requests() {
        let mut l = MetricsLedger::new(4, 128, 149);
        l.record_confirmation(10, 1, 5);
        l.record_confirmation(20, 2, 7);
        assert_eq!(l.confirmed_requests, 12);
        assert_eq!(l.confirmed_payload_bits, 12 * 128 * 8);
    }

    #[test]
    fn view_change_durations() {
        let mut l = MetricsLedger::new(4, 128, 149);
        l.view_change_started(2, 100);
        l.view_change_started(2, 150);
        l.view_installed(2, 400);
        l.view_installed(2, 500);
        assert_eq!(
            l.view_changes,
            vec![ViewChangeRecord {
                view: 2,
                started: 100,
                installed: Some(400)
            }]
        );
    }

    #[test]
    fn latency_quantiles() {
        let mut l = MetricsLedger::new(4, 128, 149);
        assert_eq!(l.latency_quantile(0.5), None);
        for x in [5, 1, 3, 2, 4] {
            l.record_latency(x);
        }
        assert_eq!(l.latency_quantile(0.0), Some(1));
        assert_eq!(l.latency_quantile(0.5), Some(3));
        assert_eq!(l.latency_quantile(1.0), Some(5));
    }
}
