//! Per-replica costs measured over the steady-state part of a run.

use serde::Serialize;

use super::{Direction, MetricsLedger, CATEGORIES};
use crate::error::MetricsError;
use crate::message::Category;
use crate::types::{ReplicaId, Time};

/// Fraction of confirmations dropped at each end of the run.
const EDGE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Window {
    pub start: Time,
    pub end: Time,
    /// BFTblocks confirmed inside the window.
    pub blocks: usize,
    pub requests: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Share {
    pub category: Category,
    pub direction: Direction,
    pub bytes: u64,
    /// Fraction of the replica's sent plus received bytes.
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicaCost {
    pub replica: u32,
    pub sent: u64,
    pub received: u64,
    /// `(sent + received) / confirmed request bytes`.
    pub cost: f64,
    pub breakdown: Vec<Share>,
}

impl ReplicaCost {
    pub fn bytes(&self, dir: Direction, cat: Category) -> u64 {
        self.breakdown
            .iter()
            .find(|s| s.direction == dir && s.category == cat)
            .map_or(0, |s| s.bytes)
    }

    pub fn share(&self, dir: Direction, cat: Category) -> f64 {
        self.breakdown
            .iter()
            .find(|s| s.direction == dir && s.category == cat)
            .map_or(0.0, |s| s.share)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasuredCosts {
    pub window: Window,
    /// Confirmed request bytes inside the window.
    pub payload_bytes: u64,
    pub replicas: Vec<ReplicaCost>,
    /// Confirmed request bytes per simulated second.
    pub throughput: f64,
}

impl MeasuredCosts {
    pub fn replica(&self, id: ReplicaId) -> &ReplicaCost {
        &self.replicas[id.index()]
    }

    pub fn max_cost(&self) -> f64 {
        self.replicas.iter().map(|r| r.cost).fold(0.0, f64::max)
    }

    /// Cost of the given categories only, both directions, for one replica.
    pub fn partial_cost(&self, id: ReplicaId, cats: &[Category]) -> f64 {
        let r = self.replica(id);
        let bytes: u64 = cats
            .iter()
            .flat_map(|&c| [r.bytes(Direction::Sent, c), r.bytes(Direction::Received, c)])
            .sum();
        bytes as f64 / self.payload_bytes as f64
    }
}

/// Traffic between the confirmations that close the warm-up and open the
/// drain, normalized by the request bytes confirmed in between.
pub fn measured_costs(ledger: &MetricsLedger) -> Result<MeasuredCosts, MetricsError> {
    let m = ledger.marks.len();
    if m == 0 || ledger.confirmed_requests == 0 {
        return Err(MetricsError::NoConfirmations);
    }
    let drop = m / EDGE;
    let hi = m - 1 - drop;
    let (lo_snapshot, start, first) = if drop == 0 {
        (vec![0; ledger.n * 2 * CATEGORIES], 0, 0)
    } else {
        let lo = &ledger.marks[drop - 1];
        (lo.snapshot.clone(), lo.time, drop)
    };
    let hi_mark = &ledger.marks[hi];
    let requests: u64 = ledger.marks[first..=hi].iter().map(|k| k.requests).sum();
    if requests == 0 {
        return Err(MetricsError::NoConfirmations);
    }
    let payload_bytes = requests * ledger.request_size as u64;

    let replicas = (0..ledger.n)
        .map(|r| {
            let base = r * 2 * CATEGORIES;
            let delta = |i: usize| hi_mark.snapshot[base + i] - lo_snapshot[base + i];
            let sent: u64 = (0..CATEGORIES).map(delta).sum();
            let received: u64 = (CATEGORIES..2 * CATEGORIES).map(delta).sum();
            let total = (sent + received).max(1) as f64;
            let mut breakdown = Vec::new();
            for (offset, dir) in [(0, Direction::Sent), (CATEGORIES, Direction::Received)] {
                for cat in Category::ALL {
                    let bytes = delta(offset + cat.index());
                    if bytes > 0 {
                        breakdown.push(Share {
                            category: cat,
                            direction: dir,
                            bytes,
                            share: bytes as f64 / total,
                        });
                    }
                }
            }
            ReplicaCost {
                replica: r as u32,
                sent,
                received,
                cost: (sent + received) as f64 / payload_bytes as f64,
                breakdown,
            }
        })
        .collect();

    let end = hi_mark.time;
    let secs = end.saturating_sub(start) as f64 / 1e6;
    Ok(MeasuredCosts {
        window: Window {
            start,
            end,
            blocks: hi + 1 - first,
            requests,
        },
        payload_bytes,
        replicas,
        throughput: if secs > 0.0 { payload_bytes as f64 / secs } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ledger_has_no_costs() {
        let l = MetricsLedger::new(4, 128, 149);
        assert_eq!(measured_costs(&l), Err(MetricsError::NoConfirmations));
    }

    #[test]
    fn window_drops_edges() {
        let mut l = MetricsLedger::new(4, 128, 100);
        for s in 1..=20u64 {
            // Warm-up and drain carry heavy traffic that must not count.
            let bytes = if s <= 2 || s > 18 { 1_000_000 } else { 300 };
            l.record(ReplicaId(0), Direction::Sent, Category::Datablock, bytes);
            l.record(ReplicaId(0), Direction::Received, Category::Ready, 100);
            l.record_confirmation(s * 1000, s, 2);
        }
        let c = measured_costs(&l).unwrap();
        assert_eq!(c.window.blocks, 16);
        assert_eq!(c.window.start, 2000);
        assert_eq!(c.window.end, 18_000);
        assert_eq!(c.payload_bytes, 16 * 2 * 100);
        let r0 = c.replica(ReplicaId(0));
        assert_eq!(r0.sent, 16 * 300);
        assert_eq!(r0.received, 16 * 100);
        assert!((r0.cost - 6400.0 / 3200.0).abs() < 1e-12);
        assert!((r0.share(Direction::Sent, Category::Datablock) - 0.75).abs() < 1e-12);
        assert_eq!(c.replica(ReplicaId(1)).cost, 0.0);
        // 3200 bytes over 16 ms.
        assert!((c.throughput - 200_000.0).abs() < 1e-6);
    }

    #[test]
    fn short_runs_use_everything() {
        let mut l = MetricsLedger::new(4, 128, 100);
        l.record(ReplicaId(2), Direction::Sent, Category::Datablock, 500);
        l.record_confirmation(10, 1, 5);
        let c = measured_costs(&l).unwrap();
        assert_eq!(c.window.blocks, 1);
        assert!((c.replica(ReplicaId(2)).cost - 1.0).abs() < 1e-12);
        assert!((c.partial_cost(ReplicaId(2), &[Category::Datablock]) - 1.0).abs() < 1e-12);
    }
}
