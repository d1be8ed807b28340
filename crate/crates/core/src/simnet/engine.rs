//! The event loop.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rustc_hash::FxHashMap as HashMap;
use std::sync::Arc;

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use super::adversary::{Adversary, Outgoing};
use super::monitor::{SafetyMonitor, Violation};
use super::trace::{fingerprint, Endpoint, EventRecord, SentRecord, Trace, TraceRecord, ViewEvent};
use super::{submission_target, Scenario};
use crate::crypto::{Digest, ThresholdKeySet};
use crate::error::ConfigError;
use crate::idset::RequestIdSet;
use crate::message::Message;
use crate::metrics::{Direction, MetricsLedger};
use crate::params::MS;
use crate::replica::{Dest, InputEvent, Note, OutputAction, Replica, TimerId, INITIAL_VIEW};
use crate::types::{BftBlock, ReplicaId, Request, RequestId, Time};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("safety violation at t={time}us (seed {seed}): {violation}")]
    SafetyViolation {
        violation: Violation,
        time: Time,
        seed: u64,
        /// Everything up to and including the offending event.
        trace: Box<Trace>,
    },
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Keep a record of every event; needed for NDJSON dumps.
    pub capture_trace: bool,
    /// Honest replicas vote for any leader-signed block and ignore
    /// equivocation.
    #[cfg(feature = "fault-injection")]
    pub skip_vote_once: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub seed: u64,
    pub issued: u64,
    pub acked: u64,
    /// Fewest requests executed by any honest replica.
    pub min_honest_executed: u64,
    /// Every request was acknowledged and executed by every honest replica.
    pub completed: bool,
    pub end_time: Time,
    pub events: u64,
    pub final_view: u64,
    /// Views installed beyond the initial one.
    pub view_changes: u64,
    /// Longest run of view installs without new requests executing.
    pub max_consecutive_view_changes: u64,
    /// Requests submitted before `gst + duration / 2` that some honest
    /// replica has not executed.
    pub late_requests: u64,
    /// Messages still travelling when the run ended.
    pub in_flight: u64,
}

/// A block some honest replica saw notarized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NotarizedRecord {
    pub block: BftBlock,
    pub first: Time,
    /// Honest replicas holding the notarization.
    pub holders: usize,
}

pub struct RunOutput {
    pub trace: Trace,
    pub ledger: MetricsLedger,
    pub stats: RunStats,
    /// Ordered by serial, then first notarization time.
    pub notarized: Vec<NotarizedRecord>,
    /// When an honest replica first started a view change.
    pub first_view_change: Option<Time>,
    pub replicas: Vec<Replica>,
    pub honest: Vec<bool>,
    pub keys: Arc<ThresholdKeySet>,
}

impl RunOutput {
    pub fn honest_replicas(&self) -> impl Iterator<Item = &Replica> {
        self.replicas
            .iter()
            .zip(&self.honest)
            .filter(|(_, h)| **h)
            .map(|(r, _)| r)
    }
}

#[derive(Clone, Debug)]
struct NetMsg {
    id: u64,
    from: Endpoint,
    to: Endpoint,
    msg: Message,
    sent_at: Time,
    bytes: usize,
}

#[derive(Debug)]
enum Event {
    /// Reached the receiver's link; delivered once it clears the link.
    Arrive(NetMsg),
    Deliver(NetMsg),
    Timer {
        replica: ReplicaId,
        id: TimerId,
        generation: u64,
    },
    ClientIssue,
    ClientRetry {
        id: RequestId,
        attempt: u32,
    },
}

impl Event {
    fn is_network(&self) -> bool {
        matches!(self, Event::Arrive(_) | Event::Deliver(_))
    }
}

struct Queued {
    time: Time,
    seq: u64,
    event: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Min-heap on (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct Client {
    view: u64,
    quota: u64,
    issued: u64,
    /// Sequence number to current attempt.
    pending: BTreeMap<u64, u32>,
}

struct Sim<'a> {
    sc: &'a Scenario,
    capture: bool,
    n: usize,
    now: Time,
    seq: u64,
    next_msg: u64,
    queue: BinaryHeap<Queued>,
    rng: ChaCha8Rng,
    replicas: Vec<Replica>,
    honest: Vec<bool>,
    adversary: Adversary,
    monitor: SafetyMonitor,
    timers: HashMap<(ReplicaId, TimerId), u64>,
    generation: u64,
    link_free: Vec<Time>,
    ledger: MetricsLedger,
    trace: Trace,

    clients: Vec<Client>,
    body: Bytes,
    total: u64,
    issued: u64,
    acked: u64,
    open_loop_gap: Option<f64>,
    submitted_at: HashMap<RequestId, Time>,

    executed: RequestIdSet,
    serials: BTreeSet<u64>,
    notarized: HashMap<Digest, NotarizedRecord>,
    first_view_change: Option<Time>,
    highest_view: u64,
    streak: u64,
    max_streak: u64,
    maybe_done: bool,
    events: u64,
}

pub fn run(sc: &Scenario) -> Result<RunOutput, SimError> {
    run_with(sc, &RunOptions::default())
}

pub fn run_with(sc: &Scenario, opts: &RunOptions) -> Result<RunOutput, SimError> {
    sc.validate()?;
    let p = &sc.params;
    let keys = Arc::new(
        ThresholdKeySet::generate(p.n, p.f, sc.seed).map_err(|e| ConfigError::invalid("params", e.to_string()))?,
    );
    let honest: Vec<bool> = (0..p.n as u32).map(|i| !sc.is_faulty(ReplicaId(i))).collect();
    let replicas = (0..p.n as u32)
        .map(|i| {
            #[allow(unused_mut)]
            let mut r = Replica::new(ReplicaId(i), p.clone(), keys.clone());
            #[cfg(feature = "fault-injection")]
            {
                r.skip_vote_once = opts.skip_vote_once && honest[i as usize];
            }
            r
        })
        .collect();
    let c = &sc.clients;
    let clients = (0..c.clients as u64)
        .map(|i| Client {
            view: INITIAL_VIEW,
            quota: c.requests / c.clients as u64 + u64::from(i < c.requests % c.clients as u64),
            issued: 0,
            pending: BTreeMap::new(),
        })
        .collect();
    let mut sim = Sim {
        sc,
        capture: opts.capture_trace,
        n: p.n,
        now: 0,
        seq: 0,
        next_msg: 0,
        queue: BinaryHeap::new(),
        rng: ChaCha8Rng::seed_from_u64(sc.seed),
        replicas,
        honest: honest.clone(),
        adversary: Adversary::new(sc, keys.clone()),
        monitor: SafetyMonitor::new(keys.clone(), honest),
        timers: HashMap::default(),
        generation: 0,
        link_free: vec![0; p.n],
        ledger: MetricsLedger::new(p.n, p.payload, p.request_size()),
        trace: Trace {
            seed: sc.seed,
            ..Trace::default()
        },
        clients,
        body: Bytes::from(vec![0u8; p.payload]),
        total: c.requests,
        issued: 0,
        acked: 0,
        open_loop_gap: c.rate_per_s.map(|r| 1e6 / r),
        submitted_at: HashMap::default(),
        executed: RequestIdSet::new(),
        serials: BTreeSet::new(),
        notarized: HashMap::default(),
        first_view_change: None,
        highest_view: INITIAL_VIEW,
        streak: 0,
        max_streak: 0,
        maybe_done: false,
        events: 0,
    };
    sim.start();
    sim.run()?;
    Ok(sim.finish(keys))
}

impl<'a> Sim<'a> {
    fn push(&mut self, time: Time, event: Event) {
        self.seq += 1;
        self.queue.push(Queued {
            time,
            seq: self.seq,
            event,
        });
    }

    fn start(&mut self) {
        if self.open_loop_gap.is_some() {
            self.push(0, Event::ClientIssue);
        } else {
            let window = self.sc.clients.outstanding as u64;
            for c in 0..self.clients.len() {
                for _ in 0..window.min(self.clients[c].quota) {
                    self.issue(c);
                }
            }
        }
    }

    fn run(&mut self) -> Result<(), SimError> {
        let end = self.sc.duration();
        let mut draining = false;
        while let Some(q) = self.queue.pop() {
            if q.time > end {
                self.queue.push(q);
                break;
            }
            if draining && !q.event.is_network() {
                continue;
            }
            self.now = q.time;
            self.events += 1;
            self.dispatch(q.event)?;
            if self.maybe_done && !draining {
                self.maybe_done = false;
                if self.sc.stop_when_done && self.done() {
                    draining = true;
                }
            }
        }
        Ok(())
    }

    fn done(&self) -> bool {
        self.issued == self.total
            && self.acked == self.total
            && self
                .replicas
                .iter()
                .zip(&self.honest)
                .all(|(r, h)| !h || r.executed_count() as u64 == self.total)
    }

    fn dispatch(&mut self, event: Event) -> Result<(), SimError> {
        match event {
            Event::Arrive(m) => {
                let at = match m.to {
                    Endpoint::Replica(r) => self.occupy(r, self.now, m.bytes),
                    Endpoint::Client(_) => self.now,
                };
                self.push(at, Event::Deliver(m));
                Ok(())
            }
            Event::Deliver(m) => self.deliver(m),
            Event::Timer {
                replica,
                id,
                generation,
            } => {
                if self.timers.get(&(replica, id)) != Some(&generation) {
                    return Ok(());
                }
                self.timers.remove(&(replica, id));
                self.at_replica(
                    replica,
                    EventRecord::Timer(id),
                    Some(InputEvent::TimerFired(id)),
                    Vec::new(),
                )
            }
            Event::ClientIssue => {
                let c = (self.issued % self.clients.len() as u64) as usize;
                self.issue(c);
                if self.issued < self.total {
                    let gap = self.open_loop_gap.expect("open loop");
                    let at = (self.issued as f64 * gap).round() as Time;
                    self.push(at.max(self.now), Event::ClientIssue);
                }
                Ok(())
            }
            Event::ClientRetry { id, attempt } => {
                let c = &mut self.clients[id.client as usize];
                match c.pending.get_mut(&id.seq) {
                    Some(a) if *a + 1 == attempt => *a = attempt,
                    _ => return Ok(()),
                }
                self.submit(id, attempt);
                Ok(())
            }
        }
    }

    // Network.

    /// Serializes `bytes` through `r`'s link starting no earlier than `at`;
    /// returns when they clear it.
    fn occupy(&mut self, r: ReplicaId, at: Time, bytes: usize) -> Time {
        let Some(cap) = self.sc.capacity_bytes_per_s else {
            return at;
        };
        let busy = (bytes as u128 * 1_000_000).div_ceil(cap as u128) as Time;
        let free = &mut self.link_free[r.index()];
        *free = (*free).max(at) + busy;
        *free
    }

    fn delay(&mut self, depart: Time) -> Time {
        let p = &self.sc.params;
        let lo = self.sc.link.min_ms * MS;
        let hi = self.sc.link.max_ms.unwrap_or(p.delta_ms) * MS;
        let post = self.rng.gen_range(lo..=hi);
        let gst = self.sc.gst();
        if depart >= gst {
            return post;
        }
        let pre = self.rng.gen_range(0..=10 * p.delta());
        (depart + pre).min(gst + post) - depart
    }

    fn transmit(&mut self, from: Endpoint, to: Endpoint, msg: Message, bytes: usize, sends: &mut Vec<SentRecord>) {
        self.next_msg += 1;
        let id = self.next_msg;
        let depart = match from {
            Endpoint::Replica(r) => {
                self.ledger.record(r, Direction::Sent, msg.category(), bytes);
                if self.capture {
                    sends.push(SentRecord {
                        id,
                        from: r,
                        to,
                        kind: msg.kind(),
                        bytes,
                        fingerprint: fingerprint(&msg),
                    });
                }
                self.occupy(r, self.now, bytes)
            }
            Endpoint::Client(_) => self.now,
        };
        let arrive = depart + self.delay(depart);
        let m = NetMsg {
            id,
            from,
            to,
            msg,
            sent_at: self.now,
            bytes,
        };
        let queued_link = self.sc.capacity_bytes_per_s.is_some() && matches!(to, Endpoint::Replica(_));
        self.push(
            arrive,
            if queued_link {
                Event::Arrive(m)
            } else {
                Event::Deliver(m)
            },
        );
    }

    fn send_outgoing(&mut self, out: Vec<Outgoing>, sends: &mut Vec<SentRecord>) {
        for o in out {
            let bytes = o.msg.wire_size();
            self.transmit(Endpoint::Replica(o.from), Endpoint::Replica(o.to), o.msg, bytes, sends);
        }
    }

    fn deliver(&mut self, m: NetMsg) -> Result<(), SimError> {
        let to = match m.to {
            Endpoint::Client(c) => {
                self.client_ack(c, m.msg);
                return Ok(());
            }
            Endpoint::Replica(r) => r,
        };
        self.ledger.record(to, Direction::Received, m.msg.category(), m.bytes);
        match m.from {
            Endpoint::Client(_) => {
                let Message::ClientRequest(req) = m.msg else {
                    unreachable!("clients only send requests")
                };
                let record = EventRecord::ClientRequest {
                    id: req.id,
                    retry: req.timeout_tag,
                };
                let input = (!self.adversary.crashed(to, self.now)).then_some(InputEvent::ClientRequest(req));
                self.at_replica(to, record, input, Vec::new())
            }
            Endpoint::Replica(from) => {
                let record = EventRecord::Deliver {
                    from,
                    id: m.id,
                    kind: m.msg.kind(),
                    bytes: m.bytes,
                    sent_at: m.sent_at,
                };
                let (pass, extra) = if self.honest[to.index()] {
                    (true, Vec::new())
                } else {
                    self.adversary.inbound(to, self.now, &m.msg)
                };
                let input = pass.then_some(InputEvent::Deliver { from, msg: m.msg });
                self.at_replica(to, record, input, extra)
            }
        }
    }

    // Replicas.

    fn at_replica(
        &mut self,
        r: ReplicaId,
        event: EventRecord,
        input: Option<InputEvent>,
        extra: Vec<Outgoing>,
    ) -> Result<(), SimError> {
        let mut sends = Vec::new();
        self.send_outgoing(extra, &mut sends);
        let input = input.filter(|_| !self.adversary.crashed(r, self.now));
        let dropped = input.is_none();
        let actions = match input {
            Some(i) => self.replicas[r.index()].handle(self.now, i),
            None => Vec::new(),
        };
        let verdict = self.monitor.observe(r, &actions);
        self.apply(r, &actions, &mut sends);
        if self.capture {
            self.trace.records.push(TraceRecord {
                time: self.now,
                replica: r,
                event,
                dropped,
                actions,
                sends,
            });
        }
        verdict.map_err(|violation| SimError::SafetyViolation {
            violation,
            time: self.now,
            seed: self.sc.seed,
            trace: Box::new(std::mem::take(&mut self.trace)),
        })
    }

    fn apply(&mut self, r: ReplicaId, actions: &[OutputAction], sends: &mut Vec<SentRecord>) {
        let honest = self.honest[r.index()];
        let mut held = Vec::new();
        for a in actions {
            match a {
                OutputAction::Send { to, msg } if !honest => held.push((*to, msg.clone())),
                OutputAction::Send { to, msg } => {
                    let bytes = msg.wire_size();
                    let targets: Vec<ReplicaId> = match to {
                        Dest::To(t) => vec![*t],
                        Dest::Broadcast => (0..self.n as u32).map(ReplicaId).filter(|x| *x != r).collect(),
                    };
                    for t in targets {
                        self.transmit(Endpoint::Replica(r), Endpoint::Replica(t), msg.clone(), bytes, sends);
                    }
                }
                OutputAction::SetTimer { id, after } => {
                    self.generation += 1;
                    let generation = self.generation;
                    self.timers.insert((r, *id), generation);
                    self.push(
                        self.now + after,
                        Event::Timer {
                            replica: r,
                            id: *id,
                            generation,
                        },
                    );
                }
                OutputAction::CancelTimer(id) => {
                    self.timers.remove(&(r, *id));
                }
                OutputAction::AckClient { client, ids } => {
                    if !honest && self.adversary.mute(r, self.now) {
                        continue;
                    }
                    let msg = Message::ClientAck {
                        replica: r,
                        view: self.replicas[r.index()].view(),
                        ids: ids.clone(),
                    };
                    let bytes = msg.wire_size();
                    self.transmit(Endpoint::Replica(r), Endpoint::Client(*client), msg, bytes, sends);
                }
                OutputAction::ConfirmPrefix { .. } => {}
                OutputAction::Note(note) if honest => self.on_note(r, note),
                OutputAction::Note(_) => {}
            }
        }
        if !held.is_empty() {
            let leader = self.replicas[r.index()].leader();
            let out = self.adversary.outbound(r, self.now, leader, held);
            self.send_outgoing(out, sends);
        }
    }

    fn on_note(&mut self, r: ReplicaId, note: &Note) {
        match note {
            Note::Executed { serial, ids } => {
                self.maybe_done = true;
                let mut fresh = 0;
                for id in ids {
                    if self.executed.insert(*id) {
                        fresh += 1;
                        self.trace.confirmations.push((*id, self.now));
                    }
                }
                if self.serials.insert(*serial) {
                    self.ledger.record_confirmation(self.now, *serial, fresh);
                }
                if fresh > 0 {
                    self.streak = 0;
                }
            }
            Note::Notarized { block } => {
                let now = self.now;
                self.notarized
                    .entry(block.digest())
                    .and_modify(|n| n.holders += 1)
                    .or_insert_with(|| NotarizedRecord {
                        block: block.clone(),
                        first: now,
                        holders: 1,
                    });
            }
            Note::ViewChangeStarted { target } => {
                self.ledger.view_change_started(*target, self.now);
                self.first_view_change.get_or_insert(self.now);
                self.trace.view_events.push(ViewEvent::Started {
                    replica: r,
                    target: *target,
                    time: self.now,
                });
            }
            Note::ViewInstalled { view } => {
                self.ledger.view_installed(*view, self.now);
                self.trace.view_events.push(ViewEvent::Installed {
                    replica: r,
                    view: *view,
                    time: self.now,
                });
                if *view > self.highest_view {
                    self.highest_view = *view;
                    self.streak += 1;
                    self.max_streak = self.max_streak.max(self.streak);
                }
            }
            _ => {}
        }
    }

    // Clients.

    fn issue(&mut self, c: usize) {
        let client = &mut self.clients[c];
        let seq = client.issued;
        client.issued += 1;
        client.pending.insert(seq, 0);
        self.issued += 1;
        let id = RequestId { client: c as u64, seq };
        self.submitted_at.insert(id, self.now);
        self.submit(id, 0);
    }

    fn submit(&mut self, id: RequestId, attempt: u32) {
        let view = self.clients[id.client as usize].view;
        let target = submission_target(&id, attempt, self.n, view);
        let mut req = Request::new(id, self.body.clone());
        req.timeout_tag = attempt > 0;
        let msg = Message::ClientRequest(req);
        let bytes = msg.wire_size();
        self.transmit(
            Endpoint::Client(id.client),
            Endpoint::Replica(target),
            msg,
            bytes,
            &mut Vec::new(),
        );
        let retry = self.sc.params.client_retry_ms * MS;
        self.push(
            self.now + retry,
            Event::ClientRetry {
                id,
                attempt: attempt + 1,
            },
        );
    }

    fn client_ack(&mut self, c: u64, msg: Message) {
        let Message::ClientAck { view, ids, .. } = msg else {
            return;
        };
        let closed = self.open_loop_gap.is_none();
        let client = &mut self.clients[c as usize];
        client.view = client.view.max(view);
        let mut refill = 0;
        for id in ids {
            if client.pending.remove(&id.seq).is_some() {
                self.acked += 1;
                self.maybe_done = true;
                self.ledger.record_latency(self.now - self.submitted_at[&id]);
                refill += 1;
            }
        }
        if closed {
            for _ in 0..refill {
                if self.clients[c as usize].issued < self.clients[c as usize].quota {
                    self.issue(c as usize);
                }
            }
        }
    }

    fn finish(mut self, keys: Arc<ThresholdKeySet>) -> RunOutput {
        let deadline = self.sc.gst() + self.sc.duration() / 2;
        let honest: Vec<&Replica> = self
            .replicas
            .iter()
            .zip(&self.honest)
            .filter(|(_, h)| **h)
            .map(|(r, _)| r)
            .collect();
        let late = self
            .submitted_at
            .iter()
            .filter(|(id, t)| **t <= deadline && honest.iter().any(|r| !r.has_executed(id)))
            .count() as u64;
        let min_exec = honest.iter().map(|r| r.executed_count() as u64).min().unwrap_or(0);
        let final_view = honest.iter().map(|r| r.view()).max().unwrap_or(INITIAL_VIEW);
        let completed = self.done();
        let in_flight = self.queue.iter().filter(|q| q.event.is_network()).count() as u64;
        let stats = RunStats {
            seed: self.sc.seed,
            issued: self.issued,
            acked: self.acked,
            min_honest_executed: min_exec,
            completed,
            end_time: self.now,
            events: self.events,
            final_view,
            view_changes: self.highest_view - INITIAL_VIEW,
            max_consecutive_view_changes: self.max_streak,
            late_requests: late,
            in_flight,
        };
        let mut notarized: Vec<NotarizedRecord> = self.notarized.drain().map(|(_, v)| v).collect();
        notarized.sort_by_key(|n| (n.block.serial, n.first, n.block.view, n.block.digest()));
        RunOutput {
            trace: self.trace,
            ledger: self.ledger,
            stats,
            notarized,
            first_view_change: self.first_view_change,
            replicas: self.replicas,
            honest: self.honest,
            keys,
        }
    }
}
