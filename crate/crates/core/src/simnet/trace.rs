//! Run traces and their newline-delimited JSON form.

use std::io::{self, Write};

use serde_json::{json, Value};

use crate::crypto::{hash, Digest};
use crate::message::Message;
use crate::replica::{Dest, Note, OutputAction, TimerId};
use crate::types::{ReplicaId, RequestId, Time};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventRecord {
    Deliver {
        from: ReplicaId,
        /// Identifier of the matching send.
        id: u64,
        kind: &'static str,
        bytes: usize,
        sent_at: Time,
    },
    Timer(TimerId),
    ClientRequest {
        id: RequestId,
        retry: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Replica(ReplicaId),
    Client(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentRecord {
    pub id: u64,
    pub from: ReplicaId,
    pub to: Endpoint,
    pub kind: &'static str,
    pub bytes: usize,
    /// Hash of the encoding (the datablock digest for datablocks).
    pub fingerprint: Digest,
}

/// One input event at one replica and everything it caused.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: Time,
    pub replica: ReplicaId,
    pub event: EventRecord,
    /// Swallowed by an adversary before reaching the state machine.
    pub dropped: bool,
    pub actions: Vec<OutputAction>,
    /// Network sends after adversarial rewriting.
    pub sends: Vec<SentRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViewEvent {
    Started {
        replica: ReplicaId,
        target: u64,
        time: Time,
    },
    Installed {
        replica: ReplicaId,
        view: u64,
        time: Time,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub seed: u64,
    /// Per-event records; empty unless capture was requested.
    pub records: Vec<TraceRecord>,
    /// First execution of each request by an honest replica.
    pub confirmations: Vec<(RequestId, Time)>,
    pub view_events: Vec<ViewEvent>,
}

pub(crate) fn fingerprint(msg: &Message) -> Digest {
    match msg {
        Message::Datablock(db) => db.digest(),
        m => hash(&m.encode()),
    }
}

fn dest_json(d: &Dest) -> Value {
    match d {
        Dest::To(r) => json!(r.0),
        Dest::Broadcast => json!("all"),
    }
}

fn endpoint_json(e: &Endpoint) -> Value {
    match e {
        Endpoint::Replica(r) => json!(r.0),
        Endpoint::Client(c) => json!(format!("client{c}")),
    }
}

fn note_json(n: &Note) -> Value {
    match n {
        Note::Voted { view, serial, digest } => {
            json!({"voted": {"view": view, "serial": serial, "block": digest.to_string()}})
        }
        Note::Notarized { block } => json!({"notarized": {
            "view": block.view,
            "serial": block.serial,
            "block": block.digest().to_string(),
        }}),
        Note::Confirmed { block, .. } => json!({"confirmed": {
            "view": block.view,
            "serial": block.serial,
            "block": block.digest().to_string(),
            "links": block.content.len(),
            "dummy": block.dummy,
        }}),
        Note::Executed { serial, ids } => json!({"executed": {"serial": serial, "requests": ids.len()}}),
        Note::ViewChangeStarted { target } => json!({"view_change": {"target": target}}),
        Note::ViewInstalled { view } => json!({"view_installed": {"view": view}}),
        Note::StableCheckpoint { serial } => json!({"checkpoint": {"serial": serial}}),
        Note::LogConflict { serial } => json!({"log_conflict": {"serial": serial}}),
    }
}

fn action_json(a: &OutputAction) -> Value {
    match a {
        OutputAction::Send { to, msg } => json!({"emit": {"to": dest_json(to), "kind": msg.kind()}}),
        OutputAction::SetTimer { id, after } => json!({"set_timer": {"id": format!("{id:?}"), "after": after}}),
        OutputAction::CancelTimer(id) => json!({"cancel_timer": format!("{id:?}")}),
        OutputAction::ConfirmPrefix { upto } => json!({"confirm_prefix": upto}),
        OutputAction::AckClient { client, ids } => json!({"ack": {"client": client, "requests": ids.len()}}),
        OutputAction::Note(n) => json!({"note": note_json(n)}),
    }
}

impl TraceRecord {
    pub fn to_json(&self) -> Value {
        let event = match &self.event {
            EventRecord::Deliver {
                from,
                id,
                kind,
                bytes,
                sent_at,
            } => json!({"deliver": {"from": from.0, "id": id, "kind": kind, "bytes": bytes, "sent_at": sent_at}}),
            EventRecord::Timer(t) => json!({"timer": format!("{t:?}")}),
            EventRecord::ClientRequest { id, retry } => {
                json!({"client_request": {"client": id.client, "seq": id.seq, "retry": retry}})
            }
        };
        let sends: Vec<Value> = self
            .sends
            .iter()
            .map(|s| {
                json!({
                    "id": s.id,
                    "from": s.from.0,
                    "to": endpoint_json(&s.to),
                    "kind": s.kind,
                    "bytes": s.bytes,
                    "fp": s.fingerprint.to_string(),
                })
            })
            .collect();
        let actions: Vec<Value> = self.actions.iter().map(action_json).collect();
        json!({
            "t": self.time,
            "replica": self.replica.0,
            "event": event,
            "dropped": self.dropped,
            "actions": actions,
            "sends": sends,
        })
    }
}

impl Trace {
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", json!({"seed": self.seed, "records": self.records.len()}))?;
        for r in &self.records {
            writeln!(w, "{}", r.to_json())?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    /// Hash of the NDJSON form.
    pub fn fingerprint(&self) -> Digest {
        hash(self.to_ndjson().as_bytes())
    }

    /// Every delivered message was sent earlier in the trace.
    pub fn is_causal(&self) -> bool {
        let mut sent = std::collections::HashMap::new();
        for r in &self.records {
            if let EventRecord::Deliver { id, sent_at, .. } = r.event {
                match sent.get(&id) {
                    Some(&t) if t == sent_at && t <= r.time => {}
                    _ => return false,
                }
            }
            for s in &r.sends {
                sent.insert(s.id, r.time);
            }
        }
        true
    }
}
