//! The replica as a deterministic event-driven state machine.
//!
//! [`Replica::handle`] takes one input event and returns the actions it
//! causes. Messages a replica addresses to itself (the leader's own shares,
//! for instance) are processed inline and never appear as actions.

mod agreement;
mod assign;
mod checkpoint;
mod dissemination;
mod retrieval;
mod view_change;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};
use std::sync::Arc;

use crate::crypto::{AggregateProof, Digest, ErasureChunk, ThresholdKeySet, VoteShare};
use crate::idset::RequestIdSet;
use crate::log::Log;
use crate::message::{CheckpointCert, Message, SignedProposal, TimeoutMsg, ViewChangeMsg};
use crate::params::ProtocolParams;
use crate::types::{BftBlock, BlockState, Datablock, ReplicaId, Request, RequestId, Time};

pub use assign::assign_replica;

pub const INITIAL_VIEW: u64 = 1;

pub fn leader_of(view: u64, n: usize) -> ReplicaId {
    ReplicaId((view % n as u64) as u32)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputEvent {
    Deliver { from: ReplicaId, msg: Message },
    TimerFired(TimerId),
    ClientRequest(Request),
    Tick,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TimerId {
    DatablockFlush,
    ProposeFlush,
    /// Re-query for datablocks still missing under a block.
    Retrieval(Digest),
    BlockFetch,
    RequestTimeout(RequestId),
    ViewChange(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dest {
    To(ReplicaId),
    /// Every replica except the sender.
    Broadcast,
}

/// Observable protocol milestones, used by tracing and the safety monitor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Note {
    Voted {
        view: u64,
        serial: u64,
        digest: Digest,
    },
    Notarized {
        block: BftBlock,
    },
    Confirmed {
        block: BftBlock,
        notarization: AggregateProof,
        confirmation: AggregateProof,
    },
    Executed {
        serial: u64,
        ids: Vec<RequestId>,
    },
    ViewChangeStarted {
        target: u64,
    },
    ViewInstalled {
        view: u64,
    },
    StableCheckpoint {
        serial: u64,
    },
    LogConflict {
        serial: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OutputAction {
    Send {
        to: Dest,
        msg: Message,
    },
    /// Arms `id` to fire after `after`, replacing any earlier arming.
    SetTimer {
        id: TimerId,
        after: Time,
    },
    CancelTimer(TimerId),
    ConfirmPrefix {
        upto: u64,
    },
    AckClient {
        client: u64,
        ids: Vec<RequestId>,
    },
    Note(Note),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Normal,
    ViewChanging { target: u64 },
}

#[derive(Clone, Debug)]
pub(crate) struct BlockEntry {
    pub block: BftBlock,
    pub leader_share: VoteShare,
    pub state: BlockState,
    pub notarization: Option<AggregateProof>,
    pub confirmation: Option<AggregateProof>,
    pub commit_sent: bool,
}

/// Per-generator token bucket for incoming datablocks.
#[derive(Clone, Copy, Debug)]
struct Bucket {
    tokens: f64,
    at: Time,
}

pub struct Replica {
    id: ReplicaId,
    params: ProtocolParams,
    keys: Arc<ThresholdKeySet>,
    now: Time,
    out: Vec<OutputAction>,

    view: u64,
    mode: Mode,

    // Dissemination.
    mempool: VecDeque<Request>,
    mempool_ids: HashSet<RequestId>,
    next_counter: u64,
    flush_armed: bool,
    emitted_in_second: (u64, u32),
    pool: HashMap<Digest, Arc<Datablock>>,
    seen_counters: HashSet<(ReplicaId, u64)>,
    buckets: HashMap<ReplicaId, Bucket>,

    // Leader side.
    ready: HashMap<Digest, BTreeSet<ReplicaId>>,
    linkable: VecDeque<Digest>,
    linkable_set: HashSet<Digest>,
    proposed_linked: HashSet<Digest>,
    next_serial: u64,
    open_instances: BTreeSet<u64>,
    propose_armed: bool,
    prepare_shares: HashMap<Digest, BTreeMap<ReplicaId, VoteShare>>,
    commit_shares: HashMap<Digest, BTreeMap<ReplicaId, VoteShare>>,
    combined: HashSet<Digest>,

    // Blocks and votes.
    blocks: HashMap<Digest, BlockEntry>,
    slots: HashMap<(u64, u64), SignedProposal>,
    voted: HashMap<(u64, u64), Digest>,
    pending_votes: HashSet<Digest>,
    notar_index: HashMap<Digest, Digest>,
    cached_notarizations: HashMap<Digest, AggregateProof>,
    cached_confirmations: HashMap<Digest, AggregateProof>,
    unknown_blocks: BTreeSet<Digest>,
    fetch_armed: bool,
    answered_block_queries: HashSet<(ReplicaId, Digest)>,
    future_blocks: BTreeMap<u64, Vec<Digest>>,

    // Retrieval.
    waiting_on: HashMap<Digest, BTreeSet<Digest>>,
    retrieval_armed: HashSet<Digest>,
    chunks: HashMap<Digest, BTreeMap<u32, ErasureChunk>>,
    bad_roots: HashSet<Digest>,
    answered_queries: HashSet<(ReplicaId, Digest)>,
    own_chunks: HashMap<Digest, ErasureChunk>,

    // Log and execution.
    log: Log,
    log_linked: HashSet<Digest>,
    awaiting_exec: BTreeSet<Digest>,
    executed: u64,
    executed_ids: RequestIdSet,
    state_hash: Digest,
    checkpoint_states: BTreeMap<u64, Digest>,
    client_origin: HashMap<RequestId, u64>,

    // Checkpoints.
    lw: u64,
    last_checkpoint: Option<CheckpointCert>,
    checkpoint_shares: BTreeMap<(u64, Digest), BTreeMap<ReplicaId, VoteShare>>,
    pruned_upto: u64,

    // View change.
    tagged_pending: BTreeSet<RequestId>,
    timeouts: BTreeMap<u64, BTreeMap<ReplicaId, TimeoutMsg>>,
    view_changes: BTreeMap<u64, BTreeMap<ReplicaId, Arc<ViewChangeMsg>>>,
    new_view_sent: BTreeSet<u64>,
    failed_views: u32,
    /// Re-proposals the current view must carry, by serial.
    expected: BTreeMap<u64, BftBlock>,

    /// Lets the replica vote for every leader-signed block at a slot and
    /// ignore equivocation.
    #[cfg(feature = "fault-injection")]
    pub skip_vote_once: bool,
}

impl Replica {
    pub fn new(id: ReplicaId, params: ProtocolParams, keys: Arc<ThresholdKeySet>) -> Self {
        Replica {
            id,
            params,
            keys,
            now: 0,
            out: Vec::new(),
            view: INITIAL_VIEW,
            mode: Mode::Normal,
            mempool: VecDeque::new(),
            mempool_ids: HashSet::default(),
            next_counter: 1,
            flush_armed: false,
            emitted_in_second: (0, 0),
            pool: HashMap::default(),
            seen_counters: HashSet::default(),
            buckets: HashMap::default(),
            ready: HashMap::default(),
            linkable: VecDeque::new(),
            linkable_set: HashSet::default(),
            proposed_linked: HashSet::default(),
            next_serial: 1,
            open_instances: BTreeSet::new(),
            propose_armed: false,
            prepare_shares: HashMap::default(),
            commit_shares: HashMap::default(),
            combined: HashSet::default(),
            blocks: HashMap::default(),
            slots: HashMap::default(),
            voted: HashMap::default(),
            pending_votes: HashSet::default(),
            notar_index: HashMap::default(),
            cached_notarizations: HashMap::default(),
            cached_confirmations: HashMap::default(),
            unknown_blocks: BTreeSet::new(),
            fetch_armed: false,
            answered_block_queries: HashSet::default(),
            future_blocks: BTreeMap::new(),
            waiting_on: HashMap::default(),
            retrieval_armed: HashSet::default(),
            chunks: HashMap::default(),
            bad_roots: HashSet::default(),
            answered_queries: HashSet::default(),
            own_chunks: HashMap::default(),
            log: Log::new(),
            log_linked: HashSet::default(),
            awaiting_exec: BTreeSet::new(),
            executed: 0,
            executed_ids: RequestIdSet::new(),
            state_hash: Digest([0; 32]),
            checkpoint_states: BTreeMap::new(),
            client_origin: HashMap::default(),
            lw: 0,
            last_checkpoint: None,
            checkpoint_shares: BTreeMap::new(),
            pruned_upto: 0,
            tagged_pending: BTreeSet::new(),
            timeouts: BTreeMap::new(),
            view_changes: BTreeMap::new(),
            new_view_sent: BTreeSet::new(),
            failed_views: 0,
            expected: BTreeMap::new(),
            #[cfg(feature = "fault-injection")]
            skip_vote_once: false,
        }
    }

    pub fn handle(&mut self, now: Time, event: InputEvent) -> Vec<OutputAction> {
        self.now = self.now.max(now);
        match event {
            InputEvent::Deliver { from, msg } => self.on_message(from, msg),
            InputEvent::TimerFired(id) => self.on_timer(id),
            InputEvent::ClientRequest(req) => self.on_client_request(req),
            InputEvent::Tick => {}
        }
        std::mem::take(&mut self.out)
    }

    fn on_message(&mut self, from: ReplicaId, msg: Message) {
        if from.index() >= self.n() {
            return;
        }
        match msg {
            Message::ClientRequest(req) => self.on_client_request(req),
            Message::ClientAck { .. } => {}
            Message::Datablock(db) => self.on_datablock(from, db),
            Message::Ready { digest, sender } => {
                if sender == from {
                    self.on_ready(from, digest)
                }
            }
            Message::Proposal(p) => self.on_proposal(p),
            Message::PrepareShare(s) => self.on_prepare_share(from, s),
            Message::Notarization(p) => self.on_notarization(p),
            Message::CommitShare(s) => self.on_commit_share(from, s),
            Message::Confirmation(p) => self.on_confirmation(p),
            Message::Query { digests, sender } => {
                if sender == from {
                    self.on_query(from, &digests)
                }
            }
            Message::Response { sender, chunk } => {
                if sender == from {
                    self.on_response(from, chunk)
                }
            }
            Message::CheckpointShare { checkpoint, share } => self.on_checkpoint_share(from, checkpoint, share),
            Message::CheckpointProof(cert) => self.on_checkpoint_proof(cert),
            Message::Timeout(t) => self.on_timeout_msg(from, t),
            Message::ViewChange(vc) => self.on_view_change(from, vc),
            Message::NewView(nv) => self.on_new_view(from, &nv),
            Message::BlockQuery { digests, sender } => {
                if sender == from {
                    self.on_block_query(from, &digests)
                }
            }
            Message::BlockResponse(p) => self.on_proposal(p),
        }
    }

    fn on_timer(&mut self, id: TimerId) {
        match id {
            TimerId::DatablockFlush => {
                self.flush_armed = false;
                self.emit_datablocks(true);
            }
            TimerId::ProposeFlush => {
                self.propose_armed = false;
                self.try_propose(true);
            }
            TimerId::Retrieval(block) => self.on_retrieval_timer(block),
            TimerId::BlockFetch => self.on_block_fetch_timer(),
            TimerId::RequestTimeout(rid) => self.on_request_timeout(rid),
            TimerId::ViewChange(target) => self.on_view_change_timer(target),
        }
    }

    // Plumbing.

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    fn f(&self) -> usize {
        self.params.f
    }

    fn quorum(&self) -> usize {
        self.params.quorum()
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn leader(&self) -> ReplicaId {
        leader_of(self.view, self.n())
    }

    pub fn is_leader(&self) -> bool {
        self.leader() == self.id
    }

    pub fn low_watermark(&self) -> u64 {
        self.lw
    }

    pub fn log(&self) -> &Log {
        &self.log
    }

    pub fn executed_upto(&self) -> u64 {
        self.executed
    }

    pub fn has_executed(&self, id: &RequestId) -> bool {
        self.executed_ids.contains(id)
    }

    pub fn executed_count(&self) -> usize {
        self.executed_ids.len()
    }

    pub fn state_hash(&self) -> Digest {
        self.state_hash
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn holds(&self, digest: &Digest) -> bool {
        self.pool.contains_key(digest)
    }

    pub fn is_linkable(&self, digest: &Digest) -> bool {
        self.linkable_set.contains(digest)
    }

    pub fn block_state(&self, digest: &Digest) -> Option<BlockState> {
        self.blocks.get(digest).map(|e| e.state)
    }

    pub fn next_serial(&self) -> u64 {
        self.next_serial
    }

    pub fn keys(&self) -> &Arc<ThresholdKeySet> {
        &self.keys
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    fn push(&mut self, a: OutputAction) {
        self.out.push(a);
    }

    fn note(&mut self, n: Note) {
        self.out.push(OutputAction::Note(n));
    }

    fn set_timer(&mut self, id: TimerId, after: Time) {
        self.push(OutputAction::SetTimer { id, after });
    }

    fn cancel_timer(&mut self, id: TimerId) {
        self.push(OutputAction::CancelTimer(id));
    }

    fn broadcast(&mut self, msg: Message) {
        self.push(OutputAction::Send {
            to: Dest::Broadcast,
            msg,
        });
    }

    /// Sends to `to`, handling the message inline when `to` is this replica.
    fn send(&mut self, to: ReplicaId, msg: Message) {
        if to == self.id {
            self.on_message(self.id, msg);
        } else {
            self.push(OutputAction::Send { to: Dest::To(to), msg });
        }
    }

    fn send_to_leader(&mut self, msg: Message) {
        let leader = self.leader();
        self.send(leader, msg);
    }

    #[cfg(feature = "fault-injection")]
    fn vote_once_disabled(&self) -> bool {
        self.skip_vote_once
    }

    #[cfg(not(feature = "fault-injection"))]
    fn vote_once_disabled(&self) -> bool {
        false
    }

    fn ms(&self, ms: u64) -> Time {
        ms * crate::params::MS
    }
}
