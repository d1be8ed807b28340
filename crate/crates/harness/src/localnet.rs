//! Localhost network: one process per replica, full TCP mesh, the parent
//! process driving clients.
//!
//! Frames are a 4-byte big-endian length followed by the canonical message
//! encoding. The first frame on every connection is a handshake naming the
//! connecting side. Children talk to the parent over stdio:
//!
//! ```text
//! child  -> parent   PORT <p> | READY | EXEC <count> | REPORT <json>
//! parent -> child    PEERS <p0> .. <pn-1> | GO | STOP
//! ```
//!
//! Protocol time runs at wall time divided by the scale factor.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use bytes::Bytes;
use leopard_core::codec;
use leopard_core::crypto::hash::{hash_parts, Digest};
use leopard_core::metrics::{Direction, MetricsLedger, Tally};
use leopard_core::params::MS;
use leopard_core::replica::{Dest, InputEvent, Note, OutputAction, Replica, TimerId, INITIAL_VIEW};
use leopard_core::simnet::{submission_target, Scenario, Strategy};
use leopard_core::{Category, Message, ReplicaId, Request, RequestId, Time};
use serde::{Deserialize, Serialize};

use crate::report::{write_metrics_csv, Latency};
use crate::run::{load_scenario, Verdict};

const HELLO_PEER: u8 = 0;
const HELLO_CLIENT: u8 = 1;
const MAX_FRAME: usize = 1 << 28;
const SETUP_TIMEOUT: Duration = Duration::from_secs(20);

fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(body)
}

/// `None` on a clean end of stream.
fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes"),
        ));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

fn hello(kind: u8, id: u32) -> [u8; 5] {
    let mut h = [kind, 0, 0, 0, 0];
    h[1..].copy_from_slice(&id.to_be_bytes());
    h
}

/// Only crash faults survive outside the simulator, and there is no
/// pre-GST period to emulate.
pub fn check_localnet(sc: &Scenario) -> Result<()> {
    ensure!(sc.gst_ms == 0, "localnet needs gst_ms = 0, got {}", sc.gst_ms);
    for f in &sc.faults {
        ensure!(
            matches!(f.strategy, Strategy::CrashAt { .. }),
            "faults[replica {}]: {} is simulator-only; localnet supports CrashAt",
            f.replica,
            f.strategy.name()
        );
    }
    Ok(())
}

fn crash_time(sc: &Scenario, id: ReplicaId) -> Option<Time> {
    match sc.strategy_of(id) {
        Some(Strategy::CrashAt { at_ms }) => Some(at_ms * MS),
        _ => None,
    }
}

struct Clock {
    start: Instant,
    scale: f64,
}

impl Clock {
    fn new(scale: f64) -> Self {
        Clock {
            start: Instant::now(),
            scale,
        }
    }

    fn now(&self) -> Time {
        (self.start.elapsed().as_secs_f64() * 1e6 / self.scale) as Time
    }

    fn wall(&self, span: Time) -> Duration {
        Duration::from_secs_f64(span as f64 * self.scale / 1e6)
    }
}

// Replica process.

#[derive(Debug, Serialize, Deserialize)]
struct ReplicaReport {
    replica: u32,
    executed: u64,
    /// Chain over executed batches in order.
    state_hash: String,
    view: u64,
    log_len: usize,
    /// (bytes, count) per category, in `Category::ALL` order.
    sent: Vec<[u64; 2]>,
    received: Vec<[u64; 2]>,
}

enum Input {
    Control(Option<String>),
    Peer(ReplicaId, Message),
    Client(Message),
    ClientConn(TcpStream),
}

fn spawn_readers(listener: TcpListener, tx: Sender<Input>) {
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let tx = tx.clone();
            thread::spawn(move || {
                let _ = serve_connection(stream, tx);
            });
        }
    });
}

fn serve_connection(stream: TcpStream, tx: Sender<Input>) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut r = BufReader::with_capacity(1 << 16, stream.try_clone()?);
    let h = read_frame(&mut r)?.context("connection closed before handshake")?;
    ensure!(h.len() == 5, "bad handshake");
    let id = u32::from_be_bytes(h[1..5].try_into().expect("4 bytes"));
    let client = h[0] == HELLO_CLIENT;
    if client {
        tx.send(Input::ClientConn(stream))?;
    }
    while let Some(body) = read_frame(&mut r)? {
        let msg = codec::decode(&body)?;
        let input = match msg {
            msg @ Message::ClientRequest(_) if client => Input::Client(msg),
            _ if client => continue,
            msg => Input::Peer(ReplicaId(id), msg),
        };
        if tx.send(input).is_err() {
            break;
        }
    }
    Ok(())
}

fn say(line: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{line}")?;
    out.flush()?;
    Ok(())
}

fn connect(port: u16, deadline: Instant) -> Result<TcpStream> {
    loop {
        match TcpStream::connect(("127.0.0.1", port)) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() > deadline => return Err(e).context(format!("connecting to port {port}")),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

struct Node {
    id: ReplicaId,
    replica: Replica,
    ledger: MetricsLedger,
    peers: Vec<Option<BufWriter<TcpStream>>>,
    client: Option<BufWriter<TcpStream>>,
    timers: BTreeMap<TimerId, Time>,
    state: Digest,
}

impl Node {
    fn send_to(&mut self, to: ReplicaId, msg: &Message, body: &[u8]) {
        let Some(w) = self.peers[to.index()].as_mut() else {
            return;
        };
        if write_frame(w, body).is_err() {
            // A crashed peer: stop writing to it.
            self.peers[to.index()] = None;
            return;
        }
        self.ledger
            .record(self.id, Direction::Sent, msg.category(), msg.wire_size());
    }

    fn apply(&mut self, actions: Vec<OutputAction>, now: Time) {
        for a in actions {
            match a {
                OutputAction::Send { to, msg } => {
                    let body = codec::encode(&msg);
                    match to {
                        Dest::To(t) => self.send_to(t, &msg, &body),
                        Dest::Broadcast => {
                            let me = self.id;
                            for t in (0..self.peers.len() as u32).map(ReplicaId).filter(|t| *t != me) {
                                self.send_to(t, &msg, &body);
                            }
                        }
                    }
                }
                OutputAction::SetTimer { id, after } => {
                    self.timers.insert(id, now + after);
                }
                OutputAction::CancelTimer(id) => {
                    self.timers.remove(&id);
                }
                OutputAction::AckClient { ids, .. } => {
                    let msg = Message::ClientAck {
                        replica: self.id,
                        view: self.replica.view(),
                        ids,
                    };
                    if let Some(w) = self.client.as_mut() {
                        if write_frame(w, &codec::encode(&msg)).is_ok() {
                            self.ledger
                                .record(self.id, Direction::Sent, msg.category(), msg.wire_size());
                        }
                    }
                }
                OutputAction::Note(Note::Executed { serial, ids }) => {
                    self.state = hash_parts(&[&self.state.0, &serial.to_be_bytes(), &codec::encode_request_ids(&ids)]);
                }
                _ => {}
            }
        }
    }

    fn flush(&mut self) {
        for slot in &mut self.peers {
            if slot.as_mut().is_some_and(|w| w.flush().is_err()) {
                *slot = None;
            }
        }
        if self.client.as_mut().is_some_and(|w| w.flush().is_err()) {
            self.client = None;
        }
    }

    fn report(&self) -> ReplicaReport {
        let side = |dir| {
            Category::ALL
                .iter()
                .map(|c| {
                    let t = self.ledger.replicas[self.id.index()].get(dir, *c);
                    [t.bytes, t.count]
                })
                .collect()
        };
        ReplicaReport {
            replica: self.id.0,
            executed: self.replica.executed_count() as u64,
            state_hash: self.state.to_hex(),
            view: self.replica.view(),
            log_len: self.replica.log().len(),
            sent: side(Direction::Sent),
            received: side(Direction::Received),
        }
    }
}

/// Body of a replica child process.
pub fn replica_main(id: u32, scenario: &Path, seed: Option<u64>, scale: f64) -> Result<()> {
    let sc = load_scenario(scenario, seed)?;
    check_localnet(&sc)?;
    let p = sc.params.clone();
    ensure!((id as usize) < p.n, "replica id {id} out of range for n={}", p.n);
    let id = ReplicaId(id);
    let keys = std::sync::Arc::new(
        leopard_core::crypto::ThresholdKeySet::generate(p.n, p.f, sc.seed).map_err(|e| anyhow!("{e}"))?,
    );

    let listener = TcpListener::bind("127.0.0.1:0").context("binding a loopback port")?;
    let port = listener.local_addr()?.port();
    let (tx, rx) = mpsc::channel();
    {
        let tx = tx.clone();
        thread::spawn(move || {
            for line in io::stdin().lock().lines() {
                let Ok(line) = line else { break };
                if tx.send(Input::Control(Some(line))).is_err() {
                    return;
                }
            }
            let _ = tx.send(Input::Control(None));
        });
    }
    spawn_readers(listener, tx);
    say(&format!("PORT {port}"))?;

    let mut node = Node {
        id,
        replica: Replica::new(id, p.clone(), keys),
        ledger: MetricsLedger::new(p.n, p.payload, p.request_size()),
        peers: (0..p.n).map(|_| None).collect(),
        client: None,
        timers: BTreeMap::new(),
        state: Digest::default(),
    };

    // Setup: learn the mesh, connect, then wait for GO. Early peer traffic
    // is held until the clock starts.
    let mut backlog = Vec::new();
    loop {
        match rx.recv_timeout(SETUP_TIMEOUT).context("setup timed out")? {
            Input::Control(Some(line)) if line.starts_with("PEERS") => {
                let ports: Vec<u16> = line
                    .split_whitespace()
                    .skip(1)
                    .map(str::parse)
                    .collect::<Result<_, _>>()?;
                ensure!(ports.len() == p.n, "expected {} peer ports", p.n);
                let deadline = Instant::now() + SETUP_TIMEOUT;
                for (j, &port) in ports.iter().enumerate() {
                    if j == id.index() {
                        continue;
                    }
                    let stream = connect(port, deadline)?;
                    stream.set_nodelay(true)?;
                    let mut w = BufWriter::with_capacity(1 << 16, stream);
                    write_frame(&mut w, &hello(HELLO_PEER, id.0))?;
                    w.flush()?;
                    node.peers[j] = Some(w);
                }
                say("READY")?;
            }
            Input::Control(Some(line)) if line == "GO" => break,
            Input::Control(Some(line)) => bail!("unexpected control line {line:?}"),
            Input::Control(None) => return Ok(()),
            Input::ClientConn(s) => node.client = Some(BufWriter::new(s)),
            other => backlog.push(other),
        }
    }

    let clock = Clock::new(scale);
    let crash_at = crash_time(&sc, id);
    let mut last_exec = (u64::MAX, Instant::now());
    let mut pending = backlog.into_iter();
    loop {
        let now = clock.now();
        if crash_at.is_some_and(|t| now >= t) {
            std::process::exit(0);
        }
        let due: Vec<TimerId> = node
            .timers
            .iter()
            .filter(|(_, t)| **t <= now)
            .map(|(id, _)| *id)
            .collect();
        for t in due {
            node.timers.remove(&t);
            let actions = node.replica.handle(now, InputEvent::TimerFired(t));
            node.apply(actions, now);
        }
        node.flush();

        let executed = node.replica.executed_count() as u64;
        if executed != last_exec.0 && last_exec.1.elapsed() >= Duration::from_millis(50) {
            say(&format!("EXEC {executed}"))?;
            last_exec = (executed, Instant::now());
        }

        let next = node.timers.values().copied().chain(crash_at).min();
        let wait = next
            .map_or(Duration::from_millis(50), |t| clock.wall(t.saturating_sub(now)))
            .min(Duration::from_millis(50));
        let input = match pending.next() {
            Some(i) => i,
            None => match rx.recv_timeout(wait) {
                Ok(i) => i,
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => return Ok(()),
            },
        };
        let now = clock.now();
        let event = match input {
            Input::Peer(from, msg) => {
                node.ledger
                    .record(id, Direction::Received, msg.category(), msg.wire_size());
                InputEvent::Deliver { from, msg }
            }
            Input::Client(msg) => {
                node.ledger
                    .record(id, Direction::Received, msg.category(), msg.wire_size());
                let Message::ClientRequest(req) = msg else { continue };
                InputEvent::ClientRequest(req)
            }
            Input::ClientConn(s) => {
                node.client = Some(BufWriter::new(s));
                continue;
            }
            Input::Control(Some(line)) if line == "STOP" => {
                say(&format!("EXEC {}", node.replica.executed_count()))?;
                say(&format!("REPORT {}", serde_json::to_string(&node.report())?))?;
                return Ok(());
            }
            Input::Control(Some(line)) => bail!("unexpected control line {line:?}"),
            Input::Control(None) => return Ok(()),
        };
        let actions = node.replica.handle(now, event);
        node.apply(actions, now);
        node.flush();
    }
}

// Parent process.

#[derive(Clone, Debug)]
pub struct LocalnetArgs {
    /// Executable started once per replica with `--localnet-replica`.
    pub exe: PathBuf,
    pub scenario: PathBuf,
    pub seed: Option<u64>,
    /// Wall seconds per protocol second.
    pub scale_time: f64,
    pub metrics: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalnetSummary {
    pub n: usize,
    pub f: usize,
    pub issued: u64,
    pub acked: u64,
    pub ack_rate: f64,
    pub crashed: Vec<u32>,
    /// Requests executed per replica; absent for crashed ones.
    pub executed: Vec<Option<u64>>,
    pub final_view: u64,
    /// Every reporting replica reached the same execution state.
    pub logs_agree: bool,
    pub state_hash: Option<String>,
    pub wall_ms: u64,
    pub latency: Option<Latency>,
}

enum Event {
    Line(usize, Option<String>),
    Ack(Message),
}

/// Kills every child still running when dropped.
struct Children(Vec<(Child, Option<ChildStdin>)>);

impl Children {
    fn tell(&mut self, i: usize, line: &str) -> bool {
        let Some(stdin) = self.0[i].1.as_mut() else {
            return false;
        };
        writeln!(stdin, "{line}").and_then(|_| stdin.flush()).is_ok()
    }
}

impl Drop for Children {
    fn drop(&mut self) {
        for (child, stdin) in &mut self.0 {
            stdin.take();
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

struct Driver {
    n: usize,
    body: Bytes,
    conns: Vec<Option<BufWriter<TcpStream>>>,
    view: Vec<u64>,
    /// Per client: seq -> (attempt, submitted at, retry due).
    pending: Vec<BTreeMap<u64, (u32, Time, Time)>>,
    issued: Vec<u64>,
    quota: Vec<u64>,
    retry: Time,
    /// Closed loop: each ack releases the client's next request.
    closed: bool,
    acked: u64,
    ledger: MetricsLedger,
}

impl Driver {
    fn submit(&mut self, id: RequestId, attempt: u32, now: Time, submitted: Time) {
        let c = id.client as usize;
        let target = submission_target(&id, attempt, self.n, self.view[c]);
        let mut req = Request::new(id, self.body.clone());
        req.timeout_tag = attempt > 0;
        let body = codec::encode(&Message::ClientRequest(req));
        if let Some(w) = self.conns[target.index()].as_mut() {
            if write_frame(w, &body).is_err() {
                self.conns[target.index()] = None;
            }
        }
        self.pending[c].insert(id.seq, (attempt, submitted, now + self.retry));
    }

    fn issue(&mut self, c: usize, now: Time) {
        let seq = self.issued[c];
        self.issued[c] += 1;
        self.submit(RequestId { client: c as u64, seq }, 0, now, now);
    }

    /// Returns how many requests the ack settled.
    fn ack(&mut self, msg: Message, now: Time) -> u64 {
        let Message::ClientAck { view, ids, .. } = msg else {
            return 0;
        };
        let mut settled = 0;
        for id in ids {
            let c = id.client as usize;
            if c >= self.pending.len() {
                continue;
            }
            self.view[c] = self.view[c].max(view);
            if let Some((_, at, _)) = self.pending[c].remove(&id.seq) {
                self.ledger.record_latency(now - at);
                self.acked += 1;
                settled += 1;
                if self.closed && self.issued[c] < self.quota[c] {
                    self.issue(c, now);
                }
            }
        }
        settled
    }

    fn retry_due(&mut self, now: Time) {
        let mut due = Vec::new();
        for (c, p) in self.pending.iter().enumerate() {
            for (&seq, &(attempt, at, when)) in p {
                if when <= now {
                    due.push((RequestId { client: c as u64, seq }, attempt + 1, at));
                }
            }
        }
        for (id, attempt, at) in due {
            self.submit(id, attempt, now, at);
        }
    }

    fn next_retry(&self) -> Option<Time> {
        self.pending.iter().flat_map(|p| p.values().map(|v| v.2)).min()
    }

    fn flush(&mut self) {
        for slot in &mut self.conns {
            if slot.as_mut().is_some_and(|w| w.flush().is_err()) {
                *slot = None;
            }
        }
    }
}

fn spawn_replicas(args: &LocalnetArgs, sc: &Scenario, tx: &Sender<Event>) -> Result<Children> {
    let mut children = Children(Vec::new());
    for i in 0..sc.params.n {
        let mut cmd = Command::new(&args.exe);
        cmd.arg("--localnet-replica")
            .arg(i.to_string())
            .arg("--scenario")
            .arg(&args.scenario)
            .arg("--scale-time")
            .arg(args.scale_time.to_string())
            .arg("--seed")
            .arg(sc.seed.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        let mut child = cmd
            .spawn()
            .with_context(|| format!("spawning replica {i} from {}", args.exe.display()))?;
        let stdout = child.stdout.take().expect("piped");
        let stdin = child.stdin.take();
        children.0.push((child, stdin));
        let tx = tx.clone();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(Event::Line(i, Some(line))).is_err() {
                    return;
                }
            }
            let _ = tx.send(Event::Line(i, None));
        });
    }
    Ok(children)
}

/// Waits for one line from every replica, matching `prefix`.
fn gather(rx: &Receiver<Event>, n: usize, prefix: &str) -> Result<Vec<String>> {
    let mut got: Vec<Option<String>> = vec![None; n];
    let deadline = Instant::now() + SETUP_TIMEOUT;
    while got.iter().any(Option::is_none) {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(Event::Line(i, Some(line))) if line.starts_with(prefix) => got[i] = Some(line),
            Ok(Event::Line(_, Some(_))) => {}
            Ok(Event::Line(i, None)) => bail!("replica {i} exited during setup (waiting for {prefix})"),
            Ok(Event::Ack(_)) => {}
            Err(_) => bail!("timed out waiting for {prefix} from every replica"),
        }
    }
    Ok(got.into_iter().map(|l| l.expect("filled")).collect())
}

pub fn cmd_localnet(args: &LocalnetArgs) -> Result<(Verdict, LocalnetSummary)> {
    ensure!(args.scale_time > 0.0, "--scale-time must be positive");
    let sc = load_scenario(&args.scenario, args.seed)?;
    check_localnet(&sc).with_context(|| format!("invalid localnet scenario {}", args.scenario.display()))?;
    let p = &sc.params;
    let n = p.n;
    let (tx, rx) = mpsc::channel();
    let mut children = spawn_replicas(args, &sc, &tx)?;

    let ports: Vec<String> = gather(&rx, n, "PORT")?
        .iter()
        .map(|l| l.trim_start_matches("PORT").trim().to_string())
        .collect();
    let peers = format!("PEERS {}", ports.join(" "));
    for i in 0..n {
        ensure!(children.tell(i, &peers), "replica {i} closed its input");
    }
    gather(&rx, n, "READY")?;

    let clients = sc.clients.clients as usize;
    let mut driver = Driver {
        n,
        body: Bytes::from(vec![0u8; p.payload]),
        conns: Vec::new(),
        view: vec![INITIAL_VIEW; clients],
        pending: vec![BTreeMap::new(); clients],
        issued: vec![0; clients],
        quota: (0..clients as u64)
            .map(|c| sc.clients.requests / clients as u64 + u64::from(c < sc.clients.requests % clients as u64))
            .collect(),
        retry: p.client_retry_ms * MS,
        closed: sc.clients.rate_per_s.is_none(),
        acked: 0,
        ledger: MetricsLedger::new(n, p.payload, p.request_size()),
    };
    for port in &ports {
        let port: u16 = port.parse().context("bad port line")?;
        let stream = TcpStream::connect(("127.0.0.1", port))?;
        stream.set_nodelay(true)?;
        let mut r = BufReader::new(stream.try_clone()?);
        let tx = tx.clone();
        thread::spawn(move || {
            while let Ok(Some(body)) = read_frame(&mut r) {
                let Ok(msg) = codec::decode(&body) else { break };
                if tx.send(Event::Ack(msg)).is_err() {
                    break;
                }
            }
        });
        let mut w = BufWriter::with_capacity(1 << 16, stream);
        write_frame(&mut w, &hello(HELLO_CLIENT, 0))?;
        w.flush()?;
        driver.conns.push(Some(w));
    }
    // Client connections are registered before GO reaches any replica.
    thread::sleep(Duration::from_millis(50));
    for i in 0..n {
        children.tell(i, "GO");
    }

    let clock = Clock::new(args.scale_time);
    let total = sc.clients.requests;
    let gap = sc.clients.rate_per_s.map(|r| (1e6 / r) as Time);
    let mut next_open = 0;
    if gap.is_none() {
        for c in 0..clients {
            for _ in 0..(sc.clients.outstanding as u64).min(driver.quota[c]) {
                driver.issue(c, 0);
            }
        }
    }
    driver.flush();

    let expected_crash: Vec<bool> = (0..n as u32).map(|i| crash_time(&sc, ReplicaId(i)).is_some()).collect();
    let mut exec = vec![0u64; n];
    let mut exited = vec![false; n];
    let end = sc.duration();
    let issued_total = |d: &Driver| d.issued.iter().sum::<u64>();
    loop {
        let now = clock.now();
        if let Some(gap) = gap {
            while issued_total(&driver) < total && next_open <= now {
                let c = (issued_total(&driver) % clients as u64) as usize;
                driver.issue(c, next_open);
                next_open += gap;
            }
        }
        driver.retry_due(now);
        driver.flush();
        let live_done = (0..n).all(|i| exited[i] || exec[i] >= total);
        if driver.acked == total && live_done {
            break;
        }
        if now >= end {
            break;
        }
        let wake = [driver.next_retry(), gap.map(|_| next_open), Some(end)]
            .into_iter()
            .flatten()
            .min()
            .unwrap_or(end);
        let wait = clock.wall(wake.saturating_sub(now)).min(Duration::from_millis(20));
        match rx.recv_timeout(wait) {
            Ok(Event::Ack(msg)) => {
                driver.ack(msg, clock.now());
            }
            Ok(Event::Line(i, Some(line))) => {
                if let Some(k) = line.strip_prefix("EXEC ") {
                    exec[i] = k.trim().parse().unwrap_or(exec[i]);
                }
            }
            Ok(Event::Line(i, None)) => {
                ensure!(expected_crash[i], "replica {i} exited unexpectedly");
                exited[i] = true;
            }
            Err(_) => {}
        }
    }

    let mut reports: Vec<Option<ReplicaReport>> = (0..n).map(|_| None).collect();
    for (i, gone) in exited.iter_mut().enumerate() {
        if !*gone && !children.tell(i, "STOP") {
            *gone = true;
        }
    }
    let deadline = Instant::now() + SETUP_TIMEOUT;
    while (0..n).any(|i| !exited[i] && reports[i].is_none()) {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(Event::Line(i, Some(line))) => {
                if let Some(json) = line.strip_prefix("REPORT ") {
                    reports[i] = Some(serde_json::from_str(json).context("bad replica report")?);
                }
            }
            Ok(Event::Line(i, None)) => {
                if reports[i].is_none() {
                    ensure!(expected_crash[i], "replica {i} exited without reporting");
                    exited[i] = true;
                }
            }
            Ok(Event::Ack(msg)) => {
                driver.ack(msg, clock.now());
            }
            Err(_) => bail!("timed out collecting replica reports"),
        }
    }
    let wall_ms = clock.start.elapsed().as_millis() as u64;
    drop(children);

    let mut ledger = std::mem::replace(&mut driver.ledger, MetricsLedger::new(0, 0, 0));
    for rep in reports.iter().flatten() {
        for (k, cat) in Category::ALL.iter().enumerate() {
            for (dir, side) in [(Direction::Sent, &rep.sent), (Direction::Received, &rep.received)] {
                let [bytes, count] = side[k];
                ledger.add(ReplicaId(rep.replica), dir, *cat, Tally { bytes, count });
            }
        }
    }
    let hashes: Vec<&String> = reports.iter().flatten().map(|r| &r.state_hash).collect();
    let logs_agree = !hashes.is_empty() && hashes.iter().all(|h| *h == hashes[0]);
    let latency = ledger.latency_quantile(0.5).map(|p50| Latency {
        p50_us: p50,
        p90_us: ledger.latency_quantile(0.9).unwrap_or(p50),
        p99_us: ledger.latency_quantile(0.99).unwrap_or(p50),
    });
    let summary = LocalnetSummary {
        n,
        f: p.f,
        issued: issued_total(&driver),
        acked: driver.acked,
        ack_rate: driver.acked as f64 / total.max(1) as f64,
        crashed: (0..n as u32).filter(|i| exited[*i as usize]).collect(),
        executed: reports.iter().map(|r| r.as_ref().map(|r| r.executed)).collect(),
        final_view: reports.iter().flatten().map(|r| r.view).max().unwrap_or(INITIAL_VIEW),
        logs_agree,
        state_hash: logs_agree.then(|| hashes[0].clone()),
        wall_ms,
        latency,
    };

    if let Some(path) = &args.metrics {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        write_metrics_csv(&ledger, BufWriter::new(file))?;
    }
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    match &args.summary {
        Some(path) => fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{text}"),
    }
    let all_executed = reports.iter().flatten().all(|r| r.executed == total);
    let verdict = if !logs_agree {
        Verdict::SafetyViolation
    } else if driver.acked < total || !all_executed {
        Verdict::LivenessMiss
    } else {
        Verdict::Clean
    };
    Ok((verdict, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use leopard_core::simnet::FaultSpec;

    #[test]
    fn frames_round_trip_and_end_cleanly() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &hello(HELLO_CLIENT, 7)).unwrap();
        write_frame(&mut buf, b"").unwrap();
        let mut r = buf.as_slice();
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), vec![1, 0, 0, 0, 7]);
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), Vec::<u8>::new());
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn oversized_and_truncated_frames_are_errors() {
        let big = ((MAX_FRAME + 1) as u32).to_be_bytes();
        assert!(read_frame(&mut big.as_slice()).is_err());
        let mut buf = Vec::new();
        write_frame(&mut buf, b"abcdef").unwrap();
        buf.truncate(7);
        assert!(read_frame(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn only_crash_faults_after_gst_zero() {
        let mut sc = Scenario::honest(1, 10, 1);
        sc.faults.push(FaultSpec {
            replica: 2,
            strategy: Strategy::CrashAt { at_ms: 5 },
        });
        check_localnet(&sc).unwrap();
        assert_eq!(crash_time(&sc, ReplicaId(2)), Some(5 * MS));
        sc.gst_ms = 10;
        assert!(check_localnet(&sc).is_err());
        sc.gst_ms = 0;
        sc.faults[0].strategy = Strategy::FakeReadyWithholdData;
        assert!(check_localnet(&sc).is_err());
    }

    #[test]
    fn clock_scales_wall_time() {
        let c = Clock::new(0.5);
        assert_eq!(c.wall(2_000_000), Duration::from_secs(1));
    }
}
