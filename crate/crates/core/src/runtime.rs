//! Party runtime: ring transport, message batching, round accounting.
//!
//! Each computing party runs the identical protocol program as a single
//! sequential thread. All cross-party interaction funnels through
//! [`PartyCtx::flush`]: a flush sends the pending payload words to the ring
//! successor and blocks on the predecessor's words, which makes every flush
//! a synchronization barrier and lets the trace count rounds exactly.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;

use serde::Serialize;
use thiserror::Error;

use crate::correlated::{setup_keys, SetupKeys};
use crate::share::PartyId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeMode {
    /// One round per payload word.
    Eager,
    /// One round for the whole pending list. Default everywhere.
    Batched,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("transport closed")]
    TransportClosed,
    #[error("payload count mismatch: sent {sent}, received {received}")]
    PayloadCountMismatch { sent: usize, received: usize },
    #[error("transport i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("party thread panicked")]
    PartyPanicked,
}

trait WordSink: Send {
    fn send(&mut self, words: &[u64]) -> Result<(), ProtocolError>;
}

trait WordSource: Send {
    fn recv(&mut self) -> Result<Vec<u64>, ProtocolError>;
}

struct ChannelSink(mpsc::SyncSender<Vec<u64>>);
struct ChannelSource(mpsc::Receiver<Vec<u64>>);

impl WordSink for ChannelSink {
    fn send(&mut self, words: &[u64]) -> Result<(), ProtocolError> {
        self.0
            .send(words.to_vec())
            .map_err(|_| ProtocolError::TransportClosed)
    }
}

impl WordSource for ChannelSource {
    fn recv(&mut self) -> Result<Vec<u64>, ProtocolError> {
        self.0.recv().map_err(|_| ProtocolError::TransportClosed)
    }
}

/// Length-prefixed frames: little-endian u32 payload byte count, then the
/// payload as consecutive little-endian u64 words.
struct TcpSink(TcpStream);
struct TcpSource(TcpStream);

impl WordSink for TcpSink {
    fn send(&mut self, words: &[u64]) -> Result<(), ProtocolError> {
        let mut buf = Vec::with_capacity(4 + words.len() * 8);
        buf.extend_from_slice(&((words.len() * 8) as u32).to_le_bytes());
        for w in words {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        self.0.write_all(&buf)?;
        Ok(())
    }
}

impl WordSource for TcpSource {
    fn recv(&mut self) -> Result<Vec<u64>, ProtocolError> {
        let mut len = [0u8; 4];
        self.0.read_exact(&mut len)?;
        let n = u32::from_le_bytes(len) as usize;
        let mut buf = vec![0u8; n];
        self.0.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Per-party send/receive endpoints on the ring.
pub struct RingTransport {
    tx_next: Box<dyn WordSink>,
    rx_prev: Box<dyn WordSource>,
    pub kind: TransportKind,
}

/// One communication round as seen by one party.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct RoundRecord {
    pub round: u64,
    pub count: u64,
    pub bytes: u64,
}

/// Record of every round a party took part in, plus named marks used to
/// attribute round ranges to protocol phases.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommTrace {
    pub party: u8,
    pub rounds: Vec<RoundRecord>,
    pub marks: Vec<(String, u64)>,
}

impl CommTrace {
    pub fn total_rounds(&self) -> u64 {
        self.rounds.len() as u64
    }

    pub fn total_bytes(&self) -> u64 {
        self.rounds.iter().map(|r| r.bytes).sum()
    }

    pub fn total_messages(&self) -> u64 {
        self.rounds.iter().map(|r| r.count).sum()
    }

    /// The (count, bytes) sequence, for obliviousness comparisons.
    pub fn shape(&self) -> Vec<(u64, u64)> {
        self.rounds.iter().map(|r| (r.count, r.bytes)).collect()
    }

    /// Rounds elapsed between consecutive occurrences of two marks.
    pub fn rounds_between(&self, start: &str, end: &str) -> Vec<u64> {
        let mut out = Vec::new();
        let mut open: Option<u64> = None;
        for (label, at) in &self.marks {
            if label == start {
                open = Some(*at);
            } else if label == end {
                if let Some(s) = open.take() {
                    out.push(*at - s);
                }
            }
        }
        out
    }

    /// JSON lines, one per round: {party, round, count, bytes}.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.rounds {
            s.push_str(&format!(
                "{{\"party\":{},\"round\":{},\"count\":{},\"bytes\":{}}}\n",
                self.party, r.round, r.count, r.bytes
            ));
        }
        s
    }
}

/// Primitive-operation counters, split into ops that stay local and ops
/// whose result share must travel the ring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub local: u64,
    pub remote: u64,
}

impl OpCounters {
    pub fn total(&self) -> u64 {
        self.local + self.remote
    }
}

/// Everything one party's protocol thread needs: identity, transport,
/// correlated randomness, the batch buffer, and instrumentation.
pub struct PartyCtx {
    pub id: PartyId,
    transport: RingTransport,
    pub keys: SetupKeys,
    pending: Vec<u64>,
    pub trace: CommTrace,
    pub ops: OpCounters,
}

impl PartyCtx {
    pub fn new(id: PartyId, transport: RingTransport, keys: SetupKeys) -> Self {
        PartyCtx {
            id,
            transport,
            keys,
            pending: Vec::new(),
            trace: CommTrace {
                party: id.0,
                ..CommTrace::default()
            },
            ops: OpCounters::default(),
        }
    }

    /// Queues one payload word for the next flush. FIFO order is preserved
    /// end to end: the i-th word pushed is the i-th word the successor
    /// receives.
    pub fn push(&mut self, word: u64) {
        self.pending.push(word);
    }

    /// Transmits all pending payloads as one round and returns the
    /// predecessor's payloads in order. An empty buffer is a no-op and does
    /// not count as a round.
    pub fn flush(&mut self) -> Result<Vec<u64>, ProtocolError> {
        if self.pending.is_empty() {
            return Ok(Vec::new());
        }
        let out = std::mem::take(&mut self.pending);
        self.transport.tx_next.send(&out)?;
        let received = self.transport.rx_prev.recv()?;
        if received.len() != out.len() {
            return Err(ProtocolError::PayloadCountMismatch {
                sent: out.len(),
                received: received.len(),
            });
        }
        let round = self.trace.rounds.len() as u64;
        self.trace.rounds.push(RoundRecord {
            round,
            count: out.len() as u64,
            bytes: out.len() as u64 * 8,
        });
        Ok(received)
    }

    /// Ring exchange of a payload list under the given mode.
    pub fn exchange(&mut self, local: &[u64], mode: ExchangeMode) -> Result<Vec<u64>, ProtocolError> {
        match mode {
            ExchangeMode::Batched => {
                self.pending.extend_from_slice(local);
                self.flush()
            }
            ExchangeMode::Eager => {
                let mut out = Vec::with_capacity(local.len());
                for &w in local {
                    self.pending.push(w);
                    out.extend(self.flush()?);
                }
                Ok(out)
            }
        }
    }

    /// Records a named position in the round stream.
    pub fn mark(&mut self, label: &str) {
        self.trace
            .marks
            .push((label.to_string(), self.trace.total_rounds()));
    }

    pub fn charge(&mut self, local: u64, remote: u64) {
        self.ops.local += local;
        self.ops.remote += remote;
    }

    pub fn rounds(&self) -> u64 {
        self.trace.total_rounds()
    }
}

/// Result of one party's protocol run.
pub struct PartyRun<T> {
    pub output: T,
    pub trace: CommTrace,
    pub ops: OpCounters,
    pub randomness_draws: u64,
}

fn make_ring_inproc() -> [RingTransport; 3] {
    // channel i carries party i+1's sends to its successor
    let mut txs = Vec::new();
    let mut rxs = Vec::new();
    for _ in 0..3 {
        let (tx, rx) = mpsc::sync_channel::<Vec<u64>>(16);
        txs.push(Some(tx));
        rxs.push(Some(rx));
    }
    let mk = |i: usize, txs: &mut Vec<Option<mpsc::SyncSender<Vec<u64>>>>,
              rxs: &mut Vec<Option<mpsc::Receiver<Vec<u64>>>>| {
        RingTransport {
            tx_next: Box::new(ChannelSink(txs[i].take().unwrap())),
            rx_prev: Box::new(ChannelSource(rxs[(i + 2) % 3].take().unwrap())),
            kind: TransportKind::InProcess,
        }
    };
    let t0 = mk(0, &mut txs, &mut rxs);
    let t1 = mk(1, &mut txs, &mut rxs);
    let t2 = mk(2, &mut txs, &mut rxs);
    [t0, t1, t2]
}

fn make_ring_tcp() -> Result<[RingTransport; 3], ProtocolError> {
    // SECRECY_BIND: comma-separated listen addresses for the three parties;
    // SECRECY_PEERS overrides the addresses each party dials. Defaults to
    // ephemeral loopback ports.
    let bind_spec = std::env::var("SECRECY_BIND").ok();
    let binds: Vec<String> = match &bind_spec {
        Some(s) => s.split(',').map(|a| a.trim().to_string()).collect(),
        None => vec!["127.0.0.1:0".to_string(); 3],
    };
    if binds.len() != 3 {
        return Err(ProtocolError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "SECRECY_BIND must list three addresses",
        )));
    }
    let listeners: Vec<TcpListener> = binds
        .iter()
        .map(|a| TcpListener::bind(a.as_str()))
        .collect::<Result<_, _>>()?;
    let addrs: Vec<std::net::SocketAddr> = match std::env::var("SECRECY_PEERS") {
        Ok(s) => s
            .split(',')
            .map(|a| {
                a.trim().parse().map_err(|_| {
                    ProtocolError::Io(std::io::Error::new(
                        std::io::ErrorKind::InvalidInput,
                        "bad SECRECY_PEERS address",
                    ))
                })
            })
            .collect::<Result<_, _>>()?,
        Err(_) => listeners
            .iter()
            .map(|l| l.local_addr())
            .collect::<Result<_, _>>()?,
    };

    // Party i dials its successor's listener and accepts from its predecessor.
    let mut dialers = Vec::new();
    for i in 0..3 {
        let addr = addrs[(i + 1) % 3];
        dialers.push(thread::spawn(move || TcpStream::connect(addr)));
    }
    let mut accepted = Vec::new();
    for l in &listeners {
        let (stream, _) = l.accept()?;
        stream.set_nodelay(true)?;
        accepted.push(Some(stream));
    }
    let mut dialed = Vec::new();
    for d in dialers {
        let stream = d.join().map_err(|_| ProtocolError::PartyPanicked)??;
        stream.set_nodelay(true)?;
        dialed.push(Some(stream));
    }
    // accepted[i] is the connection party (i-1) made to listener i.
    let mut out = Vec::new();
    for i in 0..3 {
        out.push(RingTransport {
            tx_next: Box::new(TcpSink(dialed[i].take().unwrap())),
            rx_prev: Box::new(TcpSource(accepted[i].take().unwrap())),
            kind: TransportKind::Tcp,
        });
    }
    Ok(out.try_into().map_err(|_| ProtocolError::TransportClosed)?)
}

/// Runs the same protocol program at all three parties, each on its own
/// thread over a fresh ring, and returns per-party outputs with traces.
///
/// `master_seed` fixes the correlated-randomness setup, so two runs with the
/// same seed and inputs are byte-identical.
pub fn run_protocol<I, T, F>(
    master_seed: u64,
    kind: TransportKind,
    inputs: [I; 3],
    program: F,
) -> Result<[PartyRun<T>; 3], ProtocolError>
where
    I: Send + 'static,
    T: Send + 'static,
    F: Fn(&mut PartyCtx, I) -> Result<T, ProtocolError> + Send + Sync + 'static,
{
    let transports = match kind {
        TransportKind::InProcess => make_ring_inproc(),
        TransportKind::Tcp => make_ring_tcp()?,
    };
    let keys = setup_keys(master_seed);
    let program = Arc::new(program);
    let mut handles = Vec::new();
    for ((transport, keys), (i, input)) in transports
        .into_iter()
        .zip(keys.into_iter())
        .zip(inputs.into_iter().enumerate())
    {
        let program = Arc::clone(&program);
        handles.push(thread::spawn(move || -> Result<PartyRun<T>, ProtocolError> {
            let mut ctx = PartyCtx::new(PartyId(i as u8 + 1), transport, keys);
            let output = program(&mut ctx, input)?;
            Ok(PartyRun {
                output,
                trace: ctx.trace,
                ops: ctx.ops,
                randomness_draws: ctx.keys.draw_count(),
            })
        }));
    }
    let mut runs = Vec::new();
    for h in handles {
        runs.push(h.join().map_err(|_| ProtocolError::PartyPanicked)??);
    }
    Ok(runs
        .try_into()
        .map_err(|_| ProtocolError::PartyPanicked)?)
}
