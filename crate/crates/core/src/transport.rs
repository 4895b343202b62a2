//! Moving protocol frames between the parties, plus the drivers that run a
//! whole session over a channel.

use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use thiserror::Error;

use crate::protocol::{
    DpIntersection, ProtocolError, ReceiverSession, Role, SenderSession, SenderView,
};
use crate::wire::{ProtocolMessage, WireError};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("could not reach {addr}: {source}")]
    Connect {
        addr: String,
        source: std::io::Error,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("party thread panicked")]
    Panicked,
}

impl From<WireError> for TransportError {
    fn from(e: WireError) -> Self {
        TransportError::Protocol(ProtocolError::Wire(e))
    }
}

/// A bidirectional, ordered, framed message pipe to the other party.
pub trait Channel {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), TransportError>;
    fn recv(&mut self) -> Result<ProtocolMessage, TransportError>;
    fn bytes_sent(&self) -> u64;
    fn bytes_received(&self) -> u64;
}

/// In-process channel. Frames are fully encoded and decoded so the byte
/// counts and validation match the TCP path.
pub struct MemoryChannel {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
    sent: u64,
    received: u64,
}

/// Two connected endpoints.
pub fn memory_pair() -> (MemoryChannel, MemoryChannel) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    let end = |tx, rx| MemoryChannel {
        tx,
        rx,
        sent: 0,
        received: 0,
    };
    (end(tx_a, rx_a), end(tx_b, rx_b))
}

impl Channel for MemoryChannel {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), TransportError> {
        let frame = msg.encode();
        self.sent += frame.len() as u64;
        self.tx.send(frame).map_err(|_| WireError::Disconnected)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<ProtocolMessage, TransportError> {
        let frame = self.rx.recv().map_err(|_| WireError::Disconnected)?;
        self.received += frame.len() as u64;
        Ok(ProtocolMessage::decode(&frame)?)
    }

    fn bytes_sent(&self) -> u64 {
        self.sent
    }

    fn bytes_received(&self) -> u64 {
        self.received
    }
}

pub struct TcpChannel {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    sent: u64,
    received: u64,
}

impl TcpChannel {
    pub fn new(stream: TcpStream) -> std::io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(TcpChannel {
            reader: BufReader::with_capacity(1 << 16, stream.try_clone()?),
            writer: BufWriter::with_capacity(1 << 16, stream),
            sent: 0,
            received: 0,
        })
    }

    /// Accepts a single peer on `addr`.
    pub fn listen<A: ToSocketAddrs>(addr: A) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        Self::accept(&listener)
    }

    pub fn accept(listener: &TcpListener) -> std::io::Result<Self> {
        let (stream, peer) = listener.accept()?;
        debug!("accepted {peer}");
        Self::new(stream)
    }

    /// Connects to `addr`, retrying until `timeout` elapses.
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            match TcpStream::connect(addr) {
                Ok(stream) => return Ok(Self::new(stream)?),
                Err(source) if Instant::now() >= deadline => {
                    return Err(TransportError::Connect {
                        addr: addr.to_string(),
                        source,
                    })
                }
                Err(_) => thread::sleep(Duration::from_millis(50)),
            }
        }
    }
}

impl Channel for TcpChannel {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), TransportError> {
        let n = msg.write_to(&mut self.writer)?;
        self.writer.flush().map_err(WireError::from)?;
        self.sent += n as u64;
        Ok(())
    }

    fn recv(&mut self) -> Result<ProtocolMessage, TransportError> {
        let (msg, n) = ProtocolMessage::read_from(&mut self.reader)?;
        self.received += n as u64;
        Ok(msg)
    }

    fn bytes_sent(&self) -> u64 {
        self.sent
    }

    fn bytes_received(&self) -> u64 {
        self.received
    }
}

fn abort_on_error<C: Channel, T>(
    ch: &mut C,
    r: Result<T, TransportError>,
) -> Result<T, TransportError> {
    if let Err(e) = &r {
        let peer_gone = matches!(
            e,
            TransportError::Protocol(ProtocolError::PeerAborted)
                | TransportError::Protocol(ProtocolError::Wire(WireError::Disconnected))
        );
        if !peer_gone {
            warn!("aborting session: {e}");
            let _ = ch.send(&ProtocolMessage::Abort);
        }
    }
    r
}

fn expect_not_abort(msg: ProtocolMessage) -> Result<ProtocolMessage, TransportError> {
    match msg {
        ProtocolMessage::Abort => Err(ProtocolError::PeerAborted.into()),
        m => Ok(m),
    }
}

/// Runs the sender's side of a session to completion.
pub fn drive_sender<C: Channel>(
    session: &mut SenderSession,
    ch: &mut C,
) -> Result<SenderView, TransportError> {
    let r = (|| {
        let x_a = session.round1()?;
        ch.send(&x_a)?;
        let y_b = expect_not_abort(ch.recv()?)?;
        let x_ab = expect_not_abort(ch.recv()?)?;
        let idx = session.round2(y_b, x_ab)?;
        ch.send(&idx)?;
        Ok(session.view().expect("sender finished"))
    })();
    abort_on_error(ch, r)
}

/// Runs the receiver's side of a session to completion.
///
/// The receiver reads `X^a` before writing `Y_sub^b`, so two blocking TCP
/// writers never wait on each other's full socket buffers.
pub fn drive_receiver<C: Channel>(
    session: &mut ReceiverSession,
    ch: &mut C,
) -> Result<DpIntersection, TransportError> {
    let r = (|| {
        let y_b = session.round1()?;
        let x_a = expect_not_abort(ch.recv()?)?;
        ch.send(&y_b)?;
        let x_ab = session.round2(x_a)?;
        ch.send(&x_ab)?;
        let idx = ch.recv()?;
        Ok(session.finish(idx)?)
    })();
    abort_on_error(ch, r)
}

/// Closed-form size of a full session transcript in bytes.
pub fn transcript_bytes(x_len: usize, y_sub_len: usize, dp_len: usize) -> u64 {
    let header = crate::wire::HEADER_BYTES as u64;
    4 * header + 32 * (2 * x_len + y_sub_len) as u64 + 4 * dp_len as u64
}

pub mod config {
    //! Run configuration shared by the library drivers and the CLI.

    use crate::mechanisms::{MechanismError, MechanismParams};
    use crate::rng::RngMode;

    #[derive(Clone, Debug, PartialEq)]
    pub struct RunConfig {
        pub eps_a: f64,
        pub delta_b: f64,
        pub p_b: f64,
        pub seed: Option<u64>,
    }

    impl RunConfig {
        pub fn new(
            eps_a: f64,
            delta_b: f64,
            p_b: f64,
            seed: Option<u64>,
        ) -> Result<Self, MechanismError> {
            if !(eps_a > 0.0 && eps_a.is_finite()) {
                return Err(MechanismError::InvalidBudget {
                    name: "eps_A",
                    value: eps_a,
                });
            }
            if !(delta_b > 0.0 && delta_b < 1.0) {
                return Err(MechanismError::InvalidBudget {
                    name: "delta_B",
                    value: delta_b,
                });
            }
            MechanismParams::for_epsilon(eps_a, p_b)?;
            Ok(RunConfig {
                eps_a,
                delta_b,
                p_b,
                seed,
            })
        }

        pub fn params(&self) -> MechanismParams {
            MechanismParams::for_epsilon(self.eps_a, self.p_b).expect("validated at construction")
        }

        pub fn rng_mode(&self) -> RngMode {
            RngMode::from_seed(self.seed)
        }
    }
}

pub use config::RunConfig;

/// One party's input.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PartyInput {
    pub items: Vec<Vec<u8>>,
    pub payloads: Option<Vec<f64>>,
}

impl PartyInput {
    pub fn new(items: Vec<Vec<u8>>) -> Self {
        PartyInput {
            items,
            payloads: None,
        }
    }
}

/// Per-run measurements, one row of the benchmark tables.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct BenchRecord {
    /// log2 of the input size, when the input size is a power of two.
    pub k: Option<u32>,
    pub n: usize,
    pub y_sub_len: usize,
    pub dp_len: usize,
    pub runtime_seconds: f64,
    pub comm_megabytes: f64,
    pub transcript_bytes: u64,
    pub eps_a: f64,
    pub p_b: f64,
    pub recall_observed: Option<f64>,
    pub precision_observed: Option<f64>,
    /// Share of the runtime spent in subsampling, shuffling and randomized
    /// response (both parties).
    pub mechanism_fraction: f64,
}

fn log2_exact(n: usize) -> Option<u32> {
    n.is_power_of_two().then(|| n.trailing_zeros())
}

/// Result of [`run_local`].
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOutcome {
    pub result: DpIntersection,
    pub sender_view: SenderView,
    pub record: BenchRecord,
}

/// Runs both parties on separate threads joined by an in-memory channel.
pub fn run_local(
    cfg: &RunConfig,
    sender: PartyInput,
    receiver: PartyInput,
) -> Result<LocalOutcome, TransportError> {
    let params = cfg.params();
    let mode = cfg.rng_mode();
    let start = Instant::now();
    let x_plain: std::collections::HashSet<Vec<u8>> = sender.items.iter().cloned().collect();
    let n = sender.items.len();

    let (mut ch_s, mut ch_r) = memory_pair();
    let sender_thread = thread::spawn(move || -> Result<_, TransportError> {
        let mut session = SenderSession::setup(
            sender.items,
            params,
            mode.stream(crate::rng::streams::SENDER),
        )?;
        let view = drive_sender(&mut session, &mut ch_s)?;
        Ok((view, session.state().mechanism_time))
    });
    let receiver_out = (|| -> Result<_, TransportError> {
        let mut session = ReceiverSession::setup(
            receiver.items,
            receiver.payloads,
            params,
            mode.stream(crate::rng::streams::RECEIVER),
        )?;
        let out = drive_receiver(&mut session, &mut ch_r)?;
        let subsample = session.subsample().expect("finished").items.clone();
        Ok((out, subsample))
    })();
    drop(ch_r);
    let sender_out = sender_thread.join().map_err(|_| TransportError::Panicked)?;
    let (result, y_sub) = receiver_out?;
    let (sender_view, sender_mech) = sender_out?;
    let runtime = start.elapsed();

    let true_sub = y_sub.iter().filter(|y| x_plain.contains(*y)).count();
    let hits = result
        .elements
        .iter()
        .filter(|y| x_plain.contains(*y))
        .count();
    let transcript = result.stats.sent_bytes + result.stats.received_bytes;
    let mech = result.stats.mechanism_time + sender_mech;
    let record = BenchRecord {
        k: log2_exact(n),
        n,
        y_sub_len: result.stats.y_sub_len,
        dp_len: result.stats.dp_len,
        runtime_seconds: runtime.as_secs_f64(),
        comm_megabytes: transcript as f64 / (1u64 << 20) as f64,
        transcript_bytes: transcript,
        eps_a: cfg.eps_a,
        p_b: cfg.p_b,
        recall_observed: (true_sub > 0).then(|| hits as f64 / true_sub as f64),
        precision_observed: (!result.elements.is_empty())
            .then(|| hits as f64 / result.elements.len() as f64),
        mechanism_fraction: mech.as_secs_f64() / runtime.as_secs_f64().max(f64::MIN_POSITIVE),
    };
    Ok(LocalOutcome {
        result,
        sender_view,
        record,
    })
}

/// Where a networked party finds its peer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Listen(String),
    Connect(String),
}

/// Result of [`run_networked`]; `result` is `None` for the sender, whose
/// functionality output is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutcome {
    pub result: Option<DpIntersection>,
    pub sender_view: Option<SenderView>,
    pub record: BenchRecord,
}

pub fn open_channel(
    endpoint: &Endpoint,
    connect_timeout: Duration,
) -> Result<TcpChannel, TransportError> {
    match endpoint {
        Endpoint::Listen(addr) => Ok(TcpChannel::listen(addr.as_str())?),
        Endpoint::Connect(addr) => TcpChannel::connect(addr, connect_timeout),
    }
}

/// Runs one party over TCP.
pub fn run_networked(
    cfg: &RunConfig,
    role: Role,
    input: PartyInput,
    endpoint: &Endpoint,
) -> Result<NetworkOutcome, TransportError> {
    let mut ch = open_channel(endpoint, Duration::from_secs(30))?;
    run_over_channel(cfg, role, input, &mut ch)
}

/// Runs one party over an already established channel.
pub fn run_over_channel<C: Channel>(
    cfg: &RunConfig,
    role: Role,
    input: PartyInput,
    ch: &mut C,
) -> Result<NetworkOutcome, TransportError> {
    let params = cfg.params();
    let mode = cfg.rng_mode();
    let n = input.items.len();
    let start = Instant::now();
    let (result, sender_view, mech) = match role {
        Role::Sender => {
            let mut s = SenderSession::setup(
                input.items,
                params,
                mode.stream(crate::rng::streams::SENDER),
            )?;
            let view = drive_sender(&mut s, ch)?;
            (None, Some(view), s.state().mechanism_time)
        }
        Role::Receiver => {
            let mut r = ReceiverSession::setup(
                input.items,
                input.payloads,
                params,
                mode.stream(crate::rng::streams::RECEIVER),
            )?;
            let out = drive_receiver(&mut r, ch)?;
            (Some(out), None, r.state().mechanism_time)
        }
    };
    let runtime = start.elapsed();
    let transcript = ch.bytes_sent() + ch.bytes_received();
    let (y_sub_len, dp_len) = match (&result, &sender_view) {
        (Some(out), _) => (out.stats.y_sub_len, out.stats.dp_len),
        (None, Some(view)) => (view.y_sub_len, view.dp_len),
        (None, None) => unreachable!("one role always produces output"),
    };
    Ok(NetworkOutcome {
        result,
        sender_view,
        record: BenchRecord {
            k: log2_exact(n),
            n,
            y_sub_len,
            dp_len,
            runtime_seconds: runtime.as_secs_f64(),
            comm_megabytes: transcript as f64 / (1u64 << 20) as f64,
            transcript_bytes: transcript,
            eps_a: cfg.eps_a,
            p_b: cfg.p_b,
            recall_observed: None,
            precision_observed: None,
            mechanism_fraction: mech.as_secs_f64() / runtime.as_secs_f64().max(f64::MIN_POSITIVE),
        },
    })
}
