//! Sender and receiver state machines.
//!
//! Message flow of one DP-PSI session:
//!
//! 1. sender → receiver: `X^a` (hashed sender set, sorted by encoding, under `a`)
//! 2. receiver → sender: `Y_sub^b` (Bernoulli(p_B) subsample of the sorted
//!    hashed receiver set, under `b`)
//! 3. receiver → sender: `X^{ab}` re-encrypted under `b`, then shuffled
//! 4. sender → receiver: ascending positions within `Y_sub^b` of the matches
//!    kept with probability `p_A` plus the non-matches injected with
//!    probability `q`
//!
//! The receiver maps positions back to its plaintext subsample and, when it
//! holds payloads, sums them locally. Payloads never leave the receiver.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::group::{
    batch_exp, gen_secret, hash_items, GroupElement, GroupError, HashedItem, Scalar,
};
use crate::mechanisms::{
    bernoulli_subsample, ensure_distinct, uniform_permutation, upsample, MechanismError,
    MechanismParams,
};
use crate::par::Parallelism;
use crate::rng::ProtocolRng;
use crate::wire::{IndexSet, MessageType, ProtocolMessage, WireError};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("{role:?} session is in phase {actual:?}, expected {expected:?}")]
    Phase {
        role: Role,
        expected: Phase,
        actual: Phase,
    },
    #[error("expected a {expected:?} message, got {got:?}")]
    UnexpectedMessage {
        expected: MessageType,
        got: MessageType,
    },
    #[error("peer aborted the session")]
    PeerAborted,
    #[error("duplicate item at index {index}")]
    DuplicateItem { index: usize },
    #[error("duplicate ciphertext at index {index} of a {provenance:?} set")]
    DuplicateEncoding {
        provenance: Provenance,
        index: usize,
    },
    #[error("{payloads} payloads for {items} items")]
    PayloadLength { items: usize, payloads: usize },
    #[error("index {index} out of range for a subsample of {len}")]
    IndexOutOfRange { index: u32, len: usize },
    #[error("subsample of {0} elements cannot be indexed with u32")]
    TooLarge(usize),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Role {
    Sender,
    Receiver,
}

/// Session phases, in order. Transitions only move forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Setup,
    Round1,
    Round2,
    Round3,
    Done,
}

/// Which protocol value an encrypted set holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    /// `X^a`
    XA,
    /// `X^{ab}` after the receiver's shuffle.
    XAbPermuted,
    /// `Y_sub^b`
    YBSub,
    /// `Y_sub^{ab}`, computed by the sender and never transmitted.
    YAbSub,
}

/// Ordered ciphertexts with a fixed provenance and no repeated encodings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedSet {
    elements: Vec<GroupElement>,
    provenance: Provenance,
}

impl EncryptedSet {
    pub fn new(elements: Vec<GroupElement>, provenance: Provenance) -> Result<Self, ProtocolError> {
        ensure_distinct(&elements).map_err(|e| match e {
            MechanismError::Duplicate { index } => {
                ProtocolError::DuplicateEncoding { provenance, index }
            }
            other => other.into(),
        })?;
        Ok(EncryptedSet {
            elements,
            provenance,
        })
    }

    /// Unwraps a received message, checking it carries `expected`.
    pub fn from_message(msg: ProtocolMessage, expected: Provenance) -> Result<Self, ProtocolError> {
        let want = match expected {
            Provenance::XA => MessageType::XA,
            Provenance::XAbPermuted => MessageType::XAbPi,
            Provenance::YBSub => MessageType::YBSub,
            Provenance::YAbSub => unreachable!("Y_sub^ab is never received"),
        };
        let elements = match (msg, expected) {
            (ProtocolMessage::XA(v), Provenance::XA)
            | (ProtocolMessage::XAbPi(v), Provenance::XAbPermuted)
            | (ProtocolMessage::YBSub(v), Provenance::YBSub) => v,
            (ProtocolMessage::Abort, _) => return Err(ProtocolError::PeerAborted),
            (other, _) => {
                return Err(ProtocolError::UnexpectedMessage {
                    expected: want,
                    got: other.message_type(),
                })
            }
        };
        Self::new(elements, expected)
    }

    /// `None` for `Y_sub^{ab}`, which has no wire representation.
    pub fn into_message(self) -> Option<ProtocolMessage> {
        match self.provenance {
            Provenance::XA => Some(ProtocolMessage::XA(self.elements)),
            Provenance::XAbPermuted => Some(ProtocolMessage::XAbPi(self.elements)),
            Provenance::YBSub => Some(ProtocolMessage::YBSub(self.elements)),
            Provenance::YAbSub => None,
        }
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// State shared by both roles. The secret is never serialized.
#[derive(Debug)]
pub struct SessionState {
    pub role: Role,
    pub phase: Phase,
    secret: Scalar,
    pub params: MechanismParams,
    pub sent_bytes: u64,
    pub received_bytes: u64,
    /// Time spent in subsampling, shuffling and randomized response.
    pub mechanism_time: Duration,
    started: Instant,
}

impl SessionState {
    fn new(role: Role, params: MechanismParams, rng: &mut ProtocolRng) -> Self {
        SessionState {
            role,
            phase: Phase::Setup,
            secret: gen_secret(rng),
            params,
            sent_bytes: 0,
            received_bytes: 0,
            mechanism_time: Duration::ZERO,
            started: Instant::now(),
        }
    }

    fn advance(&mut self, expected: Phase, next: Phase) -> Result<(), ProtocolError> {
        if self.phase != expected {
            return Err(ProtocolError::Phase {
                role: self.role,
                expected,
                actual: self.phase,
            });
        }
        debug_assert!(next > self.phase);
        self.phase = next;
        Ok(())
    }

    fn sent(&mut self, msg: &ProtocolMessage) {
        self.sent_bytes += msg.encoded_len() as u64;
    }

    fn received(&mut self, msg: &ProtocolMessage) {
        self.received_bytes += msg.encoded_len() as u64;
    }

    pub fn transcript_bytes(&self) -> u64 {
        self.sent_bytes + self.received_bytes
    }
}

fn timed<T>(acc: &mut Duration, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *acc += start.elapsed();
    out
}

fn hash_distinct(items: Vec<Vec<u8>>) -> Result<Vec<HashedItem>, ProtocolError> {
    ensure_distinct(&items).map_err(|e| match e {
        MechanismError::Duplicate { index } => ProtocolError::DuplicateItem { index },
        other => other.into(),
    })?;
    let hashed = hash_items(&items, Parallelism::default())?;
    Ok(hashed)
}

struct SortedItems {
    items: Vec<Vec<u8>>,
    points: Vec<GroupElement>,
    /// `order[j]` is the input position of sorted entry `j`.
    order: Vec<usize>,
}

/// Sorts by encoding, keeping the order so callers can co-permute aligned
/// data.
fn sort_hashed(hashed: Vec<HashedItem>) -> Result<SortedItems, ProtocolError> {
    let points: Vec<GroupElement> = hashed.iter().map(|h| h.point).collect();
    ensure_distinct(&points).map_err(|e| match e {
        MechanismError::Duplicate { index } => ProtocolError::DuplicateItem { index },
        other => other.into(),
    })?;
    let mut order: Vec<usize> = (0..hashed.len()).collect();
    order.sort_unstable_by(|&i, &j| points[i].cmp(&points[j]));
    let sorted_points = order.iter().map(|&i| points[i]).collect();
    let mut slots: Vec<Option<Vec<u8>>> = hashed.into_iter().map(|h| Some(h.source)).collect();
    let sorted = order.iter().map(|&i| slots[i].take().unwrap()).collect();
    Ok(SortedItems {
        items: sorted,
        points: sorted_points,
        order,
    })
}

/// What the sender learns from a session: its own set size plus the leakage
/// profile `|Y_sub|` and `|X ∩ Y_sub|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SenderView {
    pub x_len: usize,
    pub y_sub_len: usize,
    pub intersection_len: usize,
    pub dp_len: usize,
}

pub struct SenderSession {
    state: SessionState,
    hashed: Vec<GroupElement>,
    rng: ProtocolRng,
    view: Option<SenderView>,
}

impl SenderSession {
    pub fn setup(
        items: Vec<Vec<u8>>,
        params: MechanismParams,
        rng: ProtocolRng,
    ) -> Result<Self, ProtocolError> {
        Self::setup_hashed(hash_distinct(items)?, params, rng)
    }

    /// As [`SenderSession::setup`] for items already passed through
    /// [`crate::group::hash_to_group`].
    pub fn setup_hashed(
        items: Vec<HashedItem>,
        params: MechanismParams,
        mut rng: ProtocolRng,
    ) -> Result<Self, ProtocolError> {
        let hashed = sort_hashed(items)?.points;
        let state = SessionState::new(Role::Sender, params, &mut rng);
        Ok(SenderSession {
            state,
            hashed,
            rng,
            view: None,
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    /// Hashed set in transmission order.
    pub fn hashed(&self) -> &[GroupElement] {
        &self.hashed
    }

    /// Emits `X^a`.
    pub fn round1(&mut self) -> Result<ProtocolMessage, ProtocolError> {
        self.state.advance(Phase::Setup, Phase::Round1)?;
        let msg = ProtocolMessage::XA(batch_exp(&self.hashed, &self.state.secret));
        self.state.sent(&msg);
        Ok(msg)
    }

    /// Consumes `Y_sub^b` and `X^{ab}_π`, emits the noisy index set.
    pub fn round2(
        &mut self,
        y_b_sub: ProtocolMessage,
        x_ab_pi: ProtocolMessage,
    ) -> Result<ProtocolMessage, ProtocolError> {
        if self.state.phase != Phase::Round1 {
            return Err(ProtocolError::Phase {
                role: Role::Sender,
                expected: Phase::Round1,
                actual: self.state.phase,
            });
        }
        self.state.received(&y_b_sub);
        self.state.received(&x_ab_pi);
        let y_b = EncryptedSet::from_message(y_b_sub, Provenance::YBSub)?;
        let x_ab = EncryptedSet::from_message(x_ab_pi, Provenance::XAbPermuted)?;
        if y_b.len() > u32::MAX as usize {
            return Err(ProtocolError::TooLarge(y_b.len()));
        }
        let y_ab = EncryptedSet::new(
            batch_exp(y_b.elements(), &self.state.secret),
            Provenance::YAbSub,
        )?;

        let x_set: HashSet<&GroupElement> = x_ab.elements().iter().collect();
        let (matched, unmatched): (Vec<u32>, Vec<u32>) =
            (0..y_ab.len() as u32).partition(|&i| x_set.contains(&y_ab.elements()[i as usize]));

        let params = self.state.params;
        let rng = &mut self.rng;
        let mut released = timed(&mut self.state.mechanism_time, || {
            upsample(&matched, &unmatched, params.p_a, params.q, rng)
        })?;
        released.sort_unstable();

        self.view = Some(SenderView {
            x_len: self.hashed.len(),
            y_sub_len: y_ab.len(),
            intersection_len: matched.len(),
            dp_len: released.len(),
        });
        let msg = ProtocolMessage::IndexSet(IndexSet::new(released)?);
        self.state.sent(&msg);
        self.state.advance(Phase::Round1, Phase::Done)?;
        Ok(msg)
    }

    /// Available once [`SenderSession::round2`] has run.
    pub fn view(&self) -> Option<SenderView> {
        self.view
    }
}

/// Counters describing one finished session from the receiver's side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunStats {
    pub sent_bytes: u64,
    pub received_bytes: u64,
    pub wall_time: Duration,
    pub mechanism_time: Duration,
    pub y_sub_len: usize,
    pub dp_len: usize,
}

/// The receiver's output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpIntersection {
    /// Plaintext items, in the receiver's transmission order.
    pub elements: Vec<Vec<u8>>,
    /// Sum of the payloads of the released items, when payloads were given.
    pub payload_sum: Option<f64>,
    pub stats: RunStats,
}

/// The receiver's Bernoulli subsample in transmission order.
#[derive(Clone, Debug, PartialEq)]
pub struct Subsample {
    pub items: Vec<Vec<u8>>,
    pub payloads: Option<Vec<f64>>,
}

pub struct ReceiverSession {
    state: SessionState,
    items: Vec<Vec<u8>>,
    hashed: Vec<GroupElement>,
    payloads: Option<Vec<f64>>,
    subsample: Option<Subsample>,
    rng: ProtocolRng,
}

impl ReceiverSession {
    /// `payloads`, when present, must align with `items`; they follow the
    /// items through sorting and subsampling.
    pub fn setup(
        items: Vec<Vec<u8>>,
        payloads: Option<Vec<f64>>,
        params: MechanismParams,
        rng: ProtocolRng,
    ) -> Result<Self, ProtocolError> {
        Self::check_payloads(items.len(), &payloads)?;
        Self::setup_hashed(hash_distinct(items)?, payloads, params, rng)
    }

    /// As [`ReceiverSession::setup`] for items already passed through
    /// [`crate::group::hash_to_group`].
    pub fn setup_hashed(
        items: Vec<HashedItem>,
        payloads: Option<Vec<f64>>,
        params: MechanismParams,
        mut rng: ProtocolRng,
    ) -> Result<Self, ProtocolError> {
        Self::check_payloads(items.len(), &payloads)?;
        let SortedItems {
            items,
            points: hashed,
            order,
        } = sort_hashed(items)?;
        let payloads = payloads.map(|p| order.iter().map(|&i| p[i]).collect());
        let state = SessionState::new(Role::Receiver, params, &mut rng);
        Ok(ReceiverSession {
            state,
            items,
            hashed,
            payloads,
            subsample: None,
            rng,
        })
    }

    fn check_payloads(items: usize, payloads: &Option<Vec<f64>>) -> Result<(), ProtocolError> {
        if let Some(p) = payloads {
            if p.len() != items {
                return Err(ProtocolError::PayloadLength {
                    items,
                    payloads: p.len(),
                });
            }
        }
        Ok(())
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    /// Plaintext items in post-setup (sorted by hash encoding) order.
    pub fn items(&self) -> &[Vec<u8>] {
        &self.items
    }

    pub fn hashed(&self) -> &[GroupElement] {
        &self.hashed
    }

    /// Available after [`ReceiverSession::round1`].
    pub fn subsample(&self) -> Option<&Subsample> {
        self.subsample.as_ref()
    }

    /// Subsamples and emits `Y_sub^b`.
    pub fn round1(&mut self) -> Result<ProtocolMessage, ProtocolError> {
        self.state.advance(Phase::Setup, Phase::Round1)?;
        let p_b = self.state.params.p_b;
        let rng = &mut self.rng;
        let hashed = &self.hashed;
        let (kept, kept_idx) = timed(&mut self.state.mechanism_time, || {
            bernoulli_subsample(hashed, p_b, rng)
        })?;
        self.subsample = Some(Subsample {
            items: kept_idx.iter().map(|&i| self.items[i].clone()).collect(),
            payloads: self
                .payloads
                .as_ref()
                .map(|p| kept_idx.iter().map(|&i| p[i]).collect()),
        });
        let msg = ProtocolMessage::YBSub(batch_exp(&kept, &self.state.secret));
        self.state.sent(&msg);
        Ok(msg)
    }

    /// Re-encrypts `X^a` under `b`, shuffles, emits `X^{ab}_π`.
    pub fn round2(&mut self, x_a: ProtocolMessage) -> Result<ProtocolMessage, ProtocolError> {
        if self.state.phase != Phase::Round1 {
            return Err(ProtocolError::Phase {
                role: Role::Receiver,
                expected: Phase::Round1,
                actual: self.state.phase,
            });
        }
        self.state.received(&x_a);
        let x_a = EncryptedSet::from_message(x_a, Provenance::XA)?;
        let x_ab = batch_exp(x_a.elements(), &self.state.secret);
        let rng = &mut self.rng;
        let shuffled = timed(&mut self.state.mechanism_time, || {
            uniform_permutation(x_ab.len(), rng).apply(&x_ab)
        });
        let msg = ProtocolMessage::XAbPi(shuffled);
        self.state.sent(&msg);
        self.state.advance(Phase::Round1, Phase::Round2)?;
        Ok(msg)
    }

    /// Maps the released positions back to plaintext.
    pub fn finish(&mut self, idx: ProtocolMessage) -> Result<DpIntersection, ProtocolError> {
        if self.state.phase != Phase::Round2 {
            return Err(ProtocolError::Phase {
                role: Role::Receiver,
                expected: Phase::Round2,
                actual: self.state.phase,
            });
        }
        self.state.received(&idx);
        let idx = match idx {
            ProtocolMessage::IndexSet(idx) => idx,
            ProtocolMessage::Abort => return Err(ProtocolError::PeerAborted),
            other => {
                return Err(ProtocolError::UnexpectedMessage {
                    expected: MessageType::IndexSet,
                    got: other.message_type(),
                })
            }
        };
        let sub = self.subsample.as_ref().expect("round1 ran");
        let len = sub.items.len();
        if let Some(&index) = idx.indices().iter().find(|&&i| i as usize >= len) {
            return Err(ProtocolError::IndexOutOfRange { index, len });
        }
        let elements = idx
            .indices()
            .iter()
            .map(|&i| sub.items[i as usize].clone())
            .collect();
        let payload_sum = sub
            .payloads
            .as_ref()
            .map(|p| idx.indices().iter().map(|&i| p[i as usize]).sum());
        self.state.advance(Phase::Round2, Phase::Done)?;
        Ok(DpIntersection {
            elements,
            payload_sum,
            stats: RunStats {
                sent_bytes: self.state.sent_bytes,
                received_bytes: self.state.received_bytes,
                wall_time: self.state.started.elapsed(),
                mechanism_time: self.state.mechanism_time,
                y_sub_len: len,
                dp_len: idx.len(),
            },
        })
    }
}

/// Runs both parties of a DP-PSI session in memory, without framing. Returns
/// the receiver's output and the sender's view.
pub fn run_in_memory(
    sender: &mut SenderSession,
    receiver: &mut ReceiverSession,
) -> Result<(DpIntersection, SenderView), ProtocolError> {
    let x_a = sender.round1()?;
    let y_b = receiver.round1()?;
    let x_ab = receiver.round2(x_a)?;
    let idx = sender.round2(y_b, x_ab)?;
    let out = receiver.finish(idx)?;
    Ok((out, sender.view().expect("sender finished")))
}

/// Plain Diffie-Hellman PSI: the receiver learns exactly `X ∩ Y`, returned in
/// the receiver's input order.
pub fn baseline_dhpsi(
    sender_items: &[Vec<u8>],
    receiver_items: &[Vec<u8>],
    rng: &mut ProtocolRng,
) -> Result<Vec<Vec<u8>>, ProtocolError> {
    for items in [sender_items, receiver_items] {
        ensure_distinct(items).map_err(|e| match e {
            MechanismError::Duplicate { index } => ProtocolError::DuplicateItem { index },
            other => other.into(),
        })?;
    }
    let a = gen_secret(rng);
    let b = gen_secret(rng);
    let hx: Vec<GroupElement> = hash_items(sender_items, Parallelism::default())?
        .into_iter()
        .map(|h| h.point)
        .collect();
    let hy: Vec<GroupElement> = hash_items(receiver_items, Parallelism::default())?
        .into_iter()
        .map(|h| h.point)
        .collect();
    // Step 1: X^a to the receiver, Y^b to the sender.
    let x_a = batch_exp(&hx, &a);
    let y_b = batch_exp(&hy, &b);
    // Step 2: sender returns Y^{ab} in order; receiver computes X^{ab}.
    let y_ab = batch_exp(&y_b, &a);
    let x_ab: HashSet<GroupElement> = batch_exp(&x_a, &b).into_iter().collect();
    Ok(y_ab
        .iter()
        .zip(receiver_items)
        .filter(|(e, _)| x_ab.contains(e))
        .map(|(_, y)| y.clone())
        .collect())
}
