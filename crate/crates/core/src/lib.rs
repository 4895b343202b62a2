//! Differentially private set intersection over Diffie-Hellman PSI.
//!
//! The receiver subsamples its set before the exchange and the sender applies
//! randomized response to the matches it finds, so the intersection the
//! receiver learns is differentially private for both parties. Payloads stay
//! with the receiver and are summed in plaintext over the released items.
//!
//! Modules:
//! - [`group`]: ristretto255 hash-to-group, secrets and batch exponentiation
//! - [`mechanisms`]: subsampling, shuffling and randomized response
//! - [`accountant`]: closed-form privacy and utility bounds
//! - [`oracles`]: executable cardinality models and exact PMFs
//! - [`protocol`] and [`wire`]: session state machines and framing
//! - [`transport`], [`inputs`], [`bench`]: channels, drivers, files, sweeps
//!
//! Batch work runs on rayon with the default `parallel` feature; disable it
//! for a purely sequential build with identical outputs.

pub mod accountant;
pub mod bench;
pub mod group;
pub mod inputs;
pub mod mechanisms;
pub mod oracles;
pub mod par;
pub mod protocol;
pub mod rng;
pub mod transport;
pub mod wire;

pub use accountant::{optimal_pq, predict_utility, receiver_epsilon, validate_region};
pub use group::{hash_to_group, GroupElement, Scalar};
pub use mechanisms::MechanismParams;
pub use protocol::{baseline_dhpsi, DpIntersection, ReceiverSession, Role, SenderSession};
pub use rng::{ProtocolRng, RngMode};
pub use transport::{run_local, run_networked, PartyInput, RunConfig};
