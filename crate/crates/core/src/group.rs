//! Prime-order group used as the Diffie-Hellman substrate.
//!
//! Elements live in ristretto255, the prime-order quotient of curve25519, so
//! there is no cofactor to worry about and every non-identity element
//! generates the whole group. Items are mapped into the group with a
//! hash-to-group construction (SHA-512 wide digest followed by the ristretto
//! Elligator map); the discrete log of `hash_to_group(x)` is unknown to
//! everyone.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar as DalekScalar;
use curve25519_dalek::traits::Identity;
use rand::{CryptoRng, RngCore};
use sha2::Sha512;
use thiserror::Error;

use crate::par::{map_slice, Parallelism};

/// Width of a canonical element encoding in bytes.
pub const ELEMENT_BYTES: usize = 32;

/// Raw canonical encoding of a group element.
pub type Encoding = [u8; ELEMENT_BYTES];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("byte string is not a canonical group element encoding")]
    InvalidEncoding,
    #[error("identity element is not accepted")]
    Identity,
    #[error("invalid group element at index {index}")]
    InvalidElement { index: usize },
    #[error("expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("bad hex: {0}")]
    Hex(String),
    #[error("cannot hash an empty item")]
    EmptyInput,
}

/// Nonzero secret exponent.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Scalar(DalekScalar);

impl Scalar {
    /// `None` for zero (mod the group order).
    pub fn from_u64(value: u64) -> Option<Self> {
        Self::new(DalekScalar::from(value))
    }

    fn new(inner: DalekScalar) -> Option<Self> {
        (inner != DalekScalar::ZERO).then_some(Scalar(inner))
    }

    pub fn invert(&self) -> Scalar {
        Scalar(self.0.invert())
    }

    /// Product mod the group order. Never zero since the order is prime.
    pub fn mul(&self, other: &Scalar) -> Scalar {
        Scalar(self.0 * other.0)
    }
}

// Secrets stay out of logs.
impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Scalar(..)")
    }
}

/// Samples a uniform nonzero scalar.
pub fn gen_secret<R: RngCore + CryptoRng>(rng: &mut R) -> Scalar {
    loop {
        if let Some(s) = Scalar::new(DalekScalar::random(rng)) {
            return s;
        }
    }
}

/// A validated, non-identity group element together with its encoding.
#[derive(Clone, Copy)]
pub struct GroupElement {
    point: RistrettoPoint,
    encoding: Encoding,
}

impl GroupElement {
    fn from_point(point: RistrettoPoint) -> Self {
        GroupElement {
            point,
            encoding: point.compress().to_bytes(),
        }
    }

    /// Decodes a canonical encoding. Non-canonical strings and the identity
    /// (all-zero encoding) are rejected.
    pub fn from_bytes(bytes: &Encoding) -> Result<Self, GroupError> {
        let point = CompressedRistretto(*bytes)
            .decompress()
            .ok_or(GroupError::InvalidEncoding)?;
        if point == RistrettoPoint::identity() {
            return Err(GroupError::Identity);
        }
        Ok(GroupElement {
            point,
            encoding: *bytes,
        })
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, GroupError> {
        let arr: &Encoding = bytes.try_into().map_err(|_| GroupError::Length {
            expected: ELEMENT_BYTES,
            actual: bytes.len(),
        })?;
        Self::from_bytes(arr)
    }

    pub fn to_bytes(&self) -> Encoding {
        self.encoding
    }

    pub fn as_bytes(&self) -> &Encoding {
        &self.encoding
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.encoding)
    }

    pub fn from_hex(s: &str) -> Result<Self, GroupError> {
        let bytes = hex::decode(s).map_err(|e| GroupError::Hex(e.to_string()))?;
        Self::from_slice(&bytes)
    }
}

impl PartialEq for GroupElement {
    fn eq(&self, other: &Self) -> bool {
        self.encoding == other.encoding
    }
}

impl Eq for GroupElement {}

impl Hash for GroupElement {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.encoding.hash(state)
    }
}

impl PartialOrd for GroupElement {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lexicographic order on encodings.
impl Ord for GroupElement {
    fn cmp(&self, other: &Self) -> Ordering {
        self.encoding.cmp(&other.encoding)
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({})", self.to_hex())
    }
}

/// Maps an arbitrary nonempty byte string to a group element.
pub fn hash_to_group(input: &[u8]) -> Result<GroupElement, GroupError> {
    if input.is_empty() {
        return Err(GroupError::EmptyInput);
    }
    Ok(GroupElement::from_point(RistrettoPoint::hash_from_bytes::<
        Sha512,
    >(input)))
}

/// An item and its image under [`hash_to_group`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashedItem {
    pub source: Vec<u8>,
    pub point: GroupElement,
}

impl HashedItem {
    pub fn new(source: Vec<u8>) -> Result<Self, GroupError> {
        let point = hash_to_group(&source)?;
        Ok(HashedItem { source, point })
    }
}

/// Hashes a batch of items, preserving order.
pub fn hash_items(items: &[Vec<u8>], mode: Parallelism) -> Result<Vec<HashedItem>, GroupError> {
    map_slice(items, mode, |item| HashedItem::new(item.clone()))
        .into_iter()
        .collect()
}

/// Group exponentiation `e^k` (written multiplicatively).
pub fn exp(e: &GroupElement, k: &Scalar) -> GroupElement {
    GroupElement::from_point(e.point * k.0)
}

/// Elementwise [`exp`] over a slice.
pub fn batch_exp(es: &[GroupElement], k: &Scalar) -> Vec<GroupElement> {
    batch_exp_with(es, k, Parallelism::default())
}

pub fn batch_exp_with(es: &[GroupElement], k: &Scalar, mode: Parallelism) -> Vec<GroupElement> {
    map_slice(es, mode, |e| exp(e, k))
}

/// Decodes a batch of encodings, reporting the lowest failing index.
pub fn decode_batch(raw: &[Encoding], mode: Parallelism) -> Result<Vec<GroupElement>, GroupError> {
    map_slice(raw, mode, GroupElement::from_bytes)
        .into_iter()
        .enumerate()
        .map(|(index, r)| r.map_err(|_| GroupError::InvalidElement { index }))
        .collect()
}

/// Decodes and exponentiates raw encodings in one pass.
pub fn batch_exp_encoded(
    raw: &[Encoding],
    k: &Scalar,
    mode: Parallelism,
) -> Result<Vec<GroupElement>, GroupError> {
    map_slice(raw, mode, |b| {
        GroupElement::from_bytes(b).map(|e| exp(&e, k))
    })
    .into_iter()
    .enumerate()
    .map(|(index, r)| r.map_err(|_| GroupError::InvalidElement { index }))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngMode;
    use proptest::prelude::*;

    fn h(s: &str) -> GroupElement {
        hash_to_group(s.as_bytes()).unwrap()
    }

    #[test]
    fn hashing_is_deterministic_and_separates_inputs() {
        assert_eq!(h("alice"), h("alice"));
        assert_ne!(h("alice"), h("bob"));
        assert_eq!(hash_to_group(b""), Err(GroupError::EmptyInput));
    }

    #[test]
    fn exponent_laws() {
        let mut rng = RngMode::Seeded(1).stream(0);
        let e = h("x");
        let a = gen_secret(&mut rng);
        let b = gen_secret(&mut rng);
        assert_eq!(exp(&e, &Scalar::from_u64(1).unwrap()), e);
        assert_eq!(exp(&exp(&e, &a), &a.invert()), e);
        assert_eq!(exp(&exp(&e, &a), &b), exp(&exp(&e, &b), &a));
        assert_eq!(exp(&exp(&e, &a), &b), exp(&e, &a.mul(&b)));
    }

    #[test]
    fn secrets_are_nonzero_and_reproducible() {
        let a = gen_secret(&mut RngMode::Seeded(99).stream(3));
        let b = gen_secret(&mut RngMode::Seeded(99).stream(3));
        assert_eq!(a, b);
        let c = gen_secret(&mut RngMode::Secure.stream(0));
        let d = gen_secret(&mut RngMode::Secure.stream(0));
        assert_ne!(c, d);
        assert_ne!(a.0, DalekScalar::ZERO);
        assert_eq!(Scalar::from_u64(0), None);
        // Group order l wraps to zero.
        let l_minus_1 = DalekScalar::ZERO - DalekScalar::ONE;
        assert!(Scalar::new(l_minus_1 + DalekScalar::ONE).is_none());
    }

    #[test]
    fn decode_rejects_zero_and_non_canonical() {
        assert_eq!(
            GroupElement::from_bytes(&[0u8; 32]),
            Err(GroupError::Identity)
        );
        // 2^255 - 1 is not a canonical field element.
        let mut bad = [0xffu8; 32];
        bad[31] = 0x7f;
        assert_eq!(
            GroupElement::from_bytes(&bad),
            Err(GroupError::InvalidEncoding)
        );
        // Negative field elements (low bit set) are non-canonical in ristretto.
        let mut neg = h("y").to_bytes();
        neg[0] |= 1;
        assert!(GroupElement::from_bytes(&neg).is_err());
        assert!(GroupElement::from_slice(&[1u8; 31]).is_err());
    }

    #[test]
    fn hex_round_trip() {
        let e = h("hex");
        assert_eq!(GroupElement::from_hex(&e.to_hex()).unwrap(), e);
        assert!(GroupElement::from_hex("zz").is_err());
    }

    #[test]
    fn batch_matches_scalar_calls() {
        let k = gen_secret(&mut RngMode::Seeded(5).stream(0));
        assert!(batch_exp(&[], &k).is_empty());
        let es: Vec<_> = (0..64).map(|i| h(&format!("item-{i}"))).collect();
        let expected: Vec<_> = es.iter().map(|e| exp(e, &k)).collect();
        assert_eq!(batch_exp_with(&es, &k, Parallelism::Sequential), expected);
        assert_eq!(batch_exp_with(&es, &k, Parallelism::Parallel), expected);
    }

    #[test]
    fn batch_reports_first_bad_index() {
        let k = Scalar::from_u64(3).unwrap();
        let mut raw: Vec<Encoding> = (0..10).map(|i| h(&i.to_string()).to_bytes()).collect();
        raw[7] = [0xff; 32];
        raw[4] = [0u8; 32];
        for mode in [Parallelism::Sequential, Parallelism::Parallel] {
            assert_eq!(
                batch_exp_encoded(&raw, &k, mode),
                Err(GroupError::InvalidElement { index: 4 })
            );
            assert_eq!(
                decode_batch(&raw, mode),
                Err(GroupError::InvalidElement { index: 4 })
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn dh_commutes(item in proptest::collection::vec(any::<u8>(), 1..64), sa in 1u64.., sb in 1u64..) {
            let e = hash_to_group(&item).unwrap();
            let a = Scalar::from_u64(sa).unwrap();
            let b = Scalar::from_u64(sb).unwrap();
            prop_assert_eq!(exp(&exp(&e, &a), &b), exp(&exp(&e, &b), &a));
        }

        #[test]
        fn encoding_round_trips(item in proptest::collection::vec(any::<u8>(), 1..64)) {
            let e = hash_to_group(&item).unwrap();
            prop_assert_eq!(GroupElement::from_bytes(&e.to_bytes()).unwrap(), e);
        }
    }
}
