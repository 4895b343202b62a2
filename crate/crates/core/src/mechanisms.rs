//! Randomness layer of the protocol: Bernoulli subsampling by the receiver,
//! the receiver's uniform permutation, and the sender's randomized-response
//! retention/injection over the subsampled set.
//!
//! Every mechanism takes its random source as an argument; the same seed
//! always gives the same output.

use std::collections::HashSet;
use std::hash::Hash;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("{name} = {value} is not a probability")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("{name} = {value} is outside its domain")]
    InvalidBudget { name: &'static str, value: f64 },
    #[error("subsampling rate p_B = {0} is below 1/2, which the receiver analysis does not cover")]
    SubsampleRateUnsupported(f64),
    #[error("retention p_A = {p_a} is below injection q = {q}")]
    RetentionBelowInjection { p_a: f64, q: f64 },
    #[error("intersection and complement share an element")]
    Overlap,
    #[error("duplicate item at index {index}")]
    Duplicate { index: usize },
}

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<f64, MechanismError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(MechanismError::InvalidProbability { name, value })
    }
}

/// Probabilities driving the three random mechanisms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    /// Receiver's subsampling rate, in `[1/2, 1]`.
    pub p_b: f64,
    /// Sender's retention rate for true matches.
    pub p_a: f64,
    /// Sender's injection rate for non-matches.
    pub q: f64,
}

impl MechanismParams {
    pub fn new(p_b: f64, p_a: f64, q: f64) -> Result<Self, MechanismError> {
        check_probability("p_B", p_b)?;
        check_probability("p_A", p_a)?;
        check_probability("q", q)?;
        if p_b < 0.5 {
            return Err(MechanismError::SubsampleRateUnsupported(p_b));
        }
        if p_a < q {
            return Err(MechanismError::RetentionBelowInjection { p_a, q });
        }
        Ok(MechanismParams { p_b, p_a, q })
    }

    /// No subsampling and no noise: the protocol degenerates to plain PSI.
    pub fn noiseless() -> Self {
        MechanismParams {
            p_b: 1.0,
            p_a: 1.0,
            q: 0.0,
        }
    }

    /// Subsampling at `p_b` with the utility-optimal `(p_A, q)` for `eps_a`.
    pub fn for_epsilon(eps_a: f64, p_b: f64) -> Result<Self, MechanismError> {
        let (p_a, q) = crate::accountant::optimal_pq(eps_a);
        Self::new(p_b, p_a, q)
    }
}

/// Keeps each item independently with probability `p`.
///
/// Returns the kept items in their original order together with their
/// (strictly increasing) source indices.
pub fn bernoulli_subsample<T: Clone, R: Rng + ?Sized>(
    items: &[T],
    p: f64,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<usize>), MechanismError> {
    check_probability("p", p)?;
    let expected = (items.len() as f64 * p) as usize + 1;
    let mut kept = Vec::with_capacity(expected);
    let mut kept_indices = Vec::with_capacity(expected);
    for (i, item) in items.iter().enumerate() {
        if rng.gen_bool(p) {
            kept.push(item.clone());
            kept_indices.push(i);
        }
    }
    Ok((kept, kept_indices))
}

/// A bijection on `{0, .., n-1}`. Applying it to a slice `v` yields
/// `w[i] = v[mapping[i]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            mapping: (0..n).collect(),
        }
    }

    /// `None` unless `mapping` is a bijection on `0..mapping.len()`.
    pub fn from_mapping(mapping: Vec<usize>) -> Option<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || std::mem::replace(&mut seen[m], true) {
                return None;
            }
        }
        Some(Permutation { mapping })
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Permutation { mapping: inv }
    }

    /// # Panics
    /// If `items.len()` differs from the permutation size.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        assert_eq!(items.len(), self.mapping.len(), "permutation size mismatch");
        self.mapping.iter().map(|&m| items[m].clone()).collect()
    }
}

/// Uniformly random permutation of `n` positions (Fisher-Yates).
pub fn uniform_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Permutation {
    let mut mapping: Vec<usize> = (0..n).collect();
    mapping.shuffle(rng);
    Permutation { mapping }
}

/// Randomized response over a disjoint split of the subsampled set: every
/// element of `intersection` is kept with probability `p_a`, every element of
/// `complement` with probability `q`, all independently. Output lists the
/// kept intersection elements first, then the kept complement elements.
pub fn upsample<T, R>(
    intersection: &[T],
    complement: &[T],
    p_a: f64,
    q: f64,
    rng: &mut R,
) -> Result<Vec<T>, MechanismError>
where
    T: Clone + Eq + Hash,
    R: Rng + ?Sized,
{
    check_probability("p_A", p_a)?;
    check_probability("q", q)?;
    let members: HashSet<&T> = intersection.iter().collect();
    if complement.iter().any(|c| members.contains(c)) {
        return Err(MechanismError::Overlap);
    }
    let mut out = Vec::new();
    out.extend(intersection.iter().filter(|_| rng.gen_bool(p_a)).cloned());
    out.extend(complement.iter().filter(|_| rng.gen_bool(q)).cloned());
    Ok(out)
}

/// Position-wise randomized response on a membership vector: a member is
/// reported with probability `p_a`, a non-member with probability `q`.
pub fn randomized_response<R: Rng + ?Sized>(
    membership: &[bool],
    p_a: f64,
    q: f64,
    rng: &mut R,
) -> Result<Vec<bool>, MechanismError> {
    check_probability("p_A", p_a)?;
    check_probability("q", q)?;
    Ok(membership
        .iter()
        .map(|&m| rng.gen_bool(if m { p_a } else { q }))
        .collect())
}

/// Rejects lists with repeated entries (inputs are sets, not multisets).
pub fn ensure_distinct<T: Eq + Hash>(items: &[T]) -> Result<(), MechanismError> {
    let mut seen = HashSet::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        if !seen.insert(item) {
            return Err(MechanismError::Duplicate { index });
        }
    }
    Ok(())
}
