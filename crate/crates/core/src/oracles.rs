//! Executable models of the sender's view of the intersection cardinality.
//!
//! `sim_alg1` is the real mechanism (Bernoulli subsampling of the true
//! intersection). `sim_alg2` and `sim_alg3` are the proxies used in the
//! receiver privacy analysis: a random subset `T` is drawn at rate
//! `2(1 - p_B)` and each of its members survives a fair coin. `sim_alg4` and
//! `sim_alg5` fix `|T_1|` and `s_1` respectively. `sim_alg6` is the sender's
//! randomized response. Exact PMFs are available for intersections of up to
//! [`EXACT_LIMIT`] elements; beyond that use the Monte Carlo runner.

use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use thiserror::Error;

use crate::mechanisms::{check_probability, randomized_response, MechanismError};
use crate::par::{map_chunks, Parallelism};
use crate::rng::ProtocolRng;

/// Largest intersection for which PMFs are computed exactly.
pub const EXACT_LIMIT: usize = 64;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("|I| = {0} exceeds the exact regime (at most {EXACT_LIMIT})")]
    AboveExactRegime(usize),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Inputs to the cardinality algorithms: `|Y| = n`, `|I| = |X ∩ Y|`, `p_B`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleScenario {
    pub n: usize,
    pub intersection_size: usize,
    pub p_b: f64,
}

impl OracleScenario {
    pub fn new(n: usize, intersection_size: usize, p_b: f64) -> Result<Self, OracleError> {
        if intersection_size > n {
            return Err(OracleError::InvalidScenario(format!(
                "|I| = {intersection_size} exceeds n = {n}"
            )));
        }
        if !(0.5..=1.0).contains(&p_b) {
            return Err(OracleError::InvalidScenario(format!(
                "p_B = {p_b} outside [0.5, 1]"
            )));
        }
        Ok(OracleScenario {
            n,
            intersection_size,
            p_b,
        })
    }

    /// Rate at which the proxy algorithms select the coin-flip set `T`.
    pub fn proxy_rate(&self) -> f64 {
        // Clamp guards against 2(1 - p) landing a hair above 1 at p = 0.5.
        (2.0 * (1.0 - self.p_b)).clamp(0.0, 1.0)
    }
}

/// Probability mass function on `{0, .., len-1}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PmfTable {
    probs: Vec<f64>,
}

#[derive(Serialize)]
struct PmfRow {
    k: usize,
    prob: f64,
}

impl PmfTable {
    /// Probabilities must be nonnegative and sum to one within `1e-12`.
    pub fn new(probs: Vec<f64>) -> Result<Self, OracleError> {
        if probs.iter().any(|p| p.is_nan() || *p < 0.0) {
            return Err(OracleError::InvalidScenario(
                "negative or NaN probability".into(),
            ));
        }
        let total = neumaier_sum(probs.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(OracleError::InvalidScenario(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(PmfTable { probs })
    }

    /// Normalizes raw counts into an empirical PMF.
    pub fn from_counts(counts: &[u64]) -> Self {
        let total: u64 = counts.iter().sum();
        let probs = counts
            .iter()
            .map(|&c| {
                if total == 0 {
                    0.0
                } else {
                    c as f64 / total as f64
                }
            })
            .collect();
        PmfTable { probs }
    }

    pub fn support(&self) -> std::ops::Range<usize> {
        0..self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        neumaier_sum(self.probs.iter().enumerate().map(|(k, p)| k as f64 * p))
    }

    /// Total-variation distance; missing entries count as zero mass.
    pub fn tv_distance(&self, other: &PmfTable) -> f64 {
        let len = self.probs.len().max(other.probs.len());
        0.5 * neumaier_sum((0..len).map(|k| (self.prob(k) - other.prob(k)).abs()))
    }

    /// Writes `k,prob` rows with a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), OracleError> {
        let mut w = csv::Writer::from_writer(writer);
        for (k, &prob) in self.probs.iter().enumerate() {
            w.serialize(PmfRow { k, prob })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Binomial(n, p) mass at every k in `0..=n`, for `n <= EXACT_LIMIT`.
fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    debug_assert!(n <= EXACT_LIMIT);
    let mut coeff = 1.0f64;
    (0..=n)
        .map(|k| {
            if k > 0 {
                coeff = coeff * (n - k + 1) as f64 / k as f64;
            }
            coeff * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
        })
        .collect()
}

fn bernoulli_count<R: Rng + ?Sized>(trials: usize, p: f64, rng: &mut R) -> usize {
    (0..trials).filter(|_| rng.gen_bool(p)).count()
}

/// Real mechanism: each of the `|I|` matches survives subsampling w.p. `p_B`.
pub fn sim_alg1<R: Rng + ?Sized>(scn: &OracleScenario, rng: &mut R) -> usize {
    bernoulli_count(scn.intersection_size, scn.p_b, rng)
}

/// Proxy over all of `Y`: `s ~ Bin(n, 2(1-p_B))`, uniform `T ⊆ Y` with
/// `|T| = s`; matches outside `T` always count, matches inside `T` count on a
/// fair coin. The matches are taken to be the first `|I|` positions of `Y`.
pub fn sim_alg2<R: Rng + ?Sized>(scn: &OracleScenario, rng: &mut R) -> usize {
    let s = bernoulli_count(scn.n, scn.proxy_rate(), rng);
    let t = index::sample(rng, scn.n, s);
    let in_both = t.iter().filter(|&i| i < scn.intersection_size).count();
    (scn.intersection_size - in_both) + bernoulli_count(in_both, 0.5, rng)
}

/// Proxy restricted to the intersection: `s_1 ~ Bin(|I|, 2(1-p_B))`, uniform
/// `T_1 ⊆ I` with `|T_1| = s_1`, then as [`sim_alg4`].
pub fn sim_alg3<R: Rng + ?Sized>(scn: &OracleScenario, rng: &mut R) -> usize {
    let s1 = bernoulli_count(scn.intersection_size, scn.proxy_rate(), rng);
    sim_alg5(scn.intersection_size, s1, rng)
}

/// Fixed coin set: `(|I| - |T_1|) + Bin(|T_1|, 1/2)`.
///
/// # Panics
/// If `t1_size > intersection_size`.
pub fn sim_alg4<R: Rng + ?Sized>(intersection_size: usize, t1_size: usize, rng: &mut R) -> usize {
    assert!(t1_size <= intersection_size, "|T_1| exceeds |I|");
    (intersection_size - t1_size) + bernoulli_count(t1_size, 0.5, rng)
}

/// Fixed `s_1`: draws a uniform `T_1 ⊆ I` of size `s1`, then flips a coin for
/// each of its members.
///
/// # Panics
/// If `s1 > intersection_size`.
pub fn sim_alg5<R: Rng + ?Sized>(intersection_size: usize, s1: usize, rng: &mut R) -> usize {
    assert!(s1 <= intersection_size, "s_1 exceeds |I|");
    let t1 = index::sample(rng, intersection_size, s1);
    let mut in_t1 = vec![false; intersection_size];
    for i in t1.iter() {
        in_t1[i] = true;
    }
    in_t1
        .iter()
        .filter(|&&selected| !selected || rng.gen_bool(0.5))
        .count()
}

/// Sender's randomized response over membership flags.
pub fn sim_alg6<R: Rng + ?Sized>(
    membership: &[bool],
    p_a: f64,
    q: f64,
    rng: &mut R,
) -> Result<Vec<bool>, OracleError> {
    Ok(randomized_response(membership, p_a, q, rng)?)
}

fn check_exact(scn: &OracleScenario) -> Result<(), OracleError> {
    if scn.intersection_size > EXACT_LIMIT {
        return Err(OracleError::AboveExactRegime(scn.intersection_size));
    }
    check_probability("p_B", scn.p_b)?;
    Ok(())
}

/// Exact law of [`sim_alg1`]: Binomial(|I|, p_B).
pub fn exact_pmf_alg1(scn: &OracleScenario) -> Result<PmfTable, OracleError> {
    check_exact(scn)?;
    PmfTable::new(binomial_pmf(scn.intersection_size, scn.p_b))
}

/// Exact law of [`sim_alg3`] by convolving over `s_1`.
pub fn exact_pmf_alg3(scn: &OracleScenario) -> Result<PmfTable, OracleError> {
    check_exact(scn)?;
    let size = scn.intersection_size;
    let outer = binomial_pmf(size, scn.proxy_rate());
    let coins: Vec<Vec<f64>> = (0..=size).map(|s1| binomial_pmf(s1, 0.5)).collect();
    let probs = (0..=size)
        .map(|z| {
            // z = (size - s1) + heads, heads in 0..=s1, so s1 >= size - z.
            neumaier_sum((size - z..=size).map(|s1| outer[s1] * coins[s1][z + s1 - size]))
        })
        .collect();
    PmfTable::new(probs)
}

/// Number of independent random streams a Monte Carlo run is split into.
/// Fixed so results do not depend on the worker count.
pub const MC_CHUNKS: usize = 64;

/// Empirical PMF of `sampler` over `samples` draws with values in
/// `0..=max_value`. Chunk `c` draws from stream `c` of `seed`.
///
/// # Panics
/// If the sampler returns a value above `max_value`.
pub fn monte_carlo_pmf<F>(
    max_value: usize,
    samples: usize,
    seed: u64,
    mode: Parallelism,
    sampler: F,
) -> PmfTable
where
    F: Fn(&mut ProtocolRng) -> usize + Sync + Send,
{
    let per_chunk = samples / MC_CHUNKS;
    let extra = samples % MC_CHUNKS;
    let partials = map_chunks(MC_CHUNKS, mode, |c| {
        let mut rng = ProtocolRng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let mut counts = vec![0u64; max_value + 1];
        let draws = per_chunk + usize::from(c < extra);
        for _ in 0..draws {
            counts[sampler(&mut rng)] += 1;
        }
        counts
    });
    let mut counts = vec![0u64; max_value + 1];
    for partial in partials {
        for (total, c) in counts.iter_mut().zip(partial) {
            *total += c;
        }
    }
    PmfTable::from_counts(&counts)
}

/// Per-element survival probability under the proxy: kept outright with
/// probability `1 - 2(1-p_B)`, otherwise on a fair coin. Equals `p_B`.
pub fn proxy_marginal(p_b: f64) -> f64 {
    (1.0 - 2.0 * (1.0 - p_b)) + 2.0 * (1.0 - p_b) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngMode;

    fn scn(n: usize, i: usize, p: f64) -> OracleScenario {
        OracleScenario::new(n, i, p).unwrap()
    }

    #[test]
    fn scenario_validation() {
        assert!(OracleScenario::new(3, 4, 0.8).is_err());
        assert!(OracleScenario::new(3, 2, 0.3).is_err());
        assert!(OracleScenario::new(3, 2, 0.5).is_ok());
    }

    #[test]
    fn degenerate_draws() {
        let mut rng = RngMode::Seeded(1).stream(0);
        for _ in 0..100 {
            assert_eq!(sim_alg1(&scn(20, 20, 1.0), &mut rng), 20);
            assert_eq!(sim_alg1(&scn(20, 0, 0.7), &mut rng), 0);
            assert_eq!(sim_alg2(&scn(20, 13, 1.0), &mut rng), 13);
            assert_eq!(sim_alg3(&scn(5, 0, 0.6), &mut rng), 0);
            assert_eq!(sim_alg4(9, 0, &mut rng), 9);
            assert_eq!(sim_alg5(9, 0, &mut rng), 9);
            let v = sim_alg4(10, 4, &mut rng);
            assert!((6..=10).contains(&v));
            let v = sim_alg5(10, 4, &mut rng);
            assert!((6..=10).contains(&v));
        }
    }

    #[test]
    fn alg2_single_element_enumeration() {
        // n = |I| = 1, p_B = 0.75: s = 1 w.p. 0.5, then the coin; Pr[1] = 0.5 + 0.25.
        let s = scn(1, 1, 0.75);
        let pmf = monte_carlo_pmf(1, 200_000, 3, Parallelism::default(), |r| sim_alg2(&s, r));
        let sigma = (0.75f64 * 0.25 / 200_000.0).sqrt();
        assert!((pmf.prob(1) - 0.75).abs() < 4.0 * sigma);
    }

    #[test]
    fn exact_alg3_single_element() {
        let t = exact_pmf_alg3(&scn(1, 1, 0.75)).unwrap();
        assert!((t.prob(1) - 0.75).abs() < 1e-15);
        assert!((t.prob(0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn exact_alg1_corners() {
        let s = scn(30, 30, 0.9);
        let t = exact_pmf_alg1(&s).unwrap();
        assert_eq!(t.support(), 0..31);
        assert!((t.prob(30) - 0.9f64.powi(30)).abs() < 1e-15);
        assert!((t.prob(0) - 0.1f64.powi(30)).abs() < 1e-40);
        assert!(exact_pmf_alg1(&scn(100, 65, 0.9)).is_err());
        assert!(exact_pmf_alg3(&scn(100, 65, 0.9)).is_err());
        assert!(exact_pmf_alg1(&scn(100, 64, 0.9)).is_ok());
    }

    #[test]
    fn exact_tables_agree_small() {
        for i in 0..=20 {
            for p in [0.5, 0.55, 0.8, 1.0] {
                let s = scn(i, i, p);
                let a = exact_pmf_alg1(&s).unwrap();
                let b = exact_pmf_alg3(&s).unwrap();
                assert!(a.tv_distance(&b) < 1e-12, "i={i} p={p}");
            }
        }
    }

    #[test]
    fn marginal_identity() {
        for k in 0..=1000 {
            let p = 0.5 + 0.5 * k as f64 / 1000.0;
            assert!((proxy_marginal(p) - p).abs() <= 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn pmf_table_checks() {
        assert!(PmfTable::new(vec![0.5, 0.4]).is_err());
        assert!(PmfTable::new(vec![1.5, -0.5]).is_err());
        let a = PmfTable::new(vec![0.5, 0.5]).unwrap();
        let b = PmfTable::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert!((a.tv_distance(&b) - 1.0).abs() < 1e-15);
        assert_eq!(a.mean(), 0.5);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,prob\n0,0.5\n1,0.5\n");
    }

    #[test]
    fn monte_carlo_is_reproducible_across_modes() {
        let s = scn(15, 10, 0.8);
        let a = monte_carlo_pmf(10, 10_001, 77, Parallelism::Sequential, |r| sim_alg2(&s, r));
        let b = monte_carlo_pmf(10, 10_001, 77, Parallelism::Parallel, |r| sim_alg2(&s, r));
        assert_eq!(a, b);
        let total: f64 = a.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alg6_degenerate() {
        let mut rng = RngMode::Seeded(2).stream(0);
        let m = vec![true, false, true, true, false];
        assert_eq!(sim_alg6(&m, 1.0, 0.0, &mut rng).unwrap(), m);
        assert!(sim_alg6(&m, 1.2, 0.0, &mut rng).is_err());
    }
}
