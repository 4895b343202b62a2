//! Closed-form privacy and utility guarantees.
//!
//! Receiver side: subsampling at rate `p_B` gives `(eps_B, delta_B)`-DP for
//! the receiver's membership once the true intersection is large enough.
//! Sender side: randomized response with `(p_A, q)` gives `eps_A`-DP when the
//! pair lies in the feasible region, and the utility-optimal pair sits on the
//! boundary `p_A = e^eps_A * q`.
//!
//! All logarithms are natural.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccountantError {
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error(
        "intersection too small for a DP guarantee: |I| = {size} but must exceed {lower_bound}"
    )]
    IntersectionTooSmall { size: u64, lower_bound: u64 },
}

fn check_receiver_domain(p_b: f64, delta_b: f64) -> Result<(), AccountantError> {
    if !(0.5..1.0).contains(&p_b) {
        return Err(AccountantError::Domain(format!(
            "p_B = {p_b} must lie in [0.5, 1)"
        )));
    }
    if !(delta_b > 0.0 && delta_b < 1.0) {
        return Err(AccountantError::Domain(format!(
            "delta_B = {delta_b} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// Real-valued minimum intersection size for the receiver bound.
pub fn intersection_lower_bound_real(p_b: f64, delta_b: f64) -> Result<f64, AccountantError> {
    check_receiver_domain(p_b, delta_b)?;
    let half_log2 = 0.5 * (2.0 / delta_b).ln();
    let log4 = (4.0 / delta_b).ln();
    let gap = 1.0 - p_b;
    let root = half_log2.sqrt() + (half_log2 + 16.0 * gap * log4).sqrt();
    Ok(root * root / (16.0 * gap * gap))
}

/// Smallest-integer form of [`intersection_lower_bound_real`] (its ceiling).
/// The receiver guarantee applies to intersections strictly larger than this.
pub fn intersection_lower_bound(p_b: f64, delta_b: f64) -> Result<u64, AccountantError> {
    Ok(intersection_lower_bound_real(p_b, delta_b)?.ceil() as u64)
}

/// The effective sample count `t = (1 - p_B)|I| - sqrt(|I|/8 * log(2/delta_B))`.
pub fn effective_count(intersection_size: f64, p_b: f64, delta_b: f64) -> f64 {
    (1.0 - p_b) * intersection_size - (intersection_size / 8.0 * (2.0 / delta_b).ln()).sqrt()
}

/// `eps_B` as a function of `t`; finite only for `t > log(4/delta_B)`.
pub fn epsilon_from_count(t: f64, delta_b: f64) -> f64 {
    let s = (t * (4.0 / delta_b).ln()).sqrt();
    (2.0 * s + 1.0) / (t - s)
}

/// Which intersection size the receiver bound is evaluated at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundMode {
    /// The realized `|I|`.
    Actual,
    /// A-priori worst case: the smallest admissible size, one above
    /// [`intersection_lower_bound`]. By monotonicity this dominates every
    /// admissible `|I|`.
    APriori,
}

/// Receiver-side guarantee.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReceiverBudget {
    pub eps_b: f64,
    pub delta_b: f64,
    pub intersection_size: u64,
    pub p_b: f64,
    pub t: f64,
    pub lower_bound: u64,
}

/// `eps_B` for a realized intersection of `intersection_size` elements.
pub fn receiver_epsilon(
    intersection_size: u64,
    p_b: f64,
    delta_b: f64,
) -> Result<ReceiverBudget, AccountantError> {
    let lower_bound = intersection_lower_bound(p_b, delta_b)?;
    if intersection_size <= lower_bound {
        return Err(AccountantError::IntersectionTooSmall {
            size: intersection_size,
            lower_bound,
        });
    }
    let t = effective_count(intersection_size as f64, p_b, delta_b);
    Ok(ReceiverBudget {
        eps_b: epsilon_from_count(t, delta_b),
        delta_b,
        intersection_size,
        p_b,
        t,
        lower_bound,
    })
}

pub fn receiver_epsilon_with(
    mode: BoundMode,
    intersection_size: u64,
    p_b: f64,
    delta_b: f64,
) -> Result<ReceiverBudget, AccountantError> {
    match mode {
        BoundMode::Actual => receiver_epsilon(intersection_size, p_b, delta_b),
        BoundMode::APriori => {
            receiver_epsilon(intersection_lower_bound(p_b, delta_b)? + 1, p_b, delta_b)
        }
    }
}

// Relative slack for the region's inequalities so boundary points computed in
// floating point (the optimum lies exactly on p_A = e^eps q) are accepted.
const REGION_SLACK: f64 = 1e-12;

/// Whether `(p_a, q)` lies in the feasible region for `eps_a`-DP.
pub fn validate_region(p_a: f64, q: f64, eps_a: f64) -> bool {
    if !(p_a.is_finite() && q.is_finite() && eps_a.is_finite()) {
        return false;
    }
    let unit = |x: f64| (0.0..=1.0).contains(&x);
    let e = eps_a.exp();
    let le = |lhs: f64, rhs: f64| lhs <= rhs + REGION_SLACK * rhs.abs();
    unit(p_a) && unit(q) && p_a >= q && le(p_a, e * q) && le(1.0 - q, e * p_a)
}

/// Utility-optimal `(p_A, q)` for `eps_a`: `(e^eps/(1+e^eps), 1/(1+e^eps))`.
pub fn optimal_pq(eps_a: f64) -> (f64, f64) {
    // Written via exp(-eps) so large budgets do not overflow to inf/inf.
    let inv = (-eps_a).exp();
    (1.0 / (1.0 + inv), inv / (1.0 + inv))
}

/// Sender-side guarantee.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SenderBudget {
    pub eps_a: f64,
    pub p_a: f64,
    pub q: f64,
}

impl SenderBudget {
    pub fn new(eps_a: f64, p_a: f64, q: f64) -> Result<Self, AccountantError> {
        if !validate_region(p_a, q, eps_a) {
            return Err(AccountantError::Domain(format!(
                "(p_A, q) = ({p_a}, {q}) is outside the region for eps_A = {eps_a}"
            )));
        }
        Ok(SenderBudget { eps_a, p_a, q })
    }

    pub fn optimal(eps_a: f64) -> Result<Self, AccountantError> {
        if eps_a.is_nan() || eps_a < 0.0 {
            return Err(AccountantError::Domain(format!(
                "eps_A = {eps_a} must be >= 0"
            )));
        }
        let (p_a, q) = optimal_pq(eps_a);
        Self::new(eps_a, p_a, q)
    }
}

/// Expected precision and recall of the released intersection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UtilityPrediction {
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at the optimal `(p_A, q)` given the realized sizes of
/// `X ∩ Y_sub` and `Y_sub \ X`.
pub fn predict_utility(
    intersection_sub_size: u64,
    complement_size: u64,
    eps_a: f64,
) -> Result<UtilityPrediction, AccountantError> {
    if intersection_sub_size == 0 && complement_size == 0 {
        return Err(AccountantError::Domain("both set sizes are zero".into()));
    }
    if eps_a.is_nan() || eps_a < 0.0 {
        return Err(AccountantError::Domain(format!(
            "eps_A = {eps_a} must be >= 0"
        )));
    }
    let i = intersection_sub_size as f64;
    let precision = i / ((-eps_a).exp() * complement_size as f64 + i);
    let (recall, _) = optimal_pq(eps_a);
    Ok(UtilityPrediction { precision, recall })
}

/// Flat summary of every guarantee for one planned run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanReport {
    pub eps_a: f64,
    pub p_a: f64,
    pub q: f64,
    pub p_b: f64,
    pub delta_b: f64,
    pub intersection_lower_bound: u64,
    pub intersection_size: Option<u64>,
    pub eps_b: Option<f64>,
    pub eps_b_a_priori: f64,
    pub recall: f64,
    pub precision: Option<f64>,
}

impl PlanReport {
    /// `intersection_size` is an expected or known `|I|`; when present the
    /// realized-size bound and an expected precision (assuming subsampled
    /// sizes `p_B|I|` and `p_B * complement`) are included.
    pub fn build(
        eps_a: f64,
        p_b: f64,
        delta_b: f64,
        intersection_size: Option<u64>,
        complement_size: Option<u64>,
    ) -> Result<Self, AccountantError> {
        let sender = SenderBudget::optimal(eps_a)?;
        let lower_bound = intersection_lower_bound(p_b, delta_b)?;
        let a_priori = receiver_epsilon_with(BoundMode::APriori, 0, p_b, delta_b)?;
        let eps_b = intersection_size
            .map(|i| receiver_epsilon(i, p_b, delta_b).map(|b| b.eps_b))
            .transpose()?;
        let precision = match (intersection_size, complement_size) {
            (Some(i), Some(c)) if i + c > 0 => {
                let i_sub = (i as f64 * p_b).round() as u64;
                let c_sub = (c as f64 * p_b).round() as u64;
                Some(predict_utility(i_sub, c_sub, eps_a)?.precision)
            }
            _ => None,
        };
        Ok(PlanReport {
            eps_a,
            p_a: sender.p_a,
            q: sender.q,
            p_b,
            delta_b,
            intersection_lower_bound: lower_bound,
            intersection_size,
            eps_b,
            eps_b_a_priori: a_priori.eps_b,
            recall: optimal_pq(eps_a).0,
            precision,
        })
    }

    /// `key=value` lines; absent optional values are omitted.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("plan report serializes");
        let mut out = String::new();
        if let serde_json::Value::Object(map) = value {
            for (k, v) in map {
                if !v.is_null() {
                    out.push_str(&format!("{k}={v}\n"));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn receiver_reference_point() {
        // |I| = 1e4, p_B = 0.9, delta_B = 1e-10: t ~ 827.8, sqrt(t log(4/delta)) ~ 142.2.
        let b = receiver_epsilon(10_000, 0.9, 1e-10).unwrap();
        assert!((b.t - 827.8).abs() < 0.05, "{}", b.t);
        assert!((b.eps_b - 0.416).abs() < 5e-4, "{}", b.eps_b);
    }

    #[test]
    fn lower_bound_domain_and_monotonicity() {
        assert!(intersection_lower_bound(1.0, 1e-6).is_err());
        assert!(intersection_lower_bound(0.4, 1e-6).is_err());
        assert!(intersection_lower_bound(0.9, 0.0).is_err());
        assert!(intersection_lower_bound(0.9, 1.0).is_err());
        let a = intersection_lower_bound_real(0.9, 1e-6).unwrap();
        let b = intersection_lower_bound_real(0.9, 1e-10).unwrap();
        assert!(b > a);
        let c = intersection_lower_bound_real(0.95, 1e-10).unwrap();
        assert!(c > b);
    }

    #[test]
    fn too_small_intersection_errors() {
        let lb = intersection_lower_bound(0.9, 1e-10).unwrap();
        assert_eq!(
            receiver_epsilon(lb, 0.9, 1e-10),
            Err(AccountantError::IntersectionTooSmall {
                size: lb,
                lower_bound: lb
            })
        );
        let just_above = receiver_epsilon(lb + 1, 0.9, 1e-10).unwrap();
        assert!(just_above.eps_b.is_finite() && just_above.eps_b > 0.0);
        assert!(just_above.t > (4.0f64 / 1e-10).ln());
    }

    #[test]
    fn a_priori_bound_dominates() {
        let worst = receiver_epsilon_with(BoundMode::APriori, 0, 0.9, 1e-6).unwrap();
        let actual = receiver_epsilon(50_000, 0.9, 1e-6).unwrap();
        assert!(worst.eps_b > actual.eps_b);
        assert_eq!(worst.intersection_size, worst.lower_bound + 1);
    }

    #[test]
    fn region_examples() {
        let (p, q) = optimal_pq(3.0);
        assert!(validate_region(p, q, 3.0));
        assert!(rel(p / q, 3f64.exp()) < 1e-9);
        assert!(!validate_region(1.0, 0.0, 3.0));
        assert!(!validate_region(1.0, 0.0, 700.0));
        assert!(validate_region(0.5, 0.5, 0.0));
        assert!(!validate_region(0.4, 0.6, 5.0));
        assert!(!validate_region(f64::NAN, 0.5, 1.0));
    }

    #[test]
    fn optimal_pairs() {
        assert_eq!(optimal_pq(0.0), (0.5, 0.5));
        let (p, q) = optimal_pq(3.0);
        assert!((p - 0.952_574_126_822_433).abs() < 1e-12);
        assert!((q - 0.047_425_873_177_567).abs() < 1e-12);
        let (p, q) = optimal_pq(1000.0);
        assert!(p == 1.0 && q >= 0.0);
        for i in 1..=100 {
            let eps = i as f64 * 0.1;
            let (p, q) = optimal_pq(eps);
            assert!(validate_region(p, q, eps));
            assert!(rel(p, eps.exp() * q) < 1e-12);
            assert!((p + q - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn utility_examples() {
        let u = predict_utility(7000, 3000, 3.0).unwrap();
        let expect = 7000.0 / (3000.0 * (-3f64).exp() + 7000.0);
        assert!((u.precision - expect).abs() < 1e-15);
        assert!((u.precision - 0.979_108_454_473).abs() < 1e-12);
        assert!((u.recall - 0.952574).abs() < 1e-6);
        let lim = predict_utility(10, 10, 60.0).unwrap();
        assert!(lim.precision > 1.0 - 1e-12 && lim.recall > 1.0 - 1e-12);
        assert!(predict_utility(0, 0, 1.0).is_err());
    }

    #[test]
    fn plan_report_renders() {
        let r = PlanReport::build(3.0, 0.9, 1e-10, Some(10_000), Some(3000)).unwrap();
        assert_eq!(
            r.eps_b,
            Some(receiver_epsilon(10_000, 0.9, 1e-10).unwrap().eps_b)
        );
        let text = r.to_text();
        assert!(text.contains("eps_a=3.0\n"));
        assert!(text.contains("intersection_lower_bound="));
        let parsed: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(parsed["recall"].as_f64().unwrap(), optimal_pq(3.0).0);
        let bare = PlanReport::build(1.0, 0.8, 1e-6, None, None).unwrap();
        assert!(!bare.to_text().contains("eps_b="));
    }
}
