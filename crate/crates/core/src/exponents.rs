//! Parameter algebra: derived scaling exponents, decay-regime classification,
//! and the tail decay law `g`.
//!
//! Everything is closed-form arithmetic on the model parameters `(d, s, p, m)`
//! except the transition exponent `p_one`, which is the positive root of
//!
//! ```text
//!     (s q + d) m (q - 1) - d = 0
//! ```
//!
//! and is located by bisection on `(1, 1 + 1/m)`. The sign of `p - p_one`
//! splits the admissible range `p > p_mc` into three tail regimes:
//!
//! * superlinear (`p > p_one`):  algebraic tail `r^(-d-sp)`,
//! * critical  (`p = p_one`):  the same power dressed with a log factor,
//! * sublinear (`p_mc < p < p_one`):  fat tail `r^(-sp/(1-m(p-1)))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `p - p_one` used to classify the decay regime. Far above the
/// 1e-13 root-finder error, far below any physically meaningful parameter
/// spacing.
pub const REGIME_TOL: f64 = 1e-9;

/// Bisection stops when the bracket for `p_one` is this narrow.
pub const P_ONE_TOL: f64 = 1e-13;

/// `m (p - 1) = 1` makes the self-similar change of variables degenerate;
/// parameters this close to it are rejected.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ExponentError {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("p = {p} is at or below the critical exponent p_mc = {p_mc}; no mass-conserving self-similar regime there")]
    Regime { p: f64, p_mc: f64 },
    #[error("m(p-1) = 1 within {DEGENERATE_TOL}: the scaling algebra degenerates")]
    Degenerate,
    #[error("p = d/s is excluded (the Sobolev conjugate is unbounded there)")]
    SobolevCritical,
    #[error("decay law undefined at r = {r}: {reason}")]
    Domain { r: f64, reason: String },
}

/// Physical parameters of the equation `du/dt + (-Delta_p)^s u^m = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Spatial dimension, `>= 1`.
    pub d: u32,
    /// Fractional order, in `(0, 1)`.
    pub s: f64,
    /// Gradient nonlinearity, `> 1`.
    pub p: f64,
    /// Zero-order nonlinearity, `> 0`.
    pub m: f64,
}

impl ModelParams {
    pub fn new(d: u32, s: f64, p: f64, m: f64) -> Result<Self, ExponentError> {
        let params = ModelParams { d, s, p, m };
        params.validate()?;
        Ok(params)
    }

    /// Re-check the constructor invariants (useful after deserializing).
    pub fn validate(&self) -> Result<(), ExponentError> {
        let bad = |msg: String| Err(ExponentError::InvalidParams(msg));
        if self.d < 1 {
            return bad(format!("d = {} but the dimension must be >= 1", self.d));
        }
        if !(self.s > 0.0 && self.s < 1.0) || !self.s.is_finite() {
            return bad(format!("s = {} but the fractional order must lie in (0, 1)", self.s));
        }
        if !(self.p > 1.0) || !self.p.is_finite() {
            return bad(format!("p = {} but the gradient exponent must be > 1", self.p));
        }
        if !(self.m > 0.0) || !self.m.is_finite() {
            return bad(format!("m = {} but the zero-order exponent must be > 0", self.m));
        }
        Ok(())
    }

    /// The product `s * p`, the order of the operator.
    pub fn sp(&self) -> f64 {
        self.s * self.p
    }

    /// `m (p - 1)`, the combined nonlinearity driving the scaling algebra.
    pub fn mp1(&self) -> f64 {
        self.m * (self.p - 1.0)
    }
}

/// Tail-decay regime, determined by the sign of `p - p_one`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayRegime {
    Sublinear,
    Critical,
    Superlinear,
}

/// Every exponent the rest of the crate needs, derived once from
/// [`ModelParams`] by [`derive_exponents`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    /// Self-similar time exponent `beta = 1/(d(m(p-1)-1) + sp)`, positive on
    /// the admissible range `p > p_mc`.
    pub beta: f64,
    /// `d * beta`, the sup-norm decay rate of the fundamental solution.
    pub d_beta: f64,
    /// Critical exponent `p_mc = d(1+m)/(md+s)`; below it `beta <= 0`.
    pub p_mc: f64,
    /// Decay-transition exponent: positive root of `(sq+d)m(q-1) = d`.
    pub p_one: f64,
    /// Sobolev conjugate `(1/p - s/d)^(-1)`; `+inf` when `p > d/s`.
    #[serde(with = "extended_real")]
    pub q_s: f64,
    /// Smoothing time exponent `1/(m(p-1) - p/q_s)` (with `p/q_s := 0` at
    /// `q_s = inf`). Equals `d*beta` exactly when `p < d/s`.
    pub alpha_smooth: f64,
    /// Smoothing mass exponent `(1 - p/q_s)/(m(p-1) - p/q_s)`.
    pub gamma_smooth: f64,
    /// Magnitude `a` of the tail law `g(r) = r^(-a) (log r)^(log_power)`.
    pub tail_exponent: f64,
    /// Power on the log factor: 1 in the critical regime, 0 otherwise.
    pub log_power: f64,
    pub regime: DecayRegime,
}

/// Serialize `q_s` so that infinity survives JSON (as the string `"inf"`).
mod extended_real {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            ser.serialize_str("inf")
        } else {
            ser.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(de)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

/// Critical exponent `p_mc = d(1+m)/(md+s)`.
pub fn p_mc(params: &ModelParams) -> f64 {
    let d = params.d as f64;
    d * (1.0 + params.m) / (params.m * d + params.s)
}

/// The polynomial whose positive root is `p_one`.
fn p_one_poly(q: f64, params: &ModelParams) -> f64 {
    let d = params.d as f64;
    (params.s * q + d) * params.m * (q - 1.0) - d
}

/// Locate `p_one` by bisection. The bracket `(1, 1 + 1/m)` is guaranteed:
/// the polynomial is `-d < 0` at `q = 1` and `s(1 + 1/m) > 0` at `q = 1 + 1/m`.
pub fn p_one(params: &ModelParams) -> f64 {
    let mut lo = 1.0 + 1e-9;
    let mut hi = 1.0 + 1.0 / params.m - 1e-9;
    debug_assert!(p_one_poly(lo, params) < 0.0 && p_one_poly(hi, params) > 0.0);
    while hi - lo > P_ONE_TOL {
        let mid = 0.5 * (lo + hi);
        if p_one_poly(mid, params) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Derive the full exponent set. Rejects `p <= p_mc` (no positive `beta`),
/// `m(p-1) = 1` (degenerate scaling), and `p = d/s` (excluded Sobolev case).
pub fn derive_exponents(params: &ModelParams) -> Result<ExponentSet, ExponentError> {
    params.validate()?;
    let d = params.d as f64;
    let (s, p, m) = (params.s, params.p, params.m);

    let p_mc = p_mc(params);
    // beta's denominator is p(md+s) - d(1+m); it changes sign exactly at p_mc.
    let denom = d * (m * (p - 1.0) - 1.0) + s * p;
    if denom <= 0.0 {
        return Err(ExponentError::Regime { p, p_mc });
    }
    if (params.mp1() - 1.0).abs() < DEGENERATE_TOL {
        return Err(ExponentError::Degenerate);
    }
    if (p - d / s).abs() < 1e-12 {
        return Err(ExponentError::SobolevCritical);
    }

    let beta = 1.0 / denom;
    let q_s = if p < d / s {
        1.0 / (1.0 / p - s / d)
    } else {
        f64::INFINITY
    };
    let p_over_qs = if q_s.is_infinite() { 0.0 } else { p / q_s };
    let alpha_smooth = 1.0 / (params.mp1() - p_over_qs);
    let gamma_smooth = (1.0 - p_over_qs) * alpha_smooth;

    let p_one = p_one(params);
    let regime = if p > p_one + REGIME_TOL {
        DecayRegime::Superlinear
    } else if p < p_one - REGIME_TOL {
        DecayRegime::Sublinear
    } else {
        DecayRegime::Critical
    };
    let (tail_exponent, log_power) = match regime {
        DecayRegime::Superlinear => (d + s * p, 0.0),
        DecayRegime::Critical => (d + s * p, 1.0),
        DecayRegime::Sublinear => (s * p / (1.0 - params.mp1()), 0.0),
    };

    Ok(ExponentSet {
        beta,
        d_beta: d * beta,
        p_mc,
        p_one,
        q_s,
        alpha_smooth,
        gamma_smooth,
        tail_exponent,
        log_power,
        regime,
    })
}

/// Classify the decay regime of `params` against the transition exponent in
/// `exps`, with tolerance [`REGIME_TOL`]. Errors below `p_mc`.
pub fn classify_regime(params: &ModelParams, exps: &ExponentSet) -> Result<DecayRegime, ExponentError> {
    if params.p <= exps.p_mc {
        return Err(ExponentError::Regime { p: params.p, p_mc: exps.p_mc });
    }
    Ok(if params.p > exps.p_one + REGIME_TOL {
        DecayRegime::Superlinear
    } else if params.p < exps.p_one - REGIME_TOL {
        DecayRegime::Sublinear
    } else {
        DecayRegime::Critical
    })
}

/// The tail decay law:
///
/// ```text
///     superlinear   g(r) = r^(-d-sp)
///     critical      g(r) = r^(-d-sp) log r          (needs r > 1)
///     sublinear     g(r) = r^(-sp/(1-m(p-1)))
/// ```
pub fn decay_g(r: f64, params: &ModelParams, exps: &ExponentSet) -> Result<f64, ExponentError> {
    if !(r > 0.0) {
        return Err(ExponentError::Domain { r, reason: "g is defined for r > 0".into() });
    }
    let d = params.d as f64;
    let sp = params.sp();
    Ok(match exps.regime {
        DecayRegime::Superlinear => r.powf(-(d + sp)),
        DecayRegime::Critical => {
            if r <= 1.0 {
                return Err(ExponentError::Domain {
                    r,
                    reason: "the critical branch needs r > 1 for log positivity".into(),
                });
            }
            r.powf(-(d + sp)) * r.ln()
        }
        DecayRegime::Sublinear => r.powf(-sp / (1.0 - params.mp1())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn config_a() -> ModelParams {
        ModelParams::new(1, 0.5, 3.0, 1.0).unwrap()
    }

    fn config_b() -> ModelParams {
        ModelParams::new(1, 0.5, 1.45, 1.0).unwrap()
    }

    #[test]
    fn reference_exponents_d1() {
        let exps = derive_exponents(&config_a()).unwrap();
        // beta = 1/(1*(2-1) + 1.5) = 0.4, and p = 3 > d/s = 2 so q_s = inf
        // and alpha = 1/(m(p-1)) = 0.5.
        assert!((exps.beta - 0.4).abs() < 1e-15);
        assert!((exps.d_beta - 0.4).abs() < 1e-15);
        assert!(exps.q_s.is_infinite());
        assert!((exps.alpha_smooth - 0.5).abs() < 1e-15);
        assert!((exps.gamma_smooth - 0.5).abs() < 1e-15);
        assert_eq!(exps.regime, DecayRegime::Superlinear);
        assert!((exps.tail_exponent - 2.5).abs() < 1e-15);
        assert_eq!(exps.log_power, 0.0);
    }

    #[test]
    fn transition_exponent_matches_closed_form() {
        // For (d, s, m) = (1, 0.5, 1) the polynomial reduces to
        // q^2 + q - 4 = 0, so p_one = (-1 + sqrt(17))/2.
        let exact = (-1.0 + 17.0_f64.sqrt()) / 2.0;
        let exps = derive_exponents(&config_a()).unwrap();
        println!("p_one bisection {} vs closed form {}", exps.p_one, exact);
        assert!((exps.p_one - exact).abs() < 1e-12);
        assert!((exps.p_mc - 4.0 / 3.0).abs() < 1e-15);
        // residual of the defining quadratic at the bisection root
        assert!(p_one_poly(exps.p_one, &config_a()).abs() < 1e-12);
    }

    #[test]
    fn reference_exponents_d2() {
        let params = ModelParams::new(2, 0.5, 2.0, 2.0).unwrap();
        let exps = derive_exponents(&params).unwrap();
        // d(m(p-1)-1) + sp = 2*(2-1) + 1 = 3
        assert!((exps.beta - 1.0 / 3.0).abs() < 1e-15);
        assert!((exps.d_beta - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn regime_classification() {
        let exps = derive_exponents(&config_a()).unwrap();
        assert_eq!(classify_regime(&config_a(), &exps).unwrap(), DecayRegime::Superlinear);

        let exps_b = derive_exponents(&config_b()).unwrap();
        assert_eq!(exps_b.regime, DecayRegime::Sublinear);
        // 4/3 < 1.45 < p_one ~ 1.5616
        assert!(exps_b.p_mc < 1.45 && 1.45 < exps_b.p_one);

        let crit = ModelParams::new(1, 0.5, exps.p_one, 1.0).unwrap();
        let exps_c = derive_exponents(&crit).unwrap();
        assert_eq!(exps_c.regime, DecayRegime::Critical);
        assert_eq!(exps_c.log_power, 1.0);
    }

    #[test]
    fn smoothing_rate_equals_d_beta_below_sobolev_line() {
        // p < d/s forces p/q_s = 1 - sp/d, which collapses alpha to d*beta.
        for p in [1.40, 1.45, 1.5, 1.56, 1.8, 1.95] {
            let params = ModelParams::new(1, 0.5, p, 1.0).unwrap();
            let exps = derive_exponents(&params).unwrap();
            assert!(
                (exps.alpha_smooth - exps.d_beta).abs() <= 1e-12 * exps.d_beta.abs().max(1.0),
                "p = {p}: alpha {} vs d*beta {}",
                exps.alpha_smooth,
                exps.d_beta
            );
        }
    }

    #[test]
    fn transition_point_balances_the_two_tail_laws() {
        // At p = p_one the fat-tail exponent sp/(1-m(p-1)) equals d + sp.
        let exps = derive_exponents(&config_a()).unwrap();
        let p1 = exps.p_one;
        let params = config_a();
        let lhs = 1.0 + params.s * p1;
        let rhs = params.s * p1 / (1.0 - params.m * (p1 - 1.0));
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn decay_law_values() {
        let a = config_a();
        let ea = derive_exponents(&a).unwrap();
        assert_eq!(decay_g(1.0, &a, &ea).unwrap(), 1.0);
        assert!((decay_g(2.0, &a, &ea).unwrap() - 2f64.powf(-2.5)).abs() < 1e-15);

        let b = config_b();
        let eb = derive_exponents(&b).unwrap();
        let expected_exp = 0.725 / 0.55;
        assert!((decay_g(2.0, &b, &eb).unwrap() - 2f64.powf(-expected_exp)).abs() < 1e-15);

        let crit_p = ea.p_one;
        let c = ModelParams::new(1, 0.5, crit_p, 1.0).unwrap();
        let ec = derive_exponents(&c).unwrap();
        assert!(matches!(decay_g(0.9, &c, &ec), Err(ExponentError::Domain { .. })));
        assert!(decay_g(1.5, &c, &ec).unwrap() > 0.0);
        assert!(matches!(decay_g(-1.0, &a, &ea), Err(ExponentError::Domain { .. })));
    }

    #[test]
    fn rejects_out_of_range_parameters() {
        assert!(ModelParams::new(0, 0.5, 3.0, 1.0).is_err());
        assert!(ModelParams::new(1, 0.0, 3.0, 1.0).is_err());
        assert!(ModelParams::new(1, 1.0, 3.0, 1.0).is_err());
        assert!(ModelParams::new(1, 0.5, 1.0, 1.0).is_err());
        assert!(ModelParams::new(1, 0.5, 3.0, 0.0).is_err());

        // p below p_mc = 4/3
        let low = ModelParams::new(1, 0.5, 1.2, 1.0).unwrap();
        assert!(matches!(derive_exponents(&low), Err(ExponentError::Regime { .. })));

        // m(p-1) = 1 exactly
        let degenerate = ModelParams::new(1, 0.5, 2.0, 1.0).unwrap();
        assert!(matches!(derive_exponents(&degenerate), Err(ExponentError::Degenerate)));

        // p = d/s with the degeneracy moved out of the way (m = 2)
        let sobolev = ModelParams::new(1, 0.5, 2.0, 2.0).unwrap();
        assert!(matches!(derive_exponents(&sobolev), Err(ExponentError::SobolevCritical)));
    }

    #[test]
    fn q_s_serialization_round_trips_infinity() {
        let exps = derive_exponents(&config_a()).unwrap();
        let json = serde_json::to_string(&exps).unwrap();
        assert!(json.contains("\"q_s\":\"inf\""), "{json}");
        let back: ExponentSet = serde_json::from_str(&json).unwrap();
        assert!(back.q_s.is_infinite());

        let eb = derive_exponents(&config_b()).unwrap();
        let json_b = serde_json::to_string(&eb).unwrap();
        let back_b: ExponentSet = serde_json::from_str(&json_b).unwrap();
        assert!((back_b.q_s - eb.q_s).abs() < 1e-12);
    }

    proptest! {
        // Ordering 1 < p_mc < p_one < 1 + 1/m and the defining residuals, over
        // a broad sweep of admissible parameters.
        #[test]
        fn exponent_ordering_and_residuals(
            d in 1u32..4,
            s in 0.05f64..0.95,
            m in 0.2f64..4.0,
            t in 0.05f64..0.95,
        ) {
            let probe = ModelParams { d, s, p: 2.0, m };
            let pmc = p_mc(&probe);
            let pone = p_one(&probe);
            prop_assert!(1.0 < pmc && pmc < pone && pone < 1.0 + 1.0 / m,
                "ordering failed: p_mc {pmc}, p_one {pone}, 1+1/m {}", 1.0 + 1.0 / m);
            prop_assert!(p_one_poly(pone, &probe).abs() < 1e-12);

            // pick p strictly inside (p_mc, 1 + 1/m) and check beta > 0 plus
            // the monotonicity of the decay law, skipping the rejected slivers
            let p = pmc + t * (1.0 + 1.0 / m - pmc);
            let params = ModelParams { d, s, p, m };
            match derive_exponents(&params) {
                Ok(exps) => {
                    prop_assert!(exps.beta > 0.0);
                    let mut prev = f64::INFINITY;
                    for k in 0..12 {
                        let r = 1.05 * 1.5f64.powi(k);
                        let g = decay_g(r, &params, &exps).unwrap();
                        prop_assert!(g < prev, "g not strictly decreasing at r = {r}");
                        prev = g;
                    }
                }
                Err(ExponentError::Degenerate)
                | Err(ExponentError::SobolevCritical)
                | Err(ExponentError::Regime { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected error: {e}"),
            }
        }
    }
}
