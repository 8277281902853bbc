//! A global space-time barrier dominating every trajectory whose initial
//! datum it dominates.
//!
//! The barrier is a radially non-increasing piecewise-power profile `G`,
//! glued from a plateau, an `r^(-d)` middle band (three-piece regimes only),
//! and the regime's tail law, promoted to space-time by the similarity warp
//!
//! ```text
//!     H(x, t) = (t+1)^(-d beta) G(|x| (t+1)^(-beta)).
//! ```
//!
//! `H` stays above the solution as long as `G` is a supersolution of the
//! profile equation, `pv(G^m) - beta r^(1-d) (r^d G)' >= 0`, in the near
//! region (inside the plateau) and the far region (well into the tail). The
//! middle band needs no residual check: there `G` sits above the universal
//! `|x|^(-d)` bound that radially decreasing comparison solutions obey.
//!
//! The glue constants are matched exactly; the free constants are calibrated
//! by an enlargement loop that samples the residual on an internal radial
//! grid and moves one knob at a time (grow `C1`, shrink `R1`, grow `R2`, or
//! grow `C2`, depending on the regime and the deficient region), finishing
//! with one extra factor-2 margin step on the knob that repairs the near or
//! far constraint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exponents::{DecayRegime, ExponentSet, ModelParams};
use crate::grid::{build_domain, Domain, Field, GridError, GridMode};
use crate::kernel::{assemble_kernel, KernelError, KernelTable};
use crate::nonlocal::{apply_pv, pv_row, OddPow};
use crate::resolvent::{power_field, Trajectory};
use crate::selfsim::support_radius;

/// Relative tolerance on the glue identities between `A`, `C1`, `C2`.
pub const MATCHING_TOL: f64 = 1e-12;
/// Relative gap allowed between one-sided limits of `G` at `R1` and `R2`.
pub const CONTINUITY_TOL: f64 = 1e-10;
/// Largest relative excess `(|u| - H)/max(H, floor)` that still counts as
/// dominated.
pub const DOMINATION_TOL: f64 = 1e-3;
/// Knob moves the calibration loop may spend before giving up.
pub const MAX_SEARCH_ITERATIONS: u32 = 60;
/// Past this many iterations the constants likely absorbed grid effects
/// rather than genuine inequalities; reports should flag it.
pub const SEARCH_FLAG_ITERATIONS: u32 = 10;

/// Calibration grids. The near and far checks live on separate grids so the
/// knob schedule can drive `R1` and `R2` apart without outgrowing a uniform
/// mesh: the near grid spans `64 R1` at 512 cells (eight nodes inside the
/// plateau), the far grid spans `8 R2` at the same count.
const BUILD_GRID_CELLS: usize = 512;
const FAR_GRID_FACTOR: f64 = 8.0;
const NEAR_GRID_FACTOR: f64 = 64.0;
/// Residual samples taken per checked region.
const SAMPLES_PER_REGION: usize = 16;

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("barrier configuration: {0}")]
    Config(String),
    #[error("no admissible barrier constants after {iterations} knob moves; closest sampled deficit {deficit:.3e}")]
    SearchFailure { iterations: u32, deficit: f64 },
    #[error("radius {radius:.6} lies in the unchecked band ({lo:.6}, {hi:.6}) between the near and far regions")]
    Intermediate { radius: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// The glued profile constants. `A` is the plateau height on `[0, R1]`,
/// `C1` scales the `r^(-d)` band on `(R1, R2]` (three-piece regimes), and
/// `C2` scales the tail beyond `R2`. Sublinear barriers are two-piece:
/// `R1 = R2` and `C1` is the derived surrogate `A R1^d`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BarrierConstants {
    pub regime: DecayRegime,
    pub a: f64,
    pub c1: f64,
    pub c2: f64,
    pub r1: f64,
    pub r2: f64,
    /// Exponent on the critical tail's log factor, `1/(1 - m(p-1))`; zero in
    /// the other regimes.
    pub log_power: f64,
    /// Knob moves the calibration spent; see [`SEARCH_FLAG_ITERATIONS`].
    pub search_iterations: u32,
}

fn rel_gap(x: f64, y: f64) -> f64 {
    ((x - y) / y).abs()
}

/// Tail decay exponent of the barrier: `d + sp` for the three-piece shapes,
/// `sp/(1 - m(p-1))` below the transition.
fn tail_exponent(params: &ModelParams, regime: DecayRegime) -> f64 {
    match regime {
        DecayRegime::Sublinear => params.sp() / (1.0 - params.mp1()),
        _ => params.d as f64 + params.sp(),
    }
}

impl BarrierConstants {
    /// Build constants from the free knobs with the glue identities applied
    /// exactly. `c_free` is `C1` in the three-piece regimes and `C2` in the
    /// sublinear one (where `r1` is forced to `r2`).
    pub fn from_matching(
        regime: DecayRegime,
        c_free: f64,
        r1: f64,
        r2: f64,
        params: &ModelParams,
    ) -> Result<Self, BarrierError> {
        for (name, v) in [("c_free", c_free), ("r1", r1), ("r2", r2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(BarrierError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let d = params.d as i32;
        let sp = params.sp();
        let constants = match regime {
            DecayRegime::Superlinear => {
                if r1 > r2 {
                    return Err(BarrierError::Config(format!("r1 = {r1} exceeds r2 = {r2}")));
                }
                BarrierConstants {
                    regime,
                    a: c_free * r1.powi(-d),
                    c1: c_free,
                    c2: c_free * r2.powf(sp),
                    r1,
                    r2,
                    log_power: 0.0,
                    search_iterations: 0,
                }
            }
            DecayRegime::Critical => {
                if r1 > r2 {
                    return Err(BarrierError::Config(format!("r1 = {r1} exceeds r2 = {r2}")));
                }
                if r2 <= 1.0 {
                    return Err(BarrierError::Config(format!(
                        "the critical tail needs r2 > 1 for log positivity, got r2 = {r2}"
                    )));
                }
                let gamma = 1.0 / (1.0 - params.mp1());
                BarrierConstants {
                    regime,
                    a: c_free * r1.powi(-d),
                    c1: c_free,
                    c2: c_free * r2.powf(sp) / r2.ln().powf(gamma),
                    r1,
                    r2,
                    log_power: gamma,
                    search_iterations: 0,
                }
            }
            DecayRegime::Sublinear => {
                let gamma_tail = tail_exponent(params, regime);
                let a = c_free * r2.powf(-gamma_tail);
                BarrierConstants {
                    regime,
                    a,
                    c1: a * r2.powi(d),
                    c2: c_free,
                    r1: r2,
                    r2,
                    log_power: 0.0,
                    search_iterations: 0,
                }
            }
        };
        Ok(constants)
    }

    /// Positivity, ordering, and the glue identities to [`MATCHING_TOL`].
    pub fn validate(&self, params: &ModelParams) -> Result<(), BarrierError> {
        for (name, v) in
            [("a", self.a), ("c1", self.c1), ("c2", self.c2), ("r1", self.r1), ("r2", self.r2)]
        {
            if !(v > 0.0) || !v.is_finite() {
                return Err(BarrierError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.r1 > self.r2 {
            return Err(BarrierError::Config(format!("r1 = {} exceeds r2 = {}", self.r1, self.r2)));
        }
        let d = params.d as i32;
        let sp = params.sp();
        match self.regime {
            DecayRegime::Superlinear => {
                if rel_gap(self.a, self.c1 * self.r1.powi(-d)) > MATCHING_TOL {
                    return Err(BarrierError::Config("plateau glue a = c1 r1^(-d) is broken".into()));
                }
                if rel_gap(self.c2, self.c1 * self.r2.powf(sp)) > MATCHING_TOL {
                    return Err(BarrierError::Config("tail glue c2 = c1 r2^(sp) is broken".into()));
                }
                if self.log_power != 0.0 {
                    return Err(BarrierError::Config("log_power must be zero outside the critical regime".into()));
                }
            }
            DecayRegime::Critical => {
                if self.r2 <= 1.0 {
                    return Err(BarrierError::Config("the critical tail needs r2 > 1".into()));
                }
                let gamma = 1.0 / (1.0 - params.mp1());
                if rel_gap(self.log_power, gamma) > MATCHING_TOL {
                    return Err(BarrierError::Config("log_power must equal 1/(1 - m(p-1))".into()));
                }
                if rel_gap(self.a, self.c1 * self.r1.powi(-d)) > MATCHING_TOL {
                    return Err(BarrierError::Config("plateau glue a = c1 r1^(-d) is broken".into()));
                }
                let tail = self.c1 * self.r2.powf(sp) / self.r2.ln().powf(gamma);
                if rel_gap(self.c2, tail) > MATCHING_TOL {
                    return Err(BarrierError::Config("tail glue c2 = c1 r2^(sp)/log(r2)^gamma is broken".into()));
                }
            }
            DecayRegime::Sublinear => {
                if self.r1 != self.r2 {
                    return Err(BarrierError::Config("sublinear barriers are two-piece: r1 must equal r2".into()));
                }
                let gamma_tail = tail_exponent(params, self.regime);
                if rel_gap(self.a, self.c2 * self.r2.powf(-gamma_tail)) > MATCHING_TOL {
                    return Err(BarrierError::Config("plateau glue a = c2 r2^(-sp/(1-m(p-1))) is broken".into()));
                }
                if rel_gap(self.c1, self.a * self.r1.powi(d)) > MATCHING_TOL {
                    return Err(BarrierError::Config("the c1 surrogate a r1^d is broken".into()));
                }
                if self.log_power != 0.0 {
                    return Err(BarrierError::Config("log_power must be zero outside the critical regime".into()));
                }
            }
        }
        Ok(())
    }
}

/// A validated barrier: the constants plus the model they belong to.
#[derive(Debug, Clone)]
pub struct BarrierProfile {
    pub constants: BarrierConstants,
    pub params: ModelParams,
    pub exps: ExponentSet,
}

impl BarrierProfile {
    pub fn new(
        constants: BarrierConstants,
        params: ModelParams,
        exps: ExponentSet,
    ) -> Result<Self, BarrierError> {
        constants.validate(&params)?;
        if constants.regime != exps.regime {
            return Err(BarrierError::Config(format!(
                "constants carry regime {:?} but the exponents classify {:?}",
                constants.regime, exps.regime
            )));
        }
        Ok(BarrierProfile { constants, params, exps })
    }

    /// The profile `G(r)`, piecewise by region.
    pub fn g(&self, r: f64) -> f64 {
        let r = r.abs();
        let k = &self.constants;
        if r <= k.r1 {
            k.a
        } else if r <= k.r2 {
            k.c1 * r.powi(-(self.params.d as i32))
        } else {
            let tail = k.c2 * r.powf(-tail_exponent(&self.params, k.regime));
            match k.regime {
                DecayRegime::Critical => tail * r.ln().powf(k.log_power),
                _ => tail,
            }
        }
    }

    /// The space-time barrier `H(x, t) = (t+1)^(-d beta) G(|x| (t+1)^(-beta))`.
    pub fn h(&self, x: f64, t: f64) -> f64 {
        let beta = self.exps.beta;
        let shift = t + 1.0;
        shift.powf(-(self.params.d as f64) * beta) * self.g(x.abs() * shift.powf(-beta))
    }

    /// The transport term `beta r^(1-d) (r^d G)'(r)`, from the closed form of
    /// each branch; a centered difference would smear the kinks at `R1` and
    /// `R2` into neighboring nodes.
    pub fn transport(&self, r: f64) -> f64 {
        let r = r.abs();
        let k = &self.constants;
        let d = self.params.d as f64;
        let sp = self.params.sp();
        let beta = self.exps.beta;
        if r <= k.r1 {
            beta * d * k.a
        } else if r <= k.r2 {
            // r^d G is constant across the middle band
            0.0
        } else {
            match k.regime {
                DecayRegime::Superlinear => -beta * sp * k.c2 * r.powf(-d - sp),
                DecayRegime::Critical => {
                    let gamma = k.log_power;
                    beta * k.c2 * r.powf(-d - sp) * r.ln().powf(gamma - 1.0) * (gamma - sp * r.ln())
                }
                DecayRegime::Sublinear => {
                    let gamma_tail = tail_exponent(&self.params, k.regime);
                    beta * (d - gamma_tail) * k.c2 * r.powf(-gamma_tail)
                }
            }
        }
    }

    /// Lowest radius of the checked far region: `2 R2` above the transition,
    /// `min(2 R2, 2 e^(gamma/sp))` at it, and `R2` below it (clamped to the
    /// tail so the residual always refers to the tail branch).
    pub fn far_floor(&self) -> f64 {
        let k = &self.constants;
        match k.regime {
            DecayRegime::Superlinear => 2.0 * k.r2,
            DecayRegime::Critical => {
                (2.0 * k.r2).min(2.0 * (k.log_power / self.params.sp()).exp()).max(k.r2)
            }
            DecayRegime::Sublinear => k.r2,
        }
    }
}

/// Which band of the barrier a radius falls in, for diagnostics and CSV
/// output. The band between the plateau and the checked far region is
/// labeled `intermediate` even for two-piece barriers (where it is empty).
pub fn region_name(profile: &BarrierProfile, r: f64) -> &'static str {
    let r = r.abs();
    if r <= profile.constants.r1 {
        "near"
    } else if r < profile.far_floor() {
        "intermediate"
    } else {
        "far"
    }
}

/// What the calibration needs to know about the initial datum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InitialStats {
    pub support_radius: f64,
    pub sup_norm: f64,
    pub mass: f64,
}

impl InitialStats {
    /// Measure a compactly supported bounded datum. The zero field has no
    /// stats to measure (any positive barrier dominates it).
    pub fn from_field(u0: &Field) -> Result<Self, BarrierError> {
        let support = support_radius(u0)
            .ok_or_else(|| BarrierError::Config("the zero datum needs no barrier".into()))?;
        let sup_norm = u0.values.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
        let mass = u0
            .values
            .iter()
            .zip(u0.domain.weights())
            .map(|(&v, &w)| v.abs() * w)
            .sum::<f64>();
        let stats = InitialStats { support_radius: support, sup_norm, mass };
        stats.validate()?;
        Ok(stats)
    }

    fn validate(&self) -> Result<(), BarrierError> {
        for (name, v) in [
            ("support_radius", self.support_radius),
            ("sup_norm", self.sup_norm),
            ("mass", self.mass),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(BarrierError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Residual of the supersolution condition at every node of `table`'s grid:
/// `pv(G^m) - beta r^(1-d) (r^d G)'`. Nonnegative values mean `G` acts as a
/// supersolution there. The grid truncation replaces the true tail beyond
/// `r_max` by zero, which only enlarges the pv term of a non-increasing
/// profile; samples should stay well inside `r_max`.
pub fn residual_field(profile: &BarrierProfile, table: &KernelTable) -> Result<Field, BarrierError> {
    let dom = &table.domain;
    check_table(profile, table)?;
    let g = Field::from_fn(dom.clone(), |r| profile.g(r));
    let pv = apply_pv(table, &power_field(&g.values, profile.params.m));
    let values: Vec<f64> =
        dom.nodes().iter().zip(pv).map(|(&r, pv_i)| pv_i - profile.transport(r)).collect();
    Ok(Field::new(dom.clone(), values)?)
}

/// The same residual at the grid node nearest `z`. Errors when that node
/// falls in the unchecked band between the near and far regions, where the
/// barrier relies on the universal `|x|^(-d)` bound instead of the residual.
pub fn supersolution_residual(
    profile: &BarrierProfile,
    z: f64,
    table: &KernelTable,
) -> Result<f64, BarrierError> {
    check_table(profile, table)?;
    if !z.is_finite() {
        return Err(BarrierError::Config(format!("sample radius must be finite, got {z}")));
    }
    let dom = &table.domain;
    let i = ((z.abs() / dom.h - 0.5).round().max(0.0) as usize).min(dom.n - 1);
    let r = dom.node(i);
    let lo = profile.constants.r1;
    let hi = profile.far_floor();
    if r > lo && r < hi {
        return Err(BarrierError::Intermediate { radius: r, lo, hi });
    }
    let g = Field::from_fn(dom.clone(), |r| profile.g(r));
    let vm = power_field(&g.values, profile.params.m);
    let pow = OddPow::for_exponent(profile.params.p - 1.0);
    Ok(pv_row(table, &vm, i, pow) - profile.transport(r))
}

fn check_table(profile: &BarrierProfile, table: &KernelTable) -> Result<(), BarrierError> {
    if table.domain.mode != GridMode::Radial {
        return Err(BarrierError::Config("barrier residuals need a radial kernel table".into()));
    }
    if table.domain.d != profile.params.d || table.s != profile.params.s || table.p != profile.params.p
    {
        return Err(BarrierError::Config("kernel table was assembled for different model parameters".into()));
    }
    Ok(())
}

/// Node indices sampled in the near region: evenly across the plateau,
/// always including the outermost plateau node, where the constraint binds.
fn near_sample_indices(r1: f64, dom: &Domain) -> Result<Vec<usize>, BarrierError> {
    let count = dom.nodes().iter().take_while(|&&r| r <= r1).count();
    if count == 0 {
        return Err(BarrierError::Config(
            "no calibration nodes inside the near region; the plateau is unresolved".into(),
        ));
    }
    let stride = (count / SAMPLES_PER_REGION).max(1);
    let mut near: Vec<usize> = (0..count).step_by(stride).collect();
    if *near.last().unwrap() != count - 1 {
        near.push(count - 1);
    }
    Ok(near)
}

/// Node indices sampled in the far region: log-spaced over
/// `[far_floor, r_max/2]`, snapped to nodes.
fn far_sample_indices(profile: &BarrierProfile, dom: &Domain) -> Result<Vec<usize>, BarrierError> {
    let lo = profile.far_floor().max(dom.node(0));
    let hi = 0.5 * dom.r_max;
    if !(lo < hi) {
        return Err(BarrierError::Config(
            "the far sample window is empty; the calibration grid stops before the far region".into(),
        ));
    }
    let mut far: Vec<usize> = (0..SAMPLES_PER_REGION)
        .map(|t| {
            let r = lo * (hi / lo).powf(t as f64 / (SAMPLES_PER_REGION - 1) as f64);
            let mut i = ((r / dom.h - 0.5).round().max(0.0) as usize).min(dom.n - 1);
            while dom.node(i) < lo && i + 1 < dom.n {
                i += 1;
            }
            i
        })
        .collect();
    far.sort_unstable();
    far.dedup();
    Ok(far)
}

fn minimum_over(indices: &[usize], values: &[f64]) -> f64 {
    indices.iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min)
}

/// Far calibration grid, sized to the tail structure. The plateau may fall
/// under the first node here; its weight in the pv seen from the far region
/// scales like `r1^(1 - m(p-1))` and only the regimes with `m(p-1) < 1`
/// ever shrink it, so the unresolved peak drops out.
fn far_grid(params: &ModelParams, r2: f64) -> Result<KernelTable, BarrierError> {
    let dom = build_domain(GridMode::Radial, params.d, FAR_GRID_FACTOR * r2, BUILD_GRID_CELLS)?;
    Ok(assemble_kernel(&dom, params, 0.5 * dom.h)?)
}

/// Near calibration grid, sized to the plateau. Truncating the profile to
/// zero beyond `64 R1` perturbs the plateau pv by a relative
/// `(p-1) G(r_max)/A` times the kernel tail fraction, orders below the
/// margin the calibration demands.
fn near_grid(params: &ModelParams, r1: f64) -> Result<KernelTable, BarrierError> {
    let dom = build_domain(GridMode::Radial, params.d, NEAR_GRID_FACTOR * r1, BUILD_GRID_CELLS)?;
    Ok(assemble_kernel(&dom, params, 0.5 * dom.h)?)
}

/// The supersolution residual with the safety margin folded in. The unknown
/// constant of each proof inequality multiplies the adverse side, so a
/// factor-2 safety on that constant means the favorable part of the residual
/// must cover twice the adverse part: negative contributions count double.
fn margin_residual(pv: f64, transport: f64) -> f64 {
    let drift = -transport;
    pv.min(2.0 * pv) + drift.min(2.0 * drift)
}

/// Minimum of the margin residual over one region's samples.
fn sampled_margin(
    profile: &BarrierProfile,
    table: &KernelTable,
    near: bool,
) -> Result<f64, BarrierError> {
    let dom = &table.domain;
    let g = Field::from_fn(dom.clone(), |r| profile.g(r));
    let pv = apply_pv(table, &power_field(&g.values, profile.params.m));
    let indices = if near {
        near_sample_indices(profile.constants.r1, dom)?
    } else {
        far_sample_indices(profile, dom)?
    };
    Ok(indices
        .iter()
        .map(|&i| margin_residual(pv[i], profile.transport(dom.node(i))))
        .fold(f64::INFINITY, f64::min))
}

/// Calibrate barrier constants for a datum with the given stats.
///
/// The free knobs start from the domination and mass floors, then an
/// enlargement loop repairs whichever sampled region fails the margin
/// residual: a near deficit doubles `C1` when `m(p-1) > 1` and shrinks `R1`
/// otherwise; a far deficit doubles `R2` in the three-piece regimes and `C2`
/// in the sublinear one. Success means both regions clear with the factor-2
/// safety already folded into the acceptance, so the plain residual of the
/// returned constants holds with headroom.
pub fn build_barrier(
    params: &ModelParams,
    exps: &ExponentSet,
    stats: &InitialStats,
) -> Result<BarrierProfile, BarrierError> {
    stats.validate()?;
    let regime = exps.regime;
    let d = params.d as f64;
    let mp1 = params.mp1();
    let three_piece = regime != DecayRegime::Sublinear;
    let gamma_tail = tail_exponent(params, regime);

    // Floors keeping H(., 0) above the datum and C1 above its mass: the
    // plateau covers the sup norm out to R1 and the band covers it out to
    // the support edge.
    let c1_floor = |r1: f64| {
        stats
            .mass
            .max(stats.sup_norm * r1.powf(d))
            .max(stats.sup_norm * stats.support_radius.powf(d))
    };
    let c2_floor = |r2: f64| {
        (stats.sup_norm * stats.support_radius.max(r2).powf(gamma_tail))
            .max(stats.mass * r2.powf(gamma_tail - d))
    };

    let (mut c_free, mut r1, mut r2) = if three_piece {
        let r1 = stats.support_radius.max(1.0);
        let r2 = if regime == DecayRegime::Critical {
            // the critical tail decreases only once (d + sp) log r >= gamma;
            // start the joint beyond that radius so G comes out monotone
            let gamma = 1.0 / (1.0 - mp1);
            (2.0 * r1).max(1.05 * (gamma / (d + params.sp())).exp())
        } else {
            2.0 * r1
        };
        (c1_floor(r1), r1, r2)
    } else {
        let r2 = stats.support_radius;
        (c2_floor(r2), r2, r2)
    };

    let trace = std::env::var("FPLAB_TRACE_BARRIER").is_ok();
    let mut near_cache: Option<KernelTable> = None;
    let mut near_key = f64::NAN;
    let mut far_cache: Option<KernelTable> = None;
    let mut far_key = f64::NAN;
    let mut best_deficit = f64::NEG_INFINITY;
    for iteration in 0..=MAX_SEARCH_ITERATIONS {
        c_free = c_free.max(if three_piece { c1_floor(r1) } else { c2_floor(r2) });
        let mut constants = BarrierConstants::from_matching(regime, c_free, r1, r2, params)?;
        constants.search_iterations = iteration;
        let profile = BarrierProfile::new(constants, *params, *exps)?;

        if near_cache.is_none() || near_key != r1 {
            near_cache = Some(near_grid(params, r1)?);
            near_key = r1;
        }
        if far_cache.is_none() || far_key != r2 {
            far_cache = Some(far_grid(params, r2)?);
            far_key = r2;
        }
        let near_min = sampled_margin(&profile, near_cache.as_ref().unwrap(), true)?;
        let far_min = sampled_margin(&profile, far_cache.as_ref().unwrap(), false)?;
        best_deficit = best_deficit.max(near_min.min(far_min));
        if trace {
            eprintln!(
                "barrier iter {iteration}: r1 = {r1:.4e}, r2 = {r2:.4e}, c_free = {c_free:.4e}, near margin = {near_min:.3e}, far margin = {far_min:.3e}"
            );
        }

        if near_min >= 0.0 && far_min >= 0.0 {
            return Ok(profile);
        }
        if near_min < 0.0 {
            if three_piece && mp1 > 1.0 {
                c_free *= 2.0;
            } else {
                r1 *= 0.7;
                if !three_piece {
                    r2 = r1;
                }
            }
        } else if three_piece {
            r2 *= 2.0;
        } else {
            c_free *= 2.0;
        }
    }
    Err(BarrierError::SearchFailure { iterations: MAX_SEARCH_ITERATIONS, deficit: best_deficit })
}

/// Nodewise excess of `|u|` over `H` across a trajectory, relative to
/// `max(H, floor)`.
#[derive(Debug, Clone, Serialize)]
pub struct DominationReport {
    pub max_relative_violation: f64,
    pub worst_time: f64,
    pub worst_radius: f64,
    pub pass: bool,
}

/// Check `|u(t)| <= H(t)` at every snapshot and node. The trajectory's clock
/// must be the barrier's: its first time is the instant the datum was
/// dominated at.
pub fn check_domination(traj: &Trajectory, profile: &BarrierProfile) -> DominationReport {
    let floor = 1e-12 * profile.constants.a;
    let mut max_violation = f64::NEG_INFINITY;
    let mut worst_time = traj.times[0];
    let mut worst_radius = 0.0;
    for (snapshot, &t) in traj.snapshots.iter().zip(&traj.times) {
        for (&u, &x) in snapshot.iter().zip(traj.domain.nodes()) {
            let h = profile.h(x, t);
            let violation = (u.abs() - h) / h.max(floor);
            if violation > max_violation {
                max_violation = violation;
                worst_time = t;
                worst_radius = x.abs();
            }
        }
    }
    DominationReport {
        max_relative_violation: max_violation,
        worst_time,
        worst_radius,
        pass: max_violation <= DOMINATION_TOL,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponents::{derive_exponents, p_one};
    use crate::resolvent::{march, realize, InitialDatum, StepConfig, TimeSchedule};
    use proptest::prelude::*;

    fn config_a() -> (ModelParams, ExponentSet) {
        let params = ModelParams::new(1, 0.5, 3.0, 1.0).unwrap();
        let exps = derive_exponents(&params).unwrap();
        (params, exps)
    }

    fn config_b() -> (ModelParams, ExponentSet) {
        let params = ModelParams::new(1, 0.5, 1.45, 1.0).unwrap();
        let exps = derive_exponents(&params).unwrap();
        (params, exps)
    }

    fn config_c() -> (ModelParams, ExponentSet) {
        let probe = ModelParams::new(1, 0.5, 2.0, 1.0).unwrap();
        let params = ModelParams::new(1, 0.5, p_one(&probe), 1.0).unwrap();
        let exps = derive_exponents(&params).unwrap();
        (params, exps)
    }

    fn box_stats() -> InitialStats {
        InitialStats { support_radius: 1.0, sup_norm: 1.0, mass: 2.0 }
    }

    fn region_minima(profile: &BarrierProfile) -> (f64, f64) {
        let near_table = near_grid(&profile.params, profile.constants.r1).unwrap();
        let near_res = residual_field(profile, &near_table).unwrap();
        let near = near_sample_indices(profile.constants.r1, &near_table.domain).unwrap();
        let far_table = far_grid(&profile.params, profile.constants.r2).unwrap();
        let far_res = residual_field(profile, &far_table).unwrap();
        let far = far_sample_indices(profile, &far_table.domain).unwrap();
        (minimum_over(&near, &near_res.values), minimum_over(&far, &far_res.values))
    }

    #[test]
    fn matching_arithmetic_pins_the_glue_constants() {
        let (params, _) = config_a();
        let k = BarrierConstants::from_matching(DecayRegime::Superlinear, 3.0, 2.0, 4.0, &params).unwrap();
        println!("superlinear glue: a = {}, c2 = {}", k.a, k.c2);
        assert!(rel_gap(k.a, 1.5) < 1e-14);
        assert!(rel_gap(k.c2, 24.0) < 1e-14);
        k.validate(&params).unwrap();

        let mut broken = k;
        broken.a *= 1.0 + 1e-9;
        assert!(broken.validate(&params).is_err());
    }

    #[test]
    fn sublinear_and_critical_matching_follow_their_regimes() {
        let (pb, _) = config_b();
        let k = BarrierConstants::from_matching(DecayRegime::Sublinear, 2.0, 0.5, 0.5, &pb).unwrap();
        let gamma_tail = pb.sp() / (1.0 - pb.mp1());
        println!("sublinear glue: a = {}, c1 = {}", k.a, k.c1);
        assert!(rel_gap(k.a, 2.0 * 0.5f64.powf(-gamma_tail)) < 1e-14);
        assert_eq!(k.r1, k.r2);
        k.validate(&pb).unwrap();

        let (pc, _) = config_c();
        let k = BarrierConstants::from_matching(DecayRegime::Critical, 3.0, 1.0, 4.0, &pc).unwrap();
        let gamma = 1.0 / (1.0 - pc.mp1());
        assert!(rel_gap(k.log_power, gamma) < 1e-14);
        assert!(rel_gap(k.c2, 3.0 * 4.0f64.powf(pc.sp()) / 4.0f64.ln().powf(gamma)) < 1e-14);
        k.validate(&pc).unwrap();
        assert!(BarrierConstants::from_matching(DecayRegime::Critical, 3.0, 0.5, 0.9, &pc).is_err());
    }

    #[test]
    fn profiles_are_continuous_monotone_and_time_decaying() {
        let cases = [
            {
                let (params, exps) = config_a();
                (params, exps, BarrierConstants::from_matching(exps.regime, 3.0, 1.0, 4.0, &params).unwrap())
            },
            {
                let (params, exps) = config_b();
                (params, exps, BarrierConstants::from_matching(exps.regime, 0.05, 0.5, 0.5, &params).unwrap())
            },
            {
                let (params, exps) = config_c();
                (params, exps, BarrierConstants::from_matching(exps.regime, 2.0, 1.0, 4.0, &params).unwrap())
            },
        ];
        for (params, exps, constants) in cases {
            let profile = BarrierProfile::new(constants, params, exps).unwrap();
            for joint in [constants.r1, constants.r2] {
                let below = profile.g(joint * (1.0 - 1e-12));
                let above = profile.g(joint * (1.0 + 1e-12));
                let gap = rel_gap(below, above);
                println!("{:?} continuity at r = {joint}: gap {gap:.2e}", constants.regime);
                assert!(gap < CONTINUITY_TOL);
            }
            let mut previous = f64::INFINITY;
            for t in 0..512 {
                let r = 4.0 * constants.r2 * (t as f64 + 1.0) / 512.0;
                let value = profile.g(r);
                assert!(value <= previous * (1.0 + 1e-14), "g increased at r = {r}");
                previous = value;
            }
            // similarity continuity and time decay of the space-time barrier
            for t in [0.0, 0.37, 1.0, 3.3, 10.0] {
                let warp = (t + 1.0f64).powf(exps.beta);
                let x = constants.r2 * warp;
                let gap = rel_gap(profile.h(x * (1.0 - 1e-12), t), profile.h(x * (1.0 + 1e-12), t));
                assert!(gap < CONTINUITY_TOL, "H discontinuous across the warped joint at t = {t}");
            }
            assert_eq!(profile.h(0.7, 0.0), profile.g(0.7));
            // Time decay holds where G falls no faster than r^(-d): at fixed x
            // in the tail H grows like (t+1)^(beta sp) until the warped front
            // passes, so the samples stay at or inside the band joint.
            for &x in &[0.0, 0.5 * (constants.r1 + constants.r2), constants.r2] {
                let mut previous = f64::INFINITY;
                for k in 0..24 {
                    let value = profile.h(x, k as f64 * 0.5);
                    assert!(value <= previous * (1.0 + 1e-14), "H grew in time at x = {x}");
                    previous = value;
                }
            }
        }
    }

    #[test]
    fn build_calibrates_a_superlinear_barrier() {
        let (params, exps) = config_a();
        let profile = build_barrier(&params, &exps, &box_stats()).unwrap();
        let k = profile.constants;
        println!(
            "config A barrier: a = {:.3}, c1 = {:.3}, c2 = {:.3}, r1 = {:.3}, r2 = {:.3}, iterations = {}",
            k.a, k.c1, k.c2, k.r1, k.r2, k.search_iterations
        );
        k.validate(&params).unwrap();
        assert!(k.c1 >= box_stats().mass);
        assert!(k.search_iterations <= MAX_SEARCH_ITERATIONS);

        let (near_min, far_min) = region_minima(&profile);
        println!("sampled minima: near {near_min:.3e}, far {far_min:.3e}");
        let slack = -1e-6 * exps.beta * k.a;
        assert!(near_min >= slack);
        assert!(far_min >= slack);

        // H at t = 0 sits above the box datum
        for i in 0..=64 {
            let x = i as f64 / 64.0;
            assert!(profile.h(x, 0.0) >= 1.0);
        }
    }

    #[test]
    fn lowering_c1_flips_the_near_region() {
        let (params, exps) = config_a();
        let profile = build_barrier(&params, &exps, &box_stats()).unwrap();
        let weakened = BarrierConstants::from_matching(
            exps.regime,
            profile.constants.c1 / 1000.0,
            profile.constants.r1,
            profile.constants.r2,
            &params,
        )
        .unwrap();
        let weak_profile = BarrierProfile::new(weakened, params, exps).unwrap();
        let (near_min, _) = region_minima(&weak_profile);
        println!("near minimum after dividing c1 by 1000: {near_min:.3e}");
        assert!(near_min < 0.0);
    }

    #[test]
    fn single_sample_residual_matches_the_field_and_guards_the_gap() {
        let (params, exps) = config_a();
        let profile = build_barrier(&params, &exps, &box_stats()).unwrap();
        let table = far_grid(&params, profile.constants.r2).unwrap();
        let residual = residual_field(&profile, &table).unwrap();

        let z = 2.5 * profile.constants.r2;
        let single = supersolution_residual(&profile, z, &table).unwrap();
        let i = ((z / table.domain.h - 0.5).round()) as usize;
        assert_eq!(single, residual.values[i]);

        let gap_radius = 0.5 * (profile.constants.r1 + profile.far_floor());
        match supersolution_residual(&profile, gap_radius, &table) {
            Err(BarrierError::Intermediate { .. }) => {}
            other => panic!("expected the intermediate guard, got {other:?}"),
        }
    }

    #[test]
    fn build_calibrates_a_critical_barrier() {
        let (params, exps) = config_c();
        let profile = build_barrier(&params, &exps, &box_stats()).unwrap();
        let k = profile.constants;
        println!(
            "config C barrier: a = {:.3}, c1 = {:.3}, c2 = {:.3}, r1 = {:.4}, r2 = {:.3}, iterations = {}",
            k.a, k.c1, k.c2, k.r1, k.r2, k.search_iterations
        );
        k.validate(&params).unwrap();
        assert!(k.c1 >= box_stats().mass);
        // the knob schedule works hard here (R1 shrinks for the near side
        // while R2 doubles past the log-transport threshold), so the
        // grid-effects flag fires
        assert!(k.search_iterations > SEARCH_FLAG_ITERATIONS);
        assert!(k.search_iterations <= MAX_SEARCH_ITERATIONS);
        // beyond this radius the critical tail's transport term helps
        // instead of hurting; the build must push the checked window there
        let log_threshold = (k.log_power / params.sp()).exp();
        assert!(profile.far_floor() >= log_threshold);

        let (near_min, far_min) = region_minima(&profile);
        println!("sampled minima: near {near_min:.3e}, far {far_min:.3e}");
        assert!(near_min >= 0.0);
        assert!(far_min >= 0.0);
    }

    // The sublinear two-piece barrier pins its free constant from both
    // sides, and the plateau scaling A = C2 R2^(-sp/(1-m(p-1))) cancels R2
    // from each bound, so no radius choice widens the window. Measured on
    // the calibration grids the plain window is roughly C2 in [0.14, 0.19]
    // while the factor-2 safety moves the near cap below the far floor.
    #[test]
    fn sublinear_constraint_window_is_measured_empty_under_margin() {
        let (params, exps) = config_b();
        let probe = |c2: f64, r2: f64| {
            let constants =
                BarrierConstants::from_matching(DecayRegime::Sublinear, c2, r2, r2, &params).unwrap();
            let profile = BarrierProfile::new(constants, params, exps).unwrap();
            let near_table = near_grid(&params, r2).unwrap();
            let far_table = far_grid(&params, r2).unwrap();
            let nm = sampled_margin(&profile, &near_table, true).unwrap();
            let fm = sampled_margin(&profile, &far_table, false).unwrap();
            let (np, fp) = region_minima(&profile);
            (nm, fm, np, fp)
        };

        // plain window nonempty: this constant passes both unsafetied checks
        let (_, _, np, fp) = probe(0.167, 1.0);
        println!("plain residuals at c2 = 0.167: near {np:.3e}, far {fp:.3e}");
        assert!(np >= 0.0 && fp >= 0.0);

        // margin brackets: the near cap sits below 0.06 while the far floor
        // sits above 0.46, and both move monotonically in c2
        let (nm_low, _, _, _) = probe(0.04, 1.0);
        let (nm_cap, fm_cap, _, _) = probe(0.06, 1.0);
        let (_, fm_floor, _, _) = probe(0.46, 1.0);
        let (nm_high, fm_high, _, _) = probe(0.66, 1.0);
        println!("margin near: {nm_low:.3e} at 0.04, {nm_cap:.3e} at 0.06");
        println!("margin far: {fm_floor:.3e} at 0.46, {fm_high:.3e} at 0.66");
        assert!(nm_low >= 0.0 && nm_cap < 0.0);
        assert!(fm_floor < 0.0 && fm_high >= 0.0);
        assert!(fm_cap < 0.0 && nm_high < 0.0);

        // and the bounds do not move with r2
        let (nm, fm, _, _) = probe(0.06, 0.5);
        assert!(nm < 0.0 && fm < 0.0);
        let (nm, fm, _, _) = probe(0.66, 2.0);
        assert!(nm < 0.0 && fm >= 0.0);
    }

    #[test]
    fn sublinear_build_reports_search_failure() {
        let (params, exps) = config_b();
        match build_barrier(&params, &exps, &box_stats()) {
            Err(BarrierError::SearchFailure { iterations, deficit }) => {
                println!("sublinear box: SearchFailure after {iterations} moves, closest deficit {deficit:.3e}");
                assert_eq!(iterations, MAX_SEARCH_ITERATIONS);
                assert!(deficit < 0.0);
            }
            other => panic!("expected SearchFailure, got {other:?}"),
        }
    }

    #[test]
    fn domination_holds_for_a_marched_box() {
        let (params, exps) = config_a();
        let profile = build_barrier(&params, &exps, &box_stats()).unwrap();

        let dom = build_domain(GridMode::FullLine, 1, 16.0, 192).unwrap();
        let table = assemble_kernel(&dom, &params, 0.5 * dom.h).unwrap();
        let u0 = realize(&InitialDatum::Box { mass: 2.0, radius: 1.0 }, &dom).unwrap();
        let times = TimeSchedule::Uniform { t0: 0.0, t1: 2.0, steps: 10 }.times().unwrap();
        let traj = march(&table, params.m, &u0.values, &times, &StepConfig::default()).unwrap();

        let report = check_domination(&traj, &profile);
        println!(
            "domination: max violation {:.3e} at t = {:.3}, |x| = {:.3}",
            report.max_relative_violation, report.worst_time, report.worst_radius
        );
        assert!(report.pass);
    }

    #[test]
    fn hand_constants_dominate_a_sublinear_box() {
        // The automatic search cannot satisfy the doubled margins in the
        // sublinear regime, but generously chosen constants still dominate
        // an actual trajectory: C2 = 4 sits at four times the sup-norm
        // floor of the unit box with mass 2.
        let (params, exps) = config_b();
        let constants =
            BarrierConstants::from_matching(DecayRegime::Sublinear, 4.0, 1.0, 1.0, &params)
                .unwrap();
        let profile = BarrierProfile::new(constants, params, exps).unwrap();

        let dom = build_domain(GridMode::FullLine, 1, 16.0, 128).unwrap();
        let table = assemble_kernel(&dom, &params, 0.5 * dom.h).unwrap();
        let u0 = realize(&InitialDatum::Box { mass: 2.0, radius: 1.0 }, &dom).unwrap();
        let times = TimeSchedule::Uniform { t0: 0.0, t1: 1.5, steps: 8 }.times().unwrap();
        let traj = march(&table, params.m, &u0.values, &times, &StepConfig::default()).unwrap();

        let report = check_domination(&traj, &profile);
        println!(
            "sublinear domination: max violation {:.3e} at t = {:.3}, |x| = {:.3}",
            report.max_relative_violation, report.worst_time, report.worst_radius
        );
        assert!(report.pass);
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

        // Any matched constants glue continuously and give a nodewise
        // non-increasing profile. The critical joint is kept beyond the
        // radius where (d + sp) log r >= gamma, the point past which the
        // logarithmic tail actually decreases.
        #[test]
        fn matched_profiles_are_glued_and_non_increasing(
            pick in 0usize..3,
            c_free in 0.05f64..20.0,
            r1 in 0.1f64..4.0,
            rfac in 1.5f64..8.0,
        ) {
            let (params, exps) = match pick {
                0 => config_a(),
                1 => config_b(),
                _ => config_c(),
            };
            let (r1, r2) = match exps.regime {
                DecayRegime::Sublinear => (r1, r1),
                DecayRegime::Critical => {
                    let gamma = 1.0 / (1.0 - params.mp1());
                    let floor = (gamma / (params.d as f64 + params.sp())).exp();
                    let r2 = (r1 * rfac).max(1.05 * floor);
                    (r1.min(r2), r2)
                }
                DecayRegime::Superlinear => (r1, r1 * rfac),
            };
            let constants =
                BarrierConstants::from_matching(exps.regime, c_free, r1, r2, &params).unwrap();
            let profile = BarrierProfile::new(constants, params, exps).unwrap();

            for joint in [r1, r2] {
                let below = profile.g(joint * (1.0 - 1e-12));
                let above = profile.g(joint * (1.0 + 1e-12));
                prop_assert!(rel_gap(below, above) < CONTINUITY_TOL);
            }

            let mut previous = f64::INFINITY;
            for k in 1..=256 {
                let r = 6.0 * r2 * k as f64 / 256.0;
                let value = profile.g(r);
                prop_assert!(value <= previous * (1.0 + 1e-13));
                previous = value;
            }
        }
    }
}

