//! Scaling transforms, self-similar variables, and profile extraction.
//!
//! The equation is invariant under the two-parameter family of rescalings
//! that trade space, time, and amplitude. Two one-parameter slices matter
//! here: the mass-preserving dilation
//!
//! ```text
//!     (T_k u)(x) = k^d u(k x),        t -> k^(d(m(p-1)-1)+sp) t,
//! ```
//!
//! and the mass scaling `u -> M u` with `t -> M^(m(p-1)-1) t`. Passing to
//! similarity variables `V(y) = t^(d beta) u(y t^beta)` freezes the dilation,
//! and a stationary point `F` of that flow solves the profile equation
//!
//! ```text
//!     pv(F^m)(r) = beta r^(1-d) (r^d F)'(r).
//! ```
//!
//! `extract_barenblatt` hunts for `F` the way the uniqueness argument does:
//! evolve a sequence of concentrating data `k^d u0(k x)` of fixed mass to a
//! fixed time, rescale each endpoint to similarity variables, and demand
//! that successive profiles form a Cauchy sequence in L1. The last profile
//! is the numerical source-solution profile of the chosen mass.

use std::sync::Arc;

use thiserror::Error;

use crate::exponents::{ExponentSet, ModelParams};
use crate::grid::{mass, Domain, Field, GridError, GridMode};
use crate::kernel::{assemble_kernel, KernelError, KernelTable};
use crate::nonlocal::apply_pv;
use crate::resolvent::{march, power_field, realize, InitialDatum, SolverError, StepConfig, TimeSchedule};

/// Fewest cells the (compressed) support of a resampled field may span.
pub const MIN_SUPPORT_CELLS: usize = 8;
/// How far a profile may drift from unit mass before mass-rescaling refuses
/// to treat it as the unit-mass profile.
pub const UNIT_MASS_TOL: f64 = 0.02;

#[derive(Debug, Error)]
pub enum SelfsimError {
    #[error("selfsim configuration: {0}")]
    Config(String),
    #[error("compressed support spans {cells} cells; at least {MIN_SUPPORT_CELLS} are needed")]
    Resolution { cells: usize },
    #[error("profile operations need a radial domain")]
    Domain,
    #[error("profile mass {mass} is not within {UNIT_MASS_TOL} of 1")]
    Mass { mass: f64 },
    #[error("profile distances stopped decreasing at schedule index {index}: {previous:.3e} -> {current:.3e}")]
    NonConvergence { index: usize, previous: f64, current: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// A field in the similarity variable `y = x t^(-beta)`, with the scaling
/// context it was produced under.
#[derive(Debug, Clone)]
pub struct Profile {
    pub field: Field,
    /// Discrete mass of `field` on the profile grid.
    pub mass: f64,
    /// The time the source snapshot was taken at.
    pub source_time: f64,
    pub params: ModelParams,
    pub exps: ExponentSet,
}

/// Outer radius of the smallest cell-aligned ball containing every nonzero
/// node; `None` for the zero field.
pub(crate) fn support_radius(u: &Field) -> Option<f64> {
    let half = 0.5 * u.domain.h;
    u.domain
        .nodes()
        .iter()
        .zip(&u.values)
        .filter(|(_, &v)| v != 0.0)
        .map(|(&x, _)| x.abs() + half)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
}

/// Cells of `domain` whose centers fall inside the ball of radius `r`.
fn cells_inside(domain: &Domain, r: f64) -> usize {
    domain.nodes().iter().filter(|&&x| x.abs() < r).count()
}

/// The time dilation factor accompanying `T_k`.
pub fn time_dilation_tk(k: f64, params: &ModelParams) -> f64 {
    k.powf(params.d as f64 * (params.mp1() - 1.0) + params.sp())
}

/// Mass-preserving dilation `(T_k u)(x) = k^d u(k x)`, resampled by linear
/// interpolation. Returns the transformed field and the factor by which
/// times dilate.
pub fn transform_tk(u: &Field, k: f64, params: &ModelParams) -> Result<(Field, f64), SelfsimError> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(SelfsimError::Config(format!("dilation parameter must be positive, got k = {k}")));
    }
    let factor = time_dilation_tk(k, params);
    if k == 1.0 {
        return Ok((u.clone(), factor));
    }
    if let Some(rs) = support_radius(u) {
        let cells = cells_inside(&u.domain, rs / k);
        if cells < MIN_SUPPORT_CELLS {
            return Err(SelfsimError::Resolution { cells });
        }
    }
    let kd = (k as f64).powi(u.domain.d as i32);
    let values: Vec<f64> = u.domain.nodes().iter().map(|&x| kd * u.interpolate(k * x)).collect();
    Ok((Field::new(u.domain.clone(), values)?, factor))
}

/// Mass scaling `u -> M u`; times map by `M^(m(p-1)-1)`.
pub fn transform_mass(u: &Field, m_factor: f64, params: &ModelParams) -> Result<(Field, f64), SelfsimError> {
    if !(m_factor > 0.0) || !m_factor.is_finite() {
        return Err(SelfsimError::Config(format!("mass factor must be positive, got M = {m_factor}")));
    }
    let factor = m_factor.powf(params.mp1() - 1.0);
    let values: Vec<f64> = u.values.iter().map(|&v| m_factor * v).collect();
    Ok((Field::new(u.domain.clone(), values)?, factor))
}

/// Rescale a snapshot at time `t` to similarity variables:
/// `V(y) = t^(d beta) u(y t^beta)`, sampled on `profile_domain`.
pub fn to_profile(
    u: &Field,
    t: f64,
    params: &ModelParams,
    exps: &ExponentSet,
    profile_domain: &Arc<Domain>,
) -> Result<Profile, SelfsimError> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(SelfsimError::Config(format!("profile time must be positive, got t = {t}")));
    }
    if profile_domain.mode != GridMode::Radial {
        return Err(SelfsimError::Domain);
    }
    let field = if t == 1.0 && Arc::ptr_eq(&u.domain, profile_domain) {
        u.clone()
    } else {
        let beta = exps.beta;
        let amp = t.powf(params.d as f64 * beta);
        let stretch = t.powf(beta);
        if let Some(rs) = support_radius(u) {
            let cells = cells_inside(profile_domain, rs / stretch);
            if cells < MIN_SUPPORT_CELLS {
                return Err(SelfsimError::Resolution { cells });
            }
        }
        let values: Vec<f64> =
            profile_domain.nodes().iter().map(|&y| amp * u.interpolate(y * stretch)).collect();
        Field::new(profile_domain.clone(), values)?
    };
    let mass = mass(&field);
    Ok(Profile { field, mass, source_time: t, params: *params, exps: *exps })
}

/// Residual of the stationary profile equation,
/// `pv(F^m) - beta r^(1-d) D_r(r^d F)`, with `D_r` the second-order centered
/// difference. The ghost value below `r = 0` uses the parity of `r^d F`
/// (`F` is even), and the field vanishes beyond the truncation radius.
pub fn profile_residual(profile: &Profile, table: &KernelTable) -> Result<Field, SelfsimError> {
    let dom = &profile.field.domain;
    if dom.mode != GridMode::Radial {
        return Err(SelfsimError::Domain);
    }
    if !Arc::ptr_eq(&table.domain, dom)
        && (table.domain.mode != dom.mode
            || table.domain.d != dom.d
            || table.domain.n != dom.n
            || table.domain.r_max != dom.r_max)
    {
        return Err(SelfsimError::Config("kernel table was assembled on a different grid".into()));
    }
    let n = dom.n;
    let h = dom.h;
    let d = dom.d as i32;
    let beta = profile.exps.beta;
    let pv = apply_pv(table, &power_field(&profile.field.values, profile.params.m));

    let g = |i: usize| dom.node(i).powi(d) * profile.field.values[i];
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let below = if i == 0 {
            // r_0 = h/2 mirrors to -h/2: (r^d F) picks up the sign (-1)^d
            if d % 2 == 0 { g(0) } else { -g(0) }
        } else {
            g(i - 1)
        };
        let above = if i + 1 == n { 0.0 } else { g(i + 1) };
        let dr = (above - below) / (2.0 * h);
        let r = dom.node(i);
        values.push(pv[i] - beta * r.powi(1 - d) * dr);
    }
    Ok(Field::new(dom.clone(), values)?)
}

/// Knobs of the Barenblatt extraction. `k_schedule` lists the concentration
/// parameters (ascending, each `>= 1`); every run marches from `t = 0`
/// through a geometric grid on `[t0, t_star]`.
#[derive(Debug, Clone)]
pub struct ExtractionConfig {
    pub mass: f64,
    pub k_schedule: Vec<f64>,
    pub t0: f64,
    pub t_star: f64,
    pub steps: usize,
    pub step: StepConfig,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            mass: 1.0,
            k_schedule: vec![1.0, 2.0, 4.0],
            t0: 1e-3,
            t_star: 1.0,
            steps: 96,
            step: StepConfig::default(),
        }
    }
}

/// Result of an extraction: the final profile and the L1 distances between
/// consecutive profiles along the schedule.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub profile: Profile,
    pub distances: Vec<f64>,
}

/// Weighted L1 distance between two fields on a shared grid.
pub fn l1_distance(a: &Field, b: &Field) -> f64 {
    a.domain
        .weights()
        .iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(&w, (&x, &y))| w * (x - y).abs())
        .sum()
}

/// Evolve concentrating data of fixed mass to `t_star`, rescale each run to
/// similarity variables, and require the profiles to approach each other
/// monotonically in L1. The schedule runs sequentially; the operator and
/// solver work inside each run is already row-parallel.
pub fn extract_barenblatt(
    params: &ModelParams,
    exps: &ExponentSet,
    domain: &Arc<Domain>,
    profile_domain: &Arc<Domain>,
    cfg: &ExtractionConfig,
) -> Result<Extraction, SelfsimError> {
    if params.m < 1.0 {
        return Err(SelfsimError::Config(format!("extraction assumes m >= 1, got m = {}", params.m)));
    }
    if params.p <= exps.p_mc {
        return Err(SelfsimError::Config(format!(
            "extraction needs the mass-conserving range p > p_mc = {}, got p = {}",
            exps.p_mc, params.p
        )));
    }
    if cfg.k_schedule.is_empty() {
        return Err(SelfsimError::Config("k_schedule must not be empty".into()));
    }
    if cfg.k_schedule.iter().any(|&k| !(k >= 1.0) || !k.is_finite()) {
        return Err(SelfsimError::Config("every k in the schedule must be finite and >= 1".into()));
    }
    if cfg.k_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SelfsimError::Config("k_schedule must be strictly increasing".into()));
    }
    if !(cfg.t0 > 0.0 && cfg.t_star > cfg.t0) || cfg.steps == 0 {
        return Err(SelfsimError::Config(format!(
            "need 0 < t0 < t_star and steps >= 1, got t0 = {}, t_star = {}, steps = {}",
            cfg.t0, cfg.t_star, cfg.steps
        )));
    }

    let table = assemble_kernel(domain, params, 0.5 * domain.h)?;
    let mut times = vec![0.0];
    times.extend(TimeSchedule::Geometric { t0: cfg.t0, t1: cfg.t_star, steps: cfg.steps }.times()?);

    let mut profiles: Vec<Profile> = Vec::with_capacity(cfg.k_schedule.len());
    for &k in &cfg.k_schedule {
        let cells = cells_inside(domain, 1.0 / k);
        if cells < MIN_SUPPORT_CELLS {
            return Err(SelfsimError::Resolution { cells });
        }
        let u0 = realize(&InitialDatum::NascentDelta { mass: cfg.mass, radius: 1.0, k }, domain)?;
        let traj = march(&table, params.m, &u0.values, &times, &cfg.step)?;
        let end = Field::new(domain.clone(), traj.last().to_vec())?;
        profiles.push(to_profile(&end, cfg.t_star, params, exps, profile_domain)?);
    }

    let distances: Vec<f64> = profiles
        .windows(2)
        .map(|pair| l1_distance(&pair[0].field, &pair[1].field))
        .collect();
    for (index, pair) in distances.windows(2).enumerate() {
        if pair[1] > pair[0] {
            return Err(SelfsimError::NonConvergence {
                index: index + 1,
                previous: pair[0],
                current: pair[1],
            });
        }
    }

    let profile = profiles.pop().expect("schedule is nonempty");
    Ok(Extraction { profile, distances })
}

/// Produce the profile of mass `M` from the unit-mass profile:
/// `F(z; M) = M^(sp beta) F1(M^(-(m(p-1)-1) beta) z)`. The two exponents
/// combine to `beta (sp + d (m(p-1) - 1)) = 1`, so the mass scales by
/// exactly `M` in the continuum.
pub fn rescale_profile_mass(profile: &Profile, m_target: f64) -> Result<Profile, SelfsimError> {
    if !(m_target > 0.0) || !m_target.is_finite() {
        return Err(SelfsimError::Config(format!("target mass must be positive, got {m_target}")));
    }
    if (profile.mass - 1.0).abs() > UNIT_MASS_TOL {
        return Err(SelfsimError::Mass { mass: profile.mass });
    }
    if m_target == 1.0 {
        return Ok(profile.clone());
    }
    let beta = profile.exps.beta;
    let amp = m_target.powf(profile.params.sp() * beta);
    let shrink = m_target.powf(-(profile.params.mp1() - 1.0) * beta);
    if let Some(rs) = support_radius(&profile.field) {
        let cells = cells_inside(&profile.field.domain, rs / shrink);
        if cells < MIN_SUPPORT_CELLS {
            return Err(SelfsimError::Resolution { cells });
        }
    }
    let dom = &profile.field.domain;
    let values: Vec<f64> = dom.nodes().iter().map(|&z| amp * profile.field.interpolate(shrink * z)).collect();
    let field = Field::new(dom.clone(), values)?;
    let mass = mass(&field);
    Ok(Profile { field, mass, source_time: profile.source_time, params: profile.params, exps: profile.exps })
}
