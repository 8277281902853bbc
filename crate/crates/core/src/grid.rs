//! Cell-centered uniform grids, the two truncation geometries, and the
//! weighted sums (mass, Lq norms) built on them.
//!
//! Two modes share one representation:
//!
//! * `FullLine` (d = 1 only): nodes at `-R + (i + 1/2) h` with `h = 2R/n`,
//!   each cell weight `h`;
//! * `Radial` (any d): nodes at `r_i = (i + 1/2) h` with `h = R/n`, weight
//!   `omega_d r_i^(d-1) h` so that sums approximate integrals over the ball
//!   of radius `R` in `R^d`.
//!
//! Fields are plain value vectors tied to a shared domain; everything is
//! implicitly zero outside the truncation radius.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("field has {got} values but the domain has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("Lq norms need q >= 1 (or infinity), got q = {0}")]
    BadNormOrder(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    FullLine,
    Radial,
}

/// Surface measure of the unit sphere `S^(d-1)` in `R^d`: 2, 2*pi, 4*pi, ...
/// via the recurrence `omega_(d+2) = 2 pi omega_d / d`.
pub fn sphere_measure(d: u32) -> f64 {
    assert!(d >= 1, "sphere_measure needs d >= 1");
    let mut pair = [2.0, 2.0 * std::f64::consts::PI]; // omega_1, omega_2
    let mut k = 1u32;
    while k + 2 <= d {
        let idx = ((k + 1) % 2) as usize; // slot holding omega_k
        pair[idx] = 2.0 * std::f64::consts::PI * pair[idx] / k as f64;
        k += 1;
    }
    pair[((d + 1) % 2) as usize]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub mode: GridMode,
    pub d: u32,
    pub r_max: f64,
    pub n: usize,
    pub h: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Domain {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }
}

/// Build a grid. `FullLine` is one-dimensional by construction; `Radial`
/// works in any dimension.
pub fn build_domain(mode: GridMode, d: u32, r_max: f64, n: usize) -> Result<Arc<Domain>, GridError> {
    if d < 1 {
        return Err(GridError::InvalidDomain("dimension must be >= 1".into()));
    }
    if mode == GridMode::FullLine && d != 1 {
        return Err(GridError::InvalidDomain(format!(
            "full-line mode is one-dimensional, got d = {d}"
        )));
    }
    if !(r_max > 0.0) || !r_max.is_finite() {
        return Err(GridError::InvalidDomain(format!("truncation radius must be positive, got {r_max}")));
    }
    if n < 2 {
        return Err(GridError::InvalidDomain(format!("need at least 2 cells, got {n}")));
    }

    let (h, nodes, weights) = match mode {
        GridMode::FullLine => {
            let h = 2.0 * r_max / n as f64;
            let nodes: Vec<f64> = (0..n).map(|i| -r_max + (i as f64 + 0.5) * h).collect();
            let weights = vec![h; n];
            (h, nodes, weights)
        }
        GridMode::Radial => {
            let h = r_max / n as f64;
            let omega = sphere_measure(d);
            let nodes: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
            let weights: Vec<f64> = nodes
                .iter()
                .map(|&r| omega * r.powi(d as i32 - 1) * h)
                .collect();
            (h, nodes, weights)
        }
    };

    Ok(Arc::new(Domain { mode, d, r_max, n, h, nodes, weights }))
}

/// A scalar field on a shared domain. Values outside the truncation radius
/// are identically zero by convention.
#[derive(Debug, Clone)]
pub struct Field {
    pub domain: Arc<Domain>,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(domain: Arc<Domain>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != domain.n {
            return Err(GridError::LengthMismatch { expected: domain.n, got: values.len() });
        }
        Ok(Field { domain, values })
    }

    pub fn zeros(domain: Arc<Domain>) -> Self {
        let n = domain.n;
        Field { domain, values: vec![0.0; n] }
    }

    pub fn from_fn(domain: Arc<Domain>, f: impl Fn(f64) -> f64) -> Self {
        let values = domain.nodes().iter().map(|&x| f(x)).collect();
        Field { domain, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Piecewise-linear evaluation at an off-grid point. Constant on the
    /// half-cells beyond the outermost nodes, zero outside the truncation
    /// radius. Radial fields are even: negative arguments read `|x|`.
    pub fn interpolate(&self, x: f64) -> f64 {
        let dom = &self.domain;
        let x = match dom.mode {
            GridMode::Radial => x.abs(),
            GridMode::FullLine => x,
        };
        let lo = dom.nodes[0];
        let hi = dom.nodes[dom.n - 1];
        let boundary = dom.r_max;
        match dom.mode {
            GridMode::FullLine if x < -boundary || x > boundary => return 0.0,
            GridMode::Radial if x > boundary => return 0.0,
            _ => {}
        }
        if x <= lo {
            return self.values[0];
        }
        if x >= hi {
            return self.values[dom.n - 1];
        }
        let t = (x - lo) / dom.h;
        let i = (t.floor() as usize).min(dom.n - 2);
        let frac = t - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

/// Weighted sum `sum_i w_i v_i`, the discrete integral over the truncated
/// domain.
pub fn mass(field: &Field) -> f64 {
    field
        .values
        .iter()
        .zip(field.domain.weights())
        .map(|(&v, &w)| w * v)
        .sum()
}

/// Discrete Lq norm. `q = f64::INFINITY` gives the sup norm over nodes;
/// finite orders need `q >= 1`.
pub fn lq_norm(field: &Field, q: f64) -> Result<f64, GridError> {
    if q.is_infinite() && q > 0.0 {
        return Ok(field.values.iter().fold(0.0f64, |acc, &v| acc.max(v.abs())));
    }
    if !(q >= 1.0) {
        return Err(GridError::BadNormOrder(q));
    }
    let total: f64 = field
        .values
        .iter()
        .zip(field.domain.weights())
        .map(|(&v, &w)| w * v.abs().powf(q))
        .sum();
    Ok(total.powf(1.0 / q))
}

/// `int (a - b)^+`: the discrete integral of the positive part of the
/// difference. The ordered-difference identity
/// `ppi(a,b) - ppi(b,a) = mass(a) - mass(b)` holds exactly.
pub fn positive_part_integral(a: &Field, b: &Field) -> Result<f64, GridError> {
    if a.len() != b.len() {
        return Err(GridError::LengthMismatch { expected: a.len(), got: b.len() });
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .zip(a.domain.weights())
        .map(|((&x, &y), &w)| w * (x - y).max(0.0))
        .sum())
}
