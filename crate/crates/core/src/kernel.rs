//! Discrete kernel tables for the truncated fractional p-Laplacian.
//!
//! An assembled table holds `K(i, j)`: the singular kernel evaluated between
//! nodes `i != j`, times the inner-integral cell measure, so that
//!
//! ```text
//!     PV(v)(x_i)  ~  sum_j K(i,j) (v_i - v_j)^(p-1)  +  E(i) v_i^(p-1)
//! ```
//!
//! where `E` collects the kernel mass outside the truncation radius (the
//! field is zero there). Cell geometries:
//!
//! * full line: `K(i,j) = |x_i - x_j|^(-(1+sp)) h`;
//! * radial:    `K(i,j) = angular_kernel(r_i, r_j) h`, the kernel averaged
//!   over the sphere of radius `r_j` (closed form in d = 1, adaptive
//!   quadrature with a peak split in d >= 2).
//!
//! The diagonal is zero: the exclusion radius `epsilon` must sit below the
//! cell width, so the excluded ball stays inside the self-cell and the table
//! does not depend on the exact value (see the epsilon tests). The key
//! structural invariant, relied on by every monotonicity argument downstream,
//! is measure-weighted symmetry: `w_i K(i,j) = w_j K(j,i)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::exec;
use crate::exponents::ModelParams;
use crate::grid::{sphere_measure, Domain, GridMode};
use crate::quad::adaptive_simpson;

/// Relative tolerance for the angular quadrature in d >= 2.
const ANGULAR_REL_TOL: f64 = 1e-8;
const ANGULAR_MAX_DEPTH: u32 = 40;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel configuration: {0}")]
    Config(String),
    #[error("kernel is singular at coincident radii r = rho = {r}")]
    Singular { r: f64 },
    #[error("kernel cache i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("kernel cache does not match the requested table: {0}")]
    CacheMismatch(String),
}

/// Assembled kernel table plus exterior weights.
#[derive(Debug, Clone)]
pub struct KernelTable {
    pub domain: Arc<Domain>,
    pub s: f64,
    pub p: f64,
    pub epsilon: f64,
    /// Include the exterior term in operator applications. On by default;
    /// turning it off models a homogeneous extension by the field itself
    /// rather than by zero.
    pub exterior_enabled: bool,
    k: Vec<f64>,
    exterior: Vec<f64>,
}

impl KernelTable {
    pub fn n(&self) -> usize {
        self.domain.n
    }

    pub fn k(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.domain.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.k[i * self.domain.n..(i + 1) * self.domain.n]
    }

    pub fn exterior(&self) -> &[f64] {
        &self.exterior
    }

    pub fn exterior_weight(&self, i: usize) -> f64 {
        if self.exterior_enabled {
            self.exterior[i]
        } else {
            0.0
        }
    }
}

/// Kernel value at distance `r` from the origin, averaged over the sphere of
/// radius `rho` (and scaled by that sphere's measure `omega_(d-1) rho^(d-1)`),
/// so that radial PV integrals reduce to one-dimensional ones:
///
/// ```text
///     d = 1:   |r - rho|^(-(1+sp)) + (r + rho)^(-(1+sp))
///     d >= 2:  rho^(d-1) omega_(d-1) int_0^pi q(theta)^(-(d+sp)/2) sin^(d-2)(theta) dtheta
/// ```
///
/// with `q(theta) = (r - rho)^2 + 4 r rho sin^2(theta/2)`. Errors at
/// `r = rho`, where the integral diverges.
pub fn angular_kernel(r: f64, rho: f64, d: u32, sp: f64) -> Result<f64, KernelError> {
    if r == rho {
        return Err(KernelError::Singular { r });
    }
    if d == 1 {
        let near = (r - rho).abs().powf(-(1.0 + sp));
        let far = (r + rho).powf(-(1.0 + sp));
        return Ok(near + far);
    }

    let ex = -(d as f64 + sp) / 2.0;
    let gap2 = (r - rho) * (r - rho);
    let integrand = move |theta: f64| {
        let st = (0.5 * theta).sin();
        let q = gap2 + 4.0 * r * rho * st * st;
        q.powf(ex) * theta.sin().powi(d as i32 - 2)
    };

    // near-coincident radii concentrate the integrand in a peak of width
    // ~ |r - rho| / sqrt(r rho) at theta = 0; integrate the peak separately
    let split = 8.0 * (r - rho).abs() / (r * rho).sqrt();
    let integral = if split.is_finite() && split < std::f64::consts::PI {
        adaptive_simpson(&integrand, 0.0, split, ANGULAR_REL_TOL, ANGULAR_MAX_DEPTH)
            + adaptive_simpson(&integrand, split, std::f64::consts::PI, ANGULAR_REL_TOL, ANGULAR_MAX_DEPTH)
    } else {
        adaptive_simpson(&integrand, 0.0, std::f64::consts::PI, ANGULAR_REL_TOL, ANGULAR_MAX_DEPTH)
    };
    Ok(rho.powi(d as i32 - 1) * sphere_measure(d - 1) * integral)
}

/// Kernel mass beyond the truncation radius, seen from a node at distance
/// `r` (full-line nodes pass `|x|`; both geometries agree in d = 1):
///
/// ```text
///     E(r) = int_{|y| > R} |x - y|^(-d-sp) dy
/// ```
///
/// Closed form in d = 1; nested quadrature over dyadic shells up to `64 R`
/// plus the analytic far tail in d >= 2.
fn exterior_weight_at(r: f64, d: u32, sp: f64, r_max: f64) -> f64 {
    if d == 1 {
        return ((r_max - r).powf(-sp) + (r_max + r).powf(-sp)) / sp;
    }
    let mut total = 0.0;
    let mut lo = r_max;
    for _ in 0..6 {
        let hi = 2.0 * lo;
        let shell = |rho: f64| angular_kernel(r, rho, d, sp).expect("rho > r_max >= r");
        total += adaptive_simpson(&shell, lo, hi, 1e-7, 20);
        lo = hi;
    }
    // beyond X = 64 R the node offset is negligible: int_{|y|>X} |y|^(-d-sp) dy
    total + sphere_measure(d) * lo.powf(-sp) / sp
}

fn assemble_impl(
    domain: &Arc<Domain>,
    params: &ModelParams,
    epsilon: f64,
    parallel: bool,
) -> Result<KernelTable, KernelError> {
    if params.d != domain.d {
        return Err(KernelError::Config(format!(
            "parameter dimension {} does not match the domain dimension {}",
            params.d, domain.d
        )));
    }
    if !(epsilon > 0.0 && epsilon < domain.h) {
        return Err(KernelError::Config(format!(
            "exclusion radius must lie in (0, h) = (0, {}), got {epsilon}; larger radii would \
             clip neighbor cells",
            domain.h
        )));
    }

    let n = domain.n;
    let sp = params.sp();
    let d = params.d;
    let h = domain.h;
    let nodes = domain.nodes().to_vec();
    let mode = domain.mode;

    let fill = move |i: usize, row: &mut [f64]| {
        let xi = nodes[i];
        for (j, slot) in row.iter_mut().enumerate() {
            if j == i {
                *slot = 0.0;
                continue;
            }
            *slot = match mode {
                GridMode::FullLine => (xi - nodes[j]).abs().powf(-(1.0 + sp)) * h,
                GridMode::Radial => {
                    angular_kernel(xi, nodes[j], d, sp).expect("distinct grid nodes") * h
                }
            };
        }
    };

    let mut k = vec![0.0; n * n];
    if parallel {
        exec::for_each_row(&mut k, n, fill);
    } else {
        exec::for_each_row_seq(&mut k, n, fill);
    }

    let r_max = domain.r_max;
    let node_of = |i: usize| domain.node(i).abs();
    let exterior = if parallel {
        exec::map_indexed(n, |i| exterior_weight_at(node_of(i), d, sp, r_max))
    } else {
        exec::map_indexed_seq(n, |i| exterior_weight_at(node_of(i), d, sp, r_max))
    };

    Ok(KernelTable {
        domain: domain.clone(),
        s: params.s,
        p: params.p,
        epsilon,
        exterior_enabled: true,
        k,
        exterior,
    })
}

/// Assemble the kernel table, filling rows in parallel when the `parallel`
/// feature is active.
pub fn assemble_kernel(
    domain: &Arc<Domain>,
    params: &ModelParams,
    epsilon: f64,
) -> Result<KernelTable, KernelError> {
    assemble_impl(domain, params, epsilon, true)
}

/// Single-threaded assembly; same table, used as the benchmark baseline.
pub fn assemble_kernel_sequential(
    domain: &Arc<Domain>,
    params: &ModelParams,
    epsilon: f64,
) -> Result<KernelTable, KernelError> {
    assemble_impl(domain, params, epsilon, false)
}

const CACHE_MAGIC: [u8; 4] = *b"FPKC";
const CACHE_VERSION: u32 = 1;

/// Persist a table. Layout: magic, version, mode byte, d, then the bit
/// patterns of (s, p, r_max), n, epsilon, followed by K row-major and E,
/// all little-endian f64.
pub fn write_kernel_cache(path: &Path, table: &KernelTable) -> Result<(), KernelError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&[match table.domain.mode {
        GridMode::FullLine => 0u8,
        GridMode::Radial => 1u8,
    }])?;
    w.write_all(&table.domain.d.to_le_bytes())?;
    w.write_all(&table.s.to_le_bytes())?;
    w.write_all(&table.p.to_le_bytes())?;
    w.write_all(&table.domain.r_max.to_le_bytes())?;
    w.write_all(&(table.domain.n as u64).to_le_bytes())?;
    w.write_all(&table.epsilon.to_le_bytes())?;
    for v in &table.k {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &table.exterior {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Load a cached table, verifying that every key field matches the requested
/// domain, parameters, and exclusion radius bit for bit.
pub fn read_kernel_cache(
    path: &Path,
    domain: &Arc<Domain>,
    params: &ModelParams,
    epsilon: f64,
) -> Result<KernelTable, KernelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CACHE_MAGIC {
        return Err(KernelError::CacheMismatch("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CACHE_VERSION {
        return Err(KernelError::CacheMismatch(format!("cache version {version}, expected {CACHE_VERSION}")));
    }
    let mut mode_byte = [0u8; 1];
    r.read_exact(&mut mode_byte)?;
    let mode = match mode_byte[0] {
        0 => GridMode::FullLine,
        1 => GridMode::Radial,
        b => return Err(KernelError::CacheMismatch(format!("unknown mode byte {b}"))),
    };
    let d = read_u32(&mut r)?;
    let s = read_f64(&mut r)?;
    let p = read_f64(&mut r)?;
    let r_max = read_f64(&mut r)?;
    let n = read_u64(&mut r)? as usize;
    let eps = read_f64(&mut r)?;

    let mut mismatches = Vec::new();
    if mode != domain.mode {
        mismatches.push("mode".to_string());
    }
    if d != domain.d || d != params.d {
        mismatches.push(format!("d (cache {d})"));
    }
    if s.to_bits() != params.s.to_bits() {
        mismatches.push(format!("s (cache {s})"));
    }
    if p.to_bits() != params.p.to_bits() {
        mismatches.push(format!("p (cache {p})"));
    }
    if r_max.to_bits() != domain.r_max.to_bits() {
        mismatches.push(format!("r_max (cache {r_max})"));
    }
    if n != domain.n {
        mismatches.push(format!("n (cache {n})"));
    }
    if eps.to_bits() != epsilon.to_bits() {
        mismatches.push(format!("epsilon (cache {eps})"));
    }
    if !mismatches.is_empty() {
        return Err(KernelError::CacheMismatch(mismatches.join(", ")));
    }

    let mut k = vec![0.0; n * n];
    for v in &mut k {
        *v = read_f64(&mut r)?;
    }
    let mut exterior = vec![0.0; n];
    for v in &mut exterior {
        *v = read_f64(&mut r)?;
    }
    Ok(KernelTable {
        domain: domain.clone(),
        s,
        p,
        epsilon,
        exterior_enabled: true,
        k,
        exterior,
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, KernelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, KernelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, KernelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
