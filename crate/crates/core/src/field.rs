//! `R^n`-valued fields on a polar grid of the unit disk, the discrete
//! Ginzburg-Landau energy and its minimisation by preconditioned gradient
//! descent.
//!
//! Ring `i < n_r` sits at `r_i = (i + 1/2) h`, `h = 1/(n_r + 1/2)`; ring `n_r`
//! is the boundary circle `r = 1` and holds the pinned boundary data. The
//! radial nodes therefore coincide with `RadialGrid::disk(n_r + 1)`, and
//! radial profiles lift without interpolation.
//!
//! The discrete Dirichlet energy is a sum over edges,
//!
//! ```text
//! ½ Σ A_i |u_{i+1,j} - u_{i,j}|^2 + ½ Σ B_i |u_{i,j+1} - u_{i,j}|^2
//! ```
//!
//! with `A_i = r_{i+1/2} Δθ / h` and `B_i = V_i / (r_i^2 Δθ)`, `V_i` the
//! shell measure of ring `i`. The face below ring 0 has zero length, so the
//! axis needs no special stencil.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potential::PotentialSpec;
use crate::radial::{ProfilePair, RadialGrid};

pub const MIN_RADIAL_CELLS: usize = 32;
pub const DEFAULT_NR: usize = 128;
pub const DEFAULT_NTHETA: usize = 256;
pub const DEFAULT_DESCENT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("potential argument 1 - |u|^2 is not finite at ring {ring}, angle {angle}")]
    PotentialDomainViolation { ring: usize, angle: usize },
    #[error("initial field does not match the boundary data at angle {0}")]
    BoundaryMismatch(usize),
    #[error("descent did not converge: gradient {grad_norm:.3e} after {iterations} iterations")]
    MaxItersExceeded { iterations: usize, grad_norm: f64 },
    #[error("line search failed at iteration {iterations} (gradient {grad_norm:.3e})")]
    LineSearchFailed { iterations: usize, grad_norm: f64 },
}

/// Polar grid with `n_r` interior rings and `n_theta` angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskGrid {
    n_r: usize,
    n_theta: usize,
    radial: RadialGrid,
    dtheta: f64,
}

impl DiskGrid {
    pub fn new(n_r: usize, n_theta: usize) -> Result<Self, FieldError> {
        if n_r < MIN_RADIAL_CELLS {
            return Err(FieldError::InvalidGrid(format!(
                "need at least {MIN_RADIAL_CELLS} radial cells, got {n_r}"
            )));
        }
        if n_theta == 0 || n_theta % 4 != 0 {
            return Err(FieldError::InvalidGrid(format!(
                "angular count must be a positive multiple of 4, got {n_theta}"
            )));
        }
        let radial = RadialGrid::disk(n_r + 1).map_err(|e| FieldError::InvalidGrid(e.to_string()))?;
        Ok(Self {
            n_r,
            n_theta,
            radial,
            dtheta: 2.0 * PI / n_theta as f64,
        })
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    /// Radial spacing `h`.
    pub fn spacing(&self) -> f64 {
        self.radial.spacing()
    }

    pub fn dtheta(&self) -> f64 {
        self.dtheta
    }

    /// The radial grid with the same nodes (boundary ring included).
    pub fn radial_grid(&self) -> RadialGrid {
        self.radial
    }

    /// Radius of ring `i`; ring `n_r` is the boundary.
    #[inline]
    pub fn r(&self, i: usize) -> f64 {
        self.radial.r(i)
    }

    #[inline]
    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.dtheta
    }

    /// Number of nodes including the boundary ring.
    pub fn node_count(&self) -> usize {
        (self.n_r + 1) * self.n_theta
    }

    #[inline]
    fn a(&self, i: usize) -> f64 {
        self.radial.face_weight(i) * self.dtheta
    }

    #[inline]
    fn b(&self, i: usize) -> f64 {
        let r = self.r(i);
        self.radial.cell_weight(i) / (r * r * self.dtheta)
    }

    #[inline]
    fn area(&self, i: usize) -> f64 {
        self.radial.cell_weight(i) * self.dtheta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundaryKind {
    DegreeK(i32),
    Horizontal(f64),
    Custom,
}

/// Values on the boundary circle, `n` components per angle.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub values: Vec<f64>,
    pub n: usize,
    pub kind: BoundaryKind,
}

impl BoundaryData {
    pub fn custom(values: Vec<f64>, n: usize, grid: &DiskGrid) -> Result<Self, FieldError> {
        if n == 0 || values.len() != n * grid.n_theta() {
            return Err(FieldError::InvalidArgument(format!(
                "expected {} boundary values, got {}",
                n * grid.n_theta(),
                values.len()
            )));
        }
        Ok(Self {
            values,
            n,
            kind: BoundaryKind::Custom,
        })
    }

    pub fn at(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Winding number of the first two components around the origin.
    pub fn winding_number(&self) -> i32 {
        let m = self.len();
        let mut total = 0.0;
        for j in 0..m {
            let p = self.at(j);
            let q = self.at((j + 1) % m);
            let mut d = q[1].atan2(q[0]) - p[1].atan2(p[0]);
            if d > PI {
                d -= 2.0 * PI;
            } else if d < -PI {
                d += 2.0 * PI;
            }
            total += d;
        }
        (total / (2.0 * PI)).round() as i32
    }
}

fn check_target_dim(n: usize) -> Result<(), FieldError> {
    if n < 3 {
        Err(FieldError::InvalidArgument(format!("target dimension must be >= 3, got {n}")))
    } else {
        Ok(())
    }
}

/// `(cos kθ, sin kθ, 0, ..., 0)` on the boundary circle.
pub fn boundary_degree_k(k: i32, n: usize, grid: &DiskGrid) -> Result<BoundaryData, FieldError> {
    check_target_dim(n)?;
    if k == 0 {
        return Err(FieldError::InvalidArgument("degree must be nonzero".into()));
    }
    let mut values = vec![0.0; n * grid.n_theta()];
    for j in 0..grid.n_theta() {
        let t = k as f64 * grid.theta(j);
        values[j * n] = t.cos();
        values[j * n + 1] = t.sin();
    }
    Ok(BoundaryData {
        values,
        n,
        kind: BoundaryKind::DegreeK(k),
    })
}

/// `u_a(x) = (cos a x_1, sin a x_1, 0, ..., 0)` evaluated at `x = (cos θ, sin θ)`.
pub fn boundary_horizontal(a: f64, n: usize, grid: &DiskGrid) -> Result<BoundaryData, FieldError> {
    check_target_dim(n)?;
    let mut values = vec![0.0; n * grid.n_theta()];
    for j in 0..grid.n_theta() {
        let t = a * grid.theta(j).cos();
        values[j * n] = t.cos();
        values[j * n + 1] = t.sin();
    }
    Ok(BoundaryData {
        values,
        n,
        kind: BoundaryKind::Horizontal(a),
    })
}

/// Field values on all rings, boundary ring last.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: DiskGrid,
    pub n: usize,
    /// `values[((i * n_theta) + j) * n + c]`.
    pub values: Vec<f64>,
    pub boundary: BoundaryData,
}

impl VectorField {
    /// Interior values from `f(r, θ)`; the boundary ring is copied from
    /// `boundary`.
    pub fn from_fn<F>(grid: DiskGrid, boundary: BoundaryData, f: F) -> Result<Self, FieldError>
    where
        F: Fn(f64, f64) -> Vec<f64>,
    {
        let n = boundary.n;
        if boundary.len() != grid.n_theta() {
            return Err(FieldError::InvalidArgument("boundary size does not match grid".into()));
        }
        let nt = grid.n_theta();
        let mut values = vec![0.0; grid.node_count() * n];
        for i in 0..grid.n_r() {
            for j in 0..nt {
                let v = f(grid.r(i), grid.theta(j));
                if v.len() != n {
                    return Err(FieldError::InvalidArgument(format!(
                        "expected {n} components, got {}",
                        v.len()
                    )));
                }
                let o = (i * nt + j) * n;
                values[o..o + n].copy_from_slice(&v);
            }
        }
        let o = grid.n_r() * nt * n;
        values[o..].copy_from_slice(&boundary.values);
        Ok(Self {
            grid,
            n,
            values,
            boundary,
        })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.grid.n_theta() + j) * self.n;
        &self.values[o..o + self.n]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = (i * self.grid.n_theta() + j) * self.n;
        &mut self.values[o..o + self.n]
    }

    fn ring_len(&self) -> usize {
        self.grid.n_theta() * self.n
    }

    pub(crate) fn interior_len(&self) -> usize {
        self.grid.n_r() * self.ring_len()
    }

    /// Index of the first boundary-ring entry that differs from the data.
    pub(crate) fn boundary_mismatch(&self) -> Option<usize> {
        let b = &self.values[self.interior_len()..];
        (0..self.grid.n_theta()).find(|&j| b[j * self.n..(j + 1) * self.n] != *self.boundary.at(j))
    }

    pub fn max_norm(&self) -> f64 {
        self.values
            .chunks_exact(self.n)
            .map(|u| u.iter().map(|x| x * x).sum::<f64>())
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// Nodewise max of `|u - v|` (Euclidean in the target).
    pub fn max_distance(&self, other: &VectorField) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        self.values
            .chunks_exact(self.n)
            .zip(other.values.chunks_exact(self.n))
            .map(|(u, v)| u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// [`VectorField::max_distance`] restricted to rings with `r >= r_min`.
    pub fn max_distance_outside(&self, other: &VectorField, r_min: f64) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..=self.grid.n_r() {
            if self.grid.r(i) < r_min {
                continue;
            }
            for j in 0..self.grid.n_theta() {
                let d: f64 = self
                    .at(i, j)
                    .iter()
                    .zip(other.at(i, j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                m = m.max(d);
            }
        }
        m.sqrt()
    }

    /// CSV with header `i,j,r,theta,u1,...,un`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,r,theta");
        for c in 1..=self.n {
            let _ = write!(s, ",u{c}");
        }
        s.push('\n');
        for i in 0..=self.grid.n_r() {
            for j in 0..self.grid.n_theta() {
                let _ = write!(s, "{i},{j},{:.16e},{:.16e}", self.grid.r(i), self.grid.theta(j));
                for v in self.at(i, j) {
                    let _ = write!(s, ",{v:.16e}");
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Equivariant field `f(r)(cos kθ, sin kθ, 0) + sign g(r) e_3` from a radial
/// pair on the matching radial grid.
pub fn lift_pair(pair: &ProfilePair, sign: f64, grid: &DiskGrid) -> Result<VectorField, FieldError> {
    if pair.grid != grid.radial_grid() {
        return Err(FieldError::InvalidArgument(format!(
            "profile has {} nodes, disk grid needs {}",
            pair.grid.count(),
            grid.n_r() + 1
        )));
    }
    let k = pair.k;
    let boundary = boundary_degree_k(k, 3, grid)?;
    let mut field = VectorField::from_fn(*grid, boundary, |_, _| vec![0.0; 3])?;
    for i in 0..grid.n_r() {
        for j in 0..grid.n_theta() {
            let t = k as f64 * grid.theta(j);
            field
                .at_mut(i, j)
                .copy_from_slice(&[pair.f[i] * t.cos(), pair.f[i] * t.sin(), sign * pair.g[i]]);
        }
    }
    Ok(field)
}

/// Interior nodes drawn uniformly from the unit ball of `R^n` with a seeded
/// generator.
pub fn random_init(grid: &DiskGrid, boundary: &BoundaryData, seed: u64) -> VectorField {
    let n = boundary.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = VectorField::from_fn(*grid, boundary.clone(), |_, _| vec![0.0; n])
        .expect("boundary matches grid");
    for v in field.values[..grid.n_r() * grid.n_theta() * n].chunks_exact_mut(n) {
        loop {
            for x in v.iter_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
            if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                break;
            }
        }
    }
    field
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dirichlet: f64,
    pub potential: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.dirichlet + self.potential
    }
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn sq_norm(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum()
}

/// Discrete Dirichlet energy of ring `i`: the radial edges to ring `i + 1`
/// and the angular edges of ring `i`.
fn ring_dirichlet(grid: &DiskGrid, n: usize, vals: &[f64], i: usize) -> f64 {
    let nt = grid.n_theta();
    let ring = &vals[i * nt * n..(i + 1) * nt * n];
    let mut s = 0.0;
    if i < grid.n_r() {
        let next = &vals[(i + 1) * nt * n..(i + 2) * nt * n];
        let a = grid.a(i);
        for (u, v) in ring.chunks_exact(n).zip(next.chunks_exact(n)) {
            s += 0.5 * a * sq_dist(u, v);
        }
    }
    let b = grid.b(i);
    for j in 0..nt {
        let jn = (j + 1) % nt;
        s += 0.5 * b * sq_dist(&ring[j * n..(j + 1) * n], &ring[jn * n..(jn + 1) * n]);
    }
    s
}

fn dirichlet_energy(grid: &DiskGrid, n: usize, vals: &[f64]) -> f64 {
    let parts: Vec<f64> = (0..=grid.n_r())
        .into_par_iter()
        .map(|i| ring_dirichlet(grid, n, vals, i))
        .collect();
    parts.iter().sum()
}

/// Discrete Dirichlet energy `½ ∫ |∇u|^2` of a field.
pub fn dirichlet_energy_of(field: &VectorField) -> f64 {
    dirichlet_energy(&field.grid, field.n, &field.values)
}

/// Discrete energy `∫ ½|∇u|^2 + W(1 - |u|^2) / (2ε^2)`.
pub fn gl_energy(
    field: &VectorField,
    epsilon: f64,
    spec: &PotentialSpec,
) -> Result<EnergyBreakdown, FieldError> {
    let grid = &field.grid;
    let n = field.n;
    let nt = grid.n_theta();
    let scale = 1.0 / (2.0 * epsilon * epsilon);
    let potential_parts: Vec<Result<f64, FieldError>> = (0..=grid.n_r())
        .into_par_iter()
        .map(|i| {
            let area = grid.area(i);
            let mut s = 0.0;
            for j in 0..nt {
                let t = 1.0 - sq_norm(field.at(i, j));
                if !t.is_finite() {
                    return Err(FieldError::PotentialDomainViolation { ring: i, angle: j });
                }
                s += area * spec.w_raw(t);
            }
            Ok(s * scale)
        })
        .collect();
    let mut potential = 0.0;
    for p in potential_parts {
        potential += p?;
    }
    Ok(EnergyBreakdown {
        dirichlet: dirichlet_energy(grid, n, &field.values),
        potential,
    })
}

/// Gradient of the Dirichlet energy with respect to the interior values,
/// written into `out` (interior rings only).
pub(crate) fn dirichlet_gradient(grid: &DiskGrid, n: usize, vals: &[f64], out: &mut [f64]) {
    let nt = grid.n_theta();
    let rl = nt * n;
    out.par_chunks_exact_mut(rl).enumerate().for_each(|(i, g)| {
        let ring = &vals[i * rl..(i + 1) * rl];
        let next = &vals[(i + 1) * rl..(i + 2) * rl];
        let a_out = grid.a(i);
        let a_in = if i > 0 { grid.a(i - 1) } else { 0.0 };
        let b = grid.b(i);
        for j in 0..nt {
            let jp = (j + 1) % nt;
            let jm = (j + nt - 1) % nt;
            for c in 0..n {
                let u = ring[j * n + c];
                let mut s = a_out * (u - next[j * n + c]);
                if i > 0 {
                    s += a_in * (u - vals[(i - 1) * rl + j * n + c]);
                }
                s += b * (2.0 * u - ring[jp * n + c] - ring[jm * n + c]);
                g[j * n + c] = s;
            }
        }
    });
}

fn add_potential_gradient(
    grid: &DiskGrid,
    n: usize,
    vals: &[f64],
    epsilon: f64,
    spec: &PotentialSpec,
    out: &mut [f64],
) {
    let nt = grid.n_theta();
    let rl = nt * n;
    let inv_e2 = 1.0 / (epsilon * epsilon);
    out.par_chunks_exact_mut(rl).enumerate().for_each(|(i, g)| {
        let area = grid.area(i) * inv_e2;
        for j in 0..nt {
            let u = &vals[i * rl + j * n..i * rl + (j + 1) * n];
            let w = area * spec.wp_raw(1.0 - sq_norm(u));
            for c in 0..n {
                g[j * n + c] -= w * u[c];
            }
        }
    });
}

/// Solves `K p = g` for the interior values, where `K` is the Hessian of the
/// discrete Dirichlet energy with the boundary ring fixed. Diagonal in the
/// angular Fourier modes; each mode is a tridiagonal system in `r`.
pub(crate) struct Preconditioner {
    grid: DiskGrid,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    /// Thomas factors per mode: modified super-diagonal and pivot inverse.
    upper: Vec<f64>,
    pivot_inv: Vec<f64>,
}

impl Preconditioner {
    pub(crate) fn new(grid: &DiskGrid) -> Self {
        let nt = grid.n_theta();
        let nr = grid.n_r();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(nt);
        let ifft = planner.plan_fft_inverse(nt);
        let mut upper = vec![0.0; nt * nr];
        let mut pivot_inv = vec![0.0; nt * nr];
        for l in 0..nt {
            let mu = 2.0 - 2.0 * (l as f64 * grid.dtheta()).cos();
            let mut prev_upper = 0.0;
            for i in 0..nr {
                let mut d = grid.a(i) + grid.b(i) * mu;
                let mut lower = 0.0;
                if i > 0 {
                    d += grid.a(i - 1);
                    lower = -grid.a(i - 1);
                }
                let piv = d - lower * prev_upper;
                let up = if i + 1 < nr { -grid.a(i) / piv } else { 0.0 };
                upper[l * nr + i] = up;
                pivot_inv[l * nr + i] = 1.0 / piv;
                prev_upper = up;
            }
        }
        Self {
            grid: *grid,
            fft,
            ifft,
            upper,
            pivot_inv,
        }
    }

    /// `p = K^{-1} g` for interior arrays laid out like field values.
    pub(crate) fn apply(&self, n: usize, g: &[f64], p: &mut [f64]) {
        let nt = self.grid.n_theta();
        let nr = self.grid.n_r();
        for c in 0..n {
            let mut spec: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); nr * nt];
            spec.par_chunks_exact_mut(nt).enumerate().for_each(|(i, row)| {
                for j in 0..nt {
                    row[j] = Complex::new(g[(i * nt + j) * n + c], 0.0);
                }
                self.fft.process(row);
            });
            // tridiagonal solve along r for every angular mode
            let solved: Vec<Vec<Complex<f64>>> = (0..nt)
                .into_par_iter()
                .map(|l| {
                    let up = &self.upper[l * nr..(l + 1) * nr];
                    let pinv = &self.pivot_inv[l * nr..(l + 1) * nr];
                    let mut y = vec![Complex::new(0.0, 0.0); nr];
                    for i in 0..nr {
                        let mut rhs = spec[i * nt + l];
                        if i > 0 {
                            rhs -= y[i - 1] * (-self.grid.a(i - 1));
                        }
                        y[i] = rhs * pinv[i];
                    }
                    for i in (0..nr - 1).rev() {
                        let next = y[i + 1];
                        y[i] -= next * up[i];
                    }
                    y
                })
                .collect();
            for (l, col) in solved.iter().enumerate() {
                for i in 0..nr {
                    spec[i * nt + l] = col[i];
                }
            }
            let scale = 1.0 / nt as f64;
            let rows: Vec<Vec<f64>> = spec
                .par_chunks_exact_mut(nt)
                .map(|row| {
                    self.ifft.process(row);
                    row.iter().map(|z| z.re * scale).collect()
                })
                .collect();
            for (i, row) in rows.iter().enumerate() {
                for j in 0..nt {
                    p[(i * nt + j) * n + c] = row[j];
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions {
    /// Stop when the max-norm of the preconditioned gradient is below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_DESCENT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DescentReport {
    pub field: VectorField,
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    /// Max-norm of the preconditioned gradient at exit.
    pub grad_norm: f64,
    /// Energy after every accepted step, starting with the initial energy.
    pub history: Vec<f64>,
}

/// `W(t + dt) - W(t)`, by Simpson's rule on `W'` for small increments so
/// the difference does not cancel.
#[inline]
fn w_increment(spec: &PotentialSpec, t: f64, dt: f64) -> f64 {
    if dt.abs() < 1e-3 {
        dt * (spec.wp_raw(t) + 4.0 * spec.wp_raw(t + 0.5 * dt) + spec.wp_raw(t + dt)) / 6.0
    } else {
        spec.w_raw(t + dt) - spec.w_raw(t)
    }
}

/// Energy change from adding `delta` (interior rings) to `vals`, summed from
/// local differences.
pub(crate) fn energy_increment(
    grid: &DiskGrid,
    n: usize,
    vals: &[f64],
    delta: &[f64],
    potential: Option<(f64, &PotentialSpec)>,
) -> f64 {
    let nt = grid.n_theta();
    let rl = nt * n;
    let nr = grid.n_r();
    let d_at = |i: usize, k: usize| if i < nr { delta[i * rl + k] } else { 0.0 };
    let parts: Vec<f64> = (0..nr)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            let a = grid.a(i);
            let b = grid.b(i);
            for j in 0..nt {
                let jp = (j + 1) % nt;
                for c in 0..n {
                    let k = j * n + c;
                    // radial edge to ring i + 1
                    let e = vals[i * rl + k] - vals[(i + 1) * rl + k];
                    let de = delta[i * rl + k] - d_at(i + 1, k);
                    s += 0.5 * a * de * (2.0 * e + de);
                    // angular edge (j, j + 1)
                    let kp = jp * n + c;
                    let e = vals[i * rl + k] - vals[i * rl + kp];
                    let de = delta[i * rl + k] - delta[i * rl + kp];
                    s += 0.5 * b * de * (2.0 * e + de);
                }
                if let Some((scale, spec)) = potential {
                    let o = i * rl + j * n;
                    let u = &vals[o..o + n];
                    let d = &delta[o..o + n];
                    let du: f64 = u.iter().zip(d).map(|(x, y)| y * (2.0 * x + y)).sum();
                    s += grid.area(i) * scale * w_increment(spec, 1.0 - sq_norm(u), -du);
                }
            }
            s
        })
        .collect();
    parts.iter().sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimises the discrete energy by preconditioned gradient descent with
/// Barzilai-Borwein steps and Armijo backtracking. Energy never increases
/// between accepted iterates and the boundary ring is never touched.
pub fn gl_descent(
    init: &VectorField,
    epsilon: f64,
    spec: &PotentialSpec,
    opts: DescentOptions,
) -> Result<DescentReport, FieldError> {
    if !(epsilon > 0.0) {
        return Err(FieldError::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if let Some(j) = init.boundary_mismatch() {
        return Err(FieldError::BoundaryMismatch(j));
    }
    let grid = init.grid;
    let n = init.n;
    let m = init.interior_len();
    let pre = Preconditioner::new(&grid);
    let pot_scale = 1.0 / (2.0 * epsilon * epsilon);

    let gradient = |vals: &[f64], g: &mut [f64]| {
        dirichlet_gradient(&grid, n, vals, g);
        add_potential_gradient(&grid, n, vals, epsilon, spec, g);
    };

    let mut field = init.clone();
    let mut energy = gl_energy(&field, epsilon, spec)?.total();
    let mut history = vec![energy];
    let mut g = vec![0.0; m];
    let mut p = vec![0.0; m];
    gradient(&field.values, &mut g);
    pre.apply(n, &g, &mut p);
    let mut alpha = 1.0;
    let mut delta = vec![0.0; m];
    let mut g_new = vec![0.0; m];

    for it in 0..=opts.max_iters {
        let grad_norm = max_abs(&p);
        if grad_norm <= opts.tol {
            let energy = gl_energy(&field, epsilon, spec)?;
            return Ok(DescentReport {
                field,
                energy,
                iterations: it,
                grad_norm,
                history,
            });
        }
        if it == opts.max_iters {
            return Err(FieldError::MaxItersExceeded {
                iterations: it,
                grad_norm,
            });
        }
        let gp = dot(&g, &p);
        let mut step = alpha;
        let de = loop {
            delta.iter_mut().zip(&p).for_each(|(d, q)| *d = -step * q);
            let de = energy_increment(&grid, n, &field.values, &delta, Some((pot_scale, spec)));
            if de <= -1e-4 * step * gp {
                break de;
            }
            step *= 0.5;
            if step < 1e-14 * alpha.max(1.0) {
                return Err(FieldError::LineSearchFailed {
                    iterations: it,
                    grad_norm,
                });
            }
        };
        field.values[..m].iter_mut().zip(&delta).for_each(|(x, d)| *x += d);
        energy += de;
        history.push(energy);
        gradient(&field.values, &mut g_new);
        // BB1 step in the K-metric: s^T K s / s^T y with s = -step p
        let sy = dot(&delta, &g_new) - dot(&delta, &g);
        let sks = step * step * gp;
        alpha = if sy > 0.0 { (sks / sy).clamp(1e-10, 1e10) } else { (2.0 * step).min(1e10) };
        std::mem::swap(&mut g, &mut g_new);
        pre.apply(n, &g, &mut p);
    }
    unreachable!()
}

fn check_index(field: &VectorField, e_index: usize) -> Result<usize, FieldError> {
    if e_index == 0 || e_index > field.n {
        Err(FieldError::InvalidArgument(format!(
            "component index must be in 1..={}, got {e_index}",
            field.n
        )))
    } else {
        Ok(e_index - 1)
    }
}

/// `max |u · e_index|` over all nodes (1-based index).
pub fn escape_metric(field: &VectorField, e_index: usize) -> Result<f64, FieldError> {
    let c = check_index(field, e_index)?;
    Ok(field.values.chunks_exact(field.n).fold(0.0, |m, u| m.max(u[c].abs())))
}

/// Keeps the first `dim_v` components, zeroes the rest and puts the norm of
/// the tail into the last component.
pub fn vertical_transform(field: &VectorField, dim_v: usize) -> Result<VectorField, FieldError> {
    if dim_v >= field.n {
        return Err(FieldError::InvalidArgument(format!(
            "dim_V must be < {}, got {dim_v}",
            field.n
        )));
    }
    let n = field.n;
    let transform = |u: &mut [f64]| {
        let tail = sq_norm(&u[dim_v..]).sqrt();
        u[dim_v..].iter_mut().for_each(|x| *x = 0.0);
        u[n - 1] = tail;
    };
    let mut out = field.clone();
    out.values.chunks_exact_mut(n).for_each(transform);
    out.boundary.values.chunks_exact_mut(n).for_each(transform);
    Ok(out)
}

/// Negates component `e_index` (1-based) everywhere, boundary included.
pub fn reflect(field: &VectorField, e_index: usize) -> Result<VectorField, FieldError> {
    let c = check_index(field, e_index)?;
    let n = field.n;
    let mut out = field.clone();
    out.values.chunks_exact_mut(n).for_each(|u| u[c] = -u[c]);
    out.boundary.values.chunks_exact_mut(n).for_each(|u| u[c] = -u[c]);
    Ok(out)
}

/// Rotates the domain by `steps` grid angles and the first two target
/// components by `-k` times that angle; equivariant fields are fixed.
pub fn rotation_action(field: &VectorField, k: i32, steps: usize) -> VectorField {
    let grid = field.grid;
    let nt = grid.n_theta();
    let n = field.n;
    let phi = -(k as f64) * steps as f64 * grid.dtheta();
    let (s, c) = phi.sin_cos();
    let mut out = field.clone();
    for i in 0..=grid.n_r() {
        for j in 0..nt {
            let src = field.at(i, (j + steps) % nt);
            let dst = out.at_mut(i, j);
            dst.copy_from_slice(src);
            dst[0] = c * src[0] - s * src[1];
            dst[1] = s * src[0] + c * src[1];
        }
    }
    for j in 0..nt {
        let v = out.at(grid.n_r(), j).to_vec();
        out.boundary.values[j * n..(j + 1) * n].copy_from_slice(&v);
    }
    out
}

/// Fraction of the discrete Dirichlet energy carried by angular mode `k` of
/// `u_1 + i u_2` and mode 0 of `u_3`.
pub fn mode_purity(field: &VectorField, k: i32) -> Result<f64, FieldError> {
    if field.n != 3 {
        return Err(FieldError::InvalidArgument(format!(
            "mode purity needs n = 3, got {}",
            field.n
        )));
    }
    let grid = field.grid;
    let nt = grid.n_theta();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nt);
    let ifft = planner.plan_fft_inverse(nt);
    let kk = k.rem_euclid(nt as i32) as usize;
    let rings: Vec<Vec<f64>> = (0..=grid.n_r())
        .into_par_iter()
        .map(|i| {
            let mut z: Vec<Complex<f64>> =
                (0..nt).map(|j| Complex::new(field.at(i, j)[0], field.at(i, j)[1])).collect();
            fft.process(&mut z);
            let mut keep = vec![Complex::new(0.0, 0.0); nt];
            keep[kk] = z[kk];
            ifft.process(&mut keep);
            let mean3 = (0..nt).map(|j| field.at(i, j)[2]).sum::<f64>() / nt as f64;
            let mut ring = Vec::with_capacity(nt * 3);
            for z in keep {
                ring.extend_from_slice(&[z.re / nt as f64, z.im / nt as f64, mean3]);
            }
            ring
        })
        .collect();
    let projected: Vec<f64> = rings.concat();
    let total = dirichlet_energy(&grid, 3, &field.values);
    if total == 0.0 {
        return Ok(1.0);
    }
    let part = dirichlet_energy(&grid, 3, &projected);
    Ok((part / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dichotomy {
    StrictlyPositive,
    IdenticallyZero,
    Mixed,
}

/// Flips component `e_index` if its mean on the innermost ring is negative.
pub fn sign_normalize(field: &VectorField, e_index: usize) -> Result<VectorField, FieldError> {
    let c = check_index(field, e_index)?;
    let nt = field.grid.n_theta();
    let mean = (0..nt).map(|j| field.at(0, j)[c]).sum::<f64>() / nt as f64;
    if mean < 0.0 {
        reflect(field, e_index)
    } else {
        Ok(field.clone())
    }
}

/// Classifies `u · e` over interior nodes after sign normalisation against
/// the threshold `h^2`.
pub fn dichotomy_check(field: &VectorField, e_index: usize) -> Result<Dichotomy, FieldError> {
    let field = sign_normalize(field, e_index)?;
    let c = e_index - 1;
    let h2 = field.grid.spacing().powi(2);
    let interior = &field.values[..field.interior_len()];
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for u in interior.chunks_exact(field.n) {
        lo = lo.min(u[c]);
        hi = hi.max(u[c].abs());
    }
    Ok(if hi < h2 {
        Dichotomy::IdenticallyZero
    } else if lo > h2 {
        Dichotomy::StrictlyPositive
    } else {
        Dichotomy::Mixed
    })
}
