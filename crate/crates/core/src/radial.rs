//! Singular two-point boundary value problems on `(0, 1)` for radial
//! profiles, solved by damped Newton iteration on a cell-centred
//! finite-volume grid.
//!
//! Three problems share the discretisation:
//!
//! * the coupled pair `(f, g)` of an equivariant degree-`k` field in the
//!   disk, `f(0) = 0, f(1) = 1, g'(0) = 0, g(1) = 0`;
//! * the flat branch `g = 0`, a scalar problem for `f` alone;
//! * the equator profile `h` in the unit ball of `R^m`, `h(0)=0, h(1)=1`.
//!
//! The radial Laplacian is written in flux form
//! `-(1/r^{m-1}) (r^{m-1} u')'`, so the face at `r = 0` has zero weight and no
//! value at the origin is ever needed. Residual rows are multiplied by `h^2`,
//! which keeps every row `O(1)`; all residual norms below are in that scale.

use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

use crate::banded::{BandMatrix, SingularMatrix};
use crate::potential::PotentialSpec;

pub const DEFAULT_NODES: usize = 512;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_NEWTON: usize = 60;
/// Smallest node count accepted by the pair solver.
pub const MIN_PAIR_NODES: usize = 32;
/// `g` below this in max-norm counts as the flat branch.
pub const FLAT_G_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadialError {
    #[error("grid needs at least {min} nodes, got {got}")]
    GridTooCoarse { got: usize, min: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("Newton iteration diverged: residual {residual:.3e} after {iterations} iterations")]
    NewtonDiverged { residual: f64, iterations: usize },
    #[error(transparent)]
    Singular(#[from] SingularMatrix),
}

/// Uniform cell-centred grid `r_i = (i + 1/2) h` on `(0, 1]` with
/// `h = 1 / (count - 1/2)`, so the last node sits exactly on `r = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialGrid {
    count: usize,
    dim_m: usize,
    h: f64,
}

impl RadialGrid {
    pub fn new(count: usize, dim_m: usize) -> Result<Self, RadialError> {
        if count < 4 {
            return Err(RadialError::InvalidGrid(format!(
                "need at least 4 nodes, got {count}"
            )));
        }
        if dim_m < 2 {
            return Err(RadialError::InvalidGrid(format!(
                "base dimension must be >= 2, got {dim_m}"
            )));
        }
        Ok(Self {
            count,
            dim_m,
            h: 1.0 / (count as f64 - 0.5),
        })
    }

    /// Disk grid (`m = 2`).
    pub fn disk(count: usize) -> Result<Self, RadialError> {
        Self::new(count, 2)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim_m(&self) -> usize {
        self.dim_m
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Index of the node on `r = 1`.
    pub fn boundary(&self) -> usize {
        self.count - 1
    }

    #[inline]
    pub fn r(&self, i: usize) -> f64 {
        if i == self.count - 1 {
            1.0
        } else {
            (i as f64 + 0.5) * self.h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.r(i)).collect()
    }

    /// Radius of the face between nodes `i` and `i + 1`.
    #[inline]
    pub fn face(&self, i: usize) -> f64 {
        (i as f64 + 1.0) * self.h
    }

    #[inline]
    fn pow_m1(&self, r: f64) -> f64 {
        r.powi(self.dim_m as i32 - 1)
    }

    /// Flux weight `r_{i+1/2}^{m-1} / h` of face `i`.
    #[inline]
    pub fn face_weight(&self, i: usize) -> f64 {
        self.pow_m1(self.face(i)) / self.h
    }

    /// Shell volume `∫ r^{m-1} dr` between the faces around node `i`; the
    /// boundary node owns the half shell `(1 - h/2, 1)`.
    #[inline]
    pub fn cell_weight(&self, i: usize) -> f64 {
        let m = self.dim_m as i32;
        let lo = if i == 0 { 0.0 } else { self.face(i - 1) };
        let hi = if i == self.count - 1 { 1.0 } else { self.face(i) };
        (hi.powi(m) - lo.powi(m)) / m as f64
    }

    /// Area of the unit sphere `S^{m-1}`, the angular factor of radial
    /// integrals.
    pub fn sphere_area(&self) -> f64 {
        sphere_area(self.dim_m)
    }

    /// `(-Δ_h u)_i` for an interior node, in physical (unscaled) units.
    #[inline]
    pub fn neg_laplacian(&self, u: &[f64], i: usize) -> f64 {
        let right = self.face_weight(i) * (u[i] - u[i + 1]);
        let left = if i == 0 {
            0.0
        } else {
            self.face_weight(i - 1) * (u[i] - u[i - 1])
        };
        (right + left) / self.cell_weight(i)
    }

    /// Four-point Lagrange interpolation of nodal values at radius `r`.
    pub fn interpolate(&self, vals: &[f64], r: f64) -> f64 {
        assert_eq!(vals.len(), self.count);
        let n = self.count;
        let x = r / self.h - 0.5;
        let base = (x.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
        let mut s = 0.0;
        for a in base..base + 4 {
            let mut l = 1.0;
            for b in base..base + 4 {
                if a != b {
                    l *= (r - self.r(b)) / (self.r(a) - self.r(b));
                }
            }
            s += l * vals[a];
        }
        s
    }
}

/// `|S^{m-1}| = 2 π^{m/2} / Γ(m/2)` for integer `m >= 1`.
pub fn sphere_area(m: usize) -> f64 {
    // Γ(m/2) via the half-integer recurrence
    let mut gamma = if m % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if m % 2 == 0 { 1.0 } else { 0.5 };
    while x < m as f64 / 2.0 - 1e-12 {
        gamma *= x;
        x += 1.0;
    }
    2.0 * PI.powf(m as f64 / 2.0) / gamma
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_NEWTON,
        }
    }
}

/// Radial profiles `(f, g)` of the field
/// `f(r) (cos kφ, sin kφ, 0) + g(r) e_3` on a disk grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePair {
    pub grid: RadialGrid,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub epsilon: f64,
    pub k: i32,
    pub newton_iterations: usize,
}

/// Which scalar problem a [`ScalarProfile`] solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    /// Flat branch of winding `k` (disk, `g = 0`).
    Flat { k: i32 },
    /// Equator profile in dimension `m`.
    Equator { m: usize },
}

impl ScalarKind {
    /// Coefficient `q` of the `q u / r^2` term.
    fn angular(&self) -> f64 {
        match *self {
            ScalarKind::Flat { k } => (k as f64).powi(2),
            ScalarKind::Equator { m } => m as f64 - 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarProfile {
    pub grid: RadialGrid,
    pub vals: Vec<f64>,
    pub epsilon: f64,
    pub kind: ScalarKind,
    pub newton_iterations: usize,
}

/// Result of [`solve_pair`]; non-existence of an escaping solution is a
/// legitimate outcome above the bifurcation threshold.
#[derive(Debug, Clone, PartialEq)]
pub enum PairSolution {
    Escaping(ProfilePair),
    NoEscapingSolution,
}

impl PairSolution {
    pub fn escaping(self) -> Option<ProfilePair> {
        match self {
            PairSolution::Escaping(p) => Some(p),
            PairSolution::NoEscapingSolution => None,
        }
    }

    pub fn is_escaping(&self) -> bool {
        matches!(self, PairSolution::Escaping(_))
    }
}

/// Something with a discrete ODE residual.
pub trait DiscreteResidual {
    /// Row-wise residual (interior rows scaled by `h^2`, then boundary rows).
    fn residual(&self, spec: &PotentialSpec) -> Vec<f64>;
}

/// Max-norm of the discrete residual, boundary rows included.
pub fn residual_norm<P: DiscreteResidual + ?Sized>(profile: &P, spec: &PotentialSpec) -> f64 {
    profile
        .residual(spec)
        .iter()
        .fold(0.0, |m, r| m.max(r.abs()))
}

impl DiscreteResidual for ProfilePair {
    fn residual(&self, spec: &PotentialSpec) -> Vec<f64> {
        pair_residual(&self.grid, &self.f, &self.g, self.k, self.epsilon, spec)
    }
}

impl DiscreteResidual for ScalarProfile {
    fn residual(&self, spec: &PotentialSpec) -> Vec<f64> {
        scalar_residual(&self.grid, &self.vals, self.kind.angular(), self.epsilon, spec)
    }
}

// Pair unknowns are interleaved: x[2i] = f_i, x[2i+1] = g_i.
fn pair_residual(
    grid: &RadialGrid,
    f: &[f64],
    g: &[f64],
    k: i32,
    epsilon: f64,
    spec: &PotentialSpec,
) -> Vec<f64> {
    let n = grid.count();
    let h2 = grid.spacing().powi(2);
    let k2 = (k as f64).powi(2);
    let inv_eps2 = 1.0 / (epsilon * epsilon);
    let mut res = vec![0.0; 2 * n];
    for i in 0..n - 1 {
        let r = grid.r(i);
        let wp = spec.wp_raw(1.0 - f[i] * f[i] - g[i] * g[i]) * inv_eps2;
        res[2 * i] = h2 * (grid.neg_laplacian(f, i) + k2 * f[i] / (r * r) - f[i] * wp);
        res[2 * i + 1] = h2 * (grid.neg_laplacian(g, i) - g[i] * wp);
    }
    res[2 * (n - 1)] = f[n - 1] - 1.0;
    res[2 * n - 1] = g[n - 1];
    res
}

fn scalar_residual(
    grid: &RadialGrid,
    u: &[f64],
    angular: f64,
    epsilon: f64,
    spec: &PotentialSpec,
) -> Vec<f64> {
    let n = grid.count();
    let h2 = grid.spacing().powi(2);
    let inv_eps2 = 1.0 / (epsilon * epsilon);
    let mut res = vec![0.0; n];
    for i in 0..n - 1 {
        let r = grid.r(i);
        let wp = spec.wp_raw(1.0 - u[i] * u[i]) * inv_eps2;
        res[i] = h2 * (grid.neg_laplacian(u, i) + angular * u[i] / (r * r) - u[i] * wp);
    }
    res[n - 1] = u[n - 1] - 1.0;
    res
}

/// Adds the `h^2`-scaled Laplacian stencil of node `i` to `jac`, with the
/// unknown of node `j` living at `stride * j + offset`.
fn add_laplacian_rows(jac: &mut BandMatrix, grid: &RadialGrid, i: usize, stride: usize, offset: usize) {
    let h2 = grid.spacing().powi(2);
    let vol = grid.cell_weight(i);
    let row = stride * i + offset;
    let right = h2 * grid.face_weight(i) / vol;
    jac.add(row, row, right);
    jac.add(row, stride * (i + 1) + offset, -right);
    if i > 0 {
        let left = h2 * grid.face_weight(i - 1) / vol;
        jac.add(row, row, left);
        jac.add(row, stride * (i - 1) + offset, -left);
    }
}

fn pair_jacobian(
    grid: &RadialGrid,
    f: &[f64],
    g: &[f64],
    k: i32,
    epsilon: f64,
    spec: &PotentialSpec,
) -> BandMatrix {
    let n = grid.count();
    let h2 = grid.spacing().powi(2);
    let k2 = (k as f64).powi(2);
    let inv_eps2 = 1.0 / (epsilon * epsilon);
    let mut jac = BandMatrix::zeros(2 * n, 3, 3);
    for i in 0..n - 1 {
        let r = grid.r(i);
        let t = 1.0 - f[i] * f[i] - g[i] * g[i];
        let wp = spec.wp_raw(t) * inv_eps2;
        let wpp = spec.wpp_fd(t) * inv_eps2;
        add_laplacian_rows(&mut jac, grid, i, 2, 0);
        add_laplacian_rows(&mut jac, grid, i, 2, 1);
        let (rf, rg) = (2 * i, 2 * i + 1);
        jac.add(rf, rf, h2 * (k2 / (r * r) - wp + 2.0 * f[i] * f[i] * wpp));
        jac.add(rf, rg, h2 * 2.0 * f[i] * g[i] * wpp);
        jac.add(rg, rg, h2 * (-wp + 2.0 * g[i] * g[i] * wpp));
        jac.add(rg, rf, h2 * 2.0 * f[i] * g[i] * wpp);
    }
    jac.set(2 * (n - 1), 2 * (n - 1), 1.0);
    jac.set(2 * n - 1, 2 * n - 1, 1.0);
    jac
}

fn scalar_jacobian(
    grid: &RadialGrid,
    u: &[f64],
    angular: f64,
    epsilon: f64,
    spec: &PotentialSpec,
) -> BandMatrix {
    let n = grid.count();
    let h2 = grid.spacing().powi(2);
    let inv_eps2 = 1.0 / (epsilon * epsilon);
    let mut jac = BandMatrix::zeros(n, 1, 1);
    for i in 0..n - 1 {
        let r = grid.r(i);
        let t = 1.0 - u[i] * u[i];
        let wp = spec.wp_raw(t) * inv_eps2;
        let wpp = spec.wpp_fd(t) * inv_eps2;
        add_laplacian_rows(&mut jac, grid, i, 1, 0);
        jac.add(i, i, h2 * (angular / (r * r) - wp + 2.0 * u[i] * u[i] * wpp));
    }
    jac.set(n - 1, n - 1, 1.0);
    jac
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton with Armijo backtracking on the Euclidean residual norm.
/// Returns the converged unknowns and the number of Newton steps taken.
fn damped_newton<R, J>(
    mut x: Vec<f64>,
    residual: R,
    jacobian: J,
    opts: NewtonOptions,
) -> Result<(Vec<f64>, usize), RadialError>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> BandMatrix,
{
    let mut res = residual(&x);
    for it in 0..=opts.max_iter {
        let norm_inf = max_abs(&res);
        if !norm_inf.is_finite() {
            break;
        }
        if norm_inf <= opts.tol {
            let x = polish(x, res, &residual, &jacobian);
            return Ok((x, it));
        }
        if it == opts.max_iter {
            break;
        }
        let lu = jacobian(&x).factor()?;
        let mut dx = res.clone();
        lu.solve_in_place(&mut dx);
        let norm = l2(&res);
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a - step * d).collect();
            let trial_res = residual(&trial);
            let trial_norm = l2(&trial_res);
            if trial_norm.is_finite() && trial_norm <= (1.0 - 1e-4 * step) * norm {
                x = trial;
                res = trial_res;
                break;
            }
            step *= 0.5;
            if step < 1e-10 {
                // roundoff floor: accept when already tiny in max-norm
                if norm_inf <= 100.0 * opts.tol {
                    return Ok((x, it));
                }
                return Err(RadialError::NewtonDiverged {
                    residual: norm_inf,
                    iterations: it,
                });
            }
        }
    }
    Err(RadialError::NewtonDiverged {
        residual: max_abs(&res),
        iterations: opts.max_iter,
    })
}

/// Undamped Newton steps after convergence, kept while each one at least
/// halves the residual. Drives slowly decaying components (such as a
/// vanishing `g` next to the flat branch) down to roundoff.
fn polish<R, J>(mut x: Vec<f64>, mut res: Vec<f64>, residual: &R, jacobian: &J) -> Vec<f64>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> BandMatrix,
{
    for _ in 0..4 {
        let Ok(lu) = jacobian(&x).factor() else { break };
        let mut dx = res.clone();
        lu.solve_in_place(&mut dx);
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a - d).collect();
        let trial_res = residual(&trial);
        if !(max_abs(&trial_res) <= 0.5 * max_abs(&res)) {
            break;
        }
        x = trial;
        res = trial_res;
    }
    x
}

fn interleave(f: &[f64], g: &[f64]) -> Vec<f64> {
    f.iter().zip(g).flat_map(|(&a, &b)| [a, b]).collect()
}

fn deinterleave(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (x.iter().step_by(2).copied().collect(), x.iter().skip(1).step_by(2).copied().collect())
}

fn check_k(k: i32) -> Result<i32, RadialError> {
    if k == 0 {
        Err(RadialError::InvalidArgument("winding number must be nonzero".into()))
    } else {
        Ok(k.abs())
    }
}

fn check_epsilon(epsilon: f64) -> Result<(), RadialError> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(RadialError::InvalidArgument(format!("epsilon must be positive, got {epsilon}")))
    }
}

fn check_disk(grid: &RadialGrid) -> Result<(), RadialError> {
    if grid.dim_m() != 2 {
        return Err(RadialError::InvalidGrid(format!(
            "disk problem needs dim_m = 2, got {}",
            grid.dim_m()
        )));
    }
    Ok(())
}

/// The escaping seed `f = r^{|k|}`, `g = cos(π r / 2)`.
pub fn escaping_seed(k: i32, grid: &RadialGrid) -> ProfilePair {
    let k = k.unsigned_abs() as i32;
    let r = grid.nodes();
    ProfilePair {
        grid: *grid,
        f: r.iter().map(|r| r.powi(k)).collect(),
        g: r.iter().map(|r| (0.5 * PI * r).cos()).collect(),
        epsilon: f64::NAN,
        k,
        newton_iterations: 0,
    }
}

fn pin_pair_boundary(f: &mut [f64], g: &mut [f64]) {
    let n = f.len();
    f[n - 1] = 1.0;
    g[n - 1] = 0.0;
}

enum Attempt {
    Escaping(Vec<f64>, Vec<f64>, usize),
    Flat,
    Other,
}

fn attempt_pair(
    mut f: Vec<f64>,
    mut g: Vec<f64>,
    k: i32,
    epsilon: f64,
    spec: &PotentialSpec,
    grid: &RadialGrid,
    opts: NewtonOptions,
) -> Result<Attempt, RadialError> {
    pin_pair_boundary(&mut f, &mut g);
    let (x, iters) = damped_newton(
        interleave(&f, &g),
        |x| {
            let (f, g) = deinterleave(x);
            pair_residual(grid, &f, &g, k, epsilon, spec)
        },
        |x| {
            let (f, g) = deinterleave(x);
            pair_jacobian(grid, &f, &g, k, epsilon, spec)
        },
        opts,
    )?;
    let (f, mut g) = deinterleave(&x);
    let interior = &g[..g.len() - 1];
    if max_abs(interior) < FLAT_G_THRESHOLD {
        return Ok(Attempt::Flat);
    }
    if interior.iter().all(|&v| v < 0.0) {
        g.iter_mut().for_each(|v| *v = -*v);
        g[grid.boundary()] = 0.0;
    }
    let interior = &g[..g.len() - 1];
    if interior.iter().all(|&v| v > 0.0) && f[..f.len() - 1].iter().all(|&v| v > 0.0) {
        Ok(Attempt::Escaping(f, g, iters))
    } else {
        Ok(Attempt::Other)
    }
}

/// Solves the coupled pair system for an escaping solution (`g > 0`).
///
/// The retry schedule is: the supplied `init` (if any), the escaping seed,
/// and the seed with `0.1 sin(π r)` added to `g`. If no attempt reaches an
/// escaping solution the outcome is [`PairSolution::NoEscapingSolution`]
/// when at least one attempt converged (to the flat branch or to a
/// sign-changing `g`), and [`RadialError::NewtonDiverged`] otherwise.
pub fn solve_pair(
    epsilon: f64,
    k: i32,
    spec: &PotentialSpec,
    grid: &RadialGrid,
    init: Option<&ProfilePair>,
) -> Result<PairSolution, RadialError> {
    solve_pair_with(epsilon, k, spec, grid, init, NewtonOptions::default())
}

pub fn solve_pair_with(
    epsilon: f64,
    k: i32,
    spec: &PotentialSpec,
    grid: &RadialGrid,
    init: Option<&ProfilePair>,
    opts: NewtonOptions,
) -> Result<PairSolution, RadialError> {
    check_disk(grid)?;
    check_epsilon(epsilon)?;
    let k = check_k(k)?;
    if grid.count() < MIN_PAIR_NODES {
        return Err(RadialError::GridTooCoarse {
            got: grid.count(),
            min: MIN_PAIR_NODES,
        });
    }

    let seed = escaping_seed(k, grid);
    let mut perturbed = seed.clone();
    for (i, g) in perturbed.g.iter_mut().enumerate() {
        *g += 0.1 * (PI * grid.r(i)).sin();
    }
    let mut schedule: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(3);
    if let Some(p) = init {
        if p.grid != *grid {
            return Err(RadialError::InvalidArgument("init lives on a different grid".into()));
        }
        schedule.push((p.f.clone(), p.g.clone()));
    }
    schedule.push((seed.f, seed.g));
    schedule.push((perturbed.f, perturbed.g));

    let mut any_converged = false;
    let mut last_err = None;
    for (f, g) in schedule {
        match attempt_pair(f, g, k, epsilon, spec, grid, opts) {
            Ok(Attempt::Escaping(f, g, newton_iterations)) => {
                return Ok(PairSolution::Escaping(ProfilePair {
                    grid: *grid,
                    f,
                    g,
                    epsilon,
                    k,
                    newton_iterations,
                }))
            }
            Ok(_) => any_converged = true,
            Err(e) => last_err = Some(e),
        }
    }
    match (any_converged, last_err) {
        (true, _) | (false, None) => Ok(PairSolution::NoEscapingSolution),
        (false, Some(e)) => Err(e),
    }
}

fn solve_scalar(
    kind: ScalarKind,
    epsilon: f64,
    spec: &PotentialSpec,
    grid: &RadialGrid,
    init: Vec<f64>,
    opts: NewtonOptions,
) -> Result<ScalarProfile, RadialError> {
    check_epsilon(epsilon)?;
    let angular = kind.angular();
    let mut init = init;
    let n = grid.count();
    init[n - 1] = 1.0;
    let (vals, newton_iterations) = damped_newton(
        init,
        |u| scalar_residual(grid, u, angular, epsilon, spec),
        |u| scalar_jacobian(grid, u, angular, epsilon, spec),
        opts,
    )?;
    Ok(ScalarProfile {
        grid: *grid,
        vals,
        epsilon,
        kind,
        newton_iterations,
    })
}

/// Largest `ε` at which a continuation path starts.
const CONTINUATION_START: f64 = 1.0;

/// Cold solve from `seed`; if Newton fails, walks `ε` down geometrically from
/// `CONTINUATION_START`, warm-starting every step and shrinking the step on
/// failure. The returned iteration count is that of the final solve.
fn solve_scalar_continued(
    kind: ScalarKind,
    epsilon: f64,
    spec: &PotentialSpec,
    grid: &RadialGrid,
    seed: Vec<f64>,
    opts: NewtonOptions,
) -> Result<ScalarProfile, RadialError> {
    check_epsilon(epsilon)?;
    let direct = solve_scalar(kind, epsilon, spec, grid, seed.clone(), opts);
    if direct.is_ok() || epsilon >= CONTINUATION_START {
        return direct;
    }
    let mut current = solve_scalar(kind, CONTINUATION_START, spec, grid, seed, opts)?;
    let mut ratio: f64 = 0.7;
    while current.epsilon > epsilon {
        let next = (current.epsilon * ratio).max(epsilon);
        match solve_scalar(kind, next, spec, grid, current.vals.clone(), opts) {
            Ok(sol) => {
                current = sol;
                ratio = (ratio * ratio).max(0.5);
            }
            Err(e) => {
                ratio = ratio.sqrt();
                if ratio > 0.999 {
                    return Err(e);
                }
            }
        }
    }
    Ok(current)
}

/// Flat-branch profile: the pair system with `g = 0`.
pub fn solve_flat(
    epsilon: f64,
    k: i32,
    spec: &PotentialSpec,
    grid: &RadialGrid,
) -> Result<ScalarProfile, RadialError> {
    solve_flat_from(epsilon, k, spec, grid, None)
}

/// [`solve_flat`] with an optional warm start (e.g. the solution at a nearby
/// `epsilon`). Falls back to the cold seed `r^{|k|}` if the warm start fails.
pub fn solve_flat_from(
    epsilon: f64,
    k: i32,
    spec: &PotentialSpec,
    grid: &RadialGrid,
    init: Option<&ScalarProfile>,
) -> Result<ScalarProfile, RadialError> {
    check_disk(grid)?;
    let k = check_k(k)?;
    let kind = ScalarKind::Flat { k };
    let opts = NewtonOptions::default();
    if let Some(p) = init.filter(|p| p.grid == *grid) {
        if let Ok(sol) = solve_scalar(kind, epsilon, spec, grid, p.vals.clone(), opts) {
            return Ok(sol);
        }
    }
    let seed = grid.nodes().iter().map(|r| r.powi(k)).collect();
    solve_scalar_continued(kind, epsilon, spec, grid, seed, opts)
}

/// Profile `h` of the equator-type critical point `h(|x|) x/|x|` in the unit
/// ball of `R^m`; the grid must carry `dim_m = m`.
pub fn solve_equator(
    epsilon: f64,
    m: usize,
    spec: &PotentialSpec,
    grid: &RadialGrid,
) -> Result<ScalarProfile, RadialError> {
    if grid.dim_m() != m {
        return Err(RadialError::InvalidGrid(format!(
            "equator problem in dimension {m} needs dim_m = {m}, got {}",
            grid.dim_m()
        )));
    }
    let seed = grid.nodes();
    solve_scalar_continued(ScalarKind::Equator { m }, epsilon, spec, grid, seed, NewtonOptions::default())
}

/// The `ε → 0` limit pair `f = 2r^k/(1+r^{2k})`, `g = (1-r^{2k})/(1+r^{2k})`.
/// Its `epsilon` is set to `0`; assign a positive value before evaluating a
/// residual.
pub fn limit_profile(k: i32, grid: &RadialGrid) -> Result<ProfilePair, RadialError> {
    check_disk(grid)?;
    let k = check_k(k)?;
    let (f, g) = grid
        .nodes()
        .iter()
        .map(|&r| {
            let rk = r.powi(k);
            let d = 1.0 + rk * rk;
            (2.0 * rk / d, (1.0 - rk * rk) / d)
        })
        .unzip();
    Ok(ProfilePair {
        grid: *grid,
        f,
        g,
        epsilon: 0.0,
        k,
        newton_iterations: 0,
    })
}

/// Discrete energy of the equivariant field built from `pair`, i.e. the
/// polar-grid energy restricted to the ansatz, integrated over the disk.
pub fn radial_energy(pair: &ProfilePair, spec: &PotentialSpec) -> RadialEnergy {
    let grid = &pair.grid;
    let n = grid.count();
    let k2 = (pair.k as f64).powi(2);
    let mut dirichlet = 0.0;
    let mut potential = 0.0;
    for i in 0..n - 1 {
        let df = pair.f[i + 1] - pair.f[i];
        let dg = pair.g[i + 1] - pair.g[i];
        dirichlet += 0.5 * grid.face_weight(i) * (df * df + dg * dg);
    }
    for i in 0..n {
        let r = grid.r(i);
        let vol = grid.cell_weight(i);
        dirichlet += 0.5 * vol * k2 * pair.f[i].powi(2) / (r * r);
        let t = 1.0 - pair.f[i].powi(2) - pair.g[i].powi(2);
        potential += vol * spec.w_raw(t) / (2.0 * pair.epsilon.powi(2));
    }
    let two_pi = 2.0 * PI;
    RadialEnergy {
        dirichlet: two_pi * dirichlet,
        potential: two_pi * potential,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialEnergy {
    pub dirichlet: f64,
    pub potential: f64,
}

impl RadialEnergy {
    pub fn total(&self) -> f64 {
        self.dirichlet + self.potential
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

impl ProfilePair {
    /// CSV with header `r,f,g`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,f,g\n");
        for (i, r) in self.grid.nodes().into_iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", fmt17(r), fmt17(self.f[i]), fmt17(self.g[i]));
        }
        s
    }

    pub fn max_norm_sq(&self) -> f64 {
        self.f
            .iter()
            .zip(&self.g)
            .fold(0.0, |m, (f, g)| m.max(f * f + g * g))
    }
}

impl ScalarProfile {
    /// CSV with header `r,val`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,val\n");
        for (i, r) in self.grid.nodes().into_iter().enumerate() {
            let _ = writeln!(s, "{},{}", fmt17(r), fmt17(self.vals[i]));
        }
        s
    }

    /// Winding number of a flat-branch profile.
    pub fn winding(&self) -> Option<i32> {
        match self.kind {
            ScalarKind::Flat { k } => Some(k),
            ScalarKind::Equator { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::builtin_quartic;

    #[test]
    fn grid_layout() {
        let g = RadialGrid::disk(8).unwrap();
        assert_eq!(g.r(7), 1.0);
        assert!((g.r(0) - 0.5 * g.spacing()).abs() < 1e-15);
        assert!((g.spacing() - 1.0 / 7.5).abs() < 1e-15);
        assert!(((7.0 + 0.5) * g.spacing() - 1.0).abs() < 1e-14);
        let r = g.nodes();
        assert!(r.windows(2).all(|w| w[1] > w[0]));
        assert!(RadialGrid::new(8, 1).is_err());
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
        // |S^6| = 16 π^3 / 15
        assert!((sphere_area(7) - 16.0 * PI.powi(3) / 15.0).abs() < 1e-11);
    }

    #[test]
    fn laplacian_is_exact_on_low_order_polynomials() {
        // flux form reproduces -Δ r^2 = -4 (m=2) and -Δ r^2 = -2m in general
        for m in [2usize, 3, 7] {
            let g = RadialGrid::new(40, m).unwrap();
            let u: Vec<f64> = g.nodes().iter().map(|r| r * r).collect();
            for i in 0..g.count() - 1 {
                assert!((g.neg_laplacian(&u, i) + 2.0 * m as f64).abs() < 1e-8, "m={m} i={i}");
            }
        }
    }

    #[test]
    fn interpolation_reproduces_cubics() {
        let g = RadialGrid::disk(20).unwrap();
        let p = |r: f64| 1.0 - 2.0 * r + 0.5 * r * r * r;
        let vals: Vec<f64> = g.nodes().iter().map(|&r| p(r)).collect();
        for r in [0.0, 0.01, 0.33, 0.5, 0.97, 1.0] {
            assert!((g.interpolate(&vals, r) - p(r)).abs() < 1e-12);
        }
    }

    #[test]
    fn limit_profile_values() {
        let g = RadialGrid::disk(64).unwrap();
        let p = limit_profile(1, &g).unwrap();
        let b = g.boundary();
        assert!((p.f[b] - 1.0).abs() < 1e-15 && p.g[b].abs() < 1e-15);
        assert!(p.g[0] > 1.0 - 1e-3);
        for i in 0..g.count() {
            assert!((p.f[i].powi(2) + p.g[i].powi(2) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_profile_has_large_residual() {
        let g = RadialGrid::disk(64).unwrap();
        let p = ProfilePair {
            grid: g,
            f: vec![0.0; 64],
            g: vec![0.0; 64],
            epsilon: 0.3,
            k: 1,
            newton_iterations: 0,
        };
        assert!(residual_norm(&p, &builtin_quartic()) >= 1.0);
    }

    #[test]
    fn pair_rejects_bad_input() {
        let w = builtin_quartic();
        let coarse = RadialGrid::disk(16).unwrap();
        assert_eq!(
            solve_pair(0.1, 1, &w, &coarse, None),
            Err(RadialError::GridTooCoarse { got: 16, min: 32 })
        );
        let ball = RadialGrid::new(64, 3).unwrap();
        assert!(matches!(solve_pair(0.1, 1, &w, &ball, None), Err(RadialError::InvalidGrid(_))));
        let disk = RadialGrid::disk(64).unwrap();
        assert!(matches!(solve_pair(0.1, 0, &w, &disk, None), Err(RadialError::InvalidArgument(_))));
        assert!(matches!(solve_pair(-1.0, 1, &w, &disk, None), Err(RadialError::InvalidArgument(_))));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let w = builtin_quartic();
        let grid = RadialGrid::disk(12).unwrap();
        let seed = escaping_seed(2, &grid);
        let x = interleave(&seed.f, &seed.g);
        let jac = pair_jacobian(&grid, &seed.f, &seed.g, 2, 0.3, &w);
        let res = |x: &[f64]| {
            let (f, g) = deinterleave(x);
            pair_residual(&grid, &f, &g, 2, 0.3, &w)
        };
        let d = 1e-7;
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += d;
            xm[j] -= d;
            let (rp, rm) = (res(&xp), res(&xm));
            for i in 0..x.len() {
                let fd = (rp[i] - rm[i]) / (2.0 * d);
                assert!((fd - jac.get(i, j)).abs() < 1e-6, "({i},{j}) fd={fd} jac={}", jac.get(i, j));
            }
        }
    }
}
