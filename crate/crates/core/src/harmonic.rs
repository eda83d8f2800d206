//! Sphere-valued maps on the disk: Dirichlet energy minimisation under the
//! constraint `|u| = 1`, the explicit degree-`k` harmonic maps, the second
//! variation in a normal direction, and the Hardy-inequality test behind the
//! equator map's stability in dimension `m`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{
    boundary_degree_k, boundary_horizontal, dirichlet_energy_of, dirichlet_gradient, dot,
    energy_increment, max_abs, BoundaryData, DescentOptions, DiskGrid, FieldError, Preconditioner,
    VectorField,
};
use crate::radial::sphere_area;
use crate::spectral::{first_eigenvalue, hardy_margin, LinearizedOperator};

pub const UNIT_TOL: f64 = 1e-12;
pub const PERP_TOL: f64 = 1e-10;
const LBFGS_MEMORY: usize = 8;
const ROUNDOFF_SLACK: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarmonicError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("zero vector at node ({0}, {1}) cannot be projected to the sphere")]
    ZeroVector(usize, usize),
    #[error("boundary data is not unit-valued at angle {0}")]
    NonUnitBoundary(usize),
    #[error("field is not orthogonal to e: max |u.e| = {0:.3e}")]
    NotInEPerp(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A [`VectorField`] with unit vectors at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereField(VectorField);

impl SphereField {
    /// Normalises every interior node; the boundary data must already be
    /// unit-valued.
    pub fn project(mut field: VectorField) -> Result<Self, HarmonicError> {
        let n = field.n;
        for (j, b) in field.boundary.values.chunks_exact(n).enumerate() {
            if (norm(b) - 1.0).abs() > UNIT_TOL {
                return Err(HarmonicError::NonUnitBoundary(j));
            }
        }
        let nt = field.grid.n_theta();
        let m = field.interior_len();
        for (idx, u) in field.values[..m].chunks_exact_mut(n).enumerate() {
            let s = norm(u);
            if s == 0.0 {
                return Err(HarmonicError::ZeroVector(idx / nt, idx % nt));
            }
            u.iter_mut().for_each(|x| *x /= s);
        }
        Ok(Self(field))
    }

    pub fn field(&self) -> &VectorField {
        &self.0
    }

    pub fn into_field(self) -> VectorField {
        self.0
    }

    pub fn grid(&self) -> &DiskGrid {
        &self.0.grid
    }

    /// `max | |u| - 1 |` over all nodes.
    pub fn unit_defect(&self) -> f64 {
        self.0
            .values
            .chunks_exact(self.0.n)
            .fold(0.0, |m, u| m.max((norm(u) - 1.0).abs()))
    }
}

fn norm(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Discrete Dirichlet energy `½ ∫ |∇u|^2`.
pub fn hm_energy(field: &SphereField) -> f64 {
    dirichlet_energy_of(&field.0)
}

/// The degree-`k` maps `(2r^k/(1+r^{2k}) (cos kθ, sin kθ), ±(1-r^{2k})/(1+r^{2k}))`.
pub fn explicit_degree_k(k: i32, sign: f64, grid: &DiskGrid) -> Result<SphereField, HarmonicError> {
    if sign != 1.0 && sign != -1.0 {
        return Err(HarmonicError::InvalidArgument(format!("sign must be +1 or -1, got {sign}")));
    }
    let boundary = boundary_degree_k(k, 3, grid)?;
    let kk = k.abs();
    let field = VectorField::from_fn(*grid, boundary, |r, t| {
        let rk = r.powi(kk);
        let d = 1.0 + rk * rk;
        let f = 2.0 * rk / d;
        let kt = k as f64 * t;
        vec![f * kt.cos(), f * kt.sin(), sign * (1.0 - rk * rk) / d]
    })?;
    // the formula is unit up to roundoff; projection removes that
    SphereField::project(field)
}

/// `u_a(x) = (cos a x_1, sin a x_1, 0, ...)` on the whole grid, plus
/// `perturb · φ_1(r)` in the last component before projection, where `φ_1`
/// is the first Dirichlet eigenfunction of the disk scaled to max 1.
pub fn horizontal_init(
    a: f64,
    n: usize,
    grid: &DiskGrid,
    perturb: f64,
) -> Result<SphereField, HarmonicError> {
    let boundary = boundary_horizontal(a, n, grid)?;
    let phi = if perturb != 0.0 {
        let res = first_eigenvalue(&LinearizedOperator::laplacian(grid.radial_grid()))
            .map_err(|e| HarmonicError::InvalidArgument(e.to_string()))?;
        let top = res.eigenfunction.iter().fold(0.0f64, |m, v| m.max(*v));
        res.eigenfunction.iter().map(|v| v / top).collect()
    } else {
        vec![0.0; grid.n_r() + 1]
    };
    let mut field = VectorField::from_fn(*grid, boundary, |r, t| {
        let x1 = r * t.cos();
        let mut v = vec![0.0; n];
        v[0] = (a * x1).cos();
        v[1] = (a * x1).sin();
        v
    })?;
    for i in 0..grid.n_r() {
        for j in 0..grid.n_theta() {
            field.at_mut(i, j)[n - 1] += perturb * phi[i];
        }
    }
    SphereField::project(field)
}

#[derive(Debug, Clone)]
pub struct HmReport {
    pub field: SphereField,
    pub energy: f64,
    pub iterations: usize,
    /// Max-norm of the tangential preconditioned gradient at exit.
    pub grad_norm: f64,
    pub history: Vec<f64>,
    /// Largest `| |u| - 1 |` seen after any accepted step.
    pub max_unit_defect: f64,
}

fn tangential(vals: &[f64], v: &mut [f64], n: usize) {
    for (u, w) in vals.chunks_exact(n).zip(v.chunks_exact_mut(n)) {
        let d: f64 = u.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
        w.iter_mut().zip(u).for_each(|(x, a)| *x -= d * a);
    }
}

/// Projected gradient descent for the Dirichlet energy on sphere-valued
/// maps. Search directions come from L-BFGS on the tangential gradient with
/// the stiffness matrix as base metric, projected to the tangent space; each
/// step renormalises nodewise and backtracks on the true energy change.
pub fn hm_descent(init: &SphereField, opts: DescentOptions) -> Result<HmReport, HarmonicError> {
    let field0 = &init.0;
    if let Some(j) = field0.boundary_mismatch() {
        return Err(FieldError::BoundaryMismatch(j).into());
    }
    let grid = field0.grid;
    let n = field0.n;
    let m = field0.interior_len();
    let pre = Preconditioner::new(&grid);

    let mut field = field0.clone();
    let mut energy = dirichlet_energy_of(&field);
    let mut history = vec![energy];
    let mut max_unit_defect = init.unit_defect();

    let mut g = vec![0.0; m];
    let mut p = vec![0.0; m];
    let riemannian = |vals: &[f64], g: &mut [f64], p: &mut [f64]| {
        dirichlet_gradient(&grid, n, vals, g);
        tangential(&vals[..m], g, n);
        pre.apply(n, g, p);
        tangential(&vals[..m], p, n);
    };
    riemannian(&field.values, &mut g, &mut p);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(LBFGS_MEMORY);
    let mut dir = vec![0.0; m];
    let mut delta = vec![0.0; m];
    let mut trial = vec![0.0; m];
    let mut g_new = vec![0.0; m];
    let mut p_new = vec![0.0; m];

    for it in 0..=opts.max_iters {
        let grad_norm = max_abs(&p);
        if grad_norm <= opts.tol {
            return Ok(HmReport {
                field: SphereField(field),
                energy,
                iterations: it,
                grad_norm,
                history,
                max_unit_defect,
            });
        }
        if it == opts.max_iters {
            return Err(FieldError::MaxItersExceeded {
                iterations: it,
                grad_norm,
            }
            .into());
        }
        lbfgs_direction(&memory, &g, &pre, n, &mut dir);
        tangential(&field.values[..m], &mut dir, n);
        let mut gd = dot(&g, &dir);
        if !(gd > 0.0) {
            memory.clear();
            dir.copy_from_slice(&p);
            gd = dot(&g, &dir);
        }
        let mut step = 1.0;
        let de = loop {
            for ((t, u), q) in trial
                .chunks_exact_mut(n)
                .zip(field.values[..m].chunks_exact(n))
                .zip(dir.chunks_exact(n))
            {
                for c in 0..n {
                    t[c] = u[c] - step * q[c];
                }
                let s = norm(t);
                t.iter_mut().for_each(|x| *x /= s);
            }
            delta
                .iter_mut()
                .zip(trial.iter().zip(&field.values[..m]))
                .for_each(|(d, (t, u))| *d = t - u);
            let de = energy_increment(&grid, n, &field.values, &delta, None);
            // energy differences below roundoff of E carry no information
            if de <= -1e-4 * step * gd + ROUNDOFF_SLACK * energy.abs() {
                break de;
            }
            step *= 0.5;
            if step < 1e-14 {
                return Err(FieldError::LineSearchFailed {
                    iterations: it,
                    grad_norm,
                }
                .into());
            }
        };
        field.values[..m].copy_from_slice(&trial);
        energy += de;
        history.push(energy);
        for u in field.values[..m].chunks_exact(n) {
            max_unit_defect = max_unit_defect.max((norm(u) - 1.0).abs());
        }
        riemannian(&field.values, &mut g_new, &mut p_new);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&delta, &y);
        if sy > 1e-12 * dot(&delta, &delta).sqrt() * dot(&y, &y).sqrt() {
            if memory.len() == LBFGS_MEMORY {
                memory.pop_front();
            }
            memory.push_back((delta.clone(), y, 1.0 / sy));
        }
        std::mem::swap(&mut g, &mut g_new);
        std::mem::swap(&mut p, &mut p_new);
    }
    unreachable!()
}

/// Two-loop recursion with `γ K^{-1}` as the initial inverse Hessian.
fn lbfgs_direction(
    memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    g: &[f64],
    pre: &Preconditioner,
    n: usize,
    out: &mut [f64],
) {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(x, b)| *x -= a * b);
        alphas.push(a);
    }
    pre.apply(n, &q, out);
    if let Some((s, y, _)) = memory.back() {
        let mut ky = vec![0.0; y.len()];
        pre.apply(n, y, &mut ky);
        let gamma = dot(s, y) / dot(y, &ky);
        out.iter_mut().for_each(|x| *x *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, out);
        out.iter_mut().zip(s).for_each(|(x, c)| *x += (a - b) * c);
    }
}

/// Discrete `∫ |∇φ|^2 - |∇u|^2 φ^2`, edge by edge, for a scalar `φ` given
/// at every node (`phi[i * n_theta + j]`, boundary ring last and zero).
///
/// Requires `u · e = 0` everywhere (1-based `e_index`).
pub fn second_variation_hm(
    field: &SphereField,
    phi: &[f64],
    e_index: usize,
) -> Result<f64, HarmonicError> {
    let f = &field.0;
    let grid = f.grid;
    let nt = grid.n_theta();
    if phi.len() != grid.node_count() {
        return Err(HarmonicError::InvalidArgument(format!(
            "phi needs {} entries, got {}",
            grid.node_count(),
            phi.len()
        )));
    }
    if e_index == 0 || e_index > f.n {
        return Err(HarmonicError::InvalidArgument(format!("bad component index {e_index}")));
    }
    let c = e_index - 1;
    let off = f.values.chunks_exact(f.n).fold(0.0f64, |m, u| m.max(u[c].abs()));
    if off > PERP_TOL {
        return Err(HarmonicError::NotInEPerp(off));
    }
    // edge weights are those of the Dirichlet energy: evaluate the energy of
    // single edges through a two-ring helper
    let radial = grid.radial_grid();
    let mut s = 0.0;
    for i in 0..=grid.n_r() {
        let a = if i < grid.n_r() { radial.face_weight(i) * grid.dtheta() } else { 0.0 };
        let r = grid.r(i);
        let b = radial.cell_weight(i) / (r * r * grid.dtheta());
        for j in 0..nt {
            let p0 = phi[i * nt + j];
            let u0 = f.at(i, j);
            if i < grid.n_r() {
                let p1 = phi[(i + 1) * nt + j];
                let du = sq_dist(u0, f.at(i + 1, j));
                s += a * ((p1 - p0).powi(2) - 0.5 * du * (p0 * p0 + p1 * p1));
            }
            let jn = (j + 1) % nt;
            let p1 = phi[i * nt + jn];
            let du = sq_dist(u0, f.at(i, jn));
            s += b * ((p1 - p0).powi(2) - 0.5 * du * (p0 * p0 + p1 * p1));
        }
    }
    Ok(s)
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Discrete `L^2` norm squared of a scalar nodal function on the disk.
pub fn scalar_l2_sq(grid: &DiskGrid, phi: &[f64]) -> f64 {
    let radial = grid.radial_grid();
    let nt = grid.n_theta();
    let mut s = 0.0;
    for i in 0..=grid.n_r() {
        let w = radial.cell_weight(i) * grid.dtheta();
        s += w * phi[i * nt..(i + 1) * nt].iter().map(|x| x * x).sum::<f64>();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub m: usize,
    pub margin: f64,
    pub verdict: Verdict,
    /// Value of `∫|∇φ|^2 - (m-1) ∫ φ^2/r^2` for the truncated
    /// `r^{-(m-2)/2}` test function; negative certifies instability.
    pub test_value: f64,
}

/// Geometric-grid quadrature for the Hardy test.
const TEST_INNER: f64 = 1e-6;
const TEST_NODES: usize = 4000;

fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
    }
}

/// `r^{-(m-2)/2}` cut off smoothly (in `log r`) on `[δ, 2δ]` and `[1/2, 1]`.
pub fn hardy_test_function(m: usize, r: f64) -> f64 {
    let beta = (m as f64 - 2.0) / 2.0;
    let ln2 = std::f64::consts::LN_2;
    let inner = smooth_step((r / TEST_INNER).ln() / ln2);
    let outer = smooth_step(-r.ln() / ln2);
    r.powf(-beta) * inner * outer
}

/// `|S^{m-1}| ∫_0^1 (φ'^2 - (m-1) φ^2 / r^2) r^{m-1} dr` on a geometric grid.
pub fn equator_hm_form<F: Fn(f64) -> f64>(m: usize, phi: F) -> f64 {
    let ln_lo = TEST_INNER.ln();
    let r: Vec<f64> = (0..=TEST_NODES)
        .map(|j| (ln_lo * (1.0 - j as f64 / TEST_NODES as f64)).exp())
        .collect();
    let v: Vec<f64> = r.iter().map(|&x| phi(x)).collect();
    let mf = m as f64;
    let mut s = 0.0;
    for j in 0..TEST_NODES {
        let dr = r[j + 1] - r[j];
        let mid = (r[j] * r[j + 1]).sqrt();
        let d = (v[j + 1] - v[j]) / dr;
        s += d * d * mid.powf(mf - 1.0) * dr;
        // trapezoid for the potential term
        let f0 = v[j] * v[j] * r[j].powf(mf - 3.0);
        let f1 = v[j + 1] * v[j + 1] * r[j + 1].powf(mf - 3.0);
        s -= (mf - 1.0) * 0.5 * (f0 + f1) * dr;
    }
    sphere_area(m) * s
}

/// Stability of the equator map `x/|x|` in the unit ball of `R^m`, decided
/// by the sign of the Hardy margin; the truncated `r^{-(m-2)/2}` test value
/// is reported and is negative whenever the margin is.
pub fn equator_hm_margin_experiment(m: usize) -> Result<StabilityVerdict, HarmonicError> {
    if !(2..=10).contains(&m) {
        return Err(HarmonicError::InvalidArgument(format!("m must be in 2..=10, got {m}")));
    }
    let margin = hardy_margin(m);
    Ok(StabilityVerdict {
        m,
        margin,
        verdict: if margin >= 0.0 { Verdict::Stable } else { Verdict::Unstable },
        test_value: equator_hm_form(m, |r| hardy_test_function(m, r)),
    })
}

/// Boundary data on the sphere for a horizontal map, re-exported for callers
/// building harmonic experiments.
pub fn horizontal_boundary(a: f64, n: usize, grid: &DiskGrid) -> Result<BoundaryData, HarmonicError> {
    Ok(boundary_horizontal(a, n, grid)?)
}
