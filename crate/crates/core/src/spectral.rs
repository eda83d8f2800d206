//! First eigenvalue of the radial Schrödinger operator `-Δ - c(r)` with
//! Dirichlet data on the unit sphere, and the quadratic forms built on it.
//!
//! All forms use the same finite-volume weights as the radial solver, so a
//! profile that solves the discrete ODE also solves the discrete linearised
//! equation exactly and the discrete Hardy identity holds to roundoff.

use thiserror::Error;

use crate::banded::{BandMatrix, SingularMatrix};
use crate::potential::PotentialSpec;
use crate::radial::{ProfilePair, RadialGrid, ScalarKind, ScalarProfile};

pub const EIGEN_TOL: f64 = 1e-9;
const MAX_INVERSE_ITERATIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("inverse iteration stalled: residual {residual:.3e} after {iterations} iterations")]
    IterationStalled { residual: f64, iterations: usize },
    #[error("coefficient is not finite at node {0}")]
    NonFiniteCoefficient(usize),
    #[error("Phi must be positive at interior nodes; Phi[{index}] = {value}")]
    NonPositivePhi { index: usize, value: f64 },
    #[error("array length {got} does not match grid size {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("grid dimension {got} does not match m = {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Singular(#[from] SingularMatrix),
}

/// `-Δ - c(r)` on radial functions in the unit ball of `R^m`, `m =
/// grid.dim_m()`, with `φ(1) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedOperator {
    pub grid: RadialGrid,
    /// `c(r_i)` at every node; the boundary entry is never used.
    pub coeff: Vec<f64>,
    pub epsilon: f64,
    pub k: i32,
}

impl LinearizedOperator {
    pub fn from_coeff(
        grid: RadialGrid,
        coeff: Vec<f64>,
        epsilon: f64,
        k: i32,
    ) -> Result<Self, SpectralError> {
        if coeff.len() != grid.count() {
            return Err(SpectralError::LengthMismatch {
                got: coeff.len(),
                expected: grid.count(),
            });
        }
        if let Some(i) = coeff.iter().position(|c| !c.is_finite()) {
            return Err(SpectralError::NonFiniteCoefficient(i));
        }
        Ok(Self {
            grid,
            coeff,
            epsilon,
            k,
        })
    }

    /// Operator with `c ≡ 0`, i.e. the Dirichlet Laplacian.
    pub fn laplacian(grid: RadialGrid) -> Self {
        Self {
            coeff: vec![0.0; grid.count()],
            grid,
            epsilon: f64::INFINITY,
            k: 0,
        }
    }

    /// `c = W'(1 - u^2) / ε^2` from a scalar profile (flat branch or equator).
    pub fn from_scalar(profile: &ScalarProfile, spec: &PotentialSpec) -> Self {
        let e2 = profile.epsilon * profile.epsilon;
        let coeff = profile
            .vals
            .iter()
            .map(|u| spec.wp_raw(1.0 - u * u) / e2)
            .collect();
        let k = match profile.kind {
            ScalarKind::Flat { k } => k,
            ScalarKind::Equator { .. } => 0,
        };
        Self {
            grid: profile.grid,
            coeff,
            epsilon: profile.epsilon,
            k,
        }
    }

    /// `c = W'(1 - f^2 - g^2) / ε^2` from an escaping pair; `g` solves the
    /// resulting equation.
    pub fn from_pair(pair: &ProfilePair, spec: &PotentialSpec) -> Self {
        let e2 = pair.epsilon * pair.epsilon;
        let coeff = pair
            .f
            .iter()
            .zip(&pair.g)
            .map(|(f, g)| spec.wp_raw(1.0 - f * f - g * g) / e2)
            .collect();
        Self {
            grid: pair.grid,
            coeff,
            epsilon: pair.epsilon,
            k: pair.k,
        }
    }

    fn interior(&self) -> usize {
        self.grid.count() - 1
    }

    /// Stiffness `K = A - C V` restricted to interior nodes, tridiagonal and
    /// symmetric; the mass matrix is `diag(V)`.
    fn shifted_stiffness(&self, sigma: f64) -> BandMatrix {
        let n = self.interior();
        let g = &self.grid;
        let mut k = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            let mut d = g.face_weight(i) - (self.coeff[i] + sigma) * g.cell_weight(i);
            if i > 0 {
                d += g.face_weight(i - 1);
                k.set(i, i - 1, -g.face_weight(i - 1));
            }
            if i + 1 < n {
                k.set(i, i + 1, -g.face_weight(i));
            }
            k.set(i, i, d);
        }
        k
    }

    /// Number of eigenvalues strictly below `mu` (Sylvester inertia of the
    /// tridiagonal `K - mu V`).
    fn count_below(&self, mu: f64) -> usize {
        let n = self.interior();
        let g = &self.grid;
        let mut count = 0;
        let mut d_prev = 1.0;
        for i in 0..n {
            let mut d = g.face_weight(i) - (self.coeff[i] + mu) * g.cell_weight(i);
            if i > 0 {
                let off = g.face_weight(i - 1);
                d += off - off * off / d_prev;
            }
            if d == 0.0 {
                d = -f64::MIN_POSITIVE;
            }
            if d < 0.0 {
                count += 1;
            }
            d_prev = d;
        }
        count
    }

    /// `(-Δ_h φ - c φ)` at interior nodes.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        let n = self.interior();
        (0..n)
            .map(|i| self.grid.neg_laplacian(phi, i) - self.coeff[i] * phi[i])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub k: i32,
    pub epsilon: f64,
    pub lambda1: f64,
    /// Nonnegative, zero on the boundary node, unit norm in the discrete
    /// `L^2` of the ball.
    pub eigenfunction: Vec<f64>,
    /// Eigen-residual `h^2 ‖(A - λ)φ‖ / (‖φ‖ max(1, |λ|))` after the final
    /// iterate, in the same `h^2` scaling as the radial solver residuals.
    pub residual: f64,
    pub iterations: usize,
}

/// Discrete `L^2(B^m)` norm squared of a radial function.
pub fn l2_norm_sq(grid: &RadialGrid, phi: &[f64]) -> f64 {
    let s: f64 = (0..grid.count() - 1)
        .map(|i| grid.cell_weight(i) * phi[i] * phi[i])
        .sum();
    grid.sphere_area() * s
}

/// `|S^{m-1}| [Σ_faces a (Δφ)^2 - Σ_i c_i V_i φ_i^2]`, the discrete
/// `∫ |∇φ|^2 - c φ^2`.
fn quadratic_form(grid: &RadialGrid, coeff: &[f64], phi: &[f64]) -> f64 {
    let n = grid.count();
    let mut s = 0.0;
    for i in 0..n - 1 {
        let d = phi[i + 1] - phi[i];
        s += grid.face_weight(i) * d * d - coeff[i] * grid.cell_weight(i) * phi[i] * phi[i];
    }
    grid.sphere_area() * s
}

/// Lowest eigenvalue and eigenfunction of the radial operator.
///
/// The eigenvalue is bracketed by inertia counts starting from the lower
/// bound `σ = min(0, min(-c)) - 1`; inverse iteration with a shift just below
/// the bracket then produces the eigenfunction.
pub fn first_eigenvalue(op: &LinearizedOperator) -> Result<SpectralResult, SpectralError> {
    let n = op.interior();
    let grid = &op.grid;
    if let Some(i) = op.coeff.iter().take(n).position(|c| !c.is_finite()) {
        return Err(SpectralError::NonFiniteCoefficient(i));
    }
    let min_neg_c = op.coeff[..n].iter().fold(f64::INFINITY, |m, c| m.min(-c));
    let mut lo = min_neg_c.min(0.0) - 1.0;
    // Rayleigh quotient of 1 - r^2 bounds λ1 from above
    let trial: Vec<f64> = grid.nodes().iter().map(|r| 1.0 - r * r).collect();
    let mut hi = quadratic_form(grid, &op.coeff, &trial) / l2_norm_sq(grid, &trial) + 1.0;
    debug_assert_eq!(op.count_below(lo), 0);
    while op.count_below(hi) == 0 {
        hi += (hi - lo).max(1.0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-13 * hi.abs().max(lo.abs()).max(1.0) || mid <= lo || mid >= hi {
            break;
        }
        if op.count_below(mid) == 0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let scale = lo.abs().max(1.0);
    let sigma = lo - 1e-7 * scale;
    let lu = op.shifted_stiffness(sigma).factor()?;

    let mut x: Vec<f64> = trial[..n].to_vec();
    let mut lambda = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=MAX_INVERSE_ITERATIONS {
        let mut y: Vec<f64> = (0..n).map(|i| grid.cell_weight(i) * x[i]).collect();
        lu.solve_in_place(&mut y);
        let mut full = y.clone();
        full.push(0.0);
        let norm = l2_norm_sq(grid, &full).sqrt();
        full.iter_mut().for_each(|v| *v /= norm);
        lambda = quadratic_form(grid, &op.coeff, &full);
        let r = op.apply(&full);
        let res_sq: f64 = (0..n)
            .map(|i| grid.cell_weight(i) * (r[i] - lambda * full[i]).powi(2))
            .sum::<f64>()
            * grid.sphere_area();
        residual = grid.spacing().powi(2) * res_sq.sqrt() / lambda.abs().max(1.0);
        x = full[..n].to_vec();
        if residual <= EIGEN_TOL {
            if x.iter().sum::<f64>() < 0.0 {
                x.iter_mut().for_each(|v| *v = -*v);
            }
            let mut eigenfunction = x;
            // roundoff-level negative entries near the boundary
            eigenfunction.iter_mut().for_each(|v| *v = v.max(0.0));
            eigenfunction.push(0.0);
            return Ok(SpectralResult {
                k: op.k,
                epsilon: op.epsilon,
                lambda1: lambda,
                eigenfunction,
                residual,
                iterations: it,
            });
        }
    }
    let _ = lambda;
    Err(SpectralError::IterationStalled {
        residual,
        iterations: MAX_INVERSE_ITERATIONS,
    })
}

/// Discrete `∫ |∇φ|^2 - c φ^2` over the disk (or ball) with the `2π r`
/// (resp. `|S^{m-1}| r^{m-1}`) weight. The boundary entry of `phi` should be
/// zero; it is used as given.
pub fn stability_form_gl(phi: &[f64], op: &LinearizedOperator) -> f64 {
    assert_eq!(phi.len(), op.grid.count());
    quadratic_form(&op.grid, &op.coeff, phi)
}

/// Rayleigh quotient `stability_form_gl(φ) / ‖φ‖^2`.
pub fn rayleigh_quotient(phi: &[f64], op: &LinearizedOperator) -> f64 {
    stability_form_gl(phi, op) / l2_norm_sq(&op.grid, phi)
}

/// Both sides of the Hardy decomposition for a radial vector test field.
#[derive(Debug, Clone, PartialEq)]
pub struct HardyDecomposition {
    /// `½∫|∇v|^2 - ½∫c|v|^2`.
    pub f_value: f64,
    /// `½ Σ_j ∫ Φ^2 |∇(v_j/Φ)|^2`.
    pub decomposition_value: f64,
    /// Max-norm of `-Δ_h Φ - c Φ` at interior nodes; the identity is exact
    /// up to a multiple of this.
    pub phi_residual: f64,
    /// Whether the cell at the axis was removed from both sides because `Φ`
    /// vanishes there.
    pub axis_cell_excluded: bool,
}

impl HardyDecomposition {
    pub fn relative_gap(&self) -> f64 {
        (self.f_value - self.decomposition_value).abs() / (self.f_value.abs() + 1e-8)
    }
}

/// Evaluates both sides of `F(v) = ½ ∫ Φ^2 |∇(v/Φ)|^2` on the radial grid.
///
/// `v` holds one radial array per component. On a face the weight `Φ^2` is
/// the product of the two adjacent nodal values, which makes the identity
/// exact whenever `Φ` solves the discrete linearised equation. When `Φ`
/// vanishes linearly at the axis (`Φ_0 <= Φ_1 / 2`) the axis node of every
/// `v_j` is set to zero on both sides.
pub fn hardy_decomposition_check(
    phi: &[f64],
    v: &[Vec<f64>],
    op: &LinearizedOperator,
) -> Result<HardyDecomposition, SpectralError> {
    let grid = &op.grid;
    let n = grid.count();
    if phi.len() != n {
        return Err(SpectralError::LengthMismatch {
            got: phi.len(),
            expected: n,
        });
    }
    for comp in v {
        if comp.len() != n {
            return Err(SpectralError::LengthMismatch {
                got: comp.len(),
                expected: n,
            });
        }
    }
    if let Some(i) = (0..n - 1).find(|&i| phi[i].is_nan() || phi[i] <= 0.0) {
        return Err(SpectralError::NonPositivePhi {
            index: i,
            value: phi[i],
        });
    }
    let axis_cell_excluded = phi[0] <= 0.5 * phi[1];
    let phi_residual = op.apply(phi).iter().fold(0.0f64, |m, r| m.max(r.abs()));

    let mut f_sum = 0.0;
    let mut d_sum = 0.0;
    for comp in v {
        let mut w = comp.clone();
        if axis_cell_excluded {
            w[0] = 0.0;
        }
        f_sum += quadratic_form(grid, &op.coeff, &w) / grid.sphere_area();
        for i in 0..n - 1 {
            let a = grid.face_weight(i);
            let (p, q) = (phi[i], phi[i + 1]);
            let (x, y) = (w[i], w[i + 1]);
            // a Φ_i Φ_{i+1} (y/Φ_{i+1} - x/Φ_i)^2, expanded so a zero Φ on
            // the boundary node with zero v contributes nothing
            let mut t = x * x * q / p - 2.0 * x * y;
            if y != 0.0 {
                t += y * y * p / q;
            }
            d_sum += a * t;
        }
    }
    let s = 0.5 * grid.sphere_area();
    Ok(HardyDecomposition {
        f_value: s * f_sum,
        decomposition_value: s * d_sum,
        phi_residual,
        axis_cell_excluded,
    })
}

/// `(m-2)^2/4 - (m-1)`: the sharp Hardy constant minus the potential
/// coefficient of the equator map. Nonnegative exactly for `m >= 7`.
pub fn hardy_margin(m: usize) -> f64 {
    let m = m as f64;
    (m - 2.0).powi(2) / 4.0 - (m - 1.0)
}

/// `½ ∫_{B^m} |∇φ|^2 - W'(1-h^2) φ^2 / ε^2` for a radial `φ`, with `h` an
/// equator profile in dimension `m`.
pub fn equator_stability_form(
    m: usize,
    h_profile: &ScalarProfile,
    spec: &PotentialSpec,
    phi: &[f64],
) -> Result<f64, SpectralError> {
    let grid = &h_profile.grid;
    if grid.dim_m() != m {
        return Err(SpectralError::DimensionMismatch {
            got: grid.dim_m(),
            expected: m,
        });
    }
    if phi.len() != grid.count() {
        return Err(SpectralError::LengthMismatch {
            got: phi.len(),
            expected: grid.count(),
        });
    }
    let op = LinearizedOperator::from_scalar(h_profile, spec);
    Ok(0.5 * quadratic_form(grid, &op.coeff, phi))
}

/// `ε_0 = sqrt(|W'(1)| / λ_1)`: above it the energy is strictly convex.
pub fn convexity_threshold(spec: &PotentialSpec, lambda1_domain: f64) -> f64 {
    assert!(lambda1_domain > 0.0, "lambda1 must be positive");
    (spec.wp_raw(1.0).abs() / lambda1_domain).sqrt()
}
