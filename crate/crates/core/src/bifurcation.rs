//! Bifurcation thresholds `ε_k`: the value of `ε` where the first eigenvalue
//! of the flat branch's linearisation changes sign.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potential::PotentialSpec;
use crate::radial::{solve_flat, solve_flat_from, RadialError, RadialGrid, ScalarProfile};
use crate::spectral::{first_eigenvalue, LinearizedOperator, SpectralError};

/// Bracket search never goes below this `ε`.
pub const EPSILON_FLOOR: f64 = 1e-4;
/// ... nor above this one.
pub const EPSILON_CEILING: f64 = 1e4;
pub const MIN_TOL: f64 = 1e-6;
const BRACKET_START: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BifurcationError {
    #[error("no sign change of lambda_1 for k = {k} in [{lo}, {hi}]")]
    NoSignChange { k: i32, lo: f64, hi: f64 },
    #[error("bisection tolerance must be >= {MIN_TOL}, got {0}")]
    InvalidTolerance(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Radial(#[from] RadialError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationPoint {
    pub k: i32,
    pub epsilon_k: f64,
    pub bracket: (f64, f64),
    /// `|λ_1|` of the flat branch at `epsilon_k`.
    pub lambda_residual: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
}

/// `λ_{1,k}(ε)` of the flat branch together with the profile used.
pub fn flat_lambda(
    epsilon: f64,
    k: i32,
    spec: &PotentialSpec,
    grid: &RadialGrid,
    warm: Option<&ScalarProfile>,
) -> Result<(f64, ScalarProfile), BifurcationError> {
    let profile = solve_flat_from(epsilon, k, spec, grid, warm)?;
    let res = first_eigenvalue(&LinearizedOperator::from_scalar(&profile, spec))?;
    Ok((res.lambda1, profile))
}

/// Locates `ε_k` by bisection on the sign of `λ_{1,k}`. The bracket is found
/// by doubling or halving from `ε = 0.5`.
pub fn find_epsilon_k(
    k: i32,
    spec: &PotentialSpec,
    grid: &RadialGrid,
    tol: f64,
) -> Result<BifurcationPoint, BifurcationError> {
    find_epsilon_k_from(k, spec, grid, tol, BRACKET_START)
}

/// [`find_epsilon_k`] with the bracket search starting at `start`.
pub fn find_epsilon_k_from(
    k: i32,
    spec: &PotentialSpec,
    grid: &RadialGrid,
    tol: f64,
    start: f64,
) -> Result<BifurcationPoint, BifurcationError> {
    if !(tol >= MIN_TOL) {
        return Err(BifurcationError::InvalidTolerance(tol));
    }
    if k == 0 {
        return Err(BifurcationError::InvalidArgument("winding number must be nonzero".into()));
    }
    if !(start > 0.0 && start.is_finite()) {
        return Err(BifurcationError::InvalidArgument(format!("bad start {start}")));
    }
    let k = k.abs();

    let (l0, p0) = flat_lambda(start, k, spec, grid, None)?;
    // (ε, λ, profile) on each side of the sign change
    let (mut lo, mut hi);
    if l0 < 0.0 {
        lo = (start, l0, p0);
        let mut eps = start;
        loop {
            eps *= 2.0;
            if eps > EPSILON_CEILING {
                return Err(BifurcationError::NoSignChange { k, lo: start, hi: EPSILON_CEILING });
            }
            let (l, p) = flat_lambda(eps, k, spec, grid, Some(&lo.2))?;
            if l >= 0.0 {
                hi = (eps, l, p);
                break;
            }
            lo = (eps, l, p);
        }
    } else {
        hi = (start, l0, p0);
        let mut eps = start;
        loop {
            eps *= 0.5;
            if eps < EPSILON_FLOOR {
                return Err(BifurcationError::NoSignChange { k, lo: EPSILON_FLOOR, hi: start });
            }
            let (l, p) = flat_lambda(eps, k, spec, grid, Some(&hi.2))?;
            if l < 0.0 {
                lo = (eps, l, p);
                break;
            }
            hi = (eps, l, p);
        }
    }

    while hi.0 - lo.0 > tol {
        let mid = 0.5 * (lo.0 + hi.0);
        let (l, p) = flat_lambda(mid, k, spec, grid, Some(&lo.2))?;
        if l < 0.0 {
            lo = (mid, l, p);
        } else {
            hi = (mid, l, p);
        }
    }
    let epsilon_k = 0.5 * (lo.0 + hi.0);
    let (lambda_mid, _) = flat_lambda(epsilon_k, k, spec, grid, Some(&lo.2))?;
    Ok(BifurcationPoint {
        k,
        epsilon_k,
        bracket: (lo.0, hi.0),
        lambda_residual: lambda_mid.abs(),
        lambda_lo: lo.1,
        lambda_hi: hi.1,
    })
}

/// `ε_1, ..., ε_{k_max}`, each bracket search starting at the previous
/// threshold.
pub fn sweep(
    k_max: i32,
    spec: &PotentialSpec,
    grid: &RadialGrid,
    tol: f64,
) -> Result<Vec<BifurcationPoint>, BifurcationError> {
    if k_max < 1 {
        return Err(BifurcationError::InvalidArgument(format!("k_max must be >= 1, got {k_max}")));
    }
    let mut points: Vec<BifurcationPoint> = Vec::with_capacity(k_max as usize);
    for k in 1..=k_max {
        let start = points.last().map_or(BRACKET_START, |p| p.epsilon_k);
        points.push(find_epsilon_k_from(k, spec, grid, tol, start)?);
    }
    Ok(points)
}

/// Pointwise comparison of two profiles at interior nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingReport {
    /// `min (upper - lower)` over interior nodes.
    pub min_gap: f64,
    /// Interior nodes where `lower > upper`.
    pub violations: Vec<usize>,
}

impl OrderingReport {
    pub fn strictly_ordered(&self) -> bool {
        self.min_gap > 0.0
    }
}

pub fn compare_profiles(lower: &ScalarProfile, upper: &ScalarProfile) -> OrderingReport {
    assert_eq!(lower.grid, upper.grid, "profiles live on different grids");
    let n = lower.grid.count() - 1;
    let mut min_gap = f64::INFINITY;
    let mut violations = Vec::new();
    for i in 0..n {
        let gap = upper.vals[i] - lower.vals[i];
        min_gap = min_gap.min(gap);
        if gap < 0.0 {
            violations.push(i);
        }
    }
    OrderingReport { min_gap, violations }
}

/// Checks `f̃_k < f̃_{k-1}` at every interior node.
pub fn flat_ordering_check(
    epsilon: f64,
    k: i32,
    spec: &PotentialSpec,
    grid: &RadialGrid,
) -> Result<OrderingReport, BifurcationError> {
    if k < 2 {
        return Err(BifurcationError::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    let upper = solve_flat(epsilon, k - 1, spec, grid)?;
    let lower = solve_flat(epsilon, k, spec, grid)?;
    Ok(compare_profiles(&lower, &upper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::builtin_quartic;

    #[test]
    fn rejects_small_tolerance() {
        let g = RadialGrid::disk(64).unwrap();
        assert_eq!(
            find_epsilon_k(1, &builtin_quartic(), &g, 1e-8),
            Err(BifurcationError::InvalidTolerance(1e-8))
        );
    }

    #[test]
    fn bracket_invariants() {
        let w = builtin_quartic();
        let g = RadialGrid::disk(128).unwrap();
        let p = find_epsilon_k(1, &w, &g, 1e-4).unwrap();
        assert!(p.bracket.0 < p.epsilon_k && p.epsilon_k < p.bracket.1);
        assert!(p.bracket.1 - p.bracket.0 <= 1e-4);
        assert!(p.lambda_lo < 0.0 && p.lambda_hi >= 0.0);
        assert_eq!(find_epsilon_k(-1, &w, &g, 1e-4).unwrap(), p);
    }

    #[test]
    fn self_comparison_has_zero_gap() {
        let w = builtin_quartic();
        let g = RadialGrid::disk(64).unwrap();
        let f = solve_flat(0.5, 2, &w, &g).unwrap();
        let r = compare_profiles(&f, &f);
        assert_eq!(r.min_gap, 0.0);
        assert!(r.violations.is_empty());
        assert!(!r.strictly_ordered());
    }
}
