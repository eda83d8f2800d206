//! Convex potentials `W` on `(-inf, 1]` and a sampling-based check of the
//! structural assumptions the solvers rely on.
//!
//! A potential is required to satisfy
//!
//! ```text
//! W(0) = 0,   W(t) > 0 for t != 0,   W strictly convex,
//! ```
//!
//! which forces `W'(0) = 0`, `W'(t) < 0` for `t < 0` and `W'` nondecreasing.
//! Only `W` and `W'` are ever evaluated; no code path assumes `W''` exists.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("potential evaluated outside (-inf, 1] at t = {0}")]
    DomainViolation(f64),
    #[error("assumption check needs at least one sample")]
    EmptyGrid,
    #[error("unknown potential `{0}` (expected `quartic` or `exponential`)")]
    UnknownName(String),
}

/// A potential `W` together with its derivative `W'`.
///
/// Cloning is cheap; the callables are shared.
#[derive(Clone)]
pub struct PotentialSpec {
    name: String,
    w: ScalarFn,
    wp: ScalarFn,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec").field("name", &self.name).finish()
    }
}

impl PotentialSpec {
    pub fn new<W, Wp>(name: impl Into<String>, w: W, wp: Wp) -> Self
    where
        W: Fn(f64) -> f64 + Send + Sync + 'static,
        Wp: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            w: Arc::new(w),
            wp: Arc::new(wp),
        }
    }

    /// Looks up a builtin potential by its CLI name.
    pub fn by_name(name: &str) -> Result<Self, PotentialError> {
        match name {
            "quartic" => Ok(builtin_quartic()),
            "exponential" => Ok(builtin_exponential()),
            other => Err(PotentialError::UnknownName(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn w(&self, t: f64) -> Result<f64, PotentialError> {
        check_domain(t)?;
        Ok((self.w)(t))
    }

    pub fn wp(&self, t: f64) -> Result<f64, PotentialError> {
        check_domain(t)?;
        Ok((self.wp)(t))
    }

    /// Unchecked evaluation for solver inner loops, where `t = 1 - |u|^2 <= 1`
    /// holds by construction.
    #[inline]
    pub(crate) fn w_raw(&self, t: f64) -> f64 {
        debug_assert!(t <= 1.0 || t.is_nan());
        (self.w)(t)
    }

    #[inline]
    pub(crate) fn wp_raw(&self, t: f64) -> f64 {
        debug_assert!(t <= 1.0 || t.is_nan());
        (self.wp)(t)
    }

    /// Central difference of `W'`, falling back to a one-sided stencil so the
    /// domain `t <= 1` is never left. Used only to build Newton Jacobians.
    pub(crate) fn wpp_fd(&self, t: f64) -> f64 {
        const STEP: f64 = 1e-6;
        if t + STEP <= 1.0 {
            ((self.wp)(t + STEP) - (self.wp)(t - STEP)) / (2.0 * STEP)
        } else {
            ((self.wp)(t) - (self.wp)(t - STEP)) / STEP
        }
    }
}

fn check_domain(t: f64) -> Result<(), PotentialError> {
    // NaN fails the comparison as well.
    if t <= 1.0 {
        Ok(())
    } else {
        Err(PotentialError::DomainViolation(t))
    }
}

/// `W(t) = t^2 / 2`, giving the classical `(1 - |u|^2)^2 / (4 eps^2)` term.
pub fn builtin_quartic() -> PotentialSpec {
    PotentialSpec::new("quartic", |t| 0.5 * t * t, |t| t)
}

/// `W(t) = e^t - 1 - t`.
pub fn builtin_exponential() -> PotentialSpec {
    PotentialSpec::new("exponential", |t: f64| t.exp_m1() - t, |t: f64| t.exp_m1())
}

/// Default sample set for [`verify_assumptions`]: 1001 points on `[-10, 1]`
/// with `0` hit exactly.
pub fn default_samples() -> Vec<f64> {
    (0..=1000).map(|i| -10.0 + 11.0 * i as f64 / 1000.0).map(snap_zero).collect()
}

fn snap_zero(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        0.0
    } else {
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub zero_at_origin: bool,
    pub positive_away_from_origin: bool,
    pub midpoint_convex: bool,
    pub derivative_zero_at_origin: bool,
    /// Worst offending sample `(t, value)` for the first failed assumption,
    /// in the order listed above.
    pub worst_violation: Option<(f64, f64)>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.zero_at_origin
            && self.positive_away_from_origin
            && self.midpoint_convex
            && self.derivative_zero_at_origin
    }
}

/// Samples the assumptions `W(0)=0`, `W>0` away from 0, midpoint convexity
/// on neighbouring sample triples, and `W'(0)=0`.
///
/// Samples above 1 are rejected with a domain error; the origin is always
/// evaluated even when missing from `samples`.
pub fn verify_assumptions(
    spec: &PotentialSpec,
    samples: &[f64],
) -> Result<AssumptionReport, PotentialError> {
    if samples.is_empty() {
        return Err(PotentialError::EmptyGrid);
    }
    let mut ts = samples.to_vec();
    for &t in &ts {
        check_domain(t)?;
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    const ZERO_TOL: f64 = 1e-14;
    let w0 = spec.w(0.0)?;
    let wp0 = spec.wp(0.0)?;
    let zero_at_origin = w0.abs() <= ZERO_TOL;
    let derivative_zero_at_origin = wp0.abs() <= 1e-12;

    // positivity: most negative W over t != 0
    let mut worst_pos: Option<(f64, f64)> = None;
    for &t in ts.iter().filter(|&&t| t != 0.0) {
        let v = spec.w(t)?;
        if v <= 0.0 && worst_pos.is_none_or(|(_, wv)| v < wv) {
            worst_pos = Some((t, v));
        }
    }

    // midpoint convexity on every pair of samples (s, t), reporting the
    // largest violation (midpoint value minus chord value)
    let mut worst_cvx: Option<(f64, f64)> = None;
    let values: Vec<f64> = ts.iter().map(|&t| spec.w_raw(t)).collect();
    for a in 0..ts.len() {
        for b in (a + 1)..ts.len() {
            let mid = 0.5 * (ts[a] + ts[b]);
            let gap = spec.w_raw(mid) - 0.5 * (values[a] + values[b]);
            if gap >= 0.0 && worst_cvx.is_none_or(|(_, g)| gap > g) {
                worst_cvx = Some((mid, gap));
            }
        }
    }

    let worst_violation = if !zero_at_origin {
        Some((0.0, w0))
    } else if let Some(v) = worst_pos {
        Some(v)
    } else if let Some(v) = worst_cvx {
        Some(v)
    } else if !derivative_zero_at_origin {
        Some((0.0, wp0))
    } else {
        None
    };

    Ok(AssumptionReport {
        zero_at_origin,
        positive_away_from_origin: worst_pos.is_none(),
        midpoint_convex: worst_cvx.is_none(),
        derivative_zero_at_origin,
        worst_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartic_closed_forms() {
        let w = builtin_quartic();
        assert_eq!(w.w(0.0).unwrap(), 0.0);
        assert_eq!(w.w(1.0).unwrap(), 0.5);
        assert_eq!(w.wp(1.0).unwrap(), 1.0);
        assert_eq!(w.w(-2.0).unwrap(), 2.0);
    }

    #[test]
    fn exponential_closed_forms() {
        let w = builtin_exponential();
        assert_eq!(w.w(0.0).unwrap(), 0.0);
        assert_eq!(w.wp(0.0).unwrap(), 0.0);
        assert!((w.w(1.0).unwrap() - (std::f64::consts::E - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn domain_is_enforced() {
        let w = builtin_quartic();
        assert_eq!(w.w(1.5), Err(PotentialError::DomainViolation(1.5)));
        assert!(w.wp(f64::NAN).is_err());
        assert!(w.w(1.0).is_ok());
        assert!(verify_assumptions(&w, &[0.0, 2.0]).is_err());
    }

    #[test]
    fn quartic_passes_small_grid() {
        let r = verify_assumptions(&builtin_quartic(), &[-2.0, -1.0, 0.0, 0.5, 1.0]).unwrap();
        assert!(r.all_pass(), "{r:?}");
        assert_eq!(r.worst_violation, None);
    }

    #[test]
    fn linear_potential_fails_positivity_at_minus_one() {
        let bad = PotentialSpec::new("linear", |t| t, |_| 1.0);
        let r = verify_assumptions(&bad, &[-2.0, -1.0, 0.0, 0.5, 1.0]).unwrap();
        assert!(!r.positive_away_from_origin);
        assert!(!r.all_pass());
        // w(-1) = -1 < 0 is a violation; the reported worst is the most negative
        assert!(bad.w(-1.0).unwrap() < 0.0);
        assert_eq!(r.worst_violation, Some((-2.0, -2.0)));

        let r = verify_assumptions(&bad, &[-1.0, 0.0, 0.5, 1.0]).unwrap();
        assert_eq!(r.worst_violation, Some((-1.0, -1.0)));
    }

    #[test]
    fn exponential_passes_uniform_grid() {
        let grid: Vec<f64> = (0..101).map(|i| snap_zero(-3.0 + 4.0 * i as f64 / 100.0)).collect();
        assert!(grid.contains(&0.0));
        let r = verify_assumptions(&builtin_exponential(), &grid).unwrap();
        assert!(r.all_pass(), "{r:?}");
    }

    #[test]
    fn builtins_pass_default_samples() {
        for spec in [builtin_quartic(), builtin_exponential()] {
            let r = verify_assumptions(&spec, &default_samples()).unwrap();
            assert!(r.all_pass(), "{}: {r:?}", spec.name());
        }
    }

    #[test]
    fn empty_grid_is_an_error() {
        assert_eq!(
            verify_assumptions(&builtin_quartic(), &[]),
            Err(PotentialError::EmptyGrid)
        );
    }

    #[test]
    fn derivative_matches_central_difference() {
        let h = 1e-4;
        for spec in [builtin_quartic(), builtin_exponential()] {
            for i in 0..=60 {
                let t = -5.0 + 6.0 * i as f64 / 60.0 - 2.0 * h;
                let t = t.min(1.0 - h);
                let fd = (spec.w(t + h).unwrap() - spec.w(t - h).unwrap()) / (2.0 * h);
                assert!((fd - spec.wp(t).unwrap()).abs() <= 1e-6, "{} at {t}", spec.name());
            }
        }
    }

    #[test]
    fn derivative_is_monotone_and_negative_left_of_zero() {
        for spec in [builtin_quartic(), builtin_exponential()] {
            let ts = default_samples();
            for pair in ts.windows(2) {
                assert!(spec.wp(pair[0]).unwrap() <= spec.wp(pair[1]).unwrap());
            }
            for &t in ts.iter().filter(|&&t| t < 0.0) {
                assert!(spec.wp(t).unwrap() < 0.0);
            }
        }
    }

    #[test]
    fn lookup_by_name() {
        assert_eq!(PotentialSpec::by_name("quartic").unwrap().name(), "quartic");
        assert_eq!(
            PotentialSpec::by_name("exponential").unwrap().name(),
            "exponential"
        );
        assert!(PotentialSpec::by_name("cubic").is_err());
    }
}
