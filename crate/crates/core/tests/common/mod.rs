//! Independent reference computations shared by the integration tests.
//! Nothing here calls the library's solvers.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};

/// `J_0(x)` by its power series; accurate to roundoff for `x < 8`.
pub fn bessel_j0(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        term *= q / ((k * k) as f64);
        sum += term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum
}

/// First positive zero of `J_0`, by bisection on `[2, 3]`.
pub fn j0_first_root() -> f64 {
    let (mut lo, mut hi) = (2.0, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bessel_j0(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// First Dirichlet eigenvalue of the unit disk.
pub fn disk_lambda1() -> f64 {
    j0_first_root().powi(2)
}

/// `W'` in closed form, written out here rather than taken from the library.
#[derive(Clone, Copy, Debug)]
pub enum Wp {
    Quartic,
    Exponential,
}

impl Wp {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            Wp::Quartic => t,
            Wp::Exponential => t.exp_m1(),
        }
    }
}

const R0: f64 = 1e-3;
const STEPS: usize = 4000;

/// RK4 on `y' = F(r, y)` from `R0` to 1; `None` if the state blows up.
fn rk4<const N: usize>(mut y: [f64; N], rhs: impl Fn(f64, &[f64; N]) -> [f64; N]) -> Option<Vec<(f64, [f64; N])>> {
    let h = (1.0 - R0) / STEPS as f64;
    let mut out = Vec::with_capacity(STEPS + 1);
    let mut r = R0;
    out.push((r, y));
    let add = |a: &[f64; N], b: &[f64; N], s: f64| {
        let mut c = *a;
        for i in 0..N {
            c[i] += s * b[i];
        }
        c
    };
    for _ in 0..STEPS {
        let k1 = rhs(r, &y);
        let k2 = rhs(r + 0.5 * h, &add(&y, &k1, 0.5 * h));
        let k3 = rhs(r + 0.5 * h, &add(&y, &k2, 0.5 * h));
        let k4 = rhs(r + h, &add(&y, &k3, h));
        for i in 0..N {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        r += h;
        if y.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
            return None;
        }
        out.push((r, y));
    }
    Some(out)
}

fn flat_rhs(eps: f64, k: i32, wp: Wp) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] {
    let kk = (k * k) as f64;
    move |r, y| {
        let f = y[0];
        [y[1], -y[1] / r + kk * f / (r * r) - f * wp.eval(1.0 - f * f) / (eps * eps)]
    }
}

fn flat_start(c: f64, k: i32) -> [f64; 2] {
    let k = k.abs();
    [c * R0.powi(k), k as f64 * c * R0.powi(k - 1)]
}

/// Shooting solution of the flat-branch ODE
/// `f'' + f'/r - k^2 f/r^2 + f W'(1-f^2)/ε^2 = 0`, `f ~ c r^k`, `f(1) = 1`.
/// Returns the slope `c` and samples `(r, f)`.
pub fn shoot_flat(eps: f64, k: i32, wp: Wp) -> (f64, Vec<(f64, f64)>) {
    let end = |c: f64| rk4(flat_start(c, k), flat_rhs(eps, k, wp)).map(|v| v.last().unwrap().1[0]);
    let (mut lo, mut hi) = (0.0, 1.0);
    while matches!(end(hi), Some(v) if v < 1.0) {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        match end(mid) {
            Some(v) if v < 1.0 => lo = mid,
            _ => hi = mid,
        }
    }
    let c = 0.5 * (lo + hi);
    let path = rk4(flat_start(c, k), flat_rhs(eps, k, wp)).unwrap();
    (c, path.into_iter().map(|(r, y)| (r, y[0])).collect())
}

/// Linear interpolation in sampled `(r, f)` pairs.
pub fn sample(path: &[(f64, f64)], r: f64) -> f64 {
    let i = path.partition_point(|(x, _)| *x < r).clamp(1, path.len() - 1);
    let (x0, y0) = path[i - 1];
    let (x1, y1) = path[i];
    y0 + (y1 - y0) * (r - x0) / (x1 - x0)
}

/// Smallest `λ` with a positive radial solution of
/// `-φ'' - φ'/r - W'(1-f^2)/ε^2 φ = λ φ`, `φ'(0) = 0`, `φ(1) = 0`, with `f`
/// the shooting flat profile. Sturm bisection on the sign of `φ`.
pub fn flat_lambda1(eps: f64, k: i32, wp: Wp) -> f64 {
    let (c, _) = shoot_flat(eps, k, wp);
    let kk = (k * k) as f64;
    let e2 = eps * eps;
    let positive_on_disk = |lambda: f64| {
        let s = flat_start(c, k);
        let path = rk4([s[0], s[1], 1.0, 0.0], move |r, y| {
            let f = y[0];
            let cr = wp.eval(1.0 - f * f) / e2;
            [
                y[1],
                -y[1] / r + kk * f / (r * r) - f * cr,
                y[3],
                -y[3] / r - (cr + lambda) * y[2],
            ]
        })
        .unwrap();
        path.iter().all(|(_, y)| y[2] > 0.0)
    };
    let (mut lo, mut hi) = (-2.0 / e2 - 10.0, 100.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if positive_on_disk(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `ε_1` from a 200-point scan of `λ_1(ε)` on `[lo, hi]`, refined by
/// bisection inside the bracketing scan cell.
pub fn scan_epsilon(k: i32, wp: Wp, lo: f64, hi: f64) -> f64 {
    let grid: Vec<f64> = (0..200).map(|i| lo + (hi - lo) * i as f64 / 199.0).collect();
    let mut prev = (grid[0], flat_lambda1(grid[0], k, wp));
    assert!(prev.1 < 0.0, "scan must start below the threshold");
    for &e in &grid[1..] {
        let l = flat_lambda1(e, k, wp);
        if l >= 0.0 {
            let (mut a, mut b) = (prev.0, e);
            for _ in 0..40 {
                let mid = 0.5 * (a + b);
                if flat_lambda1(mid, k, wp) < 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return 0.5 * (a + b);
        }
        prev = (e, l);
    }
    panic!("no sign change in [{lo}, {hi}]");
}

/// Smallest eigenvalue of `diag(w)^{-1} A` for symmetric `A`, positive
/// weights `w`, by a dense symmetric eigen-decomposition.
pub fn dense_generalized_min(a: &DMatrix<f64>, w: &[f64]) -> f64 {
    let n = w.len();
    let s = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (w[i] * w[j]).sqrt());
    let sym = 0.5 * (&s + s.transpose());
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Least-squares slope of `log e` against `log h`.
pub fn loglog_slope(h: &[f64], e: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.abs().ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}
