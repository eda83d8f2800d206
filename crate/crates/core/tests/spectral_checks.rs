mod common;

use common::{dense_generalized_min, disk_lambda1, flat_lambda1, j0_first_root, loglog_slope, Wp};
use gl_dichotomy::bifurcation::find_epsilon_k;
use gl_dichotomy::potential::{builtin_exponential, builtin_quartic, PotentialSpec};
use gl_dichotomy::radial::{solve_equator, solve_flat, solve_pair, RadialGrid};
use gl_dichotomy::spectral::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn bessel_root_oracle() {
    assert!((j0_first_root() - 2.404825557695773).abs() < 1e-14);
}

#[test]
fn laplacian_eigenvalue_and_richardson_slope() {
    let exact = disk_lambda1();
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for n in [65, 129, 257, 513] {
        let g = RadialGrid::disk(n).unwrap();
        let r = first_eigenvalue(&LinearizedOperator::laplacian(g)).unwrap();
        assert!(r.residual <= 1e-9);
        assert!(r.eigenfunction[..n - 1].iter().all(|v| *v > 0.0));
        hs.push(g.spacing());
        errs.push(r.lambda1 - exact);
    }
    assert!(errs[3].abs() < 2e-5);
    let slope = loglog_slope(&hs, &errs);
    assert!((1.7..=2.3).contains(&slope), "slope {slope}");
}

#[test]
fn dense_eigen_cross_check() {
    let w = builtin_quartic();
    let g = RadialGrid::disk(96).unwrap();
    let flat = solve_flat(0.3, 1, &w, &g).unwrap();
    let op = LinearizedOperator::from_scalar(&flat, &w);
    let n = g.count() - 1;
    // assemble V (-Δ_h - c) column by column through `apply`
    let weights: Vec<f64> = (0..n).map(|i| g.cell_weight(i)).collect();
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n + 1];
        e[j] = 1.0;
        for (i, v) in op.apply(&e).into_iter().enumerate() {
            a[(i, j)] = v * weights[i];
        }
    }
    let dense = dense_generalized_min(&a, &weights);
    let r = first_eigenvalue(&op).unwrap();
    assert!((dense - r.lambda1).abs() <= 1e-9 * r.lambda1.abs().max(1.0), "{dense} vs {}", r.lambda1);
}

#[test]
fn flat_eigenvalue_matches_shooting() {
    let g = RadialGrid::disk(512).unwrap();
    for (spec, wp) in [(builtin_quartic(), Wp::Quartic), (builtin_exponential(), Wp::Exponential)] {
        for eps in [0.25, 0.6] {
            let flat = solve_flat(eps, 1, &spec, &g).unwrap();
            let l = first_eigenvalue(&LinearizedOperator::from_scalar(&flat, &spec)).unwrap().lambda1;
            let oracle = flat_lambda1(eps, 1, wp);
            assert!((l - oracle).abs() < 2e-4 * oracle.abs().max(1.0), "eps={eps}: {l} vs {oracle}");
        }
    }
}

#[test]
fn eigenvalue_signs_around_threshold() {
    let w = builtin_quartic();
    let g = RadialGrid::disk(512).unwrap();
    let p = find_epsilon_k(1, &w, &g, 1e-5).unwrap();
    let at = |e: f64, k: i32| {
        let flat = solve_flat(e, k, &w, &g).unwrap();
        first_eigenvalue(&LinearizedOperator::from_scalar(&flat, &w)).unwrap().lambda1
    };
    assert!(at(p.epsilon_k, 1).abs() <= 1e-3);
    assert!(at(2.0 * p.epsilon_k, 1) > 0.0);
    assert!(at(0.5 * p.epsilon_k, 1) < -1e-3);
    // larger winding pushes the coefficient up, so λ goes down
    assert!(at(p.epsilon_k, 2) < at(p.epsilon_k, 1));
}

#[test]
fn eigenvalue_monotone_in_epsilon() {
    let w = builtin_quartic();
    let g = RadialGrid::disk(256).unwrap();
    let ls: Vec<f64> = [0.2, 0.4, 0.8, 1.6]
        .iter()
        .map(|&e| {
            let flat = solve_flat(e, 1, &w, &g).unwrap();
            first_eigenvalue(&LinearizedOperator::from_scalar(&flat, &w)).unwrap().lambda1
        })
        .collect();
    assert!(ls.windows(2).all(|p| p[0] <= p[1]), "{ls:?}");
}

#[test]
fn stability_form_examples() {
    let g = RadialGrid::disk(513).unwrap();
    let op = LinearizedOperator::laplacian(g);
    assert_eq!(stability_form_gl(&vec![0.0; g.count()], &op), 0.0);
    let phi: Vec<f64> = g.nodes().iter().map(|r| 1.0 - r * r).collect();
    let v = stability_form_gl(&phi, &op);
    assert!((v - 2.0 * std::f64::consts::PI).abs() < 1e-3 * 2.0 * std::f64::consts::PI, "{v}");
    let r = first_eigenvalue(&op).unwrap();
    let q = stability_form_gl(&r.eigenfunction, &op);
    assert!((q - r.lambda1 * l2_norm_sq(&g, &r.eigenfunction)).abs() < 1e-8 * r.lambda1);
    assert!((l2_norm_sq(&g, &r.eigenfunction) - 1.0).abs() < 1e-12);
}

#[test]
fn hardy_decomposition_on_escaping_pair() {
    let w = builtin_quartic();
    let g = RadialGrid::disk(512).unwrap();
    let pair = solve_pair(0.2, 1, &w, &g, None).unwrap().escaping().unwrap();
    let op = LinearizedOperator::from_pair(&pair, &w);
    let zero = hardy_decomposition_check(&pair.g, &[vec![0.0; g.count()]], &op).unwrap();
    assert_eq!((zero.f_value, zero.decomposition_value), (0.0, 0.0));
    // v = λΦ: both sides vanish up to the discrete residual of Φ
    let v: Vec<Vec<f64>> = [0.3, -1.2].iter().map(|l| pair.g.iter().map(|x| l * x).collect()).collect();
    let d = hardy_decomposition_check(&pair.g, &v, &op).unwrap();
    assert!(d.decomposition_value.abs() <= 10.0 * g.spacing());
    assert!(d.f_value.abs() <= 10.0 * g.spacing());
    let bump: Vec<f64> = g.nodes().iter().map(|r| (1.0 - r * r) * (3.0 * r).sin()).collect();
    let d = hardy_decomposition_check(&pair.g, &[bump], &op).unwrap();
    assert!(d.relative_gap() <= 50.0 * g.spacing().powi(2), "{}", d.relative_gap());
    let mut bad = pair.g.clone();
    bad[3] = -1.0;
    assert!(matches!(
        hardy_decomposition_check(&bad, &[vec![0.0; g.count()]], &op),
        Err(SpectralError::NonPositivePhi { index: 3, .. })
    ));
}

#[test]
fn hardy_margins_and_convexity_thresholds() {
    assert_eq!(hardy_margin(7), 0.25);
    assert_eq!(hardy_margin(6), -1.0);
    assert_eq!(hardy_margin(2), -1.0);
    for m in 2..=10 {
        assert_eq!(hardy_margin(m) >= 0.0, m >= 7);
    }
    let l = disk_lambda1();
    assert!((convexity_threshold(&builtin_quartic(), l) - 0.41584).abs() < 5e-5);
    assert!((convexity_threshold(&builtin_exponential(), l) - 0.54506).abs() < 5e-5);
    let one_sided = PotentialSpec::new("one-sided", |t: f64| 0.5 * t.min(0.0).powi(2), |t: f64| t.min(0.0));
    assert_eq!(convexity_threshold(&one_sided, l), 0.0);
}

fn bump(g: &RadialGrid, center: f64, width: f64) -> Vec<f64> {
    g.nodes()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if i + 1 == g.count() {
                0.0
            } else {
                (-((r - center) / width).powi(2)).exp() * (1.0 - r * r)
            }
        })
        .collect()
}

#[test]
fn equator_form_stable_in_seven_dimensions() {
    let w = builtin_quartic();
    let g = RadialGrid::new(400, 7).unwrap();
    let h = solve_equator(0.3, 7, &w, &g).unwrap();
    assert_eq!(equator_stability_form(7, &h, &w, &vec![0.0; g.count()]).unwrap(), 0.0);
    for j in 0..20 {
        let phi = bump(&g, 0.05 * j as f64, 0.05 + 0.02 * j as f64);
        let v = equator_stability_form(7, &h, &w, &phi).unwrap();
        assert!(v >= -1e-6, "bump {j}: {v}");
    }
}

#[test]
fn equator_form_unstable_in_three_dimensions() {
    let w = builtin_quartic();
    let g = RadialGrid::new(2000, 3).unwrap();
    let h = solve_equator(0.05, 3, &w, &g).unwrap();
    // r^{-1/2} cut off near the axis and at the boundary
    let phi: Vec<f64> = g
        .nodes()
        .iter()
        .map(|&r| {
            let inner = ((r / 0.05).ln() / 2f64.ln()).clamp(0.0, 1.0);
            let outer = (2.0 * (1.0 - r)).clamp(0.0, 1.0);
            r.powf(-0.5) * inner * outer
        })
        .collect();
    let v = equator_stability_form(3, &h, &w, &phi).unwrap();
    assert!(v < 0.0, "{v}");
    assert!(equator_stability_form(7, &h, &w, &phi).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rayleigh_quotient_bounds_lambda(a in -1.0f64..1.0, b in -1.0f64..1.0, c in 0.1f64..1.0) {
        let g = RadialGrid::disk(128).unwrap();
        let op = LinearizedOperator::laplacian(g);
        let l = first_eigenvalue(&op).unwrap().lambda1;
        let phi: Vec<f64> = g.nodes().iter().map(|r| (1.0 - r * r) * (c + a * r + b * r * r * r)).collect();
        prop_assume!(l2_norm_sq(&g, &phi) > 1e-8);
        prop_assert!(rayleigh_quotient(&phi, &op) >= l * (1.0 - 1e-12));
    }
}
