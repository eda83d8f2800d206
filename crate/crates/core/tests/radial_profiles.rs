mod common;

use common::{loglog_slope, sample, shoot_flat, Wp};
use gl_dichotomy::potential::{builtin_exponential, builtin_quartic, PotentialSpec};
use gl_dichotomy::radial::*;
use proptest::prelude::*;

fn grid(n: usize) -> RadialGrid {
    RadialGrid::disk(n).unwrap()
}

#[test]
fn small_epsilon_pair_nearly_vertical_on_axis() {
    let w = builtin_quartic();
    let g = grid(512);
    let pair = solve_pair(0.05, 1, &w, &g, None).unwrap().escaping().unwrap();
    assert!(pair.g[0] > 0.9);
    let last = g.count() - 1;
    assert_eq!((pair.f[last], pair.g[last]), (1.0, 0.0));
    assert!(residual_norm(&pair, &w) <= 1e-10);
    assert!(pair.f[..last].iter().all(|f| *f > 0.0));
    assert!(pair.g[..last].iter().all(|v| *v > 0.0));
    assert!(pair.max_norm_sq().sqrt() <= 1.0 + 10.0 * g.spacing());
}

#[test]
fn large_epsilon_has_no_escaping_pair() {
    for w in [builtin_quartic(), builtin_exponential()] {
        assert_eq!(solve_pair(10.0, 1, &w, &grid(512), None).unwrap(), PairSolution::NoEscapingSolution);
    }
}

#[test]
fn coarse_grid_rejected() {
    assert!(matches!(
        solve_pair(0.2, 1, &builtin_quartic(), &grid(16), None),
        Err(RadialError::GridTooCoarse { .. })
    ));
}

#[test]
fn flat_profile_matches_shooting_oracle() {
    let g = grid(512);
    for (w, wp) in [(builtin_quartic(), Wp::Quartic), (builtin_exponential(), Wp::Exponential)] {
        for (eps, k) in [(0.5, 1), (1.0, 1), (0.3, 2)] {
            let flat = solve_flat(eps, k, &w, &g).unwrap();
            assert!(residual_norm(&flat, &w) <= 1e-10);
            let (_, path) = shoot_flat(eps, k, wp);
            let err = g
                .nodes()
                .iter()
                .zip(&flat.vals)
                .filter(|(r, _)| **r > 1e-3)
                .fold(0.0f64, |m, (r, v)| m.max((v - sample(&path, *r)).abs()));
            assert!(err < 2e-5, "eps={eps} k={k}: {err}");
        }
    }
}

#[test]
fn flat_profile_orderings() {
    let w = builtin_quartic();
    let g = grid(512);
    let f = |e: f64, k: i32| solve_flat(e, k, &w, &g).unwrap();
    let (a, b) = (f(0.5, 1), f(0.5, 2));
    assert!(g.interpolate(&b.vals, 0.5) < g.interpolate(&a.vals, 0.5));
    let near_one = g.count() - 2;
    assert!((1.0 - a.vals[near_one]).abs() <= g.spacing());
    // smaller ε pulls |f| harder toward 1, on both solver and oracle
    let c = f(1.0, 1);
    let last = g.count() - 1;
    assert!(a.vals[..last].iter().zip(&c.vals).all(|(x, y)| x > y));
    let (_, pa) = shoot_flat(0.5, 1, Wp::Quartic);
    let (_, pc) = shoot_flat(1.0, 1, Wp::Quartic);
    assert!([0.1, 0.3, 0.5, 0.7, 0.9].iter().all(|&r| sample(&pa, r) > sample(&pc, r)));
    assert!(a.vals[..last].iter().all(|v| *v > 0.0 && *v < 1.0));
}

#[test]
fn equator_profiles() {
    let w = builtin_quartic();
    let g = RadialGrid::new(512, 7).unwrap();
    let h = solve_equator(0.3, 7, &w, &g).unwrap();
    assert!(residual_norm(&h, &w) <= 1e-10);
    let last = g.count() - 1;
    assert!(h.vals.windows(2).all(|p| p[0] < p[1]));
    assert!(h.vals[..last].iter().all(|v| *v > 0.0 && *v < 1.0));
    // leading Frobenius term h ~ a r
    let slope = h.vals[1] / g.r(1);
    assert!(h.vals[0] <= 1.01 * slope * g.r(0));

    let g3 = RadialGrid::new(512, 3).unwrap();
    let h3 = solve_equator(5.0, 3, &w, &g3).unwrap();
    // with W' dropped the equation -Δh + 2h/r^2 = 0 has solution h = r
    let d = g3.nodes().iter().zip(&h3.vals).fold(0.0f64, |m, (r, v)| m.max((r - v).abs()));
    assert!(d <= 0.05, "{d}");
}

#[test]
fn residual_norm_examples() {
    let w = builtin_quartic();
    let g = grid(256);
    let mut lim = limit_profile(1, &g).unwrap();
    lim.epsilon = 0.01;
    let r = residual_norm(&lim, &w);
    assert!(r > 0.0 && r < 1.0, "{r}");
    let zero = ProfilePair { f: vec![0.0; g.count()], g: vec![0.0; g.count()], ..lim.clone() };
    assert!(residual_norm(&zero, &w) >= 1.0);
}

#[test]
fn limit_profile_is_unit() {
    let g = grid(200);
    let lim = limit_profile(2, &g).unwrap();
    assert!(lim.f.iter().zip(&lim.g).all(|(f, h)| (f * f + h * h - 1.0).abs() < 1e-14));
    assert!(lim.g[0] > 0.999);
}

#[test]
fn pair_converges_at_second_order() {
    let w = builtin_quartic();
    let eps = 0.2;
    let fine_grid = grid(2048);
    let fine = solve_pair(eps, 1, &w, &fine_grid, None).unwrap().escaping().unwrap();
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for n in [64, 128, 256, 512] {
        let g = grid(n);
        let p = solve_pair(eps, 1, &w, &g, None).unwrap().escaping().unwrap();
        let e = g.nodes().iter().enumerate().fold(0.0f64, |m, (i, &r)| {
            let df = p.f[i] - fine_grid.interpolate(&fine.f, r);
            let dg = p.g[i] - fine_grid.interpolate(&fine.g, r);
            m.max(df.abs()).max(dg.abs())
        });
        hs.push(g.spacing());
        errs.push(e);
    }
    let slope = loglog_slope(&hs, &errs);
    assert!((1.7..=2.3).contains(&slope), "slope {slope}, errors {errs:?}");
}

#[test]
fn warm_start_is_cheaper() {
    let w = builtin_quartic();
    let g = grid(512);
    let a = solve_pair(0.2, 1, &w, &g, None).unwrap().escaping().unwrap();
    let cold = solve_pair(0.21, 1, &w, &g, None).unwrap().escaping().unwrap();
    let warm = solve_pair(0.21, 1, &w, &g, Some(&a)).unwrap().escaping().unwrap();
    assert!(warm.newton_iterations < cold.newton_iterations);
    let d = warm.g.iter().zip(&cold.g).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(d < 1e-9);
}

#[test]
fn pairs_approach_the_limit() {
    let w = builtin_quartic();
    let g = grid(512);
    let lim = limit_profile(1, &g).unwrap();
    let dist: Vec<f64> = [0.2, 0.1, 0.05, 0.025]
        .iter()
        .map(|&e| {
            let p = solve_pair(e, 1, &w, &g, None).unwrap().escaping().unwrap();
            (0..g.count()).fold(0.0f64, |m, i| m.max((p.f[i] - lim.f[i]).abs()).max((p.g[i] - lim.g[i]).abs()))
        })
        .collect();
    assert!(dist.windows(2).all(|d| d[1] < d[0]), "{dist:?}");
}

#[test]
fn csv_round_trip() {
    let w = builtin_quartic();
    let g = grid(64);
    let p = solve_pair(0.2, 1, &w, &g, None).unwrap().escaping().unwrap();
    let csv = p.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("r,f,g"));
    for (i, line) in lines.enumerate() {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[1].to_bits(), p.f[i].to_bits());
        assert_eq!(v[2].to_bits(), p.g[i].to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flat_solutions_stay_in_unit_interval(eps in 0.05f64..3.0, k in 1i32..4, expo in proptest::bool::ANY) {
        let w: PotentialSpec = if expo { builtin_exponential() } else { builtin_quartic() };
        let g = grid(128);
        let f = solve_flat(eps, k, &w, &g).unwrap();
        prop_assert!(residual_norm(&f, &w) <= 1e-10);
        let last = g.count() - 1;
        prop_assert!(f.vals[..last].iter().all(|v| *v > 0.0 && *v < 1.0));
        prop_assert_eq!(f.vals[last], 1.0);
    }

    #[test]
    fn pair_solutions_respect_sup_bound(eps in 0.03f64..0.3) {
        let w = builtin_quartic();
        let g = grid(128);
        if let PairSolution::Escaping(p) = solve_pair(eps, 1, &w, &g, None).unwrap() {
            prop_assert!(residual_norm(&p, &w) <= 1e-10);
            prop_assert!(p.max_norm_sq().sqrt() <= 1.0 + 10.0 * g.spacing());
        }
    }
}
