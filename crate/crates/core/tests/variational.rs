#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use fbm_euler::grid_gaussian::*;
use fbm_euler::runner::vector_field_bank;
use fbm_euler::scheme::{euler_run, SchemeConfig};
use fbm_euler::tree_calculus::*;
use fbm_euler::variational::*;
use fbm_euler::Error;
use proptest::prelude::*;

fn hp(h: f64) -> HurstParams {
    HurstParams::with_default_p(h).unwrap()
}

fn bank_cfg(id: &str, n: usize) -> SchemeConfig<f64> {
    let field = Arc::new(vector_field_bank(id, None, None, false).unwrap());
    SchemeConfig::new(field, vec![0.2, -0.1], hp(0.4), Grid::new(1.0, n).unwrap()).unwrap()
}

fn scalar_cfg(map: impl SmoothMap<f64> + 'static, y0: f64, n: usize) -> SchemeConfig<f64> {
    let field = Arc::new(VectorField::new(vec![vec![Arc::new(map) as MapRef<f64>]]).unwrap());
    SchemeConfig::new(field, vec![y0], hp(0.4), Grid::new(1.0, n).unwrap()).unwrap()
}

#[test]
fn constant_field_first_level_is_field_times_direction() {
    let cfg = bank_cfg("const", 32);
    let x = sample_fbm(&cfg.grid, &cfg.hurst, 2, 1).unwrap();
    let b = sample_fbm(&cfg.grid, &cfg.hurst, 2, 2).unwrap();
    let y = euler_run(&cfg, &x).unwrap();
    let coeffs = XiCoefficients::factorial_ratio(2).unwrap();
    let xi = xi_run(2, &cfg, &y, &x, &b, &coeffs, 5).unwrap();
    assert_eq!(xi.start(), 5);
    assert_eq!(xi.depth(), 2);
    for k in 0..=32 {
        let db = if k >= 5 { b.increment(5, k) } else { vec![0.0, 0.0] };
        let want = [db[0] + 0.3 * db[1], 0.3 * db[0] + db[1]];
        for i in 0..2 {
            assert!((xi.level(1).coord(k, i) - want[i]).abs() < 1e-14);
            assert_eq!(xi.level(2).coord(k, i), 0.0);
        }
    }
}

#[test]
fn zero_direction_gives_zero_first_level() {
    let cfg = bank_cfg("sincos-m2d2", 32);
    let x = sample_fbm(&cfg.grid, &cfg.hurst, 2, 4).unwrap();
    let y = euler_run(&cfg, &x).unwrap();
    let zero = GridPath::zeros(cfg.grid, 2);
    let xi = xi_run(3, &cfg, &y, &x, &zero, &XiCoefficients::factorial_ratio(3).unwrap(), 0).unwrap();
    assert!(xi.level(1).values().iter().all(|&v| v == 0.0));
    // the higher levels keep the direction-free ℒ̃ correction
    assert!(xi.level(2).values().iter().any(|&v| v != 0.0));
    for z in directional_derivative_run(3, &cfg, &y, &x, &zero).unwrap() {
        assert!(z.values().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn first_level_is_odd_in_the_direction() {
    let cfg = bank_cfg("sincos-m2d2", 32);
    let x = sample_fbm(&cfg.grid, &cfg.hurst, 2, 6).unwrap();
    let y = euler_run(&cfg, &x).unwrap();
    let b = sample_fbm(&cfg.grid, &cfg.hurst, 2, 7).unwrap();
    let neg = GridPath::zeros(cfg.grid, 2).axpy(-1.0, &b).unwrap();
    let co = XiCoefficients::factorial_ratio(2).unwrap();
    let plus = xi_run(2, &cfg, &y, &x, &b, &co, 0).unwrap();
    let minus = xi_run(2, &cfg, &y, &x, &neg, &co, 0).unwrap();
    for (a, m) in plus.level(1).values().iter().zip(minus.level(1).values()) {
        assert!((a + m).abs() < 1e-13);
    }
    assert!(plus.level(2).values().iter().zip(minus.level(2).values()).any(|(a, m)| (a + m).abs() > 1e-6));
}

// V(y) = sin y + 2 and its derivatives.
fn v(y: f64, k: usize) -> f64 {
    match k % 4 {
        0 => y.sin() + if k == 0 { 2.0 } else { 0.0 },
        1 => y.cos(),
        2 => -y.sin(),
        _ => -y.cos(),
    }
}

#[test]
fn depth_two_scalar_recursion_matches_hand_expansion() {
    let n = 24;
    let cfg = scalar_cfg(RidgeMap::new(2.0, 1.0, vec![1.0], 0.0, Profile::Sin).unwrap(), 0.4, n);
    let x = sample_fbm(&cfg.grid, &cfg.hurst, 1, 7).unwrap();
    let b = sample_fbm(&cfg.grid, &cfg.hurst, 1, 8).unwrap();
    let y = euler_run(&cfg, &x).unwrap();
    let xi = xi_run(2, &cfg, &y, &x, &b, &XiCoefficients::factorial_ratio(2).unwrap(), 0).unwrap();
    let half = 0.5 * cfg.hurst.delta_2h(&cfg.grid);
    let (mut e1, mut e2) = (0.0, 0.0);
    for k in 0..n {
        let yk = y.coord(k, 0);
        let (dx, db) = (x.increment(k, k + 1)[0], b.increment(k, k + 1)[0]);
        let (v0, v1, v2, v3) = (v(yk, 0), v(yk, 1), v(yk, 2), v(yk, 3));
        let l1 = v1 * e1;
        let l2 = 0.5 * v2 * e1 * e1 + v1 * e2;
        let bar1 = v2 * e1 * v0 + v1 * l1;
        let bar2 = 0.5 * (v3 * e1 * e1 * v0 + 2.0 * v2 * e1 * l1) + v2 * e2 * v0 + v1 * l2;
        let tilde1 = v1 * v0;
        let n1 = e1 + l1 * dx + v0 * db + half * bar1;
        let n2 = e2 + l2 * dx + l1 * db + half * (bar2 + tilde1);
        e1 = n1;
        e2 = n2;
        assert!((xi.level(1).coord(k + 1, 0) - e1).abs() < 1e-13, "level 1, step {k}");
        assert!((xi.level(2).coord(k + 1, 0) - e2).abs() < 1e-13, "level 2, step {k}");
    }
}

#[test]
fn first_level_equals_first_directional_derivative() {
    let cfg = bank_cfg("sincos-m2d2", 64);
    let x = sample_fbm(&cfg.grid, &cfg.hurst, 2, 9).unwrap();
    let y = euler_run(&cfg, &x).unwrap();
    let dir = GridPath::spread(&cameron_martin_direction(0.5, &cfg.grid, 0.4).unwrap(), &[1.0, 1.0]).unwrap();
    let xi = xi_run(1, &cfg, &y, &x, &dir, &XiCoefficients::factorial_ratio(1).unwrap(), 0).unwrap();
    let z = directional_derivative_run(1, &cfg, &y, &x, &dir).unwrap();
    for (a, b) in xi.level(1).values().iter().zip(z[0].values()) {
        assert!((a - b).abs() < 1e-13);
    }
}

#[test]
fn second_directional_derivative_matches_finite_difference() {
    let cfg = bank_cfg("sincos-m2d2", 32);
    let x = sample_fbm(&cfg.grid, &cfg.hurst, 2, 10).unwrap();
    let y = euler_run(&cfg, &x).unwrap();
    let dir = GridPath::spread(&cameron_martin_direction(1.0, &cfg.grid, 0.4).unwrap(), &[1.0, -0.5]).unwrap();
    let z = directional_derivative_run(2, &cfg, &y, &x, &dir).unwrap();
    let fd1 = fd_oracle(1, &cfg, &x, &dir, 1e-5).unwrap();
    let fd2 = fd_oracle(2, &cfg, &x, &dir, 1e-4).unwrap();
    for k in 0..=32 {
        for i in 0..2 {
            assert!((z[0].coord(k, i) - fd1.coord(k, i)).abs() < 1e-8);
            assert!((z[1].coord(k, i) - fd2.coord(k, i)).abs() < 1e-5);
        }
    }
    assert!(fd_oracle(3, &cfg, &x, &dir, 1e-4).is_err());
    assert!(fd_oracle(1, &cfg, &x, &dir, 0.0).is_err());
    assert!(directional_derivative_run(5, &cfg, &y, &x, &dir).is_err());
}

#[test]
fn initial_values_and_validation() {
    let cfg = bank_cfg("sincos-m2d2", 16);
    let x = sample_fbm(&cfg.grid, &cfg.hurst, 2, 11).unwrap();
    let y = euler_run(&cfg, &x).unwrap();
    let c = XiCoefficients::factorial_ratio(2).unwrap();
    let init = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
    let xi = xi_run_from(2, &cfg, &y, &x, &x, &c, 4, Some(&init)).unwrap();
    for k in 0..=4 {
        assert_eq!(xi.stack_at(k).levels(), init.as_slice());
    }
    assert!(xi_run_from(2, &cfg, &y, &x, &x, &c, 4, Some(&init[..1])).is_err());
    assert!(xi_run(0, &cfg, &y, &x, &x, &c, 0).is_err());
    assert!(xi_run(2, &cfg, &y, &x, &x, &c, 17).is_err());
    assert!(xi_run(3, &cfg, &y, &x, &x, &c, 0).is_err(), "coefficients too shallow");
    assert!(xi_run(2, &cfg, &x.select(0..1).unwrap(), &x, &x, &c, 0).is_err());
    let fd = FiniteDifferenceMap::new(1, |y| y[0].sin(), 1e-2, 3, 1.0).unwrap();
    let shallow = scalar_cfg(fd, 0.0, 16);
    let x1 = x.select(0..1).unwrap();
    let y1 = euler_run(&shallow, &x1).unwrap();
    assert!(xi_run(1, &shallow, &y1, &x1, &x1, &c, 0).is_ok());
    assert!(matches!(
        xi_run(2, &shallow, &y1, &x1, &x1, &c, 0),
        Err(Error::Capability { needed: 4, available: 3 })
    ));
}

#[test]
fn point_derivative_of_constant_field_is_a_step() {
    let cfg = bank_cfg("const", 16);
    let x = sample_fbm(&cfg.grid, &cfg.hurst, 2, 12).unwrap();
    let y = euler_run(&cfg, &x).unwrap();
    let pd = point_derivative_run(&cfg, &y, &x, 0.3, 1, Some((0.7, 0)), JumpVariant::PerCoordinate).unwrap();
    assert_eq!(pd.k0, 4);
    for k in 0..=16 {
        let want = if k > 4 { [0.3, 1.0] } else { [0.0, 0.0] };
        assert_eq!(pd.first.at(k), &want);
    }
    let second = pd.second.unwrap();
    assert_eq!(second.k0, 11);
    assert!(second.mixed.values().iter().all(|&v| v == 0.0));
    let summed = point_derivative_run(&cfg, &y, &x, 0.3, 1, None, JumpVariant::Summed).unwrap();
    assert_eq!(summed.a1, vec![1.3, 1.3]);
    assert!(point_derivative_run(&cfg, &y, &x, 0.3, 2, None, JumpVariant::Summed).is_err());
    assert!(point_derivative_run(&cfg, &y, &x, 0.0, 0, None, JumpVariant::Summed).is_err());
}

#[test]
fn point_derivative_of_linear_field_is_a_product() {
    let n = 32;
    let cfg = scalar_cfg(Polynomial::new(1, vec![(1.0, vec![1])]).unwrap(), 1.2, n);
    let x = sample_fbm(&cfg.grid, &cfg.hurst, 1, 13).unwrap();
    let y = euler_run(&cfg, &x).unwrap();
    let pd = point_derivative_run(&cfg, &y, &x, 0.4, 0, Some((0.8, 0)), JumpVariant::PerCoordinate).unwrap();
    let half = 0.5 * cfg.hurst.delta_2h(&cfg.grid);
    let k0 = pd.k0;
    let mut want = y.coord(k0, 0);
    for k in k0 + 1..=n {
        assert!((pd.first.coord(k, 0) - want).abs() < 1e-12 * want.abs().max(1.0));
        if k < n {
            want *= 1.0 + x.increment(k, k + 1)[0] + half;
        }
    }
    // linear field: D_r D_r′ y after the later jump follows the same product as D_r y
    let second = pd.second.unwrap();
    let kk = second.k0;
    let mut mixed = second.a2[0];
    assert!((mixed - pd.first.coord(kk, 0)).abs() < 1e-12);
    assert!((second.mixed.coord(kk + 1, 0) - mixed).abs() < 1e-12);
    for k in kk + 2..=n {
        mixed *= 1.0 + x.increment(k - 1, k)[0] + half;
        assert!((second.mixed.coord(k, 0) - mixed).abs() < 1e-12 * mixed.abs().max(1.0));
    }
}

#[test]
fn mixed_point_derivative_is_symmetric() {
    let cfg = bank_cfg("sincos-m2d2", 32);
    let x = sample_fbm(&cfg.grid, &cfg.hurst, 2, 14).unwrap();
    let y = euler_run(&cfg, &x).unwrap();
    let a = point_derivative_run(&cfg, &y, &x, 0.2, 0, Some((0.6, 1)), JumpVariant::PerCoordinate).unwrap();
    let b = point_derivative_run(&cfg, &y, &x, 0.6, 1, Some((0.2, 0)), JumpVariant::PerCoordinate).unwrap();
    let (ma, mb) = (a.second.unwrap().mixed, b.second.unwrap().mixed);
    for (u, v) in ma.values().iter().zip(mb.values()) {
        assert!((u - v).abs() < 1e-13);
    }
}

fn brute_p(norms: &[f64], l: usize) -> f64 {
    fn go(norms: &[f64], budget: usize, min_level: usize, acc: f64, best: &mut f64) {
        *best = best.max(acc);
        for i in min_level..=budget.min(norms.len()) {
            go(norms, budget - i, i, acc * norms[i - 1], best);
        }
    }
    let mut best = 1.0;
    go(norms, l, 1, 1.0, &mut best);
    best
}

#[test]
fn p_from_norms_examples() {
    assert_eq!(p_from_norms(&[2.0, 3.0], 2), 4.0);
    assert_eq!(p_from_norms(&[0.5, 0.25], 2), 1.0);
    assert_eq!(p_from_norms(&[0.5, 5.0, 0.1], 3), 5.0);
    assert_eq!(p_from_norms::<f64>(&[], 0), 1.0);
}

#[test]
fn p_process_reads_level_norms() {
    let cfg = bank_cfg("sincos-m2d2", 16);
    let x = sample_fbm(&cfg.grid, &cfg.hurst, 2, 15).unwrap();
    let y = euler_run(&cfg, &x).unwrap();
    let xi = xi_run(3, &cfg, &y, &x, &x, &XiCoefficients::factorial_ratio(3).unwrap(), 0).unwrap();
    for k in [0, 7, 16] {
        let norms: Vec<f64> =
            (1..=3).map(|l| xi.level(l).at(k).iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
        for l in 0..=3 {
            assert_eq!(p_process(&xi, k, l as isize).unwrap(), brute_p(&norms, l));
        }
    }
    assert_eq!(p_process(&xi, 3, -1).unwrap(), 0.0);
    assert!(p_process(&xi, 3, 4).is_err());
}

proptest! {
    #[test]
    fn p_matches_brute_force(norms in proptest::collection::vec(0.0f64..4.0, 1..6)) {
        for l in 0..=norms.len() {
            let got = p_from_norms(&norms, l);
            let want = brute_p(&norms, l);
            prop_assert!((got - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn p_is_monotone_and_supermultiplicative(norms in proptest::collection::vec(0.0f64..4.0, 6)) {
        for a in 0..=3 {
            prop_assert!(p_from_norms(&norms, a) >= 1.0);
            prop_assert!(p_from_norms(&norms, a + 1) >= p_from_norms(&norms, a));
            if a >= 1 {
                prop_assert!(p_from_norms(&norms, a) >= norms[a - 1]);
            }
            for b in 0..=3 {
                let lhs = p_from_norms(&norms, a + b);
                prop_assert!(lhs >= p_from_norms(&norms, a) * p_from_norms(&norms, b) * (1.0 - 1e-12));
            }
        }
    }
}
