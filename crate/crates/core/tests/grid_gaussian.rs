use fbm_euler::grid_gaussian::*;
use fbm_euler::Error;
use proptest::prelude::*;

fn hp(h: f64) -> HurstParams {
    HurstParams::with_default_p(h).unwrap()
}

#[test]
fn grid_basics() {
    let g = Grid::new(2.0, 8).unwrap();
    assert_eq!(g.points(), 9);
    assert_eq!(g.time(0), 0.0);
    assert_eq!(g.time(8), 2.0);
    assert!((g.delta() - 0.25).abs() < 1e-15);
    assert_eq!(g.step_containing(0.25).unwrap(), 0);
    assert_eq!(g.step_containing(0.26).unwrap(), 1);
    assert_eq!(g.step_containing(2.0).unwrap(), 7);
    assert!(g.step_containing(0.0).is_err());
    assert!(Grid::new(1.0, 0).is_err());
    assert!(Grid::new(-1.0, 4).is_err());
}

#[test]
fn hurst_validation() {
    assert!(HurstParams::new(0.3, 4.0).is_err());
    assert!(HurstParams::new(0.5, 4.0).is_err());
    assert!(HurstParams::new(0.4, 2.4).is_err(), "pH must exceed 1");
    let p = hp(0.4);
    assert!(p.p() * p.h() > 1.0);
    assert!(3.0 / p.p() > 1.0);
}

#[test]
fn covariance_closed_forms() {
    assert!((fbm_covariance(0.7, 0.7, 0.4).unwrap() - 0.7f64.powf(0.8)).abs() < 1e-15);
    assert!((fbm_covariance(1.0, 2.0, 0.5).unwrap() - 1.0).abs() < 1e-15);
    let direct = 0.5 * (0.3f64.powf(0.8) + 0.7f64.powf(0.8) - 0.4f64.powf(0.8));
    assert!((fbm_covariance(0.3, 0.7, 0.4).unwrap() - direct).abs() < 1e-15);
    assert!(matches!(fbm_covariance(-0.1, 0.5, 0.4), Err(Error::Domain(_))));
}

#[test]
fn rectangle_products() {
    assert!((inner_product_rect(0.2, 0.5, 0.2, 0.5, 0.4).unwrap() - 0.3f64.powf(0.8)).abs() < 1e-14);
    assert!(inner_product_rect(0.0, 1.0, 2.0, 3.0, 0.4).unwrap() < 0.0);
    assert!(inner_product_rect(0.0, 1.0, 1.0, 2.0, 0.5).unwrap().abs() < 1e-15);
    assert!(inner_product_rect(0.5, 0.2, 0.0, 1.0, 0.4).is_err());
}

#[test]
fn rectangle_negative_correlation_matches_monte_carlo() {
    let grid = Grid::new(3.0, 3).unwrap();
    let n = 4000;
    let prods: Vec<f64> = (0..n)
        .map(|s| {
            let x = sample_fbm(&grid, &hp(0.4), 1, s).unwrap();
            x.increment(0, 1)[0] * x.increment(2, 3)[0]
        })
        .collect();
    let mean = prods.iter().sum::<f64>() / n as f64;
    let var = prods.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se = (var / n as f64).sqrt();
    let exact = inner_product_rect(0.0, 1.0, 2.0, 3.0, 0.4).unwrap();
    assert!((mean - exact).abs() <= 3.0 * se, "mean {mean} exact {exact} se {se}");
}

#[test]
fn increment_gram_is_positive_semidefinite() {
    for h in [0.34, 0.4, 0.49] {
        let n = 64;
        let shifted = CholeskyFactor::factor(n, |i, j| {
            let v = inner_product_rect(i as f64, i as f64 + 1.0, j as f64, j as f64 + 1.0, h).unwrap();
            if i == j {
                v + 1e-10
            } else {
                v
            }
        });
        assert!(shifted.is_ok(), "Gram matrix at H = {h} has an eigenvalue below -1e-10");
    }
}

#[test]
fn cholesky_reconstructs_matrix() {
    let f = increment_factor(16, 0.4).unwrap();
    for i in 0..16 {
        for j in 0..=i {
            let dot: f64 = f.row(i).iter().zip(f.row(j)).map(|(a, b)| a * b).sum();
            let exact = inner_product_rect(i as f64, i as f64 + 1.0, j as f64, j as f64 + 1.0, 0.4).unwrap();
            assert!((dot - exact).abs() < 1e-12);
        }
    }
}

#[test]
fn sampling_is_deterministic_and_starts_at_zero() {
    let grid = Grid::new(1.0, 32).unwrap();
    let a = sample_fbm(&grid, &hp(0.4), 2, 42).unwrap();
    let b = sample_fbm(&grid, &hp(0.4), 2, 42).unwrap();
    assert_eq!(a.values(), b.values());
    assert!(a.at(0).iter().all(|&v| v == 0.0));
    let c = sample_fbm(&grid, &hp(0.4), 2, 43).unwrap();
    assert_ne!(a.values(), c.values());
}

#[test]
fn coordinates_are_stable_when_dims_grow() {
    let grid = Grid::new(1.0, 16).unwrap();
    let narrow = sample_fbm(&grid, &hp(0.4), 1, 5).unwrap();
    let wide = sample_fbm(&grid, &hp(0.4), 3, 5).unwrap();
    for k in 0..=16 {
        assert_eq!(narrow.coord(k, 0), wide.coord(k, 0));
    }
}

#[test]
fn derived_seed_differs() {
    for s in 0..100 {
        assert_ne!(derived_seed(s), s);
    }
    assert_eq!(derived_seed(9), derived_seed(9));
}

#[test]
fn terminal_variance_matches_covariance() {
    let grid = Grid::new(2.0, 16).unwrap();
    let n = 2000;
    let sq: Vec<f64> = (0..n).map(|s| sample_fbm(&grid, &hp(0.4), 1, s).unwrap().coord(16, 0).powi(2)).collect();
    let mean = sq.iter().sum::<f64>() / n as f64;
    let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se = (var / n as f64).sqrt();
    let exact = 2f64.powf(0.8);
    assert!((mean - exact).abs() <= 3.0 * se, "mean {mean} exact {exact} se {se}");
}

#[test]
fn empirical_covariances_within_four_standard_errors() {
    let n = 8;
    let grid = Grid::new(1.0, n).unwrap();
    let paths: Vec<Vec<f64>> = (0..2000u64)
        .map(|s| {
            let x = sample_fbm(&grid, &hp(0.35), 1, 1000 + s).unwrap();
            (0..=n).map(|k| x.coord(k, 0)).collect()
        })
        .collect();
    let m = paths.len() as f64;
    for a in 1..=n {
        for b in a..=n {
            let prods: Vec<f64> = paths.iter().map(|p| p[a] * p[b]).collect();
            let mean = prods.iter().sum::<f64>() / m;
            let var = prods.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
            let exact = fbm_covariance(grid.time(a), grid.time(b), 0.35).unwrap();
            assert!((mean - exact).abs() <= 4.0 * (var / m).sqrt(), "pair ({a},{b})");
        }
    }
}

#[test]
fn cameron_martin_direction_values() {
    let grid = Grid::new(1.0, 8).unwrap();
    let zero = cameron_martin_direction(0.0, &grid, 0.4).unwrap();
    assert!(zero.values().iter().all(|&v| v == 0.0));
    let h = cameron_martin_direction(0.5, &grid, 0.4).unwrap();
    assert!((h.coord(4, 0) - 0.5f64.powf(0.8)).abs() < 1e-15);
    let full = cameron_martin_direction(1.0, &grid, 0.4).unwrap();
    assert!((full.coord(4, 0) - fbm_covariance(1.0, 0.5, 0.4).unwrap()).abs() < 1e-15);
    assert!(cameron_martin_direction(1.5, &grid, 0.4).is_err());
}

#[test]
fn path_operations() {
    let grid = Grid::new(1.0, 4).unwrap();
    let p = GridPath::from_fn(grid, 2, |k, i| (k * (i + 1)) as f64).unwrap();
    assert_eq!(p.increment(1, 3), vec![2.0, 4.0]);
    assert_eq!(p.increment_norm(1, 3), 4.0);
    let coarse = p.restrict(2).unwrap();
    assert_eq!(coarse.grid().steps(), 2);
    assert_eq!(coarse.at(1), p.at(2));
    assert!(p.restrict(3).is_err());
    let q = p.concat(&p).unwrap();
    assert_eq!(q.dims(), 4);
    assert_eq!(q.at(2), &[2.0, 4.0, 2.0, 4.0]);
    let s = q.select(2..4).unwrap();
    assert_eq!(s.values(), p.values());
    let sum = p.axpy(2.0, &p).unwrap();
    assert_eq!(sum.at(1), &[3.0, 6.0]);
    let scalar = GridPath::from_fn(grid, 1, |k, _| k as f64).unwrap();
    let spread = GridPath::spread(&scalar, &[1.0, -1.0]).unwrap();
    assert_eq!(spread.at(3), &[3.0, -3.0]);
    let f32_path: GridPath<f32> = p.cast();
    assert_eq!(f32_path.at(4), &[4.0f32, 8.0]);
    assert!(GridPath::new(grid, 2, vec![0.0; 9]).is_err());
    assert!(GridPath::new(grid, 1, vec![f64::NAN; 5]).is_err());
}

#[test]
fn restriction_sums_fine_increments() {
    let fine = sample_fbm(&Grid::new(1.0, 64).unwrap(), &hp(0.4), 2, 3).unwrap();
    let coarse = fine.restrict(8).unwrap();
    for k in 0..8 {
        let summed: Vec<f64> = (0..2)
            .map(|i| (8 * k..8 * (k + 1)).map(|f| fine.increment(f, f + 1)[i]).sum::<f64>())
            .collect();
        let direct = coarse.increment(k, k + 1);
        for i in 0..2 {
            assert!((summed[i] - direct[i]).abs() < 1e-13);
        }
    }
}

proptest! {
    #[test]
    fn covariance_is_symmetric(s in 0.0f64..5.0, t in 0.0f64..5.0, h in 0.34f64..0.49) {
        prop_assert_eq!(fbm_covariance(s, t, h).unwrap(), fbm_covariance(t, s, h).unwrap());
    }

    #[test]
    fn rectangle_matches_four_covariances(
        a in 0.0f64..3.0, b in 0.0f64..3.0, c in 0.0f64..3.0, d in 0.0f64..3.0, h in 0.34f64..0.49
    ) {
        let (u, v) = (a.min(b), a.max(b));
        let (s, t) = (c.min(d), c.max(d));
        let r = |x: f64, y: f64| fbm_covariance(x, y, h).unwrap();
        let expanded = r(v, t) - r(v, s) - r(u, t) + r(u, s);
        prop_assert!((inner_product_rect(u, v, s, t, h).unwrap() - expanded).abs() < 1e-12);
    }
}
