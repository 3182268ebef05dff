#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use fbm_euler::runner::vector_field_bank;
use fbm_euler::tree_calculus::*;
use fbm_euler::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn poly(m: usize, terms: &[(f64, &[u32])]) -> Polynomial<f64> {
    Polynomial::new(m, terms.iter().map(|(c, e)| (*c, e.to_vec())).collect()).unwrap()
}

fn stack(m: usize, levels: Vec<Vec<f64>>) -> DerivativeStack<f64> {
    DerivativeStack::new(m, levels).unwrap()
}

fn random_poly(rng: &mut ChaCha8Rng, m: usize) -> Polynomial<f64> {
    let terms = (0..rng.gen_range(1..5))
        .map(|_| (rng.gen_range(-1.0..1.0), (0..m).map(|_| rng.gen_range(0..4)).collect()))
        .collect();
    Polynomial::new(m, terms).unwrap()
}

fn random_stack(rng: &mut ChaCha8Rng, m: usize, depth: usize) -> DerivativeStack<f64> {
    stack(m, (0..depth).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
}

#[test]
fn cubic_chain_rule_example() {
    let f = poly(1, &[(1.0, &[3])]);
    let s = stack(1, vec![vec![1.0], vec![4.0], vec![5.0]]);
    assert_eq!(tree_chain_rule(&f, &[2.0], &s, 0).unwrap(), 8.0);
    assert_eq!(tree_chain_rule(&f, &[2.0], &s, 1).unwrap(), 12.0);
    assert_eq!(tree_chain_rule(&f, &[2.0], &s, 2).unwrap(), 12.0 + 12.0 * 4.0);
    assert_eq!(tree_chain_rule(&f, &[2.0], &s, 3).unwrap(), 6.0 + 3.0 * 12.0 * 4.0 + 12.0 * 5.0);
}

#[test]
fn linear_map_passes_derivatives_through() {
    let f = poly(2, &[(2.0, &[1, 0]), (-3.0, &[0, 1]), (0.5, &[0, 0])]);
    let s = stack(2, vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.25], vec![-2.0, 1.0]]);
    for n in 1..=4 {
        let d = s.level(n);
        let want = 2.0 * d[0] - 3.0 * d[1];
        assert!((tree_chain_rule(&f, &[0.3, -0.7], &s, n).unwrap() - want).abs() < 1e-14);
    }
}

#[test]
fn product_rule_with_unit_factor_is_chain_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let one = poly(2, &[(1.0, &[0, 0])]);
    for _ in 0..50 {
        let f = random_poly(&mut rng, 2);
        let s = random_stack(&mut rng, 2, 4);
        let y = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        for n in 1..=4 {
            let prod = tree_product_rule(&f, &one, &y, &s, &[0.0; 4], n).unwrap();
            let chain = tree_chain_rule(&f, &y, &s, n).unwrap();
            assert!((prod - chain).abs() < 1e-12 * (1.0 + chain.abs()));
        }
    }
}

fn multiply(f: &Polynomial<f64>, g: &Polynomial<f64>, m: usize) -> Polynomial<f64> {
    let mut terms = Vec::new();
    for (a, ea) in f.terms() {
        for (b, eb) in g.terms() {
            terms.push((a * b, ea.iter().zip(eb).map(|(x, y)| x + y).collect()));
        }
    }
    Polynomial::new(m, terms).unwrap()
}

#[test]
fn product_rule_matches_chain_rule_of_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let m = rng.gen_range(1..=3);
        let (f, g) = (random_poly(&mut rng, m), random_poly(&mut rng, m));
        let fg = multiply(&f, &g, m);
        let s = random_stack(&mut rng, m, 4);
        let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g_table: Vec<f64> = (1..=4).map(|n| tree_chain_rule(&g, &y, &s, n).unwrap()).collect();
        for n in 1..=4 {
            let prod = tree_product_rule(&f, &g, &y, &s, &g_table, n).unwrap();
            let direct = tree_chain_rule(&fg, &y, &s, n).unwrap();
            assert!((prod - direct).abs() < 1e-11 * (1.0 + direct.abs()), "n = {n}: {prod} vs {direct}");
        }
    }
}

#[test]
fn second_order_product_rule_matches_finite_difference() {
    let f = poly(1, &[(1.0, &[2]), (0.5, &[1])]);
    let g = poly(1, &[(1.0, &[3]), (-1.0, &[0])]);
    let s = stack(1, vec![vec![0.7], vec![-0.4]]);
    let y = 0.6;
    let curve = |e: f64| {
        let z = y + 0.7 * e - 0.4 * e * e / 2.0;
        (z * z + 0.5 * z) * (z * z * z - 1.0)
    };
    let h = 1e-3;
    let fd = (curve(h) - 2.0 * curve(0.0) + curve(-h)) / (h * h);
    let g_table: Vec<f64> = (1..=2).map(|n| tree_chain_rule(&g, &[y], &s, n).unwrap()).collect();
    let v = tree_product_rule(&f, &g, &[y], &s, &g_table, 2).unwrap();
    assert!((v - fd).abs() < 1e-5, "{v} vs {fd}");
    assert!(tree_product_rule(&f, &g, &[y], &s, &g_table[..1], 2).is_err());
}

#[test]
fn operator_with_unit_coefficients_is_chain_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ones = CoefficientFamily::ones(4).unwrap();
    for _ in 0..50 {
        let f = random_poly(&mut rng, 2);
        let s = random_stack(&mut rng, 2, 4);
        let y = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        for n in 1..=4isize {
            let a = op_l(n, &f, &y, &s, &ones).unwrap();
            let b = tree_chain_rule(&f, &y, &s, n as usize).unwrap();
            assert!((a - b).abs() < 1e-13 * (1.0 + b.abs()));
        }
        assert_eq!(op_l(0, &f, &y, &s, &ones).unwrap(), f.value(&y));
        assert_eq!(op_l(-1, &f, &y, &s, &ones).unwrap(), 0.0);
    }
}

#[test]
fn factorial_family_values() {
    let c = CoefficientFamily::<f64>::factorial_ratio(3).unwrap();
    assert_eq!(c.depth(), 3);
    assert_eq!(c.get(1, 0), 1.0);
    assert_eq!(c.get(2, 0), 0.5);
    assert_eq!(c.get(2, 1), 1.0);
    assert_eq!(CoefficientFamily::<f64>::zeros(2).unwrap().get(2, 1), 0.0);
    assert!(CoefficientFamily::<f64>::ones(99).is_err());
}

fn arc(p: Polynomial<f64>) -> MapRef<f64> {
    Arc::new(p)
}

#[test]
fn bar_and_tilde_operators_at_low_levels() {
    let f = poly(1, &[(1.0, &[2])]);
    let g = vec![arc(poly(1, &[(1.0, &[3])]))];
    let s = stack(1, vec![vec![0.5], vec![0.25]]);
    let c = CoefficientFamily::factorial_ratio(2).unwrap();
    let y = [2.0];
    assert_eq!(op_lbar(-1, &f, &g, &y, &s, &c).unwrap(), 0.0);
    assert_eq!(op_lbar(0, &f, &g, &y, &s, &c).unwrap(), 4.0 * 8.0);
    // d/dε [f'(y + εξ) g(y + εξ)] = (f'' g + f' g') ξ
    assert!((op_lbar(1, &f, &g, &y, &s, &c).unwrap() - (2.0 * 8.0 + 4.0 * 12.0) * 0.5).abs() < 1e-14);
    assert_eq!(op_ltilde(0, &f, &g, &y, &s, &c, &c).unwrap(), 0.0);
    assert_eq!(op_ltilde(1, &f, &g, &y, &s, &c, &c).unwrap(), 4.0 * 8.0);
}

#[test]
fn bar_operator_at_level_two_is_second_derivative() {
    // with factorial coefficients ℒ^L reproduces derivatives of y ↦ φ(y + Σ ε^ℓ ξ^ℓ) / L!
    let f = poly(1, &[(1.0, &[3]), (-2.0, &[1])]);
    let g = vec![arc(poly(1, &[(1.0, &[2]), (1.0, &[0])]))];
    let (x1, x2) = (0.3, -0.6);
    let s = stack(1, vec![vec![x1], vec![x2]]);
    let c = CoefficientFamily::factorial_ratio(2).unwrap();
    let y = 0.8;
    let curve = |e: f64| {
        let z = y + x1 * e + x2 * e * e;
        (3.0 * z * z - 2.0) * (z * z + 1.0)
    };
    let h = 1e-3;
    let fd = (curve(h) - 2.0 * curve(0.0) + curve(-h)) / (h * h) / 2.0;
    let v = op_lbar(2, &f, &g, &[y], &s, &c).unwrap();
    assert!((v - fd).abs() < 1e-5, "{v} vs {fd}");
}

#[test]
fn operators_are_invariant_under_coordinate_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c = CoefficientFamily::factorial_ratio(3).unwrap();
    for _ in 0..30 {
        let f = random_poly(&mut rng, 2);
        let swapped = Polynomial::new(2, f.terms().iter().map(|(k, e)| (*k, vec![e[1], e[0]])).collect()).unwrap();
        let s = random_stack(&mut rng, 2, 3);
        let s_sw = stack(2, s.levels().iter().map(|v| vec![v[1], v[0]]).collect());
        let y = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        for l in 0..=3isize {
            let a = op_l(l, &f, &y, &s, &c).unwrap();
            let b = op_l(l, &swapped, &[y[1], y[0]], &s_sw, &c).unwrap();
            assert!((a - b).abs() < 1e-13 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn capability_and_shape_errors() {
    let fd = FiniteDifferenceMap::new(1, |y| y[0].sin(), 1e-3, 1, 1.0).unwrap();
    let s = stack(1, vec![vec![1.0], vec![1.0]]);
    let c = CoefficientFamily::ones(2).unwrap();
    assert!(op_l(1, &fd, &[0.2], &s, &c).is_ok());
    assert!(matches!(op_l(2, &fd, &[0.2], &s, &c), Err(Error::Capability { needed: 2, available: 1 })));
    assert!(matches!(contract_checked(&fd, &[0.2], &[&[1.0], &[1.0]]), Err(Error::Capability { .. })));
    let p = poly(1, &[(1.0, &[2])]);
    assert!(op_l(3, &p, &[0.2], &s, &c).is_err(), "stack too shallow");
    assert!(op_l(1, &p, &[0.2, 0.1], &s, &c).is_err(), "dimension mismatch");
    assert!(DerivativeStack::new(2, vec![vec![1.0]]).is_err());
    assert!(DerivativeStack::new(1, vec![vec![f64::INFINITY]]).is_err());
    assert!(Polynomial::<f64>::new(2, vec![(1.0, vec![1])]).is_err());
    assert!(FiniteDifferenceMap::new(1, |y| y[0], 0.0, 1, 1.0).is_err());
    let field = VectorField::new(vec![vec![Arc::new(fd) as MapRef<f64>]]).unwrap();
    assert!(matches!(field.c0(2), Err(Error::Capability { .. })));
}

#[test]
fn finite_difference_map_agrees_with_closed_form() {
    let fd = FiniteDifferenceMap::new(2, |y| (0.5 * y[0] - y[1]).sin(), 1e-3, 2, 1.0).unwrap();
    let exact = RidgeMap::new(0.0, 1.0, vec![0.5, -1.0], 0.0, Profile::Sin).unwrap();
    let y = [0.4, -0.2];
    let a = [1.0, 0.3];
    let b = [-0.5, 2.0];
    assert!((fd.contract(&y, &[&a]) - exact.contract(&y, &[&a])).abs() < 1e-6);
    assert!((fd.contract(&y, &[&a, &b]) - exact.contract(&y, &[&a, &b])).abs() < 1e-5);
}

#[test]
fn ridge_contraction_matches_tensor() {
    let r = RidgeMap::new(0.2, 0.7, vec![0.3, -1.1, 0.5], 0.1, Profile::Tanh).unwrap();
    let y = [0.1, 0.4, -0.3];
    let dirs: [&[f64]; 3] = [&[1.0, 0.0, 2.0], &[0.5, -1.0, 0.2], &[0.0, 0.3, 1.0]];
    for k in 0..=3 {
        let t = r.derivative_tensor(&y, k);
        let direct = contract_tensor(&t, 3, &dirs[..k]).unwrap();
        assert!((direct - r.contract(&y, &dirs[..k])).abs() < 1e-13);
    }
    assert!(contract_tensor(&[1.0, 2.0], 3, &dirs[..1]).is_err());
}

#[test]
fn bank_bounds_dominate_sampled_derivatives() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for id in ["sincos-m2d2", "sincos-m3d2", "linear-clipped", "const"] {
        let field = vector_field_bank(id, None, None, false).unwrap();
        let order = 3;
        let c0 = field.c0(order).unwrap();
        let mut sampled = 0.0f64;
        for _ in 0..4000 {
            let y: Vec<f64> = (0..field.m()).map(|_| rng.gen_range(-6.0..6.0)).collect();
            for j in 0..field.d() {
                for f in field.column(j) {
                    for k in 0..=order {
                        for v in f.derivative_tensor(&y, k) {
                            sampled = sampled.max(v.abs());
                        }
                    }
                }
            }
        }
        assert!(sampled <= c0 + 1e-12, "{id}: sampled {sampled} exceeds {c0}");
        assert!(sampled >= 0.97 * c0, "{id}: bound {c0} loose against {sampled}");
    }
}

#[test]
fn drift_and_dv_v() {
    let field = vector_field_bank("sincos-m2d2", None, None, true).unwrap();
    assert!(field.drift().is_some());
    let y = [0.3, -0.1];
    let v1 = field.eval_column(1, &y);
    let h = 1e-6;
    let plus: Vec<f64> = y.iter().zip(&v1).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = y.iter().zip(&v1).map(|(a, b)| a - h * b).collect();
    let dv = field.dv_v(0, 1, &y);
    for k in 0..2 {
        let fd = (field.eval_column(0, &plus)[k] - field.eval_column(0, &minus)[k]) / (2.0 * h);
        assert!((dv[k] - fd).abs() < 1e-8);
    }
    assert!(vector_field_bank("sincos-m2d2", Some(3), None, false).is_err());
    assert!(vector_field_bank("nope", None, None, false).is_err());
}

proptest! {
    #[test]
    fn chain_rule_is_linear_in_the_map(seed in 0u64..1000, a in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_poly(&mut rng, 2);
        let g = random_poly(&mut rng, 2);
        let s = random_stack(&mut rng, 2, 3);
        let y = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let mut terms = f.terms().to_vec();
        terms.extend(g.terms().iter().map(|(c, e)| (a * c, e.clone())));
        let combo = Polynomial::new(2, terms).unwrap();
        for n in 1..=3 {
            let lhs = tree_chain_rule(&combo, &y, &s, n).unwrap();
            let rhs = tree_chain_rule(&f, &y, &s, n).unwrap() + a * tree_chain_rule(&g, &y, &s, n).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-11 * (1.0 + lhs.abs()));
        }
    }
}
