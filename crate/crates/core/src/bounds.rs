//! Constant ledger, threshold α, greedy control partition, the remainder
//! `R^L`, discrete sewing checks and the pathwise bound diagnostics.

use serde::Serialize;

use crate::error::{domain, Result};
use crate::grid_gaussian::{derived_seed, sample_fbm, GridPath};
use crate::rough_lift::{build_cross, Control, SecondChaos};
use crate::scalar::{max_abs, Scalar};
use crate::scheme::{euler_run, SchemeConfig};
use crate::tree_calculus::{
    inner_table, lbar_with, ltilde_with, op_l_vec_unchecked, DerivativeStack, VectorField,
};
use crate::trees::{tree_level, MAX_DEPTH};
use crate::variational::{p_from_norms, xi_run, XiCoefficients, XiProcess};

/// Terms kept explicitly before the Euler–Maclaurin tail in [`kmu`].
const KMU_TERMS: u64 = 1_000_000;

/// `K_μ = 2^μ Σ_{l≥1} l^{−μ}`.
pub fn kmu(mu: f64) -> Result<f64> {
    if !(mu > 1.0 && mu.is_finite()) {
        return Err(domain(format!("sewing exponent {mu} must exceed 1")));
    }
    let m = KMU_TERMS as f64;
    let tail = m.powf(1.0 - mu) / (mu - 1.0) + 0.5 * m.powf(-mu) + mu * m.powf(-mu - 1.0) / 12.0;
    Ok(2f64.powf(mu) * (partial_zeta(mu, KMU_TERMS - 1) + tail))
}

/// Rigorous integral-test bracket `(lower, upper)` for `K_μ`.
pub fn kmu_bracket(mu: f64) -> Result<(f64, f64)> {
    if !(mu > 1.0 && mu.is_finite()) {
        return Err(domain(format!("sewing exponent {mu} must exceed 1")));
    }
    let m = KMU_TERMS as f64;
    let head = partial_zeta(mu, KMU_TERMS);
    let scale = 2f64.powf(mu);
    Ok((scale * (head + (m + 1.0).powf(1.0 - mu) / (mu - 1.0)), scale * (head + m.powf(1.0 - mu) / (mu - 1.0))))
}

/// `Σ_{l=1}^{upto} l^{−μ}`, smallest terms first.
fn partial_zeta(mu: f64, upto: u64) -> f64 {
    (1..=upto).rev().map(|l| (l as f64).powf(-mu)).sum()
}

/// Every constant of the bound analysis, indexed by level `L = 0..=depth`.
#[derive(Clone, Debug, Serialize)]
pub struct ConstantLedger {
    pub depth: usize,
    pub p: f64,
    pub mu: f64,
    pub c0: f64,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub c3: Vec<f64>,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub c4: Vec<f64>,
    pub c5: Vec<f64>,
    pub c6: Vec<f64>,
    pub c7: Vec<f64>,
    pub c8: Vec<f64>,
    pub k4: Vec<f64>,
    pub k3: Vec<f64>,
    pub kmu: f64,
    pub alpha: f64,
}

/// Entry `l` of a level table with the convention that level `−1` is zero.
pub fn level(table: &[f64], l: isize) -> f64 {
    if l < 0 {
        0.0
    } else {
        table[l as usize]
    }
}

/// Builds the ledger for the factorial-ratio coefficients, `C⁰_V` taken to order `depth + 2`.
pub fn build_ledger(field: &VectorField<f64>, depth: usize, p: f64) -> Result<ConstantLedger> {
    let c0 = field.c0(depth + 2)?;
    ledger_from_c0(c0, depth, p)
}

/// Ledger arithmetic from a given `C⁰_V`.
pub fn ledger_from_c0(c0: f64, depth: usize, p: f64) -> Result<ConstantLedger> {
    if depth > MAX_DEPTH - 1 {
        return Err(domain(format!("ledger depth {depth} exceeds {}", MAX_DEPTH - 1)));
    }
    if !(p > 1.0) || !(c0 >= 0.0 && c0.is_finite()) {
        return Err(domain("ledger needs p > 1 and a finite C0"));
    }
    let mu = 3.0 / p;
    let kmu = kmu(mu)?;
    // Level 1 is always tabulated since C⁵ uses K₁¹.
    let top = depth.max(1);
    let levels: Vec<_> = (1..=top).map(tree_level).collect::<Result<_>>()?;
    let branches = |l: usize| {
        let tl = levels[l - 1];
        tl.stats.iter().zip(&tl.coefficients).map(|(st, c)| (st.slots().to_vec(), *c.numer() as f64 / *c.denom() as f64))
    };

    let mut c1 = vec![c0; top + 1];
    let mut c2 = vec![2.0 * c0 * c0; top + 1];
    let mut c3 = vec![0.0; top + 1];
    for l in 1..=top {
        c1[l] = branches(l).map(|(_, c)| c * c0).sum();
    }
    for l in 1..=top {
        c2[l] = branches(l).map(|(s, c)| c * c0 * (c0 + s.iter().map(|&r| c1[r]).sum::<f64>())).sum();
        c3[l] = branches(l).map(|(s, c)| s.iter().map(|&r| c * c0 * c1[r - 1]).sum::<f64>()).sum();
    }
    let k1: Vec<f64> = (0..=top).map(|l| c1[l] + level(&c1, l as isize - 1) + 1.0).collect();
    let k2: Vec<f64> = (0..=top)
        .map(|l| {
            let li = l as isize;
            c2[l] + level(&c2, li - 1) + c3[l] + level(&c3, li - 1) + 1.0
        })
        .collect();
    // C⁴: largest product of K₁ over compositions of L, times 2^{L+1}.
    let mut best = vec![1.0f64; top + 1];
    for s in 1..=top {
        best[s] = (1..=s).map(|i| k1[i] * best[s - i]).fold(f64::MIN, f64::max);
    }
    let c4: Vec<f64> = (0..=top).map(|l| 2f64.powi(l as i32 + 1) * best[l]).collect();

    let mut c5 = vec![c0 * k1[0]; top + 1];
    for l in 1..=top {
        c5[l] = 2.0
            * branches(l).map(|(s, c)| c * c0 * (k1[1] + s.iter().map(|&r| k1[r]).sum::<f64>())).sum::<f64>()
            * (1.0 + c4[l]);
    }
    let mut c6 = vec![2.0 * c0 * c0 * k1[0]; top + 1];
    let mut c7 = vec![0.0; top + 1];
    let mut c8 = vec![c0 * (k1[0] * k1[0] + k2[0]); top + 1];
    for l in 1..=top {
        let mut s6 = 0.0;
        let mut s7 = 0.0;
        let mut s8 = 0.0;
        for (s, c) in branches(l) {
            let others = |r: usize| -> f64 { s.iter().enumerate().filter(|&(q, _)| q != r).map(|(_, &o)| k1[o]).sum() };
            let mut t6 = c0 * c0 * (k1[0] + s.iter().map(|&r| k1[r]).sum::<f64>());
            let mut t7 = 0.0;
            let mut t8 = k1[0] * k1[0] + k2[0] + k1[0] * c4[l];
            for (r, &lr) in s.iter().enumerate() {
                t6 += c0 * (k1[0] * c1[lr] + c5[lr] + others(r) * c1[lr]);
                t7 += c0 * (k1[0] * c1[lr - 1] + c5[lr - 1] + others(r) * c1[lr - 1]);
                t8 += k2[lr] + k1[lr] * c4[l];
            }
            s6 += c * t6;
            s7 += c * t7;
            s8 += c * c0 * t8;
        }
        c6[l] = 2.0 * s6 * (1.0 + c4[l]);
        c7[l] = 2.0 * s7 * (1.0 + c4[l]);
        c8[l] = 2.0 * s8;
    }
    let k4: Vec<f64> = (0..=top)
        .map(|l| (c8[l] + level(&c8, l as isize - 1) + 4.0 * c6[l] + 4.0 * c7[l]).max(1.0))
        .collect();
    let k3: Vec<f64> = k4.iter().map(|k| (kmu * k).max(1.0)).collect();
    let root = (0..=depth).fold(0.5f64, |m, l| m.min(1.0 / k2[l]).min(1.0 / k3[l]));
    let alpha = root.powf(p);
    let cut = |v: Vec<f64>| v[..=depth].to_vec();
    Ok(ConstantLedger {
        depth,
        p,
        mu,
        c0,
        c1: cut(c1),
        c2: cut(c2),
        c3: cut(c3),
        k1: cut(k1),
        k2: cut(k2),
        c4: cut(c4),
        c5: cut(c5),
        c6: cut(c6),
        c7: cut(c7),
        c8: cut(c8),
        k4: cut(k4),
        k3: cut(k3),
        kmu,
        alpha,
    })
}

/// Class of a partition interval by its control value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum IntervalClass {
    /// `α/2 ≤ ω ≤ α`.
    S0,
    /// `ω < α/2`.
    S1,
    /// `ω > α`; the interval is a single step.
    S2,
}

#[derive(Clone, Debug, Serialize)]
pub struct GreedyPartition {
    pub alpha: f64,
    /// Grid indices `s_0 = 0 < s_1 < … < s_J = n`.
    pub anchors: Vec<usize>,
    pub classes: Vec<IntervalClass>,
    pub omegas: Vec<f64>,
}

impl GreedyPartition {
    pub fn intervals(&self) -> impl Iterator<Item = (usize, usize, IntervalClass)> + '_ {
        self.anchors.windows(2).zip(&self.classes).map(|(w, &c)| (w[0], w[1], c))
    }

    pub fn count(&self, class: IntervalClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }
}

pub fn classify(omega: f64, alpha: f64) -> IntervalClass {
    if omega > alpha {
        IntervalClass::S2
    } else if omega < 0.5 * alpha {
        IntervalClass::S1
    } else {
        IntervalClass::S0
    }
}

/// Left-to-right greedy partition: a single step when it already exceeds `α`,
/// otherwise the furthest point with `ω(s_j, u) ≤ α`.
pub fn greedy_partition<S: Scalar>(control: &impl Control<S>, alpha: f64) -> Result<GreedyPartition> {
    if !(alpha > 0.0) {
        return Err(domain("threshold α must be positive"));
    }
    let n = control.steps();
    let a = S::of(alpha);
    let mut anchors = vec![0usize];
    let mut classes = Vec::new();
    let mut omegas = Vec::new();
    let mut s = 0usize;
    while s < n {
        let row = control.row(s, n, Some(a));
        let next = if row[1] > a {
            s + 1
        } else {
            s + row.iter().rposition(|&v| v <= a).expect("row[0] = 0")
        };
        let w = row[next - s].as_f64();
        classes.push(classify(w, alpha));
        omegas.push(w);
        anchors.push(next);
        s = next;
    }
    Ok(GreedyPartition { alpha, anchors, classes, omegas })
}

/// The products `ℳ₀, ℳ₁, ℳ₂` in log and linear form.
#[derive(Clone, Debug, Serialize)]
pub struct MProducts {
    pub log_m0: f64,
    pub log_m1: f64,
    pub log_m2: f64,
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    pub intervals: usize,
}

/// `ℳ₀ = Π_{S0}(Kω^{1/p}+1)`, `ℳ₁ = Π_{S1}(Kω^{1/p}+1)`, `ℳ₂ = Π_{S2}(K|δw|+KΔ^{2H}+1)`.
pub fn m_products<S: Scalar>(
    part: &GreedyPartition,
    w_path: &GridPath<S>,
    delta_2h: f64,
    p: f64,
    k: f64,
) -> MProducts {
    let (mut l0, mut l1, mut l2) = (0.0, 0.0, 0.0);
    for ((s, t, class), &w) in part.intervals().zip(&part.omegas) {
        match class {
            IntervalClass::S0 => l0 += (k * w.powf(1.0 / p)).ln_1p(),
            IntervalClass::S1 => l1 += (k * w.powf(1.0 / p)).ln_1p(),
            IntervalClass::S2 => l2 += (k * w_path.increment_norm(s, t).as_f64() + k * delta_2h).ln_1p(),
        }
    }
    MProducts {
        log_m0: l0,
        log_m1: l1,
        log_m2: l2,
        m0: l0.exp(),
        m1: l1.exp(),
        m2: l2.exp(),
        intervals: part.classes.len(),
    }
}

/// Scheme run on `x` with an independent copy `b`, the joint second chaos and `Ξ¹..Ξ^N`.
#[derive(Clone, Debug)]
pub struct PathBundle<S> {
    pub cfg: SchemeConfig<S>,
    pub x: GridPath<S>,
    pub b: GridPath<S>,
    pub y: GridPath<S>,
    pub chaos: SecondChaos<S>,
    pub xi: XiProcess<S>,
    pub coeffs: XiCoefficients<S>,
}

impl<S: Scalar> PathBundle<S> {
    pub fn new(
        cfg: SchemeConfig<S>,
        x: GridPath<S>,
        b: GridPath<S>,
        depth: usize,
        coeffs: XiCoefficients<S>,
    ) -> Result<Self> {
        let y = euler_run(&cfg, &x)?;
        let chaos = build_cross(&x.concat(&b)?, &cfg.hurst)?;
        let xi = xi_run(depth, &cfg, &y, &x, &b, &coeffs, 0)?;
        Ok(Self { cfg, x, b, y, chaos, xi, coeffs })
    }

    /// `Ξ^L` for `L ≥ 1`, `y` for `L = 0`.
    pub fn level(&self, l: usize) -> &GridPath<S> {
        if l == 0 {
            &self.y
        } else {
            self.xi.level(l)
        }
    }

    /// `P^L_{t_k}`.
    pub fn p_at(&self, k: usize, l: usize) -> S {
        let norms: Vec<S> = (1..=l).map(|i| max_abs(self.xi.level(i).at(k))).collect();
        p_from_norms(&norms, l)
    }

    pub fn w_path(&self) -> GridPath<S> {
        self.x.concat(&self.b).expect("same grid by construction")
    }
}

/// Samples `x` with `seed`, `b` with the derived seed, with factorial-ratio coefficients.
/// `depth` is raised to 1 when zero so that `R⁰` remains available.
pub fn sample_bundle(cfg: &SchemeConfig<f64>, depth: usize, seed: u64) -> Result<PathBundle<f64>> {
    let depth = depth.max(1);
    let d = cfg.field.d();
    let x = sample_fbm(&cfg.grid, &cfg.hurst, d, seed)?;
    let b = sample_fbm(&cfg.grid, &cfg.hurst, d, derived_seed(seed))?;
    PathBundle::new(cfg.clone(), x, b, depth, XiCoefficients::factorial_ratio(depth)?)
}

/// Operator values at one grid point; matrices over `(i, j)` are laid out as `(i·d + j)·m + k`.
#[derive(Clone, Debug)]
pub struct PointCoefficients<S> {
    /// `ℒ^L V_j`, index `j·m + k`.
    pub lv: Vec<S>,
    /// `ℒ^{L−1}_{c̃} V_j`.
    pub lvb: Vec<S>,
    /// `ℒ̄^L(∂V_i·V_j)`, paired with `x² − q`.
    pub bar: Vec<S>,
    /// `ℒ̃^{L−1}(∂V_i·V_j)`, paired with `b² − q^b`.
    pub tilde_b: Vec<S>,
    /// `ℒ̃^L(∂V_i·V_j)`, paired with `w̃ − q̃`.
    pub tilde_w: Vec<S>,
    /// `ℒ̄^{L−1}(∂V_i·V_j)` with outer `c̃`, paired with `ŵ − q̂`.
    pub bar_mirror: Vec<S>,
}

fn point_coefficients<S: Scalar>(
    field: &VectorField<S>,
    l: usize,
    y: &[S],
    stack: &DerivativeStack<S>,
    coeffs: &XiCoefficients<S>,
) -> PointCoefficients<S> {
    let (m, d) = (field.m(), field.d());
    let li = l as isize;
    let (c, ct) = (&coeffs.c, &coeffs.c_tilde);
    let mut out = PointCoefficients {
        lv: Vec::with_capacity(m * d),
        lvb: Vec::with_capacity(m * d),
        bar: vec![S::zero(); m * d * d],
        tilde_b: vec![S::zero(); m * d * d],
        tilde_w: vec![S::zero(); m * d * d],
        bar_mirror: vec![S::zero(); m * d * d],
    };
    let mut inner = Vec::with_capacity(d);
    let mut inner_t = Vec::with_capacity(d);
    let mut values = Vec::with_capacity(d);
    for j in 0..d {
        let col = field.column(j);
        let tab = inner_table(li, col, y, stack, c);
        out.lv.extend_from_slice(&tab[l]);
        out.lvb.extend(op_l_vec_unchecked(li - 1, col, y, stack, ct));
        values.push(tab[0].clone());
        inner.push(tab);
        inner_t.push(inner_table(li - 1, col, y, stack, ct));
    }
    for i in 0..d {
        for j in 0..d {
            for (k, f) in field.column(i).iter().enumerate() {
                let f = f.as_ref();
                let e = (i * d + j) * m + k;
                out.bar[e] = lbar_with(li, f, y, &values[j], stack, c, &inner[j]);
                out.tilde_b[e] = ltilde_with(li - 1, f, y, stack, c, &inner_t[j]);
                out.tilde_w[e] = ltilde_with(li, f, y, stack, c, &inner_t[j]);
                out.bar_mirror[e] = lbar_with(li - 1, f, y, &values[j], stack, ct, &inner[j]);
            }
        }
    }
    out
}

/// The remainder `R^L` of one path bundle with its per-point operator values.
#[derive(Clone, Debug)]
pub struct Remainder<'a, S> {
    bundle: &'a PathBundle<S>,
    l: usize,
    points: Vec<PointCoefficients<S>>,
}

/// Precomputes the operator values needed for `R^L` at every grid point.
pub fn remainder_r<S: Scalar>(bundle: &PathBundle<S>, l: usize) -> Result<Remainder<'_, S>> {
    if l > bundle.xi.depth() {
        return Err(domain(format!("R^{l} needs Ξ up to level {l}, bundle has {}", bundle.xi.depth())));
    }
    if bundle.coeffs.c.depth() < l || bundle.coeffs.c_tilde.depth() + 1 < l {
        return Err(domain("coefficient families too shallow"));
    }
    let field = &bundle.cfg.field;
    let points = (0..bundle.cfg.grid.points())
        .map(|k| point_coefficients(field, l, bundle.y.at(k), &bundle.xi.stack_at(k), &bundle.coeffs))
        .collect();
    Ok(Remainder { bundle, l, points })
}

fn contract_pair<S: Scalar>(coef: &[S], mat: &[S], d: usize, m: usize, out: &mut [S], sign: S) {
    for i in 0..d {
        for j in 0..d {
            let v = mat[j * d + i] * sign;
            if v == S::zero() {
                continue;
            }
            let base = (i * d + j) * m;
            for k in 0..m {
                out[k] += coef[base + k] * v;
            }
        }
    }
}

fn minus<S: Scalar>(a: Vec<S>, b: Vec<S>) -> Vec<S> {
    a.into_iter().zip(b).map(|(x, y)| x - y).collect()
}

impl<'a, S: Scalar> Remainder<'a, S> {
    pub fn level(&self) -> usize {
        self.l
    }

    pub fn bundle(&self) -> &'a PathBundle<S> {
        self.bundle
    }

    pub fn point(&self, k: usize) -> &PointCoefficients<S> {
        &self.points[k]
    }

    /// `R^L_{t_s t_t}`.
    pub fn pair(&self, s: usize, t: usize) -> Vec<S> {
        let b = self.bundle;
        let (m, d) = (b.cfg.field.m(), b.cfg.field.d());
        let pc = &self.points[s];
        let one = S::one();
        let mut r: Vec<S> = b.level(self.l).increment(s, t).into_iter().map(|v| -v).collect();
        let dx = b.x.increment(s, t);
        let db = b.b.increment(s, t);
        for j in 0..d {
            for k in 0..m {
                r[k] += pc.lv[j * m + k] * dx[j] + pc.lvb[j * m + k] * db[j];
            }
        }
        let ch = &b.chaos;
        contract_pair(&pc.bar, &minus(ch.x2(s, t), ch.q_x().pair(s, t)), d, m, &mut r, one);
        contract_pair(&pc.tilde_b, &minus(ch.b2(s, t), ch.q_b().pair(s, t)), d, m, &mut r, one);
        contract_pair(&pc.tilde_w, &minus(ch.tilde_w(s, t), ch.q_tilde().pair(s, t)), d, m, &mut r, one);
        contract_pair(&pc.bar_mirror, &minus(ch.mirror_w(s, t), ch.q_mirror().pair(s, t)), d, m, &mut r, one);
        r
    }

    /// `δR^L_{sut}` assembled from the five terms `E¹..E⁵`, independently of [`Self::pair`].
    pub fn delta_via_e_terms(&self, s: usize, u: usize, t: usize) -> Vec<S> {
        let b = self.bundle;
        let (m, d) = (b.cfg.field.m(), b.cfg.field.d());
        let (ps, pu) = (&self.points[s], &self.points[u]);
        let (dx_su, dx_ut) = (b.x.increment(s, u), b.x.increment(u, t));
        let (db_su, db_ut) = (b.b.increment(s, u), b.b.increment(u, t));
        let mut out = vec![S::zero(); m];
        // E1, E2
        for j in 0..d {
            for k in 0..m {
                let e = j * m + k;
                out[k] -= (pu.lv[e] - ps.lv[e]) * dx_ut[j] + (pu.lvb[e] - ps.lvb[e]) * db_ut[j];
            }
        }
        // E3, E4: inner increment on [s,u] (index j), outer on [u,t] (index i)
        let outer_inner = |inner: &[S], outer: &[S]| -> Vec<S> {
            let mut mat = vec![S::zero(); d * d];
            for j in 0..d {
                for i in 0..d {
                    mat[j * d + i] = inner[j] * outer[i];
                }
            }
            mat
        };
        let one = S::one();
        contract_pair(&ps.bar, &outer_inner(&dx_su, &dx_ut), d, m, &mut out, one);
        contract_pair(&ps.tilde_w, &outer_inner(&db_su, &dx_ut), d, m, &mut out, one);
        contract_pair(&ps.tilde_b, &outer_inner(&db_su, &db_ut), d, m, &mut out, one);
        contract_pair(&ps.bar_mirror, &outer_inner(&dx_su, &db_ut), d, m, &mut out, one);
        // E5
        let ch = &b.chaos;
        let diff = |a: &[S], c: &[S]| -> Vec<S> { a.iter().zip(c).map(|(&x, &y)| x - y).collect() };
        let neg = -one;
        contract_pair(&diff(&pu.bar, &ps.bar), &minus(ch.x2(u, t), ch.q_x().pair(u, t)), d, m, &mut out, neg);
        contract_pair(&diff(&pu.tilde_b, &ps.tilde_b), &minus(ch.b2(u, t), ch.q_b().pair(u, t)), d, m, &mut out, neg);
        contract_pair(
            &diff(&pu.tilde_w, &ps.tilde_w),
            &minus(ch.tilde_w(u, t), ch.q_tilde().pair(u, t)),
            d,
            m,
            &mut out,
            neg,
        );
        contract_pair(
            &diff(&pu.bar_mirror, &ps.bar_mirror),
            &minus(ch.mirror_w(u, t), ch.q_mirror().pair(u, t)),
            d,
            m,
            &mut out,
            neg,
        );
        out
    }

    /// `R^L` on every pair of grid points.
    pub fn table(&self) -> PairTable<S> {
        let n = self.bundle.cfg.grid.steps();
        PairTable::from_fn(n, self.bundle.cfg.field.m(), |s, t| self.pair(s, t))
    }

    /// `max_k |R^L_{t_k t_{k+1}}|`.
    pub fn one_step_max(&self) -> f64 {
        let n = self.bundle.cfg.grid.steps();
        (0..n).map(|k| max_abs(&self.pair(k, k + 1)).as_f64()).fold(0.0, f64::max)
    }
}

/// Vector values on all pairs `s < t` of `0..=n`.
#[derive(Clone, Debug)]
pub struct PairTable<S> {
    n: usize,
    dims: usize,
    values: Vec<S>,
}

impl<S: Scalar> PairTable<S> {
    pub fn from_fn(n: usize, dims: usize, mut f: impl FnMut(usize, usize) -> Vec<S>) -> Self {
        let mut values = vec![S::zero(); (n + 1) * (n + 1) * dims];
        for s in 0..n {
            for t in s + 1..=n {
                let v = f(s, t);
                let at = (s * (n + 1) + t) * dims;
                values[at..at + dims].copy_from_slice(&v[..dims]);
            }
        }
        Self { n, dims, values }
    }

    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn get(&self, s: usize, t: usize) -> &[S] {
        let at = (s * (self.n + 1) + t) * self.dims;
        &self.values[at..at + self.dims]
    }

    pub fn norm(&self, s: usize, t: usize) -> f64 {
        max_abs(self.get(s, t)).as_f64()
    }
}

/// Outcome of the discrete sewing check.
#[derive(Clone, Debug, Serialize)]
pub struct SewingReport {
    pub mu: f64,
    pub kmu: f64,
    /// `max_k |R_{t_k t_{k+1}}| / ω^μ`.
    pub one_step_scale: f64,
    /// `max |δR_{sut}| / ω(s,t)^μ`.
    pub delta_scale: f64,
    /// Smallest constant making both hypotheses hold.
    pub scale: f64,
    /// `max |R_{st}| / ω(s,t)^μ`.
    pub ratio: f64,
    pub violations: usize,
    pub pairs: usize,
}

impl SewingReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn scaled(value: f64, denom: f64) -> f64 {
    if value <= 0.0 {
        0.0
    } else if denom <= 0.0 {
        f64::INFINITY
    } else {
        value / denom
    }
}

/// Verifies `|R_{st}| ≤ K_μ · c · ω(s,t)^μ` where `c` rescales the hypotheses to hold with constant one.
pub fn sewing_verify<S: Scalar>(r: &PairTable<S>, control: &impl Control<S>, mu: f64) -> Result<SewingReport> {
    if !(mu > 1.0) {
        return Err(domain(format!("sewing exponent {mu} must exceed 1")));
    }
    let n = r.steps();
    if control.steps() != n {
        return Err(domain("remainder and control live on different grids"));
    }
    let k = kmu(mu)?;
    let rows: Vec<Vec<f64>> =
        (0..n).map(|s| control.row(s, n, None).into_iter().map(|v| v.as_f64().powf(mu)).collect()).collect();
    let om = |s: usize, t: usize| rows[s][t - s];
    let mut one_step = 0.0f64;
    for s in 0..n {
        one_step = one_step.max(scaled(r.norm(s, s + 1), om(s, s + 1)));
    }
    let mut delta = 0.0f64;
    let dims = r.dims();
    for s in 0..n {
        for t in s + 2..=n {
            let rst = r.get(s, t);
            let wst = om(s, t);
            for u in s + 1..t {
                let (a, b) = (r.get(s, u), r.get(u, t));
                let mut worst = 0.0f64;
                for e in 0..dims {
                    worst = worst.max((rst[e] - a[e] - b[e]).as_f64().abs());
                }
                delta = delta.max(scaled(worst, wst));
            }
        }
    }
    let scale = one_step.max(delta);
    let mut ratio = 0.0f64;
    let mut violations = 0usize;
    let mut pairs = 0usize;
    for s in 0..n {
        for t in s + 1..=n {
            let v = r.norm(s, t);
            let w = om(s, t);
            ratio = ratio.max(scaled(v, w));
            pairs += 1;
            if v > k * scale * w * (1.0 + 1e-9) + 1e-300 {
                violations += 1;
            }
        }
    }
    Ok(SewingReport { mu, kmu: k, one_step_scale: one_step, delta_scale: delta, scale, ratio, violations, pairs })
}

/// Per-run bound diagnostics; the first fields form the JSON line contract.
#[derive(Clone, Debug, Serialize)]
pub struct BoundDiagnostics {
    pub n: usize,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub alpha: f64,
    #[serde(rename = "|S0|")]
    pub s0: usize,
    #[serde(rename = "|S1|")]
    pub s1: usize,
    #[serde(rename = "|S2|")]
    pub s2: usize,
    #[serde(rename = "logM0")]
    pub log_m0: f64,
    #[serde(rename = "logM1")]
    pub log_m1: f64,
    #[serde(rename = "logM2")]
    pub log_m2: f64,
    pub lhs: f64,
    pub rhs_over_k: f64,
    pub rho: f64,
    pub defect_max: f64,
    pub k_config: f64,
    pub log_rhs_over_k: f64,
    /// Pairs inside S0 ∪ S1 intervals where the defect was evaluated.
    pub defect_pairs: usize,
    /// `max |δΞ^L| / (P^L ω^{1/p})` over the same pairs, to compare with `K₁^L`.
    pub increment_ratio_max: f64,
    /// `max |R^L| / (P^L ω^{3/p})`, to compare with `K₃^L`.
    pub remainder_ratio_max: f64,
    /// Whether `|δw| + Δ^{2H} ≤ ω^{1/p}` on every S2 step.
    pub delta_small: bool,
}

/// Bound diagnostics for level `l` on one bundle.
pub fn bound_check<S: Scalar>(
    l: usize,
    bundle: &PathBundle<S>,
    part: &GreedyPartition,
    control: &impl Control<S>,
    k_config: f64,
) -> Result<BoundDiagnostics> {
    let grid = bundle.cfg.grid;
    let n = grid.steps();
    if control.steps() != n || part.anchors.last() != Some(&n) {
        return Err(domain("partition, control and bundle disagree on the grid"));
    }
    let p = bundle.cfg.hurst.p();
    let xi = bundle.level(l);
    let pv = crate::rough_lift::p_variation(0, n, p, |a, b| xi.increment_norm(a, b).as_f64());
    let lhs = pv.powf(1.0 / p);
    let w = bundle.w_path();
    let d2h = bundle.cfg.hurst.delta_2h(&grid);
    let mp = m_products(part, &w, d2h, p, k_config);
    let omega_total = control.omega(0, n).as_f64();
    let log_rhs = omega_total.ln() / p + (mp.intervals as f64).ln() + l as f64 * (mp.log_m0 + mp.log_m1 + mp.log_m2);
    let rho = (lhs.ln() - log_rhs).exp();

    let rem = remainder_r(bundle, l)?;
    let mut defect_max = 0.0f64;
    let mut inc_max = 0.0f64;
    let mut rem_max = 0.0f64;
    let mut pairs = 0usize;
    let mut delta_small = true;
    let (m, d) = (bundle.cfg.field.m(), bundle.cfg.field.d());
    for (a, b, class) in part.intervals() {
        if class == IntervalClass::S2 {
            let bound = w.increment_norm(a, b).as_f64() + d2h;
            if bound > control.omega(a, b).as_f64().powf(1.0 / p) {
                delta_small = false;
            }
            continue;
        }
        for s in a..b {
            let row = control.row(s, b, None);
            let pl = bundle.p_at(s, l).as_f64();
            let pc = rem.point(s);
            for t in s + 1..=b {
                let om = row[t - s].as_f64();
                let inc = xi.increment(s, t);
                let dx = bundle.x.increment(s, t);
                let db = bundle.b.increment(s, t);
                let mut defect = 0.0f64;
                for k in 0..m {
                    let mut v = inc[k];
                    for j in 0..d {
                        v -= pc.lv[j * m + k] * dx[j] + pc.lvb[j * m + k] * db[j];
                    }
                    defect = defect.max(v.as_f64().abs());
                }
                defect_max = defect_max.max(scaled(defect, om.powf(2.0 / p) * pl));
                inc_max = inc_max.max(scaled(max_abs(&inc).as_f64(), om.powf(1.0 / p) * pl));
                rem_max = rem_max.max(scaled(max_abs(&rem.pair(s, t)).as_f64(), om.powf(3.0 / p) * pl));
                pairs += 1;
            }
        }
    }
    Ok(BoundDiagnostics {
        n,
        h: bundle.cfg.hurst.h(),
        l,
        alpha: part.alpha,
        s0: part.count(IntervalClass::S0),
        s1: part.count(IntervalClass::S1),
        s2: part.count(IntervalClass::S2),
        log_m0: mp.log_m0,
        log_m1: mp.log_m1,
        log_m2: mp.log_m2,
        lhs,
        rhs_over_k: log_rhs.exp(),
        rho,
        defect_max,
        k_config,
        log_rhs_over_k: log_rhs,
        defect_pairs: pairs,
        increment_ratio_max: inc_max,
        remainder_ratio_max: rem_max,
        delta_small,
    })
}

/// Empirical ratios for the increment bounds on `ℒ^L V`, `ℒ̄^L(∂VV)`, `ℒ̃^L(∂VV)`
/// inside S0 ∪ S1 intervals, each divided by `P^L_s ω^{1/p}` and by its ledger constant.
#[derive(Clone, Debug, Serialize)]
pub struct OperatorIncrementAudit {
    pub l: usize,
    pub c5_ratio: f64,
    pub c6_ratio: f64,
    pub c7_ratio: f64,
    pub pairs: usize,
}

impl OperatorIncrementAudit {
    pub fn passed(&self) -> bool {
        self.c5_ratio <= 1.0 && self.c6_ratio <= 1.0 && self.c7_ratio <= 1.0
    }
}

pub fn operator_increment_audit<S: Scalar>(
    l: usize,
    bundle: &PathBundle<S>,
    part: &GreedyPartition,
    control: &impl Control<S>,
    ledger: &ConstantLedger,
) -> Result<OperatorIncrementAudit> {
    if l > ledger.depth {
        return Err(domain(format!("ledger has no level {l}")));
    }
    let rem = remainder_r(bundle, l)?;
    let p = bundle.cfg.hurst.p();
    let diff = |a: &[S], b: &[S]| -> f64 { a.iter().zip(b).fold(0.0f64, |m, (&x, &y)| m.max((x - y).as_f64().abs())) };
    let (mut r5, mut r6, mut r7) = (0.0f64, 0.0f64, 0.0f64);
    let mut pairs = 0usize;
    for (a, b, class) in part.intervals() {
        if class == IntervalClass::S2 {
            continue;
        }
        for s in a..b {
            let row = control.row(s, b, None);
            let pl = bundle.p_at(s, l).as_f64();
            let ps = rem.point(s);
            for u in s + 1..=b {
                let denom = pl * row[u - s].as_f64().powf(1.0 / p);
                let pu = rem.point(u);
                r5 = r5.max(scaled(diff(&pu.lv, &ps.lv), denom * ledger.c5[l]));
                r6 = r6.max(scaled(diff(&pu.bar, &ps.bar), denom * ledger.c6[l]));
                r7 = r7.max(scaled(diff(&pu.tilde_w, &ps.tilde_w), denom * ledger.c7[l]));
                pairs += 1;
            }
        }
    }
    Ok(OperatorIncrementAudit { l, c5_ratio: r5, c6_ratio: r6, c7_ratio: r7, pairs })
}
