//! Piecewise-linear second-order lifts, discrete p-variation, the control ω
//! and the one-step second-chaos processes.
//!
//! Level-2 matrices are stored row-major with entry `[a][b] = ∫∫ dx^a dx^b`,
//! `a` being the inner (earlier) integration variable, so that Chen's
//! relation reads `x²_{st} = x²_{su} + x²_{ut} + x¹_{su} ⊗ x¹_{ut}`.

use crate::error::{domain, Result};
use crate::grid_gaussian::{Grid, GridPath, HurstParams};
use crate::scalar::{max_abs, Scalar};

/// Largest step count for which all level-2 pairs are stored densely.
pub const DENSE_LIMIT: usize = 1024;

fn pair_index(n: usize, j: usize, k: usize) -> usize {
    debug_assert!(j < k && k <= n);
    j * n - j * (j.saturating_sub(1)) / 2 + (k - j - 1)
}

fn pair_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Grid path together with its level-2 iterated integrals over grid pairs.
#[derive(Clone, Debug)]
pub struct RoughLift<S> {
    base: GridPath<S>,
    one_step: Vec<S>,
    dense: Option<Vec<S>>,
}

impl<S: Scalar> RoughLift<S> {
    /// Builds the lift from its one-step level-2 matrices via Chen's relation.
    pub fn from_one_step(base: GridPath<S>, one_step: Vec<S>) -> Result<Self> {
        let n = base.grid().steps();
        Self::with_storage(base, one_step, n <= DENSE_LIMIT)
    }

    /// As [`RoughLift::from_one_step`] with explicit choice of dense pair storage.
    pub fn with_storage(base: GridPath<S>, one_step: Vec<S>, dense: bool) -> Result<Self> {
        let d = base.dims();
        let n = base.grid().steps();
        if one_step.len() != n * d * d {
            return Err(domain(format!("expected {} one-step entries, got {}", n * d * d, one_step.len())));
        }
        let mut lift = Self { base, one_step, dense: None };
        if dense {
            let dd = d * d;
            let mut table = vec![S::zero(); pair_count(n) * dd];
            for j in 0..n {
                lift.for_each_level2_from(j, |k, m| {
                    let o = pair_index(n, j, k) * dd;
                    table[o..o + dd].copy_from_slice(m);
                });
            }
            lift.dense = Some(table);
        }
        Ok(lift)
    }

    pub fn base(&self) -> &GridPath<S> {
        &self.base
    }

    pub fn dims(&self) -> usize {
        self.base.dims()
    }

    pub fn steps(&self) -> usize {
        self.base.grid().steps()
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    pub fn one_step(&self, k: usize) -> &[S] {
        let dd = self.dims() * self.dims();
        &self.one_step[k * dd..(k + 1) * dd]
    }

    /// Calls `f(k, x²_{t_j t_k})` for `k = j+1, …, n`, accumulating by Chen's relation.
    pub fn for_each_level2_from(&self, j: usize, mut f: impl FnMut(usize, &[S])) {
        let d = self.dims();
        let n = self.steps();
        let mut m = vec![S::zero(); d * d];
        let xj = self.base.at(j).to_vec();
        for k in j..n {
            let (xk, xk1) = (self.base.at(k), self.base.at(k + 1));
            let o = self.one_step(k);
            for a in 0..d {
                let da = xk[a] - xj[a];
                for b in 0..d {
                    m[a * d + b] += o[a * d + b] + da * (xk1[b] - xk[b]);
                }
            }
            f(k + 1, &m);
        }
    }

    /// `x²_{t_j t_k}` for `j ≤ k`.
    pub fn level2(&self, j: usize, k: usize) -> Vec<S> {
        assert!(j <= k && k <= self.steps(), "pair ({j}, {k}) out of order or range");
        let dd = self.dims() * self.dims();
        if j == k {
            return vec![S::zero(); dd];
        }
        if let Some(table) = &self.dense {
            let o = pair_index(self.steps(), j, k) * dd;
            return table[o..o + dd].to_vec();
        }
        let mut out = vec![S::zero(); dd];
        let mut done = false;
        self.for_each_level2_from(j, |kk, m| {
            if !done && kk == k {
                out.copy_from_slice(m);
                done = true;
            }
        });
        out
    }

    /// Overwrites a stored pair; only available with dense storage.
    pub fn set_level2(&mut self, j: usize, k: usize, value: &[S]) -> Result<()> {
        let n = self.steps();
        let dd = self.dims() * self.dims();
        if !(j < k && k <= n) || value.len() != dd {
            return Err(domain(format!("cannot set pair ({j}, {k})")));
        }
        match &mut self.dense {
            Some(table) => {
                let o = pair_index(n, j, k) * dd;
                table[o..o + dd].copy_from_slice(value);
                Ok(())
            }
            None => Err(domain("level-2 overrides need dense storage")),
        }
    }

    /// Restriction of the lift to the coordinate block `rows × cols`.
    pub fn block(&self, s: usize, t: usize, rows: usize, cols: usize, size: usize) -> Vec<S> {
        let d = self.dims();
        let m = self.level2(s, t);
        let mut out = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                out.push(m[(rows + i) * d + cols + j]);
            }
        }
        out
    }
}

/// Lift of the piecewise-linear interpolation of a path given on a `ρ`-times finer grid.
///
/// `fine` lives on a grid with `n ρ` steps; the returned lift is indexed by every
/// `ρ`-th point and its level-2 values integrate all fine segments exactly.
pub fn lift_piecewise_linear<S: Scalar>(fine: &GridPath<S>, refine: usize) -> Result<RoughLift<S>> {
    if refine == 0 {
        return Err(domain("refinement factor must be at least 1"));
    }
    let base = fine.restrict(refine)?;
    let d = fine.dims();
    let n = base.grid().steps();
    let half = S::of(0.5);
    let mut one_step = vec![S::zero(); n * d * d];
    let mut delta = vec![S::zero(); d];
    for k in 0..n {
        let m = &mut one_step[k * d * d..(k + 1) * d * d];
        let x0 = fine.at(k * refine);
        for f in 0..refine {
            let (a, b) = (fine.at(k * refine + f), fine.at(k * refine + f + 1));
            for i in 0..d {
                delta[i] = b[i] - a[i];
            }
            for i in 0..d {
                let di = a[i] - x0[i];
                for j in 0..d {
                    m[i * d + j] += half * delta[i] * delta[j] + di * delta[j];
                }
            }
        }
    }
    RoughLift::from_one_step(base, one_step)
}

fn chen_residual<S: Scalar>(lift: &RoughLift<S>, s: usize, u: usize, t: usize) -> S {
    let d = lift.dims();
    let (st, su, ut) = (lift.level2(s, t), lift.level2(s, u), lift.level2(u, t));
    let (a, b) = (lift.base.increment(s, u), lift.base.increment(u, t));
    let mut r = S::zero();
    for i in 0..d {
        for j in 0..d {
            let e = st[i * d + j] - su[i * d + j] - ut[i * d + j] - a[i] * b[j];
            r = r.max(e.abs());
        }
    }
    r
}

/// Maximum Chen residual over all grid triples `s < u < t`.
pub fn check_chen<S: Scalar>(lift: &RoughLift<S>) -> S {
    let n = lift.steps();
    let mut worst = S::zero();
    for s in 0..n {
        for u in s + 1..n {
            for t in u + 1..=n {
                worst = worst.max(chen_residual(lift, s, u, t));
            }
        }
    }
    worst
}

/// Maximum Chen residual over the given triples.
pub fn check_chen_triples<S: Scalar>(lift: &RoughLift<S>, triples: &[(usize, usize, usize)]) -> Result<S> {
    let n = lift.steps();
    let mut worst = S::zero();
    for &(s, u, t) in triples {
        if !(s <= u && u <= t && t <= n) {
            return Err(domain(format!("triple ({s}, {u}, {t}) not ordered in 0..={n}")));
        }
        worst = worst.max(chen_residual(lift, s, u, t));
    }
    Ok(worst)
}

/// Discrete p-variation over grid points `s..=t` without the final `1/p` power:
/// the maximum over partitions of `Σ norm(v, u)^p_exp`.
pub fn p_variation<S: Scalar>(s: usize, t: usize, p_exp: S, norm: impl Fn(usize, usize) -> S) -> S {
    p_variation_row(s, t, p_exp, norm).last().copied().unwrap_or_else(S::zero)
}

/// Values of [`p_variation`] on `[s, u]` for every `u = s..=t`.
pub fn p_variation_row<S: Scalar>(s: usize, t: usize, p_exp: S, norm: impl Fn(usize, usize) -> S) -> Vec<S> {
    let mut best = Vec::with_capacity(t + 1 - s);
    best.push(S::zero());
    for u in s + 1..=t {
        let mut m = S::zero();
        for v in s..u {
            let cand = best[v - s] + norm(v, u).powf(p_exp);
            if cand > m {
                m = cand;
            }
        }
        best.push(m);
    }
    best
}

/// Additive two-parameter process built from one-step matrices: `q_{st} = Σ_{s≤k<t} term_k`.
#[derive(Clone, Debug)]
pub struct QProcess<S> {
    grid: Grid,
    rows: usize,
    cols: usize,
    terms: Vec<S>,
    cumulative: Vec<S>,
}

impl<S: Scalar> QProcess<S> {
    pub fn from_one_step(grid: Grid, rows: usize, cols: usize, terms: Vec<S>) -> Result<Self> {
        let size = rows * cols;
        if terms.len() != grid.steps() * size {
            return Err(domain("one-step terms do not match the grid"));
        }
        let mut cumulative = vec![S::zero(); grid.points() * size];
        for k in 0..grid.steps() {
            for e in 0..size {
                cumulative[(k + 1) * size + e] = cumulative[k * size + e] + terms[k * size + e];
            }
        }
        Ok(Self { grid, rows, cols, terms, cumulative })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn one_step(&self, k: usize) -> &[S] {
        let size = self.rows * self.cols;
        &self.terms[k * size..(k + 1) * size]
    }

    /// `q_{t_s t_t}` from the running sums.
    pub fn pair(&self, s: usize, t: usize) -> Vec<S> {
        let size = self.rows * self.cols;
        (0..size).map(|e| self.cumulative[t * size + e] - self.cumulative[s * size + e]).collect()
    }

    /// `q_{t_s t_t}` by summing the one-step terms directly.
    pub fn pair_direct(&self, s: usize, t: usize) -> Vec<S> {
        let size = self.rows * self.cols;
        let mut out = vec![S::zero(); size];
        for k in s..t {
            for (o, v) in out.iter_mut().zip(self.one_step(k)) {
                *o += *v;
            }
        }
        out
    }

    pub fn pair_norm(&self, s: usize, t: usize) -> S {
        let size = self.rows * self.cols;
        (0..size).fold(S::zero(), |m, e| {
            m.max((self.cumulative[t * size + e] - self.cumulative[s * size + e]).abs())
        })
    }
}

fn check_one_step_lift<S: Scalar>(lift: &RoughLift<S>) -> Result<()> {
    let n = lift.steps();
    let d = lift.dims();
    for k in 0..n {
        let dx = lift.base.increment(k, k + 1);
        let o = lift.one_step(k);
        for i in 0..d {
            for j in 0..d {
                let sym = S::of(0.5) * (o[i * d + j] + o[j * d + i]);
                let want = S::of(0.5) * dx[i] * dx[j];
                let scale = S::one() + want.abs();
                if (sym - want).abs() > S::of(1e-9) * scale {
                    return Err(domain(format!("lift is not geometric on step {k}")));
                }
            }
        }
    }
    Ok(())
}

fn block_q<S: Scalar>(lift: &RoughLift<S>, rows: usize, cols: usize, size: usize, shift: S) -> Result<QProcess<S>> {
    let d = lift.dims();
    let n = lift.steps();
    let mut terms = Vec::with_capacity(n * size * size);
    for k in 0..n {
        let o = lift.one_step(k);
        for i in 0..size {
            for j in 0..size {
                let diag = if i == j { shift } else { S::zero() };
                terms.push(o[(rows + i) * d + cols + j] - diag);
            }
        }
    }
    QProcess::from_one_step(*lift.base.grid(), size, size, terms)
}

/// `q_{st} = Σ (x²_{t_k t_{k+1}} − ½Δ^{2H} I)` over the steps of `[s, t)`.
pub fn build_q<S: Scalar>(lift: &RoughLift<S>, hurst: &HurstParams) -> Result<QProcess<S>> {
    check_one_step_lift(lift)?;
    let shift = S::of(0.5 * hurst.delta_2h(lift.base.grid()));
    block_q(lift, 0, 0, lift.dims(), shift)
}

/// Second-chaos objects of the joint path `w = (x, b)` with `d + d` coordinates.
///
/// Blocks of `w²` are addressed as `(inner coordinates, outer coordinates)`:
/// `x²` is `(x, x)`, `b²` is `(b, b)`, the cross block `w̃` is `(b, x)` and its
/// mirror `ŵ` is `(x, b)`. Each has a one-step partial-sum companion.
#[derive(Clone, Debug)]
pub struct SecondChaos<S> {
    d: usize,
    lift_w: RoughLift<S>,
    q_x: QProcess<S>,
    q_b: QProcess<S>,
    q_tilde: QProcess<S>,
    q_mirror: QProcess<S>,
}

impl<S: Scalar> SecondChaos<S> {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lift_w(&self) -> &RoughLift<S> {
        &self.lift_w
    }

    pub fn q_x(&self) -> &QProcess<S> {
        &self.q_x
    }

    pub fn q_b(&self) -> &QProcess<S> {
        &self.q_b
    }

    pub fn q_tilde(&self) -> &QProcess<S> {
        &self.q_tilde
    }

    pub fn q_mirror(&self) -> &QProcess<S> {
        &self.q_mirror
    }

    pub fn x2(&self, s: usize, t: usize) -> Vec<S> {
        self.lift_w.block(s, t, 0, 0, self.d)
    }

    pub fn b2(&self, s: usize, t: usize) -> Vec<S> {
        self.lift_w.block(s, t, self.d, self.d, self.d)
    }

    /// `w̃_{st}`: entry `[i][j] = ∫∫ db^i dx^j`.
    pub fn tilde_w(&self, s: usize, t: usize) -> Vec<S> {
        self.lift_w.block(s, t, self.d, 0, self.d)
    }

    /// `ŵ_{st}`: entry `[i][j] = ∫∫ dx^i db^j`.
    pub fn mirror_w(&self, s: usize, t: usize) -> Vec<S> {
        self.lift_w.block(s, t, 0, self.d, self.d)
    }

    /// The control ω of the joint path.
    pub fn control(&self, hurst: &HurstParams) -> Result<ControlTable<S>> {
        ControlTable::build(&self.lift_w, &self.q_x, &self.q_b, hurst)
    }
}

/// Builds the one-step lift of `w = (x, b)` and all its second-chaos processes.
pub fn build_cross<S: Scalar>(w_path: &GridPath<S>, hurst: &HurstParams) -> Result<SecondChaos<S>> {
    if !w_path.dims().is_multiple_of(2) {
        return Err(domain("joint path must have an even number of coordinates"));
    }
    let d = w_path.dims() / 2;
    let lift_w = lift_piecewise_linear(w_path, 1)?;
    let shift = S::of(0.5 * hurst.delta_2h(w_path.grid()));
    Ok(SecondChaos {
        d,
        q_x: block_q(&lift_w, 0, 0, d, shift)?,
        q_b: block_q(&lift_w, d, d, d, shift)?,
        q_tilde: block_q(&lift_w, d, 0, d, S::zero())?,
        q_mirror: block_q(&lift_w, 0, d, d, S::zero())?,
        lift_w,
    })
}

/// A superadditive two-parameter function on grid indices.
pub trait Control<S: Scalar> {
    fn steps(&self) -> usize;

    /// `ω(s, u)` for `u = s..=end`, stopping right after the first value above `limit`.
    fn row(&self, s: usize, end: usize, limit: Option<S>) -> Vec<S>;

    fn omega(&self, s: usize, t: usize) -> S {
        if s == t {
            return S::zero();
        }
        self.row(s, t, None)[t - s]
    }
}

/// ω of a joint path: `‖w¹‖^p_{p-var} + ‖w²‖^{p/2}_{p/2-var} + ‖q‖^{p/2}_{p/2-var} + ‖q^b‖^{p/2}_{p/2-var}`.
///
/// Holds every pairwise powered norm; each ω row is one dynamic program per level.
#[derive(Clone, Debug)]
pub struct ControlTable<S> {
    n: usize,
    p: S,
    tables: [Vec<S>; 4],
}

impl<S: Scalar> ControlTable<S> {
    pub fn build(lift_w: &RoughLift<S>, q: &QProcess<S>, q_b: &QProcess<S>, hurst: &HurstParams) -> Result<Self> {
        let n = lift_w.steps();
        if q.grid().steps() != n || q_b.grid().steps() != n {
            return Err(domain("control inputs live on different grids"));
        }
        let p = S::of(hurst.p());
        let half = p * S::of(0.5);
        let count = pair_count(n);
        let mut t1 = vec![S::zero(); count];
        let mut t2 = vec![S::zero(); count];
        let mut t3 = vec![S::zero(); count];
        let mut t4 = vec![S::zero(); count];
        let base = lift_w.base();
        for j in 0..n {
            lift_w.for_each_level2_from(j, |k, m| {
                let i = pair_index(n, j, k);
                t1[i] = base.increment_norm(j, k).powf(p);
                t2[i] = max_abs(m).powf(half);
                t3[i] = q.pair_norm(j, k).powf(half);
                t4[i] = q_b.pair_norm(j, k).powf(half);
            });
        }
        Ok(Self { n, p, tables: [t1, t2, t3, t4] })
    }

    pub fn p(&self) -> S {
        self.p
    }

    /// Dense table of every `ω(s, t)`.
    pub fn full(&self) -> DenseControl<S> {
        DenseControl::from_control(self)
    }
}

impl<S: Scalar> Control<S> for ControlTable<S> {
    fn steps(&self) -> usize {
        self.n
    }

    fn row(&self, s: usize, end: usize, limit: Option<S>) -> Vec<S> {
        let n = self.n;
        let len = end + 1 - s;
        let mut best: [Vec<S>; 4] = std::array::from_fn(|_| {
            let mut v = Vec::with_capacity(len);
            v.push(S::zero());
            v
        });
        let mut out = Vec::with_capacity(len);
        out.push(S::zero());
        for u in s + 1..=end {
            let mut total = S::zero();
            for (lvl, table) in self.tables.iter().enumerate() {
                let b = &mut best[lvl];
                let mut m = S::zero();
                for v in s..u {
                    let cand = b[v - s] + table[pair_index(n, v, u)];
                    if cand > m {
                        m = cand;
                    }
                }
                b.push(m);
                total += m;
            }
            out.push(total);
            if matches!(limit, Some(l) if total > l) {
                break;
            }
        }
        out
    }
}

/// Every `ω(s, t)` stored in an `(n+1) × (n+1)` table.
#[derive(Clone, Debug)]
pub struct DenseControl<S> {
    n: usize,
    values: Vec<S>,
}

impl<S: Scalar> DenseControl<S> {
    pub fn from_control(c: &impl Control<S>) -> Self {
        let n = c.steps();
        let mut values = vec![S::zero(); (n + 1) * (n + 1)];
        for s in 0..n {
            let row = c.row(s, n, None);
            values[s * (n + 1) + s..s * (n + 1) + n + 1].copy_from_slice(&row);
        }
        Self { n, values }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> S) -> Self {
        let mut values = vec![S::zero(); (n + 1) * (n + 1)];
        for s in 0..=n {
            for t in s + 1..=n {
                values[s * (n + 1) + t] = f(s, t);
            }
        }
        Self { n, values }
    }

    pub fn get(&self, s: usize, t: usize) -> S {
        self.values[s * (self.n + 1) + t]
    }
}

impl<S: Scalar> Control<S> for DenseControl<S> {
    fn steps(&self) -> usize {
        self.n
    }

    fn row(&self, s: usize, end: usize, limit: Option<S>) -> Vec<S> {
        let mut out = Vec::with_capacity(end + 1 - s);
        for u in s..=end {
            let v = self.get(s, u);
            out.push(v);
            if matches!(limit, Some(l) if v > l) {
                break;
            }
        }
        out
    }

    fn omega(&self, s: usize, t: usize) -> S {
        self.get(s, t)
    }
}

/// ω(s, t) of the joint path for a single pair.
pub fn control_omega<S: Scalar>(
    lift_w: &RoughLift<S>,
    q: &QProcess<S>,
    q_b: &QProcess<S>,
    hurst: &HurstParams,
    s: usize,
    t: usize,
) -> Result<S> {
    if !(s <= t && t <= lift_w.steps()) {
        return Err(domain(format!("pair ({s}, {t}) out of order")));
    }
    Ok(ControlTable::build(lift_w, q, q_b, hurst)?.omega(s, t))
}
