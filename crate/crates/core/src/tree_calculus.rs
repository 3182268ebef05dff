//! Smooth maps with derivative tensors, the tree chain and product rules, and
//! the operators `ℒ`, `ℒ̄`, `ℒ̃` acting through tree sums.

use std::fmt;
use std::sync::{Arc, OnceLock};

use num_traits::ToPrimitive;

use crate::error::{domain, Error, Result};
use crate::scalar::Scalar;
use crate::trees::{tree_level, TreeLevel, MAX_DEPTH};

/// Scalar-valued smooth map on `R^m`.
///
/// Derivative tensors are flat with the first index varying fastest; they are
/// symmetric, so the layout only matters for consistency.
pub trait SmoothMap<S: Scalar>: Send + Sync + fmt::Debug {
    fn in_dims(&self) -> usize;

    /// Highest derivative order the evaluator supports.
    fn max_order(&self) -> usize;

    /// `∂^k f(y)` as a flat tensor of length `m^k`.
    fn derivative_tensor(&self, y: &[S], k: usize) -> Vec<S>;

    /// `sup_{τ ≤ order} ‖∂^τ f‖_∞` with the entrywise max norm.
    fn sup_bound(&self, order: usize) -> f64;

    /// `⟨∂^k f(y), a_1 ⊗ ⋯ ⊗ a_k⟩` with `k = dirs.len()`.
    fn contract(&self, y: &[S], dirs: &[&[S]]) -> S {
        let t = self.derivative_tensor(y, dirs.len());
        contract_tensor(&t, self.in_dims(), dirs).expect("tensor shape matches its own order")
    }

    fn value(&self, y: &[S]) -> S {
        self.contract(y, &[])
    }
}

/// Contraction with shape and order checks; the number of directions must equal the tensor order.
pub fn contract_checked<S: Scalar>(f: &dyn SmoothMap<S>, y: &[S], dirs: &[&[S]]) -> Result<S> {
    let m = f.in_dims();
    if dirs.len() > f.max_order() {
        return Err(Error::Capability { needed: dirs.len(), available: f.max_order() });
    }
    if y.len() != m || dirs.iter().any(|a| a.len() != m) {
        return Err(domain(format!("contraction expects vectors of length {m}")));
    }
    Ok(f.contract(y, dirs))
}

/// `Σ_p a^k_{p_k} ⋯ a^1_{p_1} T^{p_1 … p_k}` by explicit multi-index loops.
pub fn contract_tensor<S: Scalar>(tensor: &[S], m: usize, dirs: &[&[S]]) -> Result<S> {
    let k = dirs.len();
    let expect = m.checked_pow(k as u32).ok_or_else(|| domain("tensor too large"))?;
    if tensor.len() != expect {
        return Err(domain(format!(
            "order-{k} contraction needs a tensor of length {expect}, got {}",
            tensor.len()
        )));
    }
    if dirs.iter().any(|a| a.len() != m) {
        return Err(domain(format!("contraction vectors must have length {m}")));
    }
    let mut total = S::zero();
    let mut idx = vec![0usize; k];
    for &t in tensor {
        let mut w = t;
        for (r, a) in dirs.iter().enumerate() {
            w *= a[idx[r]];
        }
        total += w;
        for digit in idx.iter_mut() {
            *digit += 1;
            if *digit < m {
                break;
            }
            *digit = 0;
        }
    }
    Ok(total)
}

fn multi_index(mut flat: usize, m: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        out.push(flat % m);
        flat /= m;
    }
    out
}

/// Multivariate polynomial `Σ c_α y^α`.
#[derive(Clone, Debug)]
pub struct Polynomial<S> {
    m: usize,
    terms: Vec<(S, Vec<u32>)>,
}

impl<S: Scalar> Polynomial<S> {
    pub fn new(m: usize, terms: Vec<(S, Vec<u32>)>) -> Result<Self> {
        if m == 0 || terms.iter().any(|(_, e)| e.len() != m) {
            return Err(domain("every monomial needs one exponent per coordinate"));
        }
        Ok(Self { m, terms })
    }

    pub fn terms(&self) -> &[(S, Vec<u32>)] {
        &self.terms
    }

    fn derivative_at(&self, y: &[S], counts: &[u32]) -> S {
        let mut total = S::zero();
        'term: for (c, e) in &self.terms {
            let mut v = *c;
            for i in 0..self.m {
                if counts[i] > e[i] {
                    continue 'term;
                }
                for f in 0..counts[i] {
                    v *= S::of((e[i] - f) as f64);
                }
                v *= y[i].powi((e[i] - counts[i]) as i32);
            }
            total += v;
        }
        total
    }
}

impl<S: Scalar> SmoothMap<S> for Polynomial<S> {
    fn in_dims(&self) -> usize {
        self.m
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn derivative_tensor(&self, y: &[S], k: usize) -> Vec<S> {
        let len = self.m.pow(k as u32);
        let mut counts = vec![0u32; self.m];
        (0..len)
            .map(|flat| {
                counts.iter_mut().for_each(|c| *c = 0);
                for p in multi_index(flat, self.m, k) {
                    counts[p] += 1;
                }
                self.derivative_at(y, &counts)
            })
            .collect()
    }

    fn sup_bound(&self, _order: usize) -> f64 {
        if self.terms.iter().all(|(c, e)| c.is_zero() || e.iter().all(|&x| x == 0)) {
            self.terms.iter().map(|(c, _)| c.as_f64()).sum::<f64>().abs()
        } else {
            f64::INFINITY
        }
    }
}

/// One-dimensional profile of a ridge map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Sin,
    Tanh,
}

/// Highest order supported by ridge maps.
pub const RIDGE_ORDER: usize = 10;

fn tanh_polys() -> &'static Vec<Vec<f64>> {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        // d/du P(tanh u) = P'(t)(1 − t²)
        let mut polys = vec![vec![0.0, 1.0]];
        for k in 0..RIDGE_ORDER {
            let p = &polys[k];
            let dp: Vec<f64> = (1..p.len()).map(|i| i as f64 * p[i]).collect();
            let mut next = vec![0.0; dp.len() + 2];
            for (i, &c) in dp.iter().enumerate() {
                next[i] += c;
                next[i + 2] -= c;
            }
            polys.push(next);
        }
        polys
    })
}

fn horner<S: Scalar>(coeffs: &[f64], t: S) -> S {
    coeffs.iter().rev().fold(S::zero(), |acc, &c| acc * t + S::of(c))
}

fn tanh_sups() -> &'static Vec<f64> {
    static SUPS: OnceLock<Vec<f64>> = OnceLock::new();
    SUPS.get_or_init(|| {
        tanh_polys()
            .iter()
            .map(|p| {
                // dense scan then golden-section refinement around the best sample
                let samples = 20_000;
                let f = |t: f64| horner::<f64>(p, t).abs();
                let mut best = (0.0, -1.0);
                for i in 0..=samples {
                    let t = -1.0 + 2.0 * i as f64 / samples as f64;
                    let v = f(t);
                    if v > best.0 {
                        best = (v, t);
                    }
                }
                let h = 2.0 / samples as f64;
                let (mut lo, mut hi) = ((best.1 - h).max(-1.0), (best.1 + h).min(1.0));
                let g = 0.5 * (5f64.sqrt() - 1.0);
                for _ in 0..100 {
                    let a = hi - g * (hi - lo);
                    let b = lo + g * (hi - lo);
                    if f(a) > f(b) {
                        hi = b;
                    } else {
                        lo = a;
                    }
                }
                best.0.max(f(0.5 * (lo + hi)))
            })
            .collect()
    })
}

/// `f(y) = a + b φ(c · y + d)` with a bounded profile `φ`.
#[derive(Clone, Debug)]
pub struct RidgeMap<S> {
    a: S,
    b: S,
    c: Vec<S>,
    d: S,
    profile: Profile,
}

impl<S: Scalar> RidgeMap<S> {
    pub fn new(a: S, b: S, c: Vec<S>, d: S, profile: Profile) -> Result<Self> {
        if c.is_empty() {
            return Err(domain("ridge direction must be non-empty"));
        }
        Ok(Self { a, b, c, d, profile })
    }

    pub fn constant(value: S, m: usize) -> Self {
        Self { a: value, b: S::zero(), c: vec![S::zero(); m], d: S::zero(), profile: Profile::Sin }
    }

    fn argument(&self, y: &[S]) -> S {
        self.c.iter().zip(y).fold(self.d, |acc, (&c, &y)| acc + c * y)
    }

    /// `φ^{(k)}(u)`.
    fn profile_derivative(&self, u: S, k: usize) -> S {
        match self.profile {
            Profile::Sin => match k % 4 {
                0 => u.sin(),
                1 => u.cos(),
                2 => -u.sin(),
                _ => -u.cos(),
            },
            Profile::Tanh => horner(&tanh_polys()[k], u.tanh()),
        }
    }

    fn profile_sup(&self, k: usize) -> f64 {
        match self.profile {
            Profile::Sin => 1.0,
            Profile::Tanh => tanh_sups()[k],
        }
    }
}

impl<S: Scalar> SmoothMap<S> for RidgeMap<S> {
    fn in_dims(&self) -> usize {
        self.c.len()
    }

    fn max_order(&self) -> usize {
        RIDGE_ORDER
    }

    fn derivative_tensor(&self, y: &[S], k: usize) -> Vec<S> {
        let m = self.c.len();
        let u = self.argument(y);
        if k == 0 {
            return vec![self.a + self.b * self.profile_derivative(u, 0)];
        }
        let scale = self.b * self.profile_derivative(u, k);
        (0..m.pow(k as u32))
            .map(|flat| multi_index(flat, m, k).into_iter().fold(scale, |acc, p| acc * self.c[p]))
            .collect()
    }

    fn contract(&self, y: &[S], dirs: &[&[S]]) -> S {
        let u = self.argument(y);
        if dirs.is_empty() {
            return self.a + self.b * self.profile_derivative(u, 0);
        }
        let mut v = self.b * self.profile_derivative(u, dirs.len());
        for a in dirs {
            v *= self.c.iter().zip(a.iter()).fold(S::zero(), |acc, (&c, &x)| acc + c * x);
        }
        v
    }

    fn sup_bound(&self, order: usize) -> f64 {
        let (a, b) = (self.a.as_f64().abs(), self.b.as_f64().abs());
        let cmax = self.c.iter().fold(0.0f64, |m, c| m.max(c.as_f64().abs()));
        let mut sup = a + b * self.profile_sup(0);
        for k in 1..=order.min(RIDGE_ORDER) {
            sup = sup.max(b * self.profile_sup(k) * cmax.powi(k as i32));
        }
        sup
    }
}

/// User-supplied map whose derivatives come from nested central differences.
#[derive(Clone)]
pub struct FiniteDifferenceMap {
    m: usize,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    step: f64,
    max_order: usize,
    bound: f64,
}

impl fmt::Debug for FiniteDifferenceMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteDifferenceMap")
            .field("m", &self.m)
            .field("step", &self.step)
            .field("max_order", &self.max_order)
            .finish()
    }
}

impl FiniteDifferenceMap {
    /// `bound` is the caller's `sup_τ ‖∂^τ f‖_∞`; it is reported unchanged.
    pub fn new(
        m: usize,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        step: f64,
        max_order: usize,
        bound: f64,
    ) -> Result<Self> {
        if m == 0 || !(step > 0.0) {
            return Err(domain("finite-difference map needs m ≥ 1 and a positive step"));
        }
        Ok(Self { m, f: Arc::new(f), step, max_order, bound })
    }

    fn nested(&self, y: &mut Vec<f64>, dirs: &[&[f64]]) -> f64 {
        match dirs.split_last() {
            None => (self.f)(y),
            Some((a, rest)) => {
                let h = self.step;
                for (yi, ai) in y.iter_mut().zip(a.iter()) {
                    *yi += h * ai;
                }
                let plus = self.nested(y, rest);
                for (yi, ai) in y.iter_mut().zip(a.iter()) {
                    *yi -= 2.0 * h * ai;
                }
                let minus = self.nested(y, rest);
                for (yi, ai) in y.iter_mut().zip(a.iter()) {
                    *yi += h * ai;
                }
                (plus - minus) / (2.0 * h)
            }
        }
    }
}

impl SmoothMap<f64> for FiniteDifferenceMap {
    fn in_dims(&self) -> usize {
        self.m
    }

    fn max_order(&self) -> usize {
        self.max_order
    }

    fn derivative_tensor(&self, y: &[f64], k: usize) -> Vec<f64> {
        let m = self.m;
        let basis: Vec<Vec<f64>> =
            (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        (0..m.pow(k as u32))
            .map(|flat| {
                let idx = multi_index(flat, m, k);
                let dirs: Vec<&[f64]> = idx.iter().map(|&p| basis[p].as_slice()).collect();
                self.nested(&mut y.to_vec(), &dirs)
            })
            .collect()
    }

    fn contract(&self, y: &[f64], dirs: &[&[f64]]) -> f64 {
        self.nested(&mut y.to_vec(), dirs)
    }

    fn sup_bound(&self, _order: usize) -> f64 {
        self.bound
    }
}

pub type MapRef<S> = Arc<dyn SmoothMap<S>>;

/// Diffusion coefficients `V = (V^i_j)` (`m × d`) and an optional drift `V_0`.
#[derive(Clone, Debug)]
pub struct VectorField<S> {
    m: usize,
    d: usize,
    columns: Vec<MapRef<S>>,
    drift: Option<Vec<MapRef<S>>>,
}

impl<S: Scalar> VectorField<S> {
    /// `entries[i][j]` is `V^i_j`.
    pub fn new(entries: Vec<Vec<MapRef<S>>>) -> Result<Self> {
        let m = entries.len();
        let d = entries.first().map_or(0, Vec::len);
        if m == 0 || d == 0 || entries.iter().any(|r| r.len() != d) {
            return Err(domain("vector field needs a non-empty rectangular m × d layout"));
        }
        let mut columns = Vec::with_capacity(m * d);
        for j in 0..d {
            for row in &entries {
                if row[j].in_dims() != m {
                    return Err(domain(format!("component maps must act on R^{m}")));
                }
                columns.push(row[j].clone());
            }
        }
        Ok(Self { m, d, columns, drift: None })
    }

    pub fn with_drift(mut self, drift: Vec<MapRef<S>>) -> Result<Self> {
        if drift.len() != self.m || drift.iter().any(|f| f.in_dims() != self.m) {
            return Err(domain("drift must have m components on R^m"));
        }
        self.drift = Some(drift);
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Components of the column `V_j`.
    pub fn column(&self, j: usize) -> &[MapRef<S>] {
        &self.columns[j * self.m..(j + 1) * self.m]
    }

    pub fn drift(&self) -> Option<&[MapRef<S>]> {
        self.drift.as_deref()
    }

    pub fn eval_column(&self, j: usize, y: &[S]) -> Vec<S> {
        self.column(j).iter().map(|f| f.value(y)).collect()
    }

    pub fn eval_drift(&self, y: &[S]) -> Option<Vec<S>> {
        self.drift.as_ref().map(|d| d.iter().map(|f| f.value(y)).collect())
    }

    pub fn max_order(&self) -> usize {
        self.columns.iter().chain(self.drift.iter().flatten()).map(|f| f.max_order()).min().unwrap_or(0)
    }

    /// `C⁰_V = max_{i,j} sup_{τ ≤ order} ‖∂^τ V^i_j‖_∞`.
    pub fn c0(&self, order: usize) -> Result<f64> {
        if order > self.max_order() {
            return Err(Error::Capability { needed: order, available: self.max_order() });
        }
        Ok(self.columns.iter().map(|f| f.sup_bound(order)).fold(0.0, f64::max))
    }

    /// `(∂V_i V_j)^k = Σ_l ∂_l V^k_i V^l_j`.
    pub fn dv_v(&self, i: usize, j: usize, y: &[S]) -> Vec<S> {
        let g = self.eval_column(j, y);
        self.column(i).iter().map(|f| f.contract(y, &[&g])).collect()
    }
}

/// Stacked vectors `(D¹F, …, D^N F)`, also used for `(Ξ¹, …, Ξ^N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeStack<S> {
    m: usize,
    levels: Vec<Vec<S>>,
}

impl<S: Scalar> DerivativeStack<S> {
    pub fn new(m: usize, levels: Vec<Vec<S>>) -> Result<Self> {
        if levels.iter().any(|v| v.len() != m) {
            return Err(domain(format!("every stack level must have length {m}")));
        }
        if levels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(domain("stack entries must be finite"));
        }
        Ok(Self { m, levels })
    }

    pub fn zeros(m: usize, depth: usize) -> Self {
        Self { m, levels: vec![vec![S::zero(); m]; depth] }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Level `ℓ ≥ 1`.
    pub fn level(&self, l: usize) -> &[S] {
        &self.levels[l - 1]
    }

    pub fn levels(&self) -> &[Vec<S>] {
        &self.levels
    }
}

/// Coefficients `c_{L,i}` for `L = 1..=depth`, aligned with the branch order of each tree level.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientFamily<S> {
    levels: Vec<Vec<S>>,
}

impl<S: Scalar> CoefficientFamily<S> {
    pub fn from_fn(depth: usize, mut f: impl FnMut(usize, usize, &TreeLevel) -> S) -> Result<Self> {
        if depth > MAX_DEPTH {
            return Err(domain(format!("coefficient depth {depth} exceeds {MAX_DEPTH}")));
        }
        let mut levels = Vec::with_capacity(depth);
        for l in 1..=depth {
            let tl = tree_level(l)?;
            levels.push((0..tl.branches.len()).map(|i| f(l, i, tl)).collect());
        }
        Ok(Self { levels })
    }

    /// `c_{L,i} = ℓ_2! ⋯ ℓ_α! / L!`, the family that makes the variational recursion reproduce derivatives.
    pub fn factorial_ratio(depth: usize) -> Result<Self> {
        Self::from_fn(depth, |_, i, tl| {
            let r = tl.coefficients[i];
            S::of(r.to_f64().expect("small rational"))
        })
    }

    pub fn ones(depth: usize) -> Result<Self> {
        Self::from_fn(depth, |_, _, _| S::one())
    }

    pub fn zeros(depth: usize) -> Result<Self> {
        Self::from_fn(depth, |_, _, _| S::zero())
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn get(&self, l: usize, i: usize) -> S {
        self.levels[l - 1][i]
    }
}

fn slot_dirs<'a, S: Scalar>(slots: &[usize], xi: &'a DerivativeStack<S>) -> Vec<&'a [S]> {
    slots.iter().map(|&l| xi.level(l)).collect()
}

fn check_op<S: Scalar>(
    l: isize,
    f: &dyn SmoothMap<S>,
    y: &[S],
    xi: &DerivativeStack<S>,
    families: &[&CoefficientFamily<S>],
    order: usize,
) -> Result<()> {
    if l <= 0 {
        return Ok(());
    }
    let l = l as usize;
    if xi.depth() < l {
        return Err(domain(format!("stack has depth {} but level {l} is required", xi.depth())));
    }
    if families.iter().any(|c| c.depth() < l) {
        return Err(domain(format!("coefficients missing for level {l}")));
    }
    if f.in_dims() != y.len() || xi.m() != y.len() {
        return Err(domain("map, point and stack dimensions differ"));
    }
    if f.max_order() < order {
        return Err(Error::Capability { needed: order, available: f.max_order() });
    }
    Ok(())
}

/// `D̄^N f(F) = Σ_{i∈𝒜_N} ⟨∂^{ℓ_1} f(F), D^{ℓ_2}F ⊗ ⋯ ⊗ D^{ℓ_α}F⟩`.
pub fn tree_chain_rule<S: Scalar>(f: &dyn SmoothMap<S>, at: &[S], stack: &DerivativeStack<S>, n: usize) -> Result<S> {
    if n == 0 {
        return Ok(f.value(at));
    }
    let ones = CoefficientFamily::ones(n)?;
    check_op(n as isize, f, at, stack, &[&ones], n)?;
    let tl = tree_level(n)?;
    Ok(tl.stats.iter().map(|st| f.contract(at, &slot_dirs(st.slots(), stack))).sum())
}

/// `D̄^N (f g)(F) = M_1 + M_2` for scalar `f`, `g`; `g_table[ℓ-1] = D̄^ℓ g(F)`.
pub fn tree_product_rule<S: Scalar>(
    f: &dyn SmoothMap<S>,
    g: &dyn SmoothMap<S>,
    at: &[S],
    stack: &DerivativeStack<S>,
    g_table: &[S],
    n: usize,
) -> Result<S> {
    if n == 0 {
        return Ok(f.value(at) * g.value(at));
    }
    if g_table.len() < n {
        return Err(domain(format!("g derivative table needs {n} entries")));
    }
    let ones = CoefficientFamily::ones(n)?;
    check_op(n as isize, f, at, stack, &[&ones], n)?;
    let tl = tree_level(n)?;
    let gv = g.value(at);
    let mut m1 = S::zero();
    let mut m2 = S::zero();
    for st in &tl.stats {
        let slots = st.slots();
        m1 += gv * f.contract(at, &slot_dirs(slots, stack));
        for r in 0..slots.len() {
            let rest: Vec<usize> = slots.iter().enumerate().filter(|&(q, _)| q != r).map(|(_, &l)| l).collect();
            m2 += g_table[slots[r] - 1] * f.contract(at, &slot_dirs(&rest, stack));
        }
    }
    Ok(m1 + m2)
}

/// `ℒ^L_{ξ,c} f(y)`; `ℒ⁰ f = f(y)`, `ℒ^{L<0} = 0`.
pub fn op_l<S: Scalar>(
    l: isize,
    f: &dyn SmoothMap<S>,
    y: &[S],
    xi: &DerivativeStack<S>,
    c: &CoefficientFamily<S>,
) -> Result<S> {
    check_op(l, f, y, xi, &[c], l.max(0) as usize)?;
    Ok(op_l_unchecked(l, f, y, xi, c))
}

pub(crate) fn op_l_unchecked<S: Scalar>(
    l: isize,
    f: &dyn SmoothMap<S>,
    y: &[S],
    xi: &DerivativeStack<S>,
    c: &CoefficientFamily<S>,
) -> S {
    match l {
        l if l < 0 => S::zero(),
        0 => f.value(y),
        l => {
            let l = l as usize;
            let tl = tree_level(l).expect("checked depth");
            tl.stats
                .iter()
                .enumerate()
                .map(|(i, st)| c.get(l, i) * f.contract(y, &slot_dirs(st.slots(), xi)))
                .sum()
        }
    }
}

/// `ℒ^L` applied to every component of a vector-valued map.
pub fn op_l_vec<S: Scalar>(
    l: isize,
    g: &[MapRef<S>],
    y: &[S],
    xi: &DerivativeStack<S>,
    c: &CoefficientFamily<S>,
) -> Result<Vec<S>> {
    g.iter().map(|f| op_l(l, f.as_ref(), y, xi, c)).collect()
}

pub(crate) fn op_l_vec_unchecked<S: Scalar>(
    l: isize,
    g: &[MapRef<S>],
    y: &[S],
    xi: &DerivativeStack<S>,
    c: &CoefficientFamily<S>,
) -> Vec<S> {
    g.iter().map(|f| op_l_unchecked(l, f.as_ref(), y, xi, c)).collect()
}

/// `ℒ̄^L` given `g(y)` and `inner[ℓ] = ℒ^ℓ g` for `ℓ = 0..=L`.
pub(crate) fn lbar_with<S: Scalar>(
    l: isize,
    f: &dyn SmoothMap<S>,
    y: &[S],
    g_val: &[S],
    xi: &DerivativeStack<S>,
    outer: &CoefficientFamily<S>,
    inner: &[Vec<S>],
) -> S {
    match l {
        l if l < 0 => S::zero(),
        0 => f.contract(y, &[g_val]),
        l => {
            let l = l as usize;
            let tl = tree_level(l).expect("checked depth");
            let mut total = S::zero();
            for (i, st) in tl.stats.iter().enumerate() {
                let slots = st.slots();
                let mut dirs = slot_dirs(slots, xi);
                dirs.push(g_val);
                let mut term = f.contract(y, &dirs);
                dirs.pop();
                for r in 0..slots.len() {
                    let saved = dirs[r];
                    dirs[r] = &inner[slots[r]];
                    term += f.contract(y, &dirs);
                    dirs[r] = saved;
                }
                total += outer.get(l, i) * term;
            }
            total
        }
    }
}

/// `ℒ̃^L` given `inner_tilde[ℓ] = ℒ^ℓ_{c̃} g` for `ℓ = 0..L`.
pub(crate) fn ltilde_with<S: Scalar>(
    l: isize,
    f: &dyn SmoothMap<S>,
    y: &[S],
    xi: &DerivativeStack<S>,
    outer: &CoefficientFamily<S>,
    inner_tilde: &[Vec<S>],
) -> S {
    if l <= 0 {
        return S::zero();
    }
    let l = l as usize;
    let tl = tree_level(l).expect("checked depth");
    let mut total = S::zero();
    for (i, st) in tl.stats.iter().enumerate() {
        let slots = st.slots();
        let mut dirs = slot_dirs(slots, xi);
        let mut term = S::zero();
        for r in 0..slots.len() {
            let saved = dirs[r];
            dirs[r] = &inner_tilde[slots[r] - 1];
            term += f.contract(y, &dirs);
            dirs[r] = saved;
        }
        total += outer.get(l, i) * term;
    }
    total
}

/// `ℒ^ℓ g` for `ℓ = 0..=top` (empty when `top < 0`).
pub(crate) fn inner_table<S: Scalar>(
    top: isize,
    g: &[MapRef<S>],
    y: &[S],
    xi: &DerivativeStack<S>,
    c: &CoefficientFamily<S>,
) -> Vec<Vec<S>> {
    (0..=top).map(|l| op_l_vec_unchecked(l, g, y, xi, c)).collect()
}

/// `ℒ̄^L_{ξ,c}(∂f · g)(y)`; `ℒ̄⁰ = ∂f · g`, `ℒ̄^{L<0} = 0`.
pub fn op_lbar<S: Scalar>(
    l: isize,
    f: &dyn SmoothMap<S>,
    g: &[MapRef<S>],
    y: &[S],
    xi: &DerivativeStack<S>,
    c: &CoefficientFamily<S>,
) -> Result<S> {
    if g.len() != y.len() {
        return Err(domain("g must have one component per coordinate"));
    }
    check_op(l, f, y, xi, &[c], l.max(0) as usize + 1)?;
    for gk in g {
        check_op(l, gk.as_ref(), y, xi, &[c], l.max(0) as usize)?;
    }
    if l < 0 {
        return Ok(S::zero());
    }
    let g_val: Vec<S> = g.iter().map(|h| h.value(y)).collect();
    let inner = inner_table(l, g, y, xi, c);
    Ok(lbar_with(l, f, y, &g_val, xi, c, &inner))
}

/// `ℒ̃^L_{ξ,c,c̃}(∂f · g)(y)`; zero for `L ≤ 0`.
pub fn op_ltilde<S: Scalar>(
    l: isize,
    f: &dyn SmoothMap<S>,
    g: &[MapRef<S>],
    y: &[S],
    xi: &DerivativeStack<S>,
    c: &CoefficientFamily<S>,
    c_tilde: &CoefficientFamily<S>,
) -> Result<S> {
    if l <= 0 {
        return Ok(S::zero());
    }
    if g.len() != y.len() {
        return Err(domain("g must have one component per coordinate"));
    }
    check_op(l, f, y, xi, &[c], l as usize)?;
    if c_tilde.depth() + 1 < l as usize {
        return Err(domain(format!("c̃ coefficients missing below level {l}")));
    }
    let inner_tilde = inner_table(l - 1, g, y, xi, c_tilde);
    Ok(ltilde_with(l, f, y, xi, c, &inner_tilde))
}
