//! Tree-indexed variational processes `Ξ^L`, directional derivatives of the
//! scheme, their finite-difference oracle, point derivatives and `P^L`.

use crate::error::{domain, Error, Result};
use crate::grid_gaussian::GridPath;
use crate::scalar::{max_abs, Scalar};
use crate::scheme::{euler_run, SchemeConfig};
use crate::tree_calculus::{
    inner_table, lbar_with, ltilde_with, op_l_vec_unchecked, CoefficientFamily, DerivativeStack, VectorField,
};

/// Coefficient families `c` (attached to `δx`) and `c̃` (attached to `δb`).
#[derive(Clone, Debug)]
pub struct XiCoefficients<S> {
    pub c: CoefficientFamily<S>,
    pub c_tilde: CoefficientFamily<S>,
}

impl<S: Scalar> XiCoefficients<S> {
    /// `c = c̃ = ℓ_2! ⋯ ℓ_α! / L!`.
    pub fn factorial_ratio(depth: usize) -> Result<Self> {
        let c = CoefficientFamily::factorial_ratio(depth)?;
        Ok(Self { c_tilde: c.clone(), c })
    }
}

/// Evolution of `(Ξ¹, …, Ξ^N)` on the grid.
#[derive(Clone, Debug)]
pub struct XiProcess<S> {
    depth: usize,
    start: usize,
    levels: Vec<GridPath<S>>,
}

impl<S: Scalar> XiProcess<S> {
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Index of the start time `t₀`.
    pub fn start(&self) -> usize {
        self.start
    }

    /// `Ξ^L` for `1 ≤ L ≤ depth`.
    pub fn level(&self, l: usize) -> &GridPath<S> {
        &self.levels[l - 1]
    }

    pub fn stack_at(&self, k: usize) -> DerivativeStack<S> {
        let m = self.levels[0].dims();
        DerivativeStack::new(m, self.levels.iter().map(|p| p.at(k).to_vec()).collect())
            .expect("levels share a dimension")
    }
}

fn check_order<S: Scalar>(field: &VectorField<S>, depth: usize) -> Result<()> {
    let need = (depth + 2).max(3);
    if field.max_order() < need {
        return Err(Error::Capability { needed: need, available: field.max_order() });
    }
    Ok(())
}

fn check_solution<S: Scalar>(cfg: &SchemeConfig<S>, y: &GridPath<S>) -> Result<()> {
    if !y.grid().same_as(&cfg.grid) || y.dims() != cfg.field.m() {
        return Err(domain("solution path does not match the scheme configuration"));
    }
    Ok(())
}

/// Increments of all levels over one step, given the stack at `t_k`.
#[allow(clippy::too_many_arguments)]
fn xi_increment<S: Scalar>(
    field: &VectorField<S>,
    depth: usize,
    y: &[S],
    stack: &DerivativeStack<S>,
    dx: &[S],
    db: &[S],
    d2h: S,
    coeffs: &XiCoefficients<S>,
) -> Vec<Vec<S>> {
    let (m, d) = (field.m(), field.d());
    let half = S::of(0.5) * d2h;
    let n = depth as isize;
    let mut out = vec![vec![S::zero(); m]; depth];
    for j in 0..d {
        let col = field.column(j);
        let inner = inner_table(n, col, y, stack, &coeffs.c);
        let inner_tilde = inner_table(n - 1, col, y, stack, &coeffs.c_tilde);
        let g_val = &inner[0];
        for l in 1..=depth {
            let li = l as isize;
            for k in 0..m {
                let f = col[k].as_ref();
                let drift = lbar_with(li, f, y, g_val, stack, &coeffs.c, &inner)
                    + ltilde_with(li - 1, f, y, stack, &coeffs.c, &inner_tilde);
                out[l - 1][k] += inner[l][k] * dx[j] + inner_tilde[l - 1][k] * db[j] + half * drift;
            }
        }
    }
    out
}

/// Evolves `Ξ¹..Ξ^N` from `t₀ = t_{start}` with zero initial values.
#[allow(clippy::too_many_arguments)]
pub fn xi_run<S: Scalar>(
    depth: usize,
    cfg: &SchemeConfig<S>,
    y: &GridPath<S>,
    x: &GridPath<S>,
    b: &GridPath<S>,
    coeffs: &XiCoefficients<S>,
    start: usize,
) -> Result<XiProcess<S>> {
    xi_run_from(depth, cfg, y, x, b, coeffs, start, None)
}

/// [`xi_run`] with optional initial values `Ξ^L_{t₀}`.
#[allow(clippy::too_many_arguments)]
pub fn xi_run_from<S: Scalar>(
    depth: usize,
    cfg: &SchemeConfig<S>,
    y: &GridPath<S>,
    x: &GridPath<S>,
    b: &GridPath<S>,
    coeffs: &XiCoefficients<S>,
    start: usize,
    initial: Option<&[Vec<S>]>,
) -> Result<XiProcess<S>> {
    if depth == 0 {
        return Err(domain("variational depth must be at least 1"));
    }
    check_order(&cfg.field, depth)?;
    check_solution(cfg, y)?;
    cfg.check_driver(x)?;
    cfg.check_driver(b)?;
    if coeffs.c.depth() < depth || coeffs.c_tilde.depth() + 1 < depth {
        return Err(domain("coefficient families too shallow"));
    }
    let n = cfg.grid.steps();
    if start > n {
        return Err(domain(format!("start index {start} beyond {n}")));
    }
    let m = cfg.field.m();
    let init: Vec<Vec<S>> = match initial {
        Some(v) if v.len() == depth && v.iter().all(|e| e.len() == m) => v.to_vec(),
        Some(_) => return Err(domain("initial values must give one m-vector per level")),
        None => vec![vec![S::zero(); m]; depth],
    };
    let d2h = cfg.delta_2h();
    let mut values: Vec<Vec<S>> = vec![Vec::with_capacity((n + 1) * m); depth];
    for _ in 0..=start {
        for (l, v) in values.iter_mut().enumerate() {
            v.extend_from_slice(&init[l]);
        }
    }
    let mut stack = DerivativeStack::new(m, init)?;
    for k in start..n {
        let inc = xi_increment(
            &cfg.field,
            depth,
            y.at(k),
            &stack,
            &x.increment(k, k + 1),
            &b.increment(k, k + 1),
            d2h,
            coeffs,
        );
        let next: Vec<Vec<S>> =
            stack.levels().iter().zip(&inc).map(|(s, i)| s.iter().zip(i).map(|(&a, &b)| a + b).collect()).collect();
        if next.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { step: k });
        }
        for (l, v) in values.iter_mut().enumerate() {
            v.extend_from_slice(&next[l]);
        }
        stack = DerivativeStack::new(m, next)?;
    }
    let levels = values.into_iter().map(|v| GridPath::from_raw(cfg.grid, m, v)).collect();
    Ok(XiProcess { depth, start, levels })
}

/// `z^ℓ = D̄^ℓ_{h̄} y` for `ℓ = 1..=order`, by the chain rule of the scheme map along `x + ε h̄`.
pub fn directional_derivative_run<S: Scalar>(
    order: usize,
    cfg: &SchemeConfig<S>,
    y: &GridPath<S>,
    x: &GridPath<S>,
    direction: &GridPath<S>,
) -> Result<Vec<GridPath<S>>> {
    if !(1..=4).contains(&order) {
        return Err(domain(format!("directional derivative order {order} outside 1..=4")));
    }
    check_order(&cfg.field, order)?;
    check_solution(cfg, y)?;
    cfg.check_driver(x)?;
    cfg.check_driver(direction)?;
    let field = &cfg.field;
    let (m, d) = (field.m(), field.d());
    let ones = CoefficientFamily::ones(order)?;
    let n = cfg.grid.steps();
    let half = S::of(0.5) * cfg.delta_2h();
    let top = order as isize;
    let mut stack = DerivativeStack::zeros(m, order);
    let mut values: Vec<Vec<S>> = vec![vec![S::zero(); m]; order];
    for k in 0..n {
        let yk = y.at(k);
        let dx = x.increment(k, k + 1);
        let dh = direction.increment(k, k + 1);
        let mut inc = vec![vec![S::zero(); m]; order];
        for j in 0..d {
            let col = field.column(j);
            let inner = inner_table(top, col, yk, &stack, &ones);
            for l in 1..=order {
                let li = l as isize;
                let lower = op_l_vec_unchecked(li - 1, col, yk, &stack, &ones);
                for kk in 0..m {
                    let drift = lbar_with(li, col[kk].as_ref(), yk, &inner[0], &stack, &ones, &inner);
                    inc[l - 1][kk] +=
                        inner[l][kk] * dx[j] + S::of(l as f64) * lower[kk] * dh[j] + half * drift;
                }
            }
        }
        let next: Vec<Vec<S>> =
            stack.levels().iter().zip(&inc).map(|(s, i)| s.iter().zip(i).map(|(&a, &b)| a + b).collect()).collect();
        if next.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { step: k });
        }
        for (l, v) in values.iter_mut().enumerate() {
            v.extend_from_slice(&next[l]);
        }
        stack = DerivativeStack::new(m, next)?;
    }
    Ok(values.into_iter().map(|v| GridPath::from_raw(cfg.grid, m, v)).collect())
}

/// Central differences of the scheme along `x ± ε h̄`: first order for `order = 1`,
/// the three-point second difference for `order = 2`.
pub fn fd_oracle<S: Scalar>(
    order: usize,
    cfg: &SchemeConfig<S>,
    x: &GridPath<S>,
    direction: &GridPath<S>,
    eps: S,
) -> Result<GridPath<S>> {
    if !(eps > S::zero()) {
        return Err(domain("finite-difference step must be positive"));
    }
    let plus = euler_run(cfg, &x.axpy(eps, direction)?)?;
    let minus = euler_run(cfg, &x.axpy(-eps, direction)?)?;
    let values: Vec<S> = match order {
        1 => plus.values().iter().zip(minus.values()).map(|(&a, &b)| (a - b) / (eps + eps)).collect(),
        2 => {
            let mid = euler_run(cfg, x)?;
            plus.values()
                .iter()
                .zip(minus.values())
                .zip(mid.values())
                .map(|((&a, &b), &c)| (a - c - c + b) / (eps * eps))
                .collect()
        }
        _ => return Err(domain(format!("finite-difference order {order} not supported"))),
    };
    GridPath::new(cfg.grid, cfg.field.m(), values)
}

/// Initial value convention for the first point derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum JumpVariant {
    /// `a₁ = V_j(y_{t_{k₀}})` for the chosen driving coordinate.
    #[default]
    PerCoordinate,
    /// `a₁ = Σ_j V_j(y_{t_{k₀}})`.
    Summed,
}

/// `D_r y` and optionally `D_r D_{r′} y` along the grid.
#[derive(Clone, Debug)]
pub struct PointDerivative<S> {
    pub r: f64,
    pub j: usize,
    pub k0: usize,
    pub a1: Vec<S>,
    pub first: GridPath<S>,
    pub second: Option<SecondPointDerivative<S>>,
}

#[derive(Clone, Debug)]
pub struct SecondPointDerivative<S> {
    pub r: f64,
    pub j: usize,
    pub k0: usize,
    pub a2: Vec<S>,
    /// `D_{r′} y` for the second time and coordinate.
    pub first: GridPath<S>,
    /// `D_r D_{r′} y`.
    pub mixed: GridPath<S>,
}

fn first_point<S: Scalar>(
    cfg: &SchemeConfig<S>,
    y: &GridPath<S>,
    x: &GridPath<S>,
    k0: usize,
    j: usize,
    variant: JumpVariant,
) -> (Vec<S>, GridPath<S>) {
    let field = &cfg.field;
    let (m, d) = (field.m(), field.d());
    let n = cfg.grid.steps();
    let half = S::of(0.5) * cfg.delta_2h();
    let a1: Vec<S> = match variant {
        JumpVariant::PerCoordinate => field.eval_column(j, y.at(k0)),
        JumpVariant::Summed => (0..d).fold(vec![S::zero(); m], |acc, jj| {
            acc.iter().zip(field.eval_column(jj, y.at(k0))).map(|(&a, b)| a + b).collect()
        }),
    };
    let mut values = vec![S::zero(); (k0 + 1) * m];
    values.extend_from_slice(&a1);
    let mut xi = a1.clone();
    for k in k0 + 1..n {
        let yk = y.at(k);
        let dx = x.increment(k, k + 1);
        let mut next = xi.clone();
        for jj in 0..d {
            let col = field.column(jj);
            let g = field.eval_column(jj, yk);
            let dg: Vec<S> = col.iter().map(|f| f.contract(yk, &[&xi])).collect();
            for kk in 0..m {
                let f = col[kk].as_ref();
                let dvv = f.contract(yk, &[&xi, &g]) + f.contract(yk, &[&dg]);
                next[kk] += dg[kk] * dx[jj] + half * dvv;
            }
        }
        values.extend_from_slice(&next);
        xi = next;
    }
    (a1, GridPath::from_raw(cfg.grid, m, values))
}

/// Point derivatives: `ξ¹ = D_r y` for driving coordinate `j`, and, when
/// `second = Some((r′, j′))`, `ξ² = D_r D_{r′} y`.
pub fn point_derivative_run<S: Scalar>(
    cfg: &SchemeConfig<S>,
    y: &GridPath<S>,
    x: &GridPath<S>,
    r: f64,
    j: usize,
    second: Option<(f64, usize)>,
    variant: JumpVariant,
) -> Result<PointDerivative<S>> {
    check_order(&cfg.field, 2)?;
    check_solution(cfg, y)?;
    cfg.check_driver(x)?;
    let field = &cfg.field;
    let (m, d) = (field.m(), field.d());
    if j >= d {
        return Err(domain(format!("coordinate {j} outside 0..{d}")));
    }
    let k0 = cfg.grid.step_containing(r)?;
    let (a1, first) = first_point(cfg, y, x, k0, j, variant);
    let second = match second {
        None => None,
        Some((r2, j2)) => {
            if j2 >= d {
                return Err(domain(format!("coordinate {j2} outside 0..{d}")));
            }
            let k1 = cfg.grid.step_containing(r2)?;
            let (_, first2) = first_point(cfg, y, x, k1, j2, variant);
            let kk = k0.max(k1);
            let jump = |k: usize, jc: usize, other: &GridPath<S>| -> Vec<S> {
                let yk = y.at(k);
                let cols: Vec<usize> = match variant {
                    JumpVariant::PerCoordinate => vec![jc],
                    JumpVariant::Summed => (0..d).collect(),
                };
                let mut out = vec![S::zero(); m];
                for c in cols {
                    for (o, f) in out.iter_mut().zip(field.column(c)) {
                        *o += f.contract(yk, &[other.at(k)]);
                    }
                }
                out
            };
            let mut a2 = vec![S::zero(); m];
            if k0 >= k1 {
                a2.iter_mut().zip(jump(k0, j, &first2)).for_each(|(a, v)| *a += v);
            }
            if k1 >= k0 {
                a2.iter_mut().zip(jump(k1, j2, &first)).for_each(|(a, v)| *a += v);
            }
            let mixed = mixed_point(cfg, y, x, kk, &a2, &first, &first2);
            Some(SecondPointDerivative { r: r2, j: j2, k0: k1, a2, first: first2, mixed })
        }
    };
    Ok(PointDerivative { r, j, k0, a1, first, second })
}

/// `ξ²` after its jump: the polarized order-2 recursion with unit coefficients.
fn mixed_point<S: Scalar>(
    cfg: &SchemeConfig<S>,
    y: &GridPath<S>,
    x: &GridPath<S>,
    kk: usize,
    a2: &[S],
    ua: &GridPath<S>,
    ub: &GridPath<S>,
) -> GridPath<S> {
    let field = &cfg.field;
    let (m, d) = (field.m(), field.d());
    let n = cfg.grid.steps();
    let half = S::of(0.5) * cfg.delta_2h();
    let mut values = vec![S::zero(); (kk + 1) * m];
    values.extend_from_slice(a2);
    let mut xi = a2.to_vec();
    for k in kk + 1..n {
        let yk = y.at(k);
        let (a, b) = (ua.at(k), ub.at(k));
        let dx = x.increment(k, k + 1);
        let mut next = xi.clone();
        for jj in 0..d {
            let col = field.column(jj);
            let g = field.eval_column(jj, yk);
            let ga: Vec<S> = col.iter().map(|f| f.contract(yk, &[a])).collect();
            let gb: Vec<S> = col.iter().map(|f| f.contract(yk, &[b])).collect();
            let gab: Vec<S> = col.iter().map(|f| f.contract(yk, &[a, b]) + f.contract(yk, &[&xi])).collect();
            for kk2 in 0..m {
                let f = col[kk2].as_ref();
                let dv = f.contract(yk, &[a, b]) + f.contract(yk, &[&xi]);
                let dvv = f.contract(yk, &[a, b, &g])
                    + f.contract(yk, &[a, &gb])
                    + f.contract(yk, &[b, &ga])
                    + f.contract(yk, &[&xi, &g])
                    + f.contract(yk, &[&gab]);
                next[kk2] += dv * dx[jj] + half * dvv;
            }
        }
        values.extend_from_slice(&next);
        xi = next;
    }
    GridPath::from_raw(cfg.grid, m, values)
}

/// `P^L_s = max(1, max Π |Ξ^{i_r}_s|)` over multisets of levels in `1..=L` with sum at most `L`.
pub fn p_process<S: Scalar>(xi: &XiProcess<S>, k: usize, l: isize) -> Result<S> {
    if l < 0 {
        return Ok(S::zero());
    }
    let l = l as usize;
    if l > xi.depth() {
        return Err(domain(format!("P^{l} needs depth {l}, process has {}", xi.depth())));
    }
    let norms: Vec<S> = (1..=l).map(|i| max_abs(xi.level(i).at(k))).collect();
    Ok(p_from_norms(&norms, l))
}

/// `P^L` from the level norms `|Ξ^1|, …, |Ξ^L|`.
pub fn p_from_norms<S: Scalar>(norms: &[S], l: usize) -> S {
    // best[s]: largest product over multisets with sum ≤ s (empty product 1 acts as the clamp)
    let mut best = vec![S::one(); l + 1];
    for s in 1..=l {
        let mut b = best[s - 1];
        for i in 1..=s {
            b = b.max(norms[i - 1] * best[s - i]);
        }
        best[s] = b;
    }
    best[l]
}
