//! The modified Euler scheme and its coupled-refinement strong error study.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::grid_gaussian::{sample_fbm, Grid, GridPath, HurstParams};
use crate::rough_lift::RoughLift;
use crate::scalar::Scalar;
use crate::tree_calculus::VectorField;

/// Vector field, initial value, Hurst parameters and grid of one scheme run.
#[derive(Clone, Debug)]
pub struct SchemeConfig<S> {
    pub field: Arc<VectorField<S>>,
    pub initial: Vec<S>,
    pub hurst: HurstParams,
    pub grid: Grid,
}

impl<S: Scalar> SchemeConfig<S> {
    pub fn new(field: Arc<VectorField<S>>, initial: Vec<S>, hurst: HurstParams, grid: Grid) -> Result<Self> {
        if initial.len() != field.m() {
            return Err(domain(format!("initial value has {} entries, field needs {}", initial.len(), field.m())));
        }
        if field.max_order() < 3 {
            return Err(Error::Capability { needed: 3, available: field.max_order() });
        }
        Ok(Self { field, initial, hurst, grid })
    }

    pub fn with_grid(&self, grid: Grid) -> Self {
        Self { grid, ..self.clone() }
    }

    pub fn delta_2h(&self) -> S {
        S::of(self.hurst.delta_2h(&self.grid))
    }

    pub(crate) fn check_driver(&self, x: &GridPath<S>) -> Result<()> {
        if !x.grid().same_as(&self.grid) {
            return Err(domain("driver lives on a different grid"));
        }
        if x.dims() != self.field.d() {
            return Err(domain(format!("driver has {} coordinates, field needs {}", x.dims(), self.field.d())));
        }
        Ok(())
    }
}

/// One step `y + V₀(y)Δ + V(y)δx + ½ Σ_j ∂V_jV_j(y) Δ^{2H}`.
pub fn euler_step<S: Scalar>(field: &VectorField<S>, y: &[S], dx: &[S], delta: S, d2h: S) -> Vec<S> {
    let mut next = y.to_vec();
    if let Some(v0) = field.eval_drift(y) {
        for (n, v) in next.iter_mut().zip(v0) {
            *n += v * delta;
        }
    }
    let half = S::of(0.5) * d2h;
    for j in 0..field.d() {
        let col = field.eval_column(j, y);
        for (k, f) in field.column(j).iter().enumerate() {
            next[k] += col[k] * dx[j] + half * f.contract(y, &[&col]);
        }
    }
    next
}

/// Runs the scheme along `x`; `y_0 = a`.
pub fn euler_run<S: Scalar>(cfg: &SchemeConfig<S>, x: &GridPath<S>) -> Result<GridPath<S>> {
    cfg.check_driver(x)?;
    let n = cfg.grid.steps();
    let m = cfg.field.m();
    let delta = S::of(cfg.grid.delta());
    let d2h = cfg.delta_2h();
    let mut values = Vec::with_capacity((n + 1) * m);
    values.extend_from_slice(&cfg.initial);
    for k in 0..n {
        let y = values[k * m..(k + 1) * m].to_vec();
        let next = euler_step(&cfg.field, &y, &x.increment(k, k + 1), delta, d2h);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { step: k });
        }
        values.extend(next);
    }
    Ok(GridPath::from_raw(cfg.grid, m, values))
}

/// Result of the coupled-refinement experiment.
#[derive(Clone, Debug)]
pub struct RefinementReport {
    pub levels: Vec<usize>,
    /// `(seed, n, |y^n_T − y^{finest}_T|)` for every non-finest level, ordered by seed.
    pub rows: Vec<(u64, usize, f64)>,
    /// RMS error at `T` against the finest level.
    pub rms_vs_finest: Vec<f64>,
    /// RMS of `y^{n_i}_T − y^{n_{i+1}}_T`, indexed by the coarser level.
    pub rms_consecutive: Vec<f64>,
    /// Least-squares slope of `log₂ rms_consecutive` against `log₂ n`.
    pub slope: f64,
    pub slope_stderr: f64,
    /// Seeds whose run overflowed at some level, with the failing step.
    pub overflowed: Vec<(u64, usize)>,
}

impl RefinementReport {
    /// Observed convergence rate `−slope`.
    pub fn rate(&self) -> f64 {
        -self.slope
    }
}

/// Least-squares fit `y ≈ a + b x`; returns `(b, stderr(b))`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let stderr = if xs.len() > 2 {
        let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (b, stderr)
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), e| (s + e * e, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        (s / c as f64).sqrt()
    }
}

/// Strong error study on nested dyadic levels with one fine noise sample per seed.
///
/// `cfg.grid` supplies the horizon; seeds are `seed, seed+1, …, seed+mc-1`.
pub fn coupled_refinement_errors(
    cfg: &SchemeConfig<f64>,
    levels: &[usize],
    mc: usize,
    seed: u64,
) -> Result<RefinementReport> {
    if levels.len() < 2 || mc == 0 {
        return Err(domain("need at least two levels and one sample"));
    }
    for w in levels.windows(2) {
        if w[1] <= w[0] || w[1] % w[0] != 0 {
            return Err(domain(format!("levels {} and {} are not nested", w[0], w[1])));
        }
    }
    let finest = *levels.last().expect("non-empty");
    let fine_grid = Grid::new(cfg.grid.horizon(), finest)?;
    let d = cfg.field.d();
    let per_seed: Vec<std::result::Result<Vec<Vec<f64>>, (u64, usize)>> = (0..mc as u64)
        .into_par_iter()
        .map(|i| {
            let s = seed + i;
            let x = sample_fbm(&fine_grid, &cfg.hurst, d, s).map_err(|_| (s, 0))?;
            levels
                .iter()
                .map(|&n| {
                    let coarse = x.restrict(finest / n).map_err(|_| (s, 0))?;
                    let run = cfg.with_grid(*coarse.grid());
                    let y = euler_run(&run, &coarse).map_err(|e| match e {
                        Error::Overflow { step } => (s, step),
                        _ => (s, 0),
                    })?;
                    Ok(y.at(n).to_vec())
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    let mut overflowed = Vec::new();
    let mut terminal = Vec::new();
    for (i, r) in per_seed.into_iter().enumerate() {
        match r {
            Ok(t) => {
                let s = seed + i as u64;
                let last = t.last().expect("levels non-empty");
                for (l, &n) in levels.iter().enumerate().take(levels.len() - 1) {
                    rows.push((s, n, dist(&t[l], last)));
                }
                terminal.push(t);
            }
            Err(e) => overflowed.push(e),
        }
    }
    if terminal.is_empty() {
        let step = overflowed.first().map_or(0, |e| e.1);
        return Err(Error::Overflow { step });
    }
    let last = levels.len() - 1;
    let rms_vs_finest = (0..levels.len()).map(|l| rms(terminal.iter().map(|t| dist(&t[l], &t[last])))).collect();
    let rms_consecutive: Vec<f64> =
        (0..last).map(|l| rms(terminal.iter().map(|t| dist(&t[l], &t[l + 1])))).collect();
    let xs: Vec<f64> = levels[..last].iter().map(|&n| (n as f64).log2()).collect();
    let ys: Vec<f64> = rms_consecutive.iter().map(|e| e.log2()).collect();
    let (slope, slope_stderr) = fit_slope(&xs, &ys);
    Ok(RefinementReport {
        levels: levels.to_vec(),
        rows,
        rms_vs_finest,
        rms_consecutive,
        slope,
        slope_stderr,
        overflowed,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `max |δy_{st} − Σ V₀(y_k)Δ − V(y_s)x¹_{st} − Σ_{ij} ∂V_iV_j(y_s) x²_{st}[j][i]| / (t−s)^μ` over `pairs`.
pub fn davie_defect<S: Scalar>(
    y: &GridPath<S>,
    lift: &RoughLift<S>,
    cfg: &SchemeConfig<S>,
    mu: f64,
    pairs: &[(usize, usize)],
) -> Result<f64> {
    if !(mu > 1.0) {
        return Err(domain("defect exponent must exceed 1"));
    }
    if !y.grid().same_as(lift.base().grid()) || lift.dims() != cfg.field.d() {
        return Err(domain("solution and lift must share a grid and the driver dimension"));
    }
    let field = &cfg.field;
    let (m, d) = (field.m(), field.d());
    let delta = S::of(y.grid().delta());
    let mut worst = 0.0f64;
    for &(s, t) in pairs {
        if !(s < t && t <= y.grid().steps()) {
            return Err(domain(format!("pair ({s}, {t}) out of order")));
        }
        let ys = y.at(s);
        let mut r = y.increment(s, t);
        if field.drift().is_some() {
            for k in s..t {
                let v0 = field.eval_drift(y.at(k)).expect("drift present");
                for (ri, v) in r.iter_mut().zip(v0) {
                    *ri -= v * delta;
                }
            }
        }
        let dx = lift.base().increment(s, t);
        let x2 = lift.level2(s, t);
        for j in 0..d {
            let col = field.eval_column(j, ys);
            for k in 0..m {
                r[k] -= col[k] * dx[j];
            }
        }
        for i in 0..d {
            for j in 0..d {
                let dvv = field.dv_v(i, j, ys);
                for k in 0..m {
                    r[k] -= dvv[k] * x2[j * d + i];
                }
            }
        }
        let dt = (y.grid().time(t) - y.grid().time(s)).powf(mu);
        let defect = r.iter().fold(0.0f64, |a, v| a.max(v.as_f64().abs()));
        worst = worst.max(defect / dt);
    }
    Ok(worst)
}
