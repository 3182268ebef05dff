//! Uniform grids, grid paths, exact fBm sampling and Cameron–Martin directions.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{domain, Error, Result};
use crate::scalar::Scalar;

/// Uniform grid `t_k = k T / n` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    horizon: f64,
    steps: usize,
}

impl Grid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(domain(format!("grid horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(domain("grid needs at least one step"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn points(&self) -> usize {
        self.steps + 1
    }

    pub fn delta(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.delta()
        }
    }

    /// Index `k` with `t ∈ (t_k, t_{k+1}]`.
    pub fn step_containing(&self, t: f64) -> Result<usize> {
        if !(t > 0.0 && t <= self.horizon) {
            return Err(domain(format!("time {t} outside (0, {}]", self.horizon)));
        }
        let k = (t / self.delta()).ceil() as usize;
        Ok(k.clamp(1, self.steps) - 1)
    }

    /// Coarser grid with `steps / factor` steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(domain(format!("{} steps not divisible by {factor}", self.steps)));
        }
        Grid::new(self.horizon, self.steps / factor)
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.steps == other.steps && self.horizon == other.horizon
    }
}

/// Hurst index and variation exponent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HurstParams {
    h: f64,
    p: f64,
}

impl HurstParams {
    pub fn new(h: f64, p: f64) -> Result<Self> {
        if !(h > 1.0 / 3.0 && h < 0.5) {
            return Err(domain(format!("Hurst index {h} outside (1/3, 1/2)")));
        }
        if !(p * h > 1.0) {
            return Err(domain(format!("variation exponent {p} must exceed 1/H = {}", 1.0 / h)));
        }
        Ok(Self { h, p })
    }

    /// Uses `p = (1/H + 3) / 2`, which keeps `p H > 1` and `3/p > 1`.
    pub fn with_default_p(h: f64) -> Result<Self> {
        Self::new(h, 0.5 * (1.0 / h + 3.0))
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `Δ^{2H}` for the given grid.
    pub fn delta_2h(&self, grid: &Grid) -> f64 {
        grid.delta().powf(2.0 * self.h)
    }
}

/// Vector-valued path sampled at every grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPath<S> {
    grid: Grid,
    dims: usize,
    values: Vec<S>,
}

impl<S: Scalar> GridPath<S> {
    pub fn new(grid: Grid, dims: usize, values: Vec<S>) -> Result<Self> {
        if dims == 0 {
            return Err(domain("path needs at least one coordinate"));
        }
        if values.len() != grid.points() * dims {
            return Err(domain(format!(
                "expected {} values, got {}",
                grid.points() * dims,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(domain(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { grid, dims, values })
    }

    pub fn zeros(grid: Grid, dims: usize) -> Self {
        Self { grid, dims, values: vec![S::zero(); grid.points() * dims] }
    }

    pub fn from_fn(grid: Grid, dims: usize, mut f: impl FnMut(usize, usize) -> S) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.points() * dims);
        for k in 0..grid.points() {
            for i in 0..dims {
                values.push(f(k, i));
            }
        }
        Self::new(grid, dims, values)
    }

    pub(crate) fn from_raw(grid: Grid, dims: usize, values: Vec<S>) -> Self {
        debug_assert_eq!(values.len(), grid.points() * dims);
        Self { grid, dims, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn at(&self, k: usize) -> &[S] {
        &self.values[k * self.dims..(k + 1) * self.dims]
    }

    pub fn coord(&self, k: usize, i: usize) -> S {
        self.values[k * self.dims + i]
    }

    pub fn increment(&self, j: usize, k: usize) -> Vec<S> {
        let (a, b) = (self.at(j), self.at(k));
        b.iter().zip(a).map(|(&y, &x)| y - x).collect()
    }

    /// Entrywise max-abs of the increment between two grid points.
    pub fn increment_norm(&self, j: usize, k: usize) -> S {
        let (a, b) = (self.at(j), self.at(k));
        b.iter().zip(a).fold(S::zero(), |m, (&y, &x)| m.max((y - x).abs()))
    }

    /// Values at every `factor`-th point: the path on the coarser grid.
    pub fn restrict(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        let mut values = Vec::with_capacity(grid.points() * self.dims);
        for k in 0..grid.points() {
            values.extend_from_slice(self.at(k * factor));
        }
        Ok(Self::from_raw(grid, self.dims, values))
    }

    /// `self + eps * other`.
    pub fn axpy(&self, eps: S, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a + eps * b).collect();
        Ok(Self::from_raw(self.grid, self.dims, values))
    }

    /// Coordinates of `self` followed by those of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if !self.grid.same_as(&other.grid) {
            return Err(domain("paths live on different grids"));
        }
        let dims = self.dims + other.dims;
        let mut values = Vec::with_capacity(self.grid.points() * dims);
        for k in 0..self.grid.points() {
            values.extend_from_slice(self.at(k));
            values.extend_from_slice(other.at(k));
        }
        Ok(Self::from_raw(self.grid, dims, values))
    }

    /// Coordinates `range` as a new path.
    pub fn select(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.dims || range.is_empty() {
            return Err(domain(format!("coordinate range {range:?} invalid for {} dims", self.dims)));
        }
        let dims = range.len();
        let mut values = Vec::with_capacity(self.grid.points() * dims);
        for k in 0..self.grid.points() {
            values.extend_from_slice(&self.at(k)[range.clone()]);
        }
        Ok(Self::from_raw(self.grid, dims, values))
    }

    /// Multi-coordinate path `weights[j] * scalar` built from a one-dimensional path.
    pub fn spread(scalar: &Self, weights: &[S]) -> Result<Self> {
        if scalar.dims != 1 {
            return Err(domain("spread expects a one-dimensional path"));
        }
        let dims = weights.len();
        let mut values = Vec::with_capacity(scalar.grid.points() * dims);
        for k in 0..scalar.grid.points() {
            let v = scalar.values[k];
            values.extend(weights.iter().map(|&w| w * v));
        }
        GridPath::new(scalar.grid, dims, values)
    }

    pub fn cast<T: Scalar>(&self) -> GridPath<T> {
        GridPath {
            grid: self.grid,
            dims: self.dims,
            values: self.values.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if !self.grid.same_as(&other.grid) || self.dims != other.dims {
            return Err(domain("paths differ in grid or dimension"));
        }
        Ok(())
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(domain(format!("time {t} must be non-negative")));
    }
    Ok(())
}

fn check_hurst(h: f64) -> Result<()> {
    if !(h > 0.0 && h < 1.0) {
        return Err(domain(format!("Hurst index {h} outside (0, 1)")));
    }
    Ok(())
}

/// `R(s,t) = ½(s^{2H} + t^{2H} − |t−s|^{2H})`.
pub fn fbm_covariance(s: f64, t: f64, h: f64) -> Result<f64> {
    check_time(s)?;
    check_time(t)?;
    check_hurst(h)?;
    let e = 2.0 * h;
    Ok(0.5 * (s.powf(e) + t.powf(e) - (t - s).abs().powf(e)))
}

/// `R(v,t) − R(v,s) − R(u,t) + R(u,s)`, the covariance of `δx_{uv}` and `δx_{st}`.
///
/// Evaluated in the cancelled form `½(|t−u|^{2H} + |s−v|^{2H} − |t−v|^{2H} − |s−u|^{2H})`.
pub fn inner_product_rect(u: f64, v: f64, s: f64, t: f64, h: f64) -> Result<f64> {
    for x in [u, v, s, t] {
        check_time(x)?;
    }
    check_hurst(h)?;
    if u > v || s > t {
        return Err(domain(format!("intervals [{u},{v}] and [{s},{t}] must be ordered")));
    }
    let e = 2.0 * h;
    let g = |a: f64| a.abs().powf(e);
    Ok(0.5 * (g(t - u) + g(s - v) - g(t - v) - g(s - u)))
}

/// Packed lower-triangular Cholesky factor; row `i` holds `i + 1` entries.
#[derive(Debug)]
pub struct CholeskyFactor {
    n: usize,
    data: Vec<f64>,
}

impl CholeskyFactor {
    /// Factorizes the symmetric matrix given by `entry(i, j)` for `j ≤ i`.
    pub fn factor(n: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = vec![0.0; n * (n + 1) / 2];
        for i in 0..n {
            let oi = i * (i + 1) / 2;
            for j in 0..=i {
                let oj = j * (j + 1) / 2;
                let (head, tail) = data.split_at_mut(oi);
                let row_i = &tail[..=i];
                let row_j: &[f64] = if j == i { &row_i[..j] } else { &head[oj..oj + j] };
                let s = entry(i, j) - dot(&row_i[..j], &row_j[..j]);
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::Factorization { pivot: i, value: s });
                    }
                    tail[i] = s.sqrt();
                } else {
                    tail[j] = s / head[oj + j];
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let o = i * (i + 1) / 2;
        &self.data[o..=o + i]
    }

    /// `L z`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), &z[..=i])).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]);
    for l in chunks * 8..a.len() {
        s += a[l] * b[l];
    }
    s
}

type FactorSlot = Arc<OnceLock<std::result::Result<Arc<CholeskyFactor>, (usize, f64)>>>;

fn factor_cache() -> &'static Mutex<HashMap<(usize, u64), FactorSlot>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), FactorSlot>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cholesky factor of the unit-spacing increment covariance for `n` steps.
///
/// Increments on a grid with spacing `Δ` are `Δ^H` times those on the unit grid,
/// so one factor serves every horizon.
pub fn increment_factor(n: usize, h: f64) -> Result<Arc<CholeskyFactor>> {
    check_hurst(h)?;
    let slot = {
        let mut map = factor_cache().lock().unwrap_or_else(|e| e.into_inner());
        map.entry((n, h.to_bits())).or_default().clone()
    };
    let res = slot.get_or_init(|| {
        let e = 2.0 * h;
        let gamma: Vec<f64> = (0..n)
            .map(|k| {
                let k = k as f64;
                0.5 * ((k + 1.0).powf(e) + (k - 1.0).abs().powf(e) - 2.0 * k.powf(e))
            })
            .collect();
        CholeskyFactor::factor(n, |i, j| gamma[i - j]).map(Arc::new).map_err(|err| match err {
            Error::Factorization { pivot, value } => (pivot, value),
            _ => (0, f64::NAN),
        })
    });
    res.clone().map_err(|(pivot, value)| Error::Factorization { pivot, value })
}

/// Seed of the independent copy `b` paired with the driver seeded by `seed`.
pub fn derived_seed(seed: u64) -> u64 {
    let mut z = seed ^ 0xA076_1D64_78BD_642F;
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal draws for coordinate `coord`: ChaCha8 keyed by `seed`, stream `coord`.
pub fn normal_stream(seed: u64, coord: usize, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(coord as u64);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Exact fBm sample with independent coordinates; coordinate `j` uses RNG stream `j`.
pub fn sample_fbm(grid: &Grid, hurst: &HurstParams, dims: usize, seed: u64) -> Result<GridPath<f64>> {
    sample_fbm_h(grid, hurst.h(), dims, seed)
}

/// [`sample_fbm`] for any `H ∈ (0, 1)`.
pub fn sample_fbm_h(grid: &Grid, h: f64, dims: usize, seed: u64) -> Result<GridPath<f64>> {
    if dims == 0 {
        return Err(domain("fBm needs at least one coordinate"));
    }
    let n = grid.steps();
    let factor = increment_factor(n, h)?;
    let scale = grid.delta().powf(h);
    let mut values = vec![0.0; grid.points() * dims];
    for j in 0..dims {
        let z = normal_stream(seed, j, n);
        let inc = factor.apply(&z);
        let mut acc = 0.0;
        for (k, d) in inc.iter().enumerate() {
            acc += scale * d;
            values[(k + 1) * dims + j] = acc;
        }
    }
    Ok(GridPath::from_raw(*grid, dims, values))
}

/// The scalar path `s ↦ R(anchor, s)` on the grid.
pub fn cameron_martin_direction(anchor: f64, grid: &Grid, h: f64) -> Result<GridPath<f64>> {
    if !(anchor >= 0.0 && anchor <= grid.horizon()) {
        return Err(domain(format!("anchor {anchor} outside [0, {}]", grid.horizon())));
    }
    let mut values = Vec::with_capacity(grid.points());
    for k in 0..grid.points() {
        values.push(fbm_covariance(anchor, grid.time(k), h)?);
    }
    GridPath::new(*grid, 1, values)
}
