//! Closed-form vector-field families used by experiments.

use std::sync::Arc;

use crate::error::{domain, Result};
use crate::tree_calculus::{MapRef, Profile, RidgeMap, VectorField};

/// Ridge parameters `(a, b, c, d)` of the two-dimensional sin/cos table, indexed `[i][j]`.
const SINCOS_M2D2: [[(f64, f64, [f64; 2], f64); 2]; 2] = [
    [(1.0, 0.5, [0.8, 0.3], 0.0), (0.3, 0.4, [-0.2, 0.9], 0.5)],
    [(-0.2, 0.6, [0.5, -0.7], 1.0), (0.9, 0.3, [0.4, 0.6], -0.4)],
];

fn ridge(a: f64, b: f64, c: Vec<f64>, d: f64, profile: Profile) -> Result<MapRef<f64>> {
    Ok(Arc::new(RidgeMap::new(a, b, c, d, profile)?))
}

fn parse_sincos(id: &str) -> Option<(usize, usize)> {
    let rest = id.strip_prefix("sincos-m")?;
    let (m, d) = rest.split_once('d')?;
    Some((m.parse().ok()?, d.parse().ok()?))
}

/// Resolves a bank id to an `m × d` field. `m`, `d` default to 2 and must
/// agree with the id when it fixes them (`sincos-m{m}d{d}`).
pub fn vector_field_bank(id: &str, m: Option<usize>, d: Option<usize>, drift: bool) -> Result<VectorField<f64>> {
    let (m, d) = match parse_sincos(id) {
        Some((im, id_d)) => {
            if m.is_some_and(|v| v != im) || d.is_some_and(|v| v != id_d) {
                return Err(domain(format!("bank `{id}` fixes m = {im}, d = {id_d}")));
            }
            (im, id_d)
        }
        None => (m.unwrap_or(2), d.unwrap_or(2)),
    };
    if m == 0 || d == 0 || m > 8 || d > 8 {
        return Err(domain(format!("bank dimensions m = {m}, d = {d} outside 1..=8")));
    }
    let unit = |k: usize, scale: f64| -> Vec<f64> { (0..m).map(|q| if q == k { scale } else { 0.0 }).collect() };
    let mut entries: Vec<Vec<MapRef<f64>>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            let map: MapRef<f64> = match id {
                "const" => Arc::new(RidgeMap::constant(if i == j { 1.0 } else { 0.3 }, m)),
                "linear-clipped" => {
                    let a = if i == j { 0.5 } else { 0.1 };
                    ridge(a, 0.8, unit((i + j) % m, 1.0), 0.1 * j as f64, Profile::Tanh)?
                }
                _ if m == 2 && d == 2 && parse_sincos(id).is_some() => {
                    let (a, b, c, dd) = SINCOS_M2D2[i][j];
                    ridge(a, b, c.to_vec(), dd, Profile::Sin)?
                }
                _ if parse_sincos(id).is_some() => {
                    let a = if i == j { 1.0 } else { 0.2 + 0.1 * ((i + 2 * j) % 3) as f64 };
                    let b = if (i + j) % 2 == 0 { 0.5 } else { -0.4 };
                    let c = (0..m).map(|k| 0.8 * (1.0 + (i + 2 * j + 3 * k) as f64).cos()).collect();
                    ridge(a, b, c, 0.3 * (i as f64 - j as f64), Profile::Sin)?
                }
                _ => return Err(domain(format!("unknown vector field bank `{id}`"))),
            };
            row.push(map);
        }
        entries.push(row);
    }
    let field = VectorField::new(entries)?;
    if !drift {
        return Ok(field);
    }
    let v0 = (0..m)
        .map(|i| ridge(0.0, 0.1, unit(i, 1.0), std::f64::consts::FRAC_PI_2, Profile::Sin))
        .collect::<Result<Vec<_>>>()?;
    field.with_drift(v0)
}
