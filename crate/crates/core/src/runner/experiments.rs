//! Experiment bodies: each returns its output files and headline summary.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::bounds::{bound_check, build_ledger, greedy_partition, BoundDiagnostics, PathBundle};
use crate::error::{Error, Result};
use crate::grid_gaussian::{cameron_martin_direction, derived_seed, sample_fbm, Grid, GridPath};
use crate::rough_lift::Control;
use crate::scheme::{coupled_refinement_errors, euler_run, SchemeConfig};
use crate::trees::tree_level;
use crate::variational::{directional_derivative_run, fd_oracle, XiCoefficients};

use super::bank::vector_field_bank;
use super::config::{ExperimentConfig, ExperimentKind};

/// Files produced by one experiment plus its summary.
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Value,
}

/// Float formatting with 17 significant digits.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn scheme_config(cfg: &ExperimentConfig, steps: usize) -> Result<SchemeConfig<f64>> {
    let m = &cfg.model;
    let field = vector_field_bank(&m.bank, m.m, m.d, m.drift)
        .map_err(|e| Error::Config { field: "model.bank".into(), reason: e.to_string() })?;
    let initial = match &m.initial {
        Some(v) if v.len() != field.m() => {
            return Err(Error::Config { field: "model.initial".into(), reason: format!("needs {} entries", field.m()) })
        }
        Some(v) => v.clone(),
        None => vec![0.0; field.m()],
    };
    let grid = Grid::new(m.horizon, steps)?;
    SchemeConfig::new(Arc::new(field), initial, m.hurst_params()?, grid)
}

pub fn run_kind(cfg: &ExperimentConfig) -> Result<Artifacts> {
    match cfg.run.kind {
        ExperimentKind::Simulate => simulate(cfg),
        ExperimentKind::Converge => converge(cfg),
        ExperimentKind::MalliavinCheck => malliavin_check(cfg),
        ExperimentKind::BoundCheck => bound_sweep(cfg),
        ExperimentKind::TreeDump => {
            let text = tree_dump(cfg.model.depth)?;
            let count = text.lines().count();
            Ok(Artifacts {
                files: vec![("tree.jsonl".into(), text.into_bytes())],
                summary: json!({ "depth": cfg.model.depth, "branches": count }),
            })
        }
        ExperimentKind::LedgerDump => {
            let sc = scheme_config(cfg, cfg.model.steps)?;
            let ledger = build_ledger(&sc.field, cfg.model.depth, sc.hurst.p())?;
            let body = serde_json::to_vec_pretty(&ledger).map_err(|e| Error::Serialize(e.to_string()))?;
            Ok(Artifacts {
                files: vec![("ledger.json".into(), body)],
                summary: json!({ "alpha": ledger.alpha, "kmu": ledger.kmu, "p": ledger.p }),
            })
        }
    }
}

/// One JSON line per branch of depth `depth`: labels, counts, α and the coefficient.
pub fn tree_dump(depth: usize) -> Result<String> {
    let tl = tree_level(depth)?;
    let mut out = String::new();
    for ((b, st), c) in tl.branches.iter().zip(&tl.stats).zip(&tl.coefficients) {
        let line = json!({
            "labels": b.labels(),
            "ell": st.ell,
            "alpha": st.alpha,
            "coefficient": format!("{}/{}", c.numer(), c.denom()),
        });
        writeln!(out, "{line}").expect("string write");
    }
    Ok(out)
}

fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.run.seeds as u64).map(|i| cfg.run.seed + i).collect()
}

fn simulate(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let sc = scheme_config(cfg, cfg.model.steps)?;
    let runs: Vec<Result<(u64, GridPath<f64>)>> = seeds(cfg)
        .into_par_iter()
        .map(|s| {
            let x = sample_fbm(&sc.grid, &sc.hurst, sc.field.d(), s)?;
            Ok((s, euler_run(&sc, &x)?))
        })
        .collect();
    let mut csv = String::from("seed,k,t,component,value\n");
    let mut terminal = vec![0.0; sc.field.m()];
    let count = runs.len() as f64;
    for r in runs {
        let (s, y) = r?;
        for k in 0..=sc.grid.steps() {
            for (i, v) in y.at(k).iter().enumerate() {
                writeln!(csv, "{s},{k},{},{i},{}", fmt_f(sc.grid.time(k)), fmt_f(*v)).expect("string write");
            }
        }
        for (t, v) in terminal.iter_mut().zip(y.at(sc.grid.steps())) {
            *t += v / count;
        }
    }
    Ok(Artifacts {
        files: vec![("results.csv".into(), csv.into_bytes())],
        summary: json!({ "steps": sc.grid.steps(), "seeds": cfg.run.seeds, "terminal_mean": terminal }),
    })
}

fn converge(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let levels = &cfg.converge.levels;
    let sc = scheme_config(cfg, *levels.last().expect("validated"))?;
    let report = coupled_refinement_errors(&sc, levels, cfg.run.seeds, cfg.run.seed)?;
    let mut csv = String::from("seed,n,error\n");
    for (s, n, e) in &report.rows {
        writeln!(csv, "{s},{n},{}", fmt_f(*e)).expect("string write");
    }
    let h = sc.hurst.h();
    Ok(Artifacts {
        files: vec![("results.csv".into(), csv.into_bytes())],
        summary: json!({
            "H": h,
            "levels": levels,
            "seeds": cfg.run.seeds,
            "slope": report.slope,
            "stderr": report.slope_stderr,
            "rate": report.rate(),
            "expected_rate": 2.0 * h - 0.5,
            "rms_consecutive": report.rms_consecutive,
            "rms_vs_finest": report.rms_vs_finest,
            "overflowed": report.overflowed.len(),
        }),
    })
}

/// `max_t |a − b| / (1 + max_t |a|)` over all components.
pub fn relative_deviation(a: &GridPath<f64>, b: &GridPath<f64>) -> f64 {
    let scale = 1.0 + a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn malliavin_check(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let sc = scheme_config(cfg, cfg.model.steps)?;
    let d = sc.field.d();
    let orders = &cfg.malliavin.orders;
    let top = orders.iter().copied().max().unwrap_or(1);
    let rows: Vec<Result<Vec<(u64, f64, usize, f64)>>> = seeds(cfg)
        .into_par_iter()
        .map(|s| {
            let x = sample_fbm(&sc.grid, &sc.hurst, d, s)?;
            let y = euler_run(&sc, &x)?;
            let mut out = Vec::new();
            for &a in &cfg.malliavin.anchors {
                let h = cameron_martin_direction(a * sc.grid.horizon(), &sc.grid, sc.hurst.h())?;
                let dir = GridPath::spread(&h, &vec![1.0; d])?;
                let z = directional_derivative_run(top, &sc, &y, &x, &dir)?;
                for &o in orders {
                    let fd = fd_oracle(o, &sc, &x, &dir, cfg.malliavin.epsilon)?;
                    out.push((s, a, o, relative_deviation(&z[o - 1], &fd)));
                }
            }
            Ok(out)
        })
        .collect();
    let mut csv = String::from("seed,anchor,order,deviation\n");
    let mut worst = vec![0.0f64; top];
    for r in rows {
        for (s, a, o, dev) in r? {
            writeln!(csv, "{s},{},{o},{}", fmt_f(a), fmt_f(dev)).expect("string write");
            worst[o - 1] = worst[o - 1].max(dev);
        }
    }
    Ok(Artifacts {
        files: vec![("results.csv".into(), csv.into_bytes())],
        summary: json!({ "epsilon": cfg.malliavin.epsilon, "max_deviation_by_order": worst }),
    })
}

fn bound_sweep(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let levels = &cfg.bounds.levels;
    let finest = *levels.last().expect("validated");
    let fine = scheme_config(cfg, finest)?;
    let ledger = build_ledger(&fine.field, cfg.model.depth, fine.hurst.p())?;
    let d = fine.field.d();
    let depth = cfg.model.depth.max(1);
    let per_seed: Vec<Result<Vec<BoundDiagnostics>>> = seeds(cfg)
        .into_par_iter()
        .map(|s| {
            let xf = sample_fbm(&fine.grid, &fine.hurst, d, s)?;
            let bf = sample_fbm(&fine.grid, &fine.hurst, d, derived_seed(s))?;
            let mut out = Vec::new();
            for &n in levels {
                let sc = fine.with_grid(Grid::new(fine.grid.horizon(), n)?);
                let bundle = PathBundle::new(
                    sc,
                    xf.restrict(finest / n)?,
                    bf.restrict(finest / n)?,
                    depth,
                    XiCoefficients::factorial_ratio(depth)?,
                )?;
                let control = bundle.chaos.control(&bundle.cfg.hurst)?.full();
                debug_assert_eq!(control.steps(), n);
                let part = greedy_partition(&control, ledger.alpha)?;
                for &l in &cfg.bounds.orders {
                    out.push(bound_check(l, &bundle, &part, &control, cfg.bounds.k_config)?);
                }
            }
            Ok(out)
        })
        .collect();
    let mut jsonl = String::new();
    let mut csv = String::from("seed,n,L,S0,S1,S2,lhs,rhs_over_K,rho,defect_max\n");
    let mut spread: Vec<(usize, f64)> = Vec::new();
    for (s, r) in seeds(cfg).into_iter().zip(per_seed) {
        let diags = r?;
        for dg in &diags {
            writeln!(jsonl, "{}", serde_json::to_string(dg).map_err(|e| Error::Serialize(e.to_string()))?)
                .expect("string write");
            writeln!(
                csv,
                "{s},{},{},{},{},{},{},{},{},{}",
                dg.n,
                dg.l,
                dg.s0,
                dg.s1,
                dg.s2,
                fmt_f(dg.lhs),
                fmt_f(dg.rhs_over_k),
                fmt_f(dg.rho),
                fmt_f(dg.defect_max)
            )
            .expect("string write");
        }
        for &l in &cfg.bounds.orders {
            let rhos: Vec<f64> = diags.iter().filter(|g| g.l == l).map(|g| g.rho).collect();
            let (lo, hi) = rhos.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
            spread.push((l, hi / lo));
        }
    }
    let worst: Vec<Value> = cfg
        .bounds
        .orders
        .iter()
        .map(|&l| {
            let w = spread.iter().filter(|(o, _)| *o == l).map(|x| x.1).fold(0.0f64, f64::max);
            json!({ "L": l, "max_rho_spread": w })
        })
        .collect();
    Ok(Artifacts {
        files: vec![("results.csv".into(), csv.into_bytes()), ("diagnostics.jsonl".into(), jsonl.into_bytes())],
        summary: json!({ "alpha": ledger.alpha, "k2": ledger.k2, "levels": levels, "rho_spread": worst }),
    })
}
