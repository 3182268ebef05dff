//! Experiment configuration: TOML sections, environment overrides, validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::grid_gaussian::HurstParams;
use crate::trees::MAX_DEPTH;

/// Prefix of environment overrides: `FBM_EULER_<SECTION>__<KEY>=value`.
pub const ENV_PREFIX: &str = "FBM_EULER_";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Converge,
    MalliavinCheck,
    BoundCheck,
    TreeDump,
    LedgerDump,
}

impl ExperimentKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "simulate" => Self::Simulate,
            "converge" => Self::Converge,
            "malliavin-check" => Self::MalliavinCheck,
            "bound-check" => Self::BoundCheck,
            "tree-dump" => Self::TreeDump,
            "ledger-dump" => Self::LedgerDump,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub seeds: usize,
    pub threads: Option<usize>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub hurst: f64,
    pub p: Option<f64>,
    pub horizon: f64,
    pub steps: usize,
    pub bank: String,
    pub m: Option<usize>,
    pub d: Option<usize>,
    pub depth: usize,
    pub drift: bool,
    pub initial: Option<Vec<f64>>,
}

impl ModelSection {
    pub fn hurst_params(&self) -> Result<HurstParams> {
        match self.p {
            Some(p) => HurstParams::new(self.hurst, p),
            None => HurstParams::with_default_p(self.hurst),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeSection {
    pub levels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MalliavinSection {
    pub epsilon: f64,
    /// Cameron–Martin anchors as fractions of the horizon.
    pub anchors: Vec<f64>,
    pub orders: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsSection {
    pub k_config: f64,
    /// Grid sizes of the refinement-coupled sweep.
    pub levels: Vec<usize>,
    pub orders: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub converge: ConvergeSection,
    pub malliavin: MalliavinSection,
    pub bounds: BoundsSection,
}

fn bad(field: &str, reason: impl Into<String>) -> Error {
    Error::Config { field: field.into(), reason: reason.into() }
}

struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, name: &'static str) -> Result<Self> {
        match root.get(name) {
            None => Ok(Self { name, table: None }),
            Some(Value::Table(t)) => Ok(Self { name, table: Some(t) }),
            Some(_) => Err(bad(name, "must be a table")),
        }
    }

    fn field(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn raw(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(bad(&self.field(key), "expected a number")),
        }
    }

    fn uint(&self, key: &str) -> Result<Option<u64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
            Some(_) => Err(bad(&self.field(key), "expected a non-negative integer")),
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(bad(&self.field(key), "expected a string")),
        }
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(bad(&self.field(key), "expected true or false")),
        }
    }

    fn floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(f) => Ok(*f),
                    Value::Integer(i) => Ok(*i as f64),
                    _ => Err(bad(&self.field(key), "expected an array of numbers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(bad(&self.field(key), "expected an array of numbers")),
        }
    }

    fn uints(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                    _ => Err(bad(&self.field(key), "expected an array of non-negative integers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(bad(&self.field(key), "expected an array of non-negative integers")),
        }
    }

    fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        if let Some(t) = self.table {
            if let Some(k) = t.keys().find(|k| !known.contains(&k.as_str())) {
                return Err(bad(&self.field(k), "unknown key"));
            }
        }
        Ok(())
    }
}

/// Applies `FBM_EULER_<SECTION>__<KEY>` overrides; values parse as TOML, falling back to strings.
pub fn apply_env_overrides(root: &mut Table, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
        let Some((section, key)) = rest.split_once("__") else {
            return Err(bad(&name, "override must look like FBM_EULER_<SECTION>__<KEY>"));
        };
        let (section, key) = (section.to_ascii_lowercase(), key.to_ascii_lowercase());
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or(Value::String(raw));
        let entry = root.entry(section.clone()).or_insert_with(|| Value::Table(Table::new()));
        match entry {
            Value::Table(t) => {
                t.insert(key, value);
            }
            _ => return Err(bad(&section, "must be a table")),
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text without environment overrides.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| bad("<file>", e.message().to_string()))?;
        Self::from_table(&root)
    }

    /// Reads a config file and applies the process environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("<file>", format!("{}: {e}", path.display())))?;
        let mut root: Table = text.parse().map_err(|e: toml::de::Error| bad("<file>", e.message().to_string()))?;
        apply_env_overrides(&mut root, std::env::vars())?;
        Self::from_table(&root)
    }

    pub fn from_table(root: &Table) -> Result<Self> {
        if let Some(k) = root.keys().find(|k| !["run", "model", "converge", "malliavin", "bounds"].contains(&k.as_str())) {
            return Err(bad(k, "unknown section"));
        }
        let run = Section::new(root, "run")?;
        run.reject_unknown(&["kind", "seed", "seeds", "threads", "out"])?;
        let kind_s = run.string("kind")?.ok_or_else(|| bad("run.kind", "missing"))?;
        let kind = ExperimentKind::parse(&kind_s).ok_or_else(|| {
            bad("run.kind", format!("`{kind_s}` is not one of simulate, converge, malliavin-check, bound-check, tree-dump, ledger-dump"))
        })?;
        let threads = run.uint("threads")?.map(|t| t as usize);
        let run_section = RunSection {
            kind,
            seed: run.uint("seed")?.unwrap_or(1),
            seeds: run.uint("seeds")?.unwrap_or(1) as usize,
            threads,
            out: PathBuf::from(run.string("out")?.unwrap_or_else(|| "out".into())),
        };

        let model = Section::new(root, "model")?;
        model.reject_unknown(&["hurst", "p", "horizon", "steps", "bank", "m", "d", "depth", "drift", "initial"])?;
        let model_section = ModelSection {
            hurst: model.float("hurst")?.unwrap_or(0.4),
            p: model.float("p")?,
            horizon: model.float("horizon")?.unwrap_or(1.0),
            steps: model.uint("steps")?.unwrap_or(64) as usize,
            bank: model.string("bank")?.unwrap_or_else(|| "sincos-m2d2".into()),
            m: model.uint("m")?.map(|v| v as usize),
            d: model.uint("d")?.map(|v| v as usize),
            depth: model.uint("depth")?.unwrap_or(2) as usize,
            drift: model.boolean("drift")?.unwrap_or(false),
            initial: model.floats("initial")?,
        };

        let conv = Section::new(root, "converge")?;
        conv.reject_unknown(&["levels"])?;
        let converge = ConvergeSection { levels: conv.uints("levels")?.unwrap_or_else(|| vec![128, 256, 512, 1024]) };

        let mall = Section::new(root, "malliavin")?;
        mall.reject_unknown(&["epsilon", "anchors", "orders"])?;
        let malliavin = MalliavinSection {
            epsilon: mall.float("epsilon")?.unwrap_or(1e-4),
            anchors: mall.floats("anchors")?.unwrap_or_else(|| vec![0.25, 0.5, 1.0]),
            orders: mall.uints("orders")?.unwrap_or_else(|| vec![1, 2]),
        };

        let bnd = Section::new(root, "bounds")?;
        bnd.reject_unknown(&["k_config", "levels", "orders"])?;
        let bounds = BoundsSection {
            k_config: bnd.float("k_config")?.unwrap_or(1.0),
            levels: bnd.uints("levels")?.unwrap_or_else(|| vec![64, 128, 256]),
            orders: bnd.uints("orders")?.unwrap_or_else(|| vec![1, 2]),
        };
        let cfg = Self { run: run_section, model: model_section, converge, malliavin, bounds };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every module precondition, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if self.run.seeds == 0 {
            return Err(bad("run.seeds", "must be at least 1"));
        }
        if self.run.threads == Some(0) {
            return Err(bad("run.threads", "must be at least 1"));
        }
        if !(m.hurst > 1.0 / 3.0 && m.hurst < 0.5) {
            return Err(bad("model.hurst", "must lie in (1/3, 1/2)"));
        }
        if let Some(p) = m.p {
            if !(p * m.hurst > 1.0) {
                return Err(bad("model.p", "must satisfy p·H > 1"));
            }
        }
        if !(m.horizon > 0.0 && m.horizon.is_finite()) {
            return Err(bad("model.horizon", "must be positive"));
        }
        if !(1..=8192).contains(&m.steps) {
            return Err(bad("model.steps", "must lie in 1..=8192"));
        }
        if m.depth > MAX_DEPTH - 2 {
            return Err(bad("model.depth", format!("must be at most {}", MAX_DEPTH - 2)));
        }
        if let (Some(init), Some(mm)) = (&m.initial, m.m) {
            if init.len() != mm {
                return Err(bad("model.initial", format!("needs {mm} entries")));
            }
        }
        let lv = &self.converge.levels;
        if self.run.kind == ExperimentKind::Converge {
            if lv.len() < 2 {
                return Err(bad("converge.levels", "needs at least two levels"));
            }
            if lv.windows(2).any(|w| w[0] == 0 || w[1] <= w[0] || w[1] % w[0] != 0) {
                return Err(bad("converge.levels", "levels must be increasing and nested"));
            }
        }
        let ma = &self.malliavin;
        if !(ma.epsilon > 0.0) {
            return Err(bad("malliavin.epsilon", "must be positive"));
        }
        if ma.anchors.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(bad("malliavin.anchors", "fractions of the horizon must lie in [0, 1]"));
        }
        if ma.orders.iter().any(|o| !(1..=2).contains(o)) {
            return Err(bad("malliavin.orders", "orders must be 1 or 2"));
        }
        let b = &self.bounds;
        if !(b.k_config > 0.0) {
            return Err(bad("bounds.k_config", "must be positive"));
        }
        if self.run.kind == ExperimentKind::BoundCheck {
            if b.levels.is_empty() || b.levels.windows(2).any(|w| w[1] <= w[0] || w[1] % w[0] != 0) || b.levels[0] == 0 {
                return Err(bad("bounds.levels", "levels must be non-empty, increasing and nested"));
            }
            if b.orders.iter().any(|&l| l > m.depth) {
                return Err(bad("bounds.orders", "orders cannot exceed model.depth"));
            }
        }
        m.hurst_params().map_err(|e| bad("model.hurst", e.to_string()))?;
        Ok(())
    }
}
