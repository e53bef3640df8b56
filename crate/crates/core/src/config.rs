//! Flat `key = value` configuration files with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::{CompareFamily, CompareGrids, ExperimentConfig, InitKind, SweepParam};
use crate::optimizers::OptimizerKind;
use crate::step_rules::RuleKind;

/// Every recognised key, in the order the effective config is rendered.
pub const KEYS: &[&str] = &[
    "loss",
    "n",
    "d",
    "seed",
    "binarize",
    "separable_margin",
    "instance",
    "reference",
    "optimizer",
    "rule",
    "M",
    "c",
    "gamma_b",
    "tau",
    "gamma0",
    "beta",
    "ema_floor",
    "gamma",
    "lambda",
    "epochs",
    "batch_size",
    "repeats",
    "base_seed",
    "checkpoints",
    "init",
    "init_scale",
    "oracle_iterations",
    "sweep_param",
    "sweep_values",
    "compare",
    "compare_M",
    "compare_gamma",
    "compare_c",
    "compare_lambda",
];

/// Fully resolved settings shared by all commands.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub experiment: ExperimentConfig,
    /// Reference solution file; computed on the fly when absent.
    pub reference: Option<PathBuf>,
    pub sweep_param: SweepParam,
    pub sweep_values: Vec<f64>,
    pub compare: CompareFamily,
    pub grids: CompareGrids,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            experiment: ExperimentConfig::default(),
            reference: None,
            sweep_param: SweepParam::Safeguard,
            sweep_values: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            compare: CompareFamily::Ssm,
            grids: CompareGrids::default(),
        }
    }
}

/// Ordered raw key/value pairs before interpretation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut raw = RawConfig::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, idx + 1, "expected `key = value`"))?;
            raw.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::InvalidConfig(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override string.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Interprets the pairs on top of the defaults and validates the result.
    pub fn resolve(&self) -> Result<Settings> {
        let mut s = Settings::default();
        let e = &mut s.experiment;
        if let Some(v) = self.get("loss") {
            e.instance.loss = parse(v, "loss")?;
        }
        e.init = InitKind::default_for(e.instance.loss);
        for (key, v) in &self.values {
            let v = v.as_str();
            match key.as_str() {
                "loss" => {}
                "n" => e.instance.n = parse(v, key)?,
                "d" => e.instance.d = parse(v, key)?,
                "seed" => e.instance.seed = parse(v, key)?,
                "binarize" => e.instance.binarize = parse(v, key)?,
                "separable_margin" => {
                    e.instance.separable_margin = opt_value(v).map(|v| parse(v, key)).transpose()?
                }
                "instance" => e.instance.path = opt_value(v).map(PathBuf::from),
                "reference" => s.reference = opt_value(v).map(PathBuf::from),
                "optimizer" => e.optimizer = parse(v, key)?,
                "rule" => e.rule.kind = parse(v, key)?,
                "M" => e.rule.safeguard = parse(v, key)?,
                "c" => e.rule.c = parse(v, key)?,
                "gamma_b" => e.rule.gamma_b = parse(v, key)?,
                "tau" => e.rule.tau = parse(v, key)?,
                "gamma0" => e.rule.gamma0 = parse(v, key)?,
                "beta" => e.rule.beta = parse(v, key)?,
                "ema_floor" => e.rule.ema_floor = parse(v, key)?,
                "gamma" => e.rule.gamma_const = parse(v, key)?,
                "lambda" => e.lambda = parse(v, key)?,
                "epochs" => e.epochs = parse(v, key)?,
                "batch_size" => e.batch_size = parse(v, key)?,
                "repeats" => e.repeats = parse(v, key)?,
                "base_seed" => e.base_seed = parse(v, key)?,
                "checkpoints" => e.checkpoints = parse_list(v, key)?,
                "init" => {}
                "init_scale" => {}
                "oracle_iterations" => e.oracle_iterations = parse(v, key)?,
                "sweep_param" => s.sweep_param = parse(v, key)?,
                "sweep_values" => s.sweep_values = parse_list(v, key)?,
                "compare" => s.compare = parse(v, key)?,
                "compare_M" => s.grids.safeguards = parse_list(v, key)?,
                "compare_gamma" => s.grids.constant_steps = parse_list(v, key)?,
                "compare_c" => s.grids.polyak_c = parse_list(v, key)?,
                "compare_lambda" => s.grids.momentum = parse_list(v, key)?,
                other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
            }
        }
        let scale: f64 = match self.get("init_scale") {
            Some(v) => parse(v, "init_scale")?,
            None => 1.0,
        };
        match self.get("init") {
            Some("zeros") => e.init = InitKind::Zeros,
            Some("gaussian") => e.init = InitKind::Gaussian { scale },
            Some(other) => {
                return Err(Error::InvalidConfig(format!(
                    "init must be zeros or gaussian, got `{other}`"
                )))
            }
            None => {
                if let InitKind::Gaussian { .. } = e.init {
                    e.init = InitKind::Gaussian { scale };
                }
            }
        }
        if self.get("optimizer").is_none() {
            e.optimizer = default_optimizer(e.rule.kind);
        }
        if e.instance.path.is_none() {
            e.rule.batch_frac = e.batch_size as f64 / e.instance.n.max(1) as f64;
        }
        e.validate()?;
        if s.sweep_values.is_empty() {
            return Err(Error::InvalidConfig("sweep_values must not be empty".into()));
        }
        Ok(s)
    }
}

fn default_optimizer(rule: RuleKind) -> OptimizerKind {
    match rule {
        RuleKind::ImaSpsSafe | RuleKind::ImaSps => OptimizerKind::Ima,
        RuleKind::ClippedAdaptive => OptimizerKind::ClippedSsm,
        _ => OptimizerKind::Ssm,
    }
}

fn opt_value(v: &str) -> Option<&str> {
    (!v.is_empty() && v != "none").then_some(v)
}

fn parse<T: FromStr>(v: &str, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| Error::InvalidConfig(format!("bad value `{v}` for `{key}`: {e}")))
}

fn parse_list<T: FromStr>(v: &str, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(s, key))
        .collect()
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_value(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "none".into())
}

impl Settings {
    /// The effective configuration as `key = value` lines, in [`KEYS`] order.
    pub fn render(&self) -> String {
        let e = &self.experiment;
        let r = &e.rule;
        let (init, scale) = match e.init {
            InitKind::Zeros => ("zeros", 1.0),
            InitKind::Gaussian { scale } => ("gaussian", scale),
        };
        let sweep_param = match self.sweep_param {
            SweepParam::Safeguard => "M",
            SweepParam::GammaConst => "gamma_const",
            SweepParam::C => "c",
            SweepParam::GammaB => "gamma_b",
            SweepParam::Beta => "beta",
            SweepParam::Lambda => "lambda",
        };
        let compare = match self.compare {
            CompareFamily::Ssm => "ssm",
            CompareFamily::Ima => "ima",
        };
        let values: Vec<String> = vec![
            e.instance.loss.to_string(),
            e.instance.n.to_string(),
            e.instance.d.to_string(),
            e.instance.seed.to_string(),
            e.instance.binarize.to_string(),
            e.instance
                .separable_margin
                .map(|m| m.to_string())
                .unwrap_or_else(|| "none".into()),
            path_value(&e.instance.path),
            path_value(&self.reference),
            e.optimizer.to_string(),
            r.kind.to_string(),
            r.safeguard.to_string(),
            r.c.to_string(),
            r.gamma_b.to_string(),
            r.tau.to_string(),
            r.gamma0.to_string(),
            r.beta.to_string(),
            r.ema_floor.to_string(),
            r.gamma_const.to_string(),
            e.lambda.to_string(),
            e.epochs.to_string(),
            e.batch_size.to_string(),
            e.repeats.to_string(),
            e.base_seed.to_string(),
            join(&e.checkpoints),
            init.to_string(),
            scale.to_string(),
            e.oracle_iterations.to_string(),
            sweep_param.to_string(),
            join(&self.sweep_values),
            compare.to_string(),
            join(&self.grids.safeguards),
            join(&self.grids.constant_steps),
            join(&self.grids.polyak_c),
            join(&self.grids.momentum),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }
}
