//! Seeded experiment execution: minibatch sampling, per-epoch metrics,
//! repetition over seeds, aggregation, sweeps, and CSV output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::analysis::{CesaroAverage, ReferenceSolution};
use crate::error::{Error, Result};
use crate::linalg::norm_sq;
use crate::optimizers::{ImaState, LambdaSchedule, OptimizerKind, SsmState};
use crate::problems::{stream_rng, Dataset, LossKind, Problem, INIT_STREAM};
use crate::step_rules::{momentum_input, RuleConfig, RuleKind, RuleState, StepInput};
use rand::Rng;
use rand_distr::StandardNormal;

/// RNG stream used for per-run minibatch shuffling.
pub const SHUFFLE_STREAM: u64 = 2;

/// How to build the problem instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceSpec {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Replace Gaussian targets by their signs.
    pub binarize: bool,
    /// Build a linearly separable hinge instance with this margin instead.
    pub separable_margin: Option<f64>,
    /// Load the instance from a file instead of generating it.
    pub path: Option<PathBuf>,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec {
            n: 300,
            d: 10,
            seed: 0,
            loss: LossKind::AbsQuad,
            binarize: false,
            separable_margin: None,
            path: None,
        }
    }
}

impl InstanceSpec {
    pub fn build(&self) -> Result<Problem> {
        let (data, kind) = match &self.path {
            Some(path) => Dataset::read(path)?,
            None => {
                let mut data = match self.separable_margin {
                    Some(margin) => Dataset::generate_separable(self.n, self.d, self.seed, margin)?.0,
                    None => Dataset::generate_gaussian(self.n, self.d, self.seed)?,
                };
                if self.binarize {
                    data.binarize_targets();
                }
                (data, self.loss)
            }
        };
        Ok(Problem::new(data, kind))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitKind {
    Zeros,
    /// `scale · N(0, I)` drawn from the instance seed's init stream.
    Gaussian { scale: f64 },
}

impl InitKind {
    /// Zeros for hinge; a unit Gaussian draw for AbsQuad, whose
    /// subgradients all vanish at the origin.
    pub fn default_for(loss: LossKind) -> Self {
        match loss {
            LossKind::Hinge => InitKind::Zeros,
            LossKind::AbsQuad => InitKind::Gaussian { scale: 1.0 },
        }
    }

    pub fn point(self, d: usize, instance_seed: u64) -> Vec<f64> {
        match self {
            InitKind::Zeros => vec![0.0; d],
            InitKind::Gaussian { scale } => {
                let mut rng = stream_rng(instance_seed, INIT_STREAM);
                (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub optimizer: OptimizerKind,
    pub rule: RuleConfig,
    pub lambda: LambdaSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub repeats: usize,
    pub base_seed: u64,
    /// Epochs at which bound checks are evaluated.
    pub checkpoints: Vec<usize>,
    pub init: InitKind,
    pub oracle_iterations: usize,
    /// Multiplies every emitted step. Only for mutation testing; 1 otherwise.
    pub step_scale: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            instance: InstanceSpec::default(),
            optimizer: OptimizerKind::Ssm,
            rule: RuleConfig::default(),
            lambda: LambdaSchedule::Constant(0.0),
            epochs: 100,
            batch_size: 30,
            repeats: 3,
            base_seed: 0,
            checkpoints: vec![1, 10, 50, 100],
            init: InitKind::default_for(LossKind::AbsQuad),
            oracle_iterations: crate::analysis::DEFAULT_ORACLE_ITERATIONS,
            step_scale: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.rule.validate()?;
        self.lambda.validate()?;
        let allowed: &[RuleKind] = match self.optimizer {
            OptimizerKind::Ssm => &[
                RuleKind::SpsSafe,
                RuleKind::SpsSafeEma,
                RuleKind::SpsMax,
                RuleKind::SmoothSpsMax,
                RuleKind::SpsStar,
                RuleKind::Constant,
            ],
            OptimizerKind::ClippedSsm => &[RuleKind::ClippedAdaptive, RuleKind::Constant],
            OptimizerKind::Ima => &[RuleKind::ImaSpsSafe, RuleKind::ImaSps, RuleKind::Constant],
        };
        if !allowed.contains(&self.rule.kind) {
            return bad(format!(
                "rule {} cannot drive optimizer {}",
                self.rule.kind, self.optimizer
            ));
        }
        if self.optimizer == OptimizerKind::ClippedSsm && !(self.rule.c > 0.0) {
            return bad("clipped_ssm needs c > 0".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.instance.path.is_none() && self.batch_size > self.instance.n {
            return bad(format!(
                "batch_size {} exceeds n = {}",
                self.batch_size, self.instance.n
            ));
        }
        if let Some(&c) = self.checkpoints.iter().find(|&&c| c == 0 || c > self.epochs) {
            return bad(format!("checkpoint {c} outside 1..={}", self.epochs));
        }
        if self.oracle_iterations == 0 {
            return bad("oracle_iterations must be >= 1".into());
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return bad("step_scale must be > 0".into());
        }
        Ok(())
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }

    /// Steps per epoch, counting a final partial batch.
    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    /// Compact identifier of the rule parameters, e.g. `sps_safe/M=10`.
    pub fn label(&self) -> String {
        let r = &self.rule;
        let mut s = format!("{}/{}", self.optimizer, r.kind);
        match r.kind {
            RuleKind::SpsSafe | RuleKind::ImaSpsSafe => write!(s, "/M={}", r.safeguard).unwrap(),
            RuleKind::SpsSafeEma => write!(s, "/beta={}", r.beta).unwrap(),
            RuleKind::SpsMax => write!(s, "/c={}/gamma_b={}", r.c, r.gamma_b).unwrap(),
            RuleKind::SmoothSpsMax => write!(s, "/c={}/tau={}", r.c, r.tau).unwrap(),
            RuleKind::ClippedAdaptive => write!(s, "/c={}", r.c).unwrap(),
            RuleKind::Constant => write!(s, "/gamma={}", r.gamma_const).unwrap(),
            RuleKind::SpsStar | RuleKind::ImaSps => {}
        }
        if self.optimizer == OptimizerKind::Ima {
            write!(s, "/lambda={}", self.lambda).unwrap();
        }
        s
    }
}

/// Metrics recorded at the end of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Full objective at the last iterate.
    pub f_last: f64,
    /// Full objective at the running Cesàro average of `x^0 … x^{T−1}`.
    pub f_cesaro: f64,
    /// Last step size emitted in the epoch.
    pub step_size: f64,
    /// Norm of the full-batch subgradient at the last iterate.
    pub grad_norm: f64,
    /// Fraction of steps so far on which the constant branch was chosen.
    pub clip_frac: Option<f64>,
    pub subopt_last: Option<f64>,
    pub subopt_cesaro: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    pub final_x: Vec<f64>,
    pub wall_time: Duration,
}

impl RunRecord {
    pub fn final_metrics(&self) -> &EpochMetrics {
        self.epochs.last().expect("runs have at least one epoch")
    }
}

/// One optimizer step, as seen by an observer.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub step: u64,
    pub batch: &'a [usize],
    pub x_before: &'a [f64],
    pub x_after: &'a [f64],
    pub gamma: f64,
}

enum OptState {
    Ssm(SsmState),
    Ima(ImaState),
}

impl OptState {
    fn x(&self) -> &[f64] {
        match self {
            OptState::Ssm(s) => &s.x,
            OptState::Ima(s) => &s.x,
        }
    }
}

/// Executes `config.repeats` seeded runs (in parallel) and returns their
/// records in run order.
pub fn run_experiment(
    config: &ExperimentConfig,
    problem: &Problem,
    reference: Option<&ReferenceSolution>,
    x0: &[f64],
) -> Result<Vec<RunRecord>> {
    config.validate()?;
    (0..config.repeats)
        .into_par_iter()
        .map(|run| run_single(config, problem, reference, x0, run, |_| {}))
        .collect()
}

/// Executes run number `run` and calls `observer` after every step.
pub fn run_single<F>(
    config: &ExperimentConfig,
    problem: &Problem,
    reference: Option<&ReferenceSolution>,
    x0: &[f64],
    run: usize,
    mut observer: F,
) -> Result<RunRecord>
where
    F: FnMut(&StepEvent<'_>),
{
    let seed = config.run_seed(run);
    run_inner(config, problem, reference, x0, run, &mut observer).map_err(|e| Error::RunFailed {
        run,
        seed,
        source: Box::new(e),
    })
}

fn run_inner(
    config: &ExperimentConfig,
    problem: &Problem,
    reference: Option<&ReferenceSolution>,
    x0: &[f64],
    run: usize,
    observer: &mut dyn FnMut(&StepEvent<'_>),
) -> Result<RunRecord> {
    let start = Instant::now();
    let (n, d) = (problem.n(), problem.d());
    if x0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: x0.len(),
        });
    }
    if config.batch_size > n {
        return Err(Error::InvalidConfig(format!(
            "batch_size {} exceeds n = {n}",
            config.batch_size
        )));
    }
    if let Some(r) = reference {
        if r.f_i_star.len() != n || r.x_star.len() != d {
            return Err(Error::InvalidConfig("reference solution does not match the instance".into()));
        }
    }
    if config.rule.kind.needs_reference() && reference.is_none() {
        return Err(Error::InvalidConfig(format!(
            "rule {} requires a reference solution",
            config.rule.kind
        )));
    }

    let mut rng = stream_rng(config.run_seed(run), SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut state = match config.optimizer {
        OptimizerKind::Ima => OptState::Ima(ImaState::new(x0.to_vec())),
        _ => OptState::Ssm(SsmState::new(x0.to_vec())),
    };
    let mut rule_state = RuleState::default();
    let mut cesaro = CesaroAverage::new();
    let mut grad = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut x_before = vec![0.0; d];
    let mut step: u64 = 0;
    let mut last_gamma = 0.0;
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let x = state.x();
            cesaro.push(x);
            x_before.copy_from_slice(x);
            let f_val = problem.eval_batch_into(batch, x, &mut grad);
            let g_norm_sq = norm_sq(&grad);
            let f_at_xstar = reference
                .map(|r| batch.iter().map(|&i| r.f_i_star[i]).sum::<f64>() / batch.len() as f64);
            let (momentum, lambda_next) = match &state {
                OptState::Ima(s) => {
                    let lambda_t = config.lambda.at(step);
                    (
                        momentum_input(&grad, &s.x, &s.x_prev, lambda_t),
                        config.lambda.at(step + 1),
                    )
                }
                OptState::Ssm(_) => (0.0, 0.0),
            };
            let input = StepInput {
                f_val,
                lower: problem.batch_lower_unchecked(batch),
                f_at_xstar,
                g_norm_sq,
                momentum,
            };
            let gamma = match config.rule.step(&mut rule_state, &input) {
                Ok(g) => g * config.step_scale,
                Err(Error::ZeroSubgradient { numerator }) => {
                    return Err(Error::ZeroSubgradientAt {
                        step,
                        samples: batch.to_vec(),
                        numerator,
                    })
                }
                Err(e) => return Err(e),
            };
            match &mut state {
                OptState::Ssm(s) if config.optimizer == OptimizerKind::ClippedSsm => {
                    s.clipped_step(&grad, gamma, config.rule.c)?
                }
                OptState::Ssm(s) => s.step(&grad, gamma)?,
                OptState::Ima(s) => s.step(&grad, gamma, lambda_next)?,
            }
            step += 1;
            last_gamma = gamma;
            observer(&StepEvent {
                step,
                batch,
                x_before: &x_before,
                x_after: state.x(),
                gamma,
            });
        }

        let x = state.x();
        let f_last = problem.full_value_unchecked(x);
        let avg = cesaro.mean().expect("at least one step per epoch");
        let f_cesaro = problem.full_value_unchecked(avg);
        let grad_norm = problem.full_grad_norm_sq(x, &mut scratch).sqrt();
        let f_star = reference.map(|r| r.f_star);
        epochs.push(EpochMetrics {
            epoch,
            f_last,
            f_cesaro,
            step_size: last_gamma,
            grad_norm,
            clip_frac: config
                .rule
                .kind
                .has_constant_branch()
                .then(|| rule_state.clip_fraction()),
            subopt_last: f_star.map(|fs| f_last - fs),
            subopt_cesaro: f_star.map(|fs| f_cesaro - fs),
        });
    }

    Ok(RunRecord {
        run,
        seed: config.run_seed(run),
        epochs,
        final_x: state.x().to_vec(),
        wall_time: start.elapsed(),
    })
}

/// Pointwise mean and sample standard deviation of one metric.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mean and sample standard deviation (divisor `k − 1`; `0` when `k = 1`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub repeats: usize,
    pub f_last: Curve,
    pub f_cesaro: Curve,
    pub step_size: Curve,
    pub grad_norm: Curve,
    pub clip_frac: Option<Curve>,
    pub subopt_last: Option<Curve>,
    pub subopt_cesaro: Option<Curve>,
}

pub fn aggregate(records: &[RunRecord]) -> Result<Aggregate> {
    let first = records.first().ok_or(Error::Empty("run records"))?;
    let len = first.epochs.len();
    if records.iter().any(|r| r.epochs.len() != len) {
        return Err(Error::InvalidConfig("records have different lengths".into()));
    }
    let curve = |get: &dyn Fn(&EpochMetrics) -> f64| {
        let (mean, std) = (0..len)
            .map(|e| {
                let vals: Vec<f64> = records.iter().map(|r| get(&r.epochs[e])).collect();
                mean_std(&vals)
            })
            .unzip();
        Curve { mean, std }
    };
    let optional = |get: &dyn Fn(&EpochMetrics) -> Option<f64>| {
        records
            .iter()
            .all(|r| r.epochs.iter().all(|m| get(m).is_some()))
            .then(|| curve(&|m| get(m).unwrap()))
    };
    Ok(Aggregate {
        repeats: records.len(),
        f_last: curve(&|m| m.f_last),
        f_cesaro: curve(&|m| m.f_cesaro),
        step_size: curve(&|m| m.step_size),
        grad_norm: curve(&|m| m.grad_norm),
        clip_frac: optional(&|m| m.clip_frac),
        subopt_last: optional(&|m| m.subopt_last),
        subopt_cesaro: optional(&|m| m.subopt_cesaro),
    })
}

/// Parameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Safeguard,
    GammaConst,
    C,
    GammaB,
    Beta,
    Lambda,
}

impl SweepParam {
    pub fn apply(self, config: &mut ExperimentConfig, value: f64) {
        match self {
            SweepParam::Safeguard => config.rule.safeguard = value,
            SweepParam::GammaConst => config.rule.gamma_const = value,
            SweepParam::C => config.rule.c = value,
            SweepParam::GammaB => config.rule.gamma_b = value,
            SweepParam::Beta => config.rule.beta = value,
            SweepParam::Lambda => config.lambda = LambdaSchedule::Constant(value),
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" => Ok(SweepParam::Safeguard),
            "gamma_const" => Ok(SweepParam::GammaConst),
            "c" => Ok(SweepParam::C),
            "gamma_b" => Ok(SweepParam::GammaB),
            "beta" => Ok(SweepParam::Beta),
            "lambda" => Ok(SweepParam::Lambda),
            other => Err(Error::InvalidConfig(format!("unknown sweep parameter `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub config_id: String,
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

impl SweepEntry {
    /// Mean and standard deviation of the final last-iterate suboptimality.
    pub fn final_subopt(&self) -> Option<(f64, f64)> {
        self.aggregate
            .subopt_last
            .as_ref()
            .map(|c| (*c.mean.last().unwrap(), *c.std.last().unwrap()))
    }
}

#[derive(Clone, Debug, Default)]
pub struct SweepTable {
    pub entries: Vec<SweepEntry>,
}

/// Runs every configuration (runs in parallel) and aggregates per config.
pub fn run_configs(
    configs: Vec<(String, ExperimentConfig)>,
    problem: &Problem,
    reference: Option<&ReferenceSolution>,
    x0: &[f64],
) -> Result<SweepTable> {
    for (_, c) in &configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, usize)> = configs
        .iter()
        .enumerate()
        .flat_map(|(k, (_, c))| (0..c.repeats).map(move |r| (k, r)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(k, r)| run_single(&configs[k].1, problem, reference, x0, r, |_| {}))
        .collect::<Result<_>>()?;
    let mut records = records.into_iter();
    let mut entries = Vec::with_capacity(configs.len());
    for (config_id, config) in configs {
        let runs: Vec<RunRecord> = records.by_ref().take(config.repeats).collect();
        entries.push(SweepEntry {
            aggregate: aggregate(&runs)?,
            config_id,
            config,
            records: runs,
        });
    }
    Ok(SweepTable { entries })
}

/// Drops repeated values, keeping first occurrences in order.
pub fn dedup_values(values: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        if !out.iter().any(|u| u.to_bits() == v.to_bits()) {
            out.push(v);
        }
    }
    out
}

/// Clones `base` once per (deduplicated) value of `param` and runs them all.
pub fn sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    problem: &Problem,
    reference: Option<&ReferenceSolution>,
    x0: &[f64],
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Empty("sweep values"));
    }
    let configs = dedup_values(values)
        .into_iter()
        .map(|v| {
            let mut c = base.clone();
            param.apply(&mut c, v);
            (c.label(), c)
        })
        .collect();
    run_configs(configs, problem, reference, x0)
}

/// Family of rules compared against each other on one instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompareFamily {
    Ssm,
    Ima,
}

impl std::str::FromStr for CompareFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssm" => Ok(CompareFamily::Ssm),
            "ima" => Ok(CompareFamily::Ima),
            other => Err(Error::InvalidConfig(format!("unknown compare family `{other}`"))),
        }
    }
}

/// Tuning grids for [`comparison_configs`].
#[derive(Clone, Debug, PartialEq)]
pub struct CompareGrids {
    pub safeguards: Vec<f64>,
    pub constant_steps: Vec<f64>,
    /// Polyak scaling `c` for `SPS_max` and its smoothed variant.
    pub polyak_c: Vec<f64>,
    pub momentum: Vec<LambdaSchedule>,
}

impl Default for CompareGrids {
    fn default() -> Self {
        CompareGrids {
            safeguards: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            constant_steps: vec![1e-4, 1e-3, 1e-2, 1e-1],
            polyak_c: vec![0.5, 1.0],
            momentum: vec![LambdaSchedule::Constant(9.0), LambdaSchedule::Linear],
        }
    }
}

/// Named configurations of one comparison, sharing instance and seeds.
pub fn comparison_configs(
    base: &ExperimentConfig,
    family: CompareFamily,
    grids: &CompareGrids,
) -> Vec<(String, ExperimentConfig)> {
    let mut out = Vec::new();
    let mut push = |optimizer: OptimizerKind, rule: RuleConfig, lambda: LambdaSchedule| {
        let mut c = base.clone();
        c.optimizer = optimizer;
        c.rule = RuleConfig {
            batch_frac: base.rule.batch_frac,
            ..rule
        };
        c.lambda = lambda;
        out.push((c.label(), c));
    };
    match family {
        CompareFamily::Ssm => {
            for &m in &grids.safeguards {
                push(OptimizerKind::Ssm, RuleConfig::sps_safe(m), LambdaSchedule::Constant(0.0));
            }
            push(OptimizerKind::Ssm, RuleConfig::new(RuleKind::SpsStar), LambdaSchedule::Constant(0.0));
            for &g in &grids.constant_steps {
                push(OptimizerKind::Ssm, RuleConfig::constant(g), LambdaSchedule::Constant(0.0));
            }
            for &c in &grids.polyak_c {
                for kind in [RuleKind::SpsMax, RuleKind::SmoothSpsMax] {
                    push(
                        OptimizerKind::Ssm,
                        RuleConfig { c, ..RuleConfig::new(kind) },
                        LambdaSchedule::Constant(0.0),
                    );
                }
            }
        }
        CompareFamily::Ima => {
            for &lambda in &grids.momentum {
                for &m in &grids.safeguards {
                    push(OptimizerKind::Ima, RuleConfig::ima_sps_safe(m), lambda);
                }
                push(OptimizerKind::Ima, RuleConfig::new(RuleKind::ImaSps), lambda);
                for &g in &grids.constant_steps {
                    push(OptimizerKind::Ima, RuleConfig::constant(g), lambda);
                }
            }
        }
    }
    out
}

/// Best entry (lowest final mean last-iterate suboptimality, falling back to
/// the final mean objective) per rule and momentum schedule.
pub fn best_per_rule(table: &SweepTable) -> Vec<&SweepEntry> {
    let score = |e: &SweepEntry| {
        e.final_subopt()
            .map(|(m, _)| m)
            .unwrap_or_else(|| *e.aggregate.f_last.mean.last().unwrap())
    };
    let key = |e: &SweepEntry| (e.config.optimizer, e.config.rule.kind, e.config.lambda.to_string());
    let mut best: Vec<&SweepEntry> = Vec::new();
    for e in &table.entries {
        let score_e = score(e);
        match best.iter_mut().find(|b| key(b) == key(e)) {
            Some(slot) => {
                if score_e.is_finite() && !(score(slot) <= score_e) {
                    *slot = e;
                }
            }
            None => best.push(e),
        }
    }
    best
}

pub const CSV_HEADER: &str = "config_id,rule,optimizer,M,c,gamma_b,lambda,seed,epoch,f_last,f_cesaro,step_size,grad_norm,clip_frac,subopt_last,subopt_cesaro";

pub const AGGREGATE_CSV_HEADER: &str = "config_id,rule,optimizer,M,c,gamma_b,lambda,repeats,epoch,\
f_last_mean,f_last_std,f_cesaro_mean,f_cesaro_std,step_size_mean,step_size_std,grad_norm_mean,grad_norm_std,\
clip_frac_mean,clip_frac_std,subopt_last_mean,subopt_last_std,subopt_cesaro_mean,subopt_cesaro_std";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// The `rule,optimizer,M,c,gamma_b,lambda` columns; parameters a rule does
/// not use are left empty.
fn param_columns(c: &ExperimentConfig) -> String {
    let r = &c.rule;
    let m = matches!(r.kind, RuleKind::SpsSafe | RuleKind::ImaSpsSafe).then_some(r.safeguard);
    let cc = matches!(
        r.kind,
        RuleKind::SpsMax | RuleKind::SmoothSpsMax | RuleKind::ClippedAdaptive
    )
    .then_some(r.c)
    .or((c.optimizer == OptimizerKind::ClippedSsm).then_some(r.c));
    let gamma_b = (r.kind == RuleKind::SpsMax).then_some(r.gamma_b);
    let lambda = if c.optimizer == OptimizerKind::Ima {
        c.lambda.to_string()
    } else {
        String::new()
    };
    format!(
        "{},{},{},{},{},{}",
        r.kind,
        c.optimizer,
        opt(m),
        opt(cc),
        opt(gamma_b),
        lambda
    )
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn comment_block(comment: &str) -> String {
    comment.lines().map(|l| format!("# {l}\n")).collect()
}

/// Per-run, per-epoch rows in (config, seed, epoch) order, preceded by
/// `comment` as `#`-prefixed lines.
pub fn render_csv(table: &SweepTable, comment: &str) -> String {
    let mut out = comment_block(comment);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for e in &table.entries {
        let params = param_columns(&e.config);
        for r in &e.records {
            for m in &r.epochs {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    e.config_id,
                    params,
                    r.seed,
                    m.epoch,
                    m.f_last,
                    m.f_cesaro,
                    m.step_size,
                    m.grad_norm,
                    opt(m.clip_frac),
                    opt(m.subopt_last),
                    opt(m.subopt_cesaro)
                )
                .unwrap();
            }
        }
    }
    out
}

pub fn write_csv(table: &SweepTable, path: &Path, comment: &str) -> Result<()> {
    write_file(path, &render_csv(table, comment))
}

pub fn render_aggregate_csv(table: &SweepTable, comment: &str) -> String {
    let mut out = comment_block(comment);
    out.push_str("# std: sample standard deviation (divisor repeats-1); 0 when repeats = 1\n");
    out.push_str(AGGREGATE_CSV_HEADER);
    out.push('\n');
    let pair = |c: Option<&Curve>, e: usize| match c {
        Some(c) => format!("{},{}", c.mean[e], c.std[e]),
        None => ",".to_string(),
    };
    for entry in &table.entries {
        let a = &entry.aggregate;
        let params = param_columns(&entry.config);
        for e in 0..a.f_last.mean.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                entry.config_id,
                params,
                a.repeats,
                e + 1,
                pair(Some(&a.f_last), e),
                pair(Some(&a.f_cesaro), e),
                pair(Some(&a.step_size), e),
                pair(Some(&a.grad_norm), e),
                pair(a.clip_frac.as_ref(), e),
                pair(a.subopt_last.as_ref(), e),
                pair(a.subopt_cesaro.as_ref(), e),
            )
            .unwrap();
        }
    }
    out
}

pub fn write_aggregate_csv(table: &SweepTable, path: &Path, comment: &str) -> Result<()> {
    write_file(path, &render_aggregate_csv(table, comment))
}
