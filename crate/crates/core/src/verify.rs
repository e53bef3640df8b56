//! Property suite run by `sps-safe verify`: clipping equivalence, the
//! momentum-free reduction, the per-step descent inequality, the averaging
//! lemmas, and the convergence bounds at checkpoints.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::analysis::{
    bregman, descent_inequality_check, ratio_expectation_check, momentum_identity_residual, solve_reference, averaged_iterate_bound,
    CesaroAverage, ReferenceSolution,
};
use crate::error::Result;
use crate::harness::{run_single, ExperimentConfig, InitKind, InstanceSpec};
use crate::linalg::{dist, norm, norm_sq};
use crate::optimizers::{LambdaSchedule, OptimizerKind, SsmState};
use crate::problems::{stream_rng, Dataset, LossKind, Problem};
use crate::step_rules::{clipped_adaptive_gamma, ima_sps_safe, sps_safe, RuleConfig, RuleKind};

/// Relative tolerance of the clipping and reduction comparisons.
pub const EQUIVALENCE_RTOL: f64 = 1e-12;
/// Tolerance of the identity residuals.
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Seeds averaged in the expectation bounds.
    pub seeds: usize,
    /// Random states / tuples / distributions per sampled check.
    pub samples: usize,
    pub oracle_iterations: usize,
    pub epochs: usize,
    /// Doubles every step of the descent-inequality run.
    pub mutate: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            seeds: 10,
            samples: 1000,
            oracle_iterations: crate::analysis::DEFAULT_ORACLE_ITERATIONS,
            epochs: 100,
            mutate: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            passed,
            detail,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

/// `|a − b| / max(|a|, |b|)`, and 0 when both are 0.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel_diff(*x, *y)).fold(0.0, f64::max)
}

/// Per-coordinate deviation of two next iterates, relative to the magnitude
/// of the coordinate before and after the step: `|a − b| / max(|a|, |b|, |x|)`.
/// Dividing by the result alone blows up when a coordinate crosses zero.
pub fn step_rel_diff(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    x.iter()
        .zip(a.iter().zip(b))
        .map(|(p, (u, v))| {
            let scale = p.abs().max(u.abs()).max(v.abs());
            if scale == 0.0 {
                0.0
            } else {
                (u - v).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Hinge benchmark: instance, reference solution and exact Lipschitz constant.
pub struct Bench {
    pub problem: Problem,
    pub reference: ReferenceSolution,
    pub lipschitz: f64,
    pub x0: Vec<f64>,
}

impl Bench {
    /// Gaussian-label hinge instance with `n = 300`, `d = 100`, started at 0.
    pub fn hinge(seed: u64, oracle_iterations: usize) -> Result<Self> {
        let problem = Problem::new(Dataset::generate_gaussian(300, 100, seed)?, LossKind::Hinge);
        Self::with_problem(problem, vec![0.0; 100], oracle_iterations)
    }

    pub fn with_problem(problem: Problem, x0: Vec<f64>, oracle_iterations: usize) -> Result<Self> {
        let reference = solve_reference(&problem, oracle_iterations, &x0)?;
        let lipschitz = reference.lipschitz;
        Ok(Bench {
            problem,
            reference,
            lipschitz,
            x0,
        })
    }

    pub fn config(&self, rule: RuleConfig, optimizer: OptimizerKind, epochs: usize) -> ExperimentConfig {
        ExperimentConfig {
            instance: InstanceSpec {
                n: self.problem.n(),
                d: self.problem.d(),
                seed: self.problem.data().seed(),
                loss: self.problem.kind(),
                ..InstanceSpec::default()
            },
            optimizer,
            rule: RuleConfig {
                batch_frac: 30.0 / self.problem.n() as f64,
                ..rule
            },
            epochs,
            batch_size: 30.min(self.problem.n()),
            repeats: 1,
            checkpoints: vec![],
            init: InitKind::Zeros,
            ..ExperimentConfig::default()
        }
    }
}

/// Safeguarded SSM with `M = c²` against clipped SSM with the adaptive step,
/// on random single-step states.
pub fn clipping_equivalence_states(samples: usize, seed: u64) -> Check {
    let mut rng = stream_rng(seed, 10);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let d = rng.random_range(1..=20);
        let x_scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let x = gaussian_vec(&mut rng, d, x_scale);
        let g_scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let g = gaussian_vec(&mut rng, d, g_scale);
        let gap = 10f64.powf(rng.random_range(-3.0..3.0));
        let c = 10f64.powf(rng.random_range(-2.0..2.0));
        let mut a = SsmState::new(x.clone());
        a.step(&g, sps_safe(gap, 0.0, norm_sq(&g), c * c)).expect("finite");
        let mut b = SsmState::new(x);
        b.clipped_step(&g, clipped_adaptive_gamma(gap, 0.0, norm(&g), c), c)
            .expect("finite");
        worst = worst.max(max_rel_diff(&a.x, &b.x));
    }
    Check::new(
        "clipping equivalence (random states)",
        worst <= EQUIVALENCE_RTOL,
        format!("{samples} states, max relative deviation {worst:e}"),
    )
}

/// Along a seeded safeguarded run with `M = c²`, applies the clipped update
/// to each visited iterate and batch and compares the two next iterates.
/// Returns the worst deviation relative to the result and relative to the
/// operand scale (see [`step_rel_diff`]).
pub fn clipping_equivalence_along_run(
    problem: &Problem,
    x0: &[f64],
    config: &ExperimentConfig,
    c: f64,
) -> Result<(usize, f64, f64)> {
    let mut cfg = config.clone();
    cfg.optimizer = OptimizerKind::Ssm;
    cfg.rule = RuleConfig {
        kind: RuleKind::SpsSafe,
        safeguard: c * c,
        ..config.rule
    };
    let mut steps = 0;
    let mut worst_result: f64 = 0.0;
    let mut worst_operand: f64 = 0.0;
    let mut err = None;
    run_single(&cfg, problem, None, x0, 0, |e| {
        let clipped = problem.batch_eval(e.batch, e.x_before).and_then(|(f, g)| {
            let lower = problem.batch_lower(e.batch)?;
            let mut s = SsmState::new(e.x_before.to_vec());
            s.clipped_step(&g, clipped_adaptive_gamma(f, lower, norm(&g), c), c)?;
            Ok(s.x)
        });
        match clipped {
            Ok(b) => {
                worst_result = worst_result.max(max_rel_diff(e.x_after, &b));
                worst_operand = worst_operand.max(step_rel_diff(e.x_before, e.x_after, &b));
                steps += 1;
            }
            Err(x) => err = Some(x),
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok((steps, worst_result, worst_operand)),
    }
}

pub fn clipping_equivalence_runs(bench: &Bench, c: f64, epochs: usize, seed: u64) -> Result<Check> {
    let mut cfg = bench.config(RuleConfig::sps_safe(c * c), OptimizerKind::Ssm, epochs);
    cfg.base_seed = seed;
    let (steps, result, operand) = clipping_equivalence_along_run(&bench.problem, &bench.x0, &cfg, c)?;
    Ok(Check::new(
        "clipping equivalence (along runs)",
        operand <= EQUIVALENCE_RTOL,
        format!("{steps} steps, c = {c}, max deviation {operand:e} (operand scale), {result:e} (result scale)"),
    ))
}

/// Momentum with `λ ≡ 0` against plain SSM, trajectory and per call.
pub fn lambda_zero_reduction(bench: &Bench, safeguard: f64, epochs: usize, samples: usize, seed: u64) -> Result<Check> {
    let mut ssm = bench.config(RuleConfig::sps_safe(safeguard), OptimizerKind::Ssm, epochs);
    ssm.base_seed = seed;
    let ima = ExperimentConfig {
        optimizer: OptimizerKind::Ima,
        rule: RuleConfig {
            kind: RuleKind::ImaSpsSafe,
            ..ssm.rule
        },
        lambda: LambdaSchedule::Constant(0.0),
        ..ssm.clone()
    };
    let mut traj = Vec::new();
    run_single(&ssm, &bench.problem, None, &bench.x0, 0, |e| traj.push(e.x_after.to_vec()))?;
    let mut worst: f64 = 0.0;
    let mut k = 0;
    run_single(&ima, &bench.problem, None, &bench.x0, 0, |e| {
        let dev = traj[k].iter().zip(e.x_after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(dev);
        k += 1;
    })?;

    let mut rng = stream_rng(seed, 11);
    let mut bitwise = true;
    for _ in 0..samples {
        let d = rng.random_range(1..=10);
        let g = gaussian_vec(&mut rng, d, 1.0);
        let x_t = gaussian_vec(&mut rng, d, 1.0);
        let x_prev = gaussian_vec(&mut rng, d, 1.0);
        let lower = rng.random_range(0.0..1.0);
        let f = lower + rng.random_range(0.0..5.0);
        let m = rng.random_range(0.01..10.0);
        let a = ima_sps_safe(f, lower, &g, &x_t, &x_prev, 0.0, m)?;
        bitwise &= a.to_bits() == sps_safe(f, lower, norm_sq(&g), m).to_bits();
    }
    Ok(Check::new(
        "zero-momentum reduction",
        worst <= EQUIVALENCE_RTOL && bitwise,
        format!("{k} steps, max deviation {worst:e}; {samples} calls bitwise equal: {bitwise}"),
    ))
}

/// Counts (violations, steps) of the per-step descent inequality along a
/// safeguarded SSM run, with every step multiplied by `step_scale`.
pub fn descent_violations(bench: &Bench, safeguard: f64, epochs: usize, step_scale: f64, seed: u64) -> Result<(usize, usize, f64)> {
    let mut cfg = bench.config(RuleConfig::sps_safe(safeguard), OptimizerKind::Ssm, epochs);
    cfg.base_seed = seed;
    cfg.step_scale = step_scale;
    let mut violations = 0;
    let mut steps = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut err = None;
    run_single(&cfg, &bench.problem, None, &bench.x0, 0, |e| {
        match descent_inequality_check(
            &bench.problem,
            e.batch,
            e.x_before,
            e.x_after,
            &bench.reference.x_star,
            bench.lipschitz,
            safeguard,
        ) {
            Ok(check) => {
                steps += 1;
                worst = worst.max(check.residual);
                violations += usize::from(!check.holds);
            }
            Err(e) => err = Some(e),
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok((violations, steps, worst))
}

pub fn descent_inequality(bench: &Bench, epochs: usize, mutate: bool, seed: u64) -> Result<Check> {
    let scale = if mutate { 2.0 } else { 1.0 };
    let mut total_v = 0;
    let mut total_s = 0;
    let mut worst = f64::NEG_INFINITY;
    for m in [1.0, 10.0] {
        let (v, s, w) = descent_violations(bench, m, epochs, scale, seed)?;
        total_v += v;
        total_s += s;
        worst = worst.max(w);
    }
    Ok(Check::new(
        if mutate {
            "descent inequality (steps doubled)"
        } else {
            "descent inequality"
        },
        total_v == 0,
        format!("{total_v} of {total_s} steps violated, max residual {worst:e}"),
    ))
}

/// Momentum identity on random tuples for both losses.
pub fn momentum_identity(samples: usize, seed: u64) -> Result<Check> {
    let mut rng = stream_rng(seed, 12);
    let mut worst: f64 = 0.0;
    for (loss, n, d) in [(LossKind::Hinge, 40, 8), (LossKind::AbsQuad, 40, 5)] {
        let problem = Problem::new(Dataset::generate_gaussian(n, d, seed)?, loss);
        for _ in 0..samples {
            let x_t = gaussian_vec(&mut rng, d, 1.0);
            let x_prev = gaussian_vec(&mut rng, d, 1.0);
            let x_star = gaussian_vec(&mut rng, d, 1.0);
            let lambda = rng.random_range(0.0..20.0);
            worst = worst.max(momentum_identity_residual(&problem, &x_t, &x_prev, &x_star, lambda)?);
        }
    }
    Ok(Check::new(
        "momentum Bregman identity",
        worst <= IDENTITY_TOL,
        format!("{} tuples, max residual {worst:e}", 2 * samples),
    ))
}

/// `E[(X)₊²/Y] ≥ (E X)₊²/E Y` on random discrete distributions.
pub fn ratio_expectation(samples: usize, seed: u64) -> Result<Check> {
    let mut rng = stream_rng(seed, 13);
    let mut failures = 0;
    for _ in 0..samples {
        let k = rng.random_range(1..=10);
        let pts: Vec<(f64, f64)> = (0..k)
            .map(|_| (rng.random_range(-5.0..5.0), rng.random_range(0.01..10.0)))
            .collect();
        failures += usize::from(!ratio_expectation_check(&pts)?);
    }
    Ok(Check::new(
        "ratio-of-expectations inequality",
        failures == 0,
        format!("{samples} distributions, {failures} failures"),
    ))
}

/// Seed-averaged `f(avg) − f*` (or last-iterate, momentum-weighted Bregman
/// terms included) at the checkpoints.
struct BoundRun {
    /// Per checkpoint: seed-averaged left-hand side.
    lhs: Vec<f64>,
    steps: Vec<u64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Lhs {
    Cesaro,
    CesaroPlusBregman,
    LastPlusBregman,
}

fn bound_run(
    bench: &Bench,
    cfg: &ExperimentConfig,
    checkpoints: &[usize],
    seeds: usize,
    lhs_kind: Lhs,
) -> Result<BoundRun> {
    let per_epoch = cfg.batches_per_epoch(bench.problem.n()) as u64;
    let steps: Vec<u64> = checkpoints.iter().map(|&e| e as u64 * per_epoch).collect();
    let f_star = bench.reference.f_star;
    let mut lhs = vec![0.0; checkpoints.len()];
    for r in 0..seeds {
        let mut avg = CesaroAverage::new();
        let mut breg_sum = 0.0;
        let mut prev: Option<Vec<f64>> = None;
        let mut values = vec![0.0; checkpoints.len()];
        let mut err = None;
        run_single(cfg, &bench.problem, None, &bench.x0, r, |e| {
            // e.x_before is x^t with t = e.step − 1.
            let t = e.step - 1;
            avg.push(e.x_before);
            if lhs_kind != Lhs::Cesaro {
                if let Some(p) = &prev {
                    match bregman(&bench.problem, p, e.x_before) {
                        Ok(b) => breg_sum += cfg.lambda.at(t) * b,
                        Err(x) => err = Some(x),
                    }
                }
                prev = Some(e.x_before.to_vec());
            }
            if let Some(k) = steps.iter().position(|&s| s == e.step) {
                let f_part = match lhs_kind {
                    Lhs::LastPlusBregman => bench.problem.full_value_unchecked(e.x_before),
                    _ => bench.problem.full_value_unchecked(avg.mean().unwrap()),
                };
                values[k] = f_part - f_star + breg_sum / e.step as f64;
            }
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        for (l, v) in lhs.iter_mut().zip(values) {
            *l += v / seeds as f64;
        }
    }
    Ok(BoundRun { lhs, steps })
}

fn bound_check(
    name: &str,
    bench: &Bench,
    cfgs: &[ExperimentConfig],
    checkpoints: &[usize],
    seeds: usize,
    lhs_kind: Lhs,
    sigma_sq: f64,
) -> Result<Check> {
    let mut ok = true;
    let mut detail = Vec::new();
    for cfg in cfgs {
        let run = bound_run(bench, cfg, checkpoints, seeds, lhs_kind)?;
        let m = cfg.rule.safeguard;
        for (lhs, &t) in run.lhs.iter().zip(&run.steps) {
            let bound = averaged_iterate_bound(bench.lipschitz, m, bench.reference.dist0, sigma_sq, t);
            ok &= *lhs <= bound;
            detail.push(format!("M={m} T={t}: {lhs:.4e} <= {bound:.4e}"));
        }
    }
    Ok(Check::new(name, ok, detail.join("; ")))
}

pub fn ssm_bound(bench: &Bench, opts: &VerifyOptions) -> Result<Check> {
    let cfgs: Vec<_> = [1.0, 10.0]
        .iter()
        .map(|&m| {
            let mut c = bench.config(RuleConfig::sps_safe(m), OptimizerKind::Ssm, opts.epochs);
            c.base_seed = opts.seed;
            c
        })
        .collect();
    bound_check(
        "averaged-iterate bound (SSM)",
        bench,
        &cfgs,
        &checkpoints(opts.epochs),
        opts.seeds,
        Lhs::Cesaro,
        bench.reference.sigma_sq,
    )
}

pub fn momentum_bound(bench: &Bench, opts: &VerifyOptions, lambda: LambdaSchedule) -> Result<Check> {
    let cfgs: Vec<_> = [1.0, 10.0]
        .iter()
        .map(|&m| {
            let mut c = bench.config(RuleConfig::ima_sps_safe(m), OptimizerKind::Ima, opts.epochs);
            c.lambda = lambda;
            c.base_seed = opts.seed;
            c
        })
        .collect();
    let (name, kind) = match lambda {
        LambdaSchedule::Linear => ("last-iterate bound (momentum, lambda_t = t)", Lhs::LastPlusBregman),
        LambdaSchedule::Constant(_) => ("averaged-iterate bound (momentum, constant lambda)", Lhs::CesaroPlusBregman),
    };
    bound_check(
        name,
        bench,
        &cfgs,
        &checkpoints(opts.epochs),
        opts.seeds,
        kind,
        bench.reference.sigma_sq,
    )
}

fn checkpoints(epochs: usize) -> Vec<usize> {
    let mut cps: Vec<usize> = [1, 10, 50, 100].into_iter().filter(|&c| c <= epochs).collect();
    if cps.last() != Some(&epochs) {
        cps.push(epochs);
    }
    cps
}

/// Interpolation: separable hinge instance, `ℓ = 0 = f_i*`, zero noise term.
pub fn interpolation_bound(opts: &VerifyOptions) -> Result<Check> {
    let (data, x_sep) = Dataset::generate_separable(300, 100, opts.seed, 1.0)?;
    let problem = Problem::new(data, LossKind::Hinge);
    let x0 = vec![0.0; 100];
    let lipschitz = problem.lipschitz_estimate(std::slice::from_ref(&x0))?;
    let f_sep = problem.full_value(&x_sep)?;
    let reference = ReferenceSolution {
        dist0: dist(&x0, &x_sep),
        f_star: 0.0,
        f_i_star: vec![0.0; 300],
        x_star: x_sep,
        sigma_sq: 0.0,
        sigma_hat_sq: 0.0,
        lipschitz,
        lipschitz_exact: true,
        iterations: 0,
    };
    let bench = Bench {
        problem,
        reference,
        lipschitz,
        x0,
    };
    let cfgs: Vec<_> = [1.0, 10.0]
        .iter()
        .map(|&m| {
            let mut c = bench.config(RuleConfig::sps_safe(m), OptimizerKind::Ssm, opts.epochs);
            c.base_seed = opts.seed;
            c
        })
        .collect();
    let mut check = bound_check(
        "interpolation bound",
        &bench,
        &cfgs,
        &checkpoints(opts.epochs),
        opts.seeds,
        Lhs::Cesaro,
        0.0,
    )?;
    check.passed &= f_sep == 0.0;
    check.detail = format!("f(witness) = {f_sep}; {}", check.detail);
    Ok(check)
}

/// Full-batch safeguarded Polyak with `ℓ_i = f_i(x*)`, so the noise term
/// vanishes; checks `min_{t<T} f(x^t) − f* ≤ bound` for each horizon.
pub fn deterministic_bound(bench: &Bench, horizons: &[u64], safeguard: f64) -> Result<Check> {
    let r = &bench.reference;
    let problem = &bench.problem;
    let all: Vec<usize> = (0..problem.n()).collect();
    let t_max = horizons.iter().copied().max().unwrap_or(0);
    let mut state = SsmState::new(bench.x0.clone());
    let mut best = f64::INFINITY;
    let mut ok = true;
    let mut detail = Vec::new();
    for t in 0..t_max {
        let (f, g) = problem.batch_eval(&all, &state.x)?;
        best = best.min(f - r.f_star);
        let gamma = sps_safe(f, r.f_star, norm_sq(&g), safeguard);
        state.step(&g, gamma)?;
        if horizons.contains(&(t + 1)) {
            let bound = averaged_iterate_bound(bench.lipschitz, safeguard, r.dist0, 0.0, t + 1);
            ok &= best <= bound;
            detail.push(format!("T={}: {best:.4e} <= {bound:.4e}", t + 1));
        }
    }
    Ok(Check::new("deterministic bound", ok, detail.join("; ")))
}

/// Runs the whole suite.
pub fn run_verification(opts: &VerifyOptions) -> Result<Report> {
    let bench = Bench::hinge(opts.seed, opts.oracle_iterations)?;
    let mut checks = vec![
        clipping_equivalence_states(opts.samples, opts.seed),
        clipping_equivalence_runs(&bench, 1.0, opts.epochs, opts.seed)?,
        clipping_equivalence_runs(&bench, bench.lipschitz / 4.0, opts.epochs, opts.seed)?,
        lambda_zero_reduction(&bench, 1.0, opts.epochs, opts.samples, opts.seed)?,
        descent_inequality(&bench, opts.epochs, opts.mutate, opts.seed)?,
        momentum_identity(opts.samples, opts.seed)?,
        ratio_expectation(opts.samples, opts.seed)?,
        ssm_bound(&bench, opts)?,
        momentum_bound(&bench, opts, LambdaSchedule::Constant(9.0))?,
        momentum_bound(&bench, opts, LambdaSchedule::Linear)?,
        interpolation_bound(opts)?,
    ];
    checks.push(deterministic_bound(&bench, &[100, 400, 1600], 1.0)?);
    Ok(Report { checks })
}
