//! Reference solutions, noise measurements, rate bounds, and proof-level
//! checks for the safeguarded Polyak analysis.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{dist, dot, norm, norm_sq, sub};
use crate::problems::{LossKind, Problem};

/// Default full-batch iteration budget of the reference oracle.
pub const DEFAULT_ORACLE_ITERATIONS: usize = 50_000;

/// Approximate minimizer and the quantities the bounds need at it.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    /// Per-sample `f_i(x*)`.
    pub f_i_star: Vec<f64>,
    /// `(mean_i (f_i(x*) − ℓ_i)²)^{1/2}`.
    pub sigma_sq: f64,
    /// `mean_i (f_i(x*) − ℓ_i)`.
    pub sigma_hat_sq: f64,
    pub lipschitz: f64,
    /// `false` when `lipschitz` is an empirical estimate (AbsQuad).
    pub lipschitz_exact: bool,
    /// `‖x⁰ − x*‖` for the start the oracle was given.
    pub dist0: f64,
    pub iterations: usize,
}

/// Step rule of the full-batch reference oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OracleMethod {
    /// `γ = (f(x) − 0) / ‖g‖²`, keeping the best iterate.
    PolyakZeroLevel,
    /// Polyak steps towards a target level `f_best − δ` that is lowered
    /// on progress and whose gap `δ` halves once the travelled path exceeds
    /// a budget without reaching the level.
    AdaptiveLevel,
}

/// Distance travelled (in units of `‖x0‖ + 1`) before the level gap is halved.
const LEVEL_PATH_BUDGET: f64 = 30.0;

/// Full-batch subgradient oracle for `x*` and the per-sample values at it.
///
/// Returns the best-objective iterate encountered, not the last one.
pub fn solve_reference(problem: &Problem, iterations: usize, x0: &[f64]) -> Result<ReferenceSolution> {
    solve_reference_with(problem, iterations, x0, OracleMethod::AdaptiveLevel)
}

pub fn solve_reference_with(
    problem: &Problem,
    iterations: usize,
    x0: &[f64],
    method: OracleMethod,
) -> Result<ReferenceSolution> {
    if iterations == 0 {
        return Err(Error::InvalidConfig("oracle iterations must be >= 1".into()));
    }
    if x0.len() != problem.d() {
        return Err(Error::DimensionMismatch {
            expected: problem.d(),
            found: x0.len(),
        });
    }
    let all: Vec<usize> = (0..problem.n()).collect();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; problem.d()];
    let mut best_x = x.clone();
    let mut best_f = f64::INFINITY;
    let mut probes = vec![x0.to_vec()];

    // Level-method bookkeeping.
    let f0 = problem.eval_batch_into(&all, &x, &mut g);
    let mut delta = 0.5 * f0.max(1e-12);
    let mut level_ref = f0;
    let mut path = 0.0;
    let path_budget = LEVEL_PATH_BUDGET * (norm(x0) + 1.0);

    for k in 0..iterations {
        let f = problem.eval_batch_into(&all, &x, &mut g);
        if f < best_f {
            best_f = f;
            best_x.clone_from(&x);
        }
        if k == iterations - 1 {
            break;
        }
        let g_sq = norm_sq(&g);
        if g_sq == 0.0 {
            // 0 is in the subdifferential of the full objective.
            break;
        }
        let target = match method {
            OracleMethod::PolyakZeroLevel => 0.0,
            OracleMethod::AdaptiveLevel => {
                if best_f <= level_ref - 0.5 * delta {
                    level_ref = best_f;
                    path = 0.0;
                } else if path > path_budget {
                    delta *= 0.5;
                    level_ref = best_f;
                    path = 0.0;
                }
                (level_ref - delta).max(0.0)
            }
        };
        let gamma = (f - target).max(0.0) / g_sq;
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= gamma * gi;
        }
        path += gamma * g_sq.sqrt();
        if let Some(c) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: k as u64 + 1,
                coordinate: c,
            });
        }
        if k % 997 == 0 {
            probes.push(x.clone());
        }
    }
    probes.push(best_x.clone());

    let f_i_star: Vec<f64> = (0..problem.n())
        .map(|i| problem.value_and_coef(i, &best_x).0)
        .collect();
    let lower = problem.lower().as_slice();
    let sigma_sq = sigma_sq_from_values(&f_i_star, lower);
    let sigma_hat_sq = sigma_hat_sq_from_values(&f_i_star, lower);
    let lipschitz = problem.lipschitz_estimate(&probes)?;
    Ok(ReferenceSolution {
        dist0: dist(x0, &best_x),
        f_star: problem.full_value_unchecked(&best_x),
        x_star: best_x,
        f_i_star,
        sigma_sq,
        sigma_hat_sq,
        lipschitz,
        lipschitz_exact: problem.kind() == LossKind::Hinge,
        iterations,
    })
}

fn sigma_sq_from_values(values: &[f64], lower: &[f64]) -> f64 {
    let mean_sq = values
        .iter()
        .zip(lower)
        .map(|(f, l)| (f - l) * (f - l))
        .sum::<f64>()
        / values.len() as f64;
    mean_sq.sqrt()
}

fn sigma_hat_sq_from_values(values: &[f64], lower: &[f64]) -> f64 {
    values.iter().zip(lower).map(|(f, l)| f - l).sum::<f64>() / values.len() as f64
}

/// Noise measure `σ² = (mean_i (f_i(x*) − ℓ_i)²)^{1/2}`. Despite the name
/// the value is a root mean square, not a square.
pub fn sigma_sq(problem: &Problem, x_star: &[f64]) -> Result<f64> {
    let values = per_sample_values(problem, x_star)?;
    Ok(sigma_sq_from_values(&values, problem.lower().as_slice()))
}

/// `σ̂² = mean_i (f_i(x*) − ℓ_i)`.
pub fn sigma_hat_sq(problem: &Problem, x_star: &[f64]) -> Result<f64> {
    let values = per_sample_values(problem, x_star)?;
    Ok(sigma_hat_sq_from_values(&values, problem.lower().as_slice()))
}

fn per_sample_values(problem: &Problem, x: &[f64]) -> Result<Vec<f64>> {
    (0..problem.n()).map(|i| problem.loss_value(i, x)).collect()
}

/// Full-batch Bregman divergence `f(x) − f(y) − ⟨∂f(y), x − y⟩`.
pub fn bregman(problem: &Problem, x: &[f64], y: &[f64]) -> Result<f64> {
    let fx = problem.full_value(x)?;
    let (fy, gy) = problem.full_eval(y)?;
    Ok(fx - fy - dot(&gy, &sub(x, y)))
}

/// Right-hand side shared by the Cesàro, momentum, and last-iterate rates:
/// `√max(G², M) ‖x⁰ − x*‖ / √T + √(max(G², M) / M) σ²`.
pub fn averaged_iterate_bound(lipschitz: f64, safeguard: f64, dist0: f64, sigma_sq: f64, iterations: u64) -> f64 {
    let scale = (lipschitz * lipschitz).max(safeguard);
    scale.sqrt() * dist0 / (iterations as f64).sqrt() + (scale / safeguard).sqrt() * sigma_sq
}

/// Outcome of one per-step descent check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentCheck {
    pub holds: bool,
    /// `LHS − RHS`; nonpositive when the inequality holds exactly.
    pub residual: f64,
}

/// Absolute slack for [`descent_inequality_check`].
pub const DESCENT_SLACK: f64 = 1e-9;

/// Checks the one-step distance inequality of a safeguarded Polyak step on
/// the batch `batch` (a single sample in the single-sample model):
///
/// `‖x⁺ − x*‖² − ‖x − x*‖² ≤ −(f_B(x) − f_B(x*))² / max(G², M) + (f_B(x*) − ℓ_B)² / M`.
#[allow(clippy::too_many_arguments)]
pub fn descent_inequality_check(
    problem: &Problem,
    batch: &[usize],
    x_t: &[f64],
    x_next: &[f64],
    x_star: &[f64],
    lipschitz: f64,
    safeguard: f64,
) -> Result<DescentCheck> {
    let f_t = problem.batch_value(batch, x_t)?;
    let f_star = problem.batch_value(batch, x_star)?;
    let lower = problem.batch_lower(batch)?;
    let lhs = norm_sq(&sub(x_next, x_star)) - norm_sq(&sub(x_t, x_star));
    let rhs = -(f_t - f_star).powi(2) / (lipschitz * lipschitz).max(safeguard) + (f_star - lower).powi(2) / safeguard;
    let residual = lhs - rhs;
    Ok(DescentCheck {
        holds: residual <= DESCENT_SLACK,
        residual,
    })
}

/// `|LHS − RHS|` of the momentum identity
/// `f(x_t) − f* + λ⟨∂f(x_t), x_t − x_{t−1}⟩ =
///  (1 + λ)(f(x_t) − f*) − λ(f(x_{t−1}) − f*) + λ B_f(x_{t−1}, x_t)`,
/// with the same subgradient element on both sides.
pub fn momentum_identity_residual(problem: &Problem, x_t: &[f64], x_prev: &[f64], x_star: &[f64], lambda: f64) -> Result<f64> {
    let (f_t, g_t) = problem.full_eval(x_t)?;
    let f_prev = problem.full_value(x_prev)?;
    let f_star = problem.full_value(x_star)?;
    let inner = dot(&g_t, &sub(x_t, x_prev));
    let lhs = f_t - f_star + lambda * inner;
    let bregman_prev = f_prev - f_t - dot(&g_t, &sub(x_prev, x_t));
    let rhs = (1.0 + lambda) * (f_t - f_star) - lambda * (f_prev - f_star) + lambda * bregman_prev;
    Ok((lhs - rhs).abs())
}

/// Both sides of `E[(X)₊² / Y] ≥ (E X)₊² / E Y` for a uniform discrete
/// distribution over `samples` (`Y > 0`).
pub fn ratio_expectation_sides(samples: &[(f64, f64)]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("sample list"));
    }
    if samples.iter().any(|&(_, y)| !(y > 0.0)) {
        return Err(Error::InvalidConfig("Y must be positive".into()));
    }
    let k = samples.len() as f64;
    let lhs = samples.iter().map(|&(x, y)| x.max(0.0).powi(2) / y).sum::<f64>() / k;
    let ex = samples.iter().map(|s| s.0).sum::<f64>() / k;
    let ey = samples.iter().map(|s| s.1).sum::<f64>() / k;
    Ok((lhs, ex.max(0.0).powi(2) / ey))
}

/// Whether the inequality holds, up to a relative rounding allowance.
pub fn ratio_expectation_check(samples: &[(f64, f64)]) -> Result<bool> {
    let (lhs, rhs) = ratio_expectation_sides(samples)?;
    Ok(lhs >= rhs - 1e-12 * rhs.abs())
}

/// Running arithmetic mean of iterates.
#[derive(Clone, Debug, Default)]
pub struct CesaroAverage {
    mean: Vec<f64>,
    count: u64,
}

impl CesaroAverage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: &[f64]) {
        if self.count == 0 {
            self.mean = x.to_vec();
        } else {
            let w = 1.0 / (self.count + 1) as f64;
            for (m, v) in self.mean.iter_mut().zip(x) {
                *m += w * (v - *m);
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Option<&[f64]> {
        (self.count > 0).then_some(self.mean.as_slice())
    }
}

pub fn cesaro_average(iterates: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut avg = CesaroAverage::new();
    iterates.iter().for_each(|x| avg.push(x));
    avg.mean()
        .map(<[f64]>::to_vec)
        .ok_or(Error::Empty("iterate sequence"))
}

impl ReferenceSolution {
    pub fn write(&self, path: &Path) -> Result<()> {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        let text = format!(
            "# reference solution (best iterate of the full-batch oracle)\n\
             x_star {}\nf_star {}\nf_i_star {}\nsigma_sq {}\nsigma_hat_sq {}\n\
             lipschitz {}\nlipschitz_exact {}\ndist0 {}\niterations {}\n",
            join(&self.x_star),
            self.f_star,
            join(&self.f_i_star),
            self.sigma_sq,
            self.sigma_hat_sq,
            self.lipschitz,
            self.lipschitz_exact,
            self.dist0,
            self.iterations,
        );
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut fields = std::collections::HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            if fields.insert(key.to_string(), (idx + 1, rest.trim().to_string())).is_some() {
                return Err(Error::parse(path, idx + 1, format!("duplicate key `{key}`")));
            }
        }
        let mut take = |key: &str| {
            fields
                .remove(key)
                .ok_or_else(|| Error::parse(path, 0, format!("missing key `{key}`")))
        };
        let scalar = |(line, v): (usize, String)| {
            v.parse::<f64>()
                .map_err(|e| Error::parse(path, line, format!("bad number `{v}`: {e}")))
        };
        let vector = |(line, v): (usize, String)| {
            v.split_whitespace()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::parse(path, line, format!("bad number `{s}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()
        };
        let x_star = vector(take("x_star")?)?;
        let f_star = scalar(take("f_star")?)?;
        let f_i_star = vector(take("f_i_star")?)?;
        let sigma_sq = scalar(take("sigma_sq")?)?;
        let sigma_hat_sq = scalar(take("sigma_hat_sq")?)?;
        let lipschitz = scalar(take("lipschitz")?)?;
        let (line, exact) = take("lipschitz_exact")?;
        let lipschitz_exact = exact
            .parse::<bool>()
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        let dist0 = scalar(take("dist0")?)?;
        let (line, iters) = take("iterations")?;
        let iterations = iters
            .parse::<usize>()
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        if let Some((key, (line, _))) = fields.into_iter().next() {
            return Err(Error::parse(path, line, format!("unknown key `{key}`")));
        }
        Ok(ReferenceSolution {
            x_star,
            f_star,
            f_i_star,
            sigma_sq,
            sigma_hat_sq,
            lipschitz,
            lipschitz_exact,
            dist0,
            iterations,
        })
    }
}
