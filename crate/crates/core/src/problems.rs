//! Synthetic nonsmooth finite-sum instances.
//!
//! The objective is `f(x) = (1/n) Σ f_i(x)` over the rows `A_i` of a dense
//! feature matrix with targets `b_i`. Two component losses are provided:
//!
//! * [`LossKind::AbsQuad`]: `f_i(x) = |⟨A_i,x⟩² − b_i|` (phase retrieval),
//! * [`LossKind::Hinge`]: `f_i(x) = max(0, 1 − b_i⟨A_i,x⟩)` (SVM).
//!
//! Both are nonnegative, so the per-sample lower bound `ℓ_i = 0` is valid.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, norm_sq};

/// RNG stream used for instance data.
pub const DATA_STREAM: u64 = 0;
/// RNG stream used for the starting point.
pub const INIT_STREAM: u64 = 1;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    AbsQuad,
    Hinge,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::AbsQuad => "abs_quad",
            LossKind::Hinge => "hinge",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs_quad" | "phase_retrieval" => Ok(LossKind::AbsQuad),
            "hinge" | "svm" => Ok(LossKind::Hinge),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss `{other}` (expected abs_quad or hinge)"
            ))),
        }
    }
}

/// Feature matrix (row-major, `n × d`) and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    a: Vec<f64>,
    b: Vec<f64>,
    n: usize,
    d: usize,
    seed: u64,
}

impl Dataset {
    pub fn new(a: Vec<f64>, b: Vec<f64>, n: usize, d: usize, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidDimensions { n, d });
        }
        if a.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                found: a.len(),
            });
        }
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.len(),
            });
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("dataset entries must be finite".into()));
        }
        Ok(Dataset { a, b, n, d, seed })
    }

    /// Every entry of `A` (row by row) and then of `b` is an independent
    /// standard normal draw from a ChaCha8 stream seeded by `seed`.
    pub fn generate_gaussian(n: usize, d: usize, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidDimensions { n, d });
        }
        let mut rng = stream_rng(seed, DATA_STREAM);
        let a: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        Dataset::new(a, b, n, d, seed)
    }

    /// Linearly separable hinge instance with labels in `{±1}`.
    ///
    /// Rows are Gaussian, shifted along a random unit direction `w` so that
    /// `b_i⟨A_i, w⟩ ≥ margin`. Returns the instance together with
    /// `x_sep = w / margin`, which satisfies `b_i⟨A_i, x_sep⟩ ≥ 1` for every
    /// sample (zero hinge loss everywhere).
    pub fn generate_separable(n: usize, d: usize, seed: u64, margin: f64) -> Result<(Self, Vec<f64>)> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidDimensions { n, d });
        }
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(Error::InvalidConfig(format!("margin must be > 0, got {margin}")));
        }
        let mut rng = stream_rng(seed, DATA_STREAM);
        let mut w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let w_norm = norm(&w);
        w.iter_mut().for_each(|v| *v /= w_norm);

        let mut a: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let mut b = Vec::with_capacity(n);
        for row in a.chunks_exact_mut(d) {
            let proj = dot(row, &w);
            let label = if proj >= 0.0 { 1.0 } else { -1.0 };
            for (v, wi) in row.iter_mut().zip(&w) {
                *v += label * margin * wi;
            }
            b.push(label);
        }
        let x_sep = w.iter().map(|v| v / margin).collect();
        Ok((Dataset::new(a, b, n, d, seed)?, x_sep))
    }

    /// Replaces every target by its sign (`0` maps to `+1`).
    pub fn binarize_targets(&mut self) {
        for v in &mut self.b {
            *v = if *v >= 0.0 { 1.0 } else { -1.0 };
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.d..(i + 1) * self.d]
    }

    pub fn targets(&self) -> &[f64] {
        &self.b
    }

    /// Writes the plain-text instance file: a header `n d seed kind`, `n`
    /// feature rows, then one row of `n` targets.
    pub fn write(&self, path: &Path, kind: LossKind) -> Result<()> {
        let mut out = String::with_capacity(self.a.len() * 22);
        out.push_str(&format!("{} {} {} {}\n", self.n, self.d, self.seed, kind));
        for i in 0..self.n {
            push_row(&mut out, self.row(i));
        }
        push_row(&mut out, &self.b);
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<(Self, LossKind)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(path, 1, "header must be `n d seed kind`"));
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::parse(path, 1, format!("bad header field `{s}`: {e}")))
        };
        let n = parse_usize(fields[0])?;
        let d = parse_usize(fields[1])?;
        let seed = fields[2]
            .parse::<u64>()
            .map_err(|e| Error::parse(path, 1, format!("bad seed: {e}")))?;
        let kind: LossKind = fields[3].parse()?;

        let mut a = Vec::with_capacity(n * d);
        let mut b = Vec::new();
        for row in 0..=n {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, row + 2, "unexpected end of file"))?;
            let values = parse_row(path, idx + 1, line)?;
            let expected = if row < n { d } else { n };
            if values.len() != expected {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    format!("expected {expected} values, found {}", values.len()),
                ));
            }
            if row < n {
                a.extend(values);
            } else {
                b = values;
            }
        }
        if let Some((idx, _)) = lines.next() {
            return Err(Error::parse(path, idx + 1, "trailing data after targets"));
        }
        Ok((Dataset::new(a, b, n, d, seed)?, kind))
    }
}

fn push_row(out: &mut String, values: &[f64]) {
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        out.push_str(&v.to_string());
    }
    out.push('\n');
}

fn parse_row(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::parse(path, line_no, format!("bad number `{s}`: {e}")))
        })
        .collect()
}

/// Per-sample lower bounds `ℓ_i ≤ inf_x f_i(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerBounds(Vec<f64>);

impl LowerBounds {
    pub fn zeros(n: usize) -> Self {
        LowerBounds(vec![0.0; n])
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("lower bounds must be finite".into()));
        }
        Ok(LowerBounds(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A dataset paired with its component loss and lower bounds.
#[derive(Clone, Debug)]
pub struct Problem {
    data: Dataset,
    kind: LossKind,
    lower: LowerBounds,
}

impl Problem {
    /// Uses the default lower bounds `ℓ_i = 0`.
    pub fn new(data: Dataset, kind: LossKind) -> Self {
        let lower = LowerBounds::zeros(data.n());
        Problem { data, kind, lower }
    }

    pub fn with_lower_bounds(data: Dataset, kind: LossKind, lower: LowerBounds) -> Result<Self> {
        if lower.0.len() != data.n() {
            return Err(Error::DimensionMismatch {
                expected: data.n(),
                found: lower.0.len(),
            });
        }
        Ok(Problem { data, kind, lower })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn lower(&self) -> &LowerBounds {
        &self.lower
    }

    pub fn n(&self) -> usize {
        self.data.n
    }

    pub fn d(&self) -> usize {
        self.data.d
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.data.n {
            return Err(Error::IndexOutOfRange { index: i, n: self.data.n });
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.data.d {
            return Err(Error::DimensionMismatch {
                expected: self.data.d,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &[usize]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        batch.iter().try_for_each(|&i| self.check_index(i))
    }

    /// Value of `f_i` and the scalar `s` with `s · A_i ∈ ∂f_i(x)`.
    #[inline]
    pub(crate) fn value_and_coef(&self, i: usize, x: &[f64]) -> (f64, f64) {
        let inner = dot(self.data.row(i), x);
        let bi = self.data.b[i];
        match self.kind {
            LossKind::AbsQuad => {
                let gap = inner * inner - bi;
                let sign = if gap > 0.0 {
                    1.0
                } else if gap < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (gap.abs(), 2.0 * inner * sign)
            }
            LossKind::Hinge => {
                let margin = bi * inner;
                if margin <= 1.0 {
                    ((1.0 - margin).max(0.0), -bi)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    pub fn loss_value(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_index(i)?;
        self.check_point(x)?;
        Ok(self.value_and_coef(i, x).0)
    }

    pub fn loss_subgrad(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_index(i)?;
        self.check_point(x)?;
        let (_, coef) = self.value_and_coef(i, x);
        Ok(self.data.row(i).iter().map(|a| coef * a).collect())
    }

    /// Batch-mean value, written subgradient mean into `grad`. No bounds checks.
    pub(crate) fn eval_batch_into(&self, batch: &[usize], x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / batch.len() as f64;
        let mut value = 0.0;
        for &i in batch {
            let (v, coef) = self.value_and_coef(i, x);
            value += v;
            if coef != 0.0 {
                let c = coef * scale;
                for (g, a) in grad.iter_mut().zip(self.data.row(i)) {
                    *g += c * a;
                }
            }
        }
        value * scale
    }

    pub(crate) fn value_batch_unchecked(&self, batch: &[usize], x: &[f64]) -> f64 {
        batch.iter().map(|&i| self.value_and_coef(i, x).0).sum::<f64>() / batch.len() as f64
    }

    pub(crate) fn full_value_unchecked(&self, x: &[f64]) -> f64 {
        (0..self.data.n).map(|i| self.value_and_coef(i, x).0).sum::<f64>() / self.data.n as f64
    }

    /// Mean of `f_i(x)` over the batch.
    pub fn batch_value(&self, batch: &[usize], x: &[f64]) -> Result<f64> {
        self.check_batch(batch)?;
        self.check_point(x)?;
        Ok(self.value_batch_unchecked(batch, x))
    }

    /// Mean of the per-sample subgradients over the batch.
    pub fn batch_subgrad(&self, batch: &[usize], x: &[f64]) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        self.check_point(x)?;
        let mut grad = vec![0.0; self.data.d];
        self.eval_batch_into(batch, x, &mut grad);
        Ok(grad)
    }

    /// Batch-mean value and subgradient in one pass.
    pub fn batch_eval(&self, batch: &[usize], x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        self.check_point(x)?;
        let mut grad = vec![0.0; self.data.d];
        let value = self.eval_batch_into(batch, x, &mut grad);
        Ok((value, grad))
    }

    /// Mean of `ℓ_i` over the batch.
    pub fn batch_lower(&self, batch: &[usize]) -> Result<f64> {
        self.check_batch(batch)?;
        Ok(self.batch_lower_unchecked(batch))
    }

    pub(crate) fn batch_lower_unchecked(&self, batch: &[usize]) -> f64 {
        batch.iter().map(|&i| self.lower.0[i]).sum::<f64>() / batch.len() as f64
    }

    /// Full objective `f(x)`.
    pub fn full_value(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.full_value_unchecked(x))
    }

    /// Full-batch value and subgradient.
    pub fn full_eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_point(x)?;
        let all: Vec<usize> = (0..self.data.n).collect();
        let mut grad = vec![0.0; self.data.d];
        let value = self.eval_batch_into(&all, x, &mut grad);
        Ok((value, grad))
    }

    /// Lipschitz constant for the bound evaluators.
    ///
    /// Hinge: the exact global bound `max_i |b_i|·‖A_i‖` (probes ignored).
    /// AbsQuad is only locally Lipschitz, so the estimate is the largest
    /// per-sample subgradient norm observed over the probe points.
    pub fn lipschitz_estimate(&self, probes: &[Vec<f64>]) -> Result<f64> {
        if probes.is_empty() {
            return Err(Error::Empty("probe list"));
        }
        probes.iter().try_for_each(|p| self.check_point(p))?;
        let row_norms: Vec<f64> = (0..self.data.n).map(|i| norm(self.data.row(i))).collect();
        let g = match self.kind {
            LossKind::Hinge => row_norms
                .iter()
                .zip(&self.data.b)
                .map(|(r, b)| b.abs() * r)
                .fold(0.0, f64::max),
            LossKind::AbsQuad => probes
                .iter()
                .flat_map(|x| {
                    row_norms
                        .iter()
                        .enumerate()
                        .map(move |(i, r)| self.value_and_coef(i, x).1.abs() * r)
                })
                .fold(0.0, f64::max),
        };
        Ok(g)
    }

    /// Squared norm of the full-batch subgradient at `x`.
    pub(crate) fn full_grad_norm_sq(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let all: Vec<usize> = (0..self.data.n).collect();
        self.eval_batch_into(&all, x, scratch);
        norm_sq(scratch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn single(row: Vec<f64>, b: f64, kind: LossKind) -> Problem {
        let d = row.len();
        Problem::new(Dataset::new(row, vec![b], 1, d, 0).unwrap(), kind)
    }

    #[test]
    fn gaussian_shapes_and_determinism() {
        let inst = Dataset::generate_gaussian(300, 10, 7).unwrap();
        assert_eq!((inst.n(), inst.d()), (300, 10));
        assert_eq!(inst.targets().len(), 300);
        let big = Dataset::generate_gaussian(300, 100, 7).unwrap();
        assert_eq!(big.row(299).len(), 100);

        let a = Dataset::generate_gaussian(1, 1, 42).unwrap();
        let b = Dataset::generate_gaussian(1, 1, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Dataset::generate_gaussian(1, 1, 43).unwrap());
    }

    #[test]
    fn gaussian_rejects_empty_dimensions() {
        assert!(matches!(
            Dataset::generate_gaussian(0, 3, 1),
            Err(Error::InvalidDimensions { n: 0, d: 3 })
        ));
        assert!(Dataset::generate_gaussian(3, 0, 1).is_err());
    }

    #[test]
    fn gaussian_moments_look_standard() {
        let inst = Dataset::generate_gaussian(2000, 10, 3).unwrap();
        let vals: Vec<f64> = (0..2000).flat_map(|i| inst.row(i).to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn loss_value_examples() {
        // Hinge, margin exactly met.
        let p = single(vec![1.0, 0.0], 1.0, LossKind::Hinge);
        assert_eq!(p.loss_value(0, &[1.0, 5.0]).unwrap(), 0.0);
        // AbsQuad, <A,x> = 2, b = 4.
        let p = single(vec![1.0, 0.0], 4.0, LossKind::AbsQuad);
        assert_eq!(p.loss_value(0, &[2.0, 0.0]).unwrap(), 0.0);
        // AbsQuad, <A,x> = 1, b = 3.
        let p = single(vec![1.0, 0.0], 3.0, LossKind::AbsQuad);
        assert_eq!(p.loss_value(0, &[1.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn loss_subgrad_examples() {
        let p = single(vec![1.0, 0.0], 1.0, LossKind::Hinge);
        assert_eq!(p.loss_subgrad(0, &[2.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(p.loss_subgrad(0, &[0.0, 0.0]).unwrap(), vec![-1.0, 0.0]);
        // Indicator includes equality.
        assert_eq!(p.loss_subgrad(0, &[1.0, 0.0]).unwrap(), vec![-1.0, 0.0]);

        let p = single(vec![1.0, 0.0], 4.0, LossKind::AbsQuad);
        assert_eq!(p.loss_subgrad(0, &[2.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        // gap = 9 - 4 > 0: 2·3·(+1)·A
        assert_eq!(p.loss_subgrad(0, &[3.0, 0.0]).unwrap(), vec![6.0, 0.0]);
        // gap = 1 - 4 < 0: 2·1·(−1)·A
        assert_eq!(p.loss_subgrad(0, &[1.0, 0.0]).unwrap(), vec![-2.0, 0.0]);
    }

    #[test]
    fn loss_errors() {
        let p = single(vec![1.0, 0.0], 1.0, LossKind::Hinge);
        assert!(matches!(p.loss_value(1, &[0.0, 0.0]), Err(Error::IndexOutOfRange { index: 1, n: 1 })));
        assert!(matches!(
            p.loss_subgrad(0, &[0.0]),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert!(matches!(p.batch_value(&[], &[0.0, 0.0]), Err(Error::Empty(_))));
        assert!(p.lipschitz_estimate(&[]).is_err());
    }

    #[test]
    fn abs_quad_subgrad_matches_finite_differences() {
        let p = Problem::new(Dataset::generate_gaussian(40, 6, 11).unwrap(), LossKind::AbsQuad);
        let mut rng = stream_rng(5, 9);
        let h = 1e-6;
        for _ in 0..200 {
            let x: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
            let i = rng.random_range(0..40);
            let inner = dot(p.data().row(i), &x);
            if (inner * inner - p.data().targets()[i]).abs() < 1e-3 {
                continue;
            }
            let g = p.loss_subgrad(i, &x).unwrap();
            for k in 0..6 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (p.loss_value(i, &xp).unwrap() - p.loss_value(i, &xm).unwrap()) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-5 * (1.0 + g[k].abs()), "fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn hinge_subgradient_inequality_holds() {
        let p = Problem::new(Dataset::generate_gaussian(50, 8, 2).unwrap(), LossKind::Hinge);
        let mut rng = stream_rng(1, 9);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..8).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let y: Vec<f64> = (0..8).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            for i in 0..50 {
                let fx = p.loss_value(i, &x).unwrap();
                let fy = p.loss_value(i, &y).unwrap();
                let g = p.loss_subgrad(i, &x).unwrap();
                let lin = fx + dot(&g, &crate::linalg::sub(&y, &x));
                assert!(fy >= lin - 1e-12, "i={i}: {fy} < {lin}");
            }
        }
    }

    #[test]
    fn abs_quad_is_not_convex() {
        // f(u) = |u² − 1| at u = 0 has subgradient 0, yet f(1) = 0 < f(0) = 1.
        let p = single(vec![1.0], 1.0, LossKind::AbsQuad);
        let g = p.loss_subgrad(0, &[0.0]).unwrap();
        assert_eq!(g, vec![0.0]);
        let lin = p.loss_value(0, &[0.0]).unwrap() + g[0] * 1.0;
        assert!(p.loss_value(0, &[1.0]).unwrap() < lin);
    }

    #[test]
    fn hinge_subgrad_norm_bounded_by_row() {
        let p = Problem::new(Dataset::generate_gaussian(60, 5, 4).unwrap(), LossKind::Hinge);
        let mut rng = stream_rng(2, 9);
        for _ in 0..200 {
            let x: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
            for i in 0..60 {
                let bound = p.data().targets()[i].abs() * norm(p.data().row(i));
                assert!(norm(&p.loss_subgrad(i, &x).unwrap()) <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn losses_are_nonnegative() {
        for kind in [LossKind::AbsQuad, LossKind::Hinge] {
            let p = Problem::new(Dataset::generate_gaussian(30, 4, 8).unwrap(), kind);
            let mut rng = stream_rng(3, 9);
            for _ in 0..100 {
                let x: Vec<f64> = (0..4).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
                for i in 0..30 {
                    assert!(p.loss_value(i, &x).unwrap() >= p.lower().as_slice()[i]);
                }
            }
        }
    }

    #[test]
    fn batch_means() {
        let p = Problem::new(Dataset::generate_gaussian(20, 3, 9).unwrap(), LossKind::AbsQuad);
        let x = vec![0.3, -0.7, 1.1];
        assert_eq!(p.batch_value(&[4], &x).unwrap(), p.loss_value(4, &x).unwrap());
        assert_eq!(p.batch_subgrad(&[4], &x).unwrap(), p.loss_subgrad(4, &x).unwrap());

        let all: Vec<usize> = (0..20).collect();
        let direct = (0..20).map(|i| p.loss_value(i, &x).unwrap()).sum::<f64>() / 20.0;
        assert!((p.batch_value(&all, &x).unwrap() - direct).abs() < 1e-14);
        assert!((p.full_value(&x).unwrap() - direct).abs() < 1e-14);

        let mut direct_g = vec![0.0; 3];
        for i in 0..20 {
            crate::linalg::axpy(1.0 / 20.0, &p.loss_subgrad(i, &x).unwrap(), &mut direct_g);
        }
        for (a, b) in p.batch_subgrad(&all, &x).unwrap().iter().zip(&direct_g) {
            assert!((a - b).abs() < 1e-13);
        }

        let left: Vec<usize> = (0..10).collect();
        let right: Vec<usize> = (10..20).collect();
        let halves = 0.5 * (p.batch_value(&left, &x).unwrap() + p.batch_value(&right, &x).unwrap());
        assert!((halves - direct).abs() < 1e-14);
        assert_eq!(p.batch_lower(&left).unwrap(), 0.0);
    }

    #[test]
    fn lipschitz_hinge_examples() {
        let p = single(vec![3.0, 4.0], 1.0, LossKind::Hinge);
        assert_eq!(p.lipschitz_estimate(&[vec![0.0, 0.0]]).unwrap(), 5.0);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let data = Dataset::new(vec![1.0, 0.0, 0.0, 1.0, s, s], vec![1.0, -1.0, 1.0], 3, 2, 0).unwrap();
        let p = Problem::new(data, LossKind::Hinge);
        assert!((p.lipschitz_estimate(&[vec![0.0, 0.0]]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lipschitz_abs_quad_matches_brute_force() {
        let p = Problem::new(Dataset::generate_gaussian(30, 4, 12).unwrap(), LossKind::AbsQuad);
        let mut rng = stream_rng(4, 9);
        let probes: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut brute: f64 = 0.0;
        for x in &probes {
            for i in 0..30 {
                brute = brute.max(norm(&p.loss_subgrad(i, x).unwrap()));
            }
        }
        let est = p.lipschitz_estimate(&probes).unwrap();
        assert!((est - brute).abs() <= 1e-12 * brute);
    }

    #[test]
    fn separable_instance_has_zero_loss_at_witness() {
        let (data, x_sep) = Dataset::generate_separable(200, 20, 5, 1.0).unwrap();
        assert!(data.targets().iter().all(|b| b.abs() == 1.0));
        let p = Problem::new(data, LossKind::Hinge);
        assert_eq!(p.full_value(&x_sep).unwrap(), 0.0);
    }

    #[test]
    fn binarize_maps_to_signs() {
        let mut data = Dataset::new(vec![1.0; 3], vec![-0.2, 0.0, 3.0], 3, 1, 0).unwrap();
        data.binarize_targets();
        assert_eq!(data.targets(), &[-1.0, 1.0, 1.0]);
    }

    #[test]
    fn instance_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.txt");
        let data = Dataset::generate_gaussian(17, 5, 99).unwrap();
        data.write(&path, LossKind::Hinge).unwrap();
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("17 5 99 hinge\n"));
        let (back, kind) = Dataset::read(&path).unwrap();
        assert_eq!(kind, LossKind::Hinge);
        assert_eq!(back, data);
    }

    #[test]
    fn instance_file_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        fs::write(&path, "2 2 0 hinge\n1 2\n3 4\n").unwrap();
        assert!(matches!(Dataset::read(&path), Err(Error::Parse { .. })));
    }
}
