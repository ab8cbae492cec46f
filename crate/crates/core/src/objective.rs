//! Finite-sum smooth part `f = (1/n) sum_i f_i` with its three gradient
//! oracles: per-sample, full batch, and the SVRG-corrected estimator.
//!
//! Sample sums always reduce in ascending index order so that full-batch
//! runs are bitwise reproducible.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linops::DenseMatrix;
use crate::vecmath::{axpy, dot, scale};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("sample index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("labels must be +1 or -1, sample {index} has {value}")]
    BadLabel { index: usize, value: f64 },
    #[error("ridge weight must be positive, got {0}")]
    BadRidge(f64),
    #[error("sample matrix has {rows} rows but {labels} targets")]
    TargetLen { rows: usize, labels: usize },
    #[error("batch size must divide n (n = {n}, b = {b})")]
    BatchDoesNotDivide { n: usize, b: usize },
    #[error("batch size must be in 1..=n (n = {n}, b = {b})")]
    BatchOutOfRange { n: usize, b: usize },
    #[error("block index {block} out of range, scheme has {blocks} blocks")]
    BlockOutOfRange { block: usize, blocks: usize },
    #[error("variance constants need n >= 2, got n = {0}")]
    TooFewSamples(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FiniteSumKind {
    /// f_i(x) = 1/2 (a_i^T x - b_i)^2
    LeastSquares,
    /// f_i(x) = log(1 + exp(-b_i a_i^T x)), labels in {-1, +1}
    Logistic,
    /// logistic plus a per-sample ridge term `ridge * ||x||^2`, which
    /// makes f strongly convex with modulus `2 * ridge`.
    RidgeLogistic { ridge: f64 },
}

/// An immutable finite sum over the rows of a sample matrix.
#[derive(Debug, Clone)]
pub struct FiniteSum {
    kind: FiniteSumKind,
    samples: DenseMatrix,
    targets: Vec<f64>,
}

impl FiniteSum {
    pub fn least_squares(samples: DenseMatrix, targets: Vec<f64>) -> Result<Self, ObjectiveError> {
        Self::new(FiniteSumKind::LeastSquares, samples, targets)
    }

    pub fn logistic(samples: DenseMatrix, labels: Vec<f64>) -> Result<Self, ObjectiveError> {
        check_labels(&labels)?;
        Self::new(FiniteSumKind::Logistic, samples, labels)
    }

    pub fn ridge_logistic(
        samples: DenseMatrix,
        labels: Vec<f64>,
        ridge: f64,
    ) -> Result<Self, ObjectiveError> {
        if ridge <= 0.0 {
            return Err(ObjectiveError::BadRidge(ridge));
        }
        check_labels(&labels)?;
        Self::new(FiniteSumKind::RidgeLogistic { ridge }, samples, labels)
    }

    fn new(kind: FiniteSumKind, samples: DenseMatrix, targets: Vec<f64>) -> Result<Self, ObjectiveError> {
        if samples.rows() != targets.len() {
            return Err(ObjectiveError::TargetLen { rows: samples.rows(), labels: targets.len() });
        }
        Ok(FiniteSum { kind, samples, targets })
    }

    pub fn kind(&self) -> FiniteSumKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.samples.rows()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn sample_row(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    /// Permutes samples once with a seeded Fisher-Yates shuffle, so that
    /// the contiguous batch partition becomes a random partition.
    pub fn shuffle_samples(&mut self, seed: u64) {
        let n = self.n();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        let mut targets = Vec::with_capacity(n);
        for &i in &order {
            data.extend_from_slice(self.samples.row(i));
            targets.push(self.targets[i]);
        }
        self.samples = DenseMatrix::new(n, d, data).expect("shape preserved");
        self.targets = targets;
    }

    fn check_index(&self, i: usize) -> Result<(), ObjectiveError> {
        if i >= self.n() {
            return Err(ObjectiveError::IndexOutOfRange { index: i, n: self.n() });
        }
        Ok(())
    }

    /// f_i(x).
    pub fn sample_value(&self, i: usize, x: &[f64]) -> Result<f64, ObjectiveError> {
        self.check_index(i)?;
        let a = self.samples.row(i);
        let t = self.targets[i];
        Ok(match self.kind {
            FiniteSumKind::LeastSquares => {
                let r = dot(a, x) - t;
                0.5 * r * r
            }
            FiniteSumKind::Logistic => logistic_loss(t * dot(a, x)),
            FiniteSumKind::RidgeLogistic { ridge } => {
                logistic_loss(t * dot(a, x)) + ridge * dot(x, x)
            }
        })
    }

    /// f(x) = (1/n) sum f_i(x), ascending index order.
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n() {
            acc += self.sample_value(i, x).expect("index in range");
        }
        acc / self.n() as f64
    }

    /// The scalar s with grad f_i(x) = s * a_i (plus the ridge term for
    /// ridge-logistic, which is handled separately by the callers).
    fn grad_scale(&self, i: usize, x: &[f64]) -> f64 {
        let a = self.samples.row(i);
        let t = self.targets[i];
        match self.kind {
            FiniteSumKind::LeastSquares => dot(a, x) - t,
            FiniteSumKind::Logistic | FiniteSumKind::RidgeLogistic { .. } => {
                -t * sigmoid(-t * dot(a, x))
            }
        }
    }

    fn ridge(&self) -> f64 {
        match self.kind {
            FiniteSumKind::RidgeLogistic { ridge } => ridge,
            _ => 0.0,
        }
    }

    /// grad f_i(x).
    pub fn grad_sample(&self, i: usize, x: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check_index(i)?;
        let s = self.grad_scale(i, x);
        let mut g: Vec<f64> = self.samples.row(i).iter().map(|&a| s * a).collect();
        let ridge = self.ridge();
        if ridge > 0.0 {
            axpy(&mut g, 2.0 * ridge, x);
        }
        Ok(g)
    }

    /// grad f(x), the exact average of the per-sample gradients summed in
    /// ascending index order.
    pub fn full_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for i in 0..self.n() {
            let s = self.grad_scale(i, x);
            axpy(&mut acc, s, self.samples.row(i));
        }
        scale(&mut acc, 1.0 / self.n() as f64);
        let ridge = self.ridge();
        if ridge > 0.0 {
            axpy(&mut acc, 2.0 * ridge, x);
        }
        acc
    }

    /// Per-sample Lipschitz constants of grad f_i.
    pub fn lipschitz(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                let sq = dot(self.samples.row(i), self.samples.row(i));
                match self.kind {
                    FiniteSumKind::LeastSquares => sq,
                    FiniteSumKind::Logistic => sq / 4.0,
                    FiniteSumKind::RidgeLogistic { ridge } => sq / 4.0 + 2.0 * ridge,
                }
            })
            .collect()
    }

    pub fn l_max(&self) -> f64 {
        self.lipschitz().into_iter().fold(0.0, f64::max)
    }

    /// Strong-convexity modulus of f (`2 * ridge` for ridge-logistic,
    /// zero otherwise; a least-squares Gram term is not credited).
    pub fn strong_convexity(&self) -> f64 {
        2.0 * self.ridge()
    }

    /// Bregman distance D_f(x, x_ref) = f(x) - f(x_ref) - <grad f(x_ref), x - x_ref>.
    pub fn bregman(&self, x: &[f64], x_ref: &[f64]) -> f64 {
        let g = self.full_grad(x_ref);
        let mut inner = 0.0;
        for j in 0..self.dim() {
            inner += g[j] * (x[j] - x_ref[j]);
        }
        self.value(x) - self.value(x_ref) - inner
    }
}

fn check_labels(labels: &[f64]) -> Result<(), ObjectiveError> {
    for (i, &l) in labels.iter().enumerate() {
        if l != 1.0 && l != -1.0 {
            return Err(ObjectiveError::BadLabel { index: i, value: l });
        }
    }
    Ok(())
}

/// log(1 + exp(-t)) in the overflow-stable form log1p(exp(-|t|)) + max(0, -t).
fn logistic_loss(t: f64) -> f64 {
    (-t.abs()).exp().ln_1p() + (-t).max(0.0)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fixed disjoint partition of `{0..n}` into `n/b` contiguous blocks of
/// size `b`. Construction fails unless `b` divides `n`: padding would
/// silently change the variance constant C(b).
#[derive(Debug, Clone, Copy)]
pub struct BatchScheme {
    n: usize,
    batch: usize,
}

impl BatchScheme {
    pub fn new(n: usize, batch: usize) -> Result<Self, ObjectiveError> {
        if batch == 0 || batch > n {
            return Err(ObjectiveError::BatchOutOfRange { n, b: batch });
        }
        if n % batch != 0 {
            return Err(ObjectiveError::BatchDoesNotDivide { n, b: batch });
        }
        Ok(BatchScheme { n, batch })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn num_blocks(&self) -> usize {
        self.n / self.batch
    }

    pub fn block_range(&self, block: usize) -> Result<std::ops::Range<usize>, ObjectiveError> {
        if block >= self.num_blocks() {
            return Err(ObjectiveError::BlockOutOfRange { block, blocks: self.num_blocks() });
        }
        Ok(block * self.batch..(block + 1) * self.batch)
    }
}

/// SVRG snapshot: the anchor point and the full gradient there, computed
/// exactly at construction.
#[derive(Debug, Clone)]
pub struct SvrgAnchor {
    snapshot: Vec<f64>,
    grad: Vec<f64>,
}

impl SvrgAnchor {
    pub fn new(f: &FiniteSum, snapshot: Vec<f64>) -> Self {
        let grad = f.full_grad(&snapshot);
        SvrgAnchor { snapshot, grad }
    }

    pub fn snapshot(&self) -> &[f64] {
        &self.snapshot
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }
}

/// Plain mini-batch gradient over one block of the partition (no
/// variance reduction). Collapses to the `full_grad` path at `b = n`.
pub fn batch_grad(
    f: &FiniteSum,
    scheme: &BatchScheme,
    block: usize,
    x: &[f64],
) -> Result<Vec<f64>, ObjectiveError> {
    if scheme.batch() == f.n() {
        scheme.block_range(block)?;
        return Ok(f.full_grad(x));
    }
    let range = scheme.block_range(block)?;
    let b = scheme.batch() as f64;
    let mut acc = vec![0.0; f.dim()];
    for i in range {
        let s = f.grad_scale(i, x);
        axpy(&mut acc, s, f.sample_row(i));
    }
    scale(&mut acc, 1.0 / b);
    let ridge = f.ridge();
    if ridge > 0.0 {
        axpy(&mut acc, 2.0 * ridge, x);
    }
    Ok(acc)
}

/// The SVRG estimator
/// `(1/b) sum_{i in I_k} (grad f_i(x) - grad f_i(snapshot)) + grad f(snapshot)`.
///
/// Unbiased over a uniformly chosen block; at `b = n` the correction
/// telescopes away and the estimator collapses to the exact `full_grad`
/// path.
pub fn svrg_grad(
    f: &FiniteSum,
    anchor: &SvrgAnchor,
    scheme: &BatchScheme,
    block: usize,
    x: &[f64],
) -> Result<Vec<f64>, ObjectiveError> {
    if scheme.batch() == f.n() {
        scheme.block_range(block)?;
        return Ok(f.full_grad(x));
    }
    let range = scheme.block_range(block)?;
    let b = scheme.batch() as f64;
    let mut acc = vec![0.0; f.dim()];
    for i in range {
        let s = f.grad_scale(i, x) - f.grad_scale(i, anchor.snapshot());
        axpy(&mut acc, s, f.sample_row(i));
    }
    scale(&mut acc, 1.0 / b);
    let ridge = f.ridge();
    if ridge > 0.0 {
        for j in 0..f.dim() {
            acc[j] += 2.0 * ridge * (x[j] - anchor.snapshot()[j]);
        }
    }
    for (a, z) in acc.iter_mut().zip(anchor.grad()) {
        *a += z;
    }
    Ok(acc)
}

/// Batch-variance constants: `c_b = (n-b)/(b(n-1))`, `m = 4 L_max c_b`
/// and `L_max = max_i L_i`. With this convention the variance of the
/// SVRG estimator is bounded by `m * (D_f(x, x*) + D_f(snapshot, x*))`.
#[derive(Debug, Clone, Copy)]
pub struct VarianceConstants {
    pub c_b: f64,
    pub m: f64,
    pub l_max: f64,
}

pub fn variance_constants(
    f: &FiniteSum,
    scheme: &BatchScheme,
) -> Result<VarianceConstants, ObjectiveError> {
    let n = f.n();
    if n < 2 {
        return Err(ObjectiveError::TooFewSamples(n));
    }
    let b = scheme.batch();
    let c_b = (n - b) as f64 / (b as f64 * (n - 1) as f64);
    let l_max = f.l_max();
    Ok(VarianceConstants { c_b, m: 4.0 * l_max * c_b, l_max })
}
