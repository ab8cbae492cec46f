//! Linear operators used as the composition map `B` in `g(Bx)`.
//!
//! All maps are immutable after construction; `apply` and
//! `adjoint_apply` are pure, so a map can be shared freely across
//! concurrent solver runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::vecmath::{dot, norm2};

/// Default power-iteration length for [`LinearMap::spectral_bound`].
pub const DEFAULT_POWER_ITERS: usize = 100;
/// Fixed seed so step-size validation does not depend on the run seed.
pub const DEFAULT_POWER_SEED: u64 = 7;
/// Inflation applied to the power-iteration estimate so that
/// `lambda = 1 / bound` stays admissible despite estimation error.
pub const SPECTRAL_SAFETY: f64 = 1.01;

#[derive(Debug, Error)]
pub enum LinOpError {
    #[error("dimension mismatch: map expects input of length {expected}, got {actual}")]
    InputDim { expected: usize, actual: usize },
    #[error("dimension mismatch: map expects output-side vector of length {expected}, got {actual}")]
    OutputDim { expected: usize, actual: usize },
    #[error("matrix dimensions must be positive ({rows}x{cols})")]
    EmptyShape { rows: usize, cols: usize },
    #[error("matrix data length {got} does not match {rows}x{cols}")]
    DataLen { rows: usize, cols: usize, got: usize },
    #[error("stacked map: top block has input dim {top}, identity block has dim {dim}")]
    StackedDim { top: usize, dim: usize },
    #[error("matrix file parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Dense row-major matrix. Small problems only; the structured maps
/// below stay matrix-free.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinOpError> {
        if rows == 0 || cols == 0 {
            return Err(LinOpError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinOpError::DataLen { rows, cols, got: data.len() });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, LinOpError> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, LinOpError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            if row.len() != c {
                return Err(LinOpError::DataLen { rows: r, cols: c, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    /// Plain-text loader: first line `rows cols`, then `rows` lines of
    /// whitespace-separated decimals.
    pub fn from_text(text: &str) -> Result<Self, LinOpError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| LinOpError::Parse { line: 1, reason: "empty file".into() })?;
        let mut it = header.split_whitespace();
        let parse_dim = |tok: Option<&str>| -> Result<usize, LinOpError> {
            tok.and_then(|t| t.parse().ok())
                .ok_or_else(|| LinOpError::Parse { line: 1, reason: "expected `rows cols` header".into() })
        };
        let rows = parse_dim(it.next())?;
        let cols = parse_dim(it.next())?;
        let mut data = Vec::with_capacity(rows * cols);
        let mut filled = 0usize;
        for (idx, line) in lines {
            if filled == rows {
                break;
            }
            let lineno = idx + 1;
            let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let vals = vals.map_err(|e| LinOpError::Parse { line: lineno, reason: e.to_string() })?;
            if vals.len() != cols {
                return Err(LinOpError::Parse {
                    line: lineno,
                    reason: format!("expected {cols} values, got {}", vals.len()),
                });
            }
            data.extend_from_slice(&vals);
            filled += 1;
        }
        if filled != rows {
            return Err(LinOpError::Parse {
                line: filled + 2,
                reason: format!("expected {rows} rows, got {filled}"),
            });
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            if vi != 0.0 {
                for (o, a) in out.iter_mut().zip(self.row(i)) {
                    *o += vi * a;
                }
            }
        }
        out
    }
}

/// The operator `B` of the composite term `g(Bx)`.
///
/// `apply` maps `R^in_dim -> R^out_dim`; `adjoint_apply` maps back and
/// satisfies `<Bx, v> = <x, B^T v>` for all `x`, `v`.
#[derive(Debug, Clone)]
pub enum LinearMap {
    Identity { dim: usize },
    Dense(DenseMatrix),
    /// Forward differences of a `height x width` image, Neumann boundary
    /// (zero difference on the last row/column). Output stacks all
    /// horizontal differences first, then all vertical, both in
    /// row-major pixel order, so `out_dim = 2 * height * width`.
    Grad2D { height: usize, width: usize },
    /// `B = [G; I]`: the top block followed by an identity block.
    Stacked { top: Box<LinearMap>, dim: usize },
}

/// Result of [`LinearMap::spectral_bound`]. `value` already includes the
/// safety inflation; when `zero_operator` is set the caller must not
/// divide by it.
#[derive(Debug, Clone, Copy)]
pub struct SpectralEstimate {
    pub value: f64,
    pub zero_operator: bool,
}

impl LinearMap {
    pub fn identity(dim: usize) -> Result<Self, LinOpError> {
        if dim == 0 {
            return Err(LinOpError::EmptyShape { rows: dim, cols: dim });
        }
        Ok(LinearMap::Identity { dim })
    }

    pub fn dense(m: DenseMatrix) -> Self {
        LinearMap::Dense(m)
    }

    pub fn grad2d(height: usize, width: usize) -> Result<Self, LinOpError> {
        if height == 0 || width == 0 {
            return Err(LinOpError::EmptyShape { rows: height, cols: width });
        }
        Ok(LinearMap::Grad2D { height, width })
    }

    pub fn stacked(top: LinearMap, dim: usize) -> Result<Self, LinOpError> {
        if top.in_dim() != dim {
            return Err(LinOpError::StackedDim { top: top.in_dim(), dim });
        }
        Ok(LinearMap::Stacked { top: Box::new(top), dim })
    }

    pub fn in_dim(&self) -> usize {
        match self {
            LinearMap::Identity { dim } => *dim,
            LinearMap::Dense(m) => m.cols(),
            LinearMap::Grad2D { height, width } => height * width,
            LinearMap::Stacked { dim, .. } => *dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LinearMap::Identity { dim } => *dim,
            LinearMap::Dense(m) => m.rows(),
            LinearMap::Grad2D { height, width } => 2 * height * width,
            LinearMap::Stacked { top, dim } => top.out_dim() + dim,
        }
    }

    /// True when `B B^T` is exactly the identity, which lets step-size
    /// validation drop the dual strong-convexity term.
    pub fn is_identity_bbt(&self) -> bool {
        matches!(self, LinearMap::Identity { .. })
    }

    /// Exact `rho_max(B B^T)` when it is known in closed form, so that
    /// validation does not reject the boundary step `lambda = 1` on
    /// identity maps because of the safety inflation.
    pub fn exact_rho_max(&self) -> Option<f64> {
        match self {
            LinearMap::Identity { .. } => Some(1.0),
            _ => None,
        }
    }

    /// Computes `B x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, LinOpError> {
        if x.len() != self.in_dim() {
            return Err(LinOpError::InputDim { expected: self.in_dim(), actual: x.len() });
        }
        Ok(match self {
            LinearMap::Identity { .. } => x.to_vec(),
            LinearMap::Dense(m) => m.matvec(x),
            LinearMap::Grad2D { height, width } => {
                let (h, w) = (*height, *width);
                let hw = h * w;
                let mut out = vec![0.0; 2 * hw];
                for i in 0..h {
                    for j in 0..w {
                        let p = i * w + j;
                        if j + 1 < w {
                            out[p] = x[p + 1] - x[p];
                        }
                        if i + 1 < h {
                            out[hw + p] = x[p + w] - x[p];
                        }
                    }
                }
                out
            }
            LinearMap::Stacked { top, .. } => {
                let mut out = top.apply(x)?;
                out.extend_from_slice(x);
                out
            }
        })
    }

    /// Computes `B^T v`.
    pub fn adjoint_apply(&self, v: &[f64]) -> Result<Vec<f64>, LinOpError> {
        if v.len() != self.out_dim() {
            return Err(LinOpError::OutputDim { expected: self.out_dim(), actual: v.len() });
        }
        Ok(match self {
            LinearMap::Identity { .. } => v.to_vec(),
            LinearMap::Dense(m) => m.matvec_t(v),
            LinearMap::Grad2D { height, width } => {
                let (h, w) = (*height, *width);
                let hw = h * w;
                let mut out = vec![0.0; hw];
                for i in 0..h {
                    for j in 0..w {
                        let p = i * w + j;
                        if j + 1 < w {
                            let c = v[p];
                            out[p] -= c;
                            out[p + 1] += c;
                        }
                        if i + 1 < h {
                            let c = v[hw + p];
                            out[p] -= c;
                            out[p + w] += c;
                        }
                    }
                }
                out
            }
            LinearMap::Stacked { top, dim } => {
                let r_top = top.out_dim();
                let mut out = top.adjoint_apply(&v[..r_top])?;
                for (o, tail) in out.iter_mut().zip(&v[r_top..r_top + dim]) {
                    *o += tail;
                }
                out
            }
        })
    }

    /// Estimates `rho_max(B B^T)` by power iteration on `v -> B(B^T v)`
    /// and inflates the result by [`SPECTRAL_SAFETY`], so that
    /// `lambda = 1 / value` always satisfies the step-size condition.
    /// Deterministic for a given seed.
    pub fn spectral_bound(&self, iters: usize, seed: u64) -> SpectralEstimate {
        assert!(iters >= 1, "power iteration needs at least one step");
        let r = self.out_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nv = norm2(&v);
        if nv == 0.0 {
            v[0] = 1.0;
        } else {
            for c in v.iter_mut() {
                *c /= nv;
            }
        }
        let mut lam = 0.0;
        for _ in 0..iters {
            let bt = match self.adjoint_apply(&v) {
                Ok(x) => x,
                Err(_) => unreachable!("dims are internally consistent"),
            };
            let w = self.apply(&bt).expect("dims are internally consistent");
            let nw = norm2(&w);
            if nw == 0.0 {
                return SpectralEstimate { value: 0.0, zero_operator: true };
            }
            lam = dot(&v, &w); // Rayleigh quotient, v is unit
            for (vc, wc) in v.iter_mut().zip(&w) {
                *vc = wc / nw;
            }
        }
        SpectralEstimate { value: lam * SPECTRAL_SAFETY, zero_operator: false }
    }
}
