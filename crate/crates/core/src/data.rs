//! Dataset ingestion (LIBSVM text format), synthetic problem
//! generators, graph-matrix construction and the desk-scale imaging
//! problem (parallel-beam strip projector over an analytic phantom).
//!
//! All generators are pure functions of their seed.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linops::{DenseMatrix, LinearMap};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed feature pair `{token}`")]
    MalformedPair { line: usize, token: String },
    #[error("line {line}: indices not increasing")]
    NonIncreasingIndices { line: usize },
    #[error("line {line}: feature index must be >= 1")]
    ZeroIndex { line: usize },
    #[error("line {line}: label must be a nonzero real")]
    BadLabel { line: usize },
    #[error("line {line}: feature index {index} exceeds declared dimension {dim}")]
    IndexBeyondDim { line: usize, index: usize, dim: usize },
    #[error("empty dataset")]
    Empty,
    #[error("label noise must lie in [0, 0.5), got {0}")]
    BadNoise(f64),
    #[error("graph edge probability must lie in (0, 1], got {0}")]
    BadEdgeProbability(f64),
    #[error("graph matrix needs d >= 2, got {0}")]
    GraphTooSmall(usize),
    #[error("image size {0} not in the supported set {{16, 32, 64}}")]
    BadImageSize(usize),
    #[error("projector needs at least one angle and one ray per angle")]
    EmptyGeometry,
}

/// Sparse sample matrix with labels in {-1, +1}. Feature indices are
/// 1-based as in the text format and strictly increasing within a row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    pub n: usize,
    pub d: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub labels: Vec<f64>,
}

impl SparseDataset {
    /// Densifies into an n x d sample matrix plus label vector.
    pub fn to_dense(&self) -> (DenseMatrix, Vec<f64>) {
        let mut data = vec![0.0; self.n * self.d];
        for (i, row) in self.rows.iter().enumerate() {
            for &(idx, val) in row {
                data[i * self.d + (idx - 1)] = val;
            }
        }
        (
            DenseMatrix::new(self.n, self.d, data).expect("dataset invariants give a valid shape"),
            self.labels.clone(),
        )
    }
}

/// Parses LIBSVM text (`label idx:val idx:val ...` per line, `#`
/// comments and blank lines skipped). Labels map to {-1, +1} by sign;
/// zero labels are rejected. The dimension is the largest index seen.
pub fn parse_libsvm(text: &str) -> Result<SparseDataset, DataError> {
    parse_impl(text, None)
}

/// As [`parse_libsvm`] but with a caller-supplied dimension; indices
/// beyond it are rejected.
pub fn parse_libsvm_with_dim(text: &str, dim: usize) -> Result<SparseDataset, DataError> {
    parse_impl(text, Some(dim))
}

fn parse_impl(text: &str, dim_override: Option<usize>) -> Result<SparseDataset, DataError> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a first token");
        let label: f64 = label_tok.parse().map_err(|_| DataError::BadLabel { line })?;
        if label == 0.0 || !label.is_finite() {
            return Err(DataError::BadLabel { line });
        }
        let mut row = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx_s, val_s) =
                tok.split_once(':').ok_or_else(|| DataError::MalformedPair {
                    line,
                    token: tok.to_string(),
                })?;
            let idx: usize = idx_s.parse().map_err(|_| DataError::MalformedPair {
                line,
                token: tok.to_string(),
            })?;
            let val: f64 = val_s.parse().map_err(|_| DataError::MalformedPair {
                line,
                token: tok.to_string(),
            })?;
            if idx == 0 {
                return Err(DataError::ZeroIndex { line });
            }
            if idx <= prev {
                return Err(DataError::NonIncreasingIndices { line });
            }
            if let Some(d) = dim_override {
                if idx > d {
                    return Err(DataError::IndexBeyondDim { line, index: idx, dim: d });
                }
            }
            prev = idx;
            row.push((idx, val));
        }
        max_index = max_index.max(prev);
        labels.push(if label > 0.0 { 1.0 } else { -1.0 });
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    let d = dim_override.unwrap_or(max_index).max(1);
    Ok(SparseDataset { n: rows.len(), d, rows, labels })
}

/// Canonical text form; `parse_libsvm(serialize_libsvm(ds)) == ds` up to
/// the inferred dimension.
pub fn serialize_libsvm(ds: &SparseDataset) -> String {
    let mut out = String::new();
    for (row, &label) in ds.rows.iter().zip(&ds.labels) {
        out.push_str(if label > 0.0 { "+1" } else { "-1" });
        for &(idx, val) in row {
            write!(out, " {idx}:{val}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

/// Two Gaussian clouds at `+-separation * w/||w||` for a seeded random
/// direction `w`; labels follow the cloud and flip with probability
/// `noise`. Deterministic per seed: two seeds with the same geometry
/// differ only in flipped labels when only `noise` changes.
pub fn gen_synthetic_logistic(
    n: usize,
    d: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<SparseDataset, DataError> {
    if !(0.0..0.5).contains(&noise) {
        return Err(DataError::BadNoise(noise));
    }
    if n == 0 || d == 0 {
        return Err(DataError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    for c in w.iter_mut() {
        *c /= nw.max(1e-300);
    }
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let cloud: f64 = if rng.random_range(0..2u8) == 0 { -1.0 } else { 1.0 };
        let row: Vec<(usize, f64)> = (0..d)
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                (j + 1, cloud * separation * w[j] + z)
            })
            .collect();
        let flip: f64 = rng.random();
        labels.push(if flip < noise { -cloud } else { cloud });
        rows.push(row);
    }
    Ok(SparseDataset { n, d, rows, labels })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphKind {
    /// (d-1) x d chain of forward differences e_i - e_{i+1}.
    Chain,
    /// ceil(p d^2) seeded random pairs (i, j), i < j, each a row
    /// e_i - e_j, deduplicated.
    RandomSparse { p: f64, seed: u64 },
}

/// Builds the graph matrix `G` used as the top block of `B = [G; I]`.
/// Every row has exactly one +1 and one -1, so `G 1 = 0`.
pub fn gen_graph_matrix(d: usize, kind: GraphKind) -> Result<LinearMap, DataError> {
    if d < 2 {
        return Err(DataError::GraphTooSmall(d));
    }
    let edges: Vec<(usize, usize)> = match kind {
        GraphKind::Chain => (0..d - 1).map(|i| (i, i + 1)).collect(),
        GraphKind::RandomSparse { p, seed } => {
            if !(0.0..=1.0).contains(&p) || p == 0.0 {
                return Err(DataError::BadEdgeProbability(p));
            }
            let count = (p * (d * d) as f64).ceil() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut set = BTreeSet::new();
            for _ in 0..count {
                let a = rng.random_range(0..d);
                let b = rng.random_range(0..d);
                if a != b {
                    set.insert((a.min(b), a.max(b)));
                }
            }
            set.into_iter().collect()
        }
    };
    let mut m = DenseMatrix::zeros(edges.len().max(1), d).expect("d >= 2");
    if edges.is_empty() {
        // degenerate random draw: keep a single zero row so dims stay valid
        return Ok(LinearMap::dense(m));
    }
    for (r, (i, j)) in edges.iter().enumerate() {
        m.set(r, *i, 1.0);
        m.set(r, *j, -1.0);
    }
    Ok(LinearMap::dense(m))
}

/// Desk-scale tomography problem: phantom, strip-integral projector,
/// noisy measurements and the TV weight.
#[derive(Debug, Clone)]
pub struct ImagingProblem {
    pub height: usize,
    pub width: usize,
    pub truth: Vec<f64>,
    pub projector: DenseMatrix,
    pub measurements: Vec<f64>,
    pub tv_weight: f64,
    pub angles: usize,
    pub rays_per_angle: usize,
}

const SUPPORTED_IMAGE_SIZES: [usize; 3] = [16, 32, 64];
/// Subpixel supersampling factor per axis for the strip integrals.
const SUPERSAMPLE: usize = 4;

/// Piecewise-constant phantom on `[-1, 1]^2`: a centered disk of
/// intensity 1.0 carrying an inner square of intensity 0.5 on a zero
/// background.
pub fn phantom(size: usize) -> Vec<f64> {
    let h = 2.0 / size as f64;
    let mut img = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let cx = -1.0 + (j as f64 + 0.5) * h;
            let cy = -1.0 + (i as f64 + 0.5) * h;
            img[i * size + j] = phantom_value(cx, cy);
        }
    }
    img
}

fn phantom_value(x: f64, y: f64) -> f64 {
    if x.abs() <= 0.3 && y.abs() <= 0.3 {
        0.5
    } else if x * x + y * y <= 0.7 * 0.7 {
        1.0
    } else {
        0.0
    }
}

/// Builds the parallel-beam strip projector: `angles` directions equally
/// spaced in `[0, pi)`, `rays` parallel strips per direction spanning the
/// diagonal of the image square. Each entry is the intersection length
/// of the strip with the pixel (strip area / strip width), accumulated
/// from a 4x supersampled subpixel grid. Rows are angle-major, so the
/// per-angle row groups line up with contiguous batch blocks.
pub fn parallel_beam_matrix(size: usize, rays: usize, angles: usize) -> Result<DenseMatrix, DataError> {
    if rays == 0 || angles == 0 {
        return Err(DataError::EmptyGeometry);
    }
    let n_rows = rays * angles;
    let d = size * size;
    let mut m = DenseMatrix::zeros(n_rows, d).expect("positive dims");
    let s_max = (2.0f64).sqrt();
    let strip_w = 2.0 * s_max / rays as f64;
    let pix = 2.0 / size as f64;
    let sub = pix / SUPERSAMPLE as f64;
    let sub_area = sub * sub;
    let weight = sub_area / strip_w;
    for t in 0..angles {
        let theta = t as f64 * std::f64::consts::PI / angles as f64;
        let (sin_t, cos_t) = theta.sin_cos();
        for i in 0..size {
            for j in 0..size {
                let p = i * size + j;
                let x0 = -1.0 + j as f64 * pix;
                let y0 = -1.0 + i as f64 * pix;
                for si in 0..SUPERSAMPLE {
                    let cy = y0 + (si as f64 + 0.5) * sub;
                    for sj in 0..SUPERSAMPLE {
                        let cx = x0 + (sj as f64 + 0.5) * sub;
                        let s = cx * cos_t + cy * sin_t;
                        let bin = ((s + s_max) / strip_w).floor() as isize;
                        let bin = bin.clamp(0, rays as isize - 1) as usize;
                        let row = t * rays + bin;
                        m.set(row, p, m.get(row, p) + weight);
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Assembles the TV-L2 reconstruction problem at desk scale: analytic
/// phantom, strip projector, seeded Gaussian measurement noise. The TV
/// weight defaults to `0.05 * max|measurement|` when not supplied.
pub fn gen_imaging_problem(
    size: usize,
    rays_per_angle: usize,
    angles: usize,
    noise_variance: f64,
    tv_weight: Option<f64>,
    seed: u64,
) -> Result<ImagingProblem, DataError> {
    if !SUPPORTED_IMAGE_SIZES.contains(&size) {
        return Err(DataError::BadImageSize(size));
    }
    let truth = phantom(size);
    let projector = parallel_beam_matrix(size, rays_per_angle, angles)?;
    let mut measurements = projector.matvec(&truth);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if noise_variance > 0.0 {
        let sigma = noise_variance.sqrt();
        for v in measurements.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    let peak = measurements.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tv_weight = tv_weight.unwrap_or(0.05 * peak);
    Ok(ImagingProblem {
        height: size,
        width: size,
        truth,
        projector,
        measurements,
        tv_weight,
        angles,
        rays_per_angle,
    })
}

/// Splits samples into train/test halves: the first `ceil(n/2)` rows
/// after a seeded shuffle train, the rest test.
pub fn train_test_split(ds: &SparseDataset, seed: u64) -> (SparseDataset, SparseDataset) {
    let mut order: Vec<usize> = (0..ds.n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let cut = ds.n.div_ceil(2);
    let pick = |idx: &[usize]| SparseDataset {
        n: idx.len(),
        d: ds.d,
        rows: idx.iter().map(|&i| ds.rows[i].clone()).collect(),
        labels: idx.iter().map(|&i| ds.labels[i]).collect(),
    };
    (pick(&order[..cut]), pick(&order[cut..]))
}

/// P2 ASCII PGM with values scaled linearly by `peak` into 0..=255.
pub fn write_pgm(img: &[f64], height: usize, width: usize, peak: f64) -> String {
    assert_eq!(img.len(), height * width);
    let peak = if peak > 0.0 { peak } else { 1.0 };
    let mut out = format!("P2\n{width} {height}\n255\n");
    for i in 0..height {
        let row: Vec<String> = (0..width)
            .map(|j| {
                let v = (img[i * width + j] / peak).clamp(0.0, 1.0);
                format!("{}", (v * 255.0).round() as u8)
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
