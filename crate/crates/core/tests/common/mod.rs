//! Shared oracles for the integration suites. Everything here is an
//! independent route: dense eigensolver, subset enumeration, grid
//! search, normal equations, and a two-line Prox-SVRG reference. None
//! of it calls into the solver code paths it is used to check.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pdfp_core::data::{gen_graph_matrix, gen_synthetic_logistic, GraphKind};
use pdfp_core::objective::{svrg_grad, BatchScheme, SvrgAnchor};
use pdfp_core::solvers::BlockSampler;
use pdfp_core::{DenseMatrix, FiniteSum, LinearMap, ProblemSpec, ProxFn};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Compensated (Kahan) accumulator for long oracle sums.
#[derive(Default)]
pub struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }
}

/// Cyclic Jacobi eigensolver for small symmetric matrices; returns the
/// eigenvalues in ascending order.
pub fn jacobi_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let n = m.rows();
    assert_eq!(n, m.cols(), "jacobi needs a square matrix");
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    for _sweep in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

/// Materializes `B B^T` column by column through apply/adjoint.
pub fn bbt_matrix(map: &LinearMap) -> DenseMatrix {
    let r = map.out_dim();
    let mut m = DenseMatrix::zeros(r, r).unwrap();
    for j in 0..r {
        let mut e = vec![0.0; r];
        e[j] = 1.0;
        let col = map.apply(&map.adjoint_apply(&e).unwrap()).unwrap();
        for i in 0..r {
            m.set(i, j, col[i]);
        }
    }
    m
}

/// Dense materialization of the map itself.
pub fn materialize(map: &LinearMap) -> DenseMatrix {
    let (r, d) = (map.out_dim(), map.in_dim());
    let mut m = DenseMatrix::zeros(r, d).unwrap();
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let col = map.apply(&e).unwrap();
        for i in 0..r {
            m.set(i, j, col[i]);
        }
    }
    m
}

/// Gaussian elimination with partial pivoting (square systems only).
pub fn solve_linear(a: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    assert_eq!(n, b.len());
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular system");
        for row in col + 1..n {
            let factor = m[row][col] / p;
            for k in col..=n {
                let upper = m[col][k];
                m[row][k] -= factor * upper;
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = m[row][n];
        for k in row + 1..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    x
}

/// Least-squares minimizer via the normal equations `A^T A x = A^T b`.
pub fn least_squares_minimizer(f: &FiniteSum) -> Vec<f64> {
    let (n, d) = (f.n(), f.dim());
    let mut ata = DenseMatrix::zeros(d, d).unwrap();
    let mut atb = vec![0.0; d];
    for i in 0..n {
        let row = f.sample_row(i);
        let t = f.target(i);
        for p in 0..d {
            atb[p] += row[p] * t;
            for q in 0..d {
                ata.set(p, q, ata.get(p, q) + row[p] * row[q]);
            }
        }
    }
    solve_linear(&ata, &atb)
}

/// Visits every k-subset of {0..n} in lexicographic order.
pub fn for_each_combination(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    assert!(k <= n);
    if k == 0 {
        f(&[]);
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // advance to the next combination
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != n - k + i {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Scalar grid search, the brute-force prox oracle.
pub fn grid_argmin(lo: f64, hi: f64, step: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut best_x = lo;
    let mut best = f(lo);
    let mut x = lo;
    while x <= hi {
        let v = f(x);
        if v < best {
            best = v;
            best_x = x;
        }
        x += step;
    }
    best_x
}

/// `||w||_G^2` with `G = (gamma / 2 lambda)(I - lambda B B^T)`,
/// evaluated matrix-free.
pub fn g_norm_sq(map: &LinearMap, gamma: f64, lambda: f64, w: &[f64]) -> f64 {
    let btw = map.adjoint_apply(w).unwrap();
    gamma / (2.0 * lambda) * (dot(w, w) - lambda * dot(&btw, &btw))
}

/// Independent Prox-SVRG reference, coded from its two-line update
/// `x_{k+1} = Prox_{gamma g}(x_k - gamma grad_hat(x_k))` with the same
/// stage structure as the strongly convex solver (inner warm start and
/// anchor at the stage average). Returns every inner iterate.
pub fn prox_svrg_reference(
    f: &FiniteSum,
    g: &ProxFn,
    gamma: f64,
    inner_len: usize,
    stages: usize,
    batch: usize,
    seed: u64,
    x0: &[f64],
) -> Vec<Vec<f64>> {
    let scheme = BatchScheme::new(f.n(), batch).unwrap();
    let mut sampler = BlockSampler::new(seed, scheme.num_blocks());
    let mut outer = x0.to_vec();
    let mut iterates = Vec::new();
    for _s in 0..stages {
        let anchor = SvrgAnchor::new(f, outer.clone());
        let mut x = outer.clone();
        let mut sum = vec![0.0; x.len()];
        for _k in 0..inner_len {
            let block = sampler.next_block();
            let grad = svrg_grad(f, &anchor, &scheme, block, &x).unwrap();
            let shifted: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - gamma * gi).collect();
            x = g.prox(&shifted, gamma).unwrap();
            for (s, xi) in sum.iter_mut().zip(&x) {
                *s += xi;
            }
            iterates.push(x.clone());
        }
        outer = sum.iter().map(|s| s / inner_len as f64).collect();
    }
    iterates
}

/// Ridge-logistic + graph-guided regularizer toy problem with
/// `B = [G; I]` for a chain graph.
pub fn graph_guided_toy(
    n: usize,
    d: usize,
    seed: u64,
    ridge: f64,
    reg_weight: f64,
    huber_alpha: Option<f64>,
) -> ProblemSpec {
    let ds = gen_synthetic_logistic(n, d, 1.0, 0.1, seed).unwrap();
    let (a, labels) = ds.to_dense();
    let f = FiniteSum::ridge_logistic(a, labels, ridge).unwrap();
    let graph = gen_graph_matrix(d, GraphKind::Chain).unwrap();
    let b_map = LinearMap::stacked(graph, d).unwrap();
    let g_dim = b_map.out_dim();
    let g = match huber_alpha {
        Some(alpha) => ProxFn::huber(reg_weight, alpha, g_dim).unwrap(),
        None => ProxFn::l1(reg_weight, g_dim).unwrap(),
    };
    ProblemSpec::new(f, g, b_map).unwrap()
}

/// The 1-D lasso `min 1/2 (x-2)^2 + |x|` (sample duplicated so n = 2);
/// closed-form solution x* = 1, v* = 1.
pub fn lasso_1d() -> ProblemSpec {
    let a = DenseMatrix::from_rows(vec![vec![1.0], vec![1.0]]).unwrap();
    let f = FiniteSum::least_squares(a, vec![2.0, 2.0]).unwrap();
    ProblemSpec::new(f, ProxFn::l1(1.0, 1).unwrap(), LinearMap::identity(1).unwrap()).unwrap()
}

/// Random dense least-squares instance, rows scaled by `scale`.
pub fn random_least_squares(n: usize, d: usize, scale: f64, seed: u64) -> FiniteSum {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| scale * r.random_range(-1.0..1.0)).collect())
        .collect();
    let targets: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let a = DenseMatrix::from_rows(rows).unwrap();
    FiniteSum::least_squares(a, targets).unwrap()
}
