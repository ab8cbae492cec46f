//! The iterative solvers: deterministic PDFP, the plain stochastic
//! variant with diminishing steps (SPDFP), and SVRG-PDFP in its strongly
//! convex and general convex forms. All four share one primal-dual step
//! kernel and differ only in the gradient estimate fed to it and in the
//! outer-loop bookkeeping.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linops::{LinOpError, LinearMap, DEFAULT_POWER_ITERS, DEFAULT_POWER_SEED};
use crate::metrics::{InnerIterate, RunTrace, TraceMetrics};
use crate::objective::{
    batch_grad, svrg_grad, BatchScheme, FiniteSum, ObjectiveError, SvrgAnchor, VarianceConstants,
    variance_constants,
};
use crate::prox::{ProxError, ProxFn};
use crate::vecmath::{axpy, dist2};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("incompatible problem dimensions: B maps {b_in}->{b_out} but f has dim {f_dim} and g has dim {g_dim}")]
    DimMismatch { b_in: usize, b_out: usize, f_dim: usize, g_dim: usize },
    #[error("{what} has length {got}, expected {expected}")]
    VectorDim { what: &'static str, expected: usize, got: usize },
    #[error("invalid solver parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),
    #[error("run_{expected} called with variant {got:?}")]
    VariantMismatch { expected: &'static str, got: Variant },
    #[error("divergence guard: objective {objective:.6e} exceeded {threshold:.6e} at trace row {row}")]
    Diverged { objective: f64, threshold: f64, row: usize },
    #[error(transparent)]
    LinOp(#[from] LinOpError),
    #[error(transparent)]
    Prox(#[from] ProxError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// The composite problem `min (1/n) sum f_i(x) + g(Bx)` handed to the
/// solvers. Immutable; concurrent runs share it read-only.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub f: FiniteSum,
    pub g: ProxFn,
    pub b_map: LinearMap,
}

impl ProblemSpec {
    pub fn new(f: FiniteSum, g: ProxFn, b_map: LinearMap) -> Result<Self, SolveError> {
        if b_map.in_dim() != f.dim() || b_map.out_dim() != g.dim() {
            return Err(SolveError::DimMismatch {
                b_in: b_map.in_dim(),
                b_out: b_map.out_dim(),
                f_dim: f.dim(),
                g_dim: g.dim(),
            });
        }
        Ok(ProblemSpec { f, g, b_map })
    }

    /// Full objective F(x) = f(x) + g(Bx).
    pub fn objective(&self, x: &[f64]) -> f64 {
        let bx = self.b_map.apply(x).expect("dims validated at construction");
        self.f.value(x) + self.g.value(&bx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Pdfp,
    /// Diminishing-step stochastic baseline: step `gamma / k^decay` at
    /// iteration k with a plain mini-batch gradient.
    Spdfp { decay: f64 },
    /// SVRG-PDFP for strongly convex objectives (stage restarts at the
    /// stage averages).
    SvrgSc,
    /// SVRG-PDFP for general convex objectives (stage restarts at the
    /// last inner iterate, ergodic output).
    SvrgGc,
}

/// Solver configuration. `gamma`/`lambda` are the primal/dual steps,
/// `inner_len` the inner-loop length m, `batch` the mini-batch size b,
/// `stages` the outer stage count T.
#[derive(Debug, Clone)]
pub struct SolverParams {
    pub gamma: f64,
    pub lambda: f64,
    pub inner_len: usize,
    pub batch: usize,
    pub stages: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Run even when validation fails (the divergence guard still applies).
    pub allow_invalid: bool,
}

impl SolverParams {
    pub fn new(variant: Variant, gamma: f64, lambda: f64) -> Self {
        SolverParams {
            gamma,
            lambda,
            inner_len: 1,
            batch: 1,
            stages: 1,
            seed: 0,
            variant,
            allow_invalid: false,
        }
    }
}

/// Everything `validate_params` figured out about a configuration.
/// `kappa` is the per-stage linear-rate constant, computable only when
/// `mu_f > 0` and either `BB^T = I` (third term dropped) or `g*` is
/// strongly convex; `rho_min(BB^T)` is taken as 0 for non-identity maps,
/// which is exact for the wide stacked/gradient operators used here.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub ok: bool,
    pub reasons: Vec<String>,
    pub warnings: Vec<String>,
    pub kappa: Option<f64>,
    pub variance: Option<VarianceConstants>,
    pub beta_hat: f64,
    pub rho_max: f64,
    pub lambda_max: f64,
    pub mu_f: f64,
    pub mu_gstar: f64,
    pub bbt_identity: bool,
}

/// The rate constant of the strongly convex analysis:
/// `1/(mu_f g (1-gM) m) + (m+1) g M / ((1-gM) m) + g (1-rho_min) / (lam mu_g* (1-gM) m)`,
/// with the third term dropped when `BB^T = I`.
pub fn kappa_formula(
    mu_f: f64,
    gamma: f64,
    m_variance: f64,
    inner_len: usize,
    lambda: f64,
    mu_gstar: f64,
    rho_min: f64,
    drop_third_term: bool,
) -> f64 {
    let denom = 1.0 - gamma * m_variance;
    if denom <= 0.0 || mu_f <= 0.0 {
        return f64::INFINITY;
    }
    let m = inner_len as f64;
    let t1 = 1.0 / (mu_f * gamma * denom * m);
    let t2 = (m + 1.0) * gamma * m_variance / (denom * m);
    let t3 = if drop_third_term {
        0.0
    } else {
        gamma * (1.0 - rho_min) / (lambda * mu_gstar * denom * m)
    };
    t1 + t2 + t3
}

/// Checks step sizes against the admissible ranges and computes the
/// variance and rate constants. Never fails: problems are reported, not
/// thrown.
pub fn validate_params(p: &ProblemSpec, params: &SolverParams) -> ValidationReport {
    let mut reasons = Vec::new();
    let mut warnings = Vec::new();

    if params.gamma <= 0.0 {
        reasons.push(format!("gamma must be positive, got {}", params.gamma));
    }
    if params.lambda <= 0.0 {
        reasons.push(format!("lambda must be positive, got {}", params.lambda));
    }
    if params.inner_len == 0 {
        reasons.push("inner loop length m must be at least 1".into());
    }
    if params.stages == 0 {
        reasons.push("stage count T must be at least 1".into());
    }
    if let Variant::Spdfp { decay } = params.variant {
        if !(0.0..=1.0).contains(&decay) {
            reasons.push(format!("spdfp decay exponent must lie in [0, 1], got {decay}"));
        }
    }

    let variance = match BatchScheme::new(p.f.n(), params.batch) {
        Ok(scheme) => match variance_constants(&p.f, &scheme) {
            Ok(vc) => Some(vc),
            Err(e) => {
                reasons.push(e.to_string());
                None
            }
        },
        Err(e) => {
            reasons.push(e.to_string());
            None
        }
    };

    let l_max = p.f.l_max();
    let beta_hat = 1.0 / l_max;
    let rho_max = p.b_map.exact_rho_max().unwrap_or_else(|| {
        p.b_map.spectral_bound(DEFAULT_POWER_ITERS, DEFAULT_POWER_SEED).value
    });
    let lambda_max = if rho_max <= 0.0 { f64::INFINITY } else { 1.0 / rho_max };
    if params.lambda > lambda_max {
        reasons.push(format!(
            "lambda {} violates the step-size condition 0 < lambda <= 1/rho_max(BB^T) = {lambda_max}",
            params.lambda
        ));
    }

    if let Some(vc) = &variance {
        let gamma_cap = match params.variant {
            Variant::SvrgSc => {
                Some(if vc.m > 0.0 { beta_hat.min(1.0 / vc.m) } else { beta_hat })
            }
            Variant::SvrgGc => {
                Some(if vc.m > 0.0 { beta_hat.min(1.0 / (2.0 * vc.m)) } else { beta_hat })
            }
            _ => None,
        };
        if let Some(cap) = gamma_cap {
            if params.gamma > cap {
                reasons.push(format!(
                    "gamma {} exceeds the admissible bound min(beta, 1/{}M) = {cap}",
                    params.gamma,
                    if matches!(params.variant, Variant::SvrgGc) { "2" } else { "" },
                ));
            }
        }
    }

    let mu_f = p.f.strong_convexity();
    let mu_gstar = p.g.conjugate_info().strong_convexity;
    let bbt_identity = p.b_map.is_identity_bbt();

    if params.variant == Variant::SvrgSc {
        if mu_f == 0.0 {
            warnings.push(
                "f is not strongly convex; the linear-rate guarantee of the SC variant does not apply"
                    .into(),
            );
        }
        if !bbt_identity && mu_gstar == 0.0 {
            warnings.push(
                "g* is not strongly convex and BB^T != I; consider the Huber-smoothed regularizer"
                    .into(),
            );
        }
    }

    let kappa = variance.as_ref().and_then(|vc| {
        let computable = params.gamma > 0.0
            && params.lambda > 0.0
            && params.inner_len > 0
            && mu_f > 0.0
            && (bbt_identity || mu_gstar > 0.0);
        computable.then(|| {
            let rho_min = if bbt_identity { 1.0 } else { 0.0 };
            kappa_formula(
                mu_f,
                params.gamma,
                vc.m,
                params.inner_len,
                params.lambda,
                mu_gstar,
                rho_min,
                bbt_identity,
            )
        })
    });

    ValidationReport {
        ok: reasons.is_empty(),
        reasons,
        warnings,
        kappa,
        variance,
        beta_hat,
        rho_max,
        lambda_max,
        mu_f,
        mu_gstar,
        bbt_identity,
    }
}

/// Uniform sampling over the fixed block partition, seeded. Both the
/// solvers and any reference implementation that must consume the same
/// block sequence draw through this.
pub struct BlockSampler {
    rng: ChaCha8Rng,
    n_blocks: usize,
}

impl BlockSampler {
    pub fn new(seed: u64, n_blocks: usize) -> Self {
        assert!(n_blocks >= 1);
        BlockSampler { rng: ChaCha8Rng::seed_from_u64(seed), n_blocks }
    }

    pub fn next_block(&mut self) -> usize {
        if self.n_blocks == 1 {
            0
        } else {
            self.rng.random_range(0..self.n_blocks)
        }
    }
}

/// One primal-dual fixed-point step with an arbitrary gradient estimate
/// at `x` (full, mini-batch or SVRG-corrected):
///
/// ```text
/// y  = x - gamma grad - gamma B^T v
/// v' = Prox_{(lambda/gamma) g*}( (lambda/gamma) B y + v )
/// x' = x - gamma grad - gamma B^T v'
/// ```
///
/// Returns `(x', v', y)`.
pub fn pdfp_step(
    p: &ProblemSpec,
    gamma: f64,
    lambda: f64,
    x: &[f64],
    v: &[f64],
    grad: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), SolveError> {
    let d = p.f.dim();
    let r = p.g.dim();
    if x.len() != d {
        return Err(SolveError::VectorDim { what: "x", expected: d, got: x.len() });
    }
    if v.len() != r {
        return Err(SolveError::VectorDim { what: "v", expected: r, got: v.len() });
    }
    if grad.len() != d {
        return Err(SolveError::VectorDim { what: "grad", expected: d, got: grad.len() });
    }

    let mut base = x.to_vec();
    axpy(&mut base, -gamma, grad); // x - gamma grad

    let btv = p.b_map.adjoint_apply(v)?;
    let mut y = base.clone();
    axpy(&mut y, -gamma, &btv);

    let ratio = lambda / gamma;
    let by = p.b_map.apply(&y)?;
    let w: Vec<f64> = by.iter().zip(v).map(|(b, vv)| ratio * b + vv).collect();
    let v_next = p.g.conj_prox(&w, ratio)?;

    let btv_next = p.b_map.adjoint_apply(&v_next)?;
    let mut x_next = base;
    axpy(&mut x_next, -gamma, &btv_next);

    Ok((x_next, v_next, y))
}

/// Knobs shared by the run functions: metric sources for the trace,
/// optional inner-iterate logging and an optional relative-error stop.
#[derive(Clone, Copy, Default)]
pub struct RunOptions<'a> {
    pub metrics: TraceMetrics<'a>,
    pub log_inner: bool,
    /// Stop once the recorded relative objective error drops below this
    /// (needs a reference solution in `metrics`).
    pub rel_err_stop: Option<f64>,
}

impl<'a> RunOptions<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_metrics(metrics: TraceMetrics<'a>) -> Self {
        RunOptions { metrics, ..Self::default() }
    }
}

/// Objective-explosion guard. Stochastic methods may transiently
/// increase the objective, so those only abort after ten consecutive
/// violations; the deterministic run aborts on the first.
struct DivergenceGuard {
    threshold: f64,
    needed: usize,
    consecutive: usize,
}

impl DivergenceGuard {
    fn new(initial_objective: f64, stochastic: bool) -> Self {
        DivergenceGuard {
            threshold: 1e3 * initial_objective.abs().max(1e-12),
            needed: if stochastic { 10 } else { 1 },
            consecutive: 0,
        }
    }

    fn check(&mut self, objective: f64, row: usize) -> Result<(), SolveError> {
        if objective > self.threshold || !objective.is_finite() {
            self.consecutive += 1;
            if self.consecutive >= self.needed {
                return Err(SolveError::Diverged { objective, threshold: self.threshold, row });
            }
        } else {
            self.consecutive = 0;
        }
        Ok(())
    }
}

struct TraceBuilder<'a> {
    opts: RunOptions<'a>,
    trace: RunTrace,
    guard: DivergenceGuard,
    start: Instant,
    stop: bool,
}

impl<'a> TraceBuilder<'a> {
    fn new(p: &ProblemSpec, opts: RunOptions<'a>, x0: &[f64], v0: &[f64], stochastic: bool) -> Self {
        let start = Instant::now();
        let mut trace = RunTrace::default();
        let (row, clamped) = opts.metrics.row(p, 0, 0.0, 0.0, x0, v0);
        let guard = DivergenceGuard::new(row.objective, stochastic);
        trace.clamped_rel_err += clamped as usize;
        trace.rows.push(row);
        TraceBuilder { opts, trace, guard, start, stop: false }
    }

    /// Records one outer row; sets the stop flag on early termination
    /// and fails on divergence.
    fn record(
        &mut self,
        p: &ProblemSpec,
        stage: usize,
        epochs: f64,
        x: &[f64],
        v: &[f64],
    ) -> Result<(), SolveError> {
        let seconds = self.start.elapsed().as_secs_f64();
        let (row, clamped) = self.opts.metrics.row(p, stage, epochs, seconds, x, v);
        self.trace.clamped_rel_err += clamped as usize;
        let objective = row.objective;
        let rel_err = row.rel_err;
        self.trace.rows.push(row);
        self.guard.check(objective, self.trace.rows.len() - 1)?;
        if let (Some(stop_at), Some(err)) = (self.opts.rel_err_stop, rel_err) {
            if err <= stop_at {
                self.stop = true;
            }
        }
        Ok(())
    }

    fn log_inner(&mut self, stage: usize, k: usize, x: &[f64], v: &[f64]) {
        if self.opts.log_inner {
            self.trace.inner.push(InnerIterate { stage, k, x: x.to_vec(), v: v.to_vec() });
        }
    }

    fn finish(mut self, x: Vec<f64>, v: Vec<f64>) -> RunTrace {
        self.trace.final_x = x;
        self.trace.final_v = v;
        self.trace
    }
}

fn ensure_valid(p: &ProblemSpec, params: &SolverParams) -> Result<(), SolveError> {
    let report = validate_params(p, params);
    if !report.ok && !params.allow_invalid {
        return Err(SolveError::InvalidParams(report.reasons));
    }
    Ok(())
}

fn ensure_variant(params: &SolverParams, expected: &'static str, want: bool) -> Result<(), SolveError> {
    if !want {
        return Err(SolveError::VariantMismatch { expected, got: params.variant });
    }
    Ok(())
}

/// Deterministic PDFP with the exact full gradient. The trace records
/// one row per iteration (one iteration costs one effective pass).
pub fn run_pdfp(
    p: &ProblemSpec,
    params: &SolverParams,
    x0: &[f64],
    v0: &[f64],
    iters: usize,
    opts: RunOptions,
) -> Result<RunTrace, SolveError> {
    ensure_variant(params, "pdfp", params.variant == Variant::Pdfp)?;
    ensure_valid(p, params)?;
    let mut tb = TraceBuilder::new(p, opts, x0, v0, false);
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    for k in 1..=iters {
        let grad = p.f.full_grad(&x);
        let (x1, v1, _) = pdfp_step(p, params.gamma, params.lambda, &x, &v, &grad)?;
        tb.trace.residuals.push(dist2(&x1, &x));
        x = x1;
        v = v1;
        tb.log_inner(0, k, &x, &v);
        tb.record(p, k, k as f64, &x, &v)?;
        if tb.stop {
            break;
        }
    }
    Ok(tb.finish(x, v))
}

/// Step size of the diminishing schedule: `gamma0 / k^decay`, k 1-based.
pub fn spdfp_step_size(gamma0: f64, decay: f64, k: usize) -> f64 {
    gamma0 / (k as f64).powf(decay)
}

/// Stochastic PDFP baseline: plain mini-batch gradients, no variance
/// reduction, diminishing step `gamma / k^decay`. Records one trace row
/// per full pass over the data.
pub fn run_spdfp(
    p: &ProblemSpec,
    params: &SolverParams,
    x0: &[f64],
    v0: &[f64],
    iters: usize,
    opts: RunOptions,
) -> Result<RunTrace, SolveError> {
    let decay = match params.variant {
        Variant::Spdfp { decay } => decay,
        _ => return Err(SolveError::VariantMismatch { expected: "spdfp", got: params.variant }),
    };
    ensure_valid(p, params)?;
    let scheme = BatchScheme::new(p.f.n(), params.batch)?;
    let n_blocks = scheme.num_blocks();
    let mut sampler = BlockSampler::new(params.seed, n_blocks);

    let mut tb = TraceBuilder::new(p, opts, x0, v0, true);
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    let mut x_at_last_row = x.clone();
    let epoch_cost = params.batch as f64 / p.f.n() as f64;
    for k in 1..=iters {
        let gamma_k = spdfp_step_size(params.gamma, decay, k);
        let block = sampler.next_block();
        let grad = batch_grad(&p.f, &scheme, block, &x)?;
        let (x1, v1, _) = pdfp_step(p, gamma_k, params.lambda, &x, &v, &grad)?;
        x = x1;
        v = v1;
        tb.log_inner(0, k, &x, &v);
        if k % n_blocks == 0 || k == iters {
            tb.trace.residuals.push(dist2(&x, &x_at_last_row));
            x_at_last_row = x.clone();
            tb.record(p, k / n_blocks, k as f64 * epoch_cost, &x, &v)?;
            if tb.stop {
                break;
            }
        }
    }
    Ok(tb.finish(x, v))
}

fn stage_epoch_cost(p: &ProblemSpec, params: &SolverParams) -> f64 {
    // snapshot full gradient plus m mini-batches
    (p.f.n() as f64 + params.inner_len as f64 * params.batch as f64) / p.f.n() as f64
}

/// SVRG-PDFP for strongly convex problems. Each stage anchors the SVRG
/// estimator at the current outer iterate, runs `m` inner steps and
/// outputs the inner averages, which also warm-start the next stage.
/// The trace records one row per stage boundary, evaluated at the outer
/// pair, starting with the initial point.
pub fn run_svrg_pdfp_sc(
    p: &ProblemSpec,
    params: &SolverParams,
    x0: &[f64],
    v0: &[f64],
    opts: RunOptions,
) -> Result<RunTrace, SolveError> {
    ensure_variant(params, "svrg_pdfp_sc", params.variant == Variant::SvrgSc)?;
    ensure_valid(p, params)?;
    let scheme = BatchScheme::new(p.f.n(), params.batch)?;
    let mut sampler = BlockSampler::new(params.seed, scheme.num_blocks());

    let mut tb = TraceBuilder::new(p, opts, x0, v0, true);
    let mut outer_x = x0.to_vec();
    let mut outer_v = v0.to_vec();
    let m = params.inner_len;
    let epoch_cost = stage_epoch_cost(p, params);
    for s in 0..params.stages {
        let anchor = SvrgAnchor::new(&p.f, outer_x.clone());
        let mut x = outer_x.clone();
        let mut v = outer_v.clone();
        let mut sum_x = vec![0.0; x.len()];
        let mut sum_v = vec![0.0; v.len()];
        for k in 0..m {
            let block = sampler.next_block();
            let grad = svrg_grad(&p.f, &anchor, &scheme, block, &x)?;
            let (x1, v1, _) = pdfp_step(p, params.gamma, params.lambda, &x, &v, &grad)?;
            x = x1;
            v = v1;
            axpy(&mut sum_x, 1.0, &x);
            axpy(&mut sum_v, 1.0, &v);
            tb.log_inner(s, k + 1, &x, &v);
        }
        let inv_m = 1.0 / m as f64;
        let next_x: Vec<f64> = sum_x.iter().map(|t| t * inv_m).collect();
        let next_v: Vec<f64> = sum_v.iter().map(|t| t * inv_m).collect();
        tb.trace.residuals.push(dist2(&next_x, &outer_x));
        outer_x = next_x;
        outer_v = next_v;
        tb.record(p, s + 1, (s + 1) as f64 * epoch_cost, &outer_x, &outer_v)?;
        if tb.stop {
            break;
        }
    }
    Ok(tb.finish(outer_x, outer_v))
}

/// SVRG-PDFP for general convex problems. The SVRG anchor is still the
/// stage average, but the inner state restarts from the last inner
/// iterate, and the run output is the ergodic average of the stage
/// averages. Trace rows are evaluated at the per-stage averages.
pub fn run_svrg_pdfp_gc(
    p: &ProblemSpec,
    params: &SolverParams,
    x0: &[f64],
    v0: &[f64],
    opts: RunOptions,
) -> Result<RunTrace, SolveError> {
    ensure_variant(params, "svrg_pdfp_gc", params.variant == Variant::SvrgGc)?;
    ensure_valid(p, params)?;
    let scheme = BatchScheme::new(p.f.n(), params.batch)?;
    let mut sampler = BlockSampler::new(params.seed, scheme.num_blocks());

    let mut tb = TraceBuilder::new(p, opts, x0, v0, true);
    let mut avg_x = x0.to_vec(); // snapshot point (stage average)
    let mut avg_v = v0.to_vec();
    let mut last_x = x0.to_vec(); // inner warm start (last inner iterate)
    let mut last_v = v0.to_vec();
    let mut ergodic_x = vec![0.0; avg_x.len()];
    let mut ergodic_v = vec![0.0; avg_v.len()];
    let m = params.inner_len;
    let epoch_cost = stage_epoch_cost(p, params);
    let mut stages_done = 0usize;
    for s in 0..params.stages {
        let anchor = SvrgAnchor::new(&p.f, avg_x.clone());
        let mut x = last_x.clone();
        let mut v = last_v.clone();
        let mut sum_x = vec![0.0; x.len()];
        let mut sum_v = vec![0.0; v.len()];
        for k in 0..m {
            let block = sampler.next_block();
            let grad = svrg_grad(&p.f, &anchor, &scheme, block, &x)?;
            let (x1, v1, _) = pdfp_step(p, params.gamma, params.lambda, &x, &v, &grad)?;
            x = x1;
            v = v1;
            axpy(&mut sum_x, 1.0, &x);
            axpy(&mut sum_v, 1.0, &v);
            tb.log_inner(s, k + 1, &x, &v);
        }
        let inv_m = 1.0 / m as f64;
        let next_avg_x: Vec<f64> = sum_x.iter().map(|t| t * inv_m).collect();
        let next_avg_v: Vec<f64> = sum_v.iter().map(|t| t * inv_m).collect();
        tb.trace.residuals.push(dist2(&next_avg_x, &avg_x));
        avg_x = next_avg_x;
        avg_v = next_avg_v;
        last_x = x;
        last_v = v;
        axpy(&mut ergodic_x, 1.0, &avg_x);
        axpy(&mut ergodic_v, 1.0, &avg_v);
        stages_done += 1;
        tb.record(p, s + 1, (s + 1) as f64 * epoch_cost, &avg_x, &avg_v)?;
        if tb.stop {
            break;
        }
    }
    let inv_t = 1.0 / stages_done.max(1) as f64;
    let out_x: Vec<f64> = ergodic_x.iter().map(|t| t * inv_t).collect();
    let out_v: Vec<f64> = ergodic_v.iter().map(|t| t * inv_t).collect();
    Ok(tb.finish(out_x, out_v))
}
