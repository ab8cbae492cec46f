//! Convergence diagnostics: the reference (saddle-point) solution, the
//! Bregman convergence functional `R(x, v)`, relative objective error,
//! PSNR and held-out test loss, plus the per-run trace and its CSV form.

use thiserror::Error;

use crate::linops::{DEFAULT_POWER_ITERS, DEFAULT_POWER_SEED};
use crate::objective::{FiniteSum, FiniteSumKind};
use crate::prox::DEFAULT_DOMAIN_TOL;
use crate::solvers::{pdfp_step, ProblemSpec};
use crate::vecmath::{dist_inf, dot, sub};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("psnr: reconstruction has length {recon}, truth has length {truth}")]
    LengthMismatch { recon: usize, truth: usize },
    #[error("psnr: peak must be positive, got {0}")]
    BadPeak(f64),
    #[error("test loss: empty test set")]
    EmptyTestSet,
    #[error("test loss: test set must be a plain logistic finite sum")]
    NotLogistic,
}

/// PSNR sentinel reported when the reconstruction matches the truth
/// exactly (MSE = 0).
pub const PSNR_EXACT_SENTINEL: f64 = 999.0;

/// A high-accuracy primal-dual pair treated as `(x*, v*)` by every
/// downstream metric, together with the certificates of its quality.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// Full objective f(x*) + g(B x*).
    pub objective: f64,
    /// grad f(x*); at a saddle point grad f(x*) + B^T v* = 0.
    pub grad: Vec<f64>,
    /// B x*, the subgradient of g* at v* used by the conjugate Bregman term.
    pub bx: Vec<f64>,
    /// Fixed-point residual ||x_{k+1} - x_k||_inf at the last iteration.
    pub residual: f64,
    /// False when the residual stayed above 1e-6; treat metrics computed
    /// against such a reference with suspicion.
    pub converged: bool,
}

/// Runs deterministic PDFP for `iters` iterations at the auto-validated
/// step sizes `gamma = 1/L_max`, `lambda = 1/rho_max(BB^T)` and returns
/// the final pair as the reference solution.
pub fn compute_reference(p: &ProblemSpec, iters: usize) -> ReferenceSolution {
    assert!(iters >= 1, "reference needs at least one iteration");
    let gamma = 1.0 / p.f.l_max();
    let rho_max = p.b_map.exact_rho_max().unwrap_or_else(|| {
        p.b_map.spectral_bound(DEFAULT_POWER_ITERS, DEFAULT_POWER_SEED).value
    });
    let lambda = if rho_max <= 0.0 { 1.0 } else { 1.0 / rho_max };

    let mut x = vec![0.0; p.f.dim()];
    let mut v = vec![0.0; p.g.dim()];
    let mut residual = f64::INFINITY;
    for _ in 0..iters {
        let grad = p.f.full_grad(&x);
        let (x1, v1, _) = pdfp_step(p, gamma, lambda, &x, &v, &grad).expect("consistent dims");
        residual = dist_inf(&x1, &x);
        x = x1;
        v = v1;
    }
    let grad = p.f.full_grad(&x);
    let bx = p.b_map.apply(&x).expect("consistent dims");
    ReferenceSolution {
        objective: p.objective(&x),
        converged: residual <= 1e-6,
        x,
        v,
        grad,
        bx,
        residual,
    }
}

/// The convergence functional
/// `R(x, v) = D_f(x, x*) + D_{g*}(v, v*)`, where the conjugate Bregman
/// term uses the specific subgradient `B x*` of `g*` at `v*`. Returns
/// `+inf` when `v` sits outside `dom(g*)` beyond the domain tolerance,
/// which signals a bug upstream (the dual prox projects into the domain).
pub fn r_value(p: &ProblemSpec, reference: &ReferenceSolution, x: &[f64], v: &[f64]) -> f64 {
    let (a, b) = r_value_parts(p, reference, x, v);
    a + b
}

/// The two Bregman terms of `R` separately: `(D_f(x, x*), D_{g*}(v, v*))`.
pub fn r_value_parts(
    p: &ProblemSpec,
    reference: &ReferenceSolution,
    x: &[f64],
    v: &[f64],
) -> (f64, f64) {
    let d_f = f_bregman(p, reference, x);
    let gv = p.g.conj_value(v, DEFAULT_DOMAIN_TOL);
    if gv.is_infinite() {
        return (d_f, f64::INFINITY);
    }
    let gv_star = p.g.conj_value(&reference.v, DEFAULT_DOMAIN_TOL);
    let dv = sub(v, &reference.v);
    (d_f, gv - gv_star - dot(&reference.bx, &dv))
}

fn f_bregman(p: &ProblemSpec, reference: &ReferenceSolution, x: &[f64]) -> f64 {
    let dx = sub(x, &reference.x);
    p.f.value(x) - p.f.value(&reference.x) - dot(&reference.grad, &dx)
}

/// `(F(x) - F(x*)) / max(|F(x*)|, 1e-12)` with the full objective
/// `F = f + g(B.)`. May be slightly negative when the reference is
/// imperfect; see [`relative_objective_error`] for the clamped form.
pub fn relative_objective_error_raw(
    p: &ProblemSpec,
    reference: &ReferenceSolution,
    x: &[f64],
) -> f64 {
    let fx = p.objective(x);
    (fx - reference.objective) / reference.objective.abs().max(1e-12)
}

/// Clamped relative objective error (negative values map to 0).
pub fn relative_objective_error(p: &ProblemSpec, reference: &ReferenceSolution, x: &[f64]) -> f64 {
    relative_objective_error_raw(p, reference, x).max(0.0)
}

/// Peak signal-to-noise ratio in dB; exact reconstructions report the
/// capped sentinel instead of infinity.
pub fn psnr(reconstruction: &[f64], truth: &[f64], peak: f64) -> Result<f64, MetricsError> {
    if reconstruction.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            recon: reconstruction.len(),
            truth: truth.len(),
        });
    }
    if peak <= 0.0 {
        return Err(MetricsError::BadPeak(peak));
    }
    let mse = reconstruction
        .iter()
        .zip(truth)
        .map(|(r, t)| (r - t) * (r - t))
        .sum::<f64>()
        / truth.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_EXACT_SENTINEL);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Mean logistic loss of `x` on a held-out set (no regularizer).
pub fn test_loss(f_test: &FiniteSum, x: &[f64]) -> Result<f64, MetricsError> {
    if f_test.n() == 0 {
        return Err(MetricsError::EmptyTestSet);
    }
    if f_test.kind() != FiniteSumKind::Logistic {
        return Err(MetricsError::NotLogistic);
    }
    Ok(f_test.value(x))
}

/// One record of a run trace. `epochs` counts effective data passes
/// (n individual-gradient evaluations each) and may be fractional.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub stage: usize,
    pub epochs: f64,
    pub seconds: f64,
    pub objective: f64,
    pub rel_err: Option<f64>,
    pub r_value: Option<f64>,
    pub psnr: Option<f64>,
    pub test_loss: Option<f64>,
}

/// Inner iterate snapshot, captured only when a run is asked to log them.
#[derive(Debug, Clone)]
pub struct InnerIterate {
    pub stage: usize,
    pub k: usize,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// Full record of one solver run.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// The algorithm output pair (last outer iterate, or the ergodic
    /// average for the general convex variant).
    pub final_x: Vec<f64>,
    pub final_v: Vec<f64>,
    /// Per-row fixed-point residual ||x_{k+1} - x_k|| (L2); the row at
    /// epoch zero has no residual so this is one shorter than `rows`.
    pub residuals: Vec<f64>,
    /// Inner iterates, empty unless logging was requested.
    pub inner: Vec<InnerIterate>,
    /// How many rows had a negative raw relative error clamped to zero.
    pub clamped_rel_err: usize,
}

const CSV_HEADER: &str = "stage,epochs,seconds,objective,rel_err,r_value,psnr,test_loss";

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

impl RunTrace {
    /// Serializes to the fixed schema
    /// `stage,epochs,seconds,objective,rel_err,r_value,psnr,test_loss`,
    /// floats with 17 significant digits, missing metrics as empty
    /// fields. The wall-clock column is emitted only on request so that
    /// output bytes stay a pure function of config and seed.
    pub fn to_csv(&self, include_seconds: bool) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let secs = if include_seconds { fmt_float(row.seconds) } else { String::new() };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.stage,
                fmt_float(row.epochs),
                secs,
                fmt_float(row.objective),
                fmt_opt(row.rel_err),
                fmt_opt(row.r_value),
                fmt_opt(row.psnr),
                fmt_opt(row.test_loss),
            ));
        }
        out
    }

    pub fn csv_header() -> &'static str {
        CSV_HEADER
    }
}

/// Optional metric sources attached to a run: a reference solution for
/// relative error and `R`, a ground-truth image for PSNR, a held-out set
/// for test loss. Shared read-only by concurrent runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct TraceMetrics<'a> {
    pub reference: Option<&'a ReferenceSolution>,
    pub image_truth: Option<ImageTruth<'a>>,
    pub test_set: Option<&'a FiniteSum>,
}

#[derive(Debug, Clone, Copy)]
pub struct ImageTruth<'a> {
    pub pixels: &'a [f64],
    pub peak: f64,
}

impl<'a> TraceMetrics<'a> {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_reference(reference: &'a ReferenceSolution) -> Self {
        TraceMetrics { reference: Some(reference), ..Self::default() }
    }

    /// Evaluates one trace row; the boolean reports whether a negative
    /// raw relative error was clamped.
    pub fn row(
        &self,
        p: &ProblemSpec,
        stage: usize,
        epochs: f64,
        seconds: f64,
        x: &[f64],
        v: &[f64],
    ) -> (TraceRow, bool) {
        let objective = p.objective(x);
        let mut clamped = false;
        let rel_err = self.reference.map(|r| {
            let raw = relative_objective_error_raw(p, r, x);
            if raw < 0.0 {
                clamped = true;
            }
            raw.max(0.0)
        });
        let r_val = self.reference.map(|r| r_value(p, r, x, v));
        let psnr_val = self
            .image_truth
            .map(|t| psnr(x, t.pixels, t.peak).expect("image dims fixed per problem"));
        let loss = self.test_set.map(|f| test_loss(f, x).expect("test set validated"));
        (
            TraceRow { stage, epochs, seconds, objective, rel_err, r_value: r_val, psnr: psnr_val, test_loss: loss },
            clamped,
        )
    }
}
