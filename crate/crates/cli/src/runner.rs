//! Experiment runner: builds the configured problem, computes (or
//! loads) the reference solution, fans repetitions out over worker
//! threads and writes per-run, averaged and summary artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use pdfp_core::data::{
    gen_graph_matrix, gen_imaging_problem, gen_synthetic_logistic, parse_libsvm,
    parse_libsvm_with_dim, train_test_split, write_pgm, GraphKind, SparseDataset,
};
use pdfp_core::metrics::{compute_reference, ImageTruth};
use pdfp_core::solvers::{
    run_pdfp, run_spdfp, run_svrg_pdfp_gc, run_svrg_pdfp_sc, validate_params, RunOptions,
    SolveError,
};
use pdfp_core::{
    DenseMatrix, FiniteSum, LinearMap, ProblemSpec, ProxFn, ReferenceSolution, RunTrace,
    SolverParams, TraceMetrics, TraceRow, ValidationReport, Variant,
};

use crate::config::{
    ExperimentConfig, GraphConfig, ProblemConfig, SolverConfig, VariantConfig,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("problem construction failed: {0}")]
    Problem(String),
}

impl CliError {
    /// Process exit code contract: 2 for validation/config problems,
    /// 3 for divergence aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solve(SolveError::Diverged { .. }) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// A fully materialized problem instance plus its metric sources.
pub struct BuiltProblem {
    pub label: String,
    pub spec: ProblemSpec,
    pub image: Option<(Vec<f64>, usize, usize)>,
    pub test_set: Option<FiniteSum>,
}

fn graph_kind(cfg: GraphConfig, seed: u64) -> GraphKind {
    match cfg {
        GraphConfig::Chain => GraphKind::Chain,
        GraphConfig::RandomSparse { p } => GraphKind::RandomSparse { p, seed },
    }
}

#[allow(clippy::too_many_arguments)]
fn dataset_problem(
    ds: &SparseDataset,
    graph: GraphConfig,
    ridge: f64,
    reg_weight: f64,
    huber_alpha: Option<f64>,
    holdout: bool,
    shuffle: bool,
    seed: u64,
    label: String,
) -> Result<BuiltProblem, CliError> {
    let (train, test) = if holdout {
        let (tr, te) = train_test_split(ds, seed);
        (tr, Some(te))
    } else {
        (ds.clone(), None)
    };
    let (a, labels) = train.to_dense();
    let mut f = if ridge > 0.0 {
        FiniteSum::ridge_logistic(a, labels, ridge)
    } else {
        FiniteSum::logistic(a, labels)
    }
    .map_err(|e| CliError::Problem(e.to_string()))?;
    if shuffle {
        f.shuffle_samples(seed.wrapping_add(1));
    }
    let g_top =
        gen_graph_matrix(ds.d, graph_kind(graph, seed)).map_err(|e| CliError::Problem(e.to_string()))?;
    let b_map =
        LinearMap::stacked(g_top, ds.d).map_err(|e| CliError::Problem(e.to_string()))?;
    let g = match huber_alpha {
        Some(alpha) => ProxFn::huber(reg_weight, alpha, b_map.out_dim()),
        None => ProxFn::l1(reg_weight, b_map.out_dim()),
    }
    .map_err(|e| CliError::Problem(e.to_string()))?;
    let spec = ProblemSpec::new(f, g, b_map)?;
    let test_set = match test {
        Some(te) => {
            let (a, labels) = te.to_dense();
            Some(FiniteSum::logistic(a, labels).map_err(|e| CliError::Problem(e.to_string()))?)
        }
        None => None,
    };
    Ok(BuiltProblem { label, spec, image: None, test_set })
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<BuiltProblem, CliError> {
    let seed = cfg.seed;
    match &cfg.problem {
        ProblemConfig::SyntheticLogistic(c) => {
            let ds = gen_synthetic_logistic(c.n, c.d, c.separation, c.noise, seed)
                .map_err(|e| CliError::Problem(e.to_string()))?;
            dataset_problem(
                &ds,
                c.graph,
                c.ridge,
                c.reg_weight,
                c.huber_alpha,
                c.holdout,
                c.shuffle,
                seed,
                "synthetic_logistic".into(),
            )
        }
        ProblemConfig::Libsvm(c) => {
            let text = fs::read_to_string(&c.path).map_err(io_err(&c.path))?;
            let ds = match c.dim {
                Some(d) => parse_libsvm_with_dim(&text, d),
                None => parse_libsvm(&text),
            }
            .map_err(|e| CliError::Problem(e.to_string()))?;
            dataset_problem(
                &ds,
                c.graph,
                c.ridge,
                c.reg_weight,
                c.huber_alpha,
                c.holdout,
                c.shuffle,
                seed,
                "libsvm".into(),
            )
        }
        ProblemConfig::Imaging(c) => {
            let prob = gen_imaging_problem(
                c.size,
                c.rays_per_angle,
                c.angles,
                c.noise_variance,
                c.tv_weight,
                seed,
            )
            .map_err(|e| CliError::Problem(e.to_string()))?;
            let f = FiniteSum::least_squares(prob.projector.clone(), prob.measurements.clone())
                .map_err(|e| CliError::Problem(e.to_string()))?;
            let b_map = LinearMap::grad2d(prob.height, prob.width)
                .map_err(|e| CliError::Problem(e.to_string()))?;
            let g = ProxFn::l1(prob.tv_weight, b_map.out_dim())
                .map_err(|e| CliError::Problem(e.to_string()))?;
            let spec = ProblemSpec::new(f, g, b_map)?;
            Ok(BuiltProblem {
                label: "imaging".into(),
                spec,
                image: Some((prob.truth, prob.height, prob.width)),
                test_set: None,
            })
        }
        ProblemConfig::LassoToy => {
            // min 1/2 (x - 2)^2 + |x|, sample duplicated so batches divide
            let a = DenseMatrix::from_rows(vec![vec![1.0], vec![1.0]])
                .map_err(|e| CliError::Problem(e.to_string()))?;
            let f = FiniteSum::least_squares(a, vec![2.0, 2.0])
                .map_err(|e| CliError::Problem(e.to_string()))?;
            let g = ProxFn::l1(1.0, 1).map_err(|e| CliError::Problem(e.to_string()))?;
            let b_map = LinearMap::identity(1).map_err(|e| CliError::Problem(e.to_string()))?;
            Ok(BuiltProblem {
                label: "lasso_toy".into(),
                spec: ProblemSpec::new(f, g, b_map)?,
                image: None,
                test_set: None,
            })
        }
    }
}

/// Translates a solver config into runnable parameters for this problem.
pub fn solver_params(
    cfg: &SolverConfig,
    problem: &BuiltProblem,
    report_lambda_max: f64,
    seed: u64,
) -> SolverParams {
    let n = problem.spec.f.n();
    let variant = match cfg.variant {
        VariantConfig::Pdfp => Variant::Pdfp,
        VariantConfig::Spdfp => Variant::Spdfp { decay: cfg.decay },
        VariantConfig::SvrgSc => Variant::SvrgSc,
        VariantConfig::SvrgGc => Variant::SvrgGc,
    };
    let batch = cfg.batch.unwrap_or(n);
    let mut params = SolverParams::new(variant, cfg.gamma, cfg.lambda.unwrap_or(report_lambda_max));
    params.batch = batch;
    params.inner_len = cfg.m.unwrap_or_else(|| (n / batch.max(1)).max(1));
    params.stages = cfg.stages.unwrap_or(1);
    params.seed = seed;
    params.allow_invalid = cfg.allow_invalid;
    params
}

fn outer_budget(cfg: &SolverConfig, params: &SolverParams, n: usize, max_epochs: f64) -> usize {
    match params.variant {
        Variant::Pdfp => max_epochs.ceil() as usize,
        Variant::Spdfp { .. } => (max_epochs * n as f64 / params.batch as f64).ceil() as usize,
        Variant::SvrgSc | Variant::SvrgGc => cfg.stages.unwrap_or_else(|| {
            let stage_cost =
                (n as f64 + params.inner_len as f64 * params.batch as f64) / n as f64;
            (max_epochs / stage_cost).ceil().max(1.0) as usize
        }),
    }
}

#[derive(Serialize, Deserialize)]
struct ReferenceCache {
    fingerprint: u64,
    x: Vec<f64>,
    v: Vec<f64>,
    objective: f64,
    grad: Vec<f64>,
    bx: Vec<f64>,
    residual: f64,
    converged: bool,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn reference_fingerprint(config_text: &str, cfg: &ExperimentConfig) -> u64 {
    // the reference depends on the problem block, the seed and the
    // iteration budget; hashing those fields of the raw text is enough
    // because any problem edit changes the text
    let v: serde_json::Value = serde_json::from_str(config_text).unwrap_or_default();
    let key = format!(
        "{}|{}|{}",
        v.get("problem").cloned().unwrap_or_default(),
        cfg.seed,
        cfg.reference_iters
    );
    fnv1a(key.as_bytes())
}

/// Computes the reference solution, or loads it from `reference.json`
/// in the output directory when the fingerprint matches.
pub fn reference_with_cache(
    cfg: &ExperimentConfig,
    config_text: &str,
    problem: &BuiltProblem,
) -> Result<ReferenceSolution, CliError> {
    let path = cfg.output_dir.join("reference.json");
    let fingerprint = reference_fingerprint(config_text, cfg);
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(cache) = serde_json::from_str::<ReferenceCache>(&text) {
            if cache.fingerprint == fingerprint {
                return Ok(ReferenceSolution {
                    x: cache.x,
                    v: cache.v,
                    objective: cache.objective,
                    grad: cache.grad,
                    bx: cache.bx,
                    residual: cache.residual,
                    converged: cache.converged,
                });
            }
        }
    }
    let reference = compute_reference(&problem.spec, cfg.reference_iters.max(1));
    let cache = ReferenceCache {
        fingerprint,
        x: reference.x.clone(),
        v: reference.v.clone(),
        objective: reference.objective,
        grad: reference.grad.clone(),
        bx: reference.bx.clone(),
        residual: reference.residual,
        converged: reference.converged,
    };
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let text = serde_json::to_string(&cache).expect("cache serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(reference)
}

/// Validation outcome for one configured solver.
pub struct SolverValidation {
    pub name: String,
    pub report: ValidationReport,
}

pub fn validate_all(cfg: &ExperimentConfig, problem: &BuiltProblem) -> Vec<SolverValidation> {
    cfg.solvers
        .iter()
        .map(|sc| {
            let probe = solver_params(sc, problem, f64::INFINITY, cfg.seed);
            // first pass resolves lambda_max, second validates the
            // actual lambda that will run
            let report = validate_params(&problem.spec, &probe);
            let params = solver_params(sc, problem, report.lambda_max, cfg.seed);
            let report = validate_params(&problem.spec, &params);
            SolverValidation { name: sc.name.clone(), report }
        })
        .collect()
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn aggregate_rows(traces: &[RunTrace], pick: impl Fn(&[f64]) -> f64) -> Vec<TraceRow> {
    let min_rows = traces.iter().map(|t| t.rows.len()).min().unwrap_or(0);
    (0..min_rows)
        .map(|i| {
            let field = |get: fn(&TraceRow) -> Option<f64>| -> Option<f64> {
                let vals: Option<Vec<f64>> = traces.iter().map(|t| get(&t.rows[i])).collect();
                vals.map(|v| pick(&v))
            };
            let base = &traces[0].rows[i];
            TraceRow {
                stage: base.stage,
                epochs: base.epochs,
                seconds: pick(&traces.iter().map(|t| t.rows[i].seconds).collect::<Vec<_>>()),
                objective: pick(&traces.iter().map(|t| t.rows[i].objective).collect::<Vec<_>>()),
                rel_err: field(|r| r.rel_err),
                r_value: field(|r| r.r_value),
                psnr: field(|r| r.psnr),
                test_loss: field(|r| r.test_loss),
            }
        })
        .collect()
}

/// Everything `run_experiment` learned, for the summary and exit code.
pub struct ExperimentSummary {
    pub lines: Vec<String>,
    pub ran_any: bool,
    pub diverged: bool,
}

pub fn run_experiment(cfg: &ExperimentConfig, config_text: &str) -> Result<ExperimentSummary, CliError> {
    let problem = build_problem(cfg)?;
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let reference = reference_with_cache(cfg, config_text, &problem)?;

    let mut lines = Vec::new();
    lines.push(format!("problem: {}", problem.label));
    lines.push(format!(
        "reference: iters={} residual={:.3e} converged={}",
        cfg.reference_iters, reference.residual, reference.converged
    ));

    if let Some((truth, h, w)) = &problem.image {
        let path = cfg.output_dir.join("truth.pgm");
        fs::write(&path, write_pgm(truth, *h, *w, 1.0)).map_err(io_err(&path))?;
    }

    let threads: usize = std::env::var("THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&t| t >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1)
        });

    let mut ran_any = false;
    let mut diverged = false;
    for sc in &cfg.solvers {
        let probe = solver_params(sc, &problem, f64::INFINITY, cfg.seed);
        let lambda_max = validate_params(&problem.spec, &probe).lambda_max;
        let params0 = solver_params(sc, &problem, lambda_max, cfg.seed);
        let report = validate_params(&problem.spec, &params0);
        for w in &report.warnings {
            lines.push(format!("solver {}: warning: {w}", sc.name));
        }
        if !report.ok && !sc.allow_invalid {
            lines.push(format!(
                "solver {}: skipped, invalid parameters: {}",
                sc.name,
                report.reasons.join("; ")
            ));
            continue;
        }
        if let Some(k) = report.kappa {
            let m = report.variance.as_ref().map(|v| v.m).unwrap_or(f64::NAN);
            lines.push(format!("solver {}: kappa={k:.6} M={m:.6}", sc.name));
        }

        // run repetitions, THREADS at a time, results kept in seed order
        let results: Vec<(usize, Result<RunTrace, SolveError>)> = {
            let queue = Mutex::new((0..cfg.repetitions).collect::<Vec<_>>());
            let out = Mutex::new(Vec::new());
            std::thread::scope(|scope| {
                for _ in 0..threads.min(cfg.repetitions) {
                    scope.spawn(|| loop {
                        let rep = { queue.lock().unwrap().pop() };
                        let Some(rep) = rep else { break };
                        let trace = run_one(cfg, &problem, &reference, sc, lambda_max, rep);
                        out.lock().unwrap().push((rep, trace));
                    });
                }
            });
            let mut v = out.into_inner().unwrap();
            v.sort_by_key(|(rep, _)| *rep);
            v
        };

        let mut traces = Vec::new();
        for (rep, result) in results {
            match result {
                Ok(trace) => {
                    let path = cfg.output_dir.join(format!("{}_rep{rep}.csv", sc.name));
                    fs::write(&path, trace.to_csv(cfg.emit_walltime)).map_err(io_err(&path))?;
                    traces.push(trace);
                }
                Err(SolveError::Diverged { objective, threshold, row }) => {
                    diverged = true;
                    lines.push(format!(
                        "solver {}: rep {rep} diverged at row {row} (objective {objective:.3e} > {threshold:.3e})",
                        sc.name
                    ));
                }
                Err(other) => return Err(other.into()),
            }
        }
        if traces.is_empty() {
            continue;
        }
        ran_any = true;

        let min_rows = traces.iter().map(|t| t.rows.len()).min().unwrap();
        let max_rows = traces.iter().map(|t| t.rows.len()).max().unwrap();
        if min_rows != max_rows {
            lines.push(format!(
                "solver {}: ragged traces truncated to {min_rows} rows (longest {max_rows})",
                sc.name
            ));
        }

        let mean_rows = aggregate_rows(&traces, |v| mean_and_std(v).0);
        let avg = RunTrace { rows: mean_rows, ..Default::default() };
        let path = cfg.output_dir.join(format!("{}_avg.csv", sc.name));
        fs::write(&path, avg.to_csv(cfg.emit_walltime)).map_err(io_err(&path))?;
        if traces.len() > 1 {
            let std_rows = aggregate_rows(&traces, |v| mean_and_std(v).1);
            let std_trace = RunTrace { rows: std_rows, ..Default::default() };
            let path = cfg.output_dir.join(format!("{}_std.csv", sc.name));
            fs::write(&path, std_trace.to_csv(cfg.emit_walltime)).map_err(io_err(&path))?;
        }

        if let Some((_, h, w)) = &problem.image {
            let path = cfg.output_dir.join(format!("{}_recon.pgm", sc.name));
            fs::write(&path, write_pgm(&traces[0].final_x, *h, *w, 1.0)).map_err(io_err(&path))?;
        }

        let clamped: usize = traces.iter().map(|t| t.clamped_rel_err).sum();
        if clamped > 0 {
            lines.push(format!(
                "solver {}: {clamped} rows clamped a negative relative error",
                sc.name
            ));
        }
        if let Some(threshold) = cfg.stop.rel_err_threshold {
            let per_rep: Vec<f64> = traces
                .iter()
                .map(|t| {
                    t.rows
                        .iter()
                        .find(|r| r.rel_err.is_some_and(|e| e <= threshold))
                        .map_or(f64::INFINITY, |r| r.epochs)
                })
                .collect();
            let reached: Vec<f64> = per_rep.iter().copied().filter(|e| e.is_finite()).collect();
            if reached.is_empty() {
                lines.push(format!(
                    "solver {}: epochs_to_{threshold:e}: never within budget",
                    sc.name
                ));
            } else {
                let (mean, std) = mean_and_std(&reached);
                lines.push(format!(
                    "solver {}: epochs_to_{threshold:e}: mean={} std={} reached {}/{}",
                    sc.name,
                    fmt_float(mean),
                    fmt_float(std),
                    reached.len(),
                    per_rep.len()
                ));
            }
        }
    }

    let path = cfg.output_dir.join("summary.txt");
    fs::write(&path, lines.join("\n") + "\n").map_err(io_err(&path))?;
    Ok(ExperimentSummary { lines, ran_any, diverged })
}

fn run_one(
    cfg: &ExperimentConfig,
    problem: &BuiltProblem,
    reference: &ReferenceSolution,
    sc: &SolverConfig,
    lambda_max: f64,
    rep: usize,
) -> Result<RunTrace, SolveError> {
    let params = solver_params(sc, problem, lambda_max, cfg.seed + rep as u64);
    let image = problem
        .image
        .as_ref()
        .map(|(truth, _, _)| ImageTruth { pixels: truth, peak: 1.0 });
    let metrics = TraceMetrics {
        reference: Some(reference),
        image_truth: image,
        test_set: problem.test_set.as_ref(),
    };
    let opts = RunOptions {
        metrics,
        log_inner: false,
        rel_err_stop: cfg.stop.rel_err_threshold,
    };
    let x0 = vec![0.0; problem.spec.f.dim()];
    let v0 = vec![0.0; problem.spec.g.dim()];
    let budget = outer_budget(sc, &params, problem.spec.f.n(), cfg.stop.max_epochs);
    match params.variant {
        Variant::Pdfp => run_pdfp(&problem.spec, &params, &x0, &v0, budget, opts),
        Variant::Spdfp { .. } => run_spdfp(&problem.spec, &params, &x0, &v0, budget, opts),
        Variant::SvrgSc => {
            let mut p = params;
            p.stages = budget;
            run_svrg_pdfp_sc(&problem.spec, &p, &x0, &v0, opts)
        }
        Variant::SvrgGc => {
            let mut p = params;
            p.stages = budget;
            run_svrg_pdfp_gc(&problem.spec, &p, &x0, &v0, opts)
        }
    }
}
