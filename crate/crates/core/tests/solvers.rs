//! Solver invariants: determinism, the full-batch and Prox-SVRG
//! reductions, dual feasibility, saddle-point stationarity at the
//! reference, and the divergence guard under stochastic noise.

mod common;

use common::*;
use pdfp_core::metrics::{compute_reference, r_value};
use pdfp_core::prox::DEFAULT_DOMAIN_TOL;
use pdfp_core::solvers::{
    run_pdfp, run_spdfp, run_svrg_pdfp_gc, run_svrg_pdfp_sc, RunOptions,
};
use pdfp_core::{ProxFn, SolverParams, TraceMetrics, Variant};
use pdfp_core::{DenseMatrix, FiniteSum, LinearMap, ProblemSpec};
use rand::Rng;

fn sc_params(gamma: f64, lambda: f64, m: usize, b: usize, stages: usize, seed: u64) -> SolverParams {
    let mut p = SolverParams::new(Variant::SvrgSc, gamma, lambda);
    p.inner_len = m;
    p.batch = b;
    p.stages = stages;
    p.seed = seed;
    p
}

#[test]
fn identical_seeds_give_bitwise_identical_traces() {
    let p = graph_guided_toy(32, 6, 3, 0.05, 0.1, Some(0.05));
    let reference = compute_reference(&p, 3000);
    let params = sc_params(0.05, 0.15, 40, 4, 6, 99);
    let opts = RunOptions {
        metrics: TraceMetrics::with_reference(&reference),
        log_inner: true,
        rel_err_stop: None,
    };
    let d0 = vec![0.0; p.f.dim()];
    let r0 = vec![0.0; p.g.dim()];
    let a = run_svrg_pdfp_sc(&p, &params, &d0, &r0, opts).unwrap();
    let b = run_svrg_pdfp_sc(&p, &params, &d0, &r0, opts).unwrap();
    assert_eq!(a.rows.len(), b.rows.len());
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(ra.objective.to_bits(), rb.objective.to_bits());
        assert_eq!(ra.r_value.map(f64::to_bits), rb.r_value.map(f64::to_bits));
        assert_eq!(ra.epochs.to_bits(), rb.epochs.to_bits());
    }
    for (ia, ib) in a.inner.iter().zip(&b.inner) {
        assert_eq!(ia.x, ib.x);
        assert_eq!(ia.v, ib.v);
    }
    assert_eq!(a.final_x, b.final_x);
}

#[test]
fn full_batch_svrg_reduces_to_pdfp() {
    let p = graph_guided_toy(24, 5, 7, 0.05, 0.1, Some(0.05));
    let n = p.f.n();
    let gamma = 0.8 / p.f.l_max();
    let lambda = 0.15;
    let iters = 200;

    let params_sc = sc_params(gamma, lambda, iters, n, 1, 1);
    let opts = RunOptions { metrics: TraceMetrics::none(), log_inner: true, rel_err_stop: None };
    let d0 = vec![0.1; p.f.dim()];
    let r0 = vec![0.0; p.g.dim()];
    let svrg = run_svrg_pdfp_sc(&p, &params_sc, &d0, &r0, opts).unwrap();

    let mut params_pdfp = SolverParams::new(Variant::Pdfp, gamma, lambda);
    params_pdfp.batch = n;
    let pdfp = run_pdfp(&p, &params_pdfp, &d0, &r0, iters, opts).unwrap();

    assert_eq!(svrg.inner.len(), iters);
    assert_eq!(pdfp.inner.len(), iters);
    let mut max_dev = 0.0f64;
    for (a, b) in svrg.inner.iter().zip(&pdfp.inner) {
        max_dev = max_dev.max(dist_inf(&a.x, &b.x)).max(dist_inf(&a.v, &b.v));
    }
    // svrg_grad collapses onto the full-gradient code path at b = n, so
    // the arithmetic paths coincide
    assert_eq!(max_dev, 0.0);
}

#[test]
fn spdfp_with_full_batch_and_zero_decay_is_pdfp() {
    let p = graph_guided_toy(24, 5, 11, 0.05, 0.1, None);
    let n = p.f.n();
    let gamma = 0.8 / p.f.l_max();
    let lambda = 0.2;
    let opts = RunOptions { metrics: TraceMetrics::none(), log_inner: true, rel_err_stop: None };
    let d0 = vec![0.0; p.f.dim()];
    let r0 = vec![0.0; p.g.dim()];

    let mut sp = SolverParams::new(Variant::Spdfp { decay: 0.0 }, gamma, lambda);
    sp.batch = n;
    sp.seed = 5;
    let spdfp = run_spdfp(&p, &sp, &d0, &r0, 100, opts).unwrap();

    let mut pp = SolverParams::new(Variant::Pdfp, gamma, lambda);
    pp.batch = n;
    let pdfp = run_pdfp(&p, &pp, &d0, &r0, 100, opts).unwrap();

    for (a, b) in spdfp.inner.iter().zip(&pdfp.inner) {
        assert_eq!(a.x, b.x);
        assert_eq!(a.v, b.v);
    }
    for (ra, rb) in spdfp.rows.iter().zip(&pdfp.rows) {
        assert_eq!(ra.objective.to_bits(), rb.objective.to_bits());
    }
}

#[test]
fn prox_svrg_equivalence_at_identity_map() {
    // B = I, lambda = 1, b = 1: the SC solver must track the two-line
    // Prox-SVRG reference on the shared block sequence
    let n = 20;
    let d = 6;
    let mut r = rng(71);
    let rows: Vec<Vec<f64>> =
        (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let labels: Vec<f64> =
        (0..n).map(|_| if r.random_range(0..2u8) == 0 { -1.0 } else { 1.0 }).collect();
    let f = FiniteSum::ridge_logistic(DenseMatrix::from_rows(rows).unwrap(), labels, 0.05).unwrap();
    let g = ProxFn::l1(0.1, d).unwrap();
    let p = ProblemSpec::new(f.clone(), g, LinearMap::identity(d).unwrap()).unwrap();

    let gamma = 0.2 / p.f.l_max(); // inside min(beta, 1/M) at b = 1
    let (m, stages, seed) = (50, 5, 1234);
    let params = sc_params(gamma, 1.0, m, 1, stages, seed);
    let opts = RunOptions { metrics: TraceMetrics::none(), log_inner: true, rel_err_stop: None };
    let x0 = vec![0.0; d];
    let v0 = vec![0.0; d];
    let trace = run_svrg_pdfp_sc(&p, &params, &x0, &v0, opts).unwrap();

    let oracle = prox_svrg_reference(&f, &p.g, gamma, m, stages, 1, seed, &x0);
    assert_eq!(trace.inner.len(), oracle.len());
    let mut max_dev = 0.0f64;
    for (a, b) in trace.inner.iter().zip(&oracle) {
        max_dev = max_dev.max(dist_inf(&a.x, b));
    }
    assert!(max_dev <= 1e-12, "max deviation {max_dev}");
}

#[test]
fn dual_iterates_stay_feasible() {
    let p = graph_guided_toy(32, 6, 13, 0.05, 0.1, None); // plain L1 dual ball
    let params = sc_params(0.05, 0.15, 30, 4, 5, 3);
    let opts = RunOptions { metrics: TraceMetrics::none(), log_inner: true, rel_err_stop: None };
    let trace =
        run_svrg_pdfp_sc(&p, &params, &vec![0.0; p.f.dim()], &vec![0.0; p.g.dim()], opts).unwrap();
    assert!(!trace.inner.is_empty());
    for it in &trace.inner {
        assert!(
            p.g.conj_value(&it.v, DEFAULT_DOMAIN_TOL).is_finite(),
            "dual iterate left dom(g*) at stage {} step {}",
            it.stage,
            it.k
        );
    }
}

#[test]
fn saddle_point_stationarity_at_reference() {
    let p = graph_guided_toy(32, 6, 17, 0.05, 0.1, Some(0.05));
    let reference = compute_reference(&p, 20_000);
    assert!(reference.converged, "residual {}", reference.residual);

    let mut r = rng(73);
    let radius = p.g.conjugate_info().domain_radius;
    for _ in 0..100 {
        // primal condition: f(x) - f(x*) + (B^T v*)^T (x - x*) >= 0
        let delta = random_vec(&mut r, p.f.dim());
        let x: Vec<f64> = reference.x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let btv = p.b_map.adjoint_apply(&reference.v).unwrap();
        let primal = p.f.value(&x) - p.f.value(&reference.x) + dot(&btv, &delta);
        assert!(primal >= -1e-6, "primal condition violated: {primal}");

        // dual condition: g*(v) - g*(v*) - (B x*)^T (v - v*) >= 0
        let v: Vec<f64> = (0..p.g.dim()).map(|_| r.random_range(-radius..radius)).collect();
        let gv = p.g.conj_value(&v, DEFAULT_DOMAIN_TOL);
        let gv_star = p.g.conj_value(&reference.v, DEFAULT_DOMAIN_TOL);
        let dv: Vec<f64> = v.iter().zip(&reference.v).map(|(a, b)| a - b).collect();
        let dual = gv - gv_star - dot(&reference.bx, &dv);
        assert!(dual >= -1e-6, "dual condition violated: {dual}");
    }
}

#[test]
fn recorded_r_values_are_nonnegative() {
    let p = graph_guided_toy(32, 6, 19, 0.05, 0.1, Some(0.05));
    let reference = compute_reference(&p, 10_000);
    let params = sc_params(0.05, 0.15, 50, 4, 8, 21);
    let opts = RunOptions {
        metrics: TraceMetrics::with_reference(&reference),
        log_inner: false,
        rel_err_stop: None,
    };
    let trace =
        run_svrg_pdfp_sc(&p, &params, &vec![0.0; p.f.dim()], &vec![0.0; p.g.dim()], opts).unwrap();
    for row in &trace.rows {
        let r_val = row.r_value.expect("reference attached");
        assert!(r_val >= -1e-12, "convergence functional went negative: R = {r_val}");
    }
}

#[test]
fn pdfp_matches_gradient_descent_when_g_is_zero() {
    let f = random_least_squares(12, 4, 1.0, 23);
    let d = 4;
    let p = ProblemSpec::new(
        f.clone(),
        ProxFn::zero(d).unwrap(),
        LinearMap::identity(d).unwrap(),
    )
    .unwrap();
    let gamma = 0.9 / f.l_max();
    let mut params = SolverParams::new(Variant::Pdfp, gamma, 1.0);
    params.batch = 12;
    let opts = RunOptions { metrics: TraceMetrics::none(), log_inner: true, rel_err_stop: None };
    let trace = run_pdfp(&p, &params, &vec![0.5; d], &vec![0.0; d], 50, opts).unwrap();

    let mut x = vec![0.5; d];
    for it in &trace.inner {
        let g = f.full_grad(&x);
        for j in 0..d {
            x[j] -= gamma * g[j];
        }
        assert!(dist_inf(&x, &it.x) <= 1e-14 * (1.0 + norm_inf(&x)));
    }
}

#[test]
fn pdfp_residuals_decrease_after_burn_in() {
    let f = random_least_squares(16, 4, 1.0, 27);
    // ridge-like strong convexity via an L2 regularizer through B = I
    let p = ProblemSpec::new(
        f.clone(),
        ProxFn::sq_l2(0.05, 4).unwrap(),
        LinearMap::identity(4).unwrap(),
    )
    .unwrap();
    let mut params = SolverParams::new(Variant::Pdfp, 0.9 / f.l_max(), 1.0);
    params.batch = 16;
    let trace =
        run_pdfp(&p, &params, &vec![1.0; 4], &vec![0.0; 4], 300, RunOptions::new()).unwrap();
    let burn_in = 10;
    for k in burn_in..trace.residuals.len() - 1 {
        assert!(
            trace.residuals[k + 1] <= trace.residuals[k] * (1.0 + 1e-12),
            "residual rose at iteration {k}"
        );
    }
}

#[test]
fn gc_full_batch_single_stage_outputs_inner_average() {
    let p = graph_guided_toy(24, 5, 29, 0.05, 0.1, None);
    let n = p.f.n();
    let gamma = 0.8 / p.f.l_max();
    let mut params = SolverParams::new(Variant::SvrgGc, gamma, 0.15);
    params.batch = n;
    params.inner_len = 25;
    params.stages = 1;
    let opts = RunOptions { metrics: TraceMetrics::none(), log_inner: true, rel_err_stop: None };
    let d0 = vec![0.0; p.f.dim()];
    let r0 = vec![0.0; p.g.dim()];
    let trace = run_svrg_pdfp_gc(&p, &params, &d0, &r0, opts).unwrap();
    let mut avg = vec![0.0; p.f.dim()];
    for it in &trace.inner {
        for (a, v) in avg.iter_mut().zip(&it.x) {
            *a += v;
        }
    }
    for a in avg.iter_mut() {
        *a /= trace.inner.len() as f64;
    }
    assert!(dist_inf(&avg, &trace.final_x) <= 1e-14);
}

#[test]
fn gc_runs_with_single_inner_step() {
    let p = graph_guided_toy(24, 5, 31, 0.05, 0.1, None);
    let mut params = SolverParams::new(Variant::SvrgGc, 0.02, 0.15);
    params.batch = 4;
    params.inner_len = 1;
    params.stages = 10;
    let trace = run_svrg_pdfp_gc(
        &p,
        &params,
        &vec![0.0; p.f.dim()],
        &vec![0.0; p.g.dim()],
        RunOptions::new(),
    )
    .unwrap();
    assert_eq!(trace.rows.len(), 11);
    assert!(trace.rows.iter().all(|r| r.objective.is_finite()));
}

#[test]
fn stochastic_divergence_guard_needs_persistence() {
    let p = graph_guided_toy(24, 5, 37, 0.05, 0.1, None);
    let mut params = SolverParams::new(Variant::Spdfp { decay: 0.0 }, 50.0, 0.15);
    params.batch = 4;
    params.seed = 2;
    params.allow_invalid = true;
    let err = run_spdfp(
        &p,
        &params,
        &vec![0.0; p.f.dim()],
        &vec![0.0; p.g.dim()],
        4000,
        RunOptions::new(),
    )
    .unwrap_err();
    match err {
        pdfp_core::solvers::SolveError::Diverged { row, .. } => {
            assert!(row >= 10, "stochastic guard fired before ten consecutive rows: {row}");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn reference_progress_and_residual_certificate() {
    let p = graph_guided_toy(32, 6, 41, 0.05, 0.1, Some(0.05));
    let half = compute_reference(&p, 2500);
    let full = compute_reference(&p, 5000);
    assert!(full.residual <= half.residual);
    // r_value of the half-precision point against the full reference
    let r_half = r_value(&p, &full, &half.x, &half.v);
    assert!(r_half >= -1e-12);
}

#[test]
fn early_stop_honors_relative_error_threshold() {
    let p = lasso_1d();
    let reference = compute_reference(&p, 4000);
    let mut params = SolverParams::new(Variant::Pdfp, 0.5, 1.0);
    params.batch = 2;
    let opts = RunOptions {
        metrics: TraceMetrics::with_reference(&reference),
        log_inner: false,
        rel_err_stop: Some(1e-6),
    };
    let trace = run_pdfp(&p, &params, &[0.0], &[0.0], 10_000, opts).unwrap();
    assert!(trace.rows.len() < 10_000, "early stop never fired");
    let last = trace.rows.last().unwrap();
    assert!(last.rel_err.unwrap() <= 1e-6);
}
