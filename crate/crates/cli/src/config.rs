//! Experiment configuration: one JSON document, strictly validated
//! (unknown keys rejected, version pinned).

use std::path::PathBuf;

use serde::Deserialize;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub problem: ProblemConfig,
    pub solvers: Vec<SolverConfig>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_reference_iters")]
    pub reference_iters: usize,
    pub stop: StopConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Opt-in wall-clock column in the CSVs. Off by default so that the
    /// output bytes are a pure function of (config, seed).
    #[serde(default)]
    pub emit_walltime: bool,
}

fn default_repetitions() -> usize {
    1
}

fn default_reference_iters() -> usize {
    10_000
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemConfig {
    SyntheticLogistic(SyntheticLogisticConfig),
    Libsvm(LibsvmConfig),
    Imaging(ImagingConfig),
    LassoToy,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLogisticConfig {
    pub n: usize,
    pub d: usize,
    pub separation: f64,
    pub noise: f64,
    pub graph: GraphConfig,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_reg_weight")]
    pub reg_weight: f64,
    /// Smoothing of the composite L1 term; absent means plain L1.
    #[serde(default)]
    pub huber_alpha: Option<f64>,
    /// Hold out half the samples for test loss.
    #[serde(default)]
    pub holdout: bool,
    /// One-time seeded shuffle of sample order, randomizing the
    /// contiguous batch partition.
    #[serde(default)]
    pub shuffle: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibsvmConfig {
    pub path: PathBuf,
    pub graph: GraphConfig,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_reg_weight")]
    pub reg_weight: f64,
    #[serde(default)]
    pub huber_alpha: Option<f64>,
    /// Feature dimension override (defaults to the largest index seen).
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_true")]
    pub holdout: bool,
    #[serde(default)]
    pub shuffle: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagingConfig {
    pub size: usize,
    pub rays_per_angle: usize,
    pub angles: usize,
    pub noise_variance: f64,
    /// TV weight; absent picks 0.05 * max measurement magnitude.
    #[serde(default)]
    pub tv_weight: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphConfig {
    Chain,
    RandomSparse { p: f64 },
}

fn default_ridge() -> f64 {
    1e-4
}

fn default_reg_weight() -> f64 {
    1e-4
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopConfig {
    pub max_epochs: f64,
    #[serde(default)]
    pub rel_err_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantConfig {
    Pdfp,
    Spdfp,
    SvrgSc,
    SvrgGc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub name: String,
    pub variant: VariantConfig,
    pub gamma: f64,
    /// Dual step; absent picks the admissible maximum 1/rho_max(BB^T).
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Inner loop length m; absent picks one pass (n / batch).
    #[serde(default)]
    pub m: Option<usize>,
    /// Mini-batch size; absent means full batch.
    #[serde(default)]
    pub batch: Option<usize>,
    /// Outer stage count T; absent derives it from stop.max_epochs.
    #[serde(default)]
    pub stages: Option<usize>,
    /// Step decay exponent for spdfp.
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub allow_invalid: bool,
}

fn default_decay() -> f64 {
    0.5
}

/// Structural checks that serde cannot express.
pub fn check_structure(cfg: &ExperimentConfig) -> Result<(), String> {
    if cfg.version != CONFIG_VERSION {
        return Err(format!(
            "unsupported config version {} (expected {CONFIG_VERSION})",
            cfg.version
        ));
    }
    if cfg.solvers.is_empty() {
        return Err("config needs at least one solver".into());
    }
    if cfg.repetitions == 0 {
        return Err("repetitions must be at least 1".into());
    }
    if cfg.stop.max_epochs <= 0.0 {
        return Err("stop.max_epochs must be positive".into());
    }
    let mut names: Vec<&str> = cfg.solvers.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != cfg.solvers.len() {
        return Err("solver names must be unique".into());
    }
    if cfg.solvers.iter().any(|s| s.name.is_empty() || s.name.contains(['/', '\\'])) {
        return Err("solver names must be non-empty and path-safe".into());
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, String> {
    let cfg: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| format!("config parse error: {e}"))?;
    check_structure(&cfg)?;
    Ok(cfg)
}
