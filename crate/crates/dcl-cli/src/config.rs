//! JSON experiment configuration: strict parsing (unknown keys rejected),
//! defaults for omitted fields, and validation that names the violated
//! invariant. Parsing materializes every section the experiment uses, so a
//! parsed config serializes to an equivalent document.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use dcl_core::loss::{LossKind, LossSpec, WeightKind, DEFAULT_DELTA, DEFAULT_SIGMA, DEFAULT_TEMPERATURE};
use dcl_core::trainer::{LrRule, LrSchedule, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    NpcSweep,
    BatchSizeTrain,
    ConvergenceRace,
    GradCheck,
    LossTable,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::NpcSweep => "NpcSweep",
            ExperimentKind::BatchSizeTrain => "BatchSizeTrain",
            ExperimentKind::ConvergenceRace => "ConvergenceRace",
            ExperimentKind::GradCheck => "GradCheck",
            ExperimentKind::LossTable => "LossTable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub npc_sweep: Option<NpcSweepParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradcheck: Option<GradCheckParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_table: Option<LossTableParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepSource {
    /// Seeded uniform random unit vectors.
    Random,
    /// Views of the synthetic dataset embedded by a freshly trained encoder.
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NpcSweepParams {
    pub sizes: Vec<usize>,
    pub tau: f64,
    pub dim: usize,
    pub batches_per_size: usize,
    pub bins: usize,
    pub source: SweepSource,
    pub dump_embeddings: bool,
}

impl Default for NpcSweepParams {
    fn default() -> Self {
        NpcSweepParams {
            sizes: vec![32, 64, 128, 256, 512],
            tau: DEFAULT_TEMPERATURE,
            dim: 128,
            batches_per_size: dcl_core::diagnostics::DEFAULT_BATCHES_PER_SIZE,
            bins: dcl_core::diagnostics::DEFAULT_BINS,
            source: SweepSource::Random,
            dump_embeddings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetParams {
    pub clusters: usize,
    pub d_in: usize,
    pub points_per_cluster: usize,
    pub center_scale: f64,
    pub noise_scale: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            clusters: 8,
            d_in: 16,
            points_per_cluster: 100,
            center_scale: 1.0,
            noise_scale: 0.35,
        }
    }
}

/// One loss selection; omitted weight fields fall back to the stock values
/// (temperature 0.07, sigma 0.5, delta 3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossParams {
    pub kind: LossKind,
    pub temperature: f64,
    pub weight_kind: Option<WeightKind>,
    pub weight_sigma: f64,
    pub weight_delta: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            kind: LossKind::InfoNce,
            temperature: DEFAULT_TEMPERATURE,
            weight_kind: None,
            weight_sigma: DEFAULT_SIGMA,
            weight_delta: DEFAULT_DELTA,
        }
    }
}

impl LossParams {
    pub fn of_kind(kind: LossKind) -> Self {
        LossParams {
            kind,
            ..Default::default()
        }
    }

    pub fn to_spec(&self) -> Result<LossSpec, ConfigError> {
        let weight_kind = self.weight_kind.unwrap_or(match self.kind {
            LossKind::Dclw => WeightKind::VonMisesFisher,
            _ => WeightKind::None,
        });
        LossSpec {
            kind: self.kind,
            temperature: self.temperature,
            weight_kind,
            weight_sigma: self.weight_sigma,
            weight_delta: self.weight_delta,
        }
        .validated()
        .map_err(|e| ConfigError::Validation(e.to_string()))
    }

    /// Short file-name tag, e.g. `infonce`, `dcl`, `dclw-vmf`.
    pub fn slug(&self) -> String {
        match (self.kind, self.weight_kind) {
            (LossKind::InfoNce, _) => "infonce".into(),
            (LossKind::Dcl, _) => "dcl".into(),
            (LossKind::Dclw, Some(WeightKind::Exponential)) => "dclw-exp".into(),
            (LossKind::Dclw, _) => "dclw-vmf".into(),
            (LossKind::AlignUniform, _) => "alignuniform".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub losses: Vec<LossParams>,
    pub batch_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_rule: LrRule,
    pub schedule: LrSchedule,
    pub augment_noise: f64,
    pub knn_k: usize,
    pub momentum: f64,
    pub hidden_widths: Vec<usize>,
    pub embedding_dim: usize,
    /// Accuracy fraction of the baseline's final accuracy that defines the
    /// convergence-race threshold.
    pub threshold_fraction: f64,
    pub save_checkpoints: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            losses: vec![
                LossParams::of_kind(LossKind::InfoNce),
                LossParams::of_kind(LossKind::Dcl),
            ],
            batch_sizes: vec![8, 64],
            seeds: vec![1, 2, 3],
            epochs: 30,
            base_lr: 0.03,
            lr_rule: LrRule::LinearScaled,
            schedule: LrSchedule::Cosine,
            augment_noise: 0.5,
            knn_k: 5,
            momentum: 0.9,
            hidden_widths: vec![32, 32],
            embedding_dim: 16,
            threshold_fraction: 0.9,
            save_checkpoints: false,
        }
    }
}

impl TrainParams {
    pub fn to_train_config(
        &self,
        loss: &LossParams,
        batch_size: usize,
        seed: u64,
    ) -> Result<TrainConfig, ConfigError> {
        Ok(TrainConfig {
            loss: loss.to_spec()?,
            batch_size,
            epochs: self.epochs,
            base_lr: self.base_lr,
            lr_rule: self.lr_rule,
            schedule: self.schedule,
            seed,
            augment_noise: self.augment_noise,
            knn_k: self.knn_k,
            momentum: self.momentum,
            hidden_widths: self.hidden_widths.clone(),
            embedding_dim: self.embedding_dim,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckParams {
    /// Random batches per loss kind, spread round-robin over the grid.
    pub cases: usize,
    pub h: f64,
    pub tolerance: f64,
    pub batch_sizes: Vec<usize>,
    pub dims: Vec<usize>,
    pub taus: Vec<f64>,
}

impl Default for GradCheckParams {
    fn default() -> Self {
        GradCheckParams {
            cases: 100,
            h: 1e-4,
            tolerance: 1e-6,
            batch_sizes: vec![2, 4, 8],
            dims: vec![3, 16],
            taus: vec![0.07, 0.1, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossTableParams {
    pub n_samples: usize,
    pub dim: usize,
    pub tau: f64,
    pub sigma: f64,
    pub delta: f64,
    pub batches: usize,
}

impl Default for LossTableParams {
    fn default() -> Self {
        LossTableParams {
            n_samples: 8,
            dim: 16,
            tau: DEFAULT_TEMPERATURE,
            sigma: DEFAULT_SIGMA,
            delta: DEFAULT_DELTA,
            batches: 20,
        }
    }
}

/// Parse, fill defaults for the sections the experiment needs, validate.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut config: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    materialize_defaults(&mut config);
    validate(&config)?;
    Ok(config)
}

fn materialize_defaults(config: &mut ExperimentConfig) {
    match config.experiment {
        ExperimentKind::NpcSweep => {
            let sweep = config.npc_sweep.get_or_insert_with(Default::default);
            if sweep.source == SweepSource::Trained {
                config.dataset.get_or_insert_with(Default::default);
                config.train.get_or_insert_with(Default::default);
            }
        }
        ExperimentKind::BatchSizeTrain | ExperimentKind::ConvergenceRace => {
            config.dataset.get_or_insert_with(Default::default);
            config.train.get_or_insert_with(Default::default);
        }
        ExperimentKind::GradCheck => {
            config.gradcheck.get_or_insert_with(Default::default);
        }
        ExperimentKind::LossTable => {
            config.loss_table.get_or_insert_with(Default::default);
        }
    }
}

fn not_positive(x: f64) -> bool {
    !x.is_finite() || x <= 0.0
}

fn validate(config: &ExperimentConfig) -> Result<(), ConfigError> {
    let fail = |msg: String| Err(ConfigError::Validation(msg));
    if let Some(sweep) = &config.npc_sweep {
        if sweep.sizes.is_empty() {
            return fail("npc_sweep.sizes must not be empty".into());
        }
        if sweep.sizes.iter().any(|s| *s < 2) {
            return fail("npc_sweep.sizes entries must be >= 2".into());
        }
        if not_positive(sweep.tau) {
            return fail(format!("temperature must be positive, got {}", sweep.tau));
        }
        if sweep.dim == 0 || sweep.bins == 0 || sweep.batches_per_size == 0 {
            return fail("npc_sweep dim, bins, batches_per_size must be >= 1".into());
        }
    }
    if let Some(dataset) = &config.dataset {
        if dataset.clusters < 2 || dataset.d_in < 2 || dataset.points_per_cluster == 0 {
            return fail(
                "dataset needs clusters >= 2, d_in >= 2, points_per_cluster >= 1".into(),
            );
        }
        if !(dataset.center_scale >= 0.0 && dataset.noise_scale >= 0.0) {
            return fail("dataset scales must be non-negative".into());
        }
    }
    if let Some(train) = &config.train {
        if train.losses.is_empty() || train.batch_sizes.is_empty() || train.seeds.is_empty() {
            return fail("train.losses, train.batch_sizes, train.seeds must not be empty".into());
        }
        if !(train.threshold_fraction > 0.0 && train.threshold_fraction <= 1.0) {
            return fail(format!(
                "train.threshold_fraction must be in (0, 1], got {}",
                train.threshold_fraction
            ));
        }
        // full TrainConfig validation per combination, via the core rules
        for loss in &train.losses {
            for &batch_size in &train.batch_sizes {
                let config = train.to_train_config(loss, batch_size, 0)?;
                config
                    .validate()
                    .map_err(|e| ConfigError::Validation(e.to_string()))?;
            }
        }
    }
    if let Some(gc) = &config.gradcheck {
        if gc.cases == 0 {
            return fail("gradcheck.cases must be >= 1".into());
        }
        if !(1e-7..=1e-2).contains(&gc.h) {
            return fail(format!("gradcheck.h must be in [1e-7, 1e-2], got {}", gc.h));
        }
        if not_positive(gc.tolerance) {
            return fail("gradcheck.tolerance must be positive".into());
        }
        if gc.batch_sizes.iter().any(|n| *n < 2) {
            return fail("gradcheck.batch_sizes entries must be >= 2".into());
        }
        if gc.dims.is_empty() || gc.taus.is_empty() || gc.batch_sizes.is_empty() {
            return fail("gradcheck grid lists must not be empty".into());
        }
        if gc.taus.iter().any(|t| not_positive(*t)) {
            return fail("temperature must be positive in gradcheck.taus".into());
        }
    }
    if let Some(lt) = &config.loss_table {
        if lt.n_samples < 2 || lt.dim == 0 || lt.batches == 0 {
            return fail("loss_table needs n_samples >= 2, dim >= 1, batches >= 1".into());
        }
        if not_positive(lt.tau) {
            return fail(format!("temperature must be positive, got {}", lt.tau));
        }
        if not_positive(lt.sigma) || not_positive(lt.delta) {
            return fail("loss_table sigma and delta must be positive".into());
        }
    }
    Ok(())
}

pub fn serialize_config(config: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(config).expect("config serialization cannot fail")
}
