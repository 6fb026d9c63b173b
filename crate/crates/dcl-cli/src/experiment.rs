//! Experiment orchestration: run one configured experiment, write its CSV
//! artifacts and manifest into the output directory, and record any failed
//! built-in check as data rather than a bare exit code.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use dcl_core::diagnostics::{batch_size_sweep, mix_seed, random_unit_source, sweep_to_csv};
use dcl_core::embedding::{write_dcle_file, EmbeddingBatch};
use dcl_core::encoder::{forward, write_dclp_file, EncoderParams};
use dcl_core::grad::{finite_diff_loss_grad, grad_total, gradient_relative_error};
use dcl_core::loss::{self, LossKind, LossSpec, WeightKind};
use dcl_core::trainer::{make_synthetic_dataset, train, SyntheticDataset, TrainHistory};

use crate::config::{
    ExperimentConfig, ExperimentKind, LossParams, NpcSweepParams, SweepSource, TrainParams,
};
use crate::manifest::{
    write_artifact, ArtifactEntry, ExperimentManifest, FailureRecord, RunStatus,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Core(#[from] dcl_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type RunResult<T> = Result<T, RunError>;

/// Output directory precedence: explicit config value, then the
/// `DCL_OUTPUT_DIR` environment variable, then `out`.
pub fn resolve_output_dir(explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os("DCL_OUTPUT_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out")),
    }
}

/// Run the experiment, writing artifacts plus `manifest.json` (and
/// `failure.json` when a check fails). A failed check yields `Ok` with
/// [`RunStatus::Failed`]; hard errors (io, invalid state) yield `Err`.
pub fn run_experiment(config: &ExperimentConfig) -> RunResult<ExperimentManifest> {
    let started = Instant::now();
    let out_dir = resolve_output_dir(config.output_dir.as_deref());
    std::fs::create_dir_all(&out_dir)?;

    let mut artifacts = Vec::new();
    let outcome = match config.experiment {
        ExperimentKind::GradCheck => run_gradcheck(config, &out_dir, &mut artifacts)?,
        ExperimentKind::NpcSweep => run_npc_sweep(config, &out_dir, &mut artifacts)?,
        ExperimentKind::BatchSizeTrain => run_batch_size_train(config, &out_dir, &mut artifacts)?,
        ExperimentKind::ConvergenceRace => run_convergence_race(config, &out_dir, &mut artifacts)?,
        ExperimentKind::LossTable => run_loss_table(config, &out_dir, &mut artifacts)?,
    };

    if let Some(failure) = &outcome.failure {
        let body = serde_json::to_vec_pretty(failure)?;
        write_artifact(&out_dir, "failure.json", &body, &mut artifacts)?;
    }
    let manifest = ExperimentManifest {
        experiment: config.experiment,
        version: format!("dcl-cli {} / dcl-core {}", env!("CARGO_PKG_VERSION"), dcl_core::VERSION),
        status: if outcome.failure.is_none() {
            RunStatus::Ok
        } else {
            RunStatus::Failed
        },
        failure: outcome.failure,
        metrics: outcome.metrics,
        config: config.clone(),
        artifacts,
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

struct Outcome {
    failure: Option<FailureRecord>,
    metrics: Option<serde_json::Value>,
}

impl Outcome {
    fn ok(metrics: serde_json::Value) -> Self {
        Outcome {
            failure: None,
            metrics: Some(metrics),
        }
    }
}

fn loss_grid() -> Vec<LossParams> {
    use crate::config::LossParams as P;
    let mut dclw_exp = P::of_kind(LossKind::Dclw);
    dclw_exp.weight_kind = Some(WeightKind::Exponential);
    vec![
        P::of_kind(LossKind::InfoNce),
        P::of_kind(LossKind::Dcl),
        P::of_kind(LossKind::Dclw),
        dclw_exp,
        P::of_kind(LossKind::AlignUniform),
    ]
}

fn run_gradcheck(
    config: &ExperimentConfig,
    _out_dir: &Path,
    artifacts: &mut Vec<ArtifactEntry>,
) -> RunResult<Outcome> {
    let gc = config.gradcheck.clone().unwrap_or_default();
    let mut grid = Vec::new();
    for &n in &gc.batch_sizes {
        for &dim in &gc.dims {
            for &tau in &gc.taus {
                grid.push((n, dim, tau));
            }
        }
    }

    let mut csv = String::from("loss,case,n,dim,tau,seed,rel_err\n");
    let mut max_rel = 0.0f64;
    let mut worst = json!(null);
    for (kind_idx, params) in loss_grid().into_iter().enumerate() {
        for case in 0..gc.cases {
            let (n, dim, tau) = grid[case % grid.len()];
            let seed = mix_seed(config.seed, kind_idx as u64, case as u64);
            let batch = EmbeddingBatch::random_unit(seed, n, dim)?;
            let spec = LossSpec {
                temperature: tau,
                ..params.to_spec()?
            };
            let analytic = grad_total(&batch, &spec)?;
            let numeric = finite_diff_loss_grad(&batch, &spec, gc.h)?;
            let rel = gradient_relative_error(&analytic, &numeric);
            csv.push_str(&format!(
                "{},{case},{n},{dim},{tau},{seed},{rel:e}\n",
                params.slug()
            ));
            if rel > max_rel {
                max_rel = rel;
                worst = json!({
                    "loss": params.slug(),
                    "case": case,
                    "n": n,
                    "dim": dim,
                    "tau": tau,
                    "seed": seed,
                    "rel_err": rel,
                });
            }
        }
    }
    write_artifact(_out_dir, "gradcheck.csv", csv.as_bytes(), artifacts)?;

    let metrics = json!({
        "max_rel_err": max_rel,
        "tolerance": gc.tolerance,
        "h": gc.h,
        "cases_per_loss": gc.cases,
        "worst": worst,
    });
    if max_rel > gc.tolerance {
        return Ok(Outcome {
            failure: Some(FailureRecord {
                check: "gradient_oracle".into(),
                message: format!(
                    "max relative error {max_rel:e} exceeds tolerance {:e}",
                    gc.tolerance
                ),
                evidence: metrics.clone(),
            }),
            metrics: Some(metrics),
        });
    }
    Ok(Outcome::ok(metrics))
}

/// Batch source for sweeps over a trained encoder: each batch embeds two
/// augmented views of dataset samples drawn by a per-batch stream.
fn trained_source<'a>(
    params: &'a EncoderParams,
    data: &'a SyntheticDataset,
    augment_noise: f64,
    seed: u64,
) -> impl FnMut(usize, usize) -> dcl_core::Result<EmbeddingBatch> + 'a {
    use rand::Rng;
    move |size, index| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, size as u64, index as u64));
        let mut pairs = Vec::with_capacity(size);
        for _ in 0..size {
            let point = &data.points[rng.gen_range(0..data.len())];
            let (v1, v2) = dcl_core::trainer::augment(point, &mut rng, augment_noise);
            pairs.push((forward(params, &v1)?.z, forward(params, &v2)?.z));
        }
        EmbeddingBatch::from_pairs(pairs)
    }
}

fn run_npc_sweep(
    config: &ExperimentConfig,
    out_dir: &Path,
    artifacts: &mut Vec<ArtifactEntry>,
) -> RunResult<Outcome> {
    let sweep: NpcSweepParams = config.npc_sweep.clone().unwrap_or_default();

    let trained = match sweep.source {
        SweepSource::Random => None,
        SweepSource::Trained => {
            let (data, train_params) = dataset_and_train(config);
            let loss = &train_params.losses[0];
            let train_config =
                train_params.to_train_config(loss, train_params.batch_sizes[0], train_params.seeds[0])?;
            let (encoder, _) = train(&train_config, &data)?;
            Some((encoder, data, train_params.augment_noise))
        }
    };

    let results = match &trained {
        None => batch_size_sweep(
            random_unit_source(config.seed, sweep.dim),
            &sweep.sizes,
            sweep.tau,
            sweep.batches_per_size,
            sweep.bins,
        )?,
        Some((encoder, data, noise)) => batch_size_sweep(
            trained_source(encoder, data, *noise, config.seed),
            &sweep.sizes,
            sweep.tau,
            sweep.batches_per_size,
            sweep.bins,
        )?,
    };
    write_artifact(out_dir, "npc_sweep.csv", sweep_to_csv(&results).as_bytes(), artifacts)?;

    if sweep.dump_embeddings {
        for &size in &sweep.sizes {
            let batch = match &trained {
                None => random_unit_source(config.seed, sweep.dim)(size, 0)?,
                Some((encoder, data, noise)) => {
                    trained_source(encoder, data, *noise, config.seed)(size, 0)?
                }
            };
            let name = format!("embeddings_size{size}.dcle");
            let path = out_dir.join(&name);
            write_dcle_file(&batch, &path)?;
            let bytes = std::fs::read(&path)?;
            artifacts.push(ArtifactEntry {
                path: name,
                sha256: crate::manifest::sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
    }

    let metrics = json!({
        "sizes": sweep.sizes,
        "mean_q": results.iter().map(|(_, s)| s.mean).collect::<Vec<_>>(),
        "cv": results.iter().map(|(_, s)| s.cv).collect::<Vec<_>>(),
        "mode_bin": results.iter().map(|(_, s)| s.mode_bin()).collect::<Vec<_>>(),
    });
    Ok(Outcome::ok(metrics))
}

fn dataset_and_train(config: &ExperimentConfig) -> (SyntheticDataset, TrainParams) {
    let dp = config.dataset.clone().unwrap_or_default();
    let tp = config.train.clone().unwrap_or_default();
    let data = make_synthetic_dataset(
        config.seed,
        dp.clusters,
        dp.d_in,
        dp.points_per_cluster,
        dp.center_scale,
        dp.noise_scale,
    )
    .expect("dataset params validated at parse time");
    (data, tp)
}

fn history_artifact(
    out_dir: &Path,
    artifacts: &mut Vec<ArtifactEntry>,
    name: &str,
    history: &TrainHistory,
) -> RunResult<()> {
    write_artifact(out_dir, name, history.to_csv().as_bytes(), artifacts)?;
    Ok(())
}

fn run_batch_size_train(
    config: &ExperimentConfig,
    out_dir: &Path,
    artifacts: &mut Vec<ArtifactEntry>,
) -> RunResult<Outcome> {
    let (data, tp) = dataset_and_train(config);
    let mut summary = String::from("loss,batch_size,seed,final_knn_acc,mean_grad_norm,mean_q_final\n");
    let mut metrics = Vec::new();
    for loss in &tp.losses {
        for &batch_size in &tp.batch_sizes {
            for &seed in &tp.seeds {
                let train_config = tp.to_train_config(loss, batch_size, seed)?;
                let (encoder, history) = train(&train_config, &data)?;
                let slug = loss.slug();
                history_artifact(
                    out_dir,
                    artifacts,
                    &format!("history_{slug}_bs{batch_size}_seed{seed}.csv"),
                    &history,
                )?;
                if tp.save_checkpoints {
                    let name = format!("checkpoint_{slug}_bs{batch_size}_seed{seed}.dclp");
                    let path = out_dir.join(&name);
                    write_dclp_file(&encoder, &path)?;
                    let bytes = std::fs::read(&path)?;
                    artifacts.push(ArtifactEntry {
                        path: name,
                        sha256: crate::manifest::sha256_hex(&bytes),
                        bytes: bytes.len() as u64,
                    });
                }
                let record = history.records.last().expect("epochs >= 1");
                summary.push_str(&format!(
                    "{slug},{batch_size},{seed},{},{},{}\n",
                    record.knn_acc,
                    history.mean_grad_norm(),
                    record.mean_q
                ));
                metrics.push(json!({
                    "loss": slug,
                    "batch_size": batch_size,
                    "seed": seed,
                    "final_knn_acc": record.knn_acc,
                    "mean_grad_norm": history.mean_grad_norm(),
                }));
            }
        }
    }
    write_artifact(out_dir, "batch_size_train.csv", summary.as_bytes(), artifacts)?;
    Ok(Outcome::ok(json!({ "runs": metrics })))
}

fn run_convergence_race(
    config: &ExperimentConfig,
    out_dir: &Path,
    artifacts: &mut Vec<ArtifactEntry>,
) -> RunResult<Outcome> {
    let (data, tp) = dataset_and_train(config);
    let batch_size = tp.batch_sizes[0];
    let mut summary =
        String::from("seed,loss,batch_size,final_knn_acc,threshold,epochs_to_threshold\n");
    let mut metrics = Vec::new();
    for &seed in &tp.seeds {
        let mut histories = Vec::new();
        for loss in &tp.losses {
            let train_config = tp.to_train_config(loss, batch_size, seed)?;
            let (_, history) = train(&train_config, &data)?;
            history_artifact(
                out_dir,
                artifacts,
                &format!("history_{}_bs{batch_size}_seed{seed}.csv", loss.slug()),
                &history,
            )?;
            histories.push((loss.slug(), history));
        }
        let baseline_final = histories[0].1.final_accuracy();
        let threshold = tp.threshold_fraction * baseline_final;
        for (slug, history) in &histories {
            let epochs = history.epochs_to_accuracy(threshold);
            summary.push_str(&format!(
                "{seed},{slug},{batch_size},{},{threshold},{}\n",
                history.final_accuracy(),
                epochs.map(|e| e.to_string()).unwrap_or_default()
            ));
            metrics.push(json!({
                "seed": seed,
                "loss": slug,
                "final_knn_acc": history.final_accuracy(),
                "threshold": threshold,
                "epochs_to_threshold": epochs,
            }));
        }
    }
    write_artifact(out_dir, "convergence_race.csv", summary.as_bytes(), artifacts)?;
    Ok(Outcome::ok(json!({ "runs": metrics })))
}

fn run_loss_table(
    config: &ExperimentConfig,
    out_dir: &Path,
    artifacts: &mut Vec<ArtifactEntry>,
) -> RunResult<Outcome> {
    const LOSS_TABLE_STREAM: u64 = 0x6c6f_7373_5f74_6162;
    let lt = config.loss_table.clone().unwrap_or_default();
    let mut rows = Vec::new();
    for params in loss_grid() {
        let mut spec = LossSpec {
            temperature: lt.tau,
            ..params.to_spec()?
        };
        spec.weight_sigma = lt.sigma;
        spec.weight_delta = lt.delta;
        let mut total_sum = 0.0;
        for b in 0..lt.batches {
            let batch = EmbeddingBatch::random_unit(
                mix_seed(config.seed, LOSS_TABLE_STREAM, b as u64),
                lt.n_samples,
                lt.dim,
            )?;
            total_sum += loss::evaluate(&batch, &spec)?.total;
        }
        let mean_total = total_sum / lt.batches as f64;
        rows.push((params.slug(), mean_total, mean_total / (2 * lt.n_samples) as f64));
    }
    let mut csv = String::from("loss,batches,mean_total,mean_per_anchor\n");
    for (slug, total, per_anchor) in &rows {
        csv.push_str(&format!("{slug},{},{total},{per_anchor}\n", lt.batches));
    }
    write_artifact(out_dir, "loss_table.csv", csv.as_bytes(), artifacts)?;
    let metrics = rows
        .iter()
        .map(|(slug, total, per_anchor)| {
            json!({ "loss": slug, "mean_total": total, "mean_per_anchor": per_anchor })
        })
        .collect::<Vec<_>>();
    Ok(Outcome::ok(json!({ "rows": metrics })))
}
