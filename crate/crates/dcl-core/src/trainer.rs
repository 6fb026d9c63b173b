//! Toy self-supervised training harness: synthetic clustered vectors, additive
//! Gaussian two-view augmentation, SGD (optional momentum, cosine schedule)
//! over the batch-mean anchor loss, and kNN evaluation of the embeddings.
//!
//! Everything is deterministic given the config seed: one stream drives
//! parameter init, a second drives epoch shuffles and augmentation noise, and
//! the train/eval split hashes each index with the seed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::mix_seed;
use crate::embedding::EmbeddingBatch;
use crate::encoder::{
    backward, forward, init_params, EncoderParams, LayerDims, ParamGrads,
};
use crate::error::{Error, Result};
use crate::grad::{grad_total, npc_multiplier};
use crate::loss::{self, LossKind, LossSpec};

const TRAIN_STREAM_SALT: u64 = 0x7472_6169_6e5f_7367; // distinct from the init stream

/// Gaussian blobs around cluster centers drawn on a sphere.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub cluster_centers: Vec<Vec<f64>>,
    pub noise_scale: f64,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.points.first().map(|p| p.len()).unwrap_or(0)
    }
}

/// Deterministic clustered dataset: centers uniform on the sphere of radius
/// `center_scale`, points = center + `noise_scale` * N(0, I), grouped by
/// cluster in label order.
pub fn make_synthetic_dataset(
    seed: u64,
    clusters: usize,
    d_in: usize,
    points_per_cluster: usize,
    center_scale: f64,
    noise_scale: f64,
) -> Result<SyntheticDataset> {
    if clusters < 2 || d_in < 2 || points_per_cluster == 0 {
        return Err(Error::InvalidConfig {
            reason: format!(
                "dataset needs clusters >= 2, d_in >= 2, points_per_cluster >= 1; \
                 got {clusters}, {d_in}, {points_per_cluster}"
            ),
        });
    }
    if !(center_scale.is_finite() && center_scale >= 0.0) || !(noise_scale.is_finite() && noise_scale >= 0.0) {
        return Err(Error::InvalidConfig {
            reason: format!("scales must be finite and non-negative, got {center_scale}, {noise_scale}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cluster_centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| {
            crate::embedding::random_unit_vector(&mut rng, d_in)
                .components()
                .iter()
                .map(|c| c * center_scale)
                .collect()
        })
        .collect();
    let mut points = Vec::with_capacity(clusters * points_per_cluster);
    let mut labels = Vec::with_capacity(clusters * points_per_cluster);
    for (label, center) in cluster_centers.iter().enumerate() {
        for _ in 0..points_per_cluster {
            let point = center
                .iter()
                .map(|c| c + noise_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            points.push(point);
            labels.push(label);
        }
    }
    Ok(SyntheticDataset {
        points,
        labels,
        cluster_centers,
        noise_scale,
    })
}

/// Two independently noised views of one input.
pub fn augment(x: &[f64], rng: &mut ChaCha8Rng, noise: f64) -> (Vec<f64>, Vec<f64>) {
    let mut view = || -> Vec<f64> {
        x.iter()
            .map(|v| v + noise * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    (view(), view())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrRule {
    Fixed,
    /// `lr = base_lr * batch_size / 256`.
    LinearScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant,
    /// `lr(t) = lr0 * 0.5 * (1 + cos(pi * t / T))` over total steps `T`.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_rule: LrRule,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub augment_noise: f64,
    pub knn_k: usize,
    pub momentum: f64,
    pub hidden_widths: Vec<usize>,
    pub embedding_dim: usize,
}

impl TrainConfig {
    /// Small-scale defaults: 30 epochs, base lr 0.03 linearly scaled by
    /// batch size over 256, cosine schedule, plain SGD.
    pub fn toy(loss: LossSpec, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            loss,
            batch_size,
            epochs: 30,
            base_lr: 0.03,
            lr_rule: LrRule::LinearScaled,
            schedule: LrSchedule::Cosine,
            seed,
            augment_noise: 0.5,
            knn_k: 5,
            momentum: 0.0,
            hidden_widths: vec![32, 32],
            embedding_dim: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let fail = |reason: String| Err(Error::InvalidConfig { reason });
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return fail(format!("base_lr must be finite and >= 0, got {}", self.base_lr));
        }
        if !(self.augment_noise.is_finite() && self.augment_noise >= 0.0) {
            return fail(format!("augment_noise must be >= 0, got {}", self.augment_noise));
        }
        if self.knn_k == 0 {
            return fail("knn_k must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.embedding_dim == 0 || self.hidden_widths.contains(&0) {
            return fail("encoder widths must be >= 1".into());
        }
        Ok(())
    }

    /// Base learning rate after the batch-size rule.
    pub fn scaled_base_lr(&self) -> f64 {
        match self.lr_rule {
            LrRule::Fixed => self.base_lr,
            LrRule::LinearScaled => self.base_lr * self.batch_size as f64 / 256.0,
        }
    }

    /// Learning rate at 0-based `step` out of `total_steps`.
    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        let base = self.scaled_base_lr();
        match self.schedule {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-anchor train loss over the epoch's steps.
    pub loss: f64,
    pub knn_acc: f64,
    /// Mean coupling multiplier over every anchor seen this epoch.
    pub mean_q: f64,
    /// Mean Euclidean norm of the per-step parameter gradient.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map(|r| r.knn_acc).unwrap_or(0.0)
    }

    /// First (1-based) epoch whose accuracy reaches `threshold`.
    pub fn epochs_to_accuracy(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.knn_acc >= threshold).map(|r| r.epoch)
    }

    pub fn mean_grad_norm(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.grad_norm).sum::<f64>() / self.records.len() as f64
    }

    /// CSV rows `epoch,loss,knn_acc,mean_q,grad_norm`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,knn_acc,mean_q,grad_norm\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.loss, r.knn_acc, r.mean_q, r.grad_norm
            ));
        }
        out
    }
}

/// 80/20 split by hashing each index with the seed; deterministic and
/// independent of dataset contents.
pub fn train_eval_split(len: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::with_capacity(len * 4 / 5);
    let mut eval = Vec::with_capacity(len / 5);
    for i in 0..len {
        if mix_seed(seed, i as u64, 0x5eed).is_multiple_of(5) {
            eval.push(i);
        } else {
            train.push(i);
        }
    }
    (train, eval)
}

pub(crate) fn epoch_order(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Self-supervised pretraining over the whole dataset (labels untouched),
/// with per-epoch kNN accuracy on the held-out index split.
pub fn train(config: &TrainConfig, data: &SyntheticDataset) -> Result<(EncoderParams, TrainHistory)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput { what: "dataset" });
    }
    if config.batch_size > data.len() {
        return Err(Error::InvalidConfig {
            reason: format!(
                "batch_size {} exceeds dataset size {}",
                config.batch_size,
                data.len()
            ),
        });
    }
    if config.batch_size < 2 && config.loss.kind != LossKind::InfoNce {
        return Err(Error::DegenerateBatch {
            op: config.loss.kind.name(),
            n_samples: config.batch_size,
        });
    }

    let dims = LayerDims::new(
        data.input_dim(),
        config.hidden_widths.clone(),
        config.embedding_dim,
    )?;
    let mut params = init_params(config.seed, &dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, TRAIN_STREAM_SALT, 0));
    let (train_idx, eval_idx) = train_eval_split(data.len(), config.seed);

    let steps_per_epoch = data.len() / config.batch_size;
    let total_steps = config.epochs * steps_per_epoch;
    let mut velocity = ParamGrads::zeros_like(&params);
    let mut history = TrainHistory::default();
    let mut global_step = 0usize;

    for epoch in 1..=config.epochs {
        let order = epoch_order(&mut rng, data.len());
        let mut loss_sum = 0.0;
        let mut q_sum = 0.0;
        let mut norm_sum = 0.0;
        for step in 0..steps_per_epoch {
            let indices = &order[step * config.batch_size..(step + 1) * config.batch_size];
            let outcome = sgd_step(
                &mut params,
                &mut velocity,
                data,
                indices,
                config,
                &mut rng,
                config.lr_at(global_step, total_steps),
            )
            .map_err(|e| match e {
                Error::NonFiniteLoss { value, .. } => Error::NonFiniteLoss {
                    epoch,
                    step,
                    value,
                },
                other => other,
            })?;
            loss_sum += outcome.mean_anchor_loss;
            q_sum += outcome.mean_q;
            norm_sum += outcome.grad_norm;
            global_step += 1;
        }
        let knn_acc = knn_eval(&params, data, &train_idx, &eval_idx, config.knn_k)?;
        history.records.push(EpochRecord {
            epoch,
            loss: loss_sum / steps_per_epoch as f64,
            knn_acc,
            mean_q: q_sum / steps_per_epoch as f64,
            grad_norm: norm_sum / steps_per_epoch as f64,
        });
    }
    Ok((params, history))
}

pub(crate) struct StepOutcome {
    pub mean_anchor_loss: f64,
    pub mean_q: f64,
    pub grad_norm: f64,
}

/// One SGD step: augment, forward both views, batch-mean anchor loss,
/// analytic backprop, velocity update. Per-sample work runs in batch order
/// with fixed-order accumulation.
pub(crate) fn sgd_step(
    params: &mut EncoderParams,
    velocity: &mut ParamGrads,
    data: &SyntheticDataset,
    indices: &[usize],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    lr: f64,
) -> Result<StepOutcome> {
    let mut traces = Vec::with_capacity(2 * indices.len());
    let mut pairs = Vec::with_capacity(indices.len());
    for &idx in indices {
        let (v1, v2) = augment(&data.points[idx], rng, config.augment_noise);
        let t1 = forward(params, &v1)?;
        let t2 = forward(params, &v2)?;
        pairs.push((t1.z.clone(), t2.z.clone()));
        traces.push(t1);
        traces.push(t2);
    }
    let batch = EmbeddingBatch::from_pairs(pairs)?;
    let report = loss::evaluate(&batch, &config.loss)?;
    if !report.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            step: 0,
            value: report.total,
        });
    }
    let n_anchors = 2 * indices.len();
    let embedding_grads = grad_total(&batch, &config.loss)?;

    let mut grads = ParamGrads::zeros_like(params);
    for (flat, trace) in traces.iter().enumerate() {
        let anchor = crate::embedding::Anchor::from_flat(flat);
        let result = backward(params, trace, embedding_grads.grad(anchor))?;
        grads.add_assign(&result.grads);
    }
    // optimize the mean per-anchor loss
    grads.scale(1.0 / n_anchors as f64);
    let grad_norm = grads.euclidean_norm();
    if !grad_norm.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            step: 0,
            value: grad_norm,
        });
    }

    velocity.momentum_update(config.momentum, &grads);
    params.apply_step(velocity, lr);

    let q = npc_multiplier(&batch, config.loss.temperature)?;
    Ok(StepOutcome {
        mean_anchor_loss: report.total / n_anchors as f64,
        mean_q: q.values().iter().sum::<f64>() / n_anchors as f64,
        grad_norm,
    })
}

/// Classify each eval point by the majority label of its `k` nearest train
/// embeddings under cosine distance. Label ties break by smaller summed
/// distance, then lower label index.
pub fn knn_eval(
    params: &EncoderParams,
    data: &SyntheticDataset,
    train_idx: &[usize],
    eval_idx: &[usize],
    k: usize,
) -> Result<f64> {
    if train_idx.is_empty() {
        return Err(Error::EmptySplit { which: "train" });
    }
    if eval_idx.is_empty() {
        return Err(Error::EmptySplit { which: "eval" });
    }
    if k == 0 || k > train_idx.len() {
        return Err(Error::InvalidConfig {
            reason: format!("knn k {} must be in [1, {}]", k, train_idx.len()),
        });
    }
    let embed = |idx: usize| -> Result<Vec<f64>> {
        Ok(forward(params, &data.points[idx])?.z.components().to_vec())
    };
    let train_embeddings: Vec<Vec<f64>> = train_idx
        .iter()
        .map(|&i| embed(i))
        .collect::<Result<_>>()?;

    let mut correct = 0usize;
    for &e in eval_idx {
        let query = embed(e)?;
        let mut neighbors: Vec<(f64, usize)> = train_embeddings
            .iter()
            .zip(train_idx)
            .map(|(t, &orig)| {
                let cos: f64 = query.iter().zip(t).map(|(a, b)| a * b).sum();
                (1.0 - cos, orig)
            })
            .collect();
        neighbors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        neighbors.truncate(k);

        let max_label = *data.labels.iter().max().unwrap();
        let mut counts = vec![0usize; max_label + 1];
        let mut dist_sums = vec![0.0f64; max_label + 1];
        for (d, orig) in &neighbors {
            counts[data.labels[*orig]] += 1;
            dist_sums[data.labels[*orig]] += d;
        }
        let mut best = 0usize;
        for label in 1..counts.len() {
            let better = counts[label] > counts[best]
                || (counts[label] == counts[best] && dist_sums[label] < dist_sums[best]);
            if better {
                best = label;
            }
        }
        if best == data.labels[e] {
            correct += 1;
        }
    }
    Ok(correct as f64 / eval_idx.len() as f64)
}

/// Brute-force 1-NN accuracy on raw inputs (leave-one-out style over two
/// explicit splits); oracle for dataset sanity checks.
pub fn raw_knn_accuracy(
    data: &SyntheticDataset,
    train_idx: &[usize],
    eval_idx: &[usize],
) -> f64 {
    let mut correct = 0usize;
    for &e in eval_idx {
        let mut best = (f64::INFINITY, 0usize);
        for &t in train_idx {
            let d: f64 = data.points[e]
                .iter()
                .zip(&data.points[t])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best.0 {
                best = (d, t);
            }
        }
        if data.labels[best.1] == data.labels[e] {
            correct += 1;
        }
    }
    correct as f64 / eval_idx.len() as f64
}
