//! Scalar evaluation of the contrastive objectives.
//!
//! For anchor view `(i,k)` with positive similarity `s_i = <z_i^(1), z_i^(2)>`
//! and negative sum `U_{i,k} = sum_{j != i, l} exp(<z_i^(k), z_j^(l)> / tau)`:
//!
//! * coupled cross-entropy (InfoNCE):
//!   `L = -log( exp(s_i/tau) / (exp(s_i/tau) + U_{i,k}) )`
//! * decoupled (DCL): the positive term leaves the denominator,
//!   `L = -s_i/tau + log U_{i,k}`
//! * weighted decoupled (DCLW): `L = -w_i * s_i/tau + log U_{i,k}` with a
//!   per-pair positive weight `w_i` that emphasizes hard positives
//! * alignment/uniformity: per-anchor alignment terms `-s_i/tau` plus one
//!   global `log` over the pooled negative exponentials.
//!
//! Per-anchor log-sum-exps use max-subtraction; totals reduce in flat anchor
//! order for run-to-run bit stability.

use serde::{Deserialize, Serialize};

use crate::embedding::{similarity_table, AmbientViews, Anchor, EmbeddingBatch, SimilarityTable, View};
use crate::error::{Error, Result};

/// Conventional small-scale benchmark temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.07;
/// Default width of the von Mises-Fisher positive weighting.
pub const DEFAULT_SIGMA: f64 = 0.5;
/// Default scale of the exponential positive weighting.
pub const DEFAULT_DELTA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    InfoNce,
    Dcl,
    Dclw,
    AlignUniform,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::InfoNce => "InfoNce",
            LossKind::Dcl => "Dcl",
            LossKind::Dclw => "Dclw",
            LossKind::AlignUniform => "AlignUniform",
        }
    }
}

/// Weight family applied to the positive term (DCLW only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    None,
    /// `w_i = 2 - exp(s_i/sigma) / mean_j exp(s_j/sigma)`; batch mean 1.
    VonMisesFisher,
    /// `w_i = delta * exp(-sigma * s_i)`.
    Exponential,
}

/// Which objective to evaluate, plus its scalar hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub temperature: f64,
    pub weight_kind: WeightKind,
    pub weight_sigma: f64,
    pub weight_delta: f64,
}

impl LossSpec {
    pub fn info_nce(temperature: f64) -> Result<Self> {
        LossSpec {
            kind: LossKind::InfoNce,
            temperature,
            weight_kind: WeightKind::None,
            weight_sigma: DEFAULT_SIGMA,
            weight_delta: DEFAULT_DELTA,
        }
        .validated()
    }

    pub fn dcl(temperature: f64) -> Result<Self> {
        LossSpec {
            kind: LossKind::Dcl,
            ..Self::info_nce(temperature)?
        }
        .validated()
    }

    pub fn dclw_vmf(temperature: f64, sigma: f64) -> Result<Self> {
        LossSpec {
            kind: LossKind::Dclw,
            temperature,
            weight_kind: WeightKind::VonMisesFisher,
            weight_sigma: sigma,
            weight_delta: DEFAULT_DELTA,
        }
        .validated()
    }

    pub fn dclw_exponential(temperature: f64, sigma: f64, delta: f64) -> Result<Self> {
        LossSpec {
            kind: LossKind::Dclw,
            temperature,
            weight_kind: WeightKind::Exponential,
            weight_sigma: sigma,
            weight_delta: delta,
        }
        .validated()
    }

    pub fn align_uniform(temperature: f64) -> Result<Self> {
        LossSpec {
            kind: LossKind::AlignUniform,
            ..Self::info_nce(temperature)?
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidConfig { reason });
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.weight_sigma > 0.0 && self.weight_sigma.is_finite()) {
            return fail(format!("weight_sigma must be positive, got {}", self.weight_sigma));
        }
        if !(self.weight_delta > 0.0 && self.weight_delta.is_finite()) {
            return fail(format!("weight_delta must be positive, got {}", self.weight_delta));
        }
        match (self.kind, self.weight_kind) {
            (LossKind::Dclw, WeightKind::None) => {
                fail("Dclw requires weight_kind VonMisesFisher or Exponential".into())
            }
            (LossKind::Dclw, _) => Ok(()),
            (_, WeightKind::None) => Ok(()),
            (kind, _) => fail(format!("weight_kind must be None for kind {}", kind.name())),
        }
    }
}

/// Per-anchor breakdown of one loss evaluation.
///
/// `per_anchor` and `negative_sums` are flat-indexed (`2*i + k`);
/// `positive_sims` and `weights` are per sample. `total` is the flat-order
/// sum of `per_anchor`, plus `uniformity` when that term exists.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub per_anchor: Vec<f64>,
    pub negative_sums: Vec<f64>,
    pub positive_sims: Vec<f64>,
    pub weights: Vec<f64>,
    /// Global pooled-negative term; `Some` only for [`LossKind::AlignUniform`].
    pub uniformity: Option<f64>,
}

impl LossReport {
    pub fn n_samples(&self) -> usize {
        self.positive_sims.len()
    }
}

pub fn info_nce(batch: &EmbeddingBatch, spec: &LossSpec) -> Result<LossReport> {
    expect_kind(spec, LossKind::InfoNce)?;
    evaluate(batch, spec)
}

pub fn dcl(batch: &EmbeddingBatch, spec: &LossSpec) -> Result<LossReport> {
    expect_kind(spec, LossKind::Dcl)?;
    evaluate(batch, spec)
}

pub fn dclw(batch: &EmbeddingBatch, spec: &LossSpec) -> Result<LossReport> {
    expect_kind(spec, LossKind::Dclw)?;
    evaluate(batch, spec)
}

pub fn align_uniform(batch: &EmbeddingBatch, spec: &LossSpec) -> Result<LossReport> {
    expect_kind(spec, LossKind::AlignUniform)?;
    evaluate(batch, spec)
}

/// Evaluate whichever objective `spec.kind` selects.
pub fn evaluate(batch: &EmbeddingBatch, spec: &LossSpec) -> Result<LossReport> {
    spec.validate()?;
    evaluate_sims(&similarity_table(batch), spec, None)
}

/// Total loss over ambient (possibly non-unit) coordinates. This is the
/// evaluator the finite-difference oracle perturbs.
pub fn total_from_views(views: &AmbientViews, spec: &LossSpec) -> Result<f64> {
    spec.validate()?;
    Ok(evaluate_sims(&views.sim_table(), spec, None)?.total)
}

/// Same as [`total_from_views`] but with the DCLW positive weights pinned to
/// externally supplied values instead of being recomputed from the batch.
pub fn total_from_views_frozen_weights(
    views: &AmbientViews,
    spec: &LossSpec,
    weights: &[f64],
) -> Result<f64> {
    spec.validate()?;
    if weights.len() != views.n_samples() {
        return Err(Error::ShapeMismatch {
            op: "total_from_views_frozen_weights",
            expected: format!("{} weights", views.n_samples()),
            got: format!("{}", weights.len()),
        });
    }
    Ok(evaluate_sims(&views.sim_table(), spec, Some(weights))?.total)
}

fn expect_kind(spec: &LossSpec, expected: LossKind) -> Result<()> {
    if spec.kind == expected {
        Ok(())
    } else {
        Err(Error::KindMismatch {
            expected: expected.name(),
            got: spec.kind.name().into(),
        })
    }
}

/// Positive-pair weights for a similarity table under `spec`.
pub(crate) fn positive_weights(sims: &SimilarityTable, spec: &LossSpec) -> Vec<f64> {
    let n = sims.n_samples();
    if spec.kind != LossKind::Dclw {
        return vec![1.0; n];
    }
    match spec.weight_kind {
        WeightKind::None => vec![1.0; n],
        WeightKind::VonMisesFisher => {
            let exps: Vec<f64> = (0..n)
                .map(|i| (sims.positive_sim(i) / spec.weight_sigma).exp())
                .collect();
            let mean = exps.iter().sum::<f64>() / n as f64;
            exps.iter().map(|e| 2.0 - e / mean).collect()
        }
        WeightKind::Exponential => (0..n)
            .map(|i| spec.weight_delta * (-spec.weight_sigma * sims.positive_sim(i)).exp())
            .collect(),
    }
}

/// Negative logits of one anchor in flat target order: `sim/tau` for every
/// view of every other sample.
pub(crate) fn negative_logits(sims: &SimilarityTable, anchor: Anchor, tau: f64) -> Vec<f64> {
    let n = sims.n_samples();
    let mut logits = Vec::with_capacity(2 * n - 2);
    for j in 0..n {
        if j == anchor.sample {
            continue;
        }
        for l in View::BOTH {
            logits.push(sims.get(anchor, Anchor::new(j, l)) / tau);
        }
    }
    logits
}

pub(crate) fn evaluate_sims(
    sims: &SimilarityTable,
    spec: &LossSpec,
    frozen_weights: Option<&[f64]>,
) -> Result<LossReport> {
    let n = sims.n_samples();
    if n < 2 && spec.kind != LossKind::InfoNce {
        return Err(Error::DegenerateBatch {
            op: spec.kind.name(),
            n_samples: n,
        });
    }
    let tau = spec.temperature;
    let positive_sims: Vec<f64> = (0..n).map(|i| sims.positive_sim(i)).collect();
    let weights = match frozen_weights {
        Some(w) => w.to_vec(),
        None => positive_weights(sims, spec),
    };

    let mut per_anchor = Vec::with_capacity(2 * n);
    let mut negative_sums = Vec::with_capacity(2 * n);
    let mut log_neg_sums = Vec::with_capacity(2 * n);
    for flat in 0..2 * n {
        let anchor = Anchor::from_flat(flat);
        let s = positive_sims[anchor.sample];
        let logits = negative_logits(sims, anchor, tau);
        negative_sums.push(logits.iter().map(|x| x.exp()).sum::<f64>());
        let log_u = logsumexp(&logits);
        log_neg_sums.push(log_u);
        let term = match spec.kind {
            LossKind::InfoNce => {
                // -log softmax of the positive among {positive, negatives}.
                let mut all = Vec::with_capacity(logits.len() + 1);
                all.push(s / tau);
                all.extend_from_slice(&logits);
                logsumexp(&all) - s / tau
            }
            LossKind::Dcl | LossKind::Dclw => {
                -(weights[anchor.sample] * s) / tau + log_u
            }
            LossKind::AlignUniform => -s / tau,
        };
        per_anchor.push(term);
    }

    let mut total: f64 = per_anchor.iter().sum();
    let uniformity = match spec.kind {
        LossKind::AlignUniform => {
            // log of the pooled negative sum: log sum_a U_a.
            let u = logsumexp(&log_neg_sums);
            total += u;
            Some(u)
        }
        _ => None,
    };

    Ok(LossReport {
        total,
        per_anchor,
        negative_sums,
        positive_sims,
        weights,
        uniformity,
    })
}

/// Max-subtracted log-sum-exp; empty input yields `-inf`.
pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Numerically safe `log(1 + exp(x))`; maps a decoupled anchor term to its
/// coupled counterpart.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{normalize, UnitVector};
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn orthogonal_batch() -> EmbeddingBatch {
        let e1 = UnitVector::new(vec![1.0, 0.0]).unwrap();
        let e2 = UnitVector::new(vec![0.0, 1.0]).unwrap();
        EmbeddingBatch::from_pairs(vec![(e1.clone(), e1), (e2.clone(), e2)]).unwrap()
    }

    fn single_batch() -> EmbeddingBatch {
        let u = normalize(&[0.3, -0.4, 0.8]).unwrap();
        let v = normalize(&[0.1, 0.9, 0.2]).unwrap();
        EmbeddingBatch::from_pairs(vec![(u, v)]).unwrap()
    }

    // Independent brute-force evaluation, literal formula transcription:
    // no shared helpers, no log-sum-exp.
    fn brute_per_anchor(batch: &EmbeddingBatch, i: usize, k: View, tau: f64) -> (f64, f64) {
        let zi = batch.view(Anchor::new(i, k));
        let s = batch.positive_sim(i);
        let mut u = 0.0;
        for j in 0..batch.n_samples() {
            if j == i {
                continue;
            }
            for l in View::BOTH {
                u += (zi.dot(batch.view(Anchor::new(j, l))) / tau).exp();
            }
        }
        let loss = -((s / tau).exp() / ((s / tau).exp() + u)).ln();
        (loss, u)
    }

    #[test]
    fn info_nce_single_sample_is_zero() {
        let spec = LossSpec::info_nce(0.1).unwrap();
        let report = info_nce(&single_batch(), &spec).unwrap();
        assert_eq!(report.total, 0.0);
        assert_eq!(report.per_anchor, vec![0.0, 0.0]);
        assert_eq!(report.negative_sums, vec![0.0, 0.0]);
    }

    #[test]
    fn info_nce_orthogonal_closed_form() {
        let spec = LossSpec::info_nce(1.0).unwrap();
        let report = info_nce(&orthogonal_batch(), &spec).unwrap();
        let expected = (1.0 + 2.0 / E).ln(); // ≈ 0.551444
        for term in &report.per_anchor {
            assert!((term - expected).abs() <= 1e-12);
        }
        assert!((report.total - 4.0 * expected).abs() <= 1e-12);
        for u in &report.negative_sums {
            assert!((u - 2.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn info_nce_matches_brute_force() {
        let batch = EmbeddingBatch::random_unit(42, 4, 8).unwrap();
        let spec = LossSpec::info_nce(0.07).unwrap();
        let report = info_nce(&batch, &spec).unwrap();
        let mut brute_total = 0.0;
        for a in batch.anchors() {
            let (loss, u) = brute_per_anchor(&batch, a.sample, a.view, 0.07);
            brute_total += loss;
            assert!((report.per_anchor[a.flat()] - loss).abs() <= 1e-10 * loss.abs().max(1.0));
            assert!((report.negative_sums[a.flat()] - u).abs() <= 1e-10 * u);
        }
        assert!((report.total - brute_total).abs() <= 1e-10 * brute_total.abs());
    }

    #[test]
    fn dcl_orthogonal_closed_form() {
        let spec = LossSpec::dcl(1.0).unwrap();
        let report = dcl(&orthogonal_batch(), &spec).unwrap();
        let expected = -1.0 + 2.0_f64.ln(); // ≈ -0.306853
        for term in &report.per_anchor {
            assert!((term - expected).abs() <= 1e-12);
        }
        assert!((report.total - 4.0 * expected).abs() <= 1e-12);
    }

    #[test]
    fn dcl_single_sample_errors() {
        let spec = LossSpec::dcl(1.0).unwrap();
        assert!(matches!(
            dcl(&single_batch(), &spec),
            Err(Error::DegenerateBatch { n_samples: 1, .. })
        ));
    }

    #[test]
    fn softplus_identity_on_random_batch() {
        let batch = EmbeddingBatch::random_unit(17, 4, 8).unwrap();
        let nce = info_nce(&batch, &LossSpec::info_nce(0.1).unwrap()).unwrap();
        let dc = dcl(&batch, &LossSpec::dcl(0.1).unwrap()).unwrap();
        for (a, b) in nce.per_anchor.iter().zip(&dc.per_anchor) {
            assert!((a - softplus(*b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn dclw_vmf_symmetric_batch_weights_one() {
        let spec = LossSpec::dclw_vmf(1.0, 0.5).unwrap();
        let report = dclw(&orthogonal_batch(), &spec).unwrap();
        assert_eq!(report.weights, vec![1.0, 1.0]);
        let dc = dcl(&orthogonal_batch(), &LossSpec::dcl(1.0).unwrap()).unwrap();
        assert_eq!(report.per_anchor, dc.per_anchor);
        assert_eq!(report.total, dc.total);
    }

    #[test]
    fn dclw_vmf_large_sigma_approaches_dcl() {
        // Positive-term deviation scales like Var(s) / (sigma * tau); keep the
        // embedding dimension realistic so the bound has margin.
        for seed in 0..5 {
            let batch = EmbeddingBatch::random_unit(seed, 4, 128).unwrap();
            let w = dclw(&batch, &LossSpec::dclw_vmf(0.5, 1e6).unwrap()).unwrap();
            let d = dcl(&batch, &LossSpec::dcl(0.5).unwrap()).unwrap();
            assert!(
                (w.total - d.total).abs() <= 1e-6,
                "seed {seed}: |{} - {}| > 1e-6",
                w.total,
                d.total
            );
        }
    }

    #[test]
    fn dclw_exponential_matches_direct_evaluation() {
        let batch = EmbeddingBatch::random_unit(7, 4, 8).unwrap();
        let spec = LossSpec::dclw_exponential(0.1, 0.5, 3.0).unwrap();
        let report = dclw(&batch, &spec).unwrap();
        let mut expected_total = 0.0;
        for a in batch.anchors() {
            let s = batch.positive_sim(a.sample);
            let w = 3.0 * (-0.5 * s).exp();
            let (_, u) = brute_per_anchor(&batch, a.sample, a.view, 0.1);
            let term = -w * s / 0.1 + u.ln();
            expected_total += term;
            assert!((report.per_anchor[a.flat()] - term).abs() <= 1e-10 * term.abs().max(1.0));
            assert!((report.weights[a.sample] - w).abs() <= 1e-12);
        }
        assert!((report.total - expected_total).abs() <= 1e-10 * expected_total.abs());
    }

    #[test]
    fn align_uniform_orthogonal_closed_form() {
        let spec = LossSpec::align_uniform(1.0).unwrap();
        let report = align_uniform(&orthogonal_batch(), &spec).unwrap();
        assert_eq!(report.per_anchor, vec![-1.0; 4]);
        let uniformity = report.uniformity.unwrap();
        assert!((uniformity - 8.0_f64.ln()).abs() <= 1e-12);
        assert!((report.total - (-4.0 + 8.0_f64.ln())).abs() <= 1e-12);
    }

    #[test]
    fn align_uniform_equal_cross_sims_identities() {
        // All four cross-sample sims equal (to 0 here), so the pooled log-sum
        // collapses: uniformity = log(2N * (2N-2)) + s/tau, which is also any
        // anchor's log U plus log(2N).
        let batch = orthogonal_batch();
        let spec = LossSpec::align_uniform(0.5).unwrap();
        let report = align_uniform(&batch, &spec).unwrap();
        let uniformity = report.uniformity.unwrap();
        assert!((uniformity - (8.0_f64.ln() + 0.0 / 0.5)).abs() <= 1e-12);
        let log_u = report.negative_sums[0].ln();
        assert!((uniformity - (log_u + 4.0_f64.ln())).abs() <= 1e-12);
    }

    #[test]
    fn align_uniform_uniformity_equals_log_sum_of_negative_sums() {
        let batch = EmbeddingBatch::random_unit(23, 4, 8).unwrap();
        let spec = LossSpec::align_uniform(0.5).unwrap();
        let report = align_uniform(&batch, &spec).unwrap();
        let direct = report.negative_sums.iter().sum::<f64>().ln();
        assert!((report.uniformity.unwrap() - direct).abs() <= 1e-12);
    }

    #[test]
    fn align_uniform_single_sample_errors() {
        let spec = LossSpec::align_uniform(1.0).unwrap();
        assert!(matches!(
            align_uniform(&single_batch(), &spec),
            Err(Error::DegenerateBatch { .. })
        ));
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let spec = LossSpec::dcl(1.0).unwrap();
        assert!(matches!(
            info_nce(&orthogonal_batch(), &spec),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn spec_validation_rejects_bad_values() {
        assert!(LossSpec::info_nce(-1.0).is_err());
        assert!(LossSpec::info_nce(0.0).is_err());
        assert!(LossSpec::dclw_vmf(0.1, 0.0).is_err());
        assert!(LossSpec::dclw_exponential(0.1, 0.5, -3.0).is_err());
        // weight_kind only meaningful for Dclw
        let mut spec = LossSpec::info_nce(0.1).unwrap();
        spec.weight_kind = WeightKind::VonMisesFisher;
        assert!(spec.validate().is_err());
        let mut spec = LossSpec::dclw_vmf(0.1, 0.5).unwrap();
        spec.weight_kind = WeightKind::None;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn dcl_per_anchor_strictly_increases_in_a_negative_sim() {
        let batch = EmbeddingBatch::random_unit(31, 4, 8).unwrap();
        let spec = LossSpec::dcl(0.2).unwrap();
        let mut sims = similarity_table(&batch);
        let base = evaluate_sims(&sims, &spec, None).unwrap();
        let anchor = Anchor::new(1, View::One);
        sims.set_sym(anchor, Anchor::new(2, View::Two), sims.get(anchor, Anchor::new(2, View::Two)) + 0.05);
        let bumped = evaluate_sims(&sims, &spec, None).unwrap();
        assert!(bumped.per_anchor[anchor.flat()] > base.per_anchor[anchor.flat()]);
    }

    #[test]
    fn total_is_flat_order_sum_of_per_anchor() {
        let batch = EmbeddingBatch::random_unit(3, 5, 6).unwrap();
        for spec in [
            LossSpec::info_nce(0.07).unwrap(),
            LossSpec::dcl(0.07).unwrap(),
            LossSpec::dclw_vmf(0.07, 0.5).unwrap(),
        ] {
            let report = evaluate(&batch, &spec).unwrap();
            let manual: f64 = report.per_anchor.iter().sum();
            assert_eq!(report.total, manual);
            assert!(report.negative_sums.iter().all(|u| *u > 0.0));
        }
    }

    fn apply_householder(batch: &EmbeddingBatch, seed: u64) -> EmbeddingBatch {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u = crate::embedding::random_unit_vector(&mut rng, batch.dim());
        let reflect = |v: &[f64]| -> UnitVector {
            let proj: f64 = v.iter().zip(u.components()).map(|(a, b)| a * b).sum();
            normalize(
                &v.iter()
                    .zip(u.components())
                    .map(|(x, ux)| x - 2.0 * proj * ux)
                    .collect::<Vec<_>>(),
            )
            .unwrap()
        };
        EmbeddingBatch::from_pairs(
            (0..batch.n_samples())
                .map(|i| {
                    (
                        reflect(batch.view(Anchor::new(i, View::One)).components()),
                        reflect(batch.view(Anchor::new(i, View::Two)).components()),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_softplus_identity(seed in 0u64..1000, tau in prop::sample::select(vec![0.07, 0.1, 0.5])) {
            let batch = EmbeddingBatch::random_unit(seed, 4, 6).unwrap();
            let nce = info_nce(&batch, &LossSpec::info_nce(tau).unwrap()).unwrap();
            let dc = dcl(&batch, &LossSpec::dcl(tau).unwrap()).unwrap();
            for (a, b) in nce.per_anchor.iter().zip(&dc.per_anchor) {
                prop_assert!((a - softplus(*b)).abs() <= 1e-12);
            }
        }

        #[test]
        fn prop_rotation_invariance(seed in 0u64..1000) {
            let batch = EmbeddingBatch::random_unit(seed, 3, 7).unwrap();
            let rotated = apply_householder(&batch, seed ^ 0xfeed);
            for spec in [
                LossSpec::info_nce(0.1).unwrap(),
                LossSpec::dcl(0.1).unwrap(),
                LossSpec::dclw_vmf(0.1, 0.5).unwrap(),
                LossSpec::align_uniform(0.1).unwrap(),
            ] {
                let a = evaluate(&batch, &spec).unwrap();
                let b = evaluate(&rotated, &spec).unwrap();
                prop_assert!((a.total - b.total).abs() <= 1e-9);
            }
        }

        #[test]
        fn prop_permutation_equivariance(seed in 0u64..1000) {
            let batch = EmbeddingBatch::random_unit(seed, 5, 4).unwrap();
            // deterministic permutation derived from the seed
            let n = batch.n_samples();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.rotate_left((seed as usize % (n - 1)) + 1);
            let permuted = EmbeddingBatch::from_pairs(
                perm.iter()
                    .map(|&i| {
                        (
                            batch.view(Anchor::new(i, View::One)).clone(),
                            batch.view(Anchor::new(i, View::Two)).clone(),
                        )
                    })
                    .collect(),
            )
            .unwrap();
            for spec in [LossSpec::info_nce(0.5).unwrap(), LossSpec::dcl(0.5).unwrap()] {
                let a = evaluate(&batch, &spec).unwrap();
                let b = evaluate(&permuted, &spec).unwrap();
                prop_assert!((a.total - b.total).abs() <= 1e-12);
                for (new_i, &old_i) in perm.iter().enumerate() {
                    for k in View::BOTH {
                        let old = a.per_anchor[Anchor::new(old_i, k).flat()];
                        let new = b.per_anchor[Anchor::new(new_i, k).flat()];
                        prop_assert!((old - new).abs() <= 1e-12);
                    }
                }
            }
        }

        #[test]
        fn prop_vmf_weights_mean_one(seed in 0u64..1000, n in 2usize..16) {
            let batch = EmbeddingBatch::random_unit(seed, n, 8).unwrap();
            let report = dclw(&batch, &LossSpec::dclw_vmf(0.1, 0.5).unwrap()).unwrap();
            let mean = report.weights.iter().sum::<f64>() / n as f64;
            prop_assert!((mean - 1.0).abs() <= 1e-12);
        }
    }
}
