//! Analytic gradients of the contrastive objectives with respect to each view
//! embedding, treated as a free ambient vector (the unit-norm constraint is
//! handled by the encoder backward pass, not here).
//!
//! For the coupled loss, every partial of anchor `(i,k)` carries the common
//! negative-positive coupling multiplier
//! `q = 1 - exp(s/tau) / (exp(s/tau) + U)`, the probability mass the anchor's
//! softmax assigns to its negatives. The decoupled loss produces the same
//! partials with `q` removed; the weighted variant scales the positive-
//! direction terms by the (frozen) pair weight.

use std::collections::BTreeMap;

use crate::embedding::{AmbientViews, Anchor, EmbeddingBatch, View};
use crate::error::{Error, Result};
use crate::loss::{self, LossKind, LossSpec};

/// Per-anchor coupling multipliers, flat-indexed like a batch's anchors.
#[derive(Debug, Clone)]
pub struct NpcValues {
    q: Vec<f64>,
}

impl NpcValues {
    pub fn get(&self, anchor: Anchor) -> f64 {
        self.q[anchor.flat()]
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }
}

/// Coupling multiplier of every anchor: `q = 1 - softmax mass of the
/// positive`. Zero when a single-sample batch has no negatives.
pub fn npc_multiplier(batch: &EmbeddingBatch, tau: f64) -> Result<NpcValues> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidConfig {
            reason: format!("temperature must be positive, got {tau}"),
        });
    }
    let sims = crate::embedding::similarity_table(batch);
    let q = (0..2 * batch.n_samples())
        .map(|flat| {
            let anchor = Anchor::from_flat(flat);
            let s = sims.positive_sim(anchor.sample) / tau;
            let mut all = vec![s];
            all.extend(loss::negative_logits(&sims, anchor, tau));
            // -expm1 avoids cancellation when the positive dominates.
            -f64::exp_m1(s - loss::logsumexp(&all))
        })
        .collect();
    Ok(NpcValues { q })
}

/// The three partial-gradient groups of one anchor's loss term.
#[derive(Debug, Clone)]
pub struct PerTermGrads {
    pub anchor: Anchor,
    /// d L_anchor / d z_anchor.
    pub wrt_anchor: Vec<f64>,
    /// d L_anchor / d z_positive (the sibling view of the same sample).
    pub wrt_positive: Vec<f64>,
    /// d L_anchor / d z_target for every negative, in flat target order.
    pub wrt_negatives: Vec<(Anchor, Vec<f64>)>,
}

/// Partial gradients of a single anchor's loss term.
///
/// The coupled kind distributes softmax probabilities over the positive and
/// all negatives; the decoupled kinds normalize over negatives only. Not
/// defined for the alignment/uniformity objective, whose pooled term has no
/// per-anchor decomposition.
pub fn grad_per_term(
    batch: &EmbeddingBatch,
    anchor: Anchor,
    spec: &LossSpec,
) -> Result<PerTermGrads> {
    spec.validate()?;
    let n = batch.n_samples();
    if spec.kind == LossKind::AlignUniform {
        return Err(Error::UnsupportedKind {
            kind: spec.kind.name().into(),
        });
    }
    if n < 2 && spec.kind != LossKind::InfoNce {
        return Err(Error::DegenerateBatch {
            op: spec.kind.name(),
            n_samples: n,
        });
    }
    let sims = crate::embedding::similarity_table(batch);
    let weights = loss::positive_weights(&sims, spec);
    per_term_with_sims(batch, &sims, &weights, anchor, spec)
}

fn per_term_with_sims(
    batch: &EmbeddingBatch,
    sims: &crate::embedding::SimilarityTable,
    weights: &[f64],
    anchor: Anchor,
    spec: &LossSpec,
) -> Result<PerTermGrads> {
    let n = batch.n_samples();
    let tau = spec.temperature;
    let dim = batch.dim();
    let z_anchor = batch.view(anchor).components();
    let z_positive = batch.view(anchor.positive()).components();

    let targets: Vec<Anchor> = (0..n)
        .filter(|&j| j != anchor.sample)
        .flat_map(|j| View::BOTH.map(|l| Anchor::new(j, l)))
        .collect();
    let logits = loss::negative_logits(sims, anchor, tau);
    let s = sims.positive_sim(anchor.sample) / tau;

    // Per-negative coefficient and the positive-direction scale.
    let (neg_coeffs, pos_scale): (Vec<f64>, f64) = match spec.kind {
        LossKind::InfoNce => {
            let mut all = Vec::with_capacity(logits.len() + 1);
            all.push(s);
            all.extend_from_slice(&logits);
            let lse = loss::logsumexp(&all);
            let probs: Vec<f64> = logits.iter().map(|x| (x - lse).exp()).collect();
            let q = -f64::exp_m1(s - lse);
            (probs, q)
        }
        LossKind::Dcl | LossKind::Dclw => {
            let log_u = loss::logsumexp(&logits);
            let softmax: Vec<f64> = logits.iter().map(|x| (x - log_u).exp()).collect();
            (softmax, weights[anchor.sample])
        }
        LossKind::AlignUniform => unreachable!(),
    };

    let mut wrt_anchor = vec![0.0; dim];
    for (coeff, target) in neg_coeffs.iter().zip(&targets) {
        let z = batch.view(*target).components();
        for (g, zc) in wrt_anchor.iter_mut().zip(z) {
            *g += coeff / tau * zc;
        }
    }
    for (g, zp) in wrt_anchor.iter_mut().zip(z_positive) {
        *g -= pos_scale / tau * zp;
    }

    let wrt_positive = z_anchor.iter().map(|z| -pos_scale / tau * z).collect();
    let wrt_negatives = neg_coeffs
        .iter()
        .zip(&targets)
        .map(|(coeff, target)| {
            (
                *target,
                z_anchor.iter().map(|z| coeff / tau * z).collect(),
            )
        })
        .collect();

    Ok(PerTermGrads {
        anchor,
        wrt_anchor,
        wrt_positive,
        wrt_negatives,
    })
}

/// Gradient of the summed loss with respect to every view embedding.
#[derive(Debug, Clone)]
pub struct GradientSet {
    n_samples: usize,
    dim: usize,
    grads: Vec<f64>, // 2N × dim, flat anchor order
    /// `(anchor flat, target flat) -> d L_anchor / d z_target`, populated on
    /// request; covers the anchor, positive, and negative roles.
    pub per_term: Option<BTreeMap<(usize, usize), Vec<f64>>>,
}

impl GradientSet {
    fn zeros(n_samples: usize, dim: usize) -> Self {
        GradientSet {
            n_samples,
            dim,
            grads: vec![0.0; 2 * n_samples * dim],
            per_term: None,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grad(&self, anchor: Anchor) -> &[f64] {
        let flat = anchor.flat();
        &self.grads[flat * self.dim..(flat + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.grads
    }

    pub fn max_abs(&self) -> f64 {
        self.grads.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    fn add(&mut self, flat: usize, contribution: &[f64]) {
        for (g, c) in self.grads[flat * self.dim..(flat + 1) * self.dim]
            .iter_mut()
            .zip(contribution)
        {
            *g += c;
        }
    }
}

/// Accumulated gradient of the total loss (every anchor term summed, in flat
/// anchor order).
pub fn grad_total(batch: &EmbeddingBatch, spec: &LossSpec) -> Result<GradientSet> {
    grad_total_impl(batch, spec, false)
}

/// [`grad_total`] with the per-term map retained for inspection.
pub fn grad_total_with_per_term(batch: &EmbeddingBatch, spec: &LossSpec) -> Result<GradientSet> {
    grad_total_impl(batch, spec, true)
}

fn grad_total_impl(
    batch: &EmbeddingBatch,
    spec: &LossSpec,
    keep_terms: bool,
) -> Result<GradientSet> {
    spec.validate()?;
    let n = batch.n_samples();
    if n < 2 && spec.kind != LossKind::InfoNce {
        return Err(Error::DegenerateBatch {
            op: spec.kind.name(),
            n_samples: n,
        });
    }
    let mut set = GradientSet::zeros(n, batch.dim());

    if spec.kind == LossKind::AlignUniform {
        grad_align_uniform(batch, spec, &mut set);
        return Ok(set);
    }

    let sims = crate::embedding::similarity_table(batch);
    let weights = loss::positive_weights(&sims, spec);
    let mut terms = keep_terms.then(BTreeMap::new);
    for flat in 0..2 * n {
        let anchor = Anchor::from_flat(flat);
        let term = per_term_with_sims(batch, &sims, &weights, anchor, spec)?;
        set.add(flat, &term.wrt_anchor);
        set.add(anchor.positive().flat(), &term.wrt_positive);
        for (target, g) in &term.wrt_negatives {
            set.add(target.flat(), g);
        }
        if let Some(map) = terms.as_mut() {
            map.insert((flat, flat), term.wrt_anchor);
            map.insert((flat, anchor.positive().flat()), term.wrt_positive);
            for (target, g) in term.wrt_negatives {
                map.insert((flat, target.flat()), g);
            }
        }
    }
    set.per_term = terms;
    Ok(set)
}

fn grad_align_uniform(batch: &EmbeddingBatch, spec: &LossSpec, set: &mut GradientSet) {
    let n = batch.n_samples();
    let tau = spec.temperature;
    let sims = crate::embedding::similarity_table(batch);

    // Alignment: the term -s_i/tau appears once per view, and each term
    // differentiates against both views of the pair.
    for i in 0..n {
        for k in View::BOTH {
            let a = Anchor::new(i, k);
            let toward_positive: Vec<f64> = batch
                .view(a.positive())
                .components()
                .iter()
                .map(|z| -z / tau)
                .collect();
            let toward_anchor: Vec<f64> =
                batch.view(a).components().iter().map(|z| -z / tau).collect();
            set.add(a.flat(), &toward_positive);
            set.add(a.positive().flat(), &toward_anchor);
        }
    }

    // Pooled term: one softmax over every (anchor, negative) pair.
    let mut all_logits = Vec::with_capacity(2 * n * (2 * n - 2));
    for flat in 0..2 * n {
        all_logits.extend(loss::negative_logits(&sims, Anchor::from_flat(flat), tau));
    }
    let log_s = loss::logsumexp(&all_logits);
    let mut idx = 0;
    for flat in 0..2 * n {
        let anchor = Anchor::from_flat(flat);
        for j in 0..n {
            if j == anchor.sample {
                continue;
            }
            for l in View::BOTH {
                let target = Anchor::new(j, l);
                let w = (all_logits[idx] - log_s).exp() / tau;
                idx += 1;
                let toward_target: Vec<f64> =
                    batch.view(target).components().iter().map(|z| w * z).collect();
                let toward_anchor: Vec<f64> =
                    batch.view(anchor).components().iter().map(|z| w * z).collect();
                set.add(flat, &toward_target);
                set.add(target.flat(), &toward_anchor);
            }
        }
    }
}

/// Central-difference gradient of an arbitrary scalar evaluator over the
/// batch's ambient coordinates (no renormalization after perturbing).
pub fn finite_diff_grad<F>(eval: F, batch: &EmbeddingBatch, h: f64) -> Result<GradientSet>
where
    F: Fn(&AmbientViews) -> Result<f64>,
{
    if !(1e-7..=1e-2).contains(&h) {
        return Err(Error::InvalidStep { h });
    }
    let base = AmbientViews::from_batch(batch);
    let mut set = GradientSet::zeros(batch.n_samples(), batch.dim());
    for flat in 0..2 * batch.n_samples() {
        for c in 0..batch.dim() {
            let mut plus = base.clone();
            plus.nudge(flat, c, h);
            let mut minus = base.clone();
            minus.nudge(flat, c, -h);
            set.grads[flat * batch.dim() + c] = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        }
    }
    Ok(set)
}

/// Finite-difference gradient of the loss selected by `spec`.
///
/// For the weighted decoupled kind the pair weights are frozen at their
/// unperturbed values, matching the analytic convention that no gradient
/// flows through the weighting function.
pub fn finite_diff_loss_grad(
    batch: &EmbeddingBatch,
    spec: &LossSpec,
    h: f64,
) -> Result<GradientSet> {
    spec.validate()?;
    if spec.kind == LossKind::Dclw {
        let weights = loss::evaluate(batch, spec)?.weights;
        finite_diff_grad(
            |views| loss::total_from_views_frozen_weights(views, spec, &weights),
            batch,
            h,
        )
    } else {
        finite_diff_grad(|views| loss::total_from_views(views, spec), batch, h)
    }
}

/// `max |a - b|` over all components, normalized by `max(1, max |b|)`.
pub fn gradient_relative_error(a: &GradientSet, b: &GradientSet) -> f64 {
    let max_diff = a
        .values()
        .iter()
        .zip(b.values())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    max_diff / b.max_abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::UnitVector;
    use std::f64::consts::E;

    fn orthogonal_batch() -> EmbeddingBatch {
        let e1 = UnitVector::new(vec![1.0, 0.0]).unwrap();
        let e2 = UnitVector::new(vec![0.0, 1.0]).unwrap();
        EmbeddingBatch::from_pairs(vec![(e1.clone(), e1), (e2.clone(), e2)]).unwrap()
    }

    fn assert_vec_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() <= tol, "{actual:?} vs {expected:?}");
        }
    }

    #[test]
    fn npc_single_sample_is_zero() {
        let u = crate::normalize(&[0.6, 0.8]).unwrap();
        let v = crate::normalize(&[1.0, 1.0]).unwrap();
        let batch = EmbeddingBatch::from_pairs(vec![(u, v)]).unwrap();
        let q = npc_multiplier(&batch, 0.1).unwrap();
        assert_eq!(q.values(), &[0.0, 0.0]);
    }

    #[test]
    fn npc_orthogonal_closed_form() {
        let q = npc_multiplier(&orthogonal_batch(), 1.0).unwrap();
        let expected = 2.0 / (E + 2.0); // ≈ 0.423883
        for value in q.values() {
            assert!((value - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn npc_sigmoid_identity() {
        let batch = EmbeddingBatch::random_unit(3, 6, 8).unwrap();
        for tau in [0.07, 0.1, 0.5] {
            let q = npc_multiplier(&batch, tau).unwrap();
            let dc = loss::dcl(&batch, &LossSpec::dcl(tau).unwrap()).unwrap();
            for (qv, l) in q.values().iter().zip(&dc.per_anchor) {
                let sigmoid = 1.0 / (1.0 + (-l).exp());
                assert!((qv - sigmoid).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn npc_rejects_bad_temperature() {
        assert!(npc_multiplier(&orthogonal_batch(), 0.0).is_err());
        assert!(npc_multiplier(&orthogonal_batch(), -1.0).is_err());
    }

    #[test]
    fn per_term_orthogonal_dcl_hand_values() {
        let batch = orthogonal_batch();
        let spec = LossSpec::dcl(1.0).unwrap();
        let term = grad_per_term(&batch, Anchor::new(0, View::One), &spec).unwrap();
        // negatives split the softmax evenly (both sims 0), so the anchor
        // partial is -(z_pos - mean of negatives) = -( (1,0) - (0,1) ).
        assert_vec_close(&term.wrt_anchor, &[-1.0, 1.0], 1e-12);
        assert_vec_close(&term.wrt_positive, &[-1.0, 0.0], 1e-12);
        assert_eq!(term.wrt_negatives.len(), 2);
        for (target, g) in &term.wrt_negatives {
            assert_eq!(target.sample, 1);
            assert_vec_close(g, &[0.5, 0.0], 1e-12);
        }
    }

    #[test]
    fn per_term_info_nce_is_q_times_dcl() {
        let batch = orthogonal_batch();
        let q = 2.0 / (E + 2.0);
        let nce = grad_per_term(
            &batch,
            Anchor::new(0, View::One),
            &LossSpec::info_nce(1.0).unwrap(),
        )
        .unwrap();
        let dc = grad_per_term(
            &batch,
            Anchor::new(0, View::One),
            &LossSpec::dcl(1.0).unwrap(),
        )
        .unwrap();
        assert_vec_close(
            &nce.wrt_anchor,
            &dc.wrt_anchor.iter().map(|g| q * g).collect::<Vec<_>>(),
            1e-12,
        );
        assert_vec_close(
            &nce.wrt_positive,
            &dc.wrt_positive.iter().map(|g| q * g).collect::<Vec<_>>(),
            1e-12,
        );
        for ((_, a), (_, b)) in nce.wrt_negatives.iter().zip(&dc.wrt_negatives) {
            assert_vec_close(a, &b.iter().map(|g| q * g).collect::<Vec<_>>(), 1e-12);
        }
    }

    #[test]
    fn per_term_negative_weights_sum_to_one() {
        let batch = EmbeddingBatch::random_unit(9, 5, 6).unwrap();
        let spec = LossSpec::dcl(0.1).unwrap();
        for flat in 0..10 {
            let anchor = Anchor::from_flat(flat);
            let term = grad_per_term(&batch, anchor, &spec).unwrap();
            let z_a = batch.view(anchor).components();
            // each negative partial is (weight/tau) * z_anchor
            let sum: f64 = term
                .wrt_negatives
                .iter()
                .map(|(_, g)| 0.1 * g.iter().zip(z_a).map(|(x, z)| x * z).sum::<f64>())
                .sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn per_term_rejects_align_uniform() {
        let batch = orthogonal_batch();
        let spec = LossSpec::align_uniform(1.0).unwrap();
        assert!(matches!(
            grad_per_term(&batch, Anchor::new(0, View::One), &spec),
            Err(Error::UnsupportedKind { .. })
        ));
    }

    #[test]
    fn grad_total_orthogonal_dcl_closed_form() {
        let set = grad_total(&orthogonal_batch(), &LossSpec::dcl(1.0).unwrap()).unwrap();
        assert_vec_close(set.grad(Anchor::new(0, View::One)), &[-2.0, 2.0], 1e-12);
        assert_vec_close(set.grad(Anchor::new(1, View::One)), &[2.0, -2.0], 1e-12);
    }

    #[test]
    fn grad_total_orthogonal_info_nce_is_q_scaled() {
        let q = 2.0 / (E + 2.0);
        let set = grad_total(&orthogonal_batch(), &LossSpec::info_nce(1.0).unwrap()).unwrap();
        assert_vec_close(
            set.grad(Anchor::new(0, View::One)),
            &[-2.0 * q, 2.0 * q],
            1e-9,
        );
    }

    #[test]
    fn grad_total_matches_finite_differences_all_kinds() {
        let batch = EmbeddingBatch::random_unit(5, 4, 8).unwrap();
        for spec in [
            LossSpec::info_nce(0.1).unwrap(),
            LossSpec::dcl(0.1).unwrap(),
            LossSpec::dclw_vmf(0.1, 0.5).unwrap(),
            LossSpec::dclw_exponential(0.1, 0.5, 3.0).unwrap(),
            LossSpec::align_uniform(0.1).unwrap(),
        ] {
            let analytic = grad_total(&batch, &spec).unwrap();
            let numeric = finite_diff_loss_grad(&batch, &spec, 1e-4).unwrap();
            let err = gradient_relative_error(&analytic, &numeric);
            assert!(err <= 1e-6, "kind {:?}: rel err {err:.3e}", spec.kind);
        }
    }

    #[test]
    fn finite_diff_constant_evaluator_is_zero() {
        let batch = orthogonal_batch();
        let set = finite_diff_grad(|_| Ok(3.25), &batch, 1e-4).unwrap();
        assert!(set.values().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn finite_diff_orthogonal_dcl_matches_analytic() {
        let batch = orthogonal_batch();
        let spec = LossSpec::dcl(1.0).unwrap();
        let set = finite_diff_loss_grad(&batch, &spec, 1e-5).unwrap();
        assert_vec_close(set.grad(Anchor::new(0, View::One)), &[-2.0, 2.0], 1e-8);
    }

    #[test]
    fn finite_diff_error_shrinks_quadratically() {
        let batch = EmbeddingBatch::random_unit(77, 4, 6).unwrap();
        let spec = LossSpec::dcl(0.1).unwrap();
        let analytic = grad_total(&batch, &spec).unwrap();
        let err_at = |h: f64| {
            let numeric = finite_diff_loss_grad(&batch, &spec, h).unwrap();
            numeric
                .values()
                .iter()
                .zip(analytic.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        };
        let coarse = err_at(1e-3);
        let fine = err_at(5e-4);
        let ratio = coarse / fine;
        assert!((2.5..=6.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn finite_diff_rejects_bad_step() {
        let batch = orthogonal_batch();
        let spec = LossSpec::dcl(1.0).unwrap();
        assert!(matches!(
            finite_diff_loss_grad(&batch, &spec, 1e-8),
            Err(Error::InvalidStep { .. })
        ));
        assert!(matches!(
            finite_diff_loss_grad(&batch, &spec, 0.5),
            Err(Error::InvalidStep { .. })
        ));
    }

    #[test]
    fn npc_factorization_per_term() {
        for seed in 0..10 {
            let batch = EmbeddingBatch::random_unit(seed, 4, 8).unwrap();
            let q = npc_multiplier(&batch, 0.1).unwrap();
            for flat in 0..8 {
                let anchor = Anchor::from_flat(flat);
                let nce =
                    grad_per_term(&batch, anchor, &LossSpec::info_nce(0.1).unwrap()).unwrap();
                let dc = grad_per_term(&batch, anchor, &LossSpec::dcl(0.1).unwrap()).unwrap();
                let qa = q.get(anchor);
                let check = |a: &[f64], b: &[f64]| {
                    for (x, y) in a.iter().zip(b) {
                        assert!((x - qa * y).abs() <= 1e-12);
                    }
                };
                check(&nce.wrt_anchor, &dc.wrt_anchor);
                check(&nce.wrt_positive, &dc.wrt_positive);
                for ((_, a), (_, b)) in nce.wrt_negatives.iter().zip(&dc.wrt_negatives) {
                    check(a, b);
                }
            }
        }
    }

    #[test]
    fn per_term_map_accounts_for_every_contribution() {
        let batch = EmbeddingBatch::random_unit(55, 3, 5).unwrap();
        let spec = LossSpec::info_nce(0.1).unwrap();
        let set = grad_total_with_per_term(&batch, &spec).unwrap();
        let terms = set.per_term.as_ref().unwrap();
        // every anchor contributes to itself, its positive, and 2N-2 negatives
        assert_eq!(terms.len(), 6 * (1 + 1 + 4));
        for target in 0..6 {
            let mut sum = vec![0.0; batch.dim()];
            for ((_, t), g) in terms {
                if *t == target {
                    for (s, v) in sum.iter_mut().zip(g) {
                        *s += v;
                    }
                }
            }
            for (s, total) in sum.iter().zip(set.grad(Anchor::from_flat(target))) {
                assert!((s - total).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn q_strictly_inside_unit_interval_and_decreasing_in_positive_sim() {
        let batch = EmbeddingBatch::random_unit(13, 4, 8).unwrap();
        let q = npc_multiplier(&batch, 0.1).unwrap();
        for v in q.values() {
            assert!(*v > 0.0 && *v < 1.0);
        }
        // raise one positive similarity with negatives held fixed
        let spec = LossSpec::dcl(0.1).unwrap();
        let mut sims = crate::embedding::similarity_table(&batch);
        let base = loss::evaluate_sims(&sims, &spec, None).unwrap();
        let a1 = Anchor::new(0, View::One);
        let a2 = Anchor::new(0, View::Two);
        sims.set_sym(a1, a2, sims.get(a1, a2) + 0.02);
        let bumped = loss::evaluate_sims(&sims, &spec, None).unwrap();
        let q_of = |l: f64| 1.0 / (1.0 + (-l).exp());
        assert!(q_of(bumped.per_anchor[0]) < q_of(base.per_anchor[0]));
    }

    #[test]
    fn dcl_partial_norm_is_info_nce_norm_over_q() {
        let batch = EmbeddingBatch::random_unit(21, 4, 8).unwrap();
        let q = npc_multiplier(&batch, 0.1).unwrap();
        for flat in 0..8 {
            let anchor = Anchor::from_flat(flat);
            let nce = grad_per_term(&batch, anchor, &LossSpec::info_nce(0.1).unwrap()).unwrap();
            let dc = grad_per_term(&batch, anchor, &LossSpec::dcl(0.1).unwrap()).unwrap();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let (n_nce, n_dc) = (norm(&nce.wrt_anchor), norm(&dc.wrt_anchor));
            assert!(n_dc > n_nce);
            assert!((n_dc * q.get(anchor) / n_nce - 1.0).abs() <= 1e-9);
        }
    }
}
