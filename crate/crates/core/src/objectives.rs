//! Training losses: segmentation cross-entropy, the mirrored cross-entropy,
//! the triplet margin loss, and their epoch-ramped sum.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::dataset::GroupSample;
use crate::error::{GresError, Result};
use crate::hierarchizer::RankCriterion;
use crate::kernels::euclidean;
use crate::model::GresModel;
use crate::predictor::GroupEmbedding;
use crate::tensor::Tensor;
use crate::tqm::ProjectedLanguage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub ce: f64,
    pub ce_mirror: f64,
    pub tri: f64,
    pub total: f64,
    pub epoch_weight: f64,
    pub lambda: f64,
}

/// Mean binary cross-entropy of `sigmoid(logits)` against `target`.
pub fn seg_loss(logits: &Tensor, target: &Tensor) -> Result<f64> {
    if logits.shape() != target.shape() {
        return Err(GresError::shape(target.shape(), logits.shape()));
    }
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let l = g.bce_with_logits(x, target)?;
    Ok(g.value(l).item())
}

/// Hinge on the distance gap; the roles of the two distances swap for
/// ground-truth negatives.
pub fn triplet_loss(
    e: &GroupEmbedding,
    lp: &ProjectedLanguage,
    lp_anti: &ProjectedLanguage,
    is_positive_gt: bool,
    margin: f64,
) -> f64 {
    let d_pos = euclidean(&e.e, &lp.lp);
    let d_neg = euclidean(&e.e, &lp_anti.lp);
    if is_positive_gt {
        (d_pos - d_neg + margin).max(0.0)
    } else {
        (d_neg - d_pos + margin).max(0.0)
    }
}

/// Graph form of [`triplet_loss`].
pub fn triplet_var(
    g: &mut Graph,
    e: Var,
    lp: Var,
    lp_anti: Var,
    is_positive_gt: bool,
    margin: f64,
) -> Result<Var> {
    let d_pos = g.distance(e, lp)?;
    let d_neg = g.distance(e, lp_anti)?;
    let m = g.constant(Tensor::scalar(margin));
    let sign = if is_positive_gt { 1.0 } else { -1.0 };
    let gap = g.weighted_sum(&[(d_pos, sign), (d_neg, -sign), (m, 1.0)])?;
    Ok(g.hinge(gap))
}

/// Combines the three terms; the triplet term is weighted by `t / T`.
pub fn total_loss(ce: f64, ce_mirror: f64, tri: f64, t: usize, total_epochs: usize, lambda: f64) -> Result<LossTerms> {
    if total_epochs == 0 || t > total_epochs {
        return Err(GresError::InvalidInput(format!(
            "epoch {t} outside 0..={total_epochs}"
        )));
    }
    let epoch_weight = t as f64 / total_epochs as f64;
    Ok(LossTerms {
        ce,
        ce_mirror,
        tri,
        total: ce + lambda * ce_mirror + epoch_weight * tri,
        epoch_weight,
        lambda,
    })
}

/// Which terms enter the composite objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSettings {
    pub lambda: f64,
    pub margin: f64,
    pub use_mirror: bool,
    pub use_triplet: bool,
    pub criterion: RankCriterion,
    pub seed: u64,
}

/// The composite objective of one group on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GroupObjective {
    pub total: Var,
    pub terms: LossTerms,
}

/// `1×H×W` target for an image's mask, optionally inverted.
fn target_of(group: &GroupSample, n: usize, invert: bool) -> Result<Tensor> {
    let t = group.images[n].target();
    let (h, w) = (t.shape()[0], t.shape()[1]);
    let t = if invert { t.map(|y| 1.0 - y) } else { t };
    t.reshape(&[1, h, w])
}

/// Builds the full objective for `group` on `g`, with `p` bound from `model.store`.
///
/// Cross-entropy terms average over ground-truth positives; the triplet term
/// averages over every image. Terms are summed in image order.
pub fn group_objective(
    model: &GresModel,
    g: &mut Graph,
    p: &crate::nn::Bound,
    group: &GroupSample,
    t: usize,
    total_epochs: usize,
    settings: &ObjectiveSettings,
) -> Result<GroupObjective> {
    let images: Vec<Tensor> = group.images.iter().map(|r| r.to_tensor()).collect();
    let visual = model.encode_images(g, p, &images)?;
    let roles = model.encode_language(g, p, &group.expression)?;
    let main = model.branch(g, p, &visual, roles, settings.criterion, settings.seed, settings.use_triplet)?;

    let positives: Vec<usize> = (0..group.images.len())
        .filter(|&n| group.images[n].is_positive)
        .collect();
    let zero = g.constant(Tensor::scalar(0.0));

    let ce = if positives.is_empty() {
        zero
    } else {
        let terms = positives
            .iter()
            .map(|&n| g.bce_with_logits(main.logits[n], &target_of(group, n, false)?))
            .collect::<Result<Vec<_>>>()?;
        g.mean(&terms)?
    };

    let ce_mirror = if settings.use_mirror && !positives.is_empty() {
        let mirror = model.branch(g, p, &visual, roles.swapped(), settings.criterion, settings.seed, false)?;
        let terms = positives
            .iter()
            .map(|&n| g.bce_with_logits(mirror.logits[n], &target_of(group, n, true)?))
            .collect::<Result<Vec<_>>>()?;
        g.mean(&terms)?
    } else {
        zero
    };

    let tri = if settings.use_triplet {
        let terms = main
            .embeddings
            .iter()
            .zip(&group.images)
            .map(|(&e, r)| triplet_var(g, e, roles.query, roles.anti, r.is_positive, settings.margin))
            .collect::<Result<Vec<_>>>()?;
        g.mean(&terms)?
    } else {
        zero
    };

    let lambda = if settings.use_mirror { settings.lambda } else { 0.0 };
    let terms = total_loss(
        g.value(ce).item(),
        g.value(ce_mirror).item(),
        g.value(tri).item(),
        t,
        total_epochs,
        lambda,
    )?;
    let total = g.weighted_sum(&[(ce, 1.0), (ce_mirror, lambda), (tri, terms.epoch_weight)])?;
    Ok(GroupObjective { total, terms })
}

/// Outcome of the mirrored pass on its own.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MirrorLoss {
    pub loss: f64,
    /// Set when the group has no positive image and the loss is 0 by convention.
    pub no_positives: bool,
}

/// Mean cross-entropy of the role-swapped pass against the background `1 − Y`,
/// over ground-truth positives.
pub fn mirror_pass(
    group: &GroupSample,
    model: &GresModel,
    criterion: RankCriterion,
    seed: u64,
) -> Result<MirrorLoss> {
    let positives: Vec<usize> = (0..group.images.len())
        .filter(|&n| group.images[n].is_positive)
        .collect();
    if positives.is_empty() {
        return Ok(MirrorLoss {
            loss: 0.0,
            no_positives: true,
        });
    }
    let mut g = Graph::new();
    let p = model.store.bind_frozen(&mut g);
    let images: Vec<Tensor> = group.images.iter().map(|r| r.to_tensor()).collect();
    let visual = model.encode_images(&mut g, &p, &images)?;
    let roles = model.encode_language(&mut g, &p, &group.expression)?;
    let mirror = model.branch(&mut g, &p, &visual, roles.swapped(), criterion, seed, false)?;
    let mut total = 0.0;
    for &n in &positives {
        total += seg_loss(g.value(mirror.logits[n]), &target_of(group, n, true)?)?;
    }
    Ok(MirrorLoss {
        loss: total / positives.len() as f64,
        no_positives: false,
    })
}
