//! Group-aware segmentation metrics and the saliency measures.
//!
//! The adapted mean IoU scores a true negative as 1, false positives and
//! false negatives as 0, and true positives by their mask IoU.

mod saliency;

use serde::{Deserialize, Serialize};

use crate::error::{GresError, Result};

pub use saliency::{
    e_measure, f_measure_curve, mae, s_measure, sod_metrics, SaliencyPair, SodMetrics, BETA_SQ,
    S_ALPHA, THRESHOLDS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    TP,
    TN,
    FP,
    FN,
}

impl Category {
    pub fn of(gt_positive: bool, pred_positive: bool) -> Self {
        match (gt_positive, pred_positive) {
            (true, true) => Category::TP,
            (false, false) => Category::TN,
            (false, true) => Category::FP,
            (true, false) => Category::FN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub group_id: String,
    pub image_id: String,
    pub gt_positive: bool,
    pub pred_positive: bool,
    pub category: Category,
    /// Mask IoU; present for true positives only.
    pub iou: Option<f64>,
    pub d_pos: f64,
    pub d_neg: f64,
}

impl EvalRecord {
    /// Derives the category and keeps `iou` only for true positives.
    pub fn new(
        group_id: impl Into<String>,
        image_id: impl Into<String>,
        gt_positive: bool,
        pred_positive: bool,
        iou: f64,
        d_pos: f64,
        d_neg: f64,
    ) -> Self {
        let category = Category::of(gt_positive, pred_positive);
        Self {
            group_id: group_id.into(),
            image_id: image_id.into(),
            gt_positive,
            pred_positive,
            category,
            iou: (category == Category::TP).then_some(iou),
            d_pos,
            d_neg,
        }
    }

    /// Score under the adapted rule.
    pub fn adapted_score(&self) -> f64 {
        match self.category {
            Category::TP => self.iou.unwrap_or(0.0),
            Category::TN => 1.0,
            Category::FP | Category::FN => 0.0,
        }
    }
}

/// `|pred ∧ gt| / |pred ∨ gt|`, or 1 when both are empty.
pub fn iou(pred: &[u8], gt: &[u8]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(GresError::shape(&[gt.len()], &[pred.len()]));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p != 0, g != 0);
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn adapted_miou(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(GresError::InvalidInput("no evaluation records".into()));
    }
    Ok(records.iter().map(EvalRecord::adapted_score).sum::<f64>() / records.len() as f64)
}

/// Mean IoU over ground-truth positives, with missed positives scoring 0.
pub fn vanilla_miou(records: &[EvalRecord]) -> Option<f64> {
    let scores: Vec<f64> = records
        .iter()
        .filter(|r| r.gt_positive)
        .map(|r| r.iou.unwrap_or(0.0))
        .collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Recall of ground-truth negatives as a percentage, if any exist.
pub fn r_neg(records: &[EvalRecord]) -> Option<f64> {
    let tn = records.iter().filter(|r| r.category == Category::TN).count();
    let fp = records.iter().filter(|r| r.category == Category::FP).count();
    (tn + fp > 0).then(|| 100.0 * tn as f64 / (tn + fp) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// Which images the E-measure averages over.
    pub e_xi_scope: String,
    /// Which images MAE, F_max and S_alpha average over.
    pub saliency_scope: String,
    pub f_beta_sq: f64,
    pub s_alpha_weight: f64,
    pub thresholds: usize,
    pub rank_criterion: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub miou_bar: f64,
    pub miou: Option<f64>,
    pub r_neg: Option<f64>,
    pub mae: f64,
    pub f_max: f64,
    pub s_alpha: f64,
    pub e_xi: Option<f64>,
    pub records: Vec<EvalRecord>,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    /// Aggregates records and saliency pairs (one pair per record, same order).
    ///
    /// MAE, F_max and S_alpha use every pair; E_xi uses true-positive pairs only.
    pub fn build(records: Vec<EvalRecord>, pairs: &[SaliencyPair], rank_criterion: &str) -> Result<Self> {
        if records.len() != pairs.len() {
            return Err(GresError::InvalidInput(format!(
                "{} records but {} saliency pairs",
                records.len(),
                pairs.len()
            )));
        }
        let all = sod_metrics(pairs)?;
        let tp: Vec<SaliencyPair> = records
            .iter()
            .zip(pairs)
            .filter(|(r, _)| r.category == Category::TP)
            .map(|(_, p)| p.clone())
            .collect();
        let e_xi = if tp.is_empty() {
            None
        } else {
            Some(tp.iter().map(e_measure).sum::<f64>() / tp.len() as f64)
        };
        Ok(Self {
            miou_bar: adapted_miou(&records)?,
            miou: vanilla_miou(&records),
            r_neg: r_neg(&records),
            mae: all.mae,
            f_max: all.f_max,
            s_alpha: all.s_alpha,
            e_xi,
            records,
            metadata: ReportMetadata {
                e_xi_scope: "true_positive_images".into(),
                saliency_scope: "all_images".into(),
                f_beta_sq: BETA_SQ,
                s_alpha_weight: S_ALPHA,
                thresholds: THRESHOLDS,
                rank_criterion: rank_criterion.into(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn rec(gt: bool, pred: bool, iou: f64) -> EvalRecord {
        EvalRecord::new("g", "i", gt, pred, iou, 0.0, 0.0)
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&[1, 1, 0], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(iou(&[1, 0, 0], &[0, 1, 0]).unwrap(), 0.0);
        assert_eq!(iou(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap(), 0.5);
        assert_eq!(iou(&[0, 0], &[0, 0]).unwrap(), 1.0);
        assert!(iou(&[0], &[0, 0]).is_err());
    }

    #[test]
    fn adapted_rule() {
        let all_tn = vec![rec(false, false, 0.0); 3];
        assert_eq!(adapted_miou(&all_tn).unwrap(), 1.0);
        let mixed = [rec(true, true, 0.5), rec(false, false, 0.0), rec(false, true, 0.0), rec(true, false, 0.0)];
        assert_eq!(adapted_miou(&mixed).unwrap(), 0.375);
        assert!(adapted_miou(&[]).is_err());
    }

    #[test]
    fn negative_recall() {
        let mut rs = vec![rec(false, false, 0.0); 3];
        rs.push(rec(false, true, 0.0));
        assert_eq!(r_neg(&rs), Some(75.0));
        assert_eq!(r_neg(&rs[..3]), Some(100.0));
        assert_eq!(r_neg(&[rec(false, true, 0.0)]), Some(0.0));
        assert_eq!(r_neg(&[rec(true, true, 0.3)]), None);
    }

    #[test]
    fn report_serializes_expected_keys() {
        let records = vec![rec(true, true, 1.0), rec(false, false, 0.0)];
        let pairs = vec![
            SaliencyPair::new(2, 2, vec![1.0, 0.0, 0.0, 0.0], vec![1, 0, 0, 0]).unwrap(),
            SaliencyPair::new(2, 2, vec![0.0; 4], vec![0; 4]).unwrap(),
        ];
        let report = EvalReport::build(records, &pairs, "pos_plus_neg").unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in ["miou_bar", "miou", "r_neg", "mae", "f_max", "s_alpha", "e_xi", "records"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(report.miou_bar, 1.0);
        assert_eq!(report.r_neg, Some(100.0));
        assert_eq!(report.metadata.e_xi_scope, "true_positive_images");
    }

    fn arb_record() -> impl Strategy<Value = EvalRecord> {
        (any::<bool>(), any::<bool>(), 0.0f64..=1.0).prop_map(|(g, p, i)| rec(g, p, i))
    }

    proptest! {
        #[test]
        fn adapted_miou_is_bounded_and_rewards_corrections(
            records in prop::collection::vec(arb_record(), 1..20),
            fix in any::<prop::sample::Index>(),
        ) {
            let base = adapted_miou(&records).unwrap();
            prop_assert!((0.0..=1.0).contains(&base));
            let k = fix.index(records.len());
            let mut corrected = records.clone();
            let r = &records[k];
            if matches!(r.category, Category::FP | Category::FN) {
                corrected[k] = rec(r.gt_positive, r.gt_positive, 0.0);
                prop_assert!(adapted_miou(&corrected).unwrap() >= base);
            }
        }

        #[test]
        fn without_negatives_adapted_equals_vanilla(ious in prop::collection::vec(0.0f64..=1.0, 1..30)) {
            let records: Vec<EvalRecord> = ious.iter().map(|&i| rec(true, true, i)).collect();
            let a = adapted_miou(&records).unwrap();
            let v = vanilla_miou(&records).unwrap();
            prop_assert!((a - v).abs() <= 1e-12);
        }

        #[test]
        fn iou_is_symmetric_and_permutation_invariant(
            pairs in prop::collection::vec((0u8..2, 0u8..2), 1..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (a, b): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            let mut perm: Vec<usize> = (0..a.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pa: Vec<u8> = perm.iter().map(|&i| a[i]).collect();
            let pb: Vec<u8> = perm.iter().map(|&i| b[i]).collect();
            prop_assert_eq!(iou(&a, &b).unwrap(), iou(&pa, &pb).unwrap());
        }
    }
}
