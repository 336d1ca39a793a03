//! Orders the vision heatmaps of a group by how close each prototype is to
//! the expression and how far it is from the anti-expression.
//!
//! The ordering is a hard permutation computed from values only; no gradient
//! flows through it.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GresError, Result};
use crate::kernels::euclidean;
use crate::tqm::{Heatmap, ProjectedLanguage, Prototype};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankCriterion {
    Pos,
    Neg,
    #[default]
    PosPlusNeg,
    Random,
}

impl RankCriterion {
    pub const ALL: [RankCriterion; 4] = [
        RankCriterion::Random,
        RankCriterion::Pos,
        RankCriterion::Neg,
        RankCriterion::PosPlusNeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RankCriterion::Pos => "pos",
            RankCriterion::Neg => "neg",
            RankCriterion::PosPlusNeg => "pos_plus_neg",
            RankCriterion::Random => "random",
        }
    }
}

impl fmt::Display for RankCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RankCriterion {
    type Err = GresError;

    fn from_str(s: &str) -> Result<Self> {
        RankCriterion::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                GresError::Config(format!(
                    "unknown rank criterion {s:?} (expected pos, neg, pos_plus_neg or random)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeScores {
    /// Distance of each prototype to the expression.
    pub s_pos: Vec<f64>,
    /// Distance of each prototype to the anti-expression.
    pub s_neg: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedHeatmapStack {
    pub maps: Vec<Heatmap>,
    /// `order[k]` is the original index of the map in slot `k`.
    pub order: Vec<usize>,
    pub keys: Vec<usize>,
}

pub fn score_prototypes(
    prototypes: &[Prototype],
    lp: &ProjectedLanguage,
    lp_anti: &ProjectedLanguage,
) -> Result<PrototypeScores> {
    let raw: Vec<&[f64]> = prototypes.iter().map(|p| p.p.as_slice()).collect();
    score_vectors(&raw, &lp.lp, &lp_anti.lp)
}

/// [`score_prototypes`] over bare vectors.
pub fn score_vectors(prototypes: &[&[f64]], lp: &[f64], lp_anti: &[f64]) -> Result<PrototypeScores> {
    if lp.len() != lp_anti.len() || prototypes.iter().any(|p| p.len() != lp.len()) {
        return Err(GresError::InvalidInput(
            "prototype and language vectors differ in length".into(),
        ));
    }
    Ok(PrototypeScores {
        s_pos: prototypes.iter().map(|p| euclidean(p, lp)).collect(),
        s_neg: prototypes.iter().map(|p| euclidean(p, lp_anti)).collect(),
    })
}

/// Rank of each entry in sorted order, ties broken by index.
fn ranks(values: &[f64], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let ord = values[a].total_cmp(&values[b]);
        if descending {
            ord.reverse()
        } else {
            ord
        }
    });
    let mut r = vec![0; values.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank;
    }
    r
}

/// Slot order and keys for `scores` under `criterion`.
///
/// Positive ranks are ascending in `s_pos`, negative ranks descending in
/// `s_neg`. `seed` is used only by [`RankCriterion::Random`].
pub fn rank_order(
    scores: &PrototypeScores,
    criterion: RankCriterion,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = scores.s_pos.len();
    if scores.s_neg.len() != n {
        return Err(GresError::InvalidInput(format!(
            "{} positive scores but {} negative scores",
            n,
            scores.s_neg.len()
        )));
    }
    if criterion == RankCriterion::Random {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        return Ok((order, (0..n).collect()));
    }
    let r_pos = ranks(&scores.s_pos, false);
    let r_neg = ranks(&scores.s_neg, true);
    let key: Vec<usize> = (0..n)
        .map(|i| match criterion {
            RankCriterion::Pos => r_pos[i],
            RankCriterion::Neg => r_neg[i],
            _ => r_pos[i] + r_neg[i],
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| key[i]);
    let keys = order.iter().map(|&i| key[i]).collect();
    Ok((order, keys))
}

pub fn rank_and_rearrange(
    maps: &[Heatmap],
    scores: &PrototypeScores,
    criterion: RankCriterion,
    seed: u64,
) -> Result<RankedHeatmapStack> {
    if maps.len() != scores.s_pos.len() {
        return Err(GresError::InvalidInput(format!(
            "{} heatmaps but {} scores",
            maps.len(),
            scores.s_pos.len()
        )));
    }
    let (order, keys) = rank_order(scores, criterion, seed)?;
    Ok(RankedHeatmapStack {
        maps: order.iter().map(|&i| maps[i].clone()).collect(),
        order,
        keys,
    })
}
