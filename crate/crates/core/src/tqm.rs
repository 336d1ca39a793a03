//! Triphasic query: language heatmaps, heatmap-pooled prototypes and the
//! cross-image vision heatmaps built from them.
//!
//! Heatmaps are signed cosine maps in `[-1, 1]`. They are shifted to `[0, 1]`
//! only when used as pooling weights. Zero-norm columns or queries produce
//! similarity 0.

use crate::autograd::{Graph, Var};
use crate::encoders::VisualFeatures;
use crate::error::{GresError, Result};
use crate::kernels::{pooling_weight, EPS};
use crate::tensor::Tensor;

/// `H×W` cosine similarity map.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub values: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prototype {
    pub p: Vec<f64>,
    /// Set when every pooling weight was zero and `p` fell back to zeros.
    pub degenerate: bool,
}

/// Language embedding mapped into the visual channel space.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedLanguage {
    pub lp: Vec<f64>,
}

/// Tape variables for one group's query stage.
#[derive(Clone, Debug)]
pub struct GroupQuery {
    /// One language heatmap per image.
    pub language: Vec<Var>,
    /// One prototype per image.
    pub prototypes: Vec<Var>,
    /// `vision[n][i]`: image `n` queried with prototype `i`.
    pub vision: Vec<Vec<Var>>,
}

/// Runs the query stage for every image of a group against `lp`.
///
/// With `with_vision = false` only the language heatmaps and prototypes are built.
pub fn query_group(g: &mut Graph, visual: &[Var], lp: Var, with_vision: bool) -> Result<GroupQuery> {
    let mut language = Vec::with_capacity(visual.len());
    let mut prototypes = Vec::with_capacity(visual.len());
    for &v in visual {
        let m = g.cosine_map(v, lp)?;
        prototypes.push(g.weighted_pool(v, m)?);
        language.push(m);
    }
    let mut vision = Vec::new();
    if with_vision {
        for &v in visual {
            let maps = prototypes
                .iter()
                .map(|&p| g.cosine_map(v, p))
                .collect::<Result<Vec<_>>>()?;
            vision.push(maps);
        }
    }
    Ok(GroupQuery {
        language,
        prototypes,
        vision,
    })
}

/// `weight · l + bias` with `weight: C_v×C_l`.
pub fn project_language(l: &[f64], weight: &Tensor, bias: &Tensor) -> Result<ProjectedLanguage> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(l.to_vec()));
    let w = g.constant(weight.clone());
    let b = g.constant(bias.clone());
    let y = g.linear(x, w, b)?;
    Ok(ProjectedLanguage {
        lp: g.value(y).data().to_vec(),
    })
}

pub fn language_heatmap(v: &VisualFeatures, lp: &ProjectedLanguage) -> Result<Heatmap> {
    let mut g = Graph::new();
    let vv = g.constant(v.v.clone());
    let q = g.constant(Tensor::vector(lp.lp.clone()));
    let m = g.cosine_map(vv, q)?;
    Ok(Heatmap {
        values: g.value(m).clone(),
    })
}

pub fn extract_prototype(v: &VisualFeatures, m: &Heatmap) -> Result<Prototype> {
    let mut g = Graph::new();
    let vv = g.constant(v.v.clone());
    let mm = g.constant(m.values.clone());
    let p = g.weighted_pool(vv, mm)?;
    let total: f64 = m.values.data().iter().map(|&x| pooling_weight(x)).sum();
    Ok(Prototype {
        p: g.value(p).data().to_vec(),
        degenerate: total <= EPS,
    })
}

/// Queries `v` with each prototype in order.
pub fn vision_heatmaps(v: &VisualFeatures, prototypes: &[Prototype]) -> Result<Vec<Heatmap>> {
    if prototypes.is_empty() {
        return Err(GresError::InvalidInput("no prototypes to query with".into()));
    }
    let mut g = Graph::new();
    let vv = g.constant(v.v.clone());
    prototypes
        .iter()
        .map(|p| {
            let q = g.constant(Tensor::vector(p.p.clone()));
            let m = g.cosine_map(vv, q)?;
            Ok(Heatmap {
                values: g.value(m).clone(),
            })
        })
        .collect()
}
