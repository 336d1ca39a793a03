//! Triphasic features, the pooled group embedding, the positive/negative
//! decision and the upsampling mask decoder.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::encoders::VisualFeatures;
use crate::error::{GresError, Result};
use crate::hierarchizer::RankedHeatmapStack;
use crate::kernels::euclidean;
use crate::nn::{Bound, Conv2d, ConvTranspose2d, Linear, ParamStore};
use crate::tensor::Tensor;
use crate::tqm::{Heatmap, ProjectedLanguage};

/// `V`, the language heatmap and the ranked vision heatmaps stacked on the channel axis.
#[derive(Clone, Debug, PartialEq)]
pub struct TriphasicFeatures {
    pub z: Tensor,
    pub c_v: usize,
    /// Number of ranked vision heatmaps (0 when the query stage is bypassed).
    pub n_maps: usize,
}

impl TriphasicFeatures {
    pub fn visual(&self) -> VisualFeatures {
        VisualFeatures {
            v: self.z.slice_leading(0, self.c_v).expect("layout checked on assembly"),
        }
    }

    pub fn language(&self) -> Heatmap {
        self.map(self.c_v)
    }

    pub fn ranked(&self) -> Vec<Heatmap> {
        (0..self.n_maps).map(|k| self.map(self.c_v + 1 + k)).collect()
    }

    fn map(&self, channel: usize) -> Heatmap {
        let (_, h, w) = self.z.chw().expect("layout checked on assembly");
        let values = self
            .z
            .slice_leading(channel, channel + 1)
            .and_then(|t| t.reshape(&[h, w]))
            .expect("layout checked on assembly");
        Heatmap { values }
    }
}

/// Stacks `V`, `M^l` and `ranked.maps` in that channel order.
pub fn assemble_triphasic(
    v: &VisualFeatures,
    ml: &Heatmap,
    ranked: &RankedHeatmapStack,
) -> Result<TriphasicFeatures> {
    let mut g = Graph::new();
    let mut parts = vec![g.constant(v.v.clone()), g.constant(ml.values.clone())];
    parts.extend(ranked.maps.iter().map(|m| g.constant(m.values.clone())));
    let z = g.concat_channels(&parts)?;
    let (c_v, _, _) = v.v.chw()?;
    Ok(TriphasicFeatures {
        z: g.value(z).clone(),
        c_v,
        n_maps: ranked.maps.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupEmbedding {
    pub e: Vec<f64>,
}

/// Spatial reduction of `z` ahead of the embedding's affine map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedPool {
    /// Global average pool.
    Avg,
    /// Global average pool concatenated with global max pool.
    #[default]
    AvgMax,
}

impl EmbedPool {
    pub fn name(self) -> &'static str {
        match self {
            EmbedPool::Avg => "avg",
            EmbedPool::AvgMax => "avg_max",
        }
    }

    pub fn pooled_len(self, z_channels: usize) -> usize {
        match self {
            EmbedPool::Avg => z_channels,
            EmbedPool::AvgMax => 2 * z_channels,
        }
    }
}

impl FromStr for EmbedPool {
    type Err = GresError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(EmbedPool::Avg),
            "avg_max" => Ok(EmbedPool::AvgMax),
            other => Err(GresError::Config(format!(
                "unknown embed_pool {other:?} (expected avg or avg_max)"
            ))),
        }
    }
}

/// Which part of `z` feeds the decision embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedInput {
    /// All of `z`.
    Z,
    /// The language heatmap and the ranked vision heatmaps, without `V`.
    #[default]
    Heatmaps,
}

impl EmbedInput {
    pub fn name(self) -> &'static str {
        match self {
            EmbedInput::Z => "z",
            EmbedInput::Heatmaps => "heatmaps",
        }
    }
}

impl FromStr for EmbedInput {
    type Err = GresError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z" => Ok(EmbedInput::Z),
            "heatmaps" => Ok(EmbedInput::Heatmaps),
            other => Err(GresError::Config(format!(
                "unknown embed_input {other:?} (expected z or heatmaps)"
            ))),
        }
    }
}

/// Global pooling followed by an affine map into `C_v`.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingHead {
    pub pool: EmbedPool,
    pub input: EmbedInput,
    pub fc: Linear,
}

impl EmbeddingHead {
    pub fn new(
        store: &mut ParamStore,
        z_channels: usize,
        c_v: usize,
        pool: EmbedPool,
        input: EmbedInput,
        rng: &mut impl Rng,
    ) -> Self {
        let channels = match input {
            EmbedInput::Z => z_channels,
            EmbedInput::Heatmaps => z_channels - c_v,
        };
        Self {
            pool,
            input,
            fc: Linear::new(store, "head.embed", pool.pooled_len(channels), c_v, rng),
        }
    }

    /// `x` is the part of `z` selected by `self.input`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let avg = g.global_avg_pool(x)?;
        let pooled = match self.pool {
            EmbedPool::Avg => avg,
            EmbedPool::AvgMax => {
                let max = g.global_max_pool(x)?;
                g.concat_vectors(&[avg, max])?
            }
        };
        self.fc.forward(g, p, pooled)
    }
}

pub fn embed_group_features(
    z: &TriphasicFeatures,
    head: &EmbeddingHead,
    store: &ParamStore,
) -> Result<GroupEmbedding> {
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let input = match head.input {
        EmbedInput::Z => z.z.clone(),
        EmbedInput::Heatmaps => z.z.slice_leading(z.c_v, z.c_v + 1 + z.n_maps)?,
    };
    let zv = g.constant(input);
    let e = head.forward(&mut g, &p, zv)?;
    Ok(GroupEmbedding {
        e: g.value(e).data().to_vec(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub is_positive: bool,
    pub d_pos: f64,
    pub d_neg: f64,
}

impl Decision {
    /// Applies the margin rule to precomputed distances.
    pub fn from_distances(d_pos: f64, d_neg: f64, margin: f64) -> Self {
        Self {
            is_positive: d_pos + margin < d_neg,
            d_pos,
            d_neg,
        }
    }
}

/// Positive iff `‖e − Lp‖ + m < ‖e − Lp_anti‖`.
pub fn decide(
    e: &GroupEmbedding,
    lp: &ProjectedLanguage,
    lp_anti: &ProjectedLanguage,
    margin: f64,
) -> Result<Decision> {
    if !(margin >= 0.0) {
        return Err(GresError::InvalidInput(format!("margin must be nonnegative, got {margin}")));
    }
    if e.e.len() != lp.lp.len() || e.e.len() != lp_anti.lp.len() {
        return Err(GresError::shape(&[lp.lp.len()], &[e.e.len()]));
    }
    Ok(Decision::from_distances(
        euclidean(&e.e, &lp.lp),
        euclidean(&e.e, &lp_anti.lp),
        margin,
    ))
}

/// Binary mask from logits; all zero for images decided negative.
pub fn emit_mask(logits: &Tensor, decision: &Decision) -> Vec<u8> {
    if !decision.is_positive {
        return vec![0; logits.len()];
    }
    logits.data().iter().map(|&x| u8::from(x > 0.0)).collect()
}

/// Two stride-2 transposed convolutions and a 1×1 head producing one logit per input pixel.
#[derive(Clone, Copy, Debug)]
pub struct Decoder {
    pub up1: ConvTranspose2d,
    pub up2: ConvTranspose2d,
    pub head: Conv2d,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        z_channels: usize,
        widths: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            up1: ConvTranspose2d::new(store, "decoder.up1", z_channels, widths.0, 4, 2, 1, rng),
            up2: ConvTranspose2d::new(store, "decoder.up2", widths.0, widths.1, 4, 2, 1, rng),
            head: Conv2d::new(store, "decoder.head", widths.1, 1, 1, 1, 0, rng),
        }
    }

    /// Logits shaped `1×(4H)×(4W)`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        let x = self.up1.forward(g, p, z)?;
        let x = g.relu(x);
        let x = self.up2.forward(g, p, x)?;
        let x = g.relu(x);
        self.head.forward(g, p, x)
    }
}

/// Logits at full input resolution, shaped `H_img×W_img`.
pub fn decode_mask(z: &TriphasicFeatures, decoder: &Decoder, store: &ParamStore) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let zv = g.constant(z.z.clone());
    let out = decoder.forward(&mut g, &p, zv)?;
    let (_, h, w) = g.value(out).chw()?;
    g.value(out).clone().reshape(&[h, w])
}
