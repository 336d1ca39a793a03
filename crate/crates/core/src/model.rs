//! The assembled network and its forward passes over one group.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::encoders::{make_anti, ImageEncoder, TextEncoder, Vocab};
use crate::error::{GresError, Result};
use crate::hierarchizer::{rank_order, score_vectors, PrototypeScores, RankCriterion};
use crate::nn::{Bound, Linear, ParamStore};
use crate::predictor::{emit_mask, Decision, Decoder, EmbedInput, EmbedPool, EmbeddingHead};
use crate::tensor::Tensor;
use crate::tqm::{query_group, GroupQuery, Heatmap};

/// Architecture of a [`GresModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub group_size: usize,
    pub c_l: usize,
    pub c_v: usize,
    pub encoder_widths: (usize, usize),
    /// Odd square kernel of every encoder convolution.
    pub encoder_kernel: usize,
    pub decoder_widths: (usize, usize),
    /// Without the query stage `z` carries only `V` and the language heatmap.
    pub use_tqm: bool,
    /// Without a trained decision head every image is declared positive.
    pub use_decision: bool,
    pub margin: f64,
    pub embed_pool: EmbedPool,
    pub embed_input: EmbedInput,
}

impl ModelConfig {
    pub fn z_channels(&self) -> usize {
        self.c_v + 1 + if self.use_tqm { self.group_size } else { 0 }
    }
}

/// Which projected language vector plays the query and which the anti role.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Roles {
    pub query: Var,
    pub anti: Var,
}

impl Roles {
    pub fn swapped(self) -> Self {
        Self {
            query: self.anti,
            anti: self.query,
        }
    }
}

/// Tape variables of one pass over a group.
#[derive(Clone, Debug)]
pub struct BranchVars {
    pub query: GroupQuery,
    pub scores: Option<PrototypeScores>,
    pub order: Vec<usize>,
    pub keys: Vec<usize>,
    pub z: Vec<Var>,
    /// Empty when embeddings were not requested.
    pub embeddings: Vec<Var>,
    pub logits: Vec<Var>,
}

/// Inference output for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageInference {
    /// `H×W` logits before the decision is applied.
    pub logits: Tensor,
    /// `{0,1}` mask; all zero when the image is decided negative.
    pub mask: Vec<u8>,
    pub decision: Decision,
    /// The language heatmap followed by the ranked vision heatmaps.
    pub heatmaps: Vec<Heatmap>,
}

#[derive(Clone, Debug)]
pub struct GresModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub text: TextEncoder,
    pub image: ImageEncoder,
    /// Shared projection of language features into the visual channel space.
    pub projection: Linear,
    pub head: EmbeddingHead,
    pub decoder: Decoder,
}

impl GresModel {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        if config.group_size == 0 || config.c_l == 0 || config.c_v == 0 {
            return Err(GresError::Config(
                "N, c_l and c_v must all be at least 1".into(),
            ));
        }
        if config.encoder_kernel % 2 == 0 {
            return Err(GresError::Config(format!(
                "encoder_kernel must be odd, got {}",
                config.encoder_kernel
            )));
        }
        if !(config.margin >= 0.0) {
            return Err(GresError::Config(format!("margin must be nonnegative, got {}", config.margin)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let text = TextEncoder::new(&mut store, vocab.len(), config.c_l, &mut rng);
        let image = ImageEncoder::new(&mut store, config.encoder_widths, config.c_v, config.encoder_kernel, &mut rng);
        let projection = Linear::new(&mut store, "projection", config.c_l, config.c_v, &mut rng);
        let head = EmbeddingHead::new(&mut store, config.z_channels(), config.c_v, config.embed_pool, config.embed_input, &mut rng);
        let decoder = Decoder::new(&mut store, config.z_channels(), config.decoder_widths, &mut rng);
        Ok(Self {
            config,
            vocab,
            store,
            text,
            image,
            projection,
            head,
            decoder,
        })
    }

    pub fn encode_images(&self, g: &mut Graph, p: &Bound, images: &[Tensor]) -> Result<Vec<Var>> {
        if images.len() != self.config.group_size {
            return Err(GresError::InvalidInput(format!(
                "group has {} images, model expects {}",
                images.len(),
                self.config.group_size
            )));
        }
        images
            .iter()
            .map(|x| {
                let xv = g.constant(x.clone());
                self.image.forward(g, p, xv)
            })
            .collect()
    }

    /// Projected embeddings of the expression and its anti-expression.
    pub fn encode_language(&self, g: &mut Graph, p: &Bound, expression: &[String]) -> Result<Roles> {
        let anti = make_anti(expression)?;
        let l = self.text.forward(g, p, &self.vocab.ids(expression))?;
        let l_anti = self.text.forward(g, p, &self.vocab.ids(&anti))?;
        Ok(Roles {
            query: self.projection.forward(g, p, l)?,
            anti: self.projection.forward(g, p, l_anti)?,
        })
    }

    /// One pass of query, ranking, assembly, embedding and decoding.
    ///
    /// Calling it with `roles.swapped()` gives the mirrored pass.
    #[allow(clippy::too_many_arguments)]
    pub fn branch(
        &self,
        g: &mut Graph,
        p: &Bound,
        visual: &[Var],
        roles: Roles,
        criterion: RankCriterion,
        seed: u64,
        with_embeddings: bool,
    ) -> Result<BranchVars> {
        let query = query_group(g, visual, roles.query, self.config.use_tqm)?;
        let (scores, order, keys) = if self.config.use_tqm {
            let protos: Vec<&[f64]> = query.prototypes.iter().map(|&v| g.value(v).data()).collect();
            let scores = score_vectors(
                &protos,
                g.value(roles.query).data(),
                g.value(roles.anti).data(),
            )?;
            let (order, keys) = rank_order(&scores, criterion, seed)?;
            (Some(scores), order, keys)
        } else {
            (None, Vec::new(), Vec::new())
        };

        let mut z = Vec::with_capacity(visual.len());
        let mut embeddings = Vec::new();
        let mut logits = Vec::with_capacity(visual.len());
        for (n, &v) in visual.iter().enumerate() {
            let mut parts = vec![v, query.language[n]];
            if self.config.use_tqm {
                parts.extend(order.iter().map(|&i| query.vision[n][i]));
            }
            let zn = g.concat_channels(&parts)?;
            if with_embeddings {
                let input = match self.head.input {
                    EmbedInput::Z => zn,
                    EmbedInput::Heatmaps => g.concat_channels(&parts[1..])?,
                };
                embeddings.push(self.head.forward(g, p, input)?);
            }
            logits.push(self.decoder.forward(g, p, zn)?);
            z.push(zn);
        }
        Ok(BranchVars {
            query,
            scores,
            order,
            keys,
            z,
            embeddings,
            logits,
        })
    }

    /// Forward pass without the mirrored branch; negatives get all-zero masks.
    pub fn infer(
        &self,
        images: &[Tensor],
        expression: &[String],
        criterion: RankCriterion,
        seed: u64,
    ) -> Result<Vec<ImageInference>> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let visual = self.encode_images(&mut g, &p, images)?;
        let roles = self.encode_language(&mut g, &p, expression)?;
        let out = self.branch(&mut g, &p, &visual, roles, criterion, seed, true)?;
        let mut results = Vec::with_capacity(images.len());
        for n in 0..images.len() {
            let e = g.value(out.embeddings[n]).data();
            let d_pos = crate::kernels::euclidean(e, g.value(roles.query).data());
            let d_neg = crate::kernels::euclidean(e, g.value(roles.anti).data());
            let decision = if self.config.use_decision {
                Decision::from_distances(d_pos, d_neg, self.config.margin)
            } else {
                Decision {
                    is_positive: true,
                    d_pos,
                    d_neg,
                }
            };
            let raw = g.value(out.logits[n]);
            let (_, h, w) = raw.chw()?;
            let logits = raw.clone().reshape(&[h, w])?;
            let mask = emit_mask(&logits, &decision);
            let as_map = |v: Var| -> Result<Heatmap> {
                Ok(Heatmap {
                    values: g.value(v).clone(),
                })
            };
            let mut heatmaps = vec![as_map(out.query.language[n])?];
            if self.config.use_tqm {
                for &i in &out.order {
                    heatmaps.push(as_map(out.query.vision[n][i])?);
                }
            }
            results.push(ImageInference {
                logits,
                mask,
                decision,
                heatmaps,
            });
        }
        Ok(results)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform;

    fn config(use_tqm: bool) -> ModelConfig {
        ModelConfig {
            group_size: 3,
            c_l: 6,
            c_v: 5,
            encoder_widths: (3, 4),
            encoder_kernel: 3,
            decoder_widths: (4, 3),
            use_tqm,
            use_decision: true,
            margin: 1.0,
            embed_pool: EmbedPool::AvgMax,
            embed_input: EmbedInput::Heatmaps,
        }
    }

    fn vocab() -> Vocab {
        Vocab::from(vec!["red".to_string(), "circle".to_string()])
    }

    fn expr() -> Vec<String> {
        vec!["red".to_string(), "circle".to_string()]
    }

    fn images(seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3).map(|_| uniform(&mut rng, &[3, 8, 8], 1.0).map(f64::abs)).collect()
    }

    #[test]
    fn channel_count_follows_query_stage() {
        assert_eq!(config(true).z_channels(), 9);
        assert_eq!(config(false).z_channels(), 6);
    }

    #[test]
    fn inference_shapes_and_heatmap_count() {
        for tqm in [true, false] {
            let m = GresModel::new(config(tqm), vocab(), 1).unwrap();
            let out = m.infer(&images(2), &expr(), RankCriterion::PosPlusNeg, 0).unwrap();
            assert_eq!(out.len(), 3);
            for r in &out {
                assert_eq!(r.logits.shape(), &[8, 8]);
                assert_eq!(r.heatmaps.len(), if tqm { 4 } else { 1 });
                if !r.decision.is_positive {
                    assert!(r.mask.iter().all(|&b| b == 0));
                }
            }
        }
        let m = GresModel::new(config(true), vocab(), 1).unwrap();
        assert!(m.infer(&images(2)[..2], &expr(), RankCriterion::Pos, 0).is_err());
    }

    #[test]
    fn swapping_roles_twice_is_identity() {
        let m = GresModel::new(config(true), vocab(), 3).unwrap();
        let imgs = images(4);
        let run = |swaps: usize| {
            let mut g = Graph::new();
            let p = m.store.bind_frozen(&mut g);
            let v = m.encode_images(&mut g, &p, &imgs).unwrap();
            let mut roles = m.encode_language(&mut g, &p, &expr()).unwrap();
            for _ in 0..swaps {
                roles = roles.swapped();
            }
            let out = m.branch(&mut g, &p, &v, roles, RankCriterion::PosPlusNeg, 0, false).unwrap();
            out.logits.iter().map(|&l| g.value(l).clone()).collect::<Vec<_>>()
        };
        assert_eq!(run(0), run(2));
        assert_ne!(run(0), run(1));
    }
}
