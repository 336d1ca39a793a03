//! Trainable text and image encoders.
//!
//! The text side embeds tokens, mean-pools them and runs a two-layer
//! perceptron. The image side is three 3×3 convolutions (stride 2, 2, 1) with
//! ReLU between them, so features sit on a grid four times coarser than the
//! input.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::dataset::{NO_TOKEN, UNK_TOKEN};
use crate::error::{GresError, Result};
use crate::nn::{uniform, Bound, Conv2d, Linear, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Total downsampling factor of [`ImageEncoder`].
pub const IMAGE_STRIDE: usize = 4;

/// Prepends the negation token.
pub fn make_anti(expression: &[String]) -> Result<Vec<String>> {
    if expression.is_empty() {
        return Err(GresError::InvalidInput("empty expression".into()));
    }
    let mut anti = Vec::with_capacity(expression.len() + 1);
    anti.push(NO_TOKEN.to_string());
    anti.extend_from_slice(expression);
    Ok(anti)
}

/// Token table; always contains [`NO_TOKEN`] and [`UNK_TOKEN`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(mut tokens: Vec<String>) -> Self {
        for reserved in [NO_TOKEN, UNK_TOKEN] {
            if !tokens.iter().any(|t| t == reserved) {
                tokens.push(reserved.to_string());
            }
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps tokens to ids; out-of-vocabulary tokens become `<unk>`.
    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        let unk = self.index[UNK_TOKEN];
        tokens
            .iter()
            .map(|t| self.index.get(t).copied().unwrap_or(unk))
            .collect()
    }
}

/// Expression and anti-expression embeddings, each of length `C_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct TextFeatures {
    pub l: Vec<f64>,
    pub l_anti: Vec<f64>,
}

/// Visual features `C_v×H×W` for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualFeatures {
    pub v: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct TextEncoder {
    pub table: ParamId,
    pub hidden: Linear,
    pub out: Linear,
}

impl TextEncoder {
    pub fn new(store: &mut ParamStore, vocab_len: usize, c_l: usize, rng: &mut impl Rng) -> Self {
        let table = store.add("text.embedding", uniform(rng, &[vocab_len, c_l], 1.0));
        let hidden = Linear::new(store, "text.hidden", c_l, c_l, rng);
        let out = Linear::new(store, "text.out", c_l, c_l, rng);
        Self { table, hidden, out }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(GresError::InvalidInput("empty token list".into()));
        }
        let pooled = g.embed_mean(p.var(self.table), ids)?;
        let h = self.hidden.forward(g, p, pooled)?;
        let h = g.tanh(h);
        self.out.forward(g, p, h)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ImageEncoder {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub conv3: Conv2d,
}

impl ImageEncoder {
    pub fn new(
        store: &mut ParamStore,
        widths: (usize, usize),
        c_v: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Self {
        // Odd kernels with half padding keep the stride-4 geometry exact.
        let pad = kernel / 2;
        Self {
            conv1: Conv2d::new(store, "image.conv1", 3, widths.0, kernel, 2, pad, rng),
            conv2: Conv2d::new(store, "image.conv2", widths.0, widths.1, kernel, 2, pad, rng),
            conv3: Conv2d::new(store, "image.conv3", widths.1, c_v, kernel, 1, pad, rng),
        }
    }

    /// `x` is `3×H×W` with `H` and `W` multiples of [`IMAGE_STRIDE`].
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let (c, h, w) = g.value(x).chw()?;
        if c != 3 {
            return Err(GresError::shape(&[3, h, w], &[c, h, w]));
        }
        if h % IMAGE_STRIDE != 0 || w % IMAGE_STRIDE != 0 || h == 0 || w == 0 {
            return Err(GresError::InvalidInput(format!(
                "image {h}×{w} is not divisible by the encoder stride {IMAGE_STRIDE}"
            )));
        }
        let x = self.conv1.forward(g, p, x)?;
        let x = g.relu(x);
        let x = self.conv2.forward(g, p, x)?;
        let x = g.relu(x);
        self.conv3.forward(g, p, x)
    }
}

/// Inference-only text encoding.
pub fn encode_text(
    tokens: &[String],
    encoder: &TextEncoder,
    store: &ParamStore,
    vocab: &Vocab,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let out = encoder.forward(&mut g, &p, &vocab.ids(tokens))?;
    Ok(g.value(out).data().to_vec())
}

/// Inference-only encoding of a `3×H×W` image with values in `[0, 1]`.
pub fn encode_image(
    pixels: &Tensor,
    encoder: &ImageEncoder,
    store: &ParamStore,
) -> Result<VisualFeatures> {
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let x = g.constant(pixels.clone());
    let v = encoder.forward(&mut g, &p, x)?;
    Ok(VisualFeatures {
        v: g.value(v).clone(),
    })
}

/// Both embeddings of an expression.
pub fn encode_expression(
    expression: &[String],
    encoder: &TextEncoder,
    store: &ParamStore,
    vocab: &Vocab,
) -> Result<TextFeatures> {
    Ok(TextFeatures {
        l: encode_text(expression, encoder, store, vocab)?,
        l_anti: encode_text(&make_anti(expression)?, encoder, store, vocab)?,
    })
}
