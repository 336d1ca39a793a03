//! Named parameter storage and the handful of layers the model is built from.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{GresError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<NamedTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.entries.push(NamedTensor {
            name: name.into(),
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Places every parameter on the tape as a gradient-receiving leaf.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| graph.param(e.tensor.clone()))
            .collect();
        Bound { vars }
    }

    /// Places every parameter on the tape as a constant (inference).
    pub fn bind_frozen(&self, graph: &mut Graph) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| graph.constant(e.tensor.clone()))
            .collect();
        Bound { vars }
    }

    /// Replaces all values with those of `other`, which must have the same layout.
    pub fn load_from(&mut self, other: ParamStore) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(GresError::InvalidInput(format!(
                "parameter count mismatch: expected {}, got {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter().zip(&other.entries) {
            if mine.name != theirs.name || mine.tensor.shape() != theirs.tensor.shape() {
                return Err(GresError::InvalidInput(format!(
                    "parameter layout mismatch: {} {:?} vs {} {:?}",
                    mine.name,
                    mine.tensor.shape(),
                    theirs.name,
                    theirs.tensor.shape()
                )));
            }
        }
        self.entries = other.entries;
        Ok(())
    }
}

/// Tape variables for every parameter of a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.vars.iter().enumerate().map(|(i, &v)| (ParamId(i), v))
    }
}

pub(crate) fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape matches generated length")
}

/// Dense affine layer `y = W·x + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (3.0 / inputs.max(1) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[outputs, inputs], bound),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.weight), p.var(self.bias))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = inputs * kernel * kernel;
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[outputs, inputs, kernel, kernel], bound),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.var(self.weight), p.var(self.bias), self.stride, self.pad)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        // Each output pixel sees about inputs·(k/stride)² taps.
        let taps = inputs * (kernel / stride.max(1)).pow(2);
        let bound = (6.0 / taps.max(1) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[inputs, outputs, kernel, kernel], bound),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv_transpose2d(x, p.var(self.weight), p.var(self.bias), self.stride, self.pad)
    }
}
