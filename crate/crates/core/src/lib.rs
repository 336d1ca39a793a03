//! Group-wise referring segmentation: one expression, a group of images, a
//! mask for each image that contains the referred object and an empty mask
//! for each that does not.

pub mod autograd;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod hierarchizer;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod predictor;
pub mod tensor;
pub mod tqm;
pub mod trainer;
pub mod viz;

pub use autograd::{Graph, Var};
pub use dataset::{DatasetManifest, GroupSample, ImageRecord, Split};
pub use encoders::Vocab;
pub use error::{GresError, Result};
pub use hierarchizer::RankCriterion;
pub use metrics::{EvalRecord, EvalReport};
pub use model::{GresModel, ModelConfig};
pub use tensor::Tensor;
pub use trainer::{Checkpoint, RunConfig};
