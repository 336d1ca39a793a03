//! Grouped datasets: one expression against a group of `N` images, some of
//! which contain no referred object.
//!
//! A [`DatasetManifest`] is the on-disk description (paths relative to the
//! manifest's directory); a [`GroupSample`] is one group decoded into memory.

mod io;
mod regroup;
mod synth;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GresError, Result};
use crate::tensor::Tensor;

pub use io::{load_group, load_manifest, load_split, write_corpus, write_manifest, MANIFEST_FILE};
pub use regroup::{regroup_res, regroup_samples, ResAnnotation};
pub use synth::{generate_synthetic, Color, SceneObject, ShapeKind, SynthConfig, SyntheticCorpus};
pub use validate::{validate_manifest, GroupSummary, ValidationReport, Violation, ViolationKind};

/// Prefix token that turns an expression into its anti-expression.
pub const NO_TOKEN: &str = "<no>";
/// Stand-in for tokens outside the vocabulary.
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = GresError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(GresError::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

/// One image of a group, decoded.
///
/// `pixels` is `H×W×3` interleaved RGB; `mask` is `H×W` with values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
    pub mask: Option<Vec<u8>>,
    pub is_positive: bool,
}

impl ImageRecord {
    /// Builds a record, enforcing that positivity matches mask content.
    pub fn new(
        image_id: impl Into<String>,
        height: usize,
        width: usize,
        pixels: Vec<u8>,
        mask: Option<Vec<u8>>,
        is_positive: bool,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if pixels.len() != height * width * 3 {
            return Err(GresError::Dataset(format!(
                "{image_id}: expected {} RGB bytes, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        let foreground = match &mask {
            Some(m) => {
                if m.len() != height * width {
                    return Err(GresError::Dataset(format!(
                        "{image_id}: mask has {} pixels, image has {}",
                        m.len(),
                        height * width
                    )));
                }
                if m.iter().any(|&v| v > 1) {
                    return Err(GresError::Dataset(format!("{image_id}: mask is not binary")));
                }
                m.iter().any(|&v| v == 1)
            }
            None => false,
        };
        if foreground != is_positive {
            return Err(GresError::Dataset(format!(
                "{image_id}: is_positive={is_positive} but mask {} foreground",
                if foreground { "has" } else { "has no" }
            )));
        }
        Ok(Self {
            image_id,
            height,
            width,
            pixels,
            mask,
            is_positive,
        })
    }

    /// `3×H×W` tensor with values scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = f64::from(px[c]) / 255.0;
            }
        }
        Tensor::new(&[3, self.height, self.width], data).expect("record dimensions are consistent")
    }

    /// Ground-truth mask as an `H×W` tensor; the zero mask for negatives.
    pub fn target(&self) -> Tensor {
        let data = match &self.mask {
            Some(m) => m.iter().map(|&v| f64::from(v)).collect(),
            None => vec![0.0; self.height * self.width],
        };
        Tensor::new(&[self.height, self.width], data).expect("record dimensions are consistent")
    }
}

/// One expression and the `N` images it is evaluated against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupSample {
    pub group_id: String,
    pub expression: Vec<String>,
    pub images: Vec<ImageRecord>,
}

impl GroupSample {
    pub fn positives(&self) -> usize {
        self.images.iter().filter(|r| r.is_positive).count()
    }

    pub fn negatives(&self) -> usize {
        self.images.len() - self.positives()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub path: String,
    pub mask_path: Option<String>,
    pub is_positive: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub group_id: String,
    pub expression: Vec<String>,
    pub images: Vec<ImageEntry>,
}

/// On-disk dataset description. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(rename = "N")]
    pub group_size: usize,
    pub vocab: Vec<String>,
    pub groups: Vec<GroupEntry>,
    #[serde(default)]
    pub split: Split,
}

impl DatasetManifest {
    pub fn group(&self, group_id: &str) -> Option<&GroupEntry> {
        self.groups.iter().find(|g| g.group_id == group_id)
    }
}

/// Reserved tokens followed by the sorted distinct tokens of `expressions`.
pub fn build_vocab<'a>(expressions: impl IntoIterator<Item = &'a [String]>) -> Vec<String> {
    let mut words: Vec<String> = expressions
        .into_iter()
        .flatten()
        .filter(|t| *t != NO_TOKEN && *t != UNK_TOKEN)
        .cloned()
        .collect();
    words.sort();
    words.dedup();
    let mut vocab = vec![NO_TOKEN.to_string(), UNK_TOKEN.to_string()];
    vocab.extend(words);
    vocab
}
