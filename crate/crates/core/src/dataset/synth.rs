//! Seeded synthetic corpus of colored shapes for desk-scale experiments.
//!
//! Each group is described by a two-token "color shape" expression. Positive
//! images contain exactly one object of that color and shape among distractors;
//! negative images contain only distractors. Distractors are any other
//! color/shape pair, so half of them share an attribute with the target.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_vocab, DatasetManifest, GroupEntry, GroupSample, ImageEntry, ImageRecord, Split,
};
use crate::error::{GresError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }

    /// Whether the pixel center `(x, y)` lies inside a shape of radius `r` at `(cx, cy)`.
    fn contains(self, cx: f64, cy: f64, r: f64, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - cx, y - cy);
        match self {
            ShapeKind::Circle => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r,
            ShapeKind::Triangle => {
                // Apex up; base at cy + 0.8r spanning ±r.
                let base = 0.8 * r;
                if dy < -r || dy > base {
                    return false;
                }
                let half_width = r * (dy + r) / (base + r);
                dx.abs() <= half_width
            }
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = GresError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(ShapeKind::Circle),
            "square" => Ok(ShapeKind::Square),
            "triangle" => Ok(ShapeKind::Triangle),
            other => Err(GresError::Config(format!(
                "unknown shape {other:?} (expected circle, square or triangle)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
    Cyan,
}

impl Color {
    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Magenta => "magenta",
            Color::Cyan => "cyan",
        }
    }

    fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 40, 40],
            Color::Green => [40, 200, 60],
            Color::Blue => [50, 80, 230],
            Color::Yellow => [230, 220, 40],
            Color::Magenta => [210, 50, 210],
            Color::Cyan => [40, 210, 220],
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Color {
    type Err = GresError;

    fn from_str(s: &str) -> Result<Self> {
        [
            Color::Red,
            Color::Green,
            Color::Blue,
            Color::Yellow,
            Color::Magenta,
            Color::Cyan,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| GresError::Config(format!("unknown color {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_size: usize,
    pub colors: Vec<Color>,
    pub shapes: Vec<ShapeKind>,
    pub groups: usize,
    pub group_size: usize,
    /// Shape radius range in pixels, inclusive.
    pub min_radius: usize,
    pub max_radius: usize,
    /// Distractor objects per image, inclusive range.
    pub min_distractors: usize,
    pub max_distractors: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            colors: vec![Color::Red, Color::Green, Color::Blue],
            shapes: vec![ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle],
            groups: 200,
            group_size: 4,
            min_radius: 9,
            max_radius: 13,
            min_distractors: 1,
            max_distractors: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub color: Color,
    pub shape: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

/// A generated split: the manifest, the decoded groups, and the ground-truth scene
/// layouts (`layouts[g][i]` lists the objects drawn into image `i` of group `g`).
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub manifest: DatasetManifest,
    pub groups: Vec<GroupSample>,
    pub layouts: Vec<Vec<Vec<SceneObject>>>,
}

fn positives_in_group(group_size: usize, index: usize) -> usize {
    if group_size % 2 == 0 {
        group_size / 2
    } else {
        group_size / 2 + index % 2
    }
}

pub fn generate_synthetic(config: &SynthConfig, split: Split, seed: u64) -> Result<SyntheticCorpus> {
    let pairs: Vec<(Color, ShapeKind)> = config
        .colors
        .iter()
        .flat_map(|&c| config.shapes.iter().map(move |&s| (c, s)))
        .collect();
    if pairs.len() < 2 {
        return Err(GresError::Config(
            "synthetic vocabulary needs at least two color/shape combinations to draw distractors"
                .into(),
        ));
    }
    if config.group_size == 0 || config.groups == 0 {
        return Err(GresError::Config("groups and group_size must be positive".into()));
    }
    if config.min_radius == 0
        || config.min_radius > config.max_radius
        || config.min_distractors > config.max_distractors
    {
        return Err(GresError::Config("invalid radius or distractor range".into()));
    }
    if config.image_size < 2 * config.max_radius + 4 {
        return Err(GresError::Config(format!(
            "image size {} too small for {} objects of radius {}",
            config.image_size,
            config.max_distractors + 1,
            config.max_radius
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::with_capacity(config.groups);
    let mut entries = Vec::with_capacity(config.groups);
    let mut layouts = Vec::with_capacity(config.groups);
    for gi in 0..config.groups {
        let group_id = format!("g{gi:05}");
        let target = pairs[rng.gen_range(0..pairs.len())];
        let distractors: Vec<(Color, ShapeKind)> =
            pairs.iter().copied().filter(|&p| p != target).collect();
        let n_pos = positives_in_group(config.group_size, gi);
        let mut labels: Vec<bool> = (0..config.group_size).map(|i| i < n_pos).collect();
        labels.shuffle(&mut rng);

        let mut images = Vec::with_capacity(config.group_size);
        let mut image_entries = Vec::with_capacity(config.group_size);
        let mut group_layout = Vec::with_capacity(config.group_size);
        for (ii, &positive) in labels.iter().enumerate() {
            let image_id = format!("{group_id}_{ii}");
            let (record, objects) =
                render_image(config, &image_id, target, &distractors, positive, &mut rng)?;
            image_entries.push(ImageEntry {
                path: format!("images/{image_id}.png"),
                mask_path: positive.then(|| format!("masks/{image_id}.png")),
                is_positive: positive,
            });
            images.push(record);
            group_layout.push(objects);
        }
        let expression = vec![target.0.name().to_string(), target.1.name().to_string()];
        entries.push(GroupEntry {
            group_id: group_id.clone(),
            expression: expression.clone(),
            images: image_entries,
        });
        groups.push(GroupSample {
            group_id,
            expression,
            images,
        });
        layouts.push(group_layout);
    }

    let mut all_words: Vec<Vec<String>> = config
        .colors
        .iter()
        .flat_map(|c| config.shapes.iter().map(move |s| vec![c.name().to_string(), s.name().to_string()]))
        .collect();
    all_words.extend(entries.iter().map(|e| e.expression.clone()));
    let vocab = build_vocab(all_words.iter().map(Vec::as_slice));
    Ok(SyntheticCorpus {
        manifest: DatasetManifest {
            group_size: config.group_size,
            vocab,
            groups: entries,
            split,
        },
        groups,
        layouts,
    })
}

fn place_objects(
    config: &SynthConfig,
    kinds: &[(Color, ShapeKind)],
    rng: &mut ChaCha8Rng,
) -> Option<Vec<SceneObject>> {
    let size = config.image_size as f64;
    let mut placed: Vec<SceneObject> = Vec::with_capacity(kinds.len());
    for &(color, shape) in kinds {
        let mut ok = false;
        for _ in 0..200 {
            let r = rng.gen_range(config.min_radius..=config.max_radius) as f64;
            let cx = rng.gen_range(r + 1.0..size - r - 1.0);
            let cy = rng.gen_range(r + 1.0..size - r - 1.0);
            let clear = placed.iter().all(|o| {
                let d = ((o.cx - cx).powi(2) + (o.cy - cy).powi(2)).sqrt();
                d > o.radius + r + 2.0
            });
            if clear {
                placed.push(SceneObject {
                    color,
                    shape,
                    cx,
                    cy,
                    radius: r,
                });
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
    }
    Some(placed)
}

fn render_image(
    config: &SynthConfig,
    image_id: &str,
    target: (Color, ShapeKind),
    distractors: &[(Color, ShapeKind)],
    positive: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(ImageRecord, Vec<SceneObject>)> {
    let size = config.image_size;
    let count = rng.gen_range(config.min_distractors..=config.max_distractors)
        + usize::from(!positive);
    let mut kinds: Vec<(Color, ShapeKind)> = (0..count)
        .map(|_| distractors[rng.gen_range(0..distractors.len())])
        .collect();
    if positive {
        kinds.push(target);
        kinds.shuffle(rng);
    }
    let objects = (0..100)
        .find_map(|_| place_objects(config, &kinds, rng))
        .ok_or_else(|| {
            GresError::Config(format!(
                "cannot fit {} non-overlapping objects into a {size}×{size} image",
                kinds.len()
            ))
        })?;

    let background: u8 = rng.gen_range(15..40);
    let mut pixels = Vec::with_capacity(size * size * 3);
    for _ in 0..size * size {
        for _ in 0..3 {
            let noise: i16 = rng.gen_range(-6..=6);
            pixels.push((i16::from(background) + noise).clamp(0, 255) as u8);
        }
    }
    let mut mask = positive.then(|| vec![0u8; size * size]);
    for obj in &objects {
        let base = obj.color.rgb();
        let jitter: [i16; 3] = [rng.gen_range(-15..=15), rng.gen_range(-15..=15), rng.gen_range(-15..=15)];
        let is_target = (obj.color, obj.shape) == target;
        let lo = (obj.cy - obj.radius - 1.0).max(0.0) as usize;
        let hi = ((obj.cy + obj.radius + 1.0) as usize).min(size - 1);
        let left = (obj.cx - obj.radius - 1.0).max(0.0) as usize;
        let right = ((obj.cx + obj.radius + 1.0) as usize).min(size - 1);
        for y in lo..=hi {
            for x in left..=right {
                if obj
                    .shape
                    .contains(obj.cx, obj.cy, obj.radius, x as f64 + 0.5, y as f64 + 0.5)
                {
                    let idx = (y * size + x) * 3;
                    for c in 0..3 {
                        pixels[idx + c] = (i16::from(base[c]) + jitter[c]).clamp(0, 255) as u8;
                    }
                    if is_target {
                        if let Some(m) = mask.as_mut() {
                            m[y * size + x] = 1;
                        }
                    }
                }
            }
        }
    }
    let record = ImageRecord::new(image_id, size, size, pixels, mask, positive)?;
    Ok((record, objects))
}
