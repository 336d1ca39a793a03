use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Color, ShapeKind, SynthConfig};
use crate::error::{GresError, Result};
use crate::hierarchizer::RankCriterion;
use crate::model::ModelConfig;
use crate::predictor::{EmbedInput, EmbedPool};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adamw,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = GresError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adamw" => Ok(OptimizerKind::Adamw),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(GresError::Config(format!(
                "unknown optimizer {other:?} (expected adamw or sgd)"
            ))),
        }
    }
}

impl OptimizerKind {
    fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adamw => "adamw",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` towards 0 over the run, stepped per epoch.
    #[default]
    Cosine,
}

impl FromStr for LrSchedule {
    type Err = GresError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(GresError::Config(format!(
                "unknown lr_schedule {other:?} (expected constant or cosine)"
            ))),
        }
    }
}

impl LrSchedule {
    fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }

    /// Learning rate for `epoch` in `1..=epochs`.
    pub fn rate(self, lr: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => {
                let progress = (epoch - 1) as f64 / epochs as f64;
                0.5 * lr * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// Everything a run needs: model shape, schedule, ablation switches and the
/// synthetic corpus parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(rename = "N")]
    pub group_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    /// Groups per parameter update.
    pub batch_groups: usize,
    pub image_size: usize,
    pub c_l: usize,
    pub c_v: usize,
    pub encoder_widths: (usize, usize),
    pub encoder_kernel: usize,
    pub decoder_widths: (usize, usize),
    pub margin: f64,
    /// Spatial pooling ahead of the decision embedding.
    pub embed_pool: EmbedPool,
    /// Part of `z` the decision embedding sees.
    pub embed_input: EmbedInput,
    pub lambda: f64,
    pub rank_criterion: RankCriterion,
    /// Criterion used at evaluation; defaults to `rank_criterion`.
    pub test_rank_criterion: Option<RankCriterion>,
    pub use_tqm: bool,
    pub use_hierarchizer: bool,
    pub use_mirror: bool,
    pub use_triplet: bool,
    pub seed: u64,
    pub train_groups: usize,
    pub test_groups: usize,
    pub colors: Vec<Color>,
    pub shapes: Vec<ShapeKind>,
    pub min_radius: usize,
    pub max_radius: usize,
    pub min_distractors: usize,
    pub max_distractors: usize,
    /// Grid of the group-size ablation.
    pub group_sizes: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            group_size: 4,
            epochs: 30,
            lr: 2e-3,
            lr_schedule: LrSchedule::Cosine,
            weight_decay: 1e-4,
            optimizer: OptimizerKind::Adamw,
            batch_groups: 1,
            image_size: 64,
            c_l: 64,
            c_v: 32,
            encoder_widths: (8, 16),
            encoder_kernel: 3,
            decoder_widths: (16, 8),
            margin: 1.0,
            embed_pool: EmbedPool::AvgMax,
            embed_input: EmbedInput::Heatmaps,
            lambda: 1.0,
            rank_criterion: RankCriterion::PosPlusNeg,
            test_rank_criterion: None,
            use_tqm: true,
            use_hierarchizer: true,
            use_mirror: true,
            use_triplet: true,
            seed: 0,
            train_groups: 200,
            test_groups: 50,
            colors: synth.colors,
            shapes: synth.shapes,
            min_radius: synth.min_radius,
            max_radius: synth.max_radius,
            min_distractors: synth.min_distractors,
            max_distractors: synth.max_distractors,
            group_sizes: vec![1, 3, 5, 8],
        }
    }
}

/// Recognized keys, in the order [`RunConfig::to_text`] writes them.
pub const CONFIG_KEYS: &[&str] = &[
    "N",
    "epochs",
    "lr",
    "lr_schedule",
    "weight_decay",
    "optimizer",
    "batch_groups",
    "image_size",
    "c_l",
    "c_v",
    "encoder_widths",
    "encoder_kernel",
    "decoder_widths",
    "margin",
    "embed_pool",
    "embed_input",
    "lambda",
    "rank_criterion",
    "test_rank_criterion",
    "use_tqm",
    "use_hierarchizer",
    "use_mirror",
    "use_triplet",
    "seed",
    "train_groups",
    "test_groups",
    "colors",
    "shapes",
    "min_radius",
    "max_radius",
    "min_distractors",
    "max_distractors",
    "group_sizes",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| GresError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_pair(key: &str, value: &str) -> Result<(usize, usize)> {
    match parse_list::<usize>(key, value)?.as_slice() {
        &[a, b] => Ok((a, b)),
        _ => Err(GresError::Config(format!("{key}: expected two comma-separated widths"))),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(GresError::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                GresError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GresError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "N" => self.group_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_schedule" => self.lr_schedule = value.parse()?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "batch_groups" => self.batch_groups = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "c_l" => self.c_l = parse(key, value)?,
            "c_v" => self.c_v = parse(key, value)?,
            "encoder_widths" => self.encoder_widths = parse_pair(key, value)?,
            "encoder_kernel" => self.encoder_kernel = parse(key, value)?,
            "decoder_widths" => self.decoder_widths = parse_pair(key, value)?,
            "margin" | "m" => self.margin = parse(key, value)?,
            "embed_pool" => self.embed_pool = value.parse()?,
            "embed_input" => self.embed_input = value.parse()?,
            "lambda" => self.lambda = parse(key, value)?,
            "rank_criterion" => self.rank_criterion = value.parse()?,
            "test_rank_criterion" => {
                self.test_rank_criterion = match value {
                    "" | "same" => None,
                    v => Some(v.parse()?),
                }
            }
            "use_tqm" => self.use_tqm = parse_bool(key, value)?,
            "use_hierarchizer" => self.use_hierarchizer = parse_bool(key, value)?,
            "use_mirror" => self.use_mirror = parse_bool(key, value)?,
            "use_triplet" => self.use_triplet = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "train_groups" => self.train_groups = parse(key, value)?,
            "test_groups" => self.test_groups = parse(key, value)?,
            "colors" => self.colors = parse_list(key, value)?,
            "shapes" => self.shapes = parse_list(key, value)?,
            "min_radius" => self.min_radius = parse(key, value)?,
            "max_radius" => self.max_radius = parse(key, value)?,
            "min_distractors" => self.min_distractors = parse(key, value)?,
            "max_distractors" => self.max_distractors = parse(key, value)?,
            "group_sizes" => self.group_sizes = parse_list(key, value)?,
            other => {
                return Err(GresError::Config(format!(
                    "unknown config key {other:?}; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(GresError::Config(msg));
        if self.group_size == 0 {
            return fail("N must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.margin >= 0.0) {
            return fail(format!("margin must be nonnegative, got {}", self.margin));
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return fail("lr must be positive and weight_decay nonnegative".into());
        }
        if self.batch_groups == 0 {
            return fail("batch_groups must be at least 1".into());
        }
        if self.image_size == 0 || self.image_size % crate::encoders::IMAGE_STRIDE != 0 {
            return fail(format!(
                "image_size must be a positive multiple of {}",
                crate::encoders::IMAGE_STRIDE
            ));
        }
        if self.encoder_kernel % 2 == 0 {
            return fail(format!("encoder_kernel must be odd, got {}", self.encoder_kernel));
        }
        if self.group_sizes.iter().any(|&n| n == 0) {
            return fail("group_sizes entries must be at least 1".into());
        }
        Ok(())
    }

    /// Round-trips through [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("N", self.group_size.to_string());
        put("epochs", self.epochs.to_string());
        put("lr", self.lr.to_string());
        put("lr_schedule", self.lr_schedule.name().into());
        put("weight_decay", self.weight_decay.to_string());
        put("optimizer", self.optimizer.name().into());
        put("batch_groups", self.batch_groups.to_string());
        put("image_size", self.image_size.to_string());
        put("c_l", self.c_l.to_string());
        put("c_v", self.c_v.to_string());
        put("encoder_widths", join(&[self.encoder_widths.0, self.encoder_widths.1]));
        put("encoder_kernel", self.encoder_kernel.to_string());
        put("decoder_widths", join(&[self.decoder_widths.0, self.decoder_widths.1]));
        put("margin", self.margin.to_string());
        put("embed_pool", self.embed_pool.name().to_string());
        put("embed_input", self.embed_input.name().to_string());
        put("lambda", self.lambda.to_string());
        put("rank_criterion", self.rank_criterion.to_string());
        put(
            "test_rank_criterion",
            self.test_rank_criterion.map_or("same".into(), |c| c.to_string()),
        );
        put("use_tqm", self.use_tqm.to_string());
        put("use_hierarchizer", self.use_hierarchizer.to_string());
        put("use_mirror", self.use_mirror.to_string());
        put("use_triplet", self.use_triplet.to_string());
        put("seed", self.seed.to_string());
        put("train_groups", self.train_groups.to_string());
        put("test_groups", self.test_groups.to_string());
        put("colors", join(&self.colors));
        put("shapes", join(&self.shapes));
        put("min_radius", self.min_radius.to_string());
        put("max_radius", self.max_radius.to_string());
        put("min_distractors", self.min_distractors.to_string());
        put("max_distractors", self.max_distractors.to_string());
        put("group_sizes", join(&self.group_sizes));
        out
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            group_size: self.group_size,
            c_l: self.c_l,
            c_v: self.c_v,
            encoder_widths: self.encoder_widths,
            encoder_kernel: self.encoder_kernel,
            decoder_widths: self.decoder_widths,
            use_tqm: self.use_tqm,
            use_decision: self.use_triplet,
            margin: self.margin,
            embed_pool: self.embed_pool,
            embed_input: self.embed_input,
        }
    }

    pub fn train_criterion(&self) -> RankCriterion {
        if self.use_hierarchizer {
            self.rank_criterion
        } else {
            RankCriterion::Random
        }
    }

    pub fn test_criterion(&self) -> RankCriterion {
        if self.use_hierarchizer {
            self.test_rank_criterion.unwrap_or(self.rank_criterion)
        } else {
            RankCriterion::Random
        }
    }

    pub fn synth_config(&self, groups: usize) -> SynthConfig {
        SynthConfig {
            image_size: self.image_size,
            colors: self.colors.clone(),
            shapes: self.shapes.clone(),
            groups,
            group_size: self.group_size,
            min_radius: self.min_radius,
            max_radius: self.max_radius,
            min_distractors: self.min_distractors,
            max_distractors: self.max_distractors,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(c.to_text().lines().count(), CONFIG_KEYS.len());
    }

    #[test]
    fn parses_overrides_and_comments() {
        let c = RunConfig::parse(
            "# desk run\nN = 2\nepochs=3 # short\nuse_mirror = false\nrank_criterion = random\nencoder_widths = 4, 6\ncolors = red,blue\n",
        )
        .unwrap();
        assert_eq!(c.group_size, 2);
        assert_eq!(c.epochs, 3);
        assert!(!c.use_mirror);
        assert_eq!(c.rank_criterion, RankCriterion::Random);
        assert_eq!(c.encoder_widths, (4, 6));
        assert_eq!(c.colors, vec![Color::Red, Color::Blue]);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = RunConfig::parse("batch_size = 4").unwrap_err().to_string();
        assert!(err.contains("batch_size"));
        assert!(err.contains("epochs") && err.contains("use_triplet"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse("N = 0").is_err());
        assert!(RunConfig::parse("margin = -1").is_err());
        assert!(RunConfig::parse("image_size = 30").is_err());
        assert!(RunConfig::parse("use_tqm = maybe").is_err());
        assert!(RunConfig::parse("just words").is_err());
    }

    #[test]
    fn cosine_schedule_decays_from_lr() {
        let s = LrSchedule::Cosine;
        assert_eq!(s.rate(0.1, 1, 10), 0.1);
        assert!((s.rate(0.1, 6, 10) - 0.05).abs() < 1e-15);
        assert!(s.rate(0.1, 10, 10) > 0.0);
        assert_eq!(LrSchedule::Constant.rate(0.1, 7, 10), 0.1);
    }

    #[test]
    fn ablation_switches_map_to_criteria() {
        let mut c = RunConfig::default();
        c.test_rank_criterion = Some(RankCriterion::Random);
        assert_eq!(c.train_criterion(), RankCriterion::PosPlusNeg);
        assert_eq!(c.test_criterion(), RankCriterion::Random);
        c.use_hierarchizer = false;
        assert_eq!(c.train_criterion(), RankCriterion::Random);
        c.use_triplet = false;
        assert!(!c.model_config().use_decision);
    }
}
