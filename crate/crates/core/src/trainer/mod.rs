//! Training loop, checkpoints, inference over groups, evaluation, and the
//! ablation runner.

mod ablate;
mod config;
mod optim;

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic, GroupSample, Split, SyntheticCorpus};
use crate::encoders::Vocab;
use crate::error::{GresError, Result};
use crate::hierarchizer::RankCriterion;
use crate::kernels::sigmoid;
use crate::metrics::{iou, EvalRecord, EvalReport, SaliencyPair};
use crate::model::{GresModel, ImageInference};
use crate::nn::ParamStore;
use crate::objectives::{group_objective, LossTerms, ObjectiveSettings};
use crate::tensor::Tensor;
use crate::Graph;

pub use ablate::{ablate, AblationRow, AblationSuite};
pub use config::{LrSchedule, OptimizerKind, RunConfig, CONFIG_KEYS};
pub use optim::Optimizer;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Per-group seed for the random ranking criterion.
pub fn group_seed(run_seed: u64, group_id: &str) -> u64 {
    fnv1a(group_id.as_bytes()) ^ run_seed.rotate_left(17)
}

/// Seeds of the two synthetic splits.
pub fn split_seeds(seed: u64) -> (u64, u64) {
    (fnv1a(format!("train:{seed}").as_bytes()), fnv1a(format!("test:{seed}").as_bytes()))
}

/// Generates the train and test splits described by `config`.
pub fn synthetic_splits(config: &RunConfig) -> Result<(SyntheticCorpus, SyntheticCorpus)> {
    let (train_seed, test_seed) = split_seeds(config.seed);
    let train = generate_synthetic(&config.synth_config(config.train_groups), Split::Train, train_seed)?;
    let test = generate_synthetic(&config.synth_config(config.test_groups), Split::Test, test_seed)?;
    Ok((train, test))
}

/// One optimization step's worth of loss terms for one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub group_id: String,
    pub ce: f64,
    pub ce_mirror: f64,
    pub tri: f64,
    pub total: f64,
    pub epoch_weight: f64,
}

impl StepLog {
    fn new(epoch: usize, step: u64, group_id: &str, t: &LossTerms) -> Self {
        Self {
            epoch,
            step,
            group_id: group_id.to_string(),
            ce: t.ce,
            ce_mirror: t.ce_mirror,
            tri: t.tri,
            total: t.total,
            epoch_weight: t.epoch_weight,
        }
    }
}

/// Serialized model state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub epoch: usize,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn of(config: &RunConfig, model: &GresModel, epoch: usize) -> Self {
        Self {
            config: config.clone(),
            vocab: model.vocab.clone(),
            epoch,
            params: model.store.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| GresError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GresError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn into_model(self) -> Result<GresModel> {
        let mut model = GresModel::new(self.config.model_config(), self.vocab, self.config.seed)?;
        model.store.load_from(self.params)?;
        Ok(model)
    }
}

/// Rejects groups whose positives outnumber negatives by more than the odd slack.
pub fn check_ratio(groups: &[GroupSample]) -> Result<()> {
    for g in groups {
        let (pos, neg) = (g.positives(), g.negatives());
        if pos > neg + g.images.len() % 2 {
            return Err(GresError::Dataset(format!(
                "{}: {pos} positives vs {neg} negatives violates the training ratio",
                g.group_id
            )));
        }
    }
    Ok(())
}

fn objective_settings(config: &RunConfig, criterion: RankCriterion, seed: u64) -> ObjectiveSettings {
    ObjectiveSettings {
        lambda: config.lambda,
        margin: config.margin,
        use_mirror: config.use_mirror,
        use_triplet: config.use_triplet,
        criterion,
        seed,
    }
}

/// Trains a fresh model on `groups`, calling `on_step` after every group.
///
/// The triplet weight ramps as `t / T` with epochs counted from 1.
pub fn train(
    config: &RunConfig,
    vocab: Vocab,
    groups: &[GroupSample],
    on_step: &mut dyn FnMut(&StepLog),
) -> Result<GresModel> {
    config.validate()?;
    if groups.is_empty() {
        return Err(GresError::Dataset("no training groups".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.images.len() != config.group_size) {
        return Err(GresError::Dataset(format!(
            "{} has {} images, config N is {}",
            g.group_id,
            g.images.len(),
            config.group_size
        )));
    }
    check_ratio(groups)?;

    let mut model = GresModel::new(config.model_config(), vocab, config.seed)?;
    let mut opt = Optimizer::new(config.optimizer, &model.store, config.lr, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let criterion = config.train_criterion();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    info!(
        "training {} groups, {} parameters, {} epochs",
        groups.len(),
        model.store.num_scalars(),
        config.epochs
    );

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        opt.set_lr(config.lr_schedule.rate(config.lr, epoch, config.epochs));
        let mut epoch_total = 0.0;
        for batch in order.chunks(config.batch_groups) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &gi in batch {
                let group = &groups[gi];
                let seed = group_seed(config.seed ^ epoch as u64, &group.group_id);
                let settings = objective_settings(config, criterion, seed);
                let mut g = Graph::new();
                let p = model.store.bind(&mut g);
                let obj = group_objective(&model, &mut g, &p, group, epoch, config.epochs, &settings)?;
                if !obj.terms.total.is_finite() {
                    return Err(GresError::Diverged {
                        epoch,
                        group_id: group.group_id.clone(),
                        detail: format!("{:?}", obj.terms),
                    });
                }
                let mut grads = g.backward(obj.total);
                let flat: Vec<Tensor> = p
                    .iter()
                    .map(|(id, v)| {
                        grads
                            .take(v)
                            .unwrap_or_else(|| Tensor::zeros(model.store.get(id).shape()))
                    })
                    .collect();
                match acc.as_mut() {
                    None => acc = Some(flat),
                    Some(sum) => sum.iter_mut().zip(&flat).for_each(|(s, t)| s.add_assign(t)),
                }
                epoch_total += obj.terms.total;
                on_step(&StepLog::new(epoch, opt.steps() + 1, &group.group_id, &obj.terms));
            }
            let mut grads = acc.expect("batches are nonempty");
            if batch.len() > 1 {
                let k = batch.len() as f64;
                grads = grads.iter().map(|t| t.map(|x| x / k)).collect();
            }
            if grads.iter().any(|t| !t.all_finite()) {
                return Err(GresError::Diverged {
                    epoch,
                    group_id: groups[batch[0]].group_id.clone(),
                    detail: "non-finite gradient".into(),
                });
            }
            opt.step(&mut model.store, &grads)?;
        }
        info!("epoch {epoch}/{}: mean loss {:.4}", config.epochs, epoch_total / groups.len() as f64);
    }
    Ok(model)
}

/// Runs inference on one group with its deterministic ranking seed.
pub fn infer_group(
    model: &GresModel,
    group: &GroupSample,
    criterion: RankCriterion,
    run_seed: u64,
) -> Result<Vec<ImageInference>> {
    let images: Vec<Tensor> = group.images.iter().map(|r| r.to_tensor()).collect();
    model.infer(
        &images,
        &group.expression,
        criterion,
        group_seed(run_seed, &group.group_id),
    )
}

/// Evaluates `model` on `groups`.
///
/// Saliency maps are `sigmoid(logits)` for images decided positive and all
/// zero for images decided negative.
pub fn evaluate(
    model: &GresModel,
    groups: &[GroupSample],
    criterion: RankCriterion,
    run_seed: u64,
) -> Result<EvalReport> {
    let mut records = Vec::new();
    let mut pairs = Vec::new();
    for group in groups {
        let out = infer_group(model, group, criterion, run_seed)?;
        for (r, inf) in group.images.iter().zip(&out) {
            let gt = r.mask.clone().unwrap_or_else(|| vec![0; r.height * r.width]);
            let score = iou(&inf.mask, &gt)?;
            records.push(EvalRecord::new(
                group.group_id.clone(),
                r.image_id.clone(),
                r.is_positive,
                inf.decision.is_positive,
                score,
                inf.decision.d_pos,
                inf.decision.d_neg,
            ));
            let pred = if inf.decision.is_positive {
                inf.logits.data().iter().map(|&x| sigmoid(x)).collect()
            } else {
                vec![0.0; r.height * r.width]
            };
            pairs.push(SaliencyPair::new(r.height, r.width, pred, gt)?);
        }
        debug!("evaluated {}", group.group_id);
    }
    EvalReport::build(records, &pairs, criterion.name())
}
