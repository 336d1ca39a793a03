use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use super::{evaluate, train, RunConfig};
use crate::dataset::{regroup_samples, GroupSample};
use crate::encoders::Vocab;
use crate::error::{GresError, Result};
use crate::hierarchizer::RankCriterion;
use crate::metrics::EvalReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSuite {
    /// Full model against each component removed.
    Main,
    /// Every train criterion crossed with every test criterion.
    RankCriteria,
    /// Full model regrouped to each entry of `group_sizes`.
    GroupSize,
}

impl AblationSuite {
    pub const ALL: [AblationSuite; 3] = [Self::Main, Self::RankCriteria, Self::GroupSize];

    pub fn name(self) -> &'static str {
        match self {
            Self::Main => "main",
            Self::RankCriteria => "rank_criteria",
            Self::GroupSize => "group_size",
        }
    }
}

impl fmt::Display for AblationSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationSuite {
    type Err = GresError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| GresError::Config(format!("unknown ablation suite {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub suite: String,
    pub variant: String,
    #[serde(rename = "N")]
    pub group_size: usize,
    pub train_criterion: String,
    pub test_criterion: String,
    pub miou_bar: f64,
    pub miou: Option<f64>,
    pub r_neg: Option<f64>,
    pub e_xi: Option<f64>,
    pub mae: f64,
    pub f_max: f64,
    pub s_alpha: f64,
}

impl AblationRow {
    fn new(suite: AblationSuite, variant: &str, config: &RunConfig, test: RankCriterion, r: &EvalReport) -> Self {
        Self {
            suite: suite.name().into(),
            variant: variant.into(),
            group_size: config.group_size,
            train_criterion: config.train_criterion().name().into(),
            test_criterion: test.name().into(),
            miou_bar: r.miou_bar,
            miou: r.miou,
            r_neg: r.r_neg,
            e_xi: r.e_xi,
            mae: r.mae,
            f_max: r.f_max,
            s_alpha: r.s_alpha,
        }
    }

    pub fn write_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| GresError::Config(format!("{}: {e}", path.display())))?;
        for row in rows {
            w.serialize(row).map_err(|e| GresError::Config(e.to_string()))?;
        }
        w.flush().map_err(|e| GresError::io(path, e))
    }
}

fn run_one(
    config: &RunConfig,
    vocab: &Vocab,
    train_groups: &[GroupSample],
    test_groups: &[GroupSample],
    test_criteria: &[RankCriterion],
) -> Result<Vec<(RankCriterion, EvalReport)>> {
    let model = train(config, vocab.clone(), train_groups, &mut |_| {})?;
    test_criteria
        .iter()
        .map(|&c| Ok((c, evaluate(&model, test_groups, c, config.seed)?)))
        .collect()
}

/// Trains and evaluates every variant of `suite`, starting from `base`.
///
/// The group-size suite regroups both splits; every cell keeps the base
/// `batch_groups`, so smaller groups mean more, smaller updates per epoch.
pub fn ablate(
    base: &RunConfig,
    suite: AblationSuite,
    vocab: &Vocab,
    train_groups: &[GroupSample],
    test_groups: &[GroupSample],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    match suite {
        AblationSuite::Main => {
            let variants: [(&str, fn(&mut RunConfig)); 5] = [
                ("full", |_| {}),
                ("without_tqm", |c| c.use_tqm = false),
                ("without_hierarchizer", |c| c.use_hierarchizer = false),
                ("without_mirror", |c| c.use_mirror = false),
                ("without_triloss", |c| c.use_triplet = false),
            ];
            for (name, edit) in variants {
                let mut config = base.clone();
                edit(&mut config);
                info!("ablation {suite}/{name}");
                let test = config.test_criterion();
                for (c, r) in run_one(&config, vocab, train_groups, test_groups, &[test])? {
                    rows.push(AblationRow::new(suite, name, &config, c, &r));
                }
            }
        }
        AblationSuite::RankCriteria => {
            for train_c in RankCriterion::ALL {
                let mut config = base.clone();
                config.use_hierarchizer = true;
                config.rank_criterion = train_c;
                info!("ablation {suite}/{train_c}");
                for (c, r) in run_one(&config, vocab, train_groups, test_groups, &RankCriterion::ALL)? {
                    rows.push(AblationRow::new(suite, &format!("train_{train_c}"), &config, c, &r));
                }
            }
        }
        AblationSuite::GroupSize => {
            for &n in &base.group_sizes {
                let mut config = base.clone();
                config.group_size = n;
                let tr = regroup_samples(train_groups, n)?;
                let te = regroup_samples(test_groups, n)?;
                if tr.is_empty() || te.is_empty() {
                    return Err(GresError::Dataset(format!("regrouping to N={n} left no groups")));
                }
                info!("ablation {suite}/N={n}: {} train groups, batch {}", tr.len(), config.batch_groups);
                let test = config.test_criterion();
                for (c, r) in run_one(&config, vocab, &tr, &te, &[test])? {
                    rows.push(AblationRow::new(suite, &format!("N={n}"), &config, c, &r));
                }
            }
        }
    }
    Ok(rows)
}
