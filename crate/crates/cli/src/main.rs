//! `gres`: generate synthetic data, train, evaluate and run ablations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use gres_core::dataset::{load_split, validate_manifest, write_corpus, MANIFEST_FILE};
use gres_core::trainer::{
    ablate, evaluate, infer_group, synthetic_splits, train, AblationRow, AblationSuite, Checkpoint, StepLog,
};
use gres_core::{viz, DatasetManifest, GroupSample, RankCriterion, RunConfig, Vocab};

#[derive(Parser, Debug)]
#[command(name = "gres", version, about = "Group-wise referring expression segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SeedArg {
    /// Overrides the config seed.
    #[arg(long, env = "GRES_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic corpus as DIR/train and DIR/test.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train on a dataset and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// A split directory, or a corpus directory containing `train/`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-step loss log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Evaluate a checkpoint and write a JSON metric report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// A split directory, or a corpus directory containing `test/`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Ranking criterion at test time; defaults to the checkpoint's.
        #[arg(long)]
        rank_criterion: Option<RankCriterion>,
        /// Write N+1 heatmap PNGs per image next to the report.
        #[arg(long)]
        dump_heatmaps: bool,
        /// Write the emitted masks next to the report.
        #[arg(long)]
        dump_masks: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train and evaluate every cell of an ablation suite; writes CSV.
    Ablate {
        #[arg(long)]
        suite: AblationSuite,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus directory containing `train/` and `test/`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Check a manifest; exits nonzero when any violation is found.
    Validate {
        #[arg(long)]
        data: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: &SeedArg) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed.seed {
        config.seed = s;
    }
    Ok(config)
}

/// `dir` itself when it holds a manifest, else `dir/split`.
fn split_dir(dir: &Path, split: &str) -> Result<PathBuf> {
    if dir.join(MANIFEST_FILE).is_file() {
        return Ok(dir.to_path_buf());
    }
    let nested = dir.join(split);
    if nested.join(MANIFEST_FILE).is_file() {
        return Ok(nested);
    }
    bail!(
        "no {MANIFEST_FILE} in {} or {}",
        dir.display(),
        nested.display()
    )
}

fn load_checked(dir: &Path) -> Result<(DatasetManifest, Vec<GroupSample>)> {
    let manifest = gres_core::dataset::load_manifest(&dir.join(MANIFEST_FILE))?;
    let report = validate_manifest(&manifest, dir);
    if let Some(v) = report.violations.first() {
        bail!(
            "{} has {} manifest violation(s); first: {} {}: {}",
            dir.display(),
            report.violations.len(),
            v.group_id,
            v.kind,
            v.detail
        );
    }
    Ok(load_split(dir)?)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let config = load_config(config.as_deref(), &seed)?;
            let (train_split, test_split) = synthetic_splits(&config)?;
            write_corpus(&train_split, &out.join("train"))?;
            write_corpus(&test_split, &out.join("test"))?;
            info!(
                "wrote {} train and {} test groups to {}",
                train_split.groups.len(),
                test_split.groups.len(),
                out.display()
            );
        }
        Command::Train {
            config,
            data,
            out,
            log,
            seed,
        } => {
            let config = load_config(config.as_deref(), &seed)?;
            let (manifest, groups) = load_checked(&split_dir(&data, "train")?)?;
            if manifest.group_size != config.group_size {
                bail!(
                    "dataset N is {} but config N is {}",
                    manifest.group_size,
                    config.group_size
                );
            }
            let mut writer = match &log {
                Some(p) => {
                    ensure_parent(p)?;
                    Some(csv::Writer::from_path(p).with_context(|| format!("opening {}", p.display()))?)
                }
                None => None,
            };
            let mut log_err = None;
            let model = train(&config, Vocab::from(manifest.vocab), &groups, &mut |row: &StepLog| {
                if let Some(w) = writer.as_mut() {
                    if let Err(e) = w.serialize(row) {
                        log_err.get_or_insert(e);
                    }
                }
            })?;
            if let Some(e) = log_err {
                return Err(e.into());
            }
            if let Some(w) = writer.as_mut() {
                w.flush()?;
            }
            ensure_parent(&out)?;
            Checkpoint::of(&config, &model, config.epochs).save(&out)?;
            info!("checkpoint written to {}", out.display());
        }
        Command::Eval {
            ckpt,
            data,
            report,
            rank_criterion,
            dump_heatmaps,
            dump_masks,
            seed,
        } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let run_seed = seed.seed.unwrap_or(checkpoint.config.seed);
            let criterion = rank_criterion.unwrap_or_else(|| checkpoint.config.test_criterion());
            let model = checkpoint.into_model()?;
            let (manifest, groups) = load_checked(&split_dir(&data, "test")?)?;
            if manifest.group_size != model.config.group_size {
                bail!(
                    "dataset N is {} but the checkpoint was trained with N = {}",
                    manifest.group_size,
                    model.config.group_size
                );
            }
            let result = evaluate(&model, &groups, criterion, run_seed)?;
            write_json(&result, &report)?;
            if dump_heatmaps || dump_masks {
                let base = report.with_extension("");
                for group in &groups {
                    let outputs = infer_group(&model, group, criterion, run_seed)?;
                    if dump_heatmaps {
                        viz::dump_heatmaps(group, &outputs, &base.with_file_name(file_name(&base, "heatmaps")))?;
                    }
                    if dump_masks {
                        viz::dump_masks(group, &outputs, &base.with_file_name(file_name(&base, "masks")))?;
                    }
                }
            }
            println!(
                "miou_bar={:.4} miou={} r_neg={} f_max={:.4}",
                result.miou_bar,
                fmt_opt(result.miou),
                fmt_opt(result.r_neg),
                result.f_max
            );
        }
        Command::Ablate {
            suite,
            config,
            data,
            report,
            seed,
        } => {
            let config = load_config(config.as_deref(), &seed)?;
            let (train_manifest, train_groups) = load_checked(&split_dir(&data.join("train"), "train")?)?;
            let (_, test_groups) = load_checked(&split_dir(&data.join("test"), "test")?)?;
            let vocab = Vocab::from(train_manifest.vocab);
            let rows = ablate(&config, suite, &vocab, &train_groups, &test_groups)?;
            ensure_parent(&report)?;
            AblationRow::write_csv(&rows, &report)?;
            for r in &rows {
                println!(
                    "{} N={} {}/{}: miou_bar={:.4} e_xi={} r_neg={}",
                    r.variant,
                    r.group_size,
                    r.train_criterion,
                    r.test_criterion,
                    r.miou_bar,
                    fmt_opt(r.e_xi),
                    fmt_opt(r.r_neg)
                );
            }
        }
        Command::Validate { data } => {
            let dir = split_dir(&data, "train")?;
            let manifest = gres_core::dataset::load_manifest(&dir.join(MANIFEST_FILE))?;
            let report = validate_manifest(&manifest, &dir);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.is_clean() {
                bail!("{} violation(s)", report.violations.len());
            }
        }
    }
    Ok(())
}

fn file_name(base: &Path, suffix: &str) -> String {
    let stem = base.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{stem}_{suffix}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("null".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
