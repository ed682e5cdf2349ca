//! File-based pipeline: each stage reads its inputs from `out_dir`, writes its
//! declared outputs there, and nothing else.
//!
//! | stage         | reads                                            | writes |
//! |---------------|--------------------------------------------------|--------|
//! | `pretrain`    | data                                             | pretrained |
//! | `personalize` | pretrained, data                                 | personalized, fisher |
//! | `commit`      | personalized, fisher                             | com_p, com_h, openings |
//! | `mask`        | pretrained, data                                 | mask |
//! | `unlearn`     | personalized, fisher, mask                       | masked, unlearned |
//! | `prove`       | personalized, unlearned, fisher, mask, com_p, com_h, openings | proof, com_p_post (+ proof_json) |
//! | `verify`      | com_p, com_p_post, com_h, mask, proof            | nothing |
//! | `eval`        | personalized, masked, unlearned, data            | report.txt, report.csv |
//!
//! Exit status: 0 success or accept, 1 operational error, 2 verification reject.

mod config;
mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{
    DataConfig, DataSource, DampingRule, ModelConfig, ObsConfig, PathsConfig, PersonalizationConfig, ProtocolConfig,
    RunConfig, ScopeName, UnlearningConfig,
};
pub use report::{Report, ReportRow, ROW_LABELS};

use crate::error::{Error, Result};
use crate::nn::{evaluate, load_dataset, personalize, synthetic_digits, Dataset, Model, TrainConfig};
use crate::obs::{fisher_blocks, unlearn_update, FisherBlocks, UpdateVector};
use crate::protocol::{self, Commitment, Openings, Proof, PublicParams, Reject, Witness};
use crate::unlearn::{apply_mask, importance, score, select_mask, LayerScores, PruneMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Pretrain,
    Personalize,
    Mask,
    Unlearn,
    Commit,
    Prove,
    Verify,
    Eval,
    Pipeline,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Personalize => "personalize",
            Stage::Mask => "mask",
            Stage::Unlearn => "unlearn",
            Stage::Commit => "commit",
            Stage::Prove => "prove",
            Stage::Verify => "verify",
            Stage::Eval => "eval",
            Stage::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "edge-unlearn", version, about = "Verifiable approximate unlearning pipeline")]
pub struct Args {
    #[arg(value_enum)]
    pub stage: Stage,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set obs.block_size=16`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shorthand for `--set out_dir=PATH`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Shorthand for `--set protocol.backend=NAME`.
    #[arg(long)]
    pub backend: Option<String>,
    /// Also write the JSON rendering of the proof (`prove`, `pipeline`).
    #[arg(long)]
    pub json: bool,
}

/// Result of a stage that ran to completion.
#[derive(Debug)]
pub enum Outcome {
    Done { written: Vec<PathBuf>, notes: Vec<String> },
    Rejected(Reject),
}

/// A failure tagged with the stage it happened in.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for StageError {}

/// Default configuration: the desk-scale digit experiment.
pub fn default_config() -> RunConfig {
    RunConfig::from_toml("seed = 1\n[model]\ndims = [784, 256, 128, 10]\n").expect("built-in config is valid")
}

pub fn resolve_config(args: &Args) -> Result<RunConfig> {
    let base = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => default_config(),
    };
    let mut sets = args.sets.clone();
    if let Some(s) = args.seed {
        sets.push(format!("seed={s}"));
    }
    if let Some(d) = &args.out_dir {
        sets.push(format!("out_dir={}", toml::Value::String(d.display().to_string())));
    }
    if let Some(b) = &args.backend {
        sets.push(format!("protocol.backend={}", toml::Value::String(b.clone())));
    }
    base.with_overrides(&sets)
}

/// Parses arguments, runs the stage, prints a summary and returns the exit status.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let cfg = match resolve_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: config: {e}");
            return 1;
        }
    };
    match run(args.stage, &cfg, args.json) {
        Ok(Outcome::Done { written, notes }) => {
            for n in notes {
                println!("{n}");
            }
            for w in written {
                println!("wrote {}", w.display());
            }
            0
        }
        Ok(Outcome::Rejected(r)) => {
            println!("REJECT: {r}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(stage: Stage, cfg: &RunConfig, json: bool) -> std::result::Result<Outcome, StageError> {
    let tag = |stage: Stage| move |error: Error| StageError { stage, error };
    if stage != Stage::Pipeline {
        fs::create_dir_all(&cfg.out_dir).map_err(|e| tag(stage)(Error::io(&cfg.out_dir, e)))?;
    }
    let mut notes = Vec::new();
    let written = match stage {
        Stage::Pretrain => pretrain(cfg, &mut notes),
        Stage::Personalize => personalize_stage(cfg, &mut notes),
        Stage::Mask => mask_stage(cfg, &mut notes),
        Stage::Unlearn => unlearn_stage(cfg),
        Stage::Commit => commit_stage(cfg),
        Stage::Prove => prove_stage(cfg, json),
        Stage::Verify => {
            return match verify_stage(cfg).map_err(tag(stage))? {
                Ok(()) => Ok(Outcome::Done {
                    written: Vec::new(),
                    notes: vec![format!("ACCEPT ({} backend)", cfg.protocol.backend)],
                }),
                Err(r) => Ok(Outcome::Rejected(r)),
            }
        }
        Stage::Eval => eval_stage(cfg, &mut notes),
        Stage::Pipeline => {
            let mut all = Vec::new();
            for s in [
                Stage::Pretrain,
                Stage::Personalize,
                Stage::Commit,
                Stage::Mask,
                Stage::Unlearn,
                Stage::Prove,
                Stage::Verify,
                Stage::Eval,
            ] {
                match run(s, cfg, json)? {
                    Outcome::Done { written, notes: n } => {
                        all.extend(written);
                        notes.extend(n.into_iter().map(|n| format!("[{}] {n}", s.name())));
                    }
                    rejected => return Ok(rejected),
                }
            }
            return Ok(Outcome::Done { written: all, notes });
        }
    }
    .map_err(tag(stage))?;
    Ok(Outcome::Done { written, notes })
}

fn params(cfg: &RunConfig) -> Result<PublicParams> {
    PublicParams::new(cfg.architecture()?, cfg.obs.block_size, cfg.protocol.repetitions)
}

fn all_layers(cfg: &RunConfig) -> Vec<usize> {
    (0..cfg.model.dims.len() - 1).collect()
}

fn sub_seed(cfg: &RunConfig, k: u64) -> u64 {
    cfg.seed.wrapping_add(k)
}

/// Training and evaluation sets, either generated or loaded.
fn base_sets(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    match cfg.data_format() {
        None => Ok((synthetic_digits(d.train_samples, sub_seed(cfg, 0)), synthetic_digits(d.test_samples, sub_seed(cfg, 1)))),
        Some(f) => Ok((
            load_dataset(d.train.as_ref().unwrap(), f, d.num_classes)?,
            load_dataset(d.test.as_ref().unwrap(), f, d.num_classes)?,
        )),
    }
}

/// Fresh draw of `n` samples: generated for synthetic data, a seeded
/// subsample of the given set otherwise.
fn draw(cfg: &RunConfig, from: &Dataset, n: usize, k: u64) -> Dataset {
    match cfg.data_format() {
        None => synthetic_digits(n, sub_seed(cfg, k)),
        Some(_) => from.subsample(n, &mut ChaCha8Rng::seed_from_u64(sub_seed(cfg, k))),
    }
}

fn forget_classes(cfg: &RunConfig) -> [usize; 1] {
    [cfg.data.forget_class]
}

/// Pixel-inverted samples of every class except the forget class.
fn personal_train(cfg: &RunConfig) -> Result<Dataset> {
    let (train, _) = base_sets(cfg)?;
    Ok(draw(cfg, &train, cfg.personalization.samples, 2)
        .exclude_classes(&forget_classes(cfg))
        .inverted())
}

fn personal_test(cfg: &RunConfig) -> Result<Dataset> {
    let (_, test) = base_sets(cfg)?;
    Ok(draw(cfg, &test, cfg.data.test_samples, 3)
        .exclude_classes(&forget_classes(cfg))
        .inverted())
}

fn pretrain(cfg: &RunConfig, notes: &mut Vec<String>) -> Result<Vec<PathBuf>> {
    let (train, test) = base_sets(cfg)?;
    let init = Model::random(cfg.architecture()?, &mut ChaCha8Rng::seed_from_u64(sub_seed(cfg, 6)));
    let (m, losses) = personalize(
        &init,
        &train,
        &TrainConfig {
            epochs: cfg.model.pretrain_epochs,
            lr: cfg.model.pretrain_lr,
            trainable_layers: all_layers(cfg),
            seed: sub_seed(cfg, 0),
        },
    )?;
    notes.push(format!("epoch losses {:?}", losses.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>()));
    notes.push(format!("test accuracy {:.4}", evaluate(&m, &test, None)?));
    let out = cfg.path(&cfg.paths.pretrained);
    m.save(&out)?;
    Ok(vec![out])
}

fn personalize_stage(cfg: &RunConfig, notes: &mut Vec<String>) -> Result<Vec<PathBuf>> {
    let pre = Model::load(&cfg.path(&cfg.paths.pretrained))?;
    let data = personal_train(cfg)?;
    let (m, losses) = personalize(
        &pre,
        &data,
        &TrainConfig {
            epochs: cfg.personalization.epochs,
            lr: cfg.personalization.lr,
            trainable_layers: cfg.personalization.trainable_layers.clone(),
            seed: sub_seed(cfg, 1),
        },
    )?;
    notes.push(format!("epoch losses {:?}", losses.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>()));
    let p = params(cfg)?;
    let fb = fisher_blocks(&m, &data, p.partition(), cfg.damping()?)?;
    let (mp, fp) = (cfg.path(&cfg.paths.personalized), cfg.path(&cfg.paths.fisher));
    m.save(&mp)?;
    fb.save(&fp)?;
    Ok(vec![mp, fp])
}

fn mask_stage(cfg: &RunConfig, notes: &mut Vec<String>) -> Result<Vec<PathBuf>> {
    let pre = Model::load(&cfg.path(&cfg.paths.pretrained))?;
    let (train, _) = base_sets(cfg)?;
    let pool = draw(cfg, &train, cfg.unlearning.samples, 4);
    let forget = pool.filter_classes(&forget_classes(cfg));
    let retain = pool.exclude_classes(&forget_classes(cfg));
    let mut scores = Vec::new();
    for &layer in &cfg.unlearning.target_layers {
        let s = score(&importance(&pre, &forget, layer)?, &importance(&pre, &retain, layer)?, cfg.unlearning.epsilon)?;
        scores.push(LayerScores { layer, scores: s });
    }
    let arch = cfg.architecture()?;
    let mask = select_mask(&arch, &scores, cfg.scope(), cfg.unlearning.fraction, cfg.unlearning.epsilon)?;
    notes.push(format!(
        "{} neurons, {} coordinates ({:.4} of the touched layers)",
        mask.neurons().len(),
        mask.coords().len(),
        mask.parameter_fraction(&arch)
    ));
    let out = cfg.path(&cfg.paths.mask);
    mask.save(&out)?;
    Ok(vec![out])
}

fn unlearn_stage(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let m = Model::load(&cfg.path(&cfg.paths.personalized))?;
    let fb = FisherBlocks::load(&cfg.path(&cfg.paths.fisher))?;
    let mask = PruneMask::load(&cfg.path(&cfg.paths.mask))?;
    let masked = apply_mask(&m, &mask)?;
    let (adjusted, _) = unlearn_update(&m, &fb, &mask)?;
    let (a, b) = (cfg.path(&cfg.paths.masked), cfg.path(&cfg.paths.unlearned));
    masked.save(&a)?;
    adjusted.save(&b)?;
    Ok(vec![a, b])
}

fn commit_stage(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let m = Model::load(&cfg.path(&cfg.paths.personalized))?;
    let fb = FisherBlocks::load(&cfg.path(&cfg.paths.fisher))?;
    let (com_p, com_h, openings) = protocol::client_setup(&params(cfg)?, &m, &fb, cfg.backend()?, cfg.seed)?;
    let paths = [&cfg.paths.com_p, &cfg.paths.com_h, &cfg.paths.openings].map(|p| cfg.path(p));
    com_p.save(&paths[0])?;
    com_h.save(&paths[1])?;
    openings.save(&paths[2])?;
    Ok(paths.to_vec())
}

fn prove_stage(cfg: &RunConfig, json: bool) -> Result<Vec<PathBuf>> {
    let pre = Model::load(&cfg.path(&cfg.paths.personalized))?;
    let post = Model::load(&cfg.path(&cfg.paths.unlearned))?;
    let fb = FisherBlocks::load(&cfg.path(&cfg.paths.fisher))?;
    let mask = PruneMask::load(&cfg.path(&cfg.paths.mask))?;
    let com_p = Commitment::load(&cfg.path(&cfg.paths.com_p))?;
    let com_h = Commitment::load(&cfg.path(&cfg.paths.com_h))?;
    let openings = Openings::load(&cfg.path(&cfg.paths.openings))?;
    let p = params(cfg)?;
    let delta = UpdateVector::from_models(&pre, &post, p.partition(), &mask)?;
    let witness = Witness {
        pre: &pre,
        post: &post,
        delta: &delta,
        fisher: &fb,
        openings: &openings,
    };
    let (proof, com_p_post) = protocol::prove(&p, &com_p, &com_h, &mask, &witness)?;
    let (pp, cp) = (cfg.path(&cfg.paths.proof), cfg.path(&cfg.paths.com_p_post));
    proof.save(&pp)?;
    com_p_post.save(&cp)?;
    let mut out = vec![pp, cp];
    if json {
        let jp = cfg.path(&cfg.paths.proof_json);
        let text = serde_json::to_string_pretty(&proof.to_json()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        fs::write(&jp, text + "\n").map_err(|e| Error::io(&jp, e))?;
        out.push(jp);
    }
    Ok(out)
}

fn verify_stage(cfg: &RunConfig) -> Result<std::result::Result<(), Reject>> {
    let com_p = Commitment::load(&cfg.path(&cfg.paths.com_p))?;
    let com_p_post = Commitment::load(&cfg.path(&cfg.paths.com_p_post))?;
    let com_h = Commitment::load(&cfg.path(&cfg.paths.com_h))?;
    let mask = PruneMask::load(&cfg.path(&cfg.paths.mask))?;
    let proof = Proof::load(&cfg.path(&cfg.paths.proof))?;
    Ok(protocol::verify(&params(cfg)?, &com_p, &com_p_post, &com_h, &mask, &proof))
}

/// Report over the three model files currently on disk.
pub fn evaluate_models(cfg: &RunConfig, baseline: &Path, masked: &Path, adjusted: &Path) -> Result<Report> {
    let (_, test) = base_sets(cfg)?;
    let personal = personal_test(cfg)?;
    let forget = forget_classes(cfg);
    let mut rows = Vec::new();
    for (label, path) in ROW_LABELS.into_iter().zip([baseline, masked, adjusted]) {
        let m = Model::load(path)?;
        rows.push(ReportRow {
            label,
            forget_accuracy: evaluate(&m, &test, Some(&forget))?,
            personal_accuracy: evaluate(&m, &personal, None)?,
        });
    }
    Ok(Report {
        forget_class: cfg.data.forget_class,
        rows,
    })
}

fn eval_stage(cfg: &RunConfig, notes: &mut Vec<String>) -> Result<Vec<PathBuf>> {
    let report = evaluate_models(
        cfg,
        &cfg.path(&cfg.paths.personalized),
        &cfg.path(&cfg.paths.masked),
        &cfg.path(&cfg.paths.unlearned),
    )?;
    let (txt, csv) = cfg.report_paths();
    report.write(&txt, &csv)?;
    notes.extend(report.to_text().lines().map(String::from));
    Ok(vec![txt, csv])
}
