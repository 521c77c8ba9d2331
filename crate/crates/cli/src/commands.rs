use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use qdren::data::synth::{
    default_entities, default_locations, gen_entity_cloze, gen_single_fact, ClozeSpec,
    GENERATOR_VERSION,
};
use qdren::data::vocab::PAD;
use qdren::data::{babi, windowize, Dataset, RawStory, Story};
use qdren::gradcheck::{self, GradCheckReport};
use qdren::model::{self, load_checkpoint, save_checkpoint, Checkpoint};
use qdren::training::{self, SearchSpace};
use qdren::{Activation, InputStyle, Mode, ModelConfig, Slot};
use serde::Serialize;

use crate::config::{RunConfig, RunFlags};
use crate::{write_file, CliError};

const SPLITS: [&str; 3] = ["train", "valid", "test"];

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn read_stories(path: &Path) -> Result<Vec<RawStory>, CliError> {
    let file = File::open(path).map_err(|e| input_err(path, e))?;
    babi::parse_babi(BufReader::new(file)).map_err(|e| input_err(path, e))
}

/// `data` is either a story file or a directory holding `<split>.txt`.
fn split_path(data: &Path, split: &str) -> PathBuf {
    if data.is_dir() {
        data.join(format!("{split}.txt"))
    } else {
        data.to_path_buf()
    }
}

fn load_dataset(dir: &Path, max_vocab: usize) -> Result<Dataset, CliError> {
    let [train, valid, test] = SPLITS.map(|s| read_stories(&dir.join(format!("{s}.txt"))));
    let (train, valid, test) = (train?, valid?, test?);
    if train.is_empty() || valid.is_empty() {
        return Err(CliError::Input(format!(
            "{}: train and valid splits must be non-empty",
            dir.display()
        )));
    }
    Ok(Dataset::from_raw(&train, &valid, &test, max_vocab)?)
}

/// Encodes stories with a checkpoint's vocabulary and input style.
fn encode_for(ckpt: &Checkpoint, raw: &[RawStory]) -> Result<Vec<Story>, CliError> {
    let vocab = ckpt
        .vocab
        .as_ref()
        .ok_or_else(|| CliError::Input("checkpoint carries no vocabulary".into()))?;
    raw.iter()
        .map(|s| {
            let story = vocab.encode_story(s)?;
            Ok(match ckpt.config.input_style {
                InputStyle::Sentences => story,
                InputStyle::Windows(b) => windowize(&story, vocab, b)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    SingleFact,
    EntityCloze,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    task: Task,
    /// Training stories.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    valid: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Entity pool size (default 5 for single-fact, 10 for entity-cloze).
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long, default_value_t = 6)]
    locations: usize,
    /// Facts per single-fact story.
    #[arg(long, default_value_t = 6)]
    story_len: usize,
    #[arg(long)]
    entities_per_story: Option<usize>,
    /// Facts per cloze story.
    #[arg(long)]
    facts: Option<usize>,
    #[arg(long)]
    relations: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing files.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Serialize)]
struct GenRecord {
    task: Task,
    seed: u64,
    split_seeds: [u64; 3],
    sizes: [usize; 3],
    generator_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    single_fact: Option<SingleFactSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    entity_cloze: Option<ClozeSpec>,
}

#[derive(Debug, Serialize)]
struct SingleFactSpec {
    entities: usize,
    locations: usize,
    story_len: usize,
}

/// Seed of split `k`; distinct for every `(seed, k)`.
fn split_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(3).wrapping_add(k as u64)
}

pub fn gen(a: GenArgs) -> Result<(), CliError> {
    let mut targets: Vec<PathBuf> = SPLITS.iter().map(|s| a.out.join(format!("{s}.txt"))).collect();
    targets.push(a.out.join("gen.json"));
    if !a.force {
        if let Some(p) = targets.iter().find(|p| p.exists()) {
            return Err(CliError::Input(format!(
                "refusing to overwrite {} (pass --force)",
                p.display()
            )));
        }
    }
    let sizes = [a.n, a.valid, a.test];
    let split_seeds = [0, 1, 2].map(|k| split_seed(a.seed, k));
    let mut record = GenRecord {
        task: a.task,
        seed: a.seed,
        split_seeds,
        sizes,
        generator_version: GENERATOR_VERSION,
        single_fact: None,
        entity_cloze: None,
    };
    let splits: Vec<Vec<RawStory>> = match a.task {
        Task::SingleFact => {
            let spec = SingleFactSpec {
                entities: a.entities.unwrap_or(5),
                locations: a.locations,
                story_len: a.story_len,
            };
            let (ents, locs) = (default_entities(spec.entities), default_locations(spec.locations));
            let out = (0..3)
                .map(|k| gen_single_fact(split_seeds[k], sizes[k], &ents, &locs, spec.story_len))
                .collect::<qdren::Result<_>>()?;
            record.single_fact = Some(spec);
            out
        }
        Task::EntityCloze => {
            let mut spec = ClozeSpec::new(0, a.entities.unwrap_or(10));
            if let Some(k) = a.entities_per_story {
                spec.entities_per_story = k;
            }
            if let Some(f) = a.facts {
                spec.n_facts = f;
            }
            if let Some(r) = a.relations {
                spec.n_relations = r;
            }
            let out = (0..3)
                .map(|k| {
                    let s = ClozeSpec {
                        n_stories: sizes[k],
                        ..spec.clone()
                    };
                    gen_entity_cloze(split_seeds[k], &s)
                })
                .collect::<qdren::Result<_>>()?;
            record.entity_cloze = Some(spec);
            out
        }
    };
    let task = serde_json::to_value(a.task).map_err(|e| CliError::Input(e.to_string()))?;
    for (k, stories) in splits.iter().enumerate() {
        let header = format!(
            "# qdren gen task={} split={} seed={} split_seed={} generator_version={GENERATOR_VERSION}\n",
            task.as_str().unwrap_or_default(),
            SPLITS[k],
            a.seed,
            split_seeds[k],
        );
        write_file(&targets[k], &(header + &babi::serialize_babi(stories)))?;
    }
    let json = serde_json::to_string_pretty(&record).map_err(|e| CliError::Input(e.to_string()))?;
    write_file(&targets[3], &(json + "\n"))?;
    println!(
        "wrote {} / {} / {} stories to {}",
        sizes[0],
        sizes[1],
        sizes[2],
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&a.run)?;
    let out = cfg.out_dir()?.to_path_buf();
    let data = load_dataset(cfg.data_dir()?, cfg.max_vocab)?;
    let mut model = cfg.model();
    let prepared = training::prepare(&data, &mut model)?;
    cfg.write_beside(&out)?;
    let (params, report) = training::train(&model, &prepared, cfg.patience())?;
    save_checkpoint(&params, &model, Some(&prepared.vocab), &out.join("best"))?;
    write_file(&out.join("report.csv"), &report.to_csv())?;
    println!(
        "best epoch {} of {} ({:?}), valid accuracy {:.4}",
        report.best_epoch,
        report.epochs.len(),
        report.stop,
        report.best_val_acc
    );
    if !prepared.test.is_empty() {
        let m = training::evaluate(&params, &model, &prepared.test)?;
        println!("test accuracy {:.4} error {:.4} (n={})", m.accuracy, m.error, m.n);
    }
    println!("checkpoint {}", out.join("best").display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint base path (`<base>.manifest.json` / `<base>.weights.bin`).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Story file, or a directory holding `<split>.txt`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Write per-story predictions as CSV.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let raw = read_stories(&split_path(&a.data, &a.split))?;
    let stories = encode_for(&ckpt, &raw)?;
    let m = training::evaluate(&ckpt.params, &ckpt.config, &stories)?;
    println!(
        "accuracy {:.4} error {:.4} loss {:.4} (n={})",
        m.accuracy, m.error, m.loss, m.n
    );
    if let Some(path) = a.predictions {
        let vocab = ckpt.vocab.as_ref().expect("checked by encode_for");
        let preds = training::predictions(&ckpt.params, &ckpt.config, &stories)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::Input(e.to_string());
        w.write_record(["index", "predicted", "answer", "correct", "loss"])
            .map_err(csv_err)?;
        for (i, ((p, loss), s)) in preds.iter().zip(&stories).enumerate() {
            w.write_record([
                i.to_string(),
                vocab.token(*p).to_string(),
                vocab.token(s.answer).to_string(),
                u8::from(*p == s.answer).to_string(),
                loss.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
        write_file(&path, &String::from_utf8_lossy(&bytes))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct GatesArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Story file, or a directory holding `<split>.txt`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Index of the story within the file.
    #[arg(long, default_value_t = 0)]
    story: usize,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn gates(a: GatesArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let path = split_path(&a.data, &a.split);
    let raw = read_stories(&path)?;
    let one = raw.get(a.story).ok_or_else(|| {
        CliError::Input(format!(
            "{}: story {} out of range ({} stories)",
            path.display(),
            a.story,
            raw.len()
        ))
    })?;
    let story = encode_for(&ckpt, std::slice::from_ref(one))?.remove(0);
    let vocab = ckpt.vocab.as_ref().expect("checked by encode_for");
    let trace = model::forward(&ckpt.params, &story, &ckpt.config)?.trace;
    let label = |step: usize| {
        let ids: Vec<usize> = story.sentences[step].iter().copied().filter(|&t| t != PAD).collect();
        vocab.decode(&ids).join(" ")
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Input(e.to_string());
    w.write_record(["block", "step", "sentence", "gate"]).map_err(csv_err)?;
    for block in 0..trace.blocks() {
        for step in 0..trace.steps() {
            w.write_record([
                block.to_string(),
                step.to_string(),
                label(step),
                trace.get(block, step).to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    match a.out {
        Some(p) => write_file(&p, &String::from_utf8_lossy(&bytes)),
        None => io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::Input(e.to_string())),
    }
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check one mode only (both by default).
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value = "prelu")]
    phi: Activation,
    /// Window width; whole sentences when absent.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturbs the analytic gradient of one parameter (self-test of the checker).
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    if a.dim > gradcheck::MAX_DIM || a.blocks > gradcheck::MAX_BLOCKS {
        return Err(CliError::Usage(format!(
            "gradient check needs --dim <= {} and --blocks <= {}",
            gradcheck::MAX_DIM,
            gradcheck::MAX_BLOCKS
        )));
    }
    let corrupt = match &a.corrupt {
        Some(name) => Some(
            Slot::from_name(name)
                .ok_or_else(|| CliError::Usage(format!("unknown parameter {name:?}")))?,
        ),
        None => None,
    };
    let style = match a.window {
        Some(b) => InputStyle::Windows(b),
        None => InputStyle::Sentences,
    };
    let modes = match a.mode {
        Some(m) => vec![m],
        None => vec![Mode::Ren, Mode::Qdren],
    };
    let mut failure: Option<String> = None;
    for mode in modes {
        let fx = gradcheck::fixture(mode, a.phi, style, a.dim, a.blocks, a.seed)?;
        let report = gradcheck::check_model_with(
            &fx.params,
            &fx.stories,
            &fx.config,
            gradcheck::FIXTURE_EPS,
            |grads| {
                if let Some(slot) = corrupt {
                    grads[slot.index()].data_mut()[0] += 0.05;
                }
            },
        )?;
        print_report(mode, &report);
        if report.max_rel_error >= GRADCHECK_TOLERANCE && failure.is_none() {
            failure = Some(describe_failure(mode, &report));
        }
    }
    match failure {
        Some(msg) => Err(CliError::Check(msg)),
        None => {
            println!("gradient check passed (tolerance {GRADCHECK_TOLERANCE:e})");
            Ok(())
        }
    }
}

fn print_report(mode: Mode, r: &GradCheckReport) {
    let mode = mode.to_string();
    for (slot, err) in Slot::ALL.iter().zip(&r.per_param) {
        println!("{mode:<6} {:<14} {err:.3e}", slot.name());
    }
    println!("{mode:<6} {:<14} {:.3e}", "max", r.max_rel_error);
}

fn describe_failure(mode: Mode, r: &GradCheckReport) -> String {
    match &r.worst {
        Some(w) => format!(
            "gradient check failed for {mode}: {}[{}] analytic {:.6e} numeric {:.6e} (relative error {:.3e})",
            Slot::ALL[w.param].name(),
            w.index,
            w.analytic,
            w.numeric,
            r.max_rel_error
        ),
        None => format!("gradient check failed for {mode}: relative error {:.3e}", r.max_rel_error),
    }
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    budget: Option<usize>,
    /// Training stories used by each trial.
    #[arg(long)]
    subsample: Option<usize>,
    /// Search space as JSON; the story grid when absent.
    #[arg(long)]
    space: Option<PathBuf>,
}

pub fn search(a: SearchArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::resolve(&a.run)?;
    if let Some(b) = a.budget {
        cfg.budget = b;
    }
    if let Some(s) = a.subsample {
        cfg.train_subsample = s;
    }
    let space = match &a.space {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| input_err(p, e))?;
            serde_json::from_str::<SearchSpace>(&text).map_err(|e| input_err(p, e))?
        }
        None => SearchSpace::story_grid(),
    };
    let out = cfg.out_dir()?.to_path_buf();
    let data = load_dataset(cfg.data_dir()?, cfg.max_vocab)?;
    cfg.write_beside(&out)?;
    let trials = training::random_search(
        &space,
        &cfg.model(),
        &data,
        cfg.budget,
        cfg.train_subsample,
        cfg.patience(),
        cfg.seed,
    )?;
    let mut csv = String::from("rank,trial,val_acc,best_epoch,lr,blocks,l2,dropout,window,optimizer,batch_size,seed\n");
    for (rank, t) in trials.iter().enumerate() {
        let c = &t.config;
        csv += &format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            rank + 1,
            t.index,
            t.val_acc,
            t.best_epoch,
            c.lr,
            c.blocks,
            c.l2,
            c.dropout,
            c.input_style.window().map_or(String::new(), |b| b.to_string()),
            c.optimizer,
            c.batch_size,
            c.seed
        );
    }
    write_file(&out.join("trials.csv"), &csv)?;
    let json = serde_json::to_string_pretty(&trials).map_err(|e| CliError::Input(e.to_string()))?;
    write_file(&out.join("trials.json"), &(json + "\n"))?;
    for (rank, t) in trials.iter().take(5).enumerate() {
        println!(
            "{:>2}. trial {:<3} valid {:.4} lr {} blocks {} l2 {} dropout {}",
            rank + 1,
            t.index,
            t.val_acc,
            t.config.lr,
            t.config.blocks,
            t.config.l2,
            t.config.dropout
        );
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Comma-separated seeds (at least three).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

pub fn compare(a: CompareArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::resolve(&a.run)?;
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if cfg.seeds.len() < 3 {
        return Err(CliError::Usage("compare needs at least three seeds".into()));
    }
    let out = cfg.out_dir()?.to_path_buf();
    let data = load_dataset(cfg.data_dir()?, cfg.max_vocab)?;
    cfg.write_beside(&out)?;
    let shared: ModelConfig = cfg.model();
    let report = training::compare_modes(&data, &shared, &cfg.seeds, cfg.patience())?;
    write_file(&out.join("compare.csv"), &report.to_csv())?;
    for r in &report.rows {
        println!(
            "seed {:<4} ren {:.4} qdren {:.4} delta {:+.4}",
            r.seed, r.acc_a, r.acc_b, r.delta
        );
    }
    println!(
        "mean delta {:+.4}, qdren ahead on {}/{} seeds",
        report.mean_delta,
        report.wins_b(),
        report.rows.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for seed in 0..50 {
            for k in 0..3 {
                assert!(seen.insert(split_seed(seed, k)));
            }
        }
    }

    #[test]
    fn split_path_picks_file_in_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(split_path(dir.path(), "valid"), dir.path().join("valid.txt"));
        let f = dir.path().join("x.txt");
        std::fs::write(&f, "").unwrap();
        assert_eq!(split_path(&f, "valid"), f);
    }
}
