//! Mini-batch training with early stopping, evaluation, random search and
//! paired REN/QDREN comparisons.

use std::fmt::Write as _;
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Story, PAD, UNK};
use crate::error::{Error, Result};
use crate::memory::Mode;
use crate::model::{
    forward, init_params, loss_and_grad, predict_id, InputStyle, ModelConfig, ModelParams, Slot,
};
use crate::optim::{clip_gradients, global_norm, Optimizer, OptimizerKind};
use crate::rng::{self, streams};
use crate::tensor::cross_entropy;

pub const THREADS_ENV: &str = "QDREN_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub stop: StopReason,
}

impl TrainReport {
    /// `epoch,train_loss,val_loss,val_acc` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.val_acc);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub error: f64,
    /// Mean cross entropy, without the L2 term.
    pub loss: f64,
    pub n: usize,
}

fn eval_pool() -> Option<&'static rayon::ThreadPool> {
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let n: usize = std::env::var(THREADS_ENV).ok()?.parse().ok()?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().ok()
    })
    .as_ref()
}

/// Per-story predictions, in split order.
pub fn predictions(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    split: &[Story],
) -> Result<Vec<(usize, f64)>> {
    let run = || {
        split
            .par_iter()
            .map(|s| {
                let out = forward(params, s, config)?;
                let loss = f64::from(cross_entropy(&out.logits, s.target_index())?);
                Ok((predict_id(&out.logits, s), loss))
            })
            .collect::<Result<Vec<_>>>()
    };
    match eval_pool() {
        Some(pool) => pool.install(run),
        None => run(),
    }
}

/// Accuracy of argmax predictions (restricted to candidates when present).
pub fn evaluate(params: &ModelParams<f32>, config: &ModelConfig, split: &[Story]) -> Result<Metrics> {
    if split.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty split".into()));
    }
    let preds = predictions(params, config, split)?;
    let correct = preds
        .iter()
        .zip(split)
        .filter(|((p, _), s)| *p == s.answer)
        .count();
    let loss = preds.iter().map(|(_, l)| l).sum::<f64>() / split.len() as f64;
    let accuracy = correct as f64 / split.len() as f64;
    Ok(Metrics {
        accuracy,
        error: 1.0 - accuracy,
        loss,
        n: split.len(),
    })
}

/// Mean gate activation on sentences that share a token with the question
/// (`on`) against all other sentences (`off`), pooled over blocks and stories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateFocus {
    pub on: f64,
    pub off: f64,
    /// `on / off`.
    pub ratio: f64,
}

pub fn gate_focus(params: &ModelParams<f32>, config: &ModelConfig, stories: &[Story]) -> Result<GateFocus> {
    let (mut on, mut n_on, mut off, mut n_off) = (0f64, 0usize, 0f64, 0usize);
    for story in stories {
        let trace = forward(params, story, config)?.trace;
        let asked: Vec<usize> = story.question.iter().copied().filter(|&t| t != PAD && t != UNK).collect();
        for (t, sent) in story.sentences.iter().enumerate() {
            let hit = sent.iter().any(|w| asked.contains(w));
            for b in 0..trace.blocks() {
                let g = f64::from(trace.get(b, t));
                if hit {
                    on += g;
                    n_on += 1;
                } else {
                    off += g;
                    n_off += 1;
                }
            }
        }
    }
    if n_on == 0 || n_off == 0 {
        return Err(Error::Argument(
            "gate focus needs sentences both with and without question tokens".into(),
        ));
    }
    let (on, off) = (on / n_on as f64, off / n_off as f64);
    Ok(GateFocus {
        on,
        off,
        ratio: on / off,
    })
}

/// Windows the data when the config asks for it and fills the data-derived
/// config fields (vocabulary size, mask lengths).
pub fn prepare(data: &Dataset, config: &mut ModelConfig) -> Result<Dataset> {
    let prepared = match config.input_style {
        InputStyle::Sentences => data.clone(),
        InputStyle::Windows(b) => data.windowed(b)?,
    };
    config.vocab_size = prepared.vocab.len();
    match config.input_style {
        InputStyle::Sentences => {
            config.max_sentence_len = prepared.max_sentence_len();
            config.max_question_len = prepared.max_question_len();
        }
        InputStyle::Windows(b) => {
            config.max_sentence_len = b;
            config.max_question_len = b;
        }
    }
    config.validate()?;
    Ok(prepared)
}

/// Trains from a fresh initialisation and returns the parameters with the best
/// validation accuracy. Stops once `patience` epochs pass without improvement.
pub fn train(config: &ModelConfig, data: &Dataset, patience: usize) -> Result<(ModelParams<f32>, TrainReport)> {
    let mut rng = rng::stream(config.seed, streams::INIT);
    let params = init_params(config, &mut rng)?;
    train_from(config, data, patience, params)
}

pub fn train_from(
    config: &ModelConfig,
    data: &Dataset,
    patience: usize,
    mut params: ModelParams<f32>,
) -> Result<(ModelParams<f32>, TrainReport)> {
    config.validate()?;
    params.check_config(config)?;
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(Error::Argument("training needs non-empty train and validation splits".into()));
    }
    let mut shuffle_rng = rng::stream(config.seed, streams::SHUFFLE);
    let mut dropout_rng = rng::stream(config.seed, streams::DROPOUT);
    let mut opt = Optimizer::new(config.optimizer, params.tensors());
    let lr = config.lr as f32;
    let clip = config.clip_norm as f32;

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs.max(1) {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut total_loss = 0f64;
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = params.zeros_like();
            let weight = 1.0 / batch.len() as f32;
            let mut batch_loss = 0f64;
            for &i in batch {
                let l = loss_and_grad(
                    &params,
                    &data.train[i],
                    config,
                    Some(&mut dropout_rng),
                    weight,
                    &mut grads,
                )?;
                batch_loss += f64::from(l);
            }
            let norm = global_norm(&grads);
            if !batch_loss.is_finite() || !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    grad_norm: f64::from(norm),
                });
            }
            total_loss += batch_loss;
            grads[Slot::Embedding.index()].row_mut(PAD).fill(0.0);
            clip_gradients(&mut grads, clip);
            opt.step(params.tensors_mut(), &grads, lr)?;
        }
        let val = evaluate(&params, config, &data.valid)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: total_loss / data.train.len() as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
            seconds: start.elapsed().as_secs_f64(),
        });
        if val.accuracy > best_acc {
            best_acc = val.accuracy;
            best_epoch = epoch;
            best = params.clone();
        }
        if epoch - best_epoch >= patience {
            stop = StopReason::Patience;
            break;
        }
    }
    Ok((
        best,
        TrainReport {
            epochs,
            best_epoch,
            best_val_acc: best_acc,
            stop,
        },
    ))
}

/// Candidate values for each searched hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub lr: Vec<f64>,
    pub blocks: Vec<usize>,
    pub l2: Vec<f64>,
    pub dropout: Vec<f64>,
    /// Window sizes; only used when the base config is in window mode.
    pub window: Vec<usize>,
    pub optimizer: Vec<OptimizerKind>,
    pub batch_size: Vec<usize>,
}

impl SearchSpace {
    /// The story-task grid.
    pub fn story_grid() -> Self {
        Self {
            lr: vec![0.01, 0.001, 0.0001],
            blocks: vec![20, 30, 40, 50],
            l2: vec![0.0, 0.001, 0.0001],
            dropout: vec![0.3, 0.5, 0.7],
            window: vec![3, 5],
            optimizer: vec![OptimizerKind::Adam],
            batch_size: vec![32],
        }
    }

    fn validate(&self) -> Result<()> {
        let lens = [
            self.lr.len(),
            self.blocks.len(),
            self.l2.len(),
            self.dropout.len(),
            self.window.len(),
            self.optimizer.len(),
            self.batch_size.len(),
        ];
        if lens.contains(&0) {
            return Err(Error::Config("every search dimension needs at least one value".into()));
        }
        Ok(())
    }

    fn draw(&self, base: &ModelConfig, rng: &mut rng::Rng) -> ModelConfig {
        let mut c = base.clone();
        c.lr = *self.lr.choose(rng).unwrap();
        c.blocks = *self.blocks.choose(rng).unwrap();
        c.l2 = *self.l2.choose(rng).unwrap();
        c.dropout = *self.dropout.choose(rng).unwrap();
        let b = *self.window.choose(rng).unwrap();
        if let InputStyle::Windows(_) = c.input_style {
            c.input_style = InputStyle::Windows(b);
        }
        c.optimizer = *self.optimizer.choose(rng).unwrap();
        c.batch_size = *self.batch_size.choose(rng).unwrap();
        c.seed = rng.gen();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: ModelConfig,
    pub val_acc: f64,
    pub best_epoch: usize,
}

/// `budget` independent draws from `space`, each trained on the same random
/// subsample of the training split and scored on the full validation split.
/// Sorted by validation accuracy (descending), ties by trial index.
pub fn random_search(
    space: &SearchSpace,
    base: &ModelConfig,
    data: &Dataset,
    budget: usize,
    train_subsample: usize,
    patience: usize,
    seed: u64,
) -> Result<Vec<Trial>> {
    if budget == 0 {
        return Err(Error::Argument("search budget must be at least 1".into()));
    }
    space.validate()?;
    let mut rng = rng::stream(seed, streams::SEARCH);
    let configs: Vec<ModelConfig> = (0..budget).map(|_| space.draw(base, &mut rng)).collect();

    let mut sub = data.clone();
    if train_subsample < sub.train.len() {
        let mut idx: Vec<usize> = (0..sub.train.len()).collect();
        idx.shuffle(&mut rng::stream(seed, streams::SUBSAMPLE));
        idx.truncate(train_subsample);
        idx.sort_unstable();
        sub.train = idx.into_iter().map(|i| data.train[i].clone()).collect();
    }

    let mut trials = configs
        .into_par_iter()
        .enumerate()
        .map(|(index, mut config)| {
            let prepared = prepare(&sub, &mut config)?;
            let (_, report) = train(&config, &prepared, patience)?;
            Ok(Trial {
                index,
                config,
                val_acc: report.best_val_acc,
                best_epoch: report.best_epoch,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rank_trials(&mut trials);
    Ok(trials)
}

pub fn rank_trials(trials: &mut [Trial]) {
    trials.sort_by(|a, b| {
        b.val_acc
            .partial_cmp(&a.val_acc)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub seed: u64,
    pub acc_a: f64,
    pub acc_b: f64,
    /// `acc_b − acc_a`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<CompareRow>,
    pub mean_delta: f64,
}

impl CompareReport {
    pub fn wins_b(&self) -> usize {
        self.rows.iter().filter(|r| r.delta > 0.0).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("seed,{},{},delta\n", self.label_a, self.label_b);
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.seed, r.acc_a, r.acc_b, r.delta);
        }
        out
    }
}

/// Trains both configs on identical data for every seed and compares test accuracy.
pub fn compare_configs(
    data: &Dataset,
    a: &ModelConfig,
    b: &ModelConfig,
    seeds: &[u64],
    patience: usize,
    labels: (&str, &str),
) -> Result<CompareReport> {
    if seeds.is_empty() {
        return Err(Error::Argument("comparison needs at least one seed".into()));
    }
    if data.test.is_empty() {
        return Err(Error::Argument("comparison needs a test split".into()));
    }
    let run = |cfg: &ModelConfig, seed: u64| -> Result<f64> {
        let mut c = cfg.clone();
        c.seed = seed;
        let prepared = prepare(data, &mut c)?;
        let (params, _) = train(&c, &prepared, patience)?;
        Ok(evaluate(&params, &c, &prepared.test)?.accuracy)
    };
    let rows = seeds
        .par_iter()
        .map(|&seed| {
            let acc_a = run(a, seed)?;
            let acc_b = run(b, seed)?;
            Ok(CompareRow {
                seed,
                acc_a,
                acc_b,
                delta: acc_b - acc_a,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_delta = rows.iter().map(|r| r.delta).sum::<f64>() / rows.len() as f64;
    Ok(CompareReport {
        label_a: labels.0.into(),
        label_b: labels.1.into(),
        rows,
        mean_delta,
    })
}

/// REN versus QDREN under an otherwise shared config (needs ≥ 3 seeds).
pub fn compare_modes(
    data: &Dataset,
    shared: &ModelConfig,
    seeds: &[u64],
    patience: usize,
) -> Result<CompareReport> {
    if seeds.len() < 3 {
        return Err(Error::Argument("mode comparison needs at least 3 seeds".into()));
    }
    let ren = ModelConfig {
        mode: Mode::Ren,
        ..shared.clone()
    };
    let qdren = ModelConfig {
        mode: Mode::Qdren,
        ..shared.clone()
    };
    compare_configs(data, &ren, &qdren, seeds, patience, ("ren", "qdren"))
}
