//! Parameter set, full forward pass and checkpoint persistence.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Story, Vocabulary, PAD};
use crate::encoding::encode_on_tape;
use crate::error::{Error, Result};
use crate::memory::{CellVars, GateTrace, Mode};
use crate::optim::OptimizerKind;
use crate::output::{attend_on_tape, predict_on_tape};
use crate::tape::{Tape, Var};
use crate::tensor::{lit, Activation, Real, Tensor};

/// How a story is turned into memory inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputStyle {
    Sentences,
    /// One window of this odd width per entity occurrence.
    Windows(usize),
}

impl InputStyle {
    pub fn window(self) -> Option<usize> {
        match self {
            InputStyle::Sentences => None,
            InputStyle::Windows(b) => Some(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub blocks: usize,
    pub mode: Mode,
    pub input_style: InputStyle,
    pub phi_cell: Activation,
    pub phi_out: Activation,
    pub l2: f64,
    pub dropout: f64,
    pub lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub max_epochs: usize,
    pub seed: u64,
    /// Filled from the data: vocabulary size and mask lengths.
    pub vocab_size: usize,
    pub max_sentence_len: usize,
    pub max_question_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            blocks: 20,
            mode: Mode::Qdren,
            input_style: InputStyle::Sentences,
            phi_cell: Activation::Prelu,
            phi_out: Activation::Prelu,
            l2: 0.0,
            dropout: 0.5,
            lr: 0.001,
            clip_norm: 40.0,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            max_epochs: 200,
            seed: 0,
            vocab_size: 0,
            max_sentence_len: 0,
            max_question_len: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("blocks", self.blocks),
            ("batch_size", self.batch_size),
            ("max_sentence_len", self.max_sentence_len),
            ("max_question_len", self.max_question_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size < 3 {
            return Err(Error::Config("vocabulary needs at least 3 entries".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.l2 < 0.0 || self.lr < 0.0 || self.clip_norm <= 0.0 {
            return Err(Error::Config("l2, lr must be >= 0 and clip_norm > 0".into()));
        }
        if let InputStyle::Windows(b) = self.input_style {
            if b % 2 == 0 {
                return Err(Error::Config(format!("window size {b} must be odd")));
            }
            if self.max_sentence_len != b || self.max_question_len != b {
                return Err(Error::Config("window mode needs mask lengths equal to the window".into()));
            }
        }
        Ok(())
    }
}

/// Trainable tensors, addressed by slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Embedding,
    SentenceMask,
    QuestionMask,
    U,
    V,
    W,
    Keys,
    R,
    H,
    CellSlope,
    OutSlope,
}

impl Slot {
    pub const ALL: [Slot; 11] = [
        Slot::Embedding,
        Slot::SentenceMask,
        Slot::QuestionMask,
        Slot::U,
        Slot::V,
        Slot::W,
        Slot::Keys,
        Slot::R,
        Slot::H,
        Slot::CellSlope,
        Slot::OutSlope,
    ];

    /// Parameters under the L2 penalty; the embedding and slopes are exempt.
    pub const REGULARIZED: [Slot; 8] = [
        Slot::SentenceMask,
        Slot::QuestionMask,
        Slot::U,
        Slot::V,
        Slot::W,
        Slot::Keys,
        Slot::R,
        Slot::H,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::Embedding => "embedding",
            Slot::SentenceMask => "sentence_mask",
            Slot::QuestionMask => "question_mask",
            Slot::U => "u",
            Slot::V => "v",
            Slot::W => "w",
            Slot::Keys => "keys",
            Slot::R => "r",
            Slot::H => "h",
            Slot::CellSlope => "cell_slope",
            Slot::OutSlope => "out_slope",
        }
    }

    pub fn from_name(name: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn from_tensors(tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != Slot::ALL.len() {
            return Err(Error::Argument(format!(
                "expected {} parameter tensors, got {}",
                Slot::ALL.len(),
                tensors.len()
            )));
        }
        Ok(Self { tensors })
    }

    pub fn get(&self, slot: Slot) -> &Tensor<T> {
        &self.tensors[slot.index()]
    }

    pub fn get_mut(&mut self, slot: Slot) -> &mut Tensor<T> {
        &mut self.tensors[slot.index()]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        self.tensors
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn expected_shape(config: &ModelConfig, slot: Slot) -> Vec<usize> {
        let (d, z) = (config.dim, config.blocks);
        match slot {
            Slot::Embedding | Slot::R => vec![config.vocab_size, d],
            Slot::SentenceMask => vec![config.max_sentence_len, d],
            Slot::QuestionMask => vec![config.max_question_len, d],
            Slot::U | Slot::V | Slot::W | Slot::H => vec![d, d],
            Slot::Keys => vec![z, d],
            Slot::CellSlope | Slot::OutSlope => vec![1],
        }
    }

    pub fn check_config(&self, config: &ModelConfig) -> Result<()> {
        for slot in Slot::ALL {
            let want = Self::expected_shape(config, slot);
            if self.get(slot).shape() != want.as_slice() {
                return Err(Error::dim(slot.name(), self.get(slot).shape(), &want));
            }
        }
        Ok(())
    }
}

pub const INIT_RANGE: f64 = 0.1;
pub const INIT_SLOPE: f64 = 0.25;

/// Uniform(−0.1, 0.1) weights, all-ones masks, zero PAD embedding, PReLU slopes 0.25.
pub fn init_params(config: &ModelConfig, rng: &mut crate::rng::Rng) -> Result<ModelParams<f32>> {
    config.validate()?;
    let tensors = Slot::ALL
        .into_iter()
        .map(|slot| {
            let shape = ModelParams::<f32>::expected_shape(config, slot);
            match slot {
                Slot::SentenceMask | Slot::QuestionMask => Tensor::full(&shape, 1.0),
                Slot::CellSlope | Slot::OutSlope => Tensor::full(&shape, INIT_SLOPE as f32),
                _ => {
                    let n = shape.iter().product();
                    let r = INIT_RANGE as f32;
                    let data = (0..n).map(|_| rng.gen_range(-r..r)).collect();
                    let mut t = Tensor::new(shape, data).expect("shape from config");
                    if slot == Slot::Embedding {
                        t.row_mut(PAD).fill(0.0);
                    }
                    t
                }
            }
        })
        .collect();
    ModelParams::from_tensors(tensors)
}

/// Graph nodes produced by one forward pass.
pub struct Graph {
    pub params: Vec<Var>,
    pub logits: Var,
    pub gates: Vec<Var>,
    pub question: Var,
}

/// Records the forward pass of `story` on `tape`. Dropout is applied to the
/// pooled memory only when `dropout_rng` is given.
pub fn build_graph<T: Real>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    story: &Story,
    config: &ModelConfig,
    dropout_rng: Option<&mut crate::rng::Rng>,
) -> Result<Graph> {
    if story.sentences.is_empty() {
        return Err(Error::Argument("story has no sentences".into()));
    }
    let vars: Vec<Var> = Slot::ALL
        .into_iter()
        .map(|s| tape.param(s.index(), params.get(s)))
        .collect();
    let p = |s: Slot| vars[s.index()];

    let q = encode_on_tape(tape, "question", &story.question, p(Slot::Embedding), p(Slot::QuestionMask))?;
    let cell = CellVars::new(
        tape,
        p(Slot::U),
        p(Slot::V),
        p(Slot::W),
        p(Slot::Keys),
        p(Slot::CellSlope),
        config.phi_cell,
        config.mode,
    )?;
    let mut hiddens = p(Slot::Keys);
    let mut gates = Vec::with_capacity(story.sentences.len());
    for sent in &story.sentences {
        let s = encode_on_tape(tape, "sentence", sent, p(Slot::Embedding), p(Slot::SentenceMask))?;
        let (h, g) = cell.step(tape, hiddens, s, q)?;
        hiddens = h;
        gates.push(g);
    }

    let (_, mut u) = attend_on_tape(tape, q, hiddens)?;
    if let Some(rng) = dropout_rng {
        if config.dropout > 0.0 {
            let keep = 1.0 - config.dropout;
            let scale: T = lit(1.0 / keep);
            let mask: Vec<T> = (0..config.dim)
                .map(|_| if rng.gen_bool(keep) { scale } else { T::zero() })
                .collect();
            let m = tape.constant(Tensor::vector(mask));
            u = tape.mul(u, m)?;
        }
    }
    let r = match &story.candidates {
        Some(c) => tape.gather_rows(p(Slot::R), c)?,
        None => p(Slot::R),
    };
    let logits = predict_on_tape(tape, q, u, p(Slot::H), r, config.phi_out, p(Slot::OutSlope))?;
    Ok(Graph {
        params: vars,
        logits,
        gates,
        question: q,
    })
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Real = f32> {
    /// Over the vocabulary, or over `story.candidates` when present.
    pub logits: Tensor<T>,
    pub trace: GateTrace<T>,
}

/// Deterministic inference pass (no dropout).
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    story: &Story,
    config: &ModelConfig,
) -> Result<ForwardOutput<T>> {
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, params, story, config, None)?;
    let columns: Vec<Vec<T>> = g.gates.iter().map(|&v| tape.value(v).data().to_vec()).collect();
    Ok(ForwardOutput {
        logits: tape.value(g.logits).clone(),
        trace: GateTrace::from_columns(&columns)?,
    })
}

/// Adds `λ Σ ‖θ‖²` over the regularized parameters to `loss`.
fn add_l2<T: Real>(tape: &mut Tape<T>, graph: &Graph, loss: Var, l2: f64) -> Result<Var> {
    if l2 <= 0.0 {
        return Ok(loss);
    }
    let mut total = loss;
    for slot in Slot::REGULARIZED {
        let sq = tape.sum_squares(graph.params[slot.index()]);
        let term = tape.scale(sq, lit(l2));
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Loss of one story; gradients scaled by `weight` are added into `grads`.
pub fn loss_and_grad<T: Real>(
    params: &ModelParams<T>,
    story: &Story,
    config: &ModelConfig,
    dropout_rng: Option<&mut crate::rng::Rng>,
    weight: T,
    grads: &mut [Tensor<T>],
) -> Result<T> {
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, params, story, config, dropout_rng)?;
    let ce = tape.cross_entropy(g.logits, story.target_index())?;
    let total = add_l2(&mut tape, &g, ce, config.l2)?;
    let scaled = tape.scale(total, weight);
    tape.backward(scaled, grads)?;
    Ok(tape.value(total).item())
}

/// Loss of one story without gradients or dropout.
pub fn story_loss<T: Real>(params: &ModelParams<T>, story: &Story, config: &ModelConfig) -> Result<T> {
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, params, story, config, None)?;
    let ce = tape.cross_entropy(g.logits, story.target_index())?;
    let total = add_l2(&mut tape, &g, ce, config.l2)?;
    Ok(tape.value(total).item())
}

/// Loss of one story together with the inputs of its piecewise-linear activations.
pub fn story_loss_kinks<T: Real>(
    params: &ModelParams<T>,
    story: &Story,
    config: &ModelConfig,
) -> Result<(T, Vec<T>)> {
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, params, story, config, None)?;
    let ce = tape.cross_entropy(g.logits, story.target_index())?;
    let total = add_l2(&mut tape, &g, ce, config.l2)?;
    Ok((tape.value(total).item(), tape.kink_inputs()))
}

/// Predicted vocabulary id: argmax logit, ties to the lowest vocabulary id.
pub fn predict_id<T: Real>(logits: &Tensor<T>, story: &Story) -> usize {
    let ids: Vec<usize> = match &story.candidates {
        Some(c) => c.clone(),
        None => (0..logits.len()).collect(),
    };
    let mut best: Option<(T, usize)> = None;
    for (&x, &id) in logits.data().iter().zip(&ids) {
        best = match best {
            None => Some((x, id)),
            Some((bx, bid)) if x > bx || (x == bx && id < bid) => Some((x, id)),
            keep => keep,
        };
    }
    best.map(|(_, id)| id).expect("non-empty logits")
}

// Checkpoints: `<name>.manifest.json` + `<name>.weights.bin`.

const FORMAT: &str = "qdren-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    bytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Option<Vec<String>>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub config: ModelConfig,
    pub vocab: Option<Vocabulary>,
}

/// Manifest and weight paths for a checkpoint named `base`.
pub fn checkpoint_paths(base: &Path) -> (PathBuf, PathBuf) {
    let s = base.to_string_lossy();
    let stem = s
        .strip_suffix(".manifest.json")
        .or_else(|| s.strip_suffix(".weights.bin"))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{stem}.manifest.json")),
        PathBuf::from(format!("{stem}.weights.bin")),
    )
}

pub fn save_checkpoint(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    vocab: Option<&Vocabulary>,
    base: &Path,
) -> Result<()> {
    params.check_config(config)?;
    let (manifest_path, weights_path) = checkpoint_paths(base);
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for slot in Slot::ALL {
        let t = params.get(slot);
        let offset = blob.len();
        for x in t.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        entries.push(TensorEntry {
            name: slot.name().to_string(),
            shape: t.shape().to_vec(),
            offset,
            bytes: blob.len() - offset,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        config: config.clone(),
        vocab: vocab.map(|v| v.tokens().to_vec()),
        tensors: entries,
    };
    if let Some(dir) = manifest_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    fs::write(&weights_path, blob).map_err(|e| Error::io(&weights_path, e))?;
    Ok(())
}

pub fn load_checkpoint(base: &Path) -> Result<Checkpoint> {
    let (manifest_path, weights_path) = checkpoint_paths(base);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("bad manifest {}: {e}", manifest_path.display())))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    let blob = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    let config = manifest.config;
    let mut tensors = Vec::with_capacity(Slot::ALL.len());
    let mut cursor = 0usize;
    if manifest.tensors.len() != Slot::ALL.len() {
        return Err(Error::Checkpoint("wrong number of tensors".into()));
    }
    for (slot, entry) in Slot::ALL.into_iter().zip(&manifest.tensors) {
        if entry.name != slot.name() {
            return Err(Error::Checkpoint(format!(
                "expected tensor {:?}, found {:?}",
                slot.name(),
                entry.name
            )));
        }
        let n: usize = entry.shape.iter().product();
        if entry.bytes != n * 4 || entry.offset != cursor || cursor + entry.bytes > blob.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has inconsistent size or offset",
                entry.name
            )));
        }
        let data = blob[cursor..cursor + entry.bytes]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        cursor += entry.bytes;
        tensors.push(
            Tensor::new(entry.shape.clone(), data).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
    }
    if cursor != blob.len() {
        return Err(Error::Checkpoint(format!(
            "weights file has {} bytes, manifest accounts for {cursor}",
            blob.len()
        )));
    }
    let params = ModelParams::from_tensors(tensors)?;
    params
        .check_config(&config)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let vocab = match manifest.vocab {
        Some(tokens) => {
            let v = Vocabulary::from_tokens(tokens)?;
            if v.len() != config.vocab_size {
                return Err(Error::Checkpoint("vocabulary size disagrees with config".into()));
            }
            Some(v)
        }
        None => None,
    };
    Ok(Checkpoint {
        params,
        config,
        vocab,
    })
}
