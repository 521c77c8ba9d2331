//! Dynamic memory: `z` keyed blocks sharing one set of cell matrices.
//!
//! Per sentence `s` and block `i`:
//!
//! ```text
//! g_i = σ(sᵀh_i + sᵀk_i [+ sᵀq])        gate, the sᵀq term only in QDREN mode
//! ĥ_i = φ(U h_i + V k_i + W s)          candidate
//! h_i ← h_i + g_i ĥ_i                   update
//! h_i ← h_i / (‖h_i‖ + ε)               reset
//! ```
//!
//! The plain functions here work block by block on values and serve as the
//! reference; [`CellVars::step`] is the batched tape form used for training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{self, dot, lit, sigmoid, Activation, Real, Tensor};

/// Lower bound on the norm divided out in the reset step.
pub const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Gate without the question term.
    Ren,
    /// Gate with the sentence–question dot product added.
    Qdren,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ren" => Ok(Mode::Ren),
            "qdren" => Ok(Mode::Qdren),
            other => Err(Error::Argument(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Ren => "ren",
            Mode::Qdren => "qdren",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellParams<T: Real = f32> {
    pub u: Tensor<T>,
    pub v: Tensor<T>,
    pub w: Tensor<T>,
    /// `[z×d]`, row `i` is the key of block `i`.
    pub keys: Tensor<T>,
    pub phi: Activation,
    /// PReLU slope, ignored by the other activations.
    pub slope: T,
    pub mode: Mode,
}

impl<T: Real> CellParams<T> {
    pub fn blocks(&self) -> usize {
        self.keys.rows()
    }

    pub fn dim(&self) -> usize {
        self.keys.cols()
    }

    fn slope_arg(&self) -> Option<T> {
        (self.phi == Activation::Prelu).then_some(self.slope)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState<T: Real = f32> {
    pub hiddens: Vec<Tensor<T>>,
}

impl<T: Real> MemoryState<T> {
    /// Every block starts at its key.
    pub fn from_keys(keys: &Tensor<T>) -> Self {
        Self {
            hiddens: (0..keys.rows())
                .map(|i| Tensor::vector(keys.row(i).to_vec()))
                .collect(),
        }
    }

    pub fn from_matrix(m: &Tensor<T>) -> Self {
        Self::from_keys(m)
    }

    pub fn to_matrix(&self) -> Tensor<T> {
        let rows: Vec<Vec<T>> = self.hiddens.iter().map(|h| h.data().to_vec()).collect();
        Tensor::from_rows(&rows).expect("hiddens share one width")
    }
}

/// Per-step, per-block gate activations for one story.
#[derive(Debug, Clone, PartialEq)]
pub struct GateTrace<T: Real = f32> {
    /// `[z×t]`; entry `(i, step)` is the gate of block `i` at sentence `step`.
    pub gates: Tensor<T>,
    pub sentence_labels: Vec<String>,
    pub question: String,
}

impl<T: Real> GateTrace<T> {
    pub fn blocks(&self) -> usize {
        self.gates.rows()
    }

    pub fn steps(&self) -> usize {
        self.gates.cols()
    }

    pub fn get(&self, block: usize, step: usize) -> T {
        self.gates.data()[block * self.steps() + step]
    }

    /// Mean over blocks of the gates at `step`.
    pub fn step_mean(&self, step: usize) -> T {
        let z = self.blocks();
        (0..z).map(|i| self.get(i, step)).sum::<T>() / T::from_usize(z).unwrap()
    }

    pub(crate) fn from_columns(columns: &[Vec<T>]) -> Result<Self> {
        let t = columns.len();
        let z = columns.first().map_or(0, Vec::len);
        if t == 0 || z == 0 {
            return Err(Error::Argument("empty gate trace".into()));
        }
        let mut data = vec![T::zero(); z * t];
        for (step, col) in columns.iter().enumerate() {
            for (i, &g) in col.iter().enumerate() {
                data[i * t + step] = g;
            }
        }
        Ok(Self {
            gates: Tensor::matrix(z, t, data)?,
            sentence_labels: Vec::new(),
            question: String::new(),
        })
    }
}

pub fn gate<T: Real>(s: &[T], h: &[T], key: &[T], q: &[T], mode: Mode) -> T {
    let mut x = dot(s, h) + dot(s, key);
    if mode == Mode::Qdren {
        x += dot(s, q);
    }
    sigmoid(x)
}

pub fn candidate<T: Real>(
    h: &Tensor<T>,
    key: &Tensor<T>,
    s: &Tensor<T>,
    params: &CellParams<T>,
) -> Result<Tensor<T>> {
    let uh = tensor::matmul(&params.u, h)?;
    let vk = tensor::matmul(&params.v, key)?;
    let ws = tensor::matmul(&params.w, s)?;
    let pre = tensor::elementwise(
        tensor::BinaryOp::Add,
        &tensor::elementwise(tensor::BinaryOp::Add, &uh, &vk)?,
        &ws,
    )?;
    tensor::activation(params.phi, &pre, params.slope_arg())
}

/// One sentence step over every block. Returns the new state and the gates.
pub fn step<T: Real>(
    state: &MemoryState<T>,
    s: &Tensor<T>,
    q: &Tensor<T>,
    params: &CellParams<T>,
) -> Result<(MemoryState<T>, Vec<T>)> {
    let eps: T = lit(NORM_EPS);
    let mut hiddens = Vec::with_capacity(state.hiddens.len());
    let mut gates = Vec::with_capacity(state.hiddens.len());
    for (i, h) in state.hiddens.iter().enumerate() {
        let key = Tensor::vector(params.keys.row(i).to_vec());
        let g = gate(s.data(), h.data(), key.data(), q.data(), params.mode);
        let cand = candidate(h, &key, s, params)?;
        let mut next: Vec<T> = h
            .data()
            .iter()
            .zip(cand.data())
            .map(|(&hv, &cv)| hv + g * cv)
            .collect();
        let norm = next.iter().map(|&x| x * x).sum::<T>().sqrt().max(eps);
        for x in &mut next {
            *x /= norm;
        }
        hiddens.push(Tensor::vector(next));
        gates.push(g);
    }
    Ok((MemoryState { hiddens }, gates))
}

pub fn run_story<T: Real>(
    initial: &MemoryState<T>,
    sentences: &[Tensor<T>],
    q: &Tensor<T>,
    params: &CellParams<T>,
) -> Result<(MemoryState<T>, GateTrace<T>)> {
    if sentences.is_empty() {
        return Err(Error::Argument("story has no sentences".into()));
    }
    let mut state = initial.clone();
    let mut columns = Vec::with_capacity(sentences.len());
    for s in sentences {
        let (next, g) = step(&state, s, q, params)?;
        state = next;
        columns.push(g);
    }
    Ok((state, GateTrace::from_columns(&columns)?))
}

/// Cell parameters as tape nodes, with the per-story invariants precomputed.
#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    pub u_t: Var,
    pub w: Var,
    pub keys: Var,
    /// `keys · Vᵀ`, constant over the story since keys do not change.
    pub keys_v: Var,
    pub slope: Option<Var>,
    pub phi: Activation,
    pub mode: Mode,
}

impl CellVars {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        tape: &mut Tape<T>,
        u: Var,
        v: Var,
        w: Var,
        keys: Var,
        slope: Var,
        phi: Activation,
        mode: Mode,
    ) -> Result<Self> {
        let u_t = tape.transpose(u)?;
        let v_t = tape.transpose(v)?;
        let keys_v = tape.matmul(keys, v_t)?;
        Ok(Self {
            u_t,
            w,
            keys,
            keys_v,
            slope: (phi == Activation::Prelu).then_some(slope),
            phi,
            mode,
        })
    }

    /// Batched step: `hiddens` is `[z×d]`. Returns the new hiddens and the `[z]` gates.
    pub fn step<T: Real>(
        &self,
        tape: &mut Tape<T>,
        hiddens: Var,
        s: Var,
        q: Var,
    ) -> Result<(Var, Var)> {
        let hs = tape.matmul(hiddens, s)?;
        let ks = tape.matmul(self.keys, s)?;
        let mut pre = tape.add(hs, ks)?;
        if self.mode == Mode::Qdren {
            let sq = tape.dot(s, q)?;
            pre = tape.add_scalar(pre, sq)?;
        }
        let g = tape.activation(Activation::Sigmoid, pre, None)?;

        let hu = tape.matmul(hiddens, self.u_t)?;
        let hk = tape.add(hu, self.keys_v)?;
        let ws = tape.matmul(self.w, s)?;
        let cand_pre = tape.add_row(hk, ws)?;
        let cand = tape.activation(self.phi, cand_pre, self.slope)?;

        let upd = tape.scale_rows(cand, g)?;
        let next = tape.add(hiddens, upd)?;
        let normed = tape.normalize_rows(next, lit(NORM_EPS))?;
        Ok((normed, g))
    }
}
