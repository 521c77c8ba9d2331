//! Output module: question attention over memory blocks, pooling, scoring.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{self, dot, softmax_slice, Activation, BinaryOp, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct OutputParams<T: Real = f32> {
    /// `[C×d]` answer matrix.
    pub r: Tensor<T>,
    pub h: Tensor<T>,
    pub phi: Activation,
    pub slope: T,
}

pub fn attention<T: Real>(q: &Tensor<T>, hiddens: &[Tensor<T>]) -> Result<Vec<T>> {
    if hiddens.is_empty() {
        return Err(Error::Argument("attention over zero blocks".into()));
    }
    let logits: Vec<T> = hiddens.iter().map(|h| dot(q.data(), h.data())).collect();
    Ok(softmax_slice(&logits))
}

pub fn pool<T: Real>(p: &[T], hiddens: &[Tensor<T>]) -> Result<Tensor<T>> {
    if p.len() != hiddens.len() || hiddens.is_empty() {
        return Err(Error::Argument(format!(
            "{} weights for {} blocks",
            p.len(),
            hiddens.len()
        )));
    }
    let mut u = vec![T::zero(); hiddens[0].len()];
    for (&w, h) in p.iter().zip(hiddens) {
        for (o, &x) in u.iter_mut().zip(h.data()) {
            *o += w * x;
        }
    }
    Ok(Tensor::vector(u))
}

/// `R φ(q + H u)`.
pub fn predict<T: Real>(q: &Tensor<T>, u: &Tensor<T>, params: &OutputParams<T>) -> Result<Tensor<T>> {
    let hu = tensor::matmul(&params.h, u)?;
    let x = tensor::elementwise(BinaryOp::Add, q, &hu)?;
    let slope = (params.phi == Activation::Prelu).then_some(params.slope);
    let a = tensor::activation(params.phi, &x, slope)?;
    tensor::matmul(&params.r, &a)
}

/// Cross entropy plus `λ Σ ‖θ‖²` over `regularized`.
pub fn loss<T: Real>(
    logits: &Tensor<T>,
    target: usize,
    regularized: &[&Tensor<T>],
    lambda: T,
) -> Result<T> {
    if lambda < T::zero() {
        return Err(Error::Argument("negative L2 coefficient".into()));
    }
    let ce = tensor::cross_entropy(logits, target)?;
    let reg: T = regularized.iter().map(|t| t.sum_squares()).sum();
    Ok(ce + lambda * reg)
}

/// Tape form of attention + pooling. `hiddens` is `[z×d]`; returns `(p, u)`.
pub fn attend_on_tape<T: Real>(tape: &mut Tape<T>, q: Var, hiddens: Var) -> Result<(Var, Var)> {
    let logits = tape.matmul(hiddens, q)?;
    let p = tape.softmax(logits)?;
    let u = tape.matmul(p, hiddens)?;
    Ok((p, u))
}

/// Tape form of `R φ(q + H u)`; `r` may already be restricted to candidate rows.
pub fn predict_on_tape<T: Real>(
    tape: &mut Tape<T>,
    q: Var,
    u: Var,
    h: Var,
    r: Var,
    phi: Activation,
    slope: Var,
) -> Result<Var> {
    let hu = tape.matmul(h, u)?;
    let x = tape.add(q, hu)?;
    let a = tape.activation(phi, x, (phi == Activation::Prelu).then_some(slope))?;
    tape.matmul(r, a)
}
