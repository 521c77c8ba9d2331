//! Global-norm gradient clipping and the Adam / RMSProp update rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{lit, Real, Tensor};

pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> T {
    grads.iter().map(Tensor::sum_squares).sum::<T>().sqrt()
}

/// Rescales all gradients by `max_norm / g` when their global L2 norm `g`
/// exceeds `max_norm`. Returns the pre-clipping norm.
pub fn clip_gradients<T: Real>(grads: &mut [Tensor<T>], max_norm: T) -> T {
    assert!(max_norm > T::zero(), "max_norm must be positive");
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            other => Err(Error::Argument(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Rmsprop => "rmsprop",
        })
    }
}

fn check_shapes<T: Real>(params: &[Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Argument(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::dim("optimizer step", p.shape(), g.shape()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AdamState<T: Real = f32> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self::with_hyper(params, lit(0.9), lit(0.999), lit(1e-8))
    }

    pub fn with_hyper(params: &[Tensor<T>], beta1: T, beta2: T, eps: T) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: T) -> Result<()> {
        check_shapes(params, grads)?;
        if params.len() != self.m.len() {
            return Err(Error::Argument("optimizer state built for other parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RmsPropState<T: Real = f32> {
    pub decay: T,
    pub eps: T,
    step: u64,
    ms: Vec<Tensor<T>>,
}

impl<T: Real> RmsPropState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            decay: lit(0.9),
            eps: lit(1e-8),
            step: 0,
            ms: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: T) -> Result<()> {
        check_shapes(params, grads)?;
        self.step += 1;
        let rho = self.decay;
        for ((p, g), ms) in params.iter_mut().zip(grads).zip(self.ms.iter_mut()) {
            for ((pi, &gi), si) in p.data_mut().iter_mut().zip(g.data()).zip(ms.data_mut()) {
                *si = rho * *si + (T::one() - rho) * gi * gi;
                *pi -= lr * gi / (si.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Either optimizer behind one interface.
#[derive(Debug, Clone)]
pub enum Optimizer<T: Real = f32> {
    Adam(AdamState<T>),
    RmsProp(RmsPropState<T>),
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, params: &[Tensor<T>]) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(params)),
            OptimizerKind::Rmsprop => Optimizer::RmsProp(RmsPropState::new(params)),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: T) -> Result<()> {
        match self {
            Optimizer::Adam(s) => s.step(params, grads, lr),
            Optimizer::RmsProp(s) => s.step(params, grads, lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clip_scales_to_threshold() {
        let mut g = vec![Tensor::vector(vec![30f32, 40.])];
        let n = clip_gradients(&mut g, 40.0);
        assert_eq!(n, 50.0);
        assert_eq!(g[0].data(), &[24., 32.]);
    }

    #[test]
    fn clip_below_threshold_is_bitwise_noop() {
        let orig = vec![Tensor::vector(vec![0.1f32, -0.3, 1e-7]), Tensor::scalar(2.5)];
        let mut g = orig.clone();
        clip_gradients(&mut g, 40.0);
        for (a, b) in g.iter().zip(&orig) {
            let ab: Vec<u32> = a.data().iter().map(|x| x.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn clip_zero_gradients() {
        let mut g = vec![Tensor::<f32>::zeros(&[3])];
        assert_eq!(clip_gradients(&mut g, 1.0), 0.0);
        assert_eq!(g[0].data(), &[0.; 3]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor::vector(vec![1f64, -2., 0.5])];
        let g = vec![Tensor::vector(vec![3f64, -1e-3, 0.7])];
        let mut st = AdamState::new(&p);
        st.step(&mut p, &g, 0.01).unwrap();
        let expect = [1. - 0.01, -2. + 0.01, 0.5 - 0.01];
        for (a, b) in p[0].data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
        assert_eq!(st.steps(), 1);
        assert_eq!(st.first_moments()[0].shape(), &[3]);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let start = vec![Tensor::vector(vec![0.3f32, -0.7])];
        let mut p = start.clone();
        let g = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(&p);
        for _ in 0..100 {
            st.step(&mut p, &g, 0.1).unwrap();
        }
        assert_eq!(p, start);
        assert_eq!(st.steps(), 100);
    }

    #[test]
    fn rmsprop_descends_quadratic() {
        let mut p = vec![Tensor::vector(vec![2f64])];
        let mut st = RmsPropState::new(&p);
        for _ in 0..500 {
            let g = vec![p[0].map(|x| 2. * x)];
            st.step(&mut p, &g, 0.01).unwrap();
        }
        assert!(p[0].data()[0].abs() < 0.05);
    }

    #[test]
    fn step_rejects_shape_mismatch() {
        let mut p = vec![Tensor::<f32>::zeros(&[2])];
        let g = vec![Tensor::zeros(&[3])];
        let mut st = AdamState::new(&p);
        assert!(st.step(&mut p, &g, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn clip_never_exceeds_bound(
            vals in prop::collection::vec(-1e3f32..1e3, 1..40),
            max_norm in 0.1f32..100.0,
        ) {
            let mut g = vec![Tensor::vector(vals)];
            let before = global_norm(&g);
            clip_gradients(&mut g, max_norm);
            let after = global_norm(&g);
            prop_assert!(after <= before * (1.0 + 1e-6));
            prop_assert!(after <= max_norm + 1e-5 * max_norm.max(1.0));
        }
    }
}
