//! Adam with bias correction.

use crate::error::{shape_err, Error, Result};
use crate::graph::Parameter;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// First and second moment estimates for every parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &[Parameter<T>]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.value.dims()).expect("parameter shape is valid"))
                .collect()
        };
        Self { m: zeros(), v: zeros(), t: 0 }
    }

    pub fn element_count(&self) -> usize {
        self.m.iter().map(Tensor::len).sum()
    }
}

/// One Adam update of a single tensor. `t` is the 1-based step index.
///
/// ```text
/// m ← β1·m + (1−β1)·g        m̂ = m / (1−β1ᵗ)
/// v ← β2·v + (1−β2)·g²       v̂ = v / (1−β2ᵗ)
/// p ← p − lr·m̂ / (√v̂ + ε)
/// ```
pub fn adam_update<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    t: u64,
    hyper: &AdamHyper,
) -> Result<()> {
    if grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape() {
        return shape_err(format!(
            "Adam shapes disagree: param {:?}, grad {:?}, m {:?}, v {:?}",
            param.shape(),
            grad.shape(),
            m.shape(),
            v.shape()
        ));
    }
    let AdamHyper { learning_rate: lr, beta1: b1, beta2: b2, epsilon: eps } = *hyper;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let m = m.data_mut();
    let v = v.data_mut();
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        let g = g.as_f64();
        let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
        let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
        m[i] = T::from_f64(mi);
        v[i] = T::from_f64(vi);
        let step = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        *p = T::from_f64(p.as_f64() - step);
    }
    Ok(())
}

/// Applies one Adam step to every parameter using its stored gradient.
pub fn adam_step<T: Scalar>(params: &mut [Parameter<T>], state: &mut AdamState<T>, hyper: &AdamHyper) -> Result<()> {
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return shape_err(format!(
            "Adam state tracks {} tensors, registry has {}",
            state.m.len(),
            params.len()
        ));
    }
    state.t += 1;
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        adam_update(&mut p.value, &p.grad, m, v, state.t, hyper)?;
    }
    Ok(())
}
