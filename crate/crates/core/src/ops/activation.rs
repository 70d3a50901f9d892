//! ReLU, softmax and categorical cross-entropy.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probabilities are clamped to at least this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Passes `upstream` where `input > 0`. The subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != upstream.shape() {
        return shape_err(format!(
            "relu upstream {:?} does not match input {:?}",
            upstream.shape(),
            input.shape()
        ));
    }
    let d = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor::from_parts_unchecked(input.shape().clone(), d))
}

fn rows<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match *t.dims() {
        [b, k] => Ok((b, k)),
        _ => shape_err(format!("{what} must be [B,K], got {:?}", t.shape())),
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = rows(logits, "softmax input")?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x.as_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|&e| T::from_f64(e / sum)));
    }
    Ok(Tensor::from_parts_unchecked(logits.shape().clone(), out))
}

/// Vector–Jacobian product of softmax: `p ⊙ (g − ⟨p, g⟩)` per row.
pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = rows(probs, "softmax output")?;
    if probs.shape() != upstream.shape() {
        return shape_err("softmax upstream shape differs from output shape");
    }
    let mut out = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks_exact(k).zip(upstream.data().chunks_exact(k)) {
        let dot: f64 = p.iter().zip(g).map(|(p, g)| p.as_f64() * g.as_f64()).sum();
        out.extend(p.iter().zip(g).map(|(p, g)| T::from_f64(p.as_f64() * (g.as_f64() - dot))));
    }
    Ok(Tensor::from_parts_unchecked(probs.shape().clone(), out))
}

/// Checks every row holds exactly one 1 and zeros elsewhere; returns the hot indices.
pub fn validate_one_hot<T: Scalar>(onehot: &Tensor<T>) -> Result<Vec<usize>> {
    let (_, k) = rows(onehot, "one-hot labels")?;
    onehot
        .data()
        .chunks_exact(k)
        .enumerate()
        .map(|(r, row)| {
            let ones: Vec<usize> = (0..k).filter(|&i| row[i] == T::one()).collect();
            let zeros = row.iter().filter(|&&x| x == T::zero()).count();
            if ones.len() == 1 && zeros == k - 1 {
                Ok(ones[0])
            } else {
                Err(Error::Input(format!("row {r} is not a valid one-hot vector: {row:?}")))
            }
        })
        .collect()
}

fn check_pair<T: Scalar>(probs: &Tensor<T>, onehot: &Tensor<T>) -> Result<Vec<usize>> {
    rows(probs, "probabilities")?;
    if probs.shape() != onehot.shape() {
        return shape_err(format!(
            "probabilities {:?} and labels {:?} differ in shape",
            probs.shape(),
            onehot.shape()
        ));
    }
    validate_one_hot(onehot)
}

/// Mean over the batch of `−ln p[true class]`, with `p` clamped to [`PROB_FLOOR`].
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, onehot: &Tensor<T>) -> Result<f64> {
    let hot = check_pair(probs, onehot)?;
    let k = probs.shape().last();
    let total: f64 = hot
        .iter()
        .enumerate()
        .map(|(r, &c)| -probs.data()[r * k + c].as_f64().max(PROB_FLOOR).ln())
        .sum();
    Ok(total / hot.len() as f64)
}

/// Gradient of [`cross_entropy`] with respect to the probabilities.
pub fn cross_entropy_backward<T: Scalar>(probs: &Tensor<T>, onehot: &Tensor<T>) -> Result<Tensor<T>> {
    let hot = check_pair(probs, onehot)?;
    let k = probs.shape().last();
    let batch = hot.len() as f64;
    let mut d = vec![T::zero(); probs.len()];
    for (r, &c) in hot.iter().enumerate() {
        let p = probs.data()[r * k + c].as_f64();
        if p >= PROB_FLOOR {
            d[r * k + c] = T::from_f64(-1.0 / (p * batch));
        }
    }
    Ok(Tensor::from_parts_unchecked(probs.shape().clone(), d))
}

/// Fused softmax + cross-entropy gradient with respect to the logits:
/// `(probs − onehot) / B`.
pub fn softmax_cross_entropy_backward<T: Scalar>(probs: &Tensor<T>, onehot: &Tensor<T>) -> Result<Tensor<T>> {
    let hot = check_pair(probs, onehot)?;
    let batch = hot.len() as f64;
    let d = probs
        .data()
        .iter()
        .zip(onehot.data())
        .map(|(&p, &y)| T::from_f64((p.as_f64() - y.as_f64()) / batch))
        .collect();
    Ok(Tensor::from_parts_unchecked(probs.shape().clone(), d))
}
