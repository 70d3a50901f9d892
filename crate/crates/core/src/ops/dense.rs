//! Fully connected layer, `out = input · W + bias` with `W` stored `[in, out]`.

use crate::error::{shape_err, Result};
use crate::ops::LayerGrads;
use crate::scalar::Scalar;
use crate::tensor::{gemm_acc, gemm_nt_f64, gemm_tn_f64, narrow, widen, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseSpec {
    pub in_features: usize,
    pub out_features: usize,
}

impl DenseSpec {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self { in_features, out_features }
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }
}

fn check<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let &[b, f] = input.dims() else {
        return shape_err(format!("dense input must be [B,F], got {:?}", input.shape()));
    };
    let &[wf, g] = weights.dims() else {
        return shape_err(format!("dense weights must be [F,G], got {:?}", weights.shape()));
    };
    if wf != f {
        return shape_err(format!("dense input has {f} features, weights expect {wf}"));
    }
    Ok((b, f, g))
}

pub fn dense_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, f, g) = check(input, weights)?;
    if bias.dims() != [g] {
        return shape_err(format!("dense bias {:?} must be [{g}]", bias.shape()));
    }
    let bias64 = widen(bias.data());
    let mut acc: Vec<f64> = (0..b).flat_map(|_| bias64.iter().copied()).collect();
    gemm_acc(input.data(), b, f, &widen(weights.data()), g, &mut acc);
    Ok(Tensor::from_parts_unchecked(Shape::new(vec![b, g])?, narrow(&acc)))
}

/// `d_W = inputᵀ·upstream`, `d_bias` = column sums, `d_input = upstream·Wᵀ`.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    let (b, f, g) = check(input, weights)?;
    if upstream.dims() != [b, g] {
        return shape_err(format!("dense upstream {:?} must be [{b},{g}]", upstream.shape()));
    }
    let d_w = gemm_tn_f64(input.data(), b, f, upstream.data(), g);
    let mut d_b = vec![0.0; g];
    for row in upstream.data().chunks_exact(g) {
        for (acc, &v) in d_b.iter_mut().zip(row) {
            *acc += v.as_f64();
        }
    }
    let d_x = gemm_nt_f64(upstream.data(), b, g, weights.data(), f);
    Ok(LayerGrads {
        d_input: Tensor::from_parts_unchecked(input.shape().clone(), narrow(&d_x)),
        d_weights: Some(Tensor::from_parts_unchecked(weights.shape().clone(), narrow(&d_w))),
        d_bias: Some(Tensor::from_parts_unchecked(Shape::new(vec![g])?, narrow(&d_b))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_param_counts() {
        assert_eq!(DenseSpec::new(2460, 128).param_count(), 315_008);
        assert_eq!(DenseSpec::new(128, 4).param_count(), 516);
    }

    #[test]
    fn zero_weights_emit_bias() {
        let x = Tensor::new(&[3, 2], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor::zeros(&[2, 4]).unwrap();
        let b = Tensor::new(&[4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let y = dense_forward(&x, &w, &b).unwrap();
        for row in y.data().chunks(4) {
            assert_eq!(row, b.data());
        }
    }

    #[test]
    fn hand_computed_single_row() {
        // x = [1, 2], W = [[1, 2], [3, 4]], b = [0.5, -0.5], upstream g = [1, -1]
        let x = Tensor::new(&[1, 2], vec![1.0f64, 2.0]).unwrap();
        let w = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2], vec![0.5, -0.5]).unwrap();
        let y = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[7.5, 9.5]);

        let up = Tensor::new(&[1, 2], vec![1.0, -1.0]).unwrap();
        let g = dense_backward(&x, &w, &up).unwrap();
        // d_W[i][j] = x[i]·g[j]
        assert_eq!(g.d_weights.unwrap().data(), &[1.0, -1.0, 2.0, -2.0]);
        assert_eq!(g.d_bias.unwrap().data(), &[1.0, -1.0]);
        // d_x[i] = Σ_j W[i][j]·g[j]
        assert_eq!(g.d_input.data(), &[-1.0, -1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let x = Tensor::full(&[2, 3], 1.5f64).unwrap();
        let w = Tensor::full(&[3, 2], -0.5).unwrap();
        let g = dense_backward(&x, &w, &Tensor::zeros(&[2, 2]).unwrap()).unwrap();
        assert!(g.d_input.data().iter().all(|&v| v == 0.0));
        assert!(g.d_weights.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.d_bias.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mismatched_features() {
        let x = Tensor::<f32>::zeros(&[1, 3]).unwrap();
        let w = Tensor::<f32>::zeros(&[2, 2]).unwrap();
        let b = Tensor::<f32>::zeros(&[2]).unwrap();
        assert!(dense_forward(&x, &w, &b).is_err());
        let w = Tensor::<f32>::zeros(&[3, 2]).unwrap();
        assert!(dense_forward(&x, &w, &Tensor::zeros(&[3]).unwrap()).is_err());
        assert!(dense_backward(&x, &w, &Tensor::zeros(&[2, 2]).unwrap()).is_err());
    }
}
