//! 2×2 max pooling with stride 2. Odd trailing rows/columns are dropped.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Winning input offsets recorded by [`maxpool_forward`], one per output cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolArgmax {
    input_shape: Shape,
    output_shape: Shape,
    winners: Vec<usize>,
}

impl PoolArgmax {
    pub fn input_shape(&self) -> &Shape {
        &self.input_shape
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

pub fn pool_output_extent(input_extent: usize) -> Result<usize> {
    if input_extent < 2 {
        return shape_err(format!("input extent {input_extent} is smaller than the 2x2 pool window"));
    }
    Ok(input_extent / 2)
}

/// Max over each 2×2 window. Ties go to the first position in row-major scan
/// order within the window.
pub fn maxpool_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolArgmax)> {
    let &[batch, h, w, c] = input.dims() else {
        return shape_err(format!("pool input must be [B,H,W,C], got {:?}", input.shape()));
    };
    let (oh, ow) = (pool_output_extent(h)?, pool_output_extent(w)?);
    let x = input.data();
    let mut out = Vec::with_capacity(batch * oh * ow * c);
    let mut winners = Vec::with_capacity(batch * oh * ow * c);
    for b in 0..batch {
        for y in 0..oh {
            for xo in 0..ow {
                let base = |dy: usize, dx: usize| ((b * h + 2 * y + dy) * w + 2 * xo + dx) * c;
                let taps = [base(0, 0), base(0, 1), base(1, 0), base(1, 1)];
                for ch in 0..c {
                    let mut best = taps[0] + ch;
                    for &t in &taps[1..] {
                        if x[t + ch] > x[best] {
                            best = t + ch;
                        }
                    }
                    out.push(x[best]);
                    winners.push(best);
                }
            }
        }
    }
    let output_shape = Shape::new(vec![batch, oh, ow, c])?;
    Ok((
        Tensor::from_parts_unchecked(output_shape.clone(), out),
        PoolArgmax { input_shape: input.shape().clone(), output_shape, winners },
    ))
}

/// Routes each upstream value to the input cell that won its window.
pub fn maxpool_backward<T: Scalar>(argmax: &PoolArgmax, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if upstream.shape() != &argmax.output_shape {
        return shape_err(format!(
            "pool upstream {:?} does not match recorded output {:?}",
            upstream.shape(),
            argmax.output_shape
        ));
    }
    let mut d = vec![T::zero(); argmax.input_shape.element_count()];
    for (&at, &g) in argmax.winners.iter().zip(upstream.data()) {
        // Windows never overlap, so each input cell receives at most one value.
        d[at] = g;
    }
    Ok(Tensor::from_parts_unchecked(argmax.input_shape.clone(), d))
}
