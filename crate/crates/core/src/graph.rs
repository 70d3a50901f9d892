//! The two-branch network as a fixed layer DAG with a parameter registry.
//!
//! One external input fans out to a standard-convolution branch and a dilated
//! branch. Each branch is a chain of (conv → ReLU → 2×2 max-pool) stages; both
//! are flattened, concatenated and fed through the dense head (ReLU hidden
//! layers, softmax output).

use crate::error::{shape_err, Error, Result};
use crate::model::config::{ArchitectureConfig, BranchShapes, INPUT_CHANNELS};
use crate::ops::{
    conv2d_backward_parts, conv2d_forward, cross_entropy, dense_backward, dense_forward, maxpool_backward,
    maxpool_forward, relu, relu_backward, softmax, softmax_cross_entropy_backward, ConvImpl, ConvSpec,
    PoolArgmax,
};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A learnable tensor and its gradient slot.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Total element count of a parameter list.
pub fn parameter_count<T: Scalar>(params: &[Parameter<T>]) -> usize {
    params.iter().map(|p| p.value.len()).sum()
}

#[derive(Clone, Debug)]
struct ConvNode {
    spec: ConvSpec,
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct DenseNode {
    weight: usize,
    bias: usize,
}

struct StageCache<T> {
    input: Tensor<T>,
    /// Post-ReLU activation; positive exactly where the pre-activation was.
    activation: Tensor<T>,
    argmax: PoolArgmax,
}

struct ForwardCache<T> {
    branches: [Vec<StageCache<T>>; 2],
    /// Inputs to each dense layer; `dense_inputs[0]` is the concatenated features.
    dense_inputs: Vec<Tensor<T>>,
    probs: Tensor<T>,
}

pub struct Graph<T> {
    config: ArchitectureConfig,
    shapes: [BranchShapes; 2],
    branches: [Vec<ConvNode>; 2],
    head: Vec<DenseNode>,
    params: Vec<Parameter<T>>,
    conv_impl: ConvImpl,
    cache: Option<ForwardCache<T>>,
}

impl<T: Scalar> Clone for Graph<T> {
    /// Clones parameters and configuration; cached activations are dropped.
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            shapes: self.shapes.clone(),
            branches: self.branches.clone(),
            head: self.head.clone(),
            params: self.params.clone(),
            conv_impl: self.conv_impl,
            cache: None,
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// Builds the graph with Glorot-uniform weights and zero biases drawn from
    /// `seed`. Each parameter tensor gets its own derived stream.
    pub fn new(config: &ArchitectureConfig, seed: u64) -> Result<Self> {
        let shapes = config.branch_shapes()?;
        let mut params = Vec::new();
        let mut add = |name: String, dims: &[usize], limit: f64| -> Result<usize> {
            let index = params.len();
            let n: usize = dims.iter().product();
            let mut rng = SplitMix64::derived(seed, index as u64);
            let values = (0..n).map(|_| T::from_f64(rng.uniform(-limit, limit))).collect();
            params.push(Parameter {
                name,
                value: Tensor::new(dims, values)?,
                grad: Tensor::zeros(dims)?,
            });
            Ok(index)
        };

        // Registry order follows the layer table: stage by stage, branch A
        // before branch B, then the head; weights before bias.
        let mut branches: [Vec<ConvNode>; 2] = [Vec::new(), Vec::new()];
        for stage in 0..config.stages() {
            for (b, nodes) in branches.iter_mut().enumerate() {
                let spec = shapes[b].convs[stage];
                let name = config.conv_name(b, stage);
                let receptive = spec.kernel * spec.kernel;
                let limit = glorot(receptive * spec.in_channels, receptive * spec.out_channels);
                let weight = add(format!("{name}/kernel"), &spec.weight_dims(), limit)?;
                let bias = add(format!("{name}/bias"), &[spec.out_channels], 0.0)?;
                nodes.push(ConvNode { spec, weight, bias });
            }
        }
        let features = shapes[0].flat_features() + shapes[1].flat_features();
        let mut head = Vec::new();
        for (i, spec) in config.head_specs(features).into_iter().enumerate() {
            let name = config.dense_name(i);
            let limit = glorot(spec.in_features, spec.out_features);
            let weight = add(format!("{name}/kernel"), &[spec.in_features, spec.out_features], limit)?;
            let bias = add(format!("{name}/bias"), &[spec.out_features], 0.0)?;
            head.push(DenseNode { weight, bias });
        }

        Ok(Self {
            config: config.clone(),
            shapes,
            branches,
            head,
            params,
            conv_impl: ConvImpl::default(),
            cache: None,
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn branch_shapes(&self) -> &[BranchShapes; 2] {
        &self.shapes
    }

    pub fn conv_impl(&self) -> ConvImpl {
        self.conv_impl
    }

    pub fn set_conv_impl(&mut self, imp: ConvImpl) {
        self.conv_impl = imp;
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.params)
    }

    /// Width of the concatenated branch features.
    pub fn feature_width(&self) -> usize {
        self.shapes[0].flat_features() + self.shapes[1].flat_features()
    }

    pub fn input_dims(&self, batch: usize) -> [usize; 4] {
        let e = self.config.input_extent;
        [batch, e, e, INPUT_CHANNELS]
    }

    /// Same graph with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Graph<U> {
        Graph {
            config: self.config.clone(),
            shapes: self.shapes.clone(),
            branches: self.branches.clone(),
            head: self.head.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter { name: p.name.clone(), value: p.value.cast(), grad: p.grad.cast() })
                .collect(),
            conv_impl: self.conv_impl,
            cache: None,
        }
    }

    /// Replaces all parameter values from a flat sequence in registry order.
    pub fn load_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return shape_err(format!(
                "flat parameter payload has {} values, graph needs {}",
                values.len(),
                self.parameter_count()
            ));
        }
        let mut rest = values;
        for p in &mut self.params {
            let (head, tail) = rest.split_at(p.value.len());
            p.value.data_mut().copy_from_slice(head);
            rest = tail;
        }
        self.cache = None;
        Ok(())
    }

    pub fn flat_values(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    /// Forward pass that records activations for [`Graph::backward`].
    pub fn forward(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.run(batch, true)?.1.expect("cache requested");
        let probs = cache.probs.clone();
        self.cache = Some(cache);
        Ok(probs)
    }

    /// Forward pass without recording anything; the graph is not modified.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(batch, false)?.0)
    }

    /// Mean cross-entropy of the current parameters on a labeled batch.
    pub fn loss(&self, batch: &Tensor<T>, onehot: &Tensor<T>) -> Result<f64> {
        cross_entropy(&self.infer(batch)?, onehot)
    }

    /// Probabilities plus a hash of every ReLU on/off decision and pool
    /// winner. Two inputs with equal fingerprints lie in the same linear
    /// region of the piecewise part of the network.
    pub fn infer_with_fingerprint(&self, batch: &Tensor<T>) -> Result<(Tensor<T>, u64)> {
        use std::hash::{Hash, Hasher};
        let (probs, cache) = self.run(batch, true)?;
        let cache = cache.expect("cache requested");
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let mut mask = |t: &Tensor<T>| {
            for chunk in t.data().chunks(64) {
                chunk.iter().fold(0u64, |acc, &x| acc << 1 | u64::from(x > T::zero())).hash(&mut h);
            }
        };
        for stages in &cache.branches {
            for s in stages {
                mask(&s.activation);
            }
        }
        for input in &cache.dense_inputs[1..] {
            mask(input);
        }
        for stages in &cache.branches {
            for s in stages {
                s.argmax.winners().hash(&mut h);
            }
        }
        Ok((probs, h.finish()))
    }

    fn run(&self, batch: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        let &[b, h, w, c] = batch.dims() else {
            return shape_err(format!("graph input must be [B,H,W,C], got {:?}", batch.shape()));
        };
        let want = self.input_dims(b);
        if [b, h, w, c] != want {
            return shape_err(format!("graph input {:?} does not match expected {want:?}", batch.shape()));
        }

        let mut caches: [Vec<StageCache<T>>; 2] = [Vec::new(), Vec::new()];
        let mut flats = Vec::with_capacity(2);
        for (nodes, cache) in self.branches.iter().zip(caches.iter_mut()) {
            let mut x = batch.clone();
            for node in nodes {
                let z = conv2d_forward(
                    &x,
                    &self.params[node.weight].value,
                    &self.params[node.bias].value,
                    &node.spec,
                    self.conv_impl,
                )?;
                let a = relu(&z);
                let (pooled, argmax) = maxpool_forward(&a)?;
                if keep {
                    cache.push(StageCache { input: x, activation: a, argmax });
                }
                x = pooled;
            }
            let width = x.len() / b;
            flats.push(x.into_reshaped(&[b, width])?);
        }
        let mut h = Tensor::concat_last_axis(&[&flats[0], &flats[1]])?;

        let mut dense_inputs = Vec::with_capacity(self.head.len());
        let last = self.head.len() - 1;
        for (i, node) in self.head.iter().enumerate() {
            let z = dense_forward(&h, &self.params[node.weight].value, &self.params[node.bias].value)?;
            let next = if i == last { softmax(&z)? } else { relu(&z) };
            if keep {
                dense_inputs.push(h);
            }
            h = next;
        }

        let cache = keep.then(|| ForwardCache { branches: caches, dense_inputs, probs: h.clone() });
        Ok((h, cache))
    }

    /// Reverse pass for the batch seen by the last [`Graph::forward`], storing
    /// gradients of the mean cross-entropy in every parameter's `grad` slot.
    /// Returns the loss.
    pub fn backward(&mut self, onehot: &Tensor<T>) -> Result<f64> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward".into()))?;
        let loss = cross_entropy(&cache.probs, onehot)?;
        let mut d = softmax_cross_entropy_backward(&cache.probs, onehot)?;

        for (i, node) in self.head.iter().enumerate().rev() {
            let input = &cache.dense_inputs[i];
            let g = dense_backward(input, &self.params[node.weight].value, &d)?;
            self.params[node.weight].grad = g.d_weights.expect("dense weight grad");
            self.params[node.bias].grad = g.d_bias.expect("dense bias grad");
            // The input of every dense layer past the first is a ReLU output.
            d = if i > 0 { relu_backward(input, &g.d_input)? } else { g.d_input };
        }

        let split = self.shapes[0].flat_features();
        let parts = [d.slice_last_axis(0..split)?, d.slice_last_axis(split..d.shape().last())?];
        for ((nodes, stages), d_flat) in self.branches.iter().zip(&cache.branches).zip(parts) {
            let last = stages.last().expect("branch has stages");
            let pooled_dims: Vec<usize> = {
                let e = last.activation.dims();
                vec![e[0], e[1] / 2, e[2] / 2, e[3]]
            };
            let mut d = d_flat.into_reshaped(&pooled_dims)?;
            for (s, (node, stage)) in nodes.iter().zip(stages).enumerate().rev() {
                let d_act = maxpool_backward(&stage.argmax, &d)?;
                let d_pre = relu_backward(&stage.activation, &d_act)?;
                let (d_in, d_w, d_b) = conv2d_backward_parts(
                    &stage.input,
                    &self.params[node.weight].value,
                    &node.spec,
                    &d_pre,
                    s > 0,
                )?;
                self.params[node.weight].grad = d_w;
                self.params[node.bias].grad = d_b;
                if let Some(d_in) = d_in {
                    d = d_in;
                }
            }
        }
        Ok(loss)
    }
}

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
