//! Finite-difference checks of every analytic gradient, in double precision.
//!
//! Each layer is wrapped in a scalar loss `L = Σ r ⊙ layer(x)` with random
//! weights `r`, so every output element contributes. The numeric derivative
//! is the central difference with step `h = 1e-6 · max(|x|, 1)`. Coordinates
//! where a ReLU switches or a pool window changes winner anywhere between
//! `x − 1e-4` and `x + 1e-4` are excluded as near-kink points.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use crate::error::Result;
use crate::graph::Graph;
use crate::model::config::{ArchitectureConfig, BranchConfig, Profile};
use crate::ops::{
    conv2d_backward, conv2d_forward, cross_entropy, dense_backward, dense_forward, maxpool_backward,
    maxpool_forward, relu, relu_backward, softmax, softmax_backward, softmax_cross_entropy_backward, ConvImpl,
    ConvSpec,
};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Pass threshold for the single-layer checks.
pub const LAYER_TOLERANCE: f64 = 1e-5;
/// Pass threshold for the whole-network checks.
pub const END_TO_END_TOLERANCE: f64 = 1e-4;
/// Relative errors divide by `max(|analytic|, |numeric|, REL_ERROR_FLOOR)`, so
/// gradients that are zero up to rounding are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-4;
const STEP_SCALE: f64 = 1e-6;
/// Half-width of the neighbourhood that must be free of ReLU/pool switches.
pub const KINK_MARGIN: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Outcome of one check.
#[derive(Clone, Debug)]
pub struct CheckStat {
    pub name: String,
    pub checked: usize,
    /// Coordinates skipped because the stencil crossed a ReLU/pool switch.
    pub excluded: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub tolerance: f64,
}

impl CheckStat {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Self { name: name.into(), checked: 0, excluded: 0, max_rel_error: 0.0, max_abs_error: 0.0, tolerance }
    }

    fn record(&mut self, analytic: f64, numeric: Option<f64>) {
        match numeric {
            Some(n) => {
                self.checked += 1;
                self.max_rel_error = self.max_rel_error.max(relative_error(analytic, n));
                self.max_abs_error = self.max_abs_error.max((analytic - n).abs());
            }
            None => self.excluded += 1,
        }
    }

    fn merge(&mut self, other: &CheckStat) {
        self.checked += other.checked;
        self.excluded += other.excluded;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
    }

    /// At least one coordinate was checked and none exceeded the tolerance.
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= self.tolerance
    }
}

impl fmt::Display for CheckStat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<34} {:>6} checked {:>4} excluded  max rel {:.3e}  max abs {:.3e}  (tol {:.0e}) {}",
            self.name,
            self.checked,
            self.excluded,
            self.max_rel_error,
            self.max_abs_error,
            self.tolerance,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub layers: Vec<CheckStat>,
    pub end_to_end: Vec<CheckStat>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().chain(&self.end_to_end).all(CheckStat::passed)
    }

    pub fn max_layer_error(&self) -> f64 {
        self.layers.iter().map(|s| s.max_rel_error).fold(0.0, f64::max)
    }

    pub fn max_end_to_end_error(&self) -> f64 {
        self.end_to_end.iter().map(|s| s.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in self.layers.iter().chain(&self.end_to_end) {
            writeln!(f, "{s}")?;
        }
        writeln!(f, "max relative error per layer:  {:.3e} (tol {LAYER_TOLERANCE:.0e})", self.max_layer_error())?;
        write!(f, "max relative error end to end: {:.3e} (tol {END_TO_END_TOLERANCE:.0e})", self.max_end_to_end_error())
    }
}

fn step_for(x: f64) -> f64 {
    STEP_SCALE * x.abs().max(1.0)
}

/// Central difference of `f` along `x[i]`, or `None` when the fingerprint
/// returned by `f` differs between `x[i] ± KINK_MARGIN`. `x[i]` is restored.
fn central_difference(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> (f64, u64)) -> Option<f64> {
    let orig = x[i];
    let h = step_for(orig);
    let mut eval = |x: &mut [f64], at: f64| {
        x[i] = at;
        f(x)
    };
    let (_, k_hi) = eval(x, orig + KINK_MARGIN);
    let (_, k_lo) = eval(x, orig - KINK_MARGIN);
    let (up, _) = eval(x, orig + h);
    let (down, _) = eval(x, orig - h);
    x[i] = orig;
    // The actual spacing of the two representable points, not 2h.
    let span = (orig + h) - (orig - h);
    (k_hi == k_lo).then(|| (up - down) / span)
}

fn random_tensor(rng: &mut SplitMix64, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.uniform(lo, hi)).collect()).expect("nonempty dims")
}

fn weighted_sum(r: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    r.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

fn hash_of(x: impl Hash) -> u64 {
    let mut h = DefaultHasher::new();
    x.hash(&mut h);
    h.finish()
}

/// Checks every coordinate of `x` against `analytic`.
fn check_all(
    stat: &mut CheckStat,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    mut f: impl FnMut(&Tensor<f64>) -> (f64, u64),
) {
    let dims = x.dims().to_vec();
    let mut buf = x.data().to_vec();
    for i in 0..buf.len() {
        let numeric = central_difference(&mut buf, i, |v| f(&Tensor::new(&dims, v.to_vec()).expect("same dims")));
        stat.record(analytic.data()[i], numeric);
    }
}

fn random_one_hot(rng: &mut SplitMix64, batch: usize, classes: usize) -> Tensor<f64> {
    let mut v = vec![0.0; batch * classes];
    for r in 0..batch {
        v[r * classes + rng.below(classes as u64) as usize] = 1.0;
    }
    Tensor::new(&[batch, classes], v).expect("nonempty")
}

/// Convolution input, weight and bias gradients over random small specs with
/// dilations 1 to 3.
pub fn check_conv(cases: usize, seed: u64) -> Result<CheckStat> {
    let mut stat = CheckStat::new("conv2d (input, kernel, bias)", LAYER_TOLERANCE);
    let mut rng = SplitMix64::new(seed);
    for _ in 0..cases {
        let k = 1 + rng.below(3) as usize;
        let d = 1 + rng.below(3) as usize;
        let spec = ConvSpec::new(k, 1 + rng.below(3) as usize, 1 + rng.below(3) as usize, d);
        let extent = spec.effective_kernel() + rng.below(3) as usize;
        let batch = 1 + rng.below(2) as usize;
        let width = extent + rng.below(2) as usize;
        let x = random_tensor(&mut rng, &[batch, extent, width, spec.in_channels], -1.0, 1.0);
        let w = random_tensor(&mut rng, &spec.weight_dims(), -1.0, 1.0);
        let b = random_tensor(&mut rng, &[spec.out_channels], -1.0, 1.0);
        let y = conv2d_forward(&x, &w, &b, &spec, ConvImpl::Im2col)?;
        let r = random_tensor(&mut rng, y.dims(), -1.0, 1.0);
        let g = conv2d_backward(&x, &w, &spec, &r)?;
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            (weighted_sum(&r, &conv2d_forward(x, w, b, &spec, ConvImpl::Im2col).expect("valid")), 0)
        };
        check_all(&mut stat, &x, &g.d_input, |v| loss(v, &w, &b));
        check_all(&mut stat, &w, g.d_weights.as_ref().expect("weights"), |v| loss(&x, v, &b));
        check_all(&mut stat, &b, g.d_bias.as_ref().expect("bias"), |v| loss(&x, &w, v));
    }
    Ok(stat)
}

pub fn check_dense(cases: usize, seed: u64) -> Result<CheckStat> {
    let mut stat = CheckStat::new("dense (input, kernel, bias)", LAYER_TOLERANCE);
    let mut rng = SplitMix64::new(seed);
    for _ in 0..cases {
        let (batch, f, g) = (1 + rng.below(3) as usize, 1 + rng.below(6) as usize, 1 + rng.below(5) as usize);
        let x = random_tensor(&mut rng, &[batch, f], -1.0, 1.0);
        let w = random_tensor(&mut rng, &[f, g], -1.0, 1.0);
        let b = random_tensor(&mut rng, &[g], -1.0, 1.0);
        let r = random_tensor(&mut rng, &[batch, g], -1.0, 1.0);
        let grads = dense_backward(&x, &w, &r)?;
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            (weighted_sum(&r, &dense_forward(x, w, b).expect("valid")), 0)
        };
        check_all(&mut stat, &x, &grads.d_input, |v| loss(v, &w, &b));
        check_all(&mut stat, &w, grads.d_weights.as_ref().expect("weights"), |v| loss(&x, v, &b));
        check_all(&mut stat, &b, grads.d_bias.as_ref().expect("bias"), |v| loss(&x, &w, v));
    }
    Ok(stat)
}

pub fn check_relu(cases: usize, seed: u64) -> Result<CheckStat> {
    let mut stat = CheckStat::new("relu", LAYER_TOLERANCE);
    let mut rng = SplitMix64::new(seed);
    for _ in 0..cases {
        let dims = [1 + rng.below(2) as usize, 1 + rng.below(4) as usize, 1 + rng.below(4) as usize, 2];
        let x = random_tensor(&mut rng, &dims, -1.0, 1.0);
        let r = random_tensor(&mut rng, &dims, -1.0, 1.0);
        let g = relu_backward(&x, &r)?;
        check_all(&mut stat, &x, &g, |v| {
            let mask: Vec<bool> = v.data().iter().map(|&e| e > 0.0).collect();
            (weighted_sum(&r, &relu(v)), hash_of(mask))
        });
    }
    Ok(stat)
}

pub fn check_maxpool(cases: usize, seed: u64) -> Result<CheckStat> {
    let mut stat = CheckStat::new("max pool 2x2", LAYER_TOLERANCE);
    let mut rng = SplitMix64::new(seed);
    for _ in 0..cases {
        let dims = [1 + rng.below(2) as usize, 2 + rng.below(5) as usize, 2 + rng.below(5) as usize, 1 + rng.below(3) as usize];
        let x = random_tensor(&mut rng, &dims, -1.0, 1.0);
        let (y, arg) = maxpool_forward(&x)?;
        let r = random_tensor(&mut rng, y.dims(), -1.0, 1.0);
        let g = maxpool_backward(&arg, &r)?;
        check_all(&mut stat, &x, &g, |v| {
            let (y, arg) = maxpool_forward(v).expect("valid");
            (weighted_sum(&r, &y), hash_of(arg.winners()))
        });
    }
    Ok(stat)
}

/// The unfused softmax vector–Jacobian product.
pub fn check_softmax(cases: usize, seed: u64) -> Result<CheckStat> {
    let mut stat = CheckStat::new("softmax", LAYER_TOLERANCE);
    let mut rng = SplitMix64::new(seed);
    for _ in 0..cases {
        let dims = [1 + rng.below(3) as usize, 2 + rng.below(4) as usize];
        let z = random_tensor(&mut rng, &dims, -3.0, 3.0);
        let r = random_tensor(&mut rng, &dims, -1.0, 1.0);
        let g = softmax_backward(&softmax(&z)?, &r)?;
        check_all(&mut stat, &z, &g, |v| (weighted_sum(&r, &softmax(v).expect("valid")), 0));
    }
    Ok(stat)
}

/// Fused softmax + cross-entropy gradient with respect to the logits.
pub fn check_softmax_cross_entropy(cases: usize, seed: u64) -> Result<CheckStat> {
    let mut stat = CheckStat::new("softmax + cross-entropy", LAYER_TOLERANCE);
    let mut rng = SplitMix64::new(seed);
    for _ in 0..cases {
        let (batch, k) = (1 + rng.below(4) as usize, 2 + rng.below(4) as usize);
        let z = random_tensor(&mut rng, &[batch, k], -3.0, 3.0);
        let y = random_one_hot(&mut rng, batch, k);
        let g = softmax_cross_entropy_backward(&softmax(&z)?, &y)?;
        check_all(&mut stat, &z, &g, |v| (cross_entropy(&softmax(v).expect("valid"), &y).expect("valid"), 0));
    }
    Ok(stat)
}

/// All single-layer checks.
pub fn check_layers(cases: usize, seed: u64) -> Result<Vec<CheckStat>> {
    Ok(vec![
        check_conv(cases, SplitMix64::derived(seed, 0).next_u64())?,
        check_dense(cases, SplitMix64::derived(seed, 1).next_u64())?,
        check_relu(cases, SplitMix64::derived(seed, 2).next_u64())?,
        check_maxpool(cases, SplitMix64::derived(seed, 3).next_u64())?,
        check_softmax(cases, SplitMix64::derived(seed, 4).next_u64())?,
        check_softmax_cross_entropy(cases, SplitMix64::derived(seed, 5).next_u64())?,
    ])
}

/// Two-stage network on 20×20 inputs, small enough to check every parameter.
pub fn micro_config() -> ArchitectureConfig {
    ArchitectureConfig {
        profile: Profile::Tiny,
        input_extent: 20,
        filters: vec![2, 3],
        branch_a: BranchConfig { kernels: vec![3, 3], dilations: vec![1, 1] },
        branch_b: BranchConfig { kernels: vec![3, 3], dilations: vec![2, 1] },
        head: vec![5, 4],
    }
}

/// Which coordinates of each parameter tensor to check.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    All,
    /// The largest-magnitude gradient entry plus this many random entries.
    Sample(usize),
}

/// Compares the graph's parameter gradients of the mean cross-entropy on
/// `(batch, onehot)` against central differences.
pub fn check_graph(
    name: &str,
    graph: &Graph<f64>,
    batch: &Tensor<f64>,
    onehot: &Tensor<f64>,
    coverage: Coverage,
    seed: u64,
) -> Result<CheckStat> {
    let mut analytic = graph.clone();
    analytic.forward(batch)?;
    analytic.backward(onehot)?;

    let mut stat = CheckStat::new(name, END_TO_END_TOLERANCE);
    let mut probe = graph.clone();
    let mut rng = SplitMix64::new(seed);
    for p in 0..probe.parameters().len() {
        let grad = analytic.parameters()[p].grad.data();
        let coords: Vec<usize> = match coverage {
            Coverage::All => (0..grad.len()).collect(),
            Coverage::Sample(n) => {
                let top = (0..grad.len()).max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs())).expect("nonempty");
                let mut c = vec![top];
                c.extend((0..n).map(|_| rng.below(grad.len() as u64) as usize));
                c
            }
        };
        let mut values = probe.parameters()[p].value.data().to_vec();
        for i in coords {
            let numeric = central_difference(&mut values, i, |v| {
                probe.parameters_mut()[p].value.data_mut().copy_from_slice(v);
                let (probs, key) = probe.infer_with_fingerprint(batch).expect("valid batch");
                (cross_entropy(&probs, onehot).expect("valid labels"), key)
            });
            stat.record(grad[i], numeric);
        }
        probe.parameters_mut()[p].value.data_mut().copy_from_slice(&values);
    }
    Ok(stat)
}

/// Random `[B, E, E, 3]` images in `[0, 1]` with one-hot labels cycling
/// through the classes.
pub fn random_batch(config: &ArchitectureConfig, batch: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = SplitMix64::new(seed);
    let e = config.input_extent;
    let x = random_tensor(&mut rng, &[batch, e, e, 3], 0.0, 1.0);
    let k = config.num_classes();
    let mut y = vec![0.0; batch * k];
    for r in 0..batch {
        y[r * k + r % k] = 1.0;
    }
    (x, Tensor::new(&[batch, k], y).expect("nonempty"))
}

/// The full suite: single layers, the micro network on every parameter, and
/// `profile`'s network on sampled coordinates.
pub fn run_suite(profile: Profile, seed: u64) -> Result<GradcheckReport> {
    let layers = check_layers(20, seed)?;

    let micro = micro_config();
    let g = Graph::<f64>::new(&micro, SplitMix64::derived(seed, 10).next_u64())?;
    let (x, y) = random_batch(&micro, 2, SplitMix64::derived(seed, 11).next_u64());
    let micro_stat = check_graph("network 20x20 (every parameter)", &g, &x, &y, Coverage::All, seed)?;

    let cfg = ArchitectureConfig::for_profile(profile);
    let g = Graph::<f64>::new(&cfg, SplitMix64::derived(seed, 12).next_u64())?;
    let (x, y) = random_batch(&cfg, 2, SplitMix64::derived(seed, 13).next_u64());
    let name = format!("network {0}x{0} (sampled)", cfg.input_extent);
    let full_stat = check_graph(&name, &g, &x, &y, Coverage::Sample(3), seed)?;

    Ok(GradcheckReport { layers, end_to_end: vec![micro_stat, full_stat] })
}

/// Combines stats under one name, keeping the strictest tolerance.
pub fn combine(name: &str, stats: &[CheckStat]) -> CheckStat {
    let tol = stats.iter().map(|s| s.tolerance).fold(f64::INFINITY, f64::min);
    let mut out = CheckStat::new(name, tol);
    for s in stats {
        out.merge(s);
    }
    out
}
