use serde::Serialize;

use crate::error::{Error, Result};
use crate::ops::{pool_output_extent, ConvSpec, DenseSpec};

pub const INPUT_CHANNELS: usize = 3;

/// Named architecture presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 227×227 RGB input, the reference network.
    Paper,
    /// Same layer structure on 128×128 input, for fast tests and gradient checks.
    Tiny,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Tiny => "tiny",
        }
    }

    pub fn input_extent(self) -> usize {
        match self {
            Profile::Paper => 227,
            Profile::Tiny => 128,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Profile::Paper => 0,
            Profile::Tiny => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Profile::Paper),
            1 => Some(Profile::Tiny),
            _ => None,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "tiny" => Ok(Profile::Tiny),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected paper or tiny)"))),
        }
    }
}

/// Kernel sizes and dilations of one convolution branch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BranchConfig {
    pub kernels: Vec<usize>,
    pub dilations: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ArchitectureConfig {
    pub profile: Profile,
    /// Square input side length.
    pub input_extent: usize,
    /// Filters per convolution stage, shared by both branches.
    pub filters: Vec<usize>,
    /// Standard-convolution branch.
    pub branch_a: BranchConfig,
    /// Dilated-convolution branch.
    pub branch_b: BranchConfig,
    /// Dense layer widths; ReLU on all but the last, softmax on the last.
    pub head: Vec<usize>,
}

/// Per-stage spatial extents of one branch, derived from the config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchShapes {
    pub convs: Vec<ConvSpec>,
    /// Output extent after each convolution.
    pub conv_extents: Vec<usize>,
    /// Output extent after each pool.
    pub pool_extents: Vec<usize>,
}

impl BranchShapes {
    pub fn flat_features(&self) -> usize {
        let e = *self.pool_extents.last().expect("at least one stage");
        e * e * self.convs.last().expect("at least one stage").out_channels
    }
}

impl ArchitectureConfig {
    pub fn for_profile(profile: Profile) -> Self {
        Self {
            profile,
            input_extent: profile.input_extent(),
            filters: vec![20, 30, 40, 50, 60],
            branch_a: BranchConfig { kernels: vec![5, 3, 3, 3, 3], dilations: vec![1, 1, 1, 1, 1] },
            branch_b: BranchConfig { kernels: vec![5, 3, 3, 3, 3], dilations: vec![3, 2, 2, 1, 1] },
            head: vec![128, 4],
        }
    }

    pub fn paper() -> Self {
        Self::for_profile(Profile::Paper)
    }

    pub fn tiny() -> Self {
        Self::for_profile(Profile::Tiny)
    }

    pub fn stages(&self) -> usize {
        self.filters.len()
    }

    pub fn num_classes(&self) -> usize {
        *self.head.last().expect("validated config has a head")
    }

    /// Keras-style layer names: branch A convs are `conv2d`, `conv2d_1`, ...;
    /// branch B continues the numbering.
    pub fn conv_name(&self, branch: usize, stage: usize) -> String {
        indexed("conv2d", branch * self.stages() + stage)
    }

    pub fn pool_name(&self, branch: usize, stage: usize) -> String {
        indexed("max_pooling2d", branch * self.stages() + stage)
    }

    pub fn dense_name(&self, layer: usize) -> String {
        format!("dense_{}", layer + 1)
    }

    pub fn validate(&self) -> Result<()> {
        self.branch_shapes().map(|_| ())
    }

    /// Runs the shape recursion for both branches, failing with the name of
    /// the first layer whose input is too small.
    pub fn branch_shapes(&self) -> Result<[BranchShapes; 2]> {
        let n = self.stages();
        if n == 0 {
            return Err(Error::Config("filter schedule is empty".into()));
        }
        if self.head.is_empty() || self.head.contains(&0) {
            return Err(Error::Config(format!("head widths {:?} must be nonempty and positive", self.head)));
        }
        if self.filters.contains(&0) {
            return Err(Error::Config(format!("filter counts {:?} must be positive", self.filters)));
        }
        let a = self.branch(0, &self.branch_a)?;
        let b = self.branch(1, &self.branch_b)?;
        Ok([a, b])
    }

    fn branch(&self, index: usize, cfg: &BranchConfig) -> Result<BranchShapes> {
        let n = self.stages();
        if cfg.kernels.len() != n || cfg.dilations.len() != n {
            return Err(Error::Config(format!(
                "branch {} has {} kernels and {} dilations for {n} stages",
                index,
                cfg.kernels.len(),
                cfg.dilations.len()
            )));
        }
        let mut extent = self.input_extent;
        let mut in_channels = INPUT_CHANNELS;
        let mut shapes = BranchShapes { convs: vec![], conv_extents: vec![], pool_extents: vec![] };
        for stage in 0..n {
            let (k, d) = (cfg.kernels[stage], cfg.dilations[stage]);
            if k == 0 || d == 0 {
                return Err(Error::Config(format!(
                    "{}: kernel {k} and dilation {d} must be positive",
                    self.conv_name(index, stage)
                )));
            }
            let spec = ConvSpec::new(k, in_channels, self.filters[stage], d);
            let conv = spec.output_extent(extent).map_err(|_| {
                Error::Config(format!(
                    "{}: dilated kernel span {} exceeds input extent {extent} (input extent {} too small)",
                    self.conv_name(index, stage),
                    spec.effective_kernel(),
                    self.input_extent
                ))
            })?;
            let pooled = pool_output_extent(conv).map_err(|_| {
                Error::Config(format!(
                    "{}: input extent {conv} is smaller than the 2x2 window (input extent {} too small)",
                    self.pool_name(index, stage),
                    self.input_extent
                ))
            })?;
            shapes.convs.push(spec);
            shapes.conv_extents.push(conv);
            shapes.pool_extents.push(pooled);
            extent = pooled;
            in_channels = self.filters[stage];
        }
        Ok(shapes)
    }

    /// Specs of the dense head given the concatenated feature width.
    pub fn head_specs(&self, features: usize) -> Vec<DenseSpec> {
        let mut specs = Vec::with_capacity(self.head.len());
        let mut width = features;
        for &out in &self.head {
            specs.push(DenseSpec::new(width, out));
            width = out;
        }
        specs
    }
}

fn indexed(base: &str, i: usize) -> String {
    if i == 0 {
        base.to_string()
    } else {
        format!("{base}_{i}")
    }
}
