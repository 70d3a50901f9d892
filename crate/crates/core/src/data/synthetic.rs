//! Procedurally generated four-class images for tests and smoke runs.
//!
//! broadleaf: flat green field; grass: horizontal stripes; soil: vertical
//! stripes; soybean: checkerboard. Each pixel gets small seeded noise.

use std::fs;
use std::path::Path;

use crate::data::{ClassLabel, InMemoryDataset, Sample};
use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

const BASE: [[f64; 3]; 4] = [
    [0.20, 0.65, 0.20],
    [0.55, 0.80, 0.30],
    [0.45, 0.32, 0.18],
    [0.35, 0.55, 0.25],
];
const ACCENT: [[f64; 3]; 4] = [
    [0.20, 0.65, 0.20],
    [0.25, 0.45, 0.10],
    [0.70, 0.55, 0.40],
    [0.75, 0.85, 0.45],
];

/// Period (pixels) of the stripe and checker patterns.
const PERIOD: usize = 8;
const NOISE: f64 = 0.04;

/// One `[extent, extent, 3]` image in `[0, 1]`.
pub fn synthetic_image(label: ClassLabel, extent: usize, seed: u64) -> Tensor<f32> {
    let mut rng = SplitMix64::new(seed);
    let c = label.index();
    // Random phase so samples of a class are not identical.
    let phase = rng.below(PERIOD as u64) as usize;
    let mut data = Vec::with_capacity(extent * extent * 3);
    for y in 0..extent {
        for x in 0..extent {
            let accent = match label {
                ClassLabel::Broadleaf => false,
                ClassLabel::Grass => ((y + phase) / (PERIOD / 2)) % 2 == 1,
                ClassLabel::Soil => ((x + phase) / (PERIOD / 2)) % 2 == 1,
                ClassLabel::Soybean => (((y + phase) / (PERIOD / 2)) + ((x + phase) / (PERIOD / 2))) % 2 == 1,
            };
            let color = if accent { ACCENT[c] } else { BASE[c] };
            for v in color {
                data.push((v + rng.uniform(-NOISE, NOISE)).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Tensor::new(&[extent, extent, 3], data).expect("fixed shape")
}

/// `per_class` samples of every class, interleaved by class.
pub fn synthetic_dataset(per_class: usize, extent: usize, seed: u64) -> InMemoryDataset {
    let mut samples = Vec::with_capacity(per_class * 4);
    for i in 0..per_class {
        for label in ClassLabel::ALL {
            let n = (i * 4 + label.index()) as u64;
            samples.push(Sample {
                image: synthetic_image(label, extent, SplitMix64::derived(seed, n).next_u64()),
                label,
                source: format!("synthetic/{}/{i}", label.name()),
            });
        }
    }
    InMemoryDataset::new(extent, samples).expect("generated shapes are consistent")
}

/// Writes `per_class` PNGs per class under `root/<class>/NNNN.png`.
pub fn write_synthetic_tree(root: impl AsRef<Path>, per_class: usize, extent: usize, seed: u64) -> Result<()> {
    let root = root.as_ref();
    let ds = synthetic_dataset(per_class, extent, seed);
    for label in ClassLabel::ALL {
        fs::create_dir_all(root.join(label.name()))?;
    }
    for (n, s) in ds.samples().iter().enumerate() {
        let bytes: Vec<u8> = s.image.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
        let img = image::RgbImage::from_raw(extent as u32, extent as u32, bytes).expect("buffer size matches");
        let path = root.join(s.label.name()).join(format!("{:04}.png", n / 4));
        img.save(&path).map_err(|e| crate::Error::Decode { path, reason: e.to_string() })?;
    }
    Ok(())
}
