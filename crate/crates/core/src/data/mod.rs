//! Dataset scanning, splitting, batching and preprocessing.
//!
//! Expected layout: `<root>/{broadleaf,grass,soil,soybean}/*.{png,jpg,jpeg,ppm,tif,tiff}`.

pub mod image;
pub mod synthetic;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub use self::image::{load_image, normalize, preprocess, resize_bilinear};

pub const NUM_CLASSES: usize = 4;

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "ppm", "tif", "tiff"];

/// The four classes, indexed alphabetically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Broadleaf = 0,
    Grass = 1,
    Soil = 2,
    Soybean = 3,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] =
        [ClassLabel::Broadleaf, ClassLabel::Grass, ClassLabel::Soil, ClassLabel::Soybean];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Broadleaf => "broadleaf",
            ClassLabel::Grass => "grass",
            ClassLabel::Soil => "soil",
            ClassLabel::Soybean => "soybean",
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::Input(format!("class index {index} out of range 0..{NUM_CLASSES}")))
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `[0, 0, 1, 0]` for index 2.
pub fn one_hot(label: ClassLabel) -> Tensor<f32> {
    let mut v = vec![0.0; NUM_CLASSES];
    v[label.index()] = 1.0;
    Tensor::new(&[NUM_CLASSES], v).expect("fixed shape")
}

/// A preprocessed image with its label.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `[E, E, 3]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: ClassLabel,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    /// Path relative to the dataset root with `/` separators, e.g. `soil/12.tif`.
    pub relative_path: String,
    pub label: ClassLabel,
}

/// Sorted file listing of a dataset root.
#[derive(Clone, Debug)]
pub struct DatasetListing {
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetListing {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for e in &self.entries {
            counts[e.label.index()] += 1;
        }
        counts
    }

    pub fn path(&self, index: usize) -> PathBuf {
        self.root.join(&self.entries[index].relative_path)
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Lists every image under the four class directories, sorted by relative path.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<DatasetListing> {
    let root = root.as_ref();
    let missing: Vec<_> = ClassLabel::ALL.iter().filter(|c| !root.join(c.name()).is_dir()).collect();
    if !missing.is_empty() {
        let mut found: Vec<String> = match fs::read_dir(root) {
            Ok(rd) => rd
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_dir())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect(),
            Err(_) => Vec::new(),
        };
        found.sort();
        let missing: Vec<_> = missing.iter().map(|c| c.name()).collect();
        return Err(Error::Dataset(format!(
            "{} is missing class directories {missing:?}; found subdirectories {found:?}",
            root.display()
        )));
    }

    let mut entries = Vec::new();
    for label in ClassLabel::ALL {
        let mut names: Vec<String> = fs::read_dir(root.join(label.name()))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_image(p))
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        names.sort();
        if names.is_empty() {
            log::warn!("class directory {} contains no images", root.join(label.name()).display());
        }
        entries.extend(names.into_iter().map(|n| DatasetEntry {
            relative_path: format!("{}/{n}", label.name()),
            label,
        }));
    }
    // Class names are already in alphabetical order, so this is a no-op on
    // well-formed trees; it pins the contract regardless.
    entries.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
    Ok(DatasetListing { root: root.to_path_buf(), entries })
}

/// Train/test partition as indices into a listing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// `None` when the split was imported from a manifest.
    pub seed: Option<u64>,
}

/// Number of training items for `n` items at `train_fraction`, computed as
/// `floor(n · fraction)` with the fraction rounded to parts per million so that
/// decimal fractions such as 0.7 are exact.
pub fn train_size(n: usize, train_fraction: f64) -> usize {
    let ppm = (train_fraction * 1e6).round() as u128;
    (n as u128 * ppm / 1_000_000) as usize
}

/// Seeded Fisher–Yates shuffle of `0..n`; the first `floor(fraction·n)` go to training.
pub fn split_dataset(n: usize, train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if n < 2 {
        return Err(Error::Dataset(format!("cannot split {n} items; need at least 2")));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Dataset(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let test = order.split_off(train_size(n, train_fraction));
    Ok(DatasetSplit { train: order, test, seed: Some(seed) })
}

/// Batch index lists for one epoch: `part` reshuffled by `(seed, epoch)` and
/// chunked, with a trailing partial batch kept.
pub fn epoch_batches(part: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order = part.to_vec();
    SplitMix64::derived(seed, epoch as u64).shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Writes `relative_path<TAB>train|test` lines, training entries first.
pub fn write_split_manifest(listing: &DatasetListing, split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (indices, tag) in [(&split.train, "train"), (&split.test, "test")] {
        for &i in indices {
            out.push_str(&listing.entries[i].relative_path);
            out.push('\t');
            out.push_str(tag);
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a manifest back against `listing`. Every listed file must appear
/// exactly once.
pub fn read_split_manifest(listing: &DatasetListing, path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let index: HashMap<&str, usize> =
        listing.entries.iter().enumerate().map(|(i, e)| (e.relative_path.as_str(), i)).collect();
    let mut seen = vec![false; listing.len()];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |why: &str| Error::Dataset(format!("{}:{}: {why}: {line:?}", path.display(), n + 1));
        let (rel, tag) = line.split_once('\t').ok_or_else(|| bad("expected <path>\\t<train|test>"))?;
        let &i = index.get(rel).ok_or_else(|| bad("file not in dataset"))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(bad("duplicate entry"));
        }
        match tag {
            "train" => train.push(i),
            "test" => test.push(i),
            _ => return Err(bad("tag must be train or test")),
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Dataset(format!(
            "{} does not assign {}",
            path.display(),
            listing.entries[i].relative_path
        )));
    }
    Ok(DatasetSplit { train, test, seed: None })
}

/// Random access to labeled, preprocessed images.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Side length every image is delivered at.
    fn extent(&self) -> usize;

    fn label(&self, index: usize) -> ClassLabel;

    /// `[E, E, 3]` image with values in `[0, 1]`.
    fn image(&self, index: usize) -> Result<Tensor<f32>>;

    fn describe(&self, index: usize) -> String;
}

/// Images decoded from disk on demand.
#[derive(Clone, Debug)]
pub struct FileDataset {
    pub listing: DatasetListing,
    pub extent: usize,
}

impl FileDataset {
    pub fn open(root: impl AsRef<Path>, extent: usize) -> Result<Self> {
        Ok(Self { listing: scan_dataset(root)?, extent })
    }
}

impl SampleSource for FileDataset {
    fn len(&self) -> usize {
        self.listing.len()
    }

    fn extent(&self) -> usize {
        self.extent
    }

    fn label(&self, index: usize) -> ClassLabel {
        self.listing.entries[index].label
    }

    fn image(&self, index: usize) -> Result<Tensor<f32>> {
        preprocess(self.listing.path(index), self.extent)
    }

    fn describe(&self, index: usize) -> String {
        self.listing.entries[index].relative_path.clone()
    }
}

/// Fully materialized samples, e.g. the synthetic fixtures.
#[derive(Clone, Debug)]
pub struct InMemoryDataset {
    extent: usize,
    samples: Vec<Sample>,
}

impl InMemoryDataset {
    pub fn new(extent: usize, samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            if s.image.dims() != [extent, extent, 3] {
                return Err(Error::Shape(format!(
                    "sample {} has shape {:?}, expected [{extent}, {extent}, 3]",
                    s.source,
                    s.image.shape()
                )));
            }
        }
        Ok(Self { extent, samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
}

impl SampleSource for InMemoryDataset {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn extent(&self) -> usize {
        self.extent
    }

    fn label(&self, index: usize) -> ClassLabel {
        self.samples[index].label
    }

    fn image(&self, index: usize) -> Result<Tensor<f32>> {
        Ok(self.samples[index].image.clone())
    }

    fn describe(&self, index: usize) -> String {
        self.samples[index].source.clone()
    }
}

/// Stacks the selected samples into `[B, E, E, 3]` images and `[B, 4]` one-hot labels.
pub fn assemble_batch(source: &dyn SampleSource, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let e = source.extent();
    let mut images = Vec::with_capacity(indices.len() * e * e * 3);
    let mut labels = Vec::with_capacity(indices.len() * NUM_CLASSES);
    for &i in indices {
        let img = source.image(i)?;
        if img.dims() != [e, e, 3] {
            return Err(Error::Shape(format!("{} decoded to {:?}", source.describe(i), img.shape())));
        }
        images.extend_from_slice(img.data());
        labels.extend_from_slice(one_hot(source.label(i)).data());
    }
    Ok((
        Tensor::new(&[indices.len(), e, e, 3], images)?,
        Tensor::new(&[indices.len(), NUM_CLASSES], labels)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_tree(per_class: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for c in ClassLabel::ALL {
            let d = dir.path().join(c.name());
            fs::create_dir(&d).unwrap();
            for i in 0..per_class {
                ::image::RgbImage::from_pixel(4, 4, ::image::Rgb([c.index() as u8 * 60, 10, 20]))
                    .save(d.join(format!("{i}.png")))
                    .unwrap();
            }
            fs::write(d.join("notes.txt"), "ignored").unwrap();
        }
        dir
    }

    #[test]
    fn label_mapping_is_alphabetical_bijection() {
        for (i, c) in ClassLabel::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(ClassLabel::from_index(i).unwrap(), *c);
            assert_eq!(ClassLabel::from_name(c.name()), Some(*c));
        }
        let mut names: Vec<_> = ClassLabel::ALL.iter().map(|c| c.name()).collect();
        names.sort();
        assert_eq!(names, ["broadleaf", "grass", "soil", "soybean"]);
        assert!(ClassLabel::from_index(4).is_err());
    }

    #[test]
    fn one_hot_vectors() {
        assert_eq!(one_hot(ClassLabel::Soil).data(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(one_hot(ClassLabel::Broadleaf).data(), &[1.0, 0.0, 0.0, 0.0]);
        for c in ClassLabel::ALL {
            assert_eq!(one_hot(c).data().iter().sum::<f32>(), 1.0);
        }
    }

    #[test]
    fn scan_fixture_tree() {
        let dir = fixture_tree(2);
        let listing = scan_dataset(dir.path()).unwrap();
        let paths: Vec<_> = listing.entries.iter().map(|e| e.relative_path.as_str()).collect();
        assert_eq!(
            paths,
            [
                "broadleaf/0.png",
                "broadleaf/1.png",
                "grass/0.png",
                "grass/1.png",
                "soil/0.png",
                "soil/1.png",
                "soybean/0.png",
                "soybean/1.png"
            ]
        );
        assert_eq!(listing.counts(), [2, 2, 2, 2]);
    }

    #[test]
    fn scan_empty_classes() {
        let dir = fixture_tree(0);
        let listing = scan_dataset(dir.path()).unwrap();
        assert!(listing.is_empty());
        assert_eq!(listing.counts(), [0; 4]);
    }

    #[test]
    fn scan_reports_missing_directories() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("grass")).unwrap();
        fs::create_dir(dir.path().join("weeds")).unwrap();
        let msg = scan_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("broadleaf") && msg.contains("weeds"), "{msg}");
    }

    #[test]
    fn split_sizes() {
        assert_eq!(train_size(15_336, 0.7), 10_735);
        let s = split_dataset(15_336, 0.7, 101).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (10_735, 4_601));
        let s = split_dataset(10, 0.7, 101).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
        assert!(matches!(split_dataset(1, 0.7, 101), Err(Error::Dataset(_))));
    }

    #[test]
    fn split_is_seeded() {
        let a = split_dataset(100, 0.7, 101).unwrap();
        assert_eq!(a, split_dataset(100, 0.7, 101).unwrap());
        let b = split_dataset(100, 0.7, 102).unwrap();
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn batches_partition_each_epoch() {
        let part: Vec<usize> = (0..5).collect();
        let b = epoch_batches(&part, 2, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [2, 2, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, part);

        let part: Vec<usize> = (0..100).collect();
        let e0 = epoch_batches(&part, 2, 7, 0);
        let e1 = epoch_batches(&part, 2, 7, 1);
        assert_ne!(e0, e1);
        assert_eq!(e0, epoch_batches(&part, 2, 7, 0));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = fixture_tree(3);
        let listing = scan_dataset(dir.path()).unwrap();
        let split = split_dataset(listing.len(), 0.7, 101).unwrap();
        let path = dir.path().join("split.tsv");
        write_split_manifest(&listing, &split, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 12);
        assert!(text.lines().all(|l| l.ends_with("\ttrain") || l.ends_with("\ttest")));
        let back = read_split_manifest(&listing, &path).unwrap();
        assert_eq!((back.train, back.test), (split.train, split.test));

        fs::write(&path, "soil/0.png\ttrain\n").unwrap();
        assert!(read_split_manifest(&listing, &path).is_err());
        fs::write(&path, "nope.png\ttest\n").unwrap();
        assert!(read_split_manifest(&listing, &path).is_err());
    }

    #[test]
    fn file_dataset_batches() {
        let dir = fixture_tree(1);
        let ds = FileDataset::open(dir.path(), 6).unwrap();
        let (x, y) = assemble_batch(&ds, &[3, 0]).unwrap();
        assert_eq!(x.dims(), &[2, 6, 6, 3]);
        assert_eq!(y.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // soybean red channel: 180 / 255
        assert_eq!(x.data()[0], 180.0 / 255.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_partitions(n in 2usize..400, seed in any::<u64>()) {
                let s = split_dataset(n, 0.7, seed).unwrap();
                prop_assert_eq!(s.train.len(), n * 7 / 10);
                let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
                all.sort();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }

            #[test]
            fn epoch_covers_part_once(n in 1usize..60, batch in 1usize..5, seed in any::<u64>(), epoch in 0usize..20) {
                let part: Vec<usize> = (0..n).map(|i| i * 3).collect();
                let batches = epoch_batches(&part, batch, seed, epoch);
                prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
                let mut all = batches.concat();
                all.sort();
                prop_assert_eq!(all, part);
            }
        }
    }
}
