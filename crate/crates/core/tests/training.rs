use std::fs;

use weednet::data::synthetic::{synthetic_dataset, write_synthetic_tree};
use weednet::data::{split_dataset, FileDataset};
use weednet::model::{load_checkpoint, Checkpoint};
use weednet::train::{BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE, METRICS_HEADER};
use weednet::{build, predict, run_training, AdamHyper, ArchitectureConfig, ClassLabel, Profile, TrainConfig, Trainer};

fn config(epochs: usize) -> TrainConfig {
    TrainConfig { profile: Profile::Tiny, epochs, deterministic: true, ..TrainConfig::default() }
}

fn fresh_trainer() -> Trainer {
    Trainer::new(build(&ArchitectureConfig::tiny(), 3).unwrap(), AdamHyper::default()).unwrap()
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let ds = synthetic_dataset(2, 128, 5);
    let split = split_dataset(8, 0.7, 101).unwrap();
    let straight = tempfile::tempdir().unwrap();
    let resumed = tempfile::tempdir().unwrap();

    let mut t = fresh_trainer();
    run_training(&mut t, &ds, &split.train, &split.test, &config(2), Some(straight.path())).unwrap();

    let mut t = fresh_trainer();
    run_training(&mut t, &ds, &split.train, &split.test, &config(1), Some(resumed.path())).unwrap();
    let ckpt = load_checkpoint(resumed.path().join(LAST_CHECKPOINT)).unwrap();
    let mut t = Trainer::from_checkpoint(ckpt, AdamHyper::default()).unwrap();
    run_training(&mut t, &ds, &split.train, &split.test, &config(2), Some(resumed.path())).unwrap();

    for file in [METRICS_FILE, LAST_CHECKPOINT] {
        assert_eq!(
            fs::read(straight.path().join(file)).unwrap(),
            fs::read(resumed.path().join(file)).unwrap(),
            "{file} differs after resume"
        );
    }
    let metrics = fs::read_to_string(straight.path().join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.lines().next(), Some(METRICS_HEADER));
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn trains_from_image_directory_and_predicts_files() {
    let root = tempfile::tempdir().unwrap();
    write_synthetic_tree(root.path(), 2, 128, 11).unwrap();
    let ds = FileDataset::open(root.path(), 128).unwrap();
    assert_eq!(ds.listing.counts(), [2; 4]);

    let split = split_dataset(ds.listing.len(), 0.7, 101).unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut t = fresh_trainer();
    let (history, last) = run_training(&mut t, &ds, &split.train, &split.test, &config(1), Some(out.path())).unwrap();
    assert_eq!(history.records.len(), 1);
    assert_eq!(last.confusion.total() as usize, split.test.len());
    assert!(out.path().join(BEST_CHECKPOINT).exists());

    let graph = load_checkpoint(out.path().join(LAST_CHECKPOINT)).unwrap().graph;
    for label in ClassLabel::ALL {
        let p = predict(&graph, root.path().join(label.name()).join("0000.png")).unwrap();
        let sum: f32 = p.probabilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5, "probabilities sum to {sum}");
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let t = fresh_trainer();
    let bytes = Checkpoint { graph: t.graph, adam: Some(t.adam), step: 0 }.to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes).is_ok());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad_magic).is_err());
    assert!(Checkpoint::from_bytes(&[]).is_err());
}
