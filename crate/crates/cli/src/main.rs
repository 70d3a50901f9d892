use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use weednet::data::synthetic::synthetic_dataset;
use weednet::data::{read_split_manifest, split_dataset, write_split_manifest, DatasetSplit, FileDataset};
use weednet::eval::{REFERENCE_ACCURACY, REFERENCE_LOSS};
use weednet::gradcheck::run_suite;
use weednet::model::load_checkpoint;
use weednet::{
    build, evaluate, predict, run_training, summarize, AdamHyper, ArchitectureConfig, Profile, SampleSource,
    TrainConfig, Trainer,
};

/// Train, evaluate and inspect the two-branch weed/crop classifier.
#[derive(Parser)]
#[command(name = "weednet", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the layer table with output shapes and parameter counts.
    Summary {
        #[arg(long, value_enum, default_value_t = ProfileArg::Paper)]
        profile: ProfileArg,
        /// Emit JSON instead of the tab-separated table.
        #[arg(long)]
        json: bool,
    },
    /// Train a model, writing metrics.csv, confusion.txt and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Classify image files with a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Images to classify.
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = ProfileArg::Tiny)]
        profile: ProfileArg,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    /// 227×227 input.
    Paper,
    /// 128×128 input, same layers.
    Tiny,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Tiny => Profile::Tiny,
        }
    }
}

/// Where samples come from: a directory tree or generated patterns.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct SourceArgs {
    /// Directory with broadleaf/, grass/, soil/ and soybean/ subdirectories.
    #[arg(long)]
    dataset_root: Option<PathBuf>,
    /// Use this many generated images per class instead of files.
    #[arg(long)]
    synthetic: Option<usize>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value_t = 101)]
    seed_split: u64,
    /// Read the train/test assignment from a manifest instead of reshuffling.
    #[arg(long)]
    split_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, value_enum, default_value_t = ProfileArg::Paper)]
    profile: ProfileArg,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value_t = 2)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    seed_init: u64,
    #[arg(long, default_value_t = 2)]
    seed_shuffle: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Resume from this checkpoint; its architecture overrides --profile.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Required to train the 227×227 profile on a dataset directory.
    #[arg(long)]
    full: bool,
    /// Record 0 for wall time so repeated runs produce identical metrics files.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, value_enum, default_value_t = Part::Test)]
    part: Part,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Part {
    Train,
    Test,
    All,
}

/// The sample source, plus the file listing when it comes from disk.
fn open_source(args: &SourceArgs, extent: usize, seed: u64) -> Result<(Box<dyn SampleSource>, Option<FileDataset>)> {
    match (&args.dataset_root, args.synthetic) {
        (Some(root), _) => {
            let ds = FileDataset::open(root, extent)?;
            let c = ds.listing.counts();
            log::info!(
                "{}: {} images (broadleaf {}, grass {}, soil {}, soybean {})",
                root.display(),
                ds.listing.len(),
                c[0],
                c[1],
                c[2],
                c[3]
            );
            Ok((Box::new(ds.clone()), Some(ds)))
        }
        (None, Some(n)) => Ok((Box::new(synthetic_dataset(n, extent, seed)), None)),
        (None, None) => bail!("one of --dataset-root or --synthetic is required"),
    }
}

fn make_split(source: &dyn SampleSource, args: &SplitArgs, files: Option<&FileDataset>, fraction: f64) -> Result<DatasetSplit> {
    match (&args.split_manifest, files) {
        (Some(path), Some(ds)) => Ok(read_split_manifest(&ds.listing, path)?),
        (Some(_), None) => bail!("--split-manifest needs --dataset-root"),
        (None, _) => Ok(split_dataset(source.len(), fraction, args.seed_split)?),
    }
}

fn summary(profile: Profile, json: bool) -> Result<()> {
    let g = build::<f32>(&ArchitectureConfig::for_profile(profile), 0)?;
    let s = summarize(&g);
    if json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        print!("{}", s.to_text());
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let hyper = AdamHyper::with_learning_rate(args.lr);
    let mut trainer = match &args.checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            Trainer::from_checkpoint(ckpt, hyper)?
        }
        None => Trainer::new(build(&ArchitectureConfig::for_profile(args.profile.into()), args.seed_init)?, hyper)?,
    };
    let profile = trainer.graph.config().profile;
    let extent = trainer.graph.config().input_extent;

    if args.source.dataset_root.is_some() && profile == Profile::Paper {
        if !args.full {
            bail!("training the 227x227 profile on a dataset directory takes hours; pass --full to proceed, or use --profile tiny");
        }
        log::warn!("full-resolution training runs forward and backward on every image each epoch; expect hours of CPU time");
    }

    let config = TrainConfig {
        profile,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        seed_init: args.seed_init,
        seed_split: args.split.seed_split,
        seed_shuffle: args.seed_shuffle,
        deterministic: args.deterministic,
        ..TrainConfig::default()
    };
    config.validate()?;

    let (source, files) = open_source(&args.source, extent, args.seed_init)?;
    let split = make_split(source.as_ref(), &args.split, files.as_ref(), config.train_fraction)?;
    std::fs::create_dir_all(&args.out_dir)?;
    if let Some(ds) = &files {
        write_split_manifest(&ds.listing, &split, args.out_dir.join("split.tsv"))?;
    }
    log::info!("{} training / {} validation samples", split.train.len(), split.test.len());

    let (history, last) =
        run_training(&mut trainer, source.as_ref(), &split.train, &split.test, &config, Some(&args.out_dir))?;
    if let Some(best) = history.best() {
        println!("best validation accuracy {:.4} at epoch {}", best.val_acc, best.epoch);
    }
    println!("final validation loss {:.4}, accuracy {:.4}", last.loss, last.accuracy);
    print!("{}", last.confusion);
    println!("outputs in {}", args.out_dir.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let graph = ckpt.graph;
    let extent = graph.config().input_extent;
    // Synthetic samples use the same generator seed as `train` by default.
    let (source, files) = open_source(&args.source, extent, 1)?;
    let indices = match args.part {
        Part::All => (0..source.len()).collect(),
        part => {
            let split = make_split(source.as_ref(), &args.split, files.as_ref(), TrainConfig::default().train_fraction)?;
            if part == Part::Train { split.train } else { split.test }
        }
    };
    let ev = evaluate(&graph, source.as_ref(), &indices, args.batch_size)?;
    println!("samples   {}", indices.len());
    println!("{:<9} {:>9} {:>10}", "", "achieved", "reference");
    println!("{:<9} {:>9.4} {:>10.3}", "accuracy", ev.accuracy, REFERENCE_ACCURACY);
    println!("{:<9} {:>9.4} {:>10.3}", "loss", ev.loss, REFERENCE_LOSS);
    print!("{}", ev.confusion);
    Ok(())
}

fn predict_files(checkpoint: &Path, images: &[PathBuf]) -> Result<()> {
    let graph = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?.graph;
    for path in images {
        let p = predict(&graph, path)?;
        let probs: Vec<String> = p.probabilities.iter().map(|x| format!("{x:.6}")).collect();
        println!("{}\t{}\t[{}]", path.display(), p.label, probs.join(", "));
    }
    Ok(())
}

fn gradcheck(profile: Profile, seed: u64) -> Result<bool> {
    let report = run_suite(profile, seed)?;
    println!("{report}");
    Ok(report.passed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Summary { profile, json } => summary(profile.into(), json).map(|_| true),
        Command::Train(args) => train(args).map(|_| true),
        Command::Eval(args) => eval(args).map(|_| true),
        Command::Predict { checkpoint, images } => predict_files(&checkpoint, &images).map(|_| true),
        Command::Gradcheck { profile, seed } => gradcheck(profile.into(), seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
