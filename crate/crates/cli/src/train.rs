//! `flsprop train`: split a dataset, build crops and fit the network.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use fls_core::dataset::{build_crops, load_dataset, split_frames, CropConfig};
use fls_core::neuralnet::{
    save_checkpoint, train_with_progress, AdamConfig, CheckpointMeta, EpochRecord, Network,
    TrainConfig,
};
use fls_core::seed::derive_seed;
use serde::Serialize;

use crate::manifest::{write_file, RunManifest};
use crate::{sibling, Failure, Stage, WindowArgs};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write
    #[arg(long, default_value = "model.flsn")]
    pub out: PathBuf,
    /// ADAM learning rate
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Maximum number of epochs
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Epochs without validation improvement before stopping
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Random negative windows per frame
    #[arg(long, default_value_t = 20)]
    pub negatives: usize,
    /// Minimum IoU for positive crops
    #[arg(long, default_value_t = 0.5)]
    pub min_iou: f64,
    /// Maximum IoU for sampled negatives
    #[arg(long, default_value_t = 0.1)]
    pub neg_max_iou: f64,
    /// Also train on windows with 0.2 < IoU < min-iou (soft labels)
    #[arg(long)]
    pub include_intermediate: bool,
    /// Add the combined up-down + left-right flip
    #[arg(long)]
    pub combined_flip: bool,
    /// Seed for initialization, negative sampling and batch order
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the train/val/test frame split
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Serialize)]
struct ResolvedTrain<'a> {
    crops: &'a CropConfig,
    training: &'a TrainConfig,
}

pub const LOSS_CSV_HEADER: &str = "epoch,train_loss,val_loss";

pub fn format_loss_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{LOSS_CSV_HEADER}\n");
    for r in history {
        let _ = writeln!(s, "{},{:.9},{:.9}", r.epoch, r.train_loss, r.val_loss);
    }
    s
}

pub fn run(args: &TrainArgs, threads: Option<usize>) -> Result<(), Failure> {
    let crop_cfg = CropConfig {
        window: args.window.config()?,
        min_iou: args.min_iou,
        negatives_per_frame: args.negatives,
        negative_max_iou: args.neg_max_iou,
        include_intermediate: args.include_intermediate,
        combined_flip: args.combined_flip,
    };
    if !(0.0..=1.0).contains(&args.min_iou) || !(0.0..=1.0).contains(&args.neg_max_iou) {
        return Err(Failure::usage("IoU thresholds must lie in [0, 1]"));
    }
    let train_cfg = TrainConfig {
        batch_size: args.batch_size,
        adam: AdamConfig {
            learning_rate: args.lr,
            ..AdamConfig::default()
        },
        max_epochs: args.epochs,
        patience: args.patience,
        seed: derive_seed(args.seed, 4),
    };
    train_cfg.validate().stage("training config")?;

    let init_seed = derive_seed(args.seed, 1);
    let train_neg_seed = derive_seed(args.seed, 2);
    let val_neg_seed = derive_seed(args.seed, 3);
    let mut manifest = RunManifest::start(
        "train",
        threads,
        ResolvedTrain {
            crops: &crop_cfg,
            training: &train_cfg,
        },
    );
    manifest
        .seed("master", args.seed)
        .seed("split", args.split_seed)
        .seed("init", init_seed)
        .seed("train_negatives", train_neg_seed)
        .seed("val_negatives", val_neg_seed)
        .seed("batch_order", train_cfg.seed)
        .input("dataset", &args.data);

    let frames = load_dataset(&args.data).stage("loading dataset")?;
    let split = split_frames(frames, args.split_seed).stage("splitting dataset")?;
    let train_crops = build_crops(&split.train, &crop_cfg, train_neg_seed, true)
        .stage("building training crops")?;
    // validation crops are not augmented
    let val_crops = build_crops(&split.val, &crop_cfg, val_neg_seed, false)
        .stage("building validation crops")?;
    eprintln!(
        "frames train/val/test {}/{}/{}; crops train {} val {}",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        train_crops.len(),
        val_crops.len()
    );

    let net = Network::<f32>::init(init_seed);
    let outcome = train_with_progress(net, &train_crops, &val_crops, &train_cfg, |r| {
        eprintln!(
            "epoch {:>2}  train {:.6}  val {:.6}",
            r.epoch, r.train_loss, r.val_loss
        );
    })
    .stage("training")?;

    let meta = CheckpointMeta {
        epochs_run: outcome.history.len() as u32,
        best_val_loss: outcome.best_val_loss as f32,
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::data(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
    }
    save_checkpoint(&outcome.network, &meta, &args.out).stage("writing checkpoint")?;
    let loss_path = sibling(&args.out, ".loss.csv");
    write_file(&loss_path, format_loss_csv(&outcome.history).as_bytes())?;

    let ids = |fs: &[fls_core::dataset::LabeledFrame]| fs.iter().map(|f| f.id).collect::<Vec<_>>();
    manifest.report = serde_json::json!({
        "split": {
            "train": ids(&split.train),
            "val": ids(&split.val),
            "test": ids(&split.test),
        },
        "train_crops": train_crops.len(),
        "val_crops": val_crops.len(),
        "history": outcome.history,
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss,
        "stopped_early": outcome.stopped_early,
    });
    manifest
        .output("checkpoint", &args.out)
        .output("loss_csv", &loss_path);
    manifest.finish(&sibling(&args.out, ".manifest.json"))?;
    eprintln!(
        "best epoch {} (val {:.6}); wrote {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        args.out.display()
    );
    Ok(())
}
