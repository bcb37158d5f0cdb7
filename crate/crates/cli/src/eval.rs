//! `flsprop eval`: recall and proposal-count curves for the learned model
//! and the random-scoring baseline.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use fls_core::dataset::{load_dataset, split_frames};
use fls_core::eval::{
    matched_count_comparison, parse_threshold_grid, random_scores, score_frames, sweep,
    write_curve_csv, CurveRecord, DominancePoint, DEFAULT_MATCH_IOU,
};
use fls_core::neuralnet::decode_checkpoint;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::manifest::{write_file, RunManifest};
use crate::{Failure, Stage, WindowArgs};

pub const CURVE_FILE: &str = "curve.csv";
pub const CURVE_NMS_FILE: &str = "curve_nms.csv";
pub const BASELINE_FILE: &str = "baseline.csv";
pub const BASELINE_NMS_FILE: &str = "baseline_nms.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    /// Held-out test split of the training partition
    Test,
    /// Every frame in the dataset
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BaselineChoice {
    Random,
    None,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Frames to evaluate
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    /// Must match the split seed used for training
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Threshold grid, `start:end:step` (inclusive) or a comma list
    #[arg(long, default_value = "0:1:0.05")]
    pub thresholds: String,
    /// IoU threshold of the NMS variant of each curve
    #[arg(long, default_value_t = 0.5)]
    pub nms_iou: f64,
    #[arg(long, value_enum, default_value_t = BaselineChoice::Random)]
    pub baseline: BaselineChoice,
    /// Seed of the random baseline scores
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct Curves {
    pub learned: Vec<CurveRecord>,
    pub learned_nms: Vec<CurveRecord>,
    pub baseline: Option<Vec<CurveRecord>>,
    pub baseline_nms: Option<Vec<CurveRecord>>,
    /// Baseline recall interpolated at the learned curve's proposal counts.
    pub matched_count: Option<Vec<DominancePoint>>,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    dataset: &'a Path,
    checkpoint: &'a Path,
    checkpoint_sha256: String,
    split: SplitChoice,
    split_seed: u64,
    baseline_seed: u64,
    frame_ids: Vec<u32>,
    ground_truth_boxes: usize,
    match_iou: f64,
    nms_iou: f64,
    curves: &'a Curves,
}

#[derive(Serialize)]
struct ResolvedEval<'a> {
    split: SplitChoice,
    thresholds: &'a [f64],
    nms_iou: f64,
    match_iou: f64,
    baseline: BaselineChoice,
    window: fls_core::geometry::WindowConfig,
}

pub fn run(args: &EvalArgs, threads: Option<usize>) -> Result<(), Failure> {
    let window = args.window.config()?;
    let thresholds = parse_threshold_grid(&args.thresholds).stage("parsing --thresholds")?;
    if !(args.nms_iou > 0.0 && args.nms_iou <= 1.0) {
        return Err(Failure::usage("--nms-iou must lie in (0, 1]"));
    }
    let mut manifest = RunManifest::start(
        "eval",
        threads,
        ResolvedEval {
            split: args.split,
            thresholds: &thresholds,
            nms_iou: args.nms_iou,
            match_iou: DEFAULT_MATCH_IOU,
            baseline: args.baseline,
            window,
        },
    );
    manifest
        .seed("split", args.split_seed)
        .seed("baseline", args.seed)
        .input("checkpoint", &args.checkpoint)
        .input("dataset", &args.data);

    let bytes = std::fs::read(&args.checkpoint).map_err(|e| {
        Failure::data(anyhow::anyhow!(
            "loading checkpoint {}: {e}",
            args.checkpoint.display()
        ))
    })?;
    let (net, _) = decode_checkpoint(&bytes)
        .stage(&format!("loading checkpoint {}", args.checkpoint.display()))?;
    let digest = format!("{:x}", Sha256::digest(&bytes));

    let mut frames = load_dataset(&args.data).stage("loading dataset")?;
    if args.split == SplitChoice::Test {
        frames = split_frames(frames, args.split_seed)
            .stage("splitting dataset")?
            .test;
    }

    let started = Instant::now();
    let scored = score_frames(&net, &frames, &window).stage("scoring frames")?;
    let scoring_seconds = started.elapsed().as_secs_f64();
    let per_frame = scoring_seconds / frames.len() as f64;
    eprintln!(
        "scored {} frames in {scoring_seconds:.1} s ({per_frame:.3} s per frame)",
        frames.len()
    );

    let nms = Some(args.nms_iou);
    let learned = sweep(&scored, &thresholds, None, DEFAULT_MATCH_IOU).stage("sweeping")?;
    let learned_nms = sweep(&scored, &thresholds, nms, DEFAULT_MATCH_IOU).stage("sweeping")?;
    let (baseline, baseline_nms) = match args.baseline {
        BaselineChoice::Random => {
            let random = random_scores(&frames, &window, args.seed).stage("baseline scores")?;
            (
                Some(sweep(&random, &thresholds, None, DEFAULT_MATCH_IOU).stage("baseline sweep")?),
                Some(sweep(&random, &thresholds, nms, DEFAULT_MATCH_IOU).stage("baseline sweep")?),
            )
        }
        BaselineChoice::None => (None, None),
    };
    let matched_count = baseline
        .as_ref()
        .map(|b| matched_count_comparison(&learned, b));
    let curves = Curves {
        learned,
        learned_nms,
        baseline,
        baseline_nms,
        matched_count,
    };

    let out = &args.out;
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::data(anyhow::anyhow!("creating {}: {e}", out.display())))?;
    let mut write_curve = |name: &str, file: &str, records: &[CurveRecord]| {
        let path = out.join(file);
        write_curve_csv(records, &path).stage("writing curve")?;
        manifest.output(name, &path);
        Ok::<_, Failure>(())
    };
    write_curve("curve", CURVE_FILE, &curves.learned)?;
    write_curve("curve_nms", CURVE_NMS_FILE, &curves.learned_nms)?;
    if let (Some(b), Some(bn)) = (&curves.baseline, &curves.baseline_nms) {
        write_curve("baseline", BASELINE_FILE, b)?;
        write_curve("baseline_nms", BASELINE_NMS_FILE, bn)?;
    }

    let summary = Summary {
        dataset: &args.data,
        checkpoint: &args.checkpoint,
        checkpoint_sha256: digest,
        split: args.split,
        split_seed: args.split_seed,
        baseline_seed: args.seed,
        frame_ids: frames.iter().map(|f| f.id).collect(),
        ground_truth_boxes: frames.iter().map(|f| f.ground_truth.len()).sum(),
        match_iou: DEFAULT_MATCH_IOU,
        nms_iou: args.nms_iou,
        curves: &curves,
    };
    let summary_path = out.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&summary_path, text.as_bytes())?;
    manifest.output("summary", &summary_path);

    for r in &curves.learned {
        if (r.threshold - 0.5).abs() < 1e-9 || (r.threshold - 0.1).abs() < 1e-9 {
            eprintln!(
                "T_o {:.2}: recall {:.3}, {:.1} ± {:.1} proposals per frame",
                r.threshold, r.recall, r.mean_proposals, r.std_proposals
            );
        }
    }
    manifest.report = serde_json::json!({
        "frames": frames.len(),
        "scoring_seconds": scoring_seconds,
        "scoring_seconds_per_frame": per_frame,
    });
    manifest.finish(&out.join(MANIFEST_FILE))
}
