//! Recall against proposal count: threshold sweeps for the learned scorer
//! and for a uniform-random baseline, plus the curve file format.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledFrame;
use crate::error::{Error, Result};
use crate::geometry::{enumerate_windows, iou, BoundingBox, ScoredWindow, WindowConfig};
use crate::neuralnet::Network;
use crate::proposals::{score_frame, threshold_proposals};
use crate::seed::derive_seed;

pub const CURVE_CSV_HEADER: &str = "threshold recall numberOfProposals proposalStd";
pub const DEFAULT_MATCH_IOU: f64 = 0.5;

/// One point of a threshold sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub threshold: f64,
    pub recall: f64,
    /// Mean proposals per frame.
    pub mean_proposals: f64,
    /// Population standard deviation of proposals per frame.
    pub std_proposals: f64,
}

/// Window scores of one frame, kept so that a sweep scores each frame once.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredFrame {
    pub frame_id: u32,
    pub windows: Vec<ScoredWindow>,
    pub ground_truth: Vec<BoundingBox>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecallCounts {
    pub matched: usize,
    pub total: usize,
}

impl RecallCounts {
    pub fn recall(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::InvalidInput(
                "recall is undefined without ground-truth boxes".into(),
            ));
        }
        Ok(self.matched as f64 / self.total as f64)
    }
}

/// Ground-truth boxes matched by at least one proposal with IoU >= `min_iou`.
/// Matching is not one-to-one: a proposal may match several boxes.
pub fn match_counts<P, G>(proposals: &[P], ground_truth: &[G], min_iou: f64) -> Result<RecallCounts>
where
    P: AsRef<[BoundingBox]>,
    G: AsRef<[BoundingBox]>,
{
    if proposals.len() != ground_truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} proposal lists for {} frames",
            proposals.len(),
            ground_truth.len()
        )));
    }
    let mut counts = RecallCounts {
        matched: 0,
        total: 0,
    };
    for (props, gts) in proposals.iter().zip(ground_truth) {
        for g in gts.as_ref() {
            counts.total += 1;
            for p in props.as_ref() {
                if iou(p, g)? >= min_iou {
                    counts.matched += 1;
                    break;
                }
            }
        }
    }
    Ok(counts)
}

pub fn recall_at<P, G>(proposals: &[P], ground_truth: &[G], min_iou: f64) -> Result<f64>
where
    P: AsRef<[BoundingBox]>,
    G: AsRef<[BoundingBox]>,
{
    match_counts(proposals, ground_truth, min_iou)?.recall()
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Scores every in-fan window of each frame with the network.
pub fn score_frames(
    net: &Network<f32>,
    frames: &[LabeledFrame],
    cfg: &WindowConfig,
) -> Result<Vec<ScoredFrame>> {
    frames
        .par_iter()
        .map(|f| {
            Ok(ScoredFrame {
                frame_id: f.id,
                windows: score_frame(net, f, cfg)?,
                ground_truth: f.ground_truth.clone(),
            })
        })
        .collect()
}

/// Scores every in-fan window with an independent uniform draw in `[0, 1)`.
/// Each frame has its own stream derived from `(seed, frame id)`.
pub fn random_scores(
    frames: &[LabeledFrame],
    cfg: &WindowConfig,
    seed: u64,
) -> Result<Vec<ScoredFrame>> {
    frames
        .par_iter()
        .map(|f| {
            let windows = enumerate_windows(Some(&f.fan), f.image.width(), f.image.height(), cfg)
                .map_err(|e| Error::dataset(f.id, e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, f.id as u64));
            Ok(ScoredFrame {
                frame_id: f.id,
                windows: windows
                    .into_iter()
                    .map(|window| ScoredWindow {
                        window,
                        objectness: rng.random::<f32>(),
                    })
                    .collect(),
                ground_truth: f.ground_truth.clone(),
            })
        })
        .collect()
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::InvalidInput("empty threshold list".into()));
    }
    if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidInput(format!(
            "thresholds must lie in [0, 1]: {thresholds:?}"
        )));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(format!(
            "thresholds must be strictly ascending: {thresholds:?}"
        )));
    }
    Ok(())
}

/// Recall and per-frame proposal counts at each threshold, reusing the
/// cached scores. `nms_iou` enables non-maximum suppression.
pub fn sweep(
    scored: &[ScoredFrame],
    thresholds: &[f64],
    nms_iou: Option<f64>,
    min_iou: f64,
) -> Result<Vec<CurveRecord>> {
    check_thresholds(thresholds)?;
    if scored.is_empty() {
        return Err(Error::InvalidInput("no frames to evaluate".into()));
    }
    let gts: Vec<&[BoundingBox]> = scored.iter().map(|s| s.ground_truth.as_slice()).collect();
    thresholds
        .iter()
        .map(|&t| {
            let props: Vec<Vec<BoundingBox>> = scored
                .iter()
                .map(|s| {
                    threshold_proposals(&s.windows, t, nms_iou)
                        .into_iter()
                        .map(|p| p.window)
                        .collect()
                })
                .collect();
            let counts: Vec<f64> = props.iter().map(|p| p.len() as f64).collect();
            let (mean, std) = mean_std(&counts);
            Ok(CurveRecord {
                threshold: t,
                recall: recall_at(&props, &gts, min_iou)?,
                mean_proposals: mean,
                std_proposals: std,
            })
        })
        .collect()
}

/// Scores the frames once with the network and sweeps the thresholds.
pub fn threshold_sweep(
    net: &Network<f32>,
    frames: &[LabeledFrame],
    thresholds: &[f64],
    cfg: &WindowConfig,
    nms_iou: Option<f64>,
) -> Result<Vec<CurveRecord>> {
    check_thresholds(thresholds)?;
    let scored = score_frames(net, frames, cfg)?;
    sweep(&scored, thresholds, nms_iou, DEFAULT_MATCH_IOU)
}

/// The same sweep with uniform-random window scores.
pub fn random_baseline_sweep(
    frames: &[LabeledFrame],
    thresholds: &[f64],
    cfg: &WindowConfig,
    seed: u64,
    nms_iou: Option<f64>,
) -> Result<Vec<CurveRecord>> {
    check_thresholds(thresholds)?;
    let scored = random_scores(frames, cfg, seed)?;
    sweep(&scored, thresholds, nms_iou, DEFAULT_MATCH_IOU)
}

/// Parses `start:end:step` (inclusive of `end`) or a comma-separated list.
pub fn parse_threshold_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |msg: &str| Error::InvalidInput(format!("threshold grid {spec:?}: {msg}"));
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(&format!("{s:?} is not a number")))
    };
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, end, step] = parts.as_slice() else {
            return Err(bad("expected start:end:step"));
        };
        let (start, end, step) = (num(start)?, num(end)?, num(step)?);
        if step.is_nan() || step <= 0.0 || end < start {
            return Err(bad("need step > 0 and end >= start"));
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        // rounding keeps grid points like 0.15 exact to the printed precision
        (0..=n)
            .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
            .collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    check_thresholds(&values)?;
    Ok(values)
}

pub fn format_curve_csv(records: &[CurveRecord]) -> String {
    let mut s = String::from(CURVE_CSV_HEADER);
    s.push('\n');
    for r in records {
        writeln!(
            s,
            "{:.6} {:.6} {:.6} {:.6}",
            r.threshold, r.recall, r.mean_proposals, r.std_proposals
        )
        .expect("writing to a String");
    }
    s
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurveRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_CSV_HEADER) {
        return Err(Error::InvalidInput(
            "curve file has an unexpected header".into(),
        ));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let v = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidInput(format!("curve row {}: {e}", i + 1)))?;
            match v.as_slice() {
                &[threshold, recall, mean_proposals, std_proposals] => Ok(CurveRecord {
                    threshold,
                    recall,
                    mean_proposals,
                    std_proposals,
                }),
                _ => Err(Error::InvalidInput(format!(
                    "curve row {} has {} columns, expected 4",
                    i + 1,
                    v.len()
                ))),
            }
        })
        .collect()
}

pub fn write_curve_csv(records: &[CurveRecord], path: &Path) -> Result<()> {
    std::fs::write(path, format_curve_csv(records)).map_err(|e| Error::io(path, e))
}

/// Recall of a curve at a given mean proposal count, linearly interpolated
/// between the two records whose counts bracket it. Counts outside the
/// curve's range take the recall of the nearest end.
pub fn recall_at_count(curve: &[CurveRecord], count: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|r| (r.mean_proposals, r.recall)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (first, last) = (*pts.first()?, *pts.last()?);
    if count <= first.0 {
        return Some(first.1);
    }
    if count >= last.0 {
        return Some(last.1);
    }
    let i = pts.partition_point(|p| p.0 <= count);
    let (lo, hi) = (pts[i - 1], pts[i]);
    let f = (count - lo.0) / (hi.0 - lo.0);
    Some(lo.1 + f * (hi.1 - lo.1))
}

/// Learned and baseline recall at the learned curve's operating points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominancePoint {
    pub threshold: f64,
    pub mean_proposals: f64,
    pub learned_recall: f64,
    pub baseline_recall: f64,
}

pub fn matched_count_comparison(
    learned: &[CurveRecord],
    baseline: &[CurveRecord],
) -> Vec<DominancePoint> {
    learned
        .iter()
        .filter_map(|r| {
            Some(DominancePoint {
                threshold: r.threshold,
                mean_proposals: r.mean_proposals,
                learned_recall: r.recall,
                baseline_recall: recall_at_count(baseline, r.mean_proposals)?,
            })
        })
        .collect()
}
