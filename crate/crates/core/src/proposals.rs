//! Scoring sliding windows, thresholding them into proposals, and
//! objectness heatmaps.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledFrame;
use crate::error::{Error, Result};
pub use crate::geometry::ScoredWindow;
use crate::geometry::{enumerate_windows, nms, rank_order, FanGeometry, WindowConfig};
use crate::neuralnet::{predict_crops, Network};
use crate::raster::SonarImage;

pub const PROPOSAL_CSV_HEADER: &str = "frame,x,y,w,h,score";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub threshold: f64,
    pub nms: bool,
    pub nms_iou: f64,
    pub window: WindowConfig,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            threshold: 0.5,
            nms: false,
            nms_iou: 0.5,
            window: WindowConfig::default(),
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidInput(format!(
                "objectness threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::InvalidInput(format!(
                "NMS IoU threshold must lie in [0, 1], got {}",
                self.nms_iou
            )));
        }
        self.window.validate()
    }
}

/// Scores every window of an image, in enumeration order. With a fan, only
/// windows inside the field of view are scored.
pub fn score_image(
    net: &Network<f32>,
    image: &SonarImage,
    fan: Option<&FanGeometry>,
    cfg: &WindowConfig,
) -> Result<Vec<ScoredWindow>> {
    let ws = cfg.window_size;
    if image.width() < ws || image.height() < ws {
        return Err(Error::Shape(format!(
            "{}x{} image is smaller than the {ws} px window",
            image.width(),
            image.height()
        )));
    }
    let windows = enumerate_windows(fan, image.width(), image.height(), cfg)?;
    let crops = windows
        .iter()
        .map(|w| image.normalized_crop(w))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f32]> = crops.iter().map(Vec::as_slice).collect();
    let scores = predict_crops(net, &refs)?;
    Ok(windows
        .into_iter()
        .zip(scores)
        .map(|(window, objectness)| ScoredWindow { window, objectness })
        .collect())
}

pub fn score_frame(
    net: &Network<f32>,
    frame: &LabeledFrame,
    cfg: &WindowConfig,
) -> Result<Vec<ScoredWindow>> {
    score_image(net, &frame.image, Some(&frame.fan), cfg)
        .map_err(|e| Error::dataset(frame.id, e.to_string()))
}

/// Windows scoring strictly above `threshold`, optionally NMS-filtered,
/// sorted by descending score (ties in row-major window order).
pub fn threshold_proposals(
    scored: &[ScoredWindow],
    threshold: f64,
    nms_iou: Option<f64>,
) -> Vec<ScoredWindow> {
    let mut kept: Vec<ScoredWindow> = scored
        .iter()
        .filter(|s| s.objectness as f64 > threshold)
        .copied()
        .collect();
    match nms_iou {
        Some(t) => nms(&kept, t),
        None => {
            kept.sort_by(rank_order);
            kept
        }
    }
}

/// [`threshold_proposals`] with the settings of a [`ProposalConfig`].
pub fn propose(scored: &[ScoredWindow], cfg: &ProposalConfig) -> Vec<ScoredWindow> {
    threshold_proposals(scored, cfg.threshold, cfg.nms.then_some(cfg.nms_iou))
}

/// Objectness heatmap: a white canvas on which each window paints a
/// `stride × stride` block at its center with `round(max · (1 − score))`.
/// Later windows overwrite earlier ones.
pub fn render_heatmap(
    scored: &[ScoredWindow],
    cfg: &WindowConfig,
    width: u32,
    height: u32,
    max_value: u16,
) -> Result<SonarImage> {
    let mut img = SonarImage::filled(width, height, max_value, max_value)?;
    let s = cfg.stride as i64;
    let max = max_value as f64;
    for sw in scored {
        let w = &sw.window;
        let x0 = w.x as i64 + w.w as i64 / 2 - s / 2;
        let y0 = w.y as i64 + w.h as i64 / 2 - s / 2;
        let v = (max * (1.0 - sw.objectness.clamp(0.0, 1.0) as f64)).round() as u16;
        for y in y0.max(0)..(y0 + s).min(height as i64) {
            for x in x0.max(0)..(x0 + s).min(width as i64) {
                img.set(x as u32, y as u32, v);
            }
        }
    }
    Ok(img)
}

/// Writes proposals as CSV rows `frame,x,y,w,h,score` under a header line.
pub fn write_proposals_csv<W: Write>(
    out: &mut W,
    rows: &[(u32, ScoredWindow)],
) -> std::io::Result<()> {
    writeln!(out, "{PROPOSAL_CSV_HEADER}")?;
    for (frame, p) in rows {
        let b = &p.window;
        writeln!(
            out,
            "{frame},{},{},{},{},{:.6}",
            b.x, b.y, b.w, b.h, p.objectness
        )?;
    }
    Ok(())
}

pub fn save_proposals_csv(path: &Path, rows: &[(u32, ScoredWindow)]) -> Result<()> {
    let mut buf = Vec::new();
    write_proposals_csv(&mut buf, rows).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Copy of `image` with proposal outlines drawn at full intensity.
pub fn overlay_proposals(image: &SonarImage, proposals: &[ScoredWindow]) -> SonarImage {
    let mut out = image.clone();
    for p in proposals {
        out.draw_rect(&p.window, image.max_value());
    }
    out
}
