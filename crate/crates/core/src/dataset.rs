//! Training windows from annotated frames, and the on-disk dataset layout.
//!
//! A dataset directory holds `dataset.json` plus one binary PGM per frame
//! under `images/`.

use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{enumerate_windows, max_iou, BoundingBox, FanGeometry, WindowConfig};
use crate::neuralnet::Example;
use crate::raster::SonarImage;
use crate::seed::derive_seed;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const ANNOTATION_FILE: &str = "dataset.json";
pub const IMAGE_DIR: &str = "images";

/// One sonar frame with its field of view and ground-truth boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFrame {
    pub id: u32,
    pub image: SonarImage,
    pub fan: FanGeometry,
    pub ground_truth: Vec<BoundingBox>,
}

impl LabeledFrame {
    pub fn validate(&self) -> Result<()> {
        self.fan
            .validate()
            .map_err(|e| Error::dataset(self.id, e.to_string()))?;
        for b in &self.ground_truth {
            if b.w == 0 || b.h == 0 {
                return Err(Error::dataset(self.id, format!("degenerate box {b:?}")));
            }
            if !b.fits_within(self.image.width(), self.image.height()) {
                return Err(Error::dataset(
                    self.id,
                    format!(
                        "box {b:?} extends past the {}x{} image",
                        self.image.width(),
                        self.image.height()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// In-FOV sliding windows of this frame.
    pub fn windows(&self, cfg: &WindowConfig) -> Result<Vec<BoundingBox>> {
        enumerate_windows(
            Some(&self.fan),
            self.image.width(),
            self.image.height(),
            cfg,
        )
        .map_err(|e| Error::dataset(self.id, e.to_string()))
    }
}

/// Ground-truth objectness of a window from its IoU with the ground truth:
/// 0 up to 0.2, the IoU itself in between, 1 from 0.8.
pub fn objectness_label(iou: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&iou) {
        return Err(Error::InvalidInput(format!("IoU {iou} outside [0, 1]")));
    }
    Ok(if iou >= 0.8 {
        1.0
    } else if iou > 0.2 {
        iou
    } else {
        0.0
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flip {
    Vertical,
    Horizontal,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Positive,
    Negative,
    /// Window with IoU between the zero-label cutoff and the positive threshold.
    Intermediate,
    Flipped(Flip),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingCrop {
    pub frame_id: u32,
    pub window: BoundingBox,
    pub pixels: Vec<f32>,
    pub label: f32,
    pub provenance: Provenance,
}

impl Example for TrainingCrop {
    fn pixels(&self) -> &[f32] {
        &self.pixels
    }
    fn label(&self) -> f32 {
        self.label
    }
}

fn crop(
    frame: &LabeledFrame,
    window: BoundingBox,
    label: f64,
    provenance: Provenance,
) -> Result<TrainingCrop> {
    Ok(TrainingCrop {
        frame_id: frame.id,
        window,
        pixels: frame.image.normalized_crop(&window)?,
        label: label as f32,
        provenance,
    })
}

fn check_frame(frame: &LabeledFrame, cfg: &WindowConfig) -> Result<()> {
    let ws = cfg.window_size;
    if frame.image.width() < ws || frame.image.height() < ws {
        return Err(Error::dataset(
            frame.id,
            format!(
                "{}x{} image is smaller than the {ws} px window",
                frame.image.width(),
                frame.image.height()
            ),
        ));
    }
    Ok(())
}

/// Windows whose max IoU with the ground truth is at least `min_iou`,
/// labelled by [`objectness_label`].
pub fn extract_positive_crops(
    frame: &LabeledFrame,
    cfg: &WindowConfig,
    min_iou: f64,
) -> Result<Vec<TrainingCrop>> {
    check_frame(frame, cfg)?;
    if frame.ground_truth.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for w in frame.windows(cfg)? {
        let m = max_iou(&w, &frame.ground_truth)?;
        if m >= min_iou {
            out.push(crop(frame, w, objectness_label(m)?, Provenance::Positive)?);
        }
    }
    Ok(out)
}

/// Windows with `low < max IoU < high`, labelled by [`objectness_label`].
pub fn extract_intermediate_crops(
    frame: &LabeledFrame,
    cfg: &WindowConfig,
    low: f64,
    high: f64,
) -> Result<Vec<TrainingCrop>> {
    check_frame(frame, cfg)?;
    let mut out = Vec::new();
    for w in frame.windows(cfg)? {
        let m = max_iou(&w, &frame.ground_truth)?;
        if m > low && m < high {
            out.push(crop(
                frame,
                w,
                objectness_label(m)?,
                Provenance::Intermediate,
            )?);
        }
    }
    Ok(out)
}

/// Up to `count` windows, sampled without replacement, whose max IoU with
/// the ground truth is at most `max_iou_allowed`. Returned in window order.
pub fn sample_negative_crops<R: Rng + ?Sized>(
    frame: &LabeledFrame,
    cfg: &WindowConfig,
    count: usize,
    max_iou_allowed: f64,
    rng: &mut R,
) -> Result<Vec<TrainingCrop>> {
    check_frame(frame, cfg)?;
    let mut pool = Vec::new();
    for w in frame.windows(cfg)? {
        if max_iou(&w, &frame.ground_truth)? <= max_iou_allowed {
            pool.push(w);
        }
    }
    let mut picked = index::sample(rng, pool.len(), count.min(pool.len())).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| crop(frame, pool[i], 0.0, Provenance::Negative))
        .collect()
}

pub fn flip_vertical(pixels: &[f32], size: usize) -> Vec<f32> {
    pixels.chunks_exact(size).rev().flatten().copied().collect()
}

pub fn flip_horizontal(pixels: &[f32], size: usize) -> Vec<f32> {
    pixels
        .chunks_exact(size)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}

/// Each crop followed by its up-down and left-right flips (and optionally
/// both). Labels are unchanged.
pub fn augment_flips(crops: &[TrainingCrop], include_combined: bool) -> Vec<TrainingCrop> {
    let per = if include_combined { 4 } else { 3 };
    let mut out = Vec::with_capacity(crops.len() * per);
    for c in crops {
        let size = c.window.w as usize;
        let flipped = |pixels, flip| TrainingCrop {
            pixels,
            provenance: Provenance::Flipped(flip),
            ..c.clone()
        };
        out.push(c.clone());
        out.push(flipped(flip_vertical(&c.pixels, size), Flip::Vertical));
        out.push(flipped(flip_horizontal(&c.pixels, size), Flip::Horizontal));
        if include_combined {
            let both = flip_horizontal(&flip_vertical(&c.pixels, size), size);
            out.push(flipped(both, Flip::Both));
        }
    }
    out
}

/// Training-set construction settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropConfig {
    pub window: WindowConfig,
    pub min_iou: f64,
    pub negatives_per_frame: usize,
    pub negative_max_iou: f64,
    /// Also emit windows with 0.2 < IoU < `min_iou`.
    pub include_intermediate: bool,
    pub combined_flip: bool,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            window: WindowConfig::default(),
            min_iou: 0.5,
            negatives_per_frame: 20,
            negative_max_iou: 0.1,
            include_intermediate: false,
            combined_flip: false,
        }
    }
}

/// Positive, (optional) intermediate and negative crops for every frame,
/// flip-augmented when `augment` is set.
///
/// Negative sampling uses one random stream per frame derived from
/// `(seed, frame id)`, so the result does not depend on thread count.
pub fn build_crops(
    frames: &[LabeledFrame],
    cfg: &CropConfig,
    seed: u64,
    augment: bool,
) -> Result<Vec<TrainingCrop>> {
    let per_frame: Vec<Vec<TrainingCrop>> = frames
        .par_iter()
        .map(|f| {
            let mut crops = extract_positive_crops(f, &cfg.window, cfg.min_iou)?;
            if cfg.include_intermediate {
                crops.extend(extract_intermediate_crops(
                    f,
                    &cfg.window,
                    0.2,
                    cfg.min_iou,
                )?);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, f.id as u64));
            crops.extend(sample_negative_crops(
                f,
                &cfg.window,
                cfg.negatives_per_frame,
                cfg.negative_max_iou,
                &mut rng,
            )?);
            Ok(if augment {
                augment_flips(&crops, cfg.combined_flip)
            } else {
                crops
            })
        })
        .collect::<Result<_>>()?;
    Ok(per_frame.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Partition sizes for `n` frames: 70 % train+val / 30 % test, then
/// 85 % / 15 % of the former. Each stage floors the first share.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train_val = n * 70 / 100;
    let train = train_val * 85 / 100;
    (train, train_val - train, n - train_val)
}

/// Seeded frame-level shuffle followed by the [`split_sizes`] partition.
pub fn split_frames<T>(frames: Vec<T>, seed: u64) -> Result<FrameSplit<T>> {
    let n = frames.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 frames to split, got {n}"
        )));
    }
    let (n_train, n_val, _) = split_sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<T>> = frames.into_iter().map(Some).collect();
    let mut pick = |idx: &[usize]| -> Vec<T> {
        idx.iter()
            .map(|&i| slots[i].take().expect("each index used once"))
            .collect()
    };
    let train = pick(&order[..n_train]);
    let val = pick(&order[n_train..n_train + n_val]);
    let test = pick(&order[n_train + n_val..]);
    Ok(FrameSplit { train, val, test })
}

#[derive(Serialize, Deserialize)]
struct BoxRecord {
    x: i32,
    y: i32,
    w: u32,
    h: u32,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    id: u32,
    image: String,
    fan: FanGeometry,
    boxes: Vec<BoxRecord>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format_version: u32,
    frames: Vec<FrameRecord>,
}

pub fn image_file_name(id: u32) -> String {
    format!("{IMAGE_DIR}/frame_{id:05}.pgm")
}

/// Writes `dataset.json` and `images/*.pgm` under `dir`.
pub fn save_dataset(frames: &[LabeledFrame], dir: &Path) -> Result<()> {
    let img_dir = dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut records = Vec::with_capacity(frames.len());
    for f in frames {
        f.validate()?;
        let name = image_file_name(f.id);
        f.image.write_pgm(&dir.join(&name))?;
        records.push(FrameRecord {
            id: f.id,
            image: name,
            fan: f.fan,
            boxes: f
                .ground_truth
                .iter()
                .map(|b| BoxRecord {
                    x: b.x,
                    y: b.y,
                    w: b.w,
                    h: b.h,
                })
                .collect(),
        });
    }
    let doc = DatasetFile {
        format_version: DATASET_FORMAT_VERSION,
        frames: records,
    };
    let path = dir.join(ANNOTATION_FILE);
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset directory, validating every frame.
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledFrame>> {
    let path = dir.join(ANNOTATION_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let doc: DatasetFile = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    if doc.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::dataset(
            "-",
            format!(
                "unsupported dataset format_version {} in {}",
                doc.format_version,
                path.display()
            ),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    doc.frames
        .into_iter()
        .map(|r| {
            if !seen.insert(r.id) {
                return Err(Error::dataset(r.id, "duplicate frame id"));
            }
            let img_path: PathBuf = dir.join(&r.image);
            if !img_path.is_file() {
                return Err(Error::dataset(
                    r.id,
                    format!("image file {} not found", img_path.display()),
                ));
            }
            let image =
                SonarImage::read_pgm(&img_path).map_err(|e| Error::dataset(r.id, e.to_string()))?;
            let frame = LabeledFrame {
                id: r.id,
                image,
                fan: r.fan,
                ground_truth: r
                    .boxes
                    .into_iter()
                    .map(|b| BoundingBox {
                        x: b.x,
                        y: b.y,
                        w: b.w,
                        h: b.h,
                    })
                    .collect(),
            };
            frame.validate()?;
            Ok(frame)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn wide_fan(w: u32, h: u32) -> FanGeometry {
        // apex well below the image so the whole image is inside the fan
        FanGeometry {
            origin_x: w as f64 / 2.0,
            origin_y: h as f64 + 1000.0,
            r_min: 0.0,
            r_max: 5000.0,
            half_angle: FRAC_PI_2,
            axis_angle: -FRAC_PI_2,
        }
    }

    fn frame(w: u32, h: u32, gt: Vec<BoundingBox>) -> LabeledFrame {
        let pixels = (0..w * h).map(|i| (i % 251) as u16).collect();
        LabeledFrame {
            id: 3,
            image: SonarImage::new(w, h, 255, pixels).unwrap(),
            fan: wide_fan(w, h),
            ground_truth: gt,
        }
    }

    #[test]
    fn label_branches() {
        assert_eq!(objectness_label(0.9).unwrap(), 1.0);
        assert_eq!(objectness_label(0.5).unwrap(), 0.5);
        assert_eq!(objectness_label(0.2).unwrap(), 0.0);
        assert_eq!(objectness_label(0.8).unwrap(), 1.0);
        assert_eq!(objectness_label(0.0).unwrap(), 0.0);
        assert!(objectness_label(1.5).is_err());
        assert!(objectness_label(-0.1).is_err());
        assert!(objectness_label(f64::NAN).is_err());
    }

    #[test]
    fn no_ground_truth_no_positives() {
        let f = frame(160, 160, vec![]);
        assert!(extract_positive_crops(&f, &WindowConfig::default(), 0.5)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn aligned_box_yields_label_one() {
        let gt = BoundingBox {
            x: 16,
            y: 24,
            w: 96,
            h: 96,
        };
        let f = frame(160, 160, vec![gt]);
        let crops = extract_positive_crops(&f, &WindowConfig::default(), 0.5).unwrap();
        let hit = crops.iter().find(|c| c.window == gt).unwrap();
        assert_eq!(hit.label, 1.0);
        assert_eq!(hit.pixels.len(), 96 * 96);
    }

    #[test]
    fn negatives_without_ground_truth() {
        let f = frame(256, 256, vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let neg = sample_negative_crops(&f, &WindowConfig::default(), 20, 0.1, &mut rng).unwrap();
        assert_eq!(neg.len(), 20);
        assert!(neg.iter().all(|c| c.label == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let again = sample_negative_crops(&f, &WindowConfig::default(), 20, 0.1, &mut rng).unwrap();
        assert_eq!(neg, again);
    }

    #[test]
    fn negatives_empty_when_ground_truth_covers_image() {
        let f = frame(
            128,
            128,
            vec![BoundingBox {
                x: 0,
                y: 0,
                w: 128,
                h: 128,
            }],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(
            sample_negative_crops(&f, &WindowConfig::default(), 20, 0.1, &mut rng)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn small_frame_rejected() {
        let f = frame(64, 200, vec![]);
        assert!(extract_positive_crops(&f, &WindowConfig::default(), 0.5).is_err());
    }

    #[test]
    fn flips() {
        let f = frame(
            128,
            128,
            vec![BoundingBox {
                x: 0,
                y: 0,
                w: 96,
                h: 96,
            }],
        );
        let crops = extract_positive_crops(&f, &WindowConfig::default(), 0.5).unwrap();
        let ten: Vec<TrainingCrop> = crops.iter().cycle().take(10).cloned().collect();
        assert_eq!(augment_flips(&ten, false).len(), 30);
        assert_eq!(augment_flips(&ten, true).len(), 40);
        let p = &crops[0].pixels;
        assert_eq!(&flip_vertical(&flip_vertical(p, 96), 96), p);
        assert_eq!(&flip_horizontal(&flip_horizontal(p, 96), 96), p);
        let sym: Vec<f32> = (0..4)
            .flat_map(|r| [r as f32, 9.0, 9.0, r as f32])
            .collect();
        assert_eq!(flip_horizontal(&sym, 4), sym);
    }

    #[test]
    fn split_counts() {
        assert_eq!(split_sizes(100), (59, 11, 30));
        let s = split_frames((0..100).collect::<Vec<u32>>(), 4).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (59, 11, 30));
        let again = split_frames((0..100).collect::<Vec<u32>>(), 4).unwrap();
        assert_eq!(s, again);
        let mut all: Vec<u32> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(split_frames(vec![1, 2], 0).is_err());
        let tiny = split_frames(vec![1, 2, 3], 0).unwrap();
        assert_eq!(
            (tiny.train.len(), tiny.val.len(), tiny.test.len()),
            (1, 1, 1)
        );
    }
}
