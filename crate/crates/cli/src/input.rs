//! Resolving `--input` to a single frame: either a PGM image or one frame
//! of a dataset directory.

use std::path::Path;

use fls_core::dataset::{load_dataset, LabeledFrame};
use fls_core::geometry::{BoundingBox, FanGeometry};
use fls_core::neuralnet::{load_checkpoint, Network};
use fls_core::raster::SonarImage;

use crate::{Failure, Stage};

pub struct InputFrame {
    pub id: u32,
    pub image: SonarImage,
    pub fan: Option<FanGeometry>,
    pub ground_truth: Vec<BoundingBox>,
}

/// Loads a frame. A dataset directory needs `frame` unless it holds exactly
/// one frame; a PGM takes its fan from `fan_path` if given.
pub fn load_input(
    input: &Path,
    frame: Option<u32>,
    fan_path: Option<&Path>,
) -> Result<InputFrame, Failure> {
    let fan = fan_path.map(load_fan).transpose()?;
    if input.is_dir() {
        let frames = load_dataset(input).stage("loading dataset")?;
        let picked = pick_frame(frames, frame, input)?;
        return Ok(InputFrame {
            id: picked.id,
            image: picked.image,
            fan: fan.or(Some(picked.fan)),
            ground_truth: picked.ground_truth,
        });
    }
    let image = SonarImage::read_pgm(input).stage("reading input image")?;
    Ok(InputFrame {
        id: frame.unwrap_or(0),
        image,
        fan,
        ground_truth: Vec::new(),
    })
}

fn pick_frame(
    frames: Vec<LabeledFrame>,
    frame: Option<u32>,
    dir: &Path,
) -> Result<LabeledFrame, Failure> {
    match frame {
        Some(id) => frames
            .into_iter()
            .find(|f| f.id == id)
            .ok_or_else(|| Failure::data(anyhow::anyhow!("{} has no frame {id}", dir.display()))),
        None if frames.len() == 1 => Ok(frames.into_iter().next().expect("one frame")),
        None => Err(Failure::usage(format!(
            "{} holds {} frames; pick one with --frame",
            dir.display(),
            frames.len()
        ))),
    }
}

pub fn load_fan(path: &Path) -> Result<FanGeometry, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Failure::data(anyhow::anyhow!(
            "reading fan geometry {}: {e}",
            path.display()
        ))
    })?;
    let fan: FanGeometry = serde_json::from_str(&text).map_err(|e| {
        Failure::data(anyhow::anyhow!(
            "parsing fan geometry {}: {e}",
            path.display()
        ))
    })?;
    fan.validate().stage("fan geometry")?;
    Ok(fan)
}

pub fn load_network(path: &Path) -> Result<Network<f32>, Failure> {
    load_checkpoint(path)
        .map(|(net, _)| net)
        .stage(&format!("loading checkpoint {}", path.display()))
}
