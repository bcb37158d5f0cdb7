//! `flsprop propose`: threshold window scores of one frame into proposals.

use std::path::{Path, PathBuf};

use clap::Args;
use fls_core::proposals::{
    overlay_proposals, propose, save_proposals_csv, score_image, ProposalConfig,
};
use fls_core::raster::SonarImage;

use crate::input::{load_input, load_network};
use crate::manifest::RunManifest;
use crate::{sibling, Failure, Stage, WindowArgs};

#[derive(Debug, Args)]
pub struct ProposeArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PGM image or dataset directory
    #[arg(long)]
    pub input: PathBuf,
    /// Frame id (dataset input) or id written to the CSV (image input)
    #[arg(long)]
    pub frame: Option<u32>,
    /// Fan geometry JSON; restricts windows to the field of view
    #[arg(long)]
    pub fan: Option<PathBuf>,
    /// Objectness threshold; windows scoring strictly above it are kept
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Apply non-maximum suppression
    #[arg(long)]
    pub nms: bool,
    #[arg(long, default_value_t = 0.5)]
    pub nms_iou: f64,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Proposal CSV to write
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the frame with proposal outlines (PNG if the name ends in .png, else PGM)
    #[arg(long)]
    pub overlay: Option<PathBuf>,
}

/// Writes PNG for a `.png` extension, PGM otherwise.
pub fn write_image(image: &SonarImage, path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::data(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
    }
    let png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if png {
        image.write_png(path).stage("writing image")
    } else {
        image.write_pgm(path).stage("writing image")
    }
}

pub fn run(args: &ProposeArgs, threads: Option<usize>) -> Result<(), Failure> {
    let cfg = ProposalConfig {
        threshold: args.threshold,
        nms: args.nms,
        nms_iou: args.nms_iou,
        window: args.window.config()?,
    };
    cfg.validate().stage("proposal settings")?;
    let mut manifest = RunManifest::start("propose", threads, cfg);
    manifest
        .input("checkpoint", &args.checkpoint)
        .input("input", &args.input);
    if let Some(fan) = &args.fan {
        manifest.input("fan", fan);
    }

    let net = load_network(&args.checkpoint)?;
    let frame = load_input(&args.input, args.frame, args.fan.as_deref())?;
    let scored = score_image(&net, &frame.image, frame.fan.as_ref(), &cfg.window)
        .stage("scoring windows")?;
    let proposals = propose(&scored, &cfg);
    let rows: Vec<_> = proposals.iter().map(|p| (frame.id, *p)).collect();
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::data(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
    }
    save_proposals_csv(&args.out, &rows).stage("writing proposals")?;
    manifest.output("proposals", &args.out);
    if let Some(path) = &args.overlay {
        write_image(&overlay_proposals(&frame.image, &proposals), path)?;
        manifest.output("overlay", path);
    }

    manifest.report = serde_json::json!({
        "frame": frame.id,
        "windows_scored": scored.len(),
        "proposals": proposals.len(),
    });
    manifest.finish(&sibling(&args.out, ".manifest.json"))?;
    eprintln!(
        "{} of {} windows above {}; wrote {}",
        proposals.len(),
        scored.len(),
        cfg.threshold,
        args.out.display()
    );
    Ok(())
}
