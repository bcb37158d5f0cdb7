//! `flsprop heatmap`: render per-window objectness for one frame.

use std::path::PathBuf;

use clap::Args;
use fls_core::proposals::{render_heatmap, score_image};

use crate::input::{load_input, load_network};
use crate::manifest::RunManifest;
use crate::propose::write_image;
use crate::{sibling, Failure, Stage, WindowArgs};

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PGM image or dataset directory
    #[arg(long)]
    pub input: PathBuf,
    /// Frame id within a dataset directory
    #[arg(long)]
    pub frame: Option<u32>,
    /// Fan geometry JSON; restricts windows to the field of view
    #[arg(long)]
    pub fan: Option<PathBuf>,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Heatmap image (PNG if the name ends in .png, else PGM)
    #[arg(long)]
    pub out: PathBuf,
    /// Additional PNG copy
    #[arg(long)]
    pub png: Option<PathBuf>,
}

pub fn run(args: &HeatmapArgs, threads: Option<usize>) -> Result<(), Failure> {
    let window = args.window.config()?;
    let mut manifest = RunManifest::start("heatmap", threads, window);
    manifest
        .input("checkpoint", &args.checkpoint)
        .input("input", &args.input);
    if let Some(fan) = &args.fan {
        manifest.input("fan", fan);
    }

    let net = load_network(&args.checkpoint)?;
    let frame = load_input(&args.input, args.frame, args.fan.as_deref())?;
    let scored =
        score_image(&net, &frame.image, frame.fan.as_ref(), &window).stage("scoring windows")?;
    let heat = render_heatmap(
        &scored,
        &window,
        frame.image.width(),
        frame.image.height(),
        frame.image.max_value(),
    )
    .stage("rendering heatmap")?;
    write_image(&heat, &args.out)?;
    manifest.output("heatmap", &args.out);
    if let Some(png) = &args.png {
        heat.write_png(png).stage("writing PNG")?;
        manifest.output("png", png);
    }
    manifest.report = serde_json::json!({ "frame": frame.id, "windows_scored": scored.len() });
    manifest.finish(&sibling(&args.out, ".manifest.json"))?;
    eprintln!(
        "scored {} windows; wrote {}",
        scored.len(),
        args.out.display()
    );
    Ok(())
}
