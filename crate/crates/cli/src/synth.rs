//! `flsprop synth`: generate a synthetic dataset.

use std::path::PathBuf;

use clap::Args;
use fls_core::synth::{generate_dataset, SceneConfig};

use crate::manifest::{write_file, RunManifest};
use crate::{Failure, Stage};

pub const SCENE_FILE: &str = "scene.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene configuration JSON (built-in defaults when omitted)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of frames
    #[arg(long, default_value_t = 250)]
    pub frames: u32,
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configuration's seed
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &SynthArgs, threads: Option<usize>) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => SceneConfig::load(path).stage("reading scene config")?,
        None => SceneConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().stage("scene config")?;

    let mut manifest = RunManifest::start("synth", threads, &cfg);
    manifest.seed("scene", cfg.seed);
    if let Some(path) = &args.config {
        manifest.input("config", path);
    }

    let frames = generate_dataset(&cfg, args.frames, &args.out).stage("generating dataset")?;
    let scene_path = args.out.join(SCENE_FILE);
    write_file(&scene_path, cfg.to_json().as_bytes())?;

    let objects: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    manifest.report = serde_json::json!({ "frames": frames.len(), "objects": objects });
    manifest
        .output("dataset", &args.out)
        .output("scene", &scene_path);
    manifest.finish(&args.out.join(MANIFEST_FILE))?;
    eprintln!(
        "wrote {} frames ({objects} objects) to {}",
        frames.len(),
        args.out.display()
    );
    Ok(())
}
