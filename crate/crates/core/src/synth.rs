//! Synthetic sonar scenes for training and testing.
//!
//! A frame is a fan of speckled background with a few bright elliptical
//! highlights, each casting a dark shadow radially away from the fan apex.
//! Speckle is a multiplicative gamma-distributed factor with unit mean,
//! clipped to the pixel range. Pixels whose centers fall outside the fan are
//! exactly zero.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{save_dataset, LabeledFrame};
use crate::error::{Error, Result};
use crate::geometry::{
    enumerate_windows, fan_contains, max_iou, pixel_in_fan, BoundingBox, FanGeometry, WindowConfig,
};
use crate::raster::SonarImage;
use crate::seed::derive_seed;

/// Scene generation parameters. Ranges are inclusive `[min, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    /// 255 or 65535.
    pub max_value: u16,
    pub fan: FanGeometry,
    pub object_count: [u32; 2],
    /// Width and height of each highlight's bounding box, sampled independently.
    pub object_size: [u32; 2],
    /// Mean highlight level, in pixel units.
    pub highlight_intensity: [f64; 2],
    /// Mean background level inside the fan, in pixel units.
    pub background_mean: f64,
    /// Shadow level as a fraction of the background level.
    pub shadow_attenuation: f64,
    /// Radial extent of a shadow behind its highlight, in pixels.
    pub shadow_length: [f64; 2],
    /// Gamma shape of the speckle factor; larger is smoother.
    pub speckle_shape: f64,
    /// Placement retries per object before giving up.
    pub max_attempts: u32,
    /// When set, every object must be matched with IoU >= 0.5 by at least one
    /// in-fan window of this configuration.
    pub recall_window: Option<WindowConfig>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 320,
            height: 256,
            max_value: 255,
            fan: FanGeometry {
                origin_x: 160.0,
                origin_y: 266.0,
                r_min: 20.0,
                r_max: 262.0,
                half_angle: 0.75,
                axis_angle: -std::f64::consts::FRAC_PI_2,
            },
            object_count: [1, 1],
            object_size: [60, 100],
            highlight_intensity: [150.0, 230.0],
            background_mean: 40.0,
            shadow_attenuation: 0.2,
            shadow_length: [20.0, 50.0],
            speckle_shape: 4.0,
            max_attempts: 1000,
            recall_window: Some(WindowConfig::default()),
            seed: 0,
        }
    }
}

fn check_range<T: PartialOrd + std::fmt::Debug>(name: &str, r: &[T; 2]) -> Result<()> {
    if r[0] > r[1] {
        return Err(Error::InvalidInput(format!(
            "{name} range {r:?} has min > max"
        )));
    }
    Ok(())
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(
                "scene dimensions must be positive".into(),
            ));
        }
        if self.max_value != 255 && self.max_value != u16::MAX {
            return Err(Error::InvalidInput(format!(
                "max_value must be 255 or 65535, got {}",
                self.max_value
            )));
        }
        self.fan.validate()?;
        check_range("object_count", &self.object_count)?;
        check_range("object_size", &self.object_size)?;
        check_range("highlight_intensity", &self.highlight_intensity)?;
        check_range("shadow_length", &self.shadow_length)?;
        if self.object_size[0] < 2 || self.object_size[1] > self.width.min(self.height) {
            return Err(Error::InvalidInput(format!(
                "object_size {:?} must lie in [2, {}]",
                self.object_size,
                self.width.min(self.height)
            )));
        }
        let max = self.max_value as f64;
        let in_pixel_range = |v: f64| v.is_finite() && (0.0..=max).contains(&v);
        if !self.highlight_intensity.iter().all(|&v| in_pixel_range(v))
            || !in_pixel_range(self.background_mean)
        {
            return Err(Error::InvalidInput(format!(
                "intensities must lie in [0, {max}]"
            )));
        }
        if !(0.0..=1.0).contains(&self.shadow_attenuation) {
            return Err(Error::InvalidInput(format!(
                "shadow_attenuation must lie in [0, 1], got {}",
                self.shadow_attenuation
            )));
        }
        if !(self.shadow_length[0] >= 0.0 && self.shadow_length[1].is_finite()) {
            return Err(Error::InvalidInput(format!(
                "shadow_length {:?} must be finite and non-negative",
                self.shadow_length
            )));
        }
        if !(self.speckle_shape > 0.0 && self.speckle_shape.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "speckle_shape must be positive, got {}",
                self.speckle_shape
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidInput(
                "max_attempts must be at least 1".into(),
            ));
        }
        if let Some(w) = &self.recall_window {
            w.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SceneConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("scene config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene config serializes")
    }
}

/// Where and how one object was drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectLayout {
    /// Tight bounding box of the highlight pixels.
    pub bbox: BoundingBox,
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub highlight: f64,
    pub shadow_length: f64,
}

impl ObjectLayout {
    fn ellipse_value(&self, px: f64, py: f64) -> f64 {
        let dx = (px - self.center.0) / self.semi_axes.0;
        let dy = (py - self.center.1) / self.semi_axes.1;
        dx * dx + dy * dy
    }

    /// Whether the center of pixel `(x, y)` is part of the highlight.
    pub fn in_highlight(&self, x: u32, y: u32) -> bool {
        self.ellipse_value(x as f64 + 0.5, y as f64 + 0.5) <= 1.0
    }

    /// Whether pixel `(x, y)` lies in the acoustic shadow: the ray from the
    /// fan apex to the pixel center crosses the highlight ellipse, and the
    /// pixel is at most `shadow_length` beyond the far crossing.
    pub fn in_shadow(&self, fan: &FanGeometry, x: u32, y: u32) -> bool {
        if self.in_highlight(x, y) {
            return false;
        }
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let (a, b) = self.semi_axes;
        // ray o + t·(p − o), t in [0, 1]; substitute into the ellipse equation
        let (dx, dy) = (px - fan.origin_x, py - fan.origin_y);
        let (ex, ey) = (fan.origin_x - self.center.0, fan.origin_y - self.center.1);
        let qa = (dx / a).powi(2) + (dy / b).powi(2);
        let qb = 2.0 * (ex * dx / (a * a) + ey * dy / (b * b));
        let qc = (ex / a).powi(2) + (ey / b).powi(2) - 1.0;
        let disc = qb * qb - 4.0 * qa * qc;
        if qa == 0.0 || disc < 0.0 {
            return false;
        }
        let t_exit = (-qb + disc.sqrt()) / (2.0 * qa);
        if !(t_exit > 0.0 && t_exit < 1.0) {
            return false;
        }
        let len = dx.hypot(dy);
        (1.0 - t_exit) * len <= self.shadow_length
    }

    /// Conservative extent of highlight plus shadow: the bounding box grown
    /// by its corners pushed radially outwards by the shadow length.
    fn footprint(&self, fan: &FanGeometry) -> (f64, f64, f64, f64) {
        let l = self.shadow_length + 1.0;
        let mut ext = (
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        for (cx, cy) in self.bbox.corners() {
            let r = fan.range_of(cx, cy).max(1e-9);
            let (ux, uy) = ((cx - fan.origin_x) / r, (cy - fan.origin_y) / r);
            for (px, py) in [(cx, cy), (cx + l * ux, cy + l * uy)] {
                ext = (ext.0.min(px), ext.1.min(py), ext.2.max(px), ext.3.max(py));
            }
        }
        ext
    }
}

/// A generated frame together with the layout of its objects.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub frame: LabeledFrame,
    pub objects: Vec<ObjectLayout>,
}

fn overlaps(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> bool {
    a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3
}

fn tight_box(center: (f64, f64), semi: (f64, f64), width: u32, height: u32) -> Option<BoundingBox> {
    let probe = ObjectLayout {
        bbox: BoundingBox {
            x: 0,
            y: 0,
            w: 1,
            h: 1,
        },
        center,
        semi_axes: semi,
        highlight: 0.0,
        shadow_length: 0.0,
    };
    let x0 = (center.0 - semi.0).floor().max(0.0) as u32;
    let x1 = ((center.0 + semi.0).ceil() as u32).min(width);
    let y0 = (center.1 - semi.1).floor().max(0.0) as u32;
    let y1 = ((center.1 + semi.1).ceil() as u32).min(height);
    let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (u32::MAX, u32::MAX, 0, 0);
    for y in y0..y1 {
        for x in x0..x1 {
            if probe.in_highlight(x, y) {
                lo_x = lo_x.min(x);
                lo_y = lo_y.min(y);
                hi_x = hi_x.max(x);
                hi_y = hi_y.max(y);
            }
        }
    }
    (lo_x <= hi_x).then(|| BoundingBox {
        x: lo_x as i32,
        y: lo_y as i32,
        w: hi_x - lo_x + 1,
        h: hi_y - lo_y + 1,
    })
}

/// Samples one object placement, or `None` if the draw violates a constraint.
fn try_place(
    cfg: &SceneConfig,
    rng: &mut ChaCha8Rng,
    placed: &[ObjectLayout],
    windows: Option<&[BoundingBox]>,
) -> Result<Option<ObjectLayout>> {
    let w = rng.random_range(cfg.object_size[0]..=cfg.object_size[1]);
    let h = rng.random_range(cfg.object_size[0]..=cfg.object_size[1]);
    let x = rng.random_range(0..=cfg.width - w);
    let y = rng.random_range(0..=cfg.height - h);
    let shadow_length = rng.random_range(cfg.shadow_length[0]..=cfg.shadow_length[1]);
    let highlight = rng.random_range(cfg.highlight_intensity[0]..=cfg.highlight_intensity[1]);

    let semi = (w as f64 / 2.0, h as f64 / 2.0);
    let center = (x as f64 + semi.0, y as f64 + semi.1);
    let Some(bbox) = tight_box(center, semi, cfg.width, cfg.height) else {
        return Ok(None);
    };
    let fan = &cfg.fan;
    // the whole highlight and the full shadow length stay inside the fan
    let fits = bbox.corners().iter().all(|&(cx, cy)| {
        fan_contains(fan, cx, cy) && fan.range_of(cx, cy) + shadow_length <= fan.r_max
    });
    if !fits {
        return Ok(None);
    }
    let obj = ObjectLayout {
        bbox,
        center,
        semi_axes: semi,
        highlight,
        shadow_length,
    };
    if placed
        .iter()
        .any(|p| overlaps(p.footprint(fan), obj.footprint(fan)))
    {
        return Ok(None);
    }
    if let Some(ws) = windows {
        if ws.is_empty() || max_iou(&bbox, ws)? < 0.5 {
            return Ok(None);
        }
    }
    Ok(Some(obj))
}

/// Generates frame `id` and the layout of its objects.
pub fn generate_scene(cfg: &SceneConfig, id: u32) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, id as u64));
    let windows = match &cfg.recall_window {
        Some(wc) => Some(enumerate_windows(
            Some(&cfg.fan),
            cfg.width,
            cfg.height,
            wc,
        )?),
        None => None,
    };

    let count = rng.random_range(cfg.object_count[0]..=cfg.object_count[1]);
    let mut objects = Vec::with_capacity(count as usize);
    for k in 0..count {
        let mut placed = None;
        for _ in 0..cfg.max_attempts {
            if let Some(obj) = try_place(cfg, &mut rng, &objects, windows.as_deref())? {
                placed = Some(obj);
                break;
            }
        }
        let obj = placed.ok_or_else(|| {
            Error::Synth(format!(
                "frame {id}: could not place object {} of {count} after {} attempts; \
                 use fewer or smaller objects, or a larger field of view",
                k + 1,
                cfg.max_attempts
            ))
        })?;
        objects.push(obj);
    }

    let speckle = Gamma::new(cfg.speckle_shape, 1.0 / cfg.speckle_shape)
        .map_err(|e| Error::InvalidInput(format!("speckle distribution: {e}")))?;
    let max = cfg.max_value as f64;
    let mut pixels = vec![0u16; cfg.width as usize * cfg.height as usize];
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            if !pixel_in_fan(&cfg.fan, x, y) {
                continue;
            }
            let mut level = cfg.background_mean;
            for obj in &objects {
                if obj.in_highlight(x, y) {
                    // brighter toward the middle of the blob
                    let rho = obj.ellipse_value(x as f64 + 0.5, y as f64 + 0.5);
                    level = obj.highlight * (1.0 - 0.3 * rho);
                    break;
                }
                if obj.in_shadow(&cfg.fan, x, y) {
                    level = cfg.background_mean * cfg.shadow_attenuation;
                }
            }
            let v = (level * speckle.sample(&mut rng)).round().clamp(0.0, max);
            pixels[y as usize * cfg.width as usize + x as usize] = v as u16;
        }
    }

    let image = SonarImage::new(cfg.width, cfg.height, cfg.max_value, pixels)?;
    Ok(Scene {
        frame: LabeledFrame {
            id,
            image,
            fan: cfg.fan,
            ground_truth: objects.iter().map(|o| o.bbox).collect(),
        },
        objects,
    })
}

pub fn generate_frame(cfg: &SceneConfig, id: u32) -> Result<LabeledFrame> {
    generate_scene(cfg, id).map(|s| s.frame)
}

/// Frames `0..n`, generated in parallel.
pub fn generate_frames(cfg: &SceneConfig, n: u32) -> Result<Vec<LabeledFrame>> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one frame".into()));
    }
    cfg.validate()?;
    (0..n)
        .into_par_iter()
        .map(|id| generate_frame(cfg, id))
        .collect()
}

/// Generates `n` frames and writes them as a dataset directory.
pub fn generate_dataset(cfg: &SceneConfig, n: u32, dir: &Path) -> Result<Vec<LabeledFrame>> {
    let frames = generate_frames(cfg, n)?;
    save_dataset(&frames, dir)?;
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        let base = SceneConfig::default();
        SceneConfig {
            width: 400,
            height: 300,
            fan: FanGeometry {
                origin_x: 200.0,
                origin_y: 310.0,
                r_max: 305.0,
                ..base.fan
            },
            object_count: [1, 2],
            ..base
        }
    }

    #[test]
    fn deterministic_per_id() {
        let cfg = small();
        assert_eq!(
            generate_scene(&cfg, 7).unwrap(),
            generate_scene(&cfg, 7).unwrap()
        );
        assert_ne!(
            generate_frame(&cfg, 7).unwrap().image,
            generate_frame(&cfg, 8).unwrap().image
        );
    }

    #[test]
    fn empty_scene_is_speckle_only() {
        let cfg = SceneConfig {
            object_count: [0, 0],
            ..SceneConfig::default()
        };
        let f = generate_frame(&cfg, 0).unwrap();
        assert!(f.ground_truth.is_empty());
        assert!(f.image.pixels().iter().any(|&p| p > 0));
    }

    #[test]
    fn outside_fan_is_zero() {
        let cfg = small();
        let f = generate_frame(&cfg, 3).unwrap();
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                if f.image.get(x, y) != 0 {
                    assert!(pixel_in_fan(&cfg.fan, x, y), "({x}, {y})");
                }
            }
        }
    }

    #[test]
    fn boxes_are_tight_and_recallable() {
        let cfg = small();
        for id in 0..10 {
            let s = generate_scene(&cfg, id).unwrap();
            let windows = enumerate_windows(
                Some(&cfg.fan),
                cfg.width,
                cfg.height,
                &WindowConfig::default(),
            )
            .unwrap();
            for o in &s.objects {
                let b = o.bbox;
                let (x0, y0) = (b.x as u32, b.y as u32);
                let (x1, y1) = (b.right() as u32 - 1, b.bottom() as u32 - 1);
                assert!((x0..=x1).any(|x| o.in_highlight(x, y0)));
                assert!((x0..=x1).any(|x| o.in_highlight(x, y1)));
                assert!((y0..=y1).any(|y| o.in_highlight(x0, y)));
                assert!((y0..=y1).any(|y| o.in_highlight(x1, y)));
                assert!(max_iou(&b, &windows).unwrap() >= 0.5);
            }
        }
    }

    #[test]
    fn infeasible_placement_errors() {
        let cfg = SceneConfig {
            object_count: [5, 5],
            object_size: [150, 160],
            max_attempts: 20,
            ..SceneConfig::default()
        };
        let err = generate_frame(&cfg, 0).unwrap_err();
        assert!(err.to_string().contains("fewer or smaller"));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = small();
        assert_eq!(SceneConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let bad = SceneConfig {
            shadow_attenuation: 2.0,
            ..small()
        };
        assert!(SceneConfig::from_json(&bad.to_json()).is_err());
    }
}
