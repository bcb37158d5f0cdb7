//! Rectangle arithmetic, fan field-of-view membership, sliding windows and
//! non-maximum suppression.
//!
//! Boxes are half-open pixel regions `[x, x + w) × [y, y + h)`, so the
//! analytic area `w · h` equals the number of member pixels.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: i32,
    pub y: i32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: i32, y: i32, w: u32, h: u32) -> Result<Self> {
        let b = BoundingBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w == 0 || self.h == 0 {
            return Err(Error::InvalidInput(format!(
                "box {self:?} must have positive width and height"
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Exclusive right edge.
    pub fn right(&self) -> i64 {
        self.x as i64 + self.w as i64
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> i64 {
        self.y as i64 + self.h as i64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    /// The four corner points of the continuous rectangle.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (x0, y0) = (self.x as f64, self.y as f64);
        let (x1, y1) = (self.right() as f64, self.bottom() as f64);
        [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let ix = (self.right().min(other.right()) - (self.x as i64).max(other.x as i64)).max(0);
        let iy = (self.bottom().min(other.bottom()) - (self.y as i64).max(other.y as i64)).max(0);
        (ix * iy) as u64
    }

    /// True when the box lies inside a `width × height` image.
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x >= 0 && self.y >= 0 && self.right() <= width as i64 && self.bottom() <= height as i64
    }

    /// Row-major ordering key used for deterministic tie-breaking.
    fn position_cmp(&self, other: &BoundingBox) -> Ordering {
        (self.y, self.x, self.h, self.w).cmp(&(other.y, other.x, other.h, other.w))
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    Ok(inter as f64 / union as f64)
}

/// Largest IoU between `window` and any of `boxes`; 0 when `boxes` is empty.
pub fn max_iou(window: &BoundingBox, boxes: &[BoundingBox]) -> Result<f64> {
    boxes
        .iter()
        .map(|b| iou(window, b))
        .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))
}

/// Fan-shaped sonar field of view: an annular sector around `origin`.
///
/// Bearings are measured with `atan2(dy, dx)` in image coordinates (y grows
/// downwards), so a fan opening towards the top of the image has
/// `axis_angle = -π/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FanGeometry {
    pub origin_x: f64,
    pub origin_y: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub half_angle: f64,
    pub axis_angle: f64,
}

impl FanGeometry {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.origin_x,
            self.origin_y,
            self.r_min,
            self.r_max,
            self.half_angle,
            self.axis_angle,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput(format!(
                "fan geometry has non-finite fields: {self:?}"
            )));
        }
        if !(self.r_min >= 0.0 && self.r_min < self.r_max) {
            return Err(Error::InvalidInput(format!(
                "fan range band must satisfy 0 <= r_min < r_max, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if !(self.half_angle > 0.0 && self.half_angle <= FRAC_PI_2) {
            return Err(Error::InvalidInput(format!(
                "fan half angle must lie in (0, pi/2], got {}",
                self.half_angle
            )));
        }
        Ok(())
    }

    /// Range of a point from the fan apex.
    pub fn range_of(&self, px: f64, py: f64) -> f64 {
        (px - self.origin_x).hypot(py - self.origin_y)
    }

    /// Signed bearing of a point relative to the fan centerline, in (-π, π].
    pub fn relative_bearing(&self, px: f64, py: f64) -> f64 {
        let bearing = (py - self.origin_y).atan2(px - self.origin_x);
        wrap_angle(bearing - self.axis_angle)
    }

    /// Image point at the given range and bearing relative to the centerline.
    pub fn point_at(&self, range: f64, relative_bearing: f64) -> (f64, f64) {
        let theta = self.axis_angle + relative_bearing;
        (
            self.origin_x + range * theta.cos(),
            self.origin_y + range * theta.sin(),
        )
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

pub fn fan_contains(geom: &FanGeometry, px: f64, py: f64) -> bool {
    let r = geom.range_of(px, py);
    if r < geom.r_min || r > geom.r_max {
        return false;
    }
    geom.relative_bearing(px, py).abs() <= geom.half_angle
}

/// Whether the center of pixel `(x, y)` lies in the fan.
pub fn pixel_in_fan(geom: &FanGeometry, x: u32, y: u32) -> bool {
    fan_contains(geom, x as f64 + 0.5, y as f64 + 0.5)
}

/// A window is inside the field of view iff all four of its corners are.
pub fn window_in_fov(geom: &FanGeometry, window: &BoundingBox) -> bool {
    window
        .corners()
        .iter()
        .all(|&(px, py)| fan_contains(geom, px, py))
}

/// Square sliding-window parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_size: u32,
    pub stride: u32,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_size: 96,
            stride: 8,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.stride == 0 || self.stride > self.window_size {
            return Err(Error::InvalidInput(format!(
                "window config needs 0 < stride <= window_size, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// All window positions `(i·stride, j·stride)` fully inside the image, in
/// row-major order, optionally restricted to the fan field of view.
pub fn enumerate_windows(
    geom: Option<&FanGeometry>,
    image_w: u32,
    image_h: u32,
    cfg: &WindowConfig,
) -> Result<Vec<BoundingBox>> {
    cfg.validate()?;
    if let Some(g) = geom {
        g.validate()?;
    }
    let ws = cfg.window_size;
    if ws > image_w.min(image_h) {
        return Err(Error::InvalidInput(format!(
            "window of {ws} px does not fit a {image_w}x{image_h} image"
        )));
    }
    let mut out = Vec::new();
    for y in (0..=image_h - ws).step_by(cfg.stride as usize) {
        for x in (0..=image_w - ws).step_by(cfg.stride as usize) {
            let b = BoundingBox {
                x: x as i32,
                y: y as i32,
                w: ws,
                h: ws,
            };
            if geom.is_none_or(|g| window_in_fov(g, &b)) {
                out.push(b);
            }
        }
    }
    Ok(out)
}

/// A window with its objectness score in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredWindow {
    pub window: BoundingBox,
    pub objectness: f32,
}

/// Descending score, ties broken by row-major window position.
pub fn rank_order(a: &ScoredWindow, b: &ScoredWindow) -> Ordering {
    b.objectness
        .total_cmp(&a.objectness)
        .then_with(|| a.window.position_cmp(&b.window))
}

/// Greedy non-maximum suppression.
///
/// Proposals are visited in [`rank_order`]; one is kept iff its IoU with
/// every proposal kept so far is below `iou_threshold`.
pub fn nms(proposals: &[ScoredWindow], iou_threshold: f64) -> Vec<ScoredWindow> {
    let mut order: Vec<ScoredWindow> = proposals.to_vec();
    order.sort_by(rank_order);
    let mut kept: Vec<ScoredWindow> = Vec::with_capacity(order.len());
    for cand in order {
        let suppressed = kept.iter().any(|k| {
            let inter = k.window.intersection_area(&cand.window);
            let union = k.window.area() + cand.window.area() - inter;
            inter as f64 / union as f64 >= iou_threshold
        });
        if !suppressed {
            kept.push(cand);
        }
    }
    kept
}
