//! Box and interval primitives.
//!
//! Boxes live in normalized center format `(cx, cy, w, h)`, every coordinate a
//! fraction of the frame size. Conversion to pixels only happens at file
//! boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One bounding box in normalized center format.
///
/// Serialized as a bare `[cx, cy, w, h]` array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Corner form `(x1, y1, x2, y2)` of a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Corners {
    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }
}

impl BBox {
    /// Builds a box and checks the normalized-range invariants.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.cx, self.cy, self.w, self.h];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("box"));
        }
        if coords.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidBox(format!(
                "coordinates {coords:?} outside [0, 1]"
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_corners(&self) -> Corners {
        Corners {
            x1: self.cx - self.w / 2.0,
            y1: self.cy - self.h / 2.0,
            x2: self.cx + self.w / 2.0,
            y2: self.cy + self.h / 2.0,
        }
    }

    pub fn from_corners(c: Corners) -> Result<Self> {
        if [c.x1, c.y1, c.x2, c.y2].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("corners"));
        }
        if c.x2 < c.x1 || c.y2 < c.y1 {
            return Err(Error::InvalidBox(format!(
                "inverted corners ({}, {}, {}, {})",
                c.x1, c.y1, c.x2, c.y2
            )));
        }
        Ok(Self {
            cx: (c.x1 + c.x2) / 2.0,
            cy: (c.y1 + c.y2) / 2.0,
            w: c.x2 - c.x1,
            h: c.y2 - c.y1,
        })
    }

    /// Converts a pixel-space `(x1, y1, x2, y2)` box on a `width`×`height`
    /// frame into normalized center format.
    pub fn from_pixel_xyxy(xyxy: [f64; 4], width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::InvalidBox(format!(
                "frame size {width}x{height} must be positive"
            )));
        }
        Self::from_corners(Corners {
            x1: xyxy[0] / width,
            y1: xyxy[1] / height,
            x2: xyxy[2] / width,
            y2: xyxy[3] / height,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() <= 0.0
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("box"));
        }
        Ok(Self {
            cx: v[0],
            cy: v[1],
            w: v[2],
            h: v[3],
        })
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.cx, b.cy, b.w, b.h]
    }
}

/// A closed time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeSpan {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self> {
        let span = Self { start_s, end_s };
        span.validate()?;
        Ok(span)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.start_s.is_finite() || !self.end_s.is_finite() {
            return Err(Error::NonFinite("time span"));
        }
        if self.start_s < 0.0 || self.end_s < self.start_s {
            return Err(Error::InvalidSpan(format!(
                "[{}, {}] must satisfy 0 <= start <= end",
                self.start_s, self.end_s
            )));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Restricts the span to `[0, duration_s]`.
    pub fn clip_to(&self, duration_s: f64) -> Self {
        let start_s = self.start_s.clamp(0.0, duration_s);
        let end_s = self.end_s.clamp(start_s, duration_s);
        Self { start_s, end_s }
    }
}

/// Per-frame boxes over a contiguous frame range starting at `start_frame`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub start_frame: usize,
    pub boxes: Vec<BBox>,
}

impl Tube {
    pub fn new(start_frame: usize, boxes: Vec<BBox>) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::EmptyInput("tube boxes"));
        }
        Ok(Self { start_frame, boxes })
    }

    /// Last frame index covered (inclusive).
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.boxes.len().saturating_sub(1)
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn get(&self, frame: usize) -> Option<&BBox> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|k| self.boxes.get(k))
    }

    pub fn frames(&self) -> impl Iterator<Item = (usize, &BBox)> {
        self.boxes
            .iter()
            .enumerate()
            .map(move |(k, b)| (self.start_frame + k, b))
    }

    /// Sub-tube covering `[first, last]`, or `None` when the tube does not
    /// fully contain that range.
    pub fn slice(&self, first: usize, last: usize) -> Option<Tube> {
        if first > last || first < self.start_frame || last > self.end_frame() {
            return None;
        }
        let lo = first - self.start_frame;
        let hi = last - self.start_frame;
        Some(Tube {
            start_frame: first,
            boxes: self.boxes[lo..=hi].to_vec(),
        })
    }
}

pub fn box_area(b: &BBox) -> f64 {
    b.area()
}

fn intersection_area(a: &Corners, b: &Corners) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    w * h
}

fn enclosing_area(a: &Corners, b: &Corners) -> f64 {
    (a.x2.max(b.x2) - a.x1.min(b.x1)) * (a.y2.max(b.y2) - a.y1.min(b.y1))
}

/// Zero-area boxes only match an identical zero-area box.
fn degenerate_score(a: &BBox, b: &BBox) -> Option<f64> {
    if a.is_degenerate() || b.is_degenerate() {
        Some(if a == b { 1.0 } else { 0.0 })
    } else {
        None
    }
}

/// Intersection over union of two boxes.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    if let Some(s) = degenerate_score(a, b) {
        return s;
    }
    let (ca, cb) = (a.to_corners(), b.to_corners());
    let inter = intersection_area(&ca, &cb);
    let union = ca.area() + cb.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Generalized IoU: IoU minus the share of the tightest enclosing box not
/// covered by the union.
pub fn box_giou(a: &BBox, b: &BBox) -> f64 {
    if let Some(s) = degenerate_score(a, b) {
        return s;
    }
    let (ca, cb) = (a.to_corners(), b.to_corners());
    let inter = intersection_area(&ca, &cb);
    let union = ca.area() + cb.area() - inter;
    let enclosing = enclosing_area(&ca, &cb);
    if union <= 0.0 || enclosing <= 0.0 {
        return 0.0;
    }
    // rounding can put a containing hull a hair below the union
    inter / union - (enclosing - union).max(0.0) / enclosing
}

/// Interval IoU. Two identical zero-length spans score 1.
pub fn temporal_iou(a: &TimeSpan, b: &TimeSpan) -> f64 {
    let inter = (a.end_s.min(b.end_s) - a.start_s.max(b.start_s)).max(0.0);
    let union = a.duration() + b.duration() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / union
}

/// Clamps the corners of `b` into the unit square and returns the result in
/// center format. Boxes already inside the frame come back unchanged, so the
/// operation is idempotent bit for bit.
pub fn clamp_box(b: &BBox) -> Result<BBox> {
    if [b.cx, b.cy, b.w, b.h].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("box"));
    }
    if b.w >= 0.0 && b.h >= 0.0 && corners_in_unit(b) {
        return Ok(*b);
    }
    let c = b.to_corners();
    let (x1, x2) = ordered(c.x1.clamp(0.0, 1.0), c.x2.clamp(0.0, 1.0));
    let (y1, y2) = ordered(c.y1.clamp(0.0, 1.0), c.y2.clamp(0.0, 1.0));
    let (cx, w) = fit_axis(x1, x2);
    let (cy, h) = fit_axis(y1, y2);
    Ok(BBox { cx, cy, w, h })
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn corners_in_unit(b: &BBox) -> bool {
    let c = b.to_corners();
    [c.x1, c.y1, c.x2, c.y2]
        .iter()
        .all(|v| (0.0..=1.0).contains(v))
}

// Center/extent whose recomputed corners stay inside [0, 1] despite rounding.
fn fit_axis(lo: f64, hi: f64) -> (f64, f64) {
    let center = (lo + hi) / 2.0;
    let mut extent = hi - lo;
    while extent > 0.0 && (center - extent / 2.0 < 0.0 || center + extent / 2.0 > 1.0) {
        extent = extent.next_down();
    }
    (center, extent)
}
