//! Box and point primitives plus the overlap/distance kernels the cost
//! builders are made of.
//!
//! Boxes are stored in normalized center-size form (`cx, cy, w, h`, all in
//! `[0, 1]`). Corner and pixel forms only appear at I/O boundaries.

use crate::error::{Error, Result};

/// Smallest accepted normalized side length.
pub const MIN_SIDE: f64 = 1e-6;

/// Slack allowed on the unit-square bounds for values produced by float
/// conversions.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    /// Validated constructor from normalized center-size values. The box must
    /// lie inside the unit square; use [`BoundingBox::clamped`] for raw
    /// regression outputs.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinates ({cx}, {cy}, {w}, {h})"
            )));
        }
        if w < MIN_SIDE || h < MIN_SIDE {
            return Err(Error::InvalidBox(format!(
                "side below {MIN_SIDE}: w={w}, h={h}"
            )));
        }
        let (x0, y0, x1, y1) = (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0);
        if x0 < -BOUND_SLACK || y0 < -BOUND_SLACK || x1 > 1.0 + BOUND_SLACK || y1 > 1.0 + BOUND_SLACK
        {
            return Err(Error::InvalidBox(format!(
                "extent ({x0}, {y0}, {x1}, {y1}) outside the unit square"
            )));
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Normalized corners `(x0, y0, x1, y1)`, validated like [`BoundingBox::new`].
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    /// Clamps normalized corners into the unit square before validating.
    pub fn clamped_from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite corners ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        let c = |v: f64| v.clamp(0.0, 1.0);
        Self::from_corners(c(x0), c(y0), c(x1), c(y1))
    }

    /// Center-size values clamped to the unit square (ingestion path for
    /// teacher regression outputs).
    pub fn clamped(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::clamped_from_corners(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    /// COCO pixel box `[x, y, w, h]` in an image of the given size.
    pub fn from_pixel_xywh(xywh: [f64; 4], image_width: f64, image_height: f64) -> Result<Self> {
        let [x, y, w, h] = xywh;
        if !(image_width > 0.0 && image_height > 0.0) {
            return Err(Error::InvalidInput(format!(
                "image size {image_width}x{image_height} must be positive"
            )));
        }
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::InvalidBox(format!("non-positive pixel extent w={w}, h={h}")));
        }
        Self::clamped_from_corners(
            x / image_width,
            y / image_height,
            (x + w) / image_width,
            (y + h) / image_height,
        )
    }

    /// Inverse of [`BoundingBox::from_pixel_xywh`].
    pub fn to_pixel_xywh(&self, image_width: f64, image_height: f64) -> [f64; 4] {
        let [x0, y0, _, _] = self.corners();
        [
            x0 * image_width,
            y0 * image_height,
            self.w * image_width,
            self.h * image_height,
        ]
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cxcywh(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// `[x0, y0, x1, y1]` in normalized units.
    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Point2D {
        Point2D {
            px: self.cx,
            py: self.cy,
        }
    }

    /// Linear interpolation in center-size space; `t = 0` is `self`, `t = 1`
    /// is `other`.
    pub fn lerp(&self, other: &BoundingBox, t: f64) -> BoundingBox {
        let mix = |a: f64, b: f64| a + (b - a) * t;
        BoundingBox {
            cx: mix(self.cx, other.cx),
            cy: mix(self.cy, other.cy),
            w: mix(self.w, other.w),
            h: mix(self.h, other.h),
        }
    }
}

/// A point in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2D {
    px: f64,
    py: f64,
}

impl Point2D {
    pub fn new(px: f64, py: f64) -> Result<Self> {
        if !(px.is_finite() && py.is_finite()) || !(0.0..=1.0).contains(&px) || !(0.0..=1.0).contains(&py)
        {
            return Err(Error::InvalidPoint(format!("({px}, {py}) outside [0, 1]^2")));
        }
        Ok(Self { px, py })
    }

    pub fn px(&self) -> f64 {
        self.px
    }

    pub fn py(&self) -> f64 {
        self.py
    }
}

fn intersection_and_union(a: &BoundingBox, b: &BoundingBox) -> (f64, f64) {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    (inter, a.area() + b.area() - inter)
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (inter, union) = intersection_and_union(a, b);
    inter / union
}

/// Generalized IoU: `iou - (enclosing - union) / enclosing`, in `[-1, 1]`.
pub fn giou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (inter, union) = intersection_and_union(a, b);
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let enclosing = (ax1.max(bx1) - ax0.min(bx0)) * (ay1.max(by1) - ay0.min(by0));
    inter / union - (enclosing - union) / enclosing
}

/// Sum of absolute differences of the center-size coordinates.
pub fn l1_box(a: &BoundingBox, b: &BoundingBox) -> f64 {
    (a.cx - b.cx).abs() + (a.cy - b.cy).abs() + (a.w - b.w).abs() + (a.h - b.h).abs()
}

/// Euclidean distance from `p` to the center of `b`.
pub fn center_distance(p: &Point2D, b: &BoundingBox) -> f64 {
    (p.px - b.cx).hypot(p.py - b.cy)
}

/// Closed-interval containment: points on an edge count as inside.
pub fn contains(b: &BoundingBox, p: &Point2D) -> bool {
    let [x0, y0, x1, y1] = b.corners();
    (x0..=x1).contains(&p.px) && (y0..=y1).contains(&p.py)
}
