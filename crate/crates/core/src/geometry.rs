//! Axis-aligned box arithmetic shared by every stage of the pipeline.
//!
//! All boxes are absolute pixel coordinates with a top-left origin:
//! `(x, y)` is the left/top edge and `(w, h)` the extent.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box, rejecting non-positive extents and non-finite values.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox { x, y, w, h })
        }
    }

    /// Box centered on `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    /// Area of the intersection; zero for touching or disjoint boxes.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// True when the box lies entirely inside the frame rectangle.
    pub fn inside(&self, frame: FrameBounds) -> bool {
        const EPS: f64 = 1e-9;
        self.x >= -EPS
            && self.y >= -EPS
            && self.right() <= frame.width as f64 + EPS
            && self.bottom() <= frame.height as f64 + EPS
    }
}

/// Canvas dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameBounds {
    pub width: u32,
    pub height: u32,
}

impl FrameBounds {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidBounds { width, height });
        }
        Ok(FrameBounds { width, height })
    }

    pub fn area(&self) -> f64 {
        self.width as f64 * self.height as f64
    }

    pub fn full_box(&self) -> BBox {
        BBox { x: 0.0, y: 0.0, w: self.width as f64, h: self.height as f64 }
    }
}

impl Default for FrameBounds {
    fn default() -> Self {
        FrameBounds { width: 256, height: 256 }
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b && a.area() > 0.0 {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Intersects `b` with the frame. An empty intersection collapses to a 1x1
/// box at the nearest frame corner.
pub fn clamp_to_frame(b: &BBox, frame: FrameBounds) -> BBox {
    if b.inside(frame) {
        return *b;
    }
    let fw = frame.width as f64;
    let fh = frame.height as f64;
    let x0 = b.x.max(0.0);
    let y0 = b.y.max(0.0);
    let x1 = b.right().min(fw);
    let y1 = b.bottom().min(fh);
    if x1 > x0 && y1 > y0 {
        return BBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
    }
    let (cx, cy) = b.center();
    let corner_x = if cx < fw / 2.0 { 0.0 } else { fw - 1.0 };
    let corner_y = if cy < fh / 2.0 { 0.0 } else { fh - 1.0 };
    BBox { x: corner_x, y: corner_y, w: 1.0, h: 1.0 }
}

/// Moves a box (keeping its size where possible) so that it lies in the frame.
/// Boxes larger than the frame are shrunk to the frame extent.
pub fn shift_into_frame(b: &BBox, frame: FrameBounds) -> BBox {
    let fw = frame.width as f64;
    let fh = frame.height as f64;
    let w = b.w.min(fw);
    let h = b.h.min(fh);
    let x = b.x.clamp(0.0, fw - w);
    let y = b.y.clamp(0.0, fh - h);
    BBox { x, y, w, h }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&bb(0., 0., 2., 2.), &bb(5., 5., 2., 2.)), 0.0);
        // overlap 1x2 = 2, union 4 + 4 - 2 = 6
        assert!((iou(&bb(0., 0., 2., 2.), &bb(1., 0., 2., 2.)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_have_zero_iou() {
        assert_eq!(iou(&bb(0., 0., 2., 2.), &bb(2., 0., 2., 2.)), 0.0);
        assert_eq!(iou(&bb(0., 0., 2., 2.), &bb(0., 2., 2., 2.)), 0.0);
    }

    #[test]
    fn center_distance_examples() {
        let a = bb(3., 7., 4., 4.);
        assert_eq!(center_distance(&a, &a), 0.0);
        // centers (1,1) and (4,5)
        assert!((center_distance(&bb(0., 0., 2., 2.), &bb(3., 4., 2., 2.)) - 5.0).abs() < 1e-12);
        assert!((center_distance(&bb(0., 0., 2., 2.), &bb(0., 0., 4., 4.)) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn clamp_examples() {
        let f = FrameBounds::default();
        assert_eq!(clamp_to_frame(&bb(10., 10., 5., 5.), f), bb(10., 10., 5., 5.));
        assert_eq!(clamp_to_frame(&bb(-3., 0., 10., 10.), f), bb(0., 0., 7., 10.));
        assert_eq!(clamp_to_frame(&bb(300., 300., 5., 5.), f), bb(255., 255., 1., 1.));
        assert_eq!(clamp_to_frame(&bb(-30., 300., 5., 5.), f), bb(0., 255., 1., 1.));
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BBox::new(0., 0., 0., 1.).is_err());
        assert!(BBox::new(0., 0., 1., -1.).is_err());
        assert!(BBox::new(f64::NAN, 0., 1., 1.).is_err());
        assert!(FrameBounds::new(0, 5).is_err());
    }

    #[test]
    fn shift_keeps_size() {
        let f = FrameBounds::default();
        let b = shift_into_frame(&bb(250., -4., 10., 10.), f);
        assert_eq!(b, bb(246., 0., 10., 10.));
        assert!(b.inside(f));
    }
}
