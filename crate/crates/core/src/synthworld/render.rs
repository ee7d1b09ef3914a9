use crate::geometry::BBox;
use crate::raster::Raster;
use crate::{Error, Result};

use super::{simulate, DegradationKind, FrameState, ObjectSpec, SceneSpec};
use crate::queries::Shape;

pub const BACKGROUND: [u8; 3] = [128, 128, 128];
pub const OCCLUDER: [u8; 3] = [40, 40, 40];

/// Outline darkening factor.
const EDGE_SHADE: f64 = 0.55;

fn outline_width(size: f64) -> f64 {
    if size >= 16.0 {
        2.0
    } else {
        1.0
    }
}

/// Classifies a pixel center against a shape: `None` outside, `Some(true)`
/// on the darker outline, `Some(false)` in the interior.
fn classify(shape: Shape, b: &BBox, px: f64, py: f64) -> Option<bool> {
    let edge = outline_width(b.w);
    match shape {
        Shape::Rectangle => {
            if !b.contains_point(px, py) {
                return None;
            }
            let d = (px - b.x).min(b.right() - px).min(py - b.y).min(b.bottom() - py);
            Some(d < edge)
        }
        Shape::Ellipse => {
            let (cx, cy) = b.center();
            let r = b.w / 2.0;
            let d = (px - cx).hypot(py - cy);
            if d > r {
                return None;
            }
            Some(d > r - edge)
        }
        Shape::Triangle => {
            // apex at top center, base along the bottom edge
            let apex = (b.x + b.w / 2.0, b.y);
            let left = (b.x, b.bottom());
            let right = (b.right(), b.bottom());
            let mut min_d = f64::INFINITY;
            for (p, q) in [(apex, right), (right, left), (left, apex)] {
                let (ex, ey) = (q.0 - p.0, q.1 - p.1);
                let len = ex.hypot(ey);
                // inward normal for a clockwise (screen coords) winding
                let d = ((px - p.0) * ey - (py - p.1) * ex) / len * -1.0;
                if d < 0.0 {
                    return None;
                }
                min_d = min_d.min(d);
            }
            Some(min_d < edge)
        }
    }
}

fn paint_object(r: &mut Raster, obj: &ObjectSpec, b: &BBox) {
    let rgb = obj.color.rgb();
    let dark = rgb.map(|c| (c as f64 * EDGE_SHADE).round() as u8);
    let (w, h) = (r.width() as i64, r.height() as i64);
    let x0 = (b.x.floor() as i64).clamp(0, w);
    let x1 = (b.right().ceil() as i64).clamp(0, w);
    let y0 = (b.y.floor() as i64).clamp(0, h);
    let y1 = (b.bottom().ceil() as i64).clamp(0, h);
    for y in y0..y1 {
        for x in x0..x1 {
            if let Some(on_edge) = classify(obj.shape, b, x as f64 + 0.5, y as f64 + 0.5) {
                r.put(x as usize, y as usize, if on_edge { dark } else { rgb });
            }
        }
    }
}

/// The opaque vertical band that hides the target during an occlusion event.
pub(crate) fn occlusion_band(scene: &SceneSpec, state: &FrameState, frame: usize) -> Option<BBox> {
    let m = scene.active_magnitude(DegradationKind::FullOcclusionBand, frame);
    if m <= 0.0 {
        return None;
    }
    let t = &state[scene.target_index()?];
    let width = m * (t.size + 8.0);
    Some(BBox { x: t.center.0 - width / 2.0, y: 0.0, w: width, h: scene.bounds.height as f64 })
}

/// Fraction of an object's bounding square left uncovered by the occlusion
/// band and by any single object painted above it.
pub fn visible_fraction(scene: &SceneSpec, state: &FrameState, index: usize, frame: usize) -> f64 {
    let b = state[index].bbox();
    let area = b.area();
    let mut covered: f64 = 0.0;
    if let Some(band) = occlusion_band(scene, state, frame) {
        covered = covered.max(b.intersection_area(&band) / area);
    }
    let z = scene.objects[index].z_order;
    for (j, other) in scene.objects.iter().enumerate() {
        if j != index && (other.z_order, other.id) > (z, scene.objects[index].id) {
            covered = covered.max(b.intersection_area(&state[j].bbox()) / area);
        }
    }
    (1.0 - covered).clamp(0.0, 1.0)
}

/// Renders one frame from precomputed object states.
pub fn render_frame(scene: &SceneSpec, state: &FrameState, frame: usize) -> Raster {
    let mut r = Raster::filled(scene.bounds, BACKGROUND);
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.sort_by_key(|&i| (scene.objects[i].z_order, scene.objects[i].id));
    for i in order {
        paint_object(&mut r, &scene.objects[i], &state[i].bbox());
    }
    if let Some(band) = occlusion_band(scene, state, frame) {
        let x0 = (band.x.round().max(0.0) as usize).min(r.width());
        let x1 = (band.right().round().max(0.0) as usize).min(r.width());
        for y in 0..r.height() {
            for x in x0..x1 {
                r.put(x, y, OCCLUDER);
            }
        }
    }
    let blur = scene.active_magnitude(DegradationKind::Blur, frame);
    if blur > 0.0 {
        r.box_blur((3.0 * blur).ceil() as usize);
    }
    let illum = scene.active_magnitude(DegradationKind::IlluminationShift, frame);
    if illum > 0.0 {
        r.scale_intensity(1.0 - 0.7 * illum);
    }
    r
}

/// Renders frame `frame` of `scene` from scratch.
pub fn rasterize(scene: &SceneSpec, frame: usize) -> Result<Raster> {
    if frame >= scene.n_frames {
        return Err(Error::FrameOutOfRange { index: frame, n_frames: scene.n_frames });
    }
    scene.validate()?;
    let states = simulate(scene);
    Ok(render_frame(scene, &states[frame], frame))
}
