//! Raster template-matching tracker.
//!
//! The template is a fixed-resolution RGB patch. Each step scores candidate
//! boxes on a strided grid around the previous box, at a few relative scales,
//! by zero-normalized cross-correlation (ZNCC) against the template.

use serde::{Deserialize, Serialize};

use crate::geometry::{shift_into_frame, BBox};
use crate::raster::Raster;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Side of the square template patch.
    pub template_size: usize,
    /// Half-width of the search window around the previous center, pixels.
    pub search_radius: u32,
    pub stride: u32,
    /// Candidate sizes relative to the previous box.
    pub scales: Vec<f64>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig { template_size: 32, search_radius: 32, stride: 2, scales: vec![0.95, 1.0, 1.05] }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.template_size < 2 || self.stride == 0 || self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0))
        {
            return Err(Error::Config(format!("invalid tracker config {self:?}")));
        }
        Ok(())
    }
}

/// Fixed-resolution appearance patch, packed RGB as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub size: usize,
    pub patch: Vec<f32>,
    pub source_box: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub template: Template,
    pub last_box: BBox,
    /// Zero-mean, unit-norm copy of the patch; `None` when the patch is flat.
    normalized: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseEntry {
    pub bbox: BBox,
    pub score: f64,
    /// Squared center displacement from the previous box, pixels².
    pub displacement: f64,
    /// Distance of the candidate scale from 1.0.
    pub scale_offset: f64,
}

/// Every scored candidate of one tracking step.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub entries: Vec<ResponseEntry>,
}

impl ResponseMap {
    pub fn best(&self) -> &ResponseEntry {
        let mut best = &self.entries[0];
        for e in &self.entries[1..] {
            if prefer(e, best) {
                best = e;
            }
        }
        best
    }

    pub fn max_score(&self) -> f64 {
        self.best().score
    }
}

/// Ordering used for the argmax: higher score, then smaller displacement,
/// then the scale closest to 1.
fn prefer(a: &ResponseEntry, b: &ResponseEntry) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.displacement != b.displacement {
        return a.displacement < b.displacement;
    }
    a.scale_offset < b.scale_offset
}

struct Taps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f32>,
}

fn taps(origin: f64, extent: f64, n: usize, limit: usize) -> Taps {
    let mut t = Taps { lo: Vec::with_capacity(n), hi: Vec::with_capacity(n), frac: Vec::with_capacity(n) };
    let step = extent / n as f64;
    let max = limit as f64 - 1.0;
    for i in 0..n {
        let s = (origin + (i as f64 + 0.5) * step - 0.5).clamp(0.0, max);
        let lo = s.floor();
        t.lo.push(lo as usize);
        t.hi.push((lo as usize + 1).min(limit - 1));
        t.frac.push((s - lo) as f32);
    }
    t
}

/// Bilinear resample of `bbox` to an `n`×`n` packed RGB patch.
pub fn resample(raster: &Raster, bbox: &BBox, n: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n * n * 3);
    sample_into(raster, bbox, n, |v| out.push(v));
    out
}

#[inline]
fn sample_into(raster: &Raster, bbox: &BBox, n: usize, mut emit: impl FnMut(f32)) {
    let xs = taps(bbox.x, bbox.w, n, raster.width());
    let ys = taps(bbox.y, bbox.h, n, raster.height());
    let data = raster.data();
    let stride = raster.width() * 3;
    for j in 0..n {
        let row0 = &data[ys.lo[j] * stride..ys.lo[j] * stride + stride];
        let row1 = &data[ys.hi[j] * stride..ys.hi[j] * stride + stride];
        let fy = ys.frac[j];
        for i in 0..n {
            let (a, b, fx) = (xs.lo[i] * 3, xs.hi[i] * 3, xs.frac[i]);
            for c in 0..3 {
                let top = row0[a + c] as f32 + (row0[b + c] as f32 - row0[a + c] as f32) * fx;
                let bot = row1[a + c] as f32 + (row1[b + c] as f32 - row1[a + c] as f32) * fx;
                emit(top + (bot - top) * fy);
            }
        }
    }
}

fn normalize(patch: &[f32]) -> Option<Vec<f32>> {
    let n = patch.len() as f64;
    let mean = patch.iter().map(|&v| v as f64).sum::<f64>() / n;
    let ss: f64 = patch.iter().map(|&v| (v as f64 - mean).powi(2)).sum();
    if ss <= 1e-6 {
        return None;
    }
    let inv = 1.0 / ss.sqrt();
    Some(patch.iter().map(|&v| ((v as f64 - mean) * inv) as f32).collect())
}

/// ZNCC of two equally sized patches; 0 when either is flat.
pub fn zncc(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "patch sizes differ");
    match (normalize(a), normalize(b)) {
        (Some(na), Some(nb)) => na.iter().zip(&nb).map(|(x, y)| *x as f64 * *y as f64).sum::<f64>().clamp(-1.0, 1.0),
        _ => 0.0,
    }
}

fn check_crop(raster: &Raster, bbox: &BBox) -> Result<()> {
    if !bbox.is_valid() || bbox.area() < 1.0 {
        return Err(Error::DegenerateCrop(*bbox));
    }
    if !bbox.inside(raster.bounds()) {
        return Err(Error::OutOfFrame(*bbox));
    }
    Ok(())
}

/// Starts a track from `bbox` in `raster`.
pub fn init(raster: &Raster, bbox: BBox, cfg: &TrackerConfig) -> Result<TrackerState> {
    check_crop(raster, &bbox)?;
    let patch = resample(raster, &bbox, cfg.template_size);
    let normalized = normalize(&patch);
    Ok(TrackerState { template: Template { size: cfg.template_size, patch, source_box: bbox }, last_box: bbox, normalized })
}

impl TrackerState {
    /// Re-anchors the search window without touching the template.
    pub fn relocate(&mut self, bbox: BBox) {
        self.last_box = bbox;
    }
}

/// Blends the crop at `bbox` into the template:
/// `patch <- (1 - rate) * patch + rate * crop`.
pub fn update_template(state: &mut TrackerState, raster: &Raster, bbox: BBox, rate: f64) -> Result<()> {
    check_crop(raster, &bbox)?;
    let rate = rate.clamp(0.0, 1.0) as f32;
    if rate > 0.0 {
        let fresh = resample(raster, &bbox, state.template.size);
        for (p, f) in state.template.patch.iter_mut().zip(&fresh) {
            *p = (1.0 - rate) * *p + rate * f;
        }
        state.normalized = normalize(&state.template.patch);
    }
    state.template.source_box = bbox;
    Ok(())
}

/// Candidate boxes for one step, in deterministic order.
pub fn candidate_grid(last: &BBox, raster: &Raster, cfg: &TrackerConfig) -> Vec<(BBox, f64, f64)> {
    let bounds = raster.bounds();
    let (cx, cy) = last.center();
    let r = cfg.search_radius as i64;
    let step = cfg.stride as usize;
    let mut out = Vec::new();
    for &s in &cfg.scales {
        let w = (last.w * s).clamp(1.0, bounds.width as f64);
        let h = (last.h * s).clamp(1.0, bounds.height as f64);
        for dy in (-r..=r).step_by(step) {
            for dx in (-r..=r).step_by(step) {
                let b = BBox { x: cx + dx as f64 - w / 2.0, y: cy + dy as f64 - h / 2.0, w, h };
                let b = shift_into_frame(&b, bounds);
                let (bx, by) = b.center();
                let disp = (bx - cx).powi(2) + (by - cy).powi(2);
                out.push((b, disp, (s - 1.0).abs()));
            }
        }
    }
    out
}

const LANES: usize = 8;

/// Horizontally interpolated rows `y0..=y1` at the column taps of one
/// candidate column, offset by -128 to keep f32 sums well conditioned.
fn column_rows(raster: &Raster, xs: &Taps, y0: usize, y1: usize) -> Vec<f32> {
    let data = raster.data();
    let stride = raster.width() * 3;
    let m = xs.lo.len() * 3;
    let mut out = vec![0f32; (y1 + 1 - y0) * m];
    for (y, dst) in (y0..=y1).zip(out.chunks_exact_mut(m)) {
        let row = &data[y * stride..(y + 1) * stride];
        for (((&lo, &hi), &fx), d) in xs.lo.iter().zip(&xs.hi).zip(&xs.frac).zip(dst.chunks_exact_mut(3)) {
            let p: [u8; 3] = row[lo * 3..lo * 3 + 3].try_into().unwrap();
            let q: [u8; 3] = row[hi * 3..hi * 3 + 3].try_into().unwrap();
            for c in 0..3 {
                d[c] = p[c] as f32 - 128.0 + (q[c] as f32 - p[c] as f32) * fx;
            }
        }
    }
    out
}

/// ZNCC of one candidate, given its column's interpolated rows and its row taps.
fn score_rows(rows: &[f32], y0: usize, ys: &Taps, t: &[f32]) -> f64 {
    let m = t.len() / ys.lo.len();
    let (mut s1, mut s2, mut st) = (0f64, 0f64, 0f64);
    for j in 0..ys.lo.len() {
        let r0 = &rows[(ys.lo[j] - y0) * m..][..m];
        let r1 = &rows[(ys.hi[j] - y0) * m..][..m];
        let tr = &t[j * m..][..m];
        let fy = ys.frac[j];
        let (mut a1, mut a2, mut at) = ([0f32; LANES], [0f32; LANES], [0f32; LANES]);
        let mut it = r0.chunks_exact(LANES).zip(r1.chunks_exact(LANES)).zip(tr.chunks_exact(LANES));
        for ((p, q), tv) in &mut it {
            let (p, q, tv): (&[f32; LANES], &[f32; LANES], &[f32; LANES]) =
                (p.try_into().unwrap(), q.try_into().unwrap(), tv.try_into().unwrap());
            for l in 0..LANES {
                let v = p[l] + (q[l] - p[l]) * fy;
                a1[l] += v;
                a2[l] += v * v;
                at[l] += v * tv[l];
            }
        }
        let k = m - m % LANES;
        for l in k..m {
            let v = r0[l] + (r1[l] - r0[l]) * fy;
            a1[0] += v;
            a2[0] += v * v;
            at[0] += v * tr[l];
        }
        s1 += a1.iter().sum::<f32>() as f64;
        s2 += a2.iter().sum::<f32>() as f64;
        st += at.iter().sum::<f32>() as f64;
    }
    let len = t.len() as f64;
    let var = s2 - s1 * s1 / len;
    if var <= 1e-6 * len {
        0.0
    } else {
        (st / var.sqrt()).clamp(-1.0, 1.0)
    }
}

/// Scores every candidate against the template without moving the state.
pub fn response(raster: &Raster, state: &TrackerState, cfg: &TrackerConfig) -> ResponseMap {
    let n = state.template.size;
    let grid = candidate_grid(&state.last_box, raster, cfg);
    let mut scores = vec![0.0; grid.len()];
    if let Some(t) = &state.normalized {
        // Candidates sharing x and w share their horizontal taps.
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by_key(|&k| (grid[k].0.x.to_bits(), grid[k].0.w.to_bits(), k));
        for group in order.chunk_by(|&a, &b| grid[a].0.x == grid[b].0.x && grid[a].0.w == grid[b].0.w) {
            let head = &grid[group[0]].0;
            let xs = taps(head.x, head.w, n, raster.width());
            let ys: Vec<Taps> = group.iter().map(|&k| taps(grid[k].0.y, grid[k].0.h, n, raster.height())).collect();
            let y0 = ys.iter().map(|y| y.lo[0]).min().unwrap_or(0);
            let y1 = ys.iter().map(|y| y.hi[n - 1]).max().unwrap_or(0);
            let rows = column_rows(raster, &xs, y0, y1);
            for (&k, y) in group.iter().zip(&ys) {
                scores[k] = score_rows(&rows, y0, y, t);
            }
        }
    }
    let entries = grid
        .into_iter()
        .zip(scores)
        .map(|((bbox, displacement, scale_offset), score)| ResponseEntry { bbox, score, displacement, scale_offset })
        .collect();
    ResponseMap { entries }
}

/// One tracking step: returns the best candidate and moves the state there.
pub fn track(raster: &Raster, state: &mut TrackerState, cfg: &TrackerConfig) -> (BBox, ResponseMap) {
    let map = response(raster, state, cfg);
    let best = map.best().bbox;
    state.last_box = best;
    (best, map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{iou, FrameBounds};
    use crate::queries::{Color, Shape};
    use crate::synthworld::tests::{object, scene, still};
    use crate::synthworld::{render_frame, Trajectory, VideoSample, BACKGROUND};

    fn fast() -> TrackerConfig {
        TrackerConfig { template_size: 16, search_radius: 12, ..Default::default() }
    }

    fn two_object_video(n: usize, velocity: [f64; 2]) -> VideoSample {
        let s = scene(
            n,
            vec![
                object(0, Shape::Triangle, Color::Orange, 28.0, [70.0, 80.0], Trajectory::Linear { velocity }),
                object(1, Shape::Ellipse, Color::Green, 20.0, [190.0, 190.0], still()),
            ],
            0,
        );
        VideoSample::from_scene(0, s).unwrap()
    }

    #[test]
    fn response_matches_direct_resample() {
        let v = two_object_video(6, [1.5, -1.0]);
        let cfg = TrackerConfig { template_size: 12, search_radius: 6, ..Default::default() };
        let st = init(&v.frame(0).unwrap(), v.gt_tubelet[0], &cfg).unwrap();
        let f = v.frame(5).unwrap();
        let map = response(&f, &st, &cfg);
        for e in &map.entries {
            let direct = zncc(&resample(&f, &e.bbox, 12), &st.template.patch);
            assert!((e.score - direct).abs() < 1e-4, "{} vs {direct}", e.score);
        }
    }

    #[test]
    fn self_match_stays_put() {
        let v = two_object_video(2, [0.0, 0.0]);
        let f = v.frame(0).unwrap();
        let cfg = TrackerConfig::default();
        let mut st = init(&f, v.gt_tubelet[0], &cfg).unwrap();
        let (b, map) = track(&f, &mut st, &cfg);
        assert_eq!(b, v.gt_tubelet[0]);
        assert!((map.max_score() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn exact_size_init_copies_pixels() {
        let v = two_object_video(1, [0.0, 0.0]);
        let f = v.frame(0).unwrap();
        let cfg = TrackerConfig::default();
        let b = BBox::new(40.0, 50.0, 32.0, 32.0).unwrap();
        let st = init(&f, b, &cfg).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let px = f.pixel(40 + x, 50 + y);
                for c in 0..3 {
                    assert_eq!(st.template.patch[(y * 32 + x) * 3 + c], px[c] as f32);
                }
            }
        }
    }

    #[test]
    fn init_rejects_out_of_frame() {
        let v = two_object_video(1, [0.0, 0.0]);
        let f = v.frame(0).unwrap();
        let cfg = TrackerConfig::default();
        assert!(matches!(init(&f, BBox::new(-5.0, 0.0, 20.0, 20.0).unwrap(), &cfg), Err(Error::OutOfFrame(_))));
        assert!(matches!(init(&f, BBox::new(5.0, 5.0, 0.5, 0.5).unwrap(), &cfg), Err(Error::DegenerateCrop(_))));
    }

    #[test]
    fn static_target_tracks_for_fifty_frames() {
        let v = two_object_video(51, [0.0, 0.0]);
        let cfg = TrackerConfig::default();
        let mut st = init(&v.frame(0).unwrap(), v.gt_tubelet[0], &cfg).unwrap();
        for t in 1..51 {
            let (b, _) = track(&v.frame(t).unwrap(), &mut st, &cfg);
            assert!(iou(&b, &v.gt_tubelet[t]) >= 0.9);
        }
    }

    #[test]
    fn uniform_frame_gives_flat_response() {
        let v = two_object_video(1, [0.0, 0.0]);
        let cfg = fast();
        let mut st = init(&v.frame(0).unwrap(), v.gt_tubelet[0], &cfg).unwrap();
        let blank = Raster::filled(FrameBounds::default(), BACKGROUND);
        let (b, map) = track(&blank, &mut st, &cfg);
        assert!(map.max_score() < 0.5);
        assert!(b.inside(blank.bounds()));
    }

    #[test]
    fn zncc_properties() {
        let a: Vec<f32> = (0..48).map(|i| (i * 7 % 13) as f32).collect();
        assert!((zncc(&a, &a) - 1.0).abs() < 1e-6);
        let affine: Vec<f32> = a.iter().map(|v| 0.3 * v + 10.0).collect();
        assert!((zncc(&a, &affine) - 1.0).abs() < 1e-6);
        let neg: Vec<f32> = a.iter().map(|v| -v).collect();
        assert!((zncc(&a, &neg) + 1.0).abs() < 1e-6);
        assert_eq!(zncc(&a, &[5.0; 48]), 0.0);
    }

    #[test]
    fn template_blend_rates() {
        let v = two_object_video(3, [3.0, 2.0]);
        let cfg = fast();
        let f0 = v.frame(0).unwrap();
        let f2 = v.frame(2).unwrap();
        let base = init(&f0, v.gt_tubelet[0], &cfg).unwrap();
        let fresh = resample(&f2, &v.gt_tubelet[2], cfg.template_size);

        let mut full = base.clone();
        update_template(&mut full, &f2, v.gt_tubelet[2], 1.0).unwrap();
        assert_eq!(full.template.patch, fresh);
        assert_eq!(full.template.source_box, v.gt_tubelet[2]);

        let mut none = base.clone();
        update_template(&mut none, &f2, v.gt_tubelet[2], 0.0).unwrap();
        assert_eq!(none.template.patch, base.template.patch);

        let mut twice = base.clone();
        update_template(&mut twice, &f2, v.gt_tubelet[2], 0.9).unwrap();
        update_template(&mut twice, &f2, v.gt_tubelet[2], 0.9).unwrap();
        for ((t, o), p) in twice.template.patch.iter().zip(&base.template.patch).zip(&fresh) {
            assert!((t - (0.01 * o + 0.99 * p)).abs() < 1e-3);
        }
    }

    #[test]
    fn linear_motion_tracks_well() {
        let v = two_object_video(101, [1.5, 0.8]);
        let cfg = TrackerConfig::default();
        let mut st = init(&v.frame(0).unwrap(), v.gt_tubelet[0], &cfg).unwrap();
        let mut total = 0.0;
        for t in 1..101 {
            let (b, _) = track(&v.frame(t).unwrap(), &mut st, &cfg);
            assert!(b.inside(v.scene.bounds));
            total += iou(&b, &v.gt_tubelet[t]);
        }
        assert!(total / 100.0 >= 0.7, "mean IoU {}", total / 100.0);
    }

    #[test]
    fn response_scores_are_bounded() {
        let v = two_object_video(5, [2.0, -1.0]);
        let cfg = fast();
        let st = init(&v.frame(0).unwrap(), v.gt_tubelet[0], &cfg).unwrap();
        let frame = render_frame(&v.scene, &v.states[4], 4);
        let map = response(&frame, &st, &cfg);
        assert_eq!(map.entries.len(), 13 * 13 * 3);
        assert!(map.entries.iter().all(|e| e.score.is_finite() && (-1.0..=1.0).contains(&e.score)));
    }
}
