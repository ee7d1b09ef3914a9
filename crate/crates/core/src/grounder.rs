//! Per-frame language grounding over the symbolic scene with a controllable
//! error model.
//!
//! Detection perceives every visible object with some probability, jitters its
//! box, occasionally corrupts its color or shape, and mixes in spurious
//! detections. Grounding then scores each perceived candidate against the
//! parsed query. The confidence reflects attribute agreement and localization
//! quality, but it cannot tell a correctly perceived target from a distractor
//! that happens to look the same.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{clamp_to_frame, BBox};
use crate::queries::{self, Color, ConstraintSet, ObjectView, SceneContext, Shape};
use crate::raster::Raster;
use crate::rtscore::GroundingFeatures;
use crate::seeding::{rng_for, TAG_GROUND};
use crate::synthworld::{visible_fraction, DegradationKind, VideoSample};
use crate::{Error, Result};

/// Objects with less than this fraction of their square showing are not
/// detectable.
pub const MIN_VISIBLE_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseProfile {
    /// Std of the Gaussian jitter added to each box corner, pixels.
    pub jitter_sigma: f64,
    /// Per-object miss probability before degradation boosts.
    pub miss_rate: f64,
    /// Expected spurious detections per frame.
    pub false_positive_rate: f64,
    /// Probability that a detection's color or shape is misperceived.
    pub confusion_rate: f64,
    pub seed: u64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile { jitter_sigma: 1.5, miss_rate: 0.05, false_positive_rate: 0.1, confusion_rate: 0.05, seed: 0 }
    }
}

impl NoiseProfile {
    pub fn noiseless() -> Self {
        NoiseProfile { jitter_sigma: 0.0, miss_rate: 0.0, false_positive_rate: 0.0, confusion_rate: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.miss_rate, self.false_positive_rate, self.confusion_rate];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) || !(self.jitter_sigma >= 0.0) {
            return Err(Error::Config(format!("invalid noise profile {self:?}")));
        }
        Ok(())
    }

    /// Same profile with the noise stream re-keyed by a run seed.
    pub fn reseeded(&self, run_seed: u64) -> Self {
        NoiseProfile { seed: crate::seeding::mix(&[self.seed, run_seed]), ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "id")]
pub enum CandidateSource {
    Object(u32),
    Spurious,
    Fallback,
}

/// A perceived object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bbox: BBox,
    pub shape: Shape,
    pub color: Color,
    pub source: CandidateSource,
    /// Localization-error estimate fed into the detection quality.
    pub jitter_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    pub match_strength: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingOutput {
    pub top1: ScoredBox,
    /// Index of the winner in `candidates`.
    pub top1_index: usize,
    /// Every scored candidate; the full-frame fallback is last.
    pub candidates: Vec<ScoredCandidate>,
    pub features: GroundingFeatures,
}

impl GroundingOutput {
    pub fn top1_candidate(&self) -> &ScoredCandidate {
        &self.candidates[self.top1_index]
    }
}

fn corrupt<R: Rng>(rng: &mut R, shape: Shape, color: Color) -> (Shape, Color) {
    let flip_shape = rng.random::<bool>();
    let pick: f64 = rng.random();
    if flip_shape {
        let others: Vec<Shape> = Shape::ALL.into_iter().filter(|s| *s != shape).collect();
        (others[(pick * others.len() as f64) as usize % others.len()], color)
    } else {
        let others: Vec<Color> = Color::ALL.into_iter().filter(|c| *c != color).collect();
        (shape, others[(pick * others.len() as f64) as usize % others.len()])
    }
}

/// Perceived objects at one frame. Deterministic in
/// `(noise.seed, video id, frame)`; the same random draws are consumed per
/// object regardless of the rates, so raising `miss_rate` can only remove
/// detections.
pub fn detect_candidates(sample: &VideoSample, frame: usize, noise: &NoiseProfile) -> Result<Vec<Candidate>> {
    if frame >= sample.n_frames() {
        return Err(Error::FrameOutOfRange { index: frame, n_frames: sample.n_frames() });
    }
    let scene = &sample.scene;
    let state = &sample.states[frame];
    let bounds = scene.bounds;
    let mut rng = rng_for(&[noise.seed, TAG_GROUND, sample.video_id, frame as u64]);
    let p_miss = (noise.miss_rate + 0.5 * scene.max_active_magnitude(frame)).clamp(0.0, 1.0);

    let mut out = Vec::with_capacity(scene.objects.len() + 1);
    for (i, obj) in scene.objects.iter().enumerate() {
        let u_miss: f64 = rng.random();
        let offsets: [f64; 4] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) * noise.jitter_sigma);
        let u_confuse: f64 = rng.random();
        let corrupted = corrupt(&mut rng, obj.shape, obj.color);

        if u_miss < p_miss || visible_fraction(scene, state, i, frame) < MIN_VISIBLE_FRACTION {
            continue;
        }
        let truth = state[i].bbox();
        let w = (truth.w + offsets[2] - offsets[0]).max(2.0);
        let h = (truth.h + offsets[3] - offsets[1]).max(2.0);
        let bbox = clamp_to_frame(&BBox { x: truth.x + offsets[0], y: truth.y + offsets[1], w, h }, bounds);
        let rms = (offsets.iter().map(|o| o * o).sum::<f64>() / 4.0).sqrt();
        let (shape, color) = if u_confuse < noise.confusion_rate { corrupted } else { (obj.shape, obj.color) };
        out.push(Candidate {
            bbox,
            shape,
            color,
            source: CandidateSource::Object(obj.id),
            jitter_estimate: rms / (0.25 * obj.size),
        });
    }

    let n_spurious = if noise.false_positive_rate > 0.0 {
        Poisson::new(noise.false_positive_rate).map(|p| p.sample(&mut rng) as usize).unwrap_or(0)
    } else {
        0
    };
    for _ in 0..n_spurious {
        let size = rng.random_range(8.0..48.0);
        let cx = rng.random_range(0.0..bounds.width as f64);
        let cy = rng.random_range(0.0..bounds.height as f64);
        let shape = Shape::ALL[rng.random_range(0..Shape::ALL.len())];
        let color = Color::ALL[rng.random_range(0..Color::ALL.len())];
        let bbox = clamp_to_frame(&BBox { x: cx - size / 2.0, y: cy - size / 2.0, w: size, h: size }, bounds);
        out.push(Candidate { bbox, shape, color, source: CandidateSource::Spurious, jitter_estimate: rng.random_range(0.0..1.0) });
    }
    Ok(out)
}

/// Grounds a query text at one frame.
pub fn ground(
    sample: &VideoSample,
    frame: usize,
    query: &str,
    noise: &NoiseProfile,
    raster: &Raster,
) -> Result<GroundingOutput> {
    let c = queries::parse(query)?;
    ground_constraints(sample, frame, &c, noise, raster)
}

/// Grounds parsed constraints at one frame; `raster` must be that frame.
pub fn ground_constraints(
    sample: &VideoSample,
    frame: usize,
    constraints: &ConstraintSet,
    noise: &NoiseProfile,
    raster: &Raster,
) -> Result<GroundingOutput> {
    let detections = detect_candidates(sample, frame, noise)?;
    Ok(score_candidates(sample, frame, constraints, detections, raster))
}

pub(crate) fn score_candidates(
    sample: &VideoSample,
    frame: usize,
    constraints: &ConstraintSet,
    detections: Vec<Candidate>,
    raster: &Raster,
) -> GroundingOutput {
    let scene = &sample.scene;
    let degradation = scene.max_active_magnitude(frame);
    let views: Vec<ObjectView> = detections
        .iter()
        .map(|d| ObjectView { shape: d.shape, color: d.color, size: d.bbox.area().sqrt(), center: d.bbox.center() })
        .collect();
    let ctx = SceneContext { bounds: scene.bounds, median_size: scene.median_object_size(), objects: &views };

    let mut candidates: Vec<ScoredCandidate> = detections
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let m = queries::satisfies(constraints, i, &ctx);
            let quality = ((-d.jitter_estimate.powi(2)).exp() * (1.0 - 0.5 * degradation)).clamp(0.0, 1.0);
            ScoredCandidate { candidate: *d, match_strength: m.strength, confidence: (m.strength * quality).clamp(0.0, 1.0) }
        })
        .collect();
    candidates.push(ScoredCandidate {
        candidate: Candidate {
            bbox: scene.bounds.full_box(),
            shape: Shape::Rectangle,
            color: Color::Red,
            source: CandidateSource::Fallback,
            jitter_estimate: 0.0,
        },
        match_strength: 0.0,
        confidence: 0.0,
    });

    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let b = &candidates[best];
        let better = c.confidence > b.confidence
            || (c.confidence == b.confidence && c.candidate.bbox.area() > b.candidate.bbox.area());
        if better {
            best = i;
        }
    }
    let top = candidates[best];
    let features = GroundingFeatures::extract(&candidates, best, scene, frame, raster);
    GroundingOutput {
        top1: ScoredBox { bbox: top.candidate.bbox, confidence: top.confidence },
        top1_index: best,
        candidates,
        features,
    }
}

/// Active blur and illumination magnitudes, as the grounder perceives them.
pub(crate) fn degradation_levels(sample_scene: &crate::synthworld::SceneSpec, frame: usize) -> (f64, f64) {
    (
        sample_scene.active_magnitude(DegradationKind::Blur, frame),
        sample_scene.active_magnitude(DegradationKind::IlluminationShift, frame),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use crate::synthworld::tests::{object, scene, still};
    use crate::synthworld::{generate_dataset, DegradationEvent, GenConfig, Trajectory};

    fn sample_single() -> VideoSample {
        let s = scene(4, vec![object(0, Shape::Rectangle, Color::Red, 24.0, [80.0, 90.0], Trajectory::Linear { velocity: [1.0, 0.5] })], 0);
        VideoSample::from_scene(1, s).unwrap()
    }

    #[test]
    fn noiseless_detection_is_identity() {
        let v = sample_single();
        for f in 0..v.n_frames() {
            let c = detect_candidates(&v, f, &NoiseProfile::noiseless()).unwrap();
            assert_eq!(c.len(), 1);
            assert_eq!(c[0].bbox, v.gt_tubelet[f]);
            assert_eq!((c[0].shape, c[0].color), (Shape::Rectangle, Color::Red));
        }
    }

    #[test]
    fn miss_rate_one_leaves_only_spurious() {
        let v = sample_single();
        let noise = NoiseProfile { miss_rate: 1.0, false_positive_rate: 1.0, ..NoiseProfile::noiseless() };
        for f in 0..v.n_frames() {
            let c = detect_candidates(&v, f, &noise).unwrap();
            assert!(c.iter().all(|c| c.source == CandidateSource::Spurious));
        }
    }

    #[test]
    fn detection_is_deterministic() {
        let v = sample_single();
        let noise = NoiseProfile { seed: 42, jitter_sigma: 3.0, false_positive_rate: 0.8, confusion_rate: 0.3, miss_rate: 0.2 };
        for f in 0..v.n_frames() {
            assert_eq!(detect_candidates(&v, f, &noise).unwrap(), detect_candidates(&v, f, &noise).unwrap());
        }
    }

    #[test]
    fn noiseless_grounding_is_exact() {
        let v = sample_single();
        for f in 0..v.n_frames() {
            let r = v.frame(f).unwrap();
            let g = ground(&v, f, "the red rectangle", &NoiseProfile::noiseless(), &r).unwrap();
            assert_eq!(g.top1.bbox, v.gt_tubelet[f]);
            assert_eq!(g.top1.confidence, 1.0);
            assert_eq!(g.candidates.last().unwrap().candidate.source, CandidateSource::Fallback);
        }
    }

    #[test]
    fn identical_distractors_resolve_by_tie_break() {
        // same size, so area ties too; the lower index wins
        for target in [0u32, 1] {
            let s = scene(
                1,
                vec![
                    object(0, Shape::Ellipse, Color::Blue, 20.0, [60.0, 128.0], still()),
                    object(1, Shape::Ellipse, Color::Blue, 20.0, [190.0, 128.0], still()),
                ],
                target,
            );
            let v = VideoSample::from_scene(0, s).unwrap();
            let g = ground(&v, 0, "the blue ellipse", &NoiseProfile::noiseless(), &v.frame(0).unwrap()).unwrap();
            assert_eq!(g.top1_index, 0);
            let expected = if target == 0 { 1.0 } else { 0.0 };
            assert_eq!(iou(&g.top1.bbox, &v.gt_tubelet[0]), expected);
        }
    }

    #[test]
    fn occluded_frame_falls_back() {
        let mut s = scene(3, vec![object(0, Shape::Rectangle, Color::Red, 24.0, [80.0, 90.0], still())], 0);
        s.events.push(DegradationEvent { kind: DegradationKind::FullOcclusionBand, start: 1, end: 2, magnitude: 1.0 });
        let v = VideoSample::from_scene(0, s).unwrap();
        let noise = NoiseProfile { miss_rate: 0.5, ..NoiseProfile::noiseless() };
        let g = ground(&v, 1, "the red rectangle", &noise, &v.frame(1).unwrap()).unwrap();
        assert_eq!(g.candidates[g.top1_index].candidate.source, CandidateSource::Fallback);
        assert_eq!(g.top1.confidence, 0.0);
        assert_eq!(g.top1.bbox, v.scene.bounds.full_box());
    }

    #[test]
    fn parse_errors_propagate() {
        let v = sample_single();
        let r = v.frame(0).unwrap();
        assert!(matches!(ground(&v, 0, "the wobbly cube", &NoiseProfile::noiseless(), &r), Err(Error::Query(_))));
    }

    #[test]
    fn confidence_is_bounded_and_top1_is_max() {
        let ds = generate_dataset(&GenConfig { n_videos: 6, frames: [20, 30], ..Default::default() }, 8).unwrap();
        let noise = NoiseProfile { seed: 3, jitter_sigma: 4.0, miss_rate: 0.2, false_positive_rate: 0.7, confusion_rate: 0.3 };
        for rec in &ds.videos {
            let v = rec.to_sample().unwrap();
            for f in 0..v.n_frames() {
                let r = v.frame(f).unwrap();
                let g = ground(&v, f, &v.queries[0].text, &noise, &r).unwrap();
                let max = g.candidates.iter().map(|c| c.confidence).fold(0.0, f64::max);
                assert_eq!(g.top1.confidence, max);
                assert!(g.candidates.iter().all(|c| (0.0..=1.0).contains(&c.confidence)));
                assert!(g.candidates.iter().all(|c| c.candidate.bbox.inside(v.scene.bounds)));
            }
        }
    }

    #[test]
    fn raising_miss_rate_never_adds_true_detections() {
        let ds = generate_dataset(&GenConfig { n_videos: 4, frames: [10, 10], ..Default::default() }, 2).unwrap();
        for seed in 0..100u64 {
            let v = ds.videos[(seed % 4) as usize].to_sample().unwrap();
            let f = (seed % 10) as usize;
            let mut last = usize::MAX;
            for miss in [0.0, 0.1, 0.3, 0.6, 0.9, 1.0] {
                let noise = NoiseProfile { seed, miss_rate: miss, jitter_sigma: 2.0, false_positive_rate: 0.5, confusion_rate: 0.2 };
                let n = detect_candidates(&v, f, &noise)
                    .unwrap()
                    .iter()
                    .filter(|c| matches!(c.source, CandidateSource::Object(_)))
                    .count();
                assert!(n <= last);
                last = n;
            }
        }
    }

    #[test]
    fn noiseless_unambiguous_frames_are_exact() {
        let ds = generate_dataset(&GenConfig { n_videos: 12, frames: [30, 40], ..Default::default() }, 21).unwrap();
        for rec in &ds.videos {
            let v = rec.to_sample().unwrap();
            let ti = v.target_index();
            for q in v.unambiguous_queries() {
                let c = queries::parse(&q.text).unwrap();
                for f in 0..v.n_frames() {
                    let state = &v.states[f];
                    let views = v.object_views(f);
                    let ctx = crate::synthworld::scene_context(&v.scene, &views);
                    let unique = queries::count_satisfying(&c, &ctx) == 1 && queries::satisfies(&c, ti, &ctx).satisfied;
                    let visible = (0..views.len())
                        .all(|i| visible_fraction(&v.scene, state, i, f) >= MIN_VISIBLE_FRACTION);
                    if !unique || !visible || v.scene.max_active_magnitude(f) > 0.0 {
                        continue;
                    }
                    let g = ground_constraints(&v, f, &c, &NoiseProfile::noiseless(), &v.frame(f).unwrap()).unwrap();
                    assert_eq!(iou(&g.top1.bbox, &v.gt_tubelet[f]), 1.0, "video {} frame {f} `{}`", v.video_id, q.text);
                }
            }
        }
    }
}
