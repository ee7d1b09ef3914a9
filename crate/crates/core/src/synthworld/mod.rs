//! Deterministic synthetic videos: colored shapes moving over a gray canvas,
//! with distractors, degradation events, ground-truth tubelets and templated
//! referring expressions.

mod dataset;
mod render;

pub use dataset::{
    generate_dataset, generate_scene, make_queries, read_dataset, write_dataset, Dataset, DatasetHeader, GenConfig,
    Split, VideoRecord, DATASET_FORMAT,
};
pub use render::{rasterize, render_frame, visible_fraction, BACKGROUND, OCCLUDER};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, FrameBounds};
use crate::queries::{median_size, Color, ObjectView, SceneContext, Shape};
use crate::raster::Raster;
use crate::seeding::{rng_for, TAG_WALK};
use crate::{Error, Result};

pub const MIN_OBJECT_SIZE: f64 = 8.0;
pub const MAX_OBJECT_SIZE: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Trajectory {
    Linear {
        velocity: [f64; 2],
    },
    /// Linear drift plus a sinusoidal offset perpendicular to it.
    Sinusoidal {
        velocity: [f64; 2],
        amplitude: f64,
        angular_freq: f64,
    },
    /// Momentum random walk; `step_scale` is the std of the per-frame kick.
    RandomWalk {
        step_scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    pub shape: Shape,
    pub color: Color,
    /// Side of the bounding square, pixels.
    pub size: f64,
    /// Center at frame 0.
    pub start: [f64; 2],
    pub trajectory: Trajectory,
    pub z_order: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegradationKind {
    Blur,
    IlluminationShift,
    FullOcclusionBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationEvent {
    pub kind: DegradationKind,
    /// Active over `start..end`.
    pub start: usize,
    pub end: usize,
    pub magnitude: f64,
}

impl DegradationEvent {
    pub fn active_at(&self, frame: usize) -> bool {
        frame >= self.start && frame < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub bounds: FrameBounds,
    pub n_frames: usize,
    pub objects: Vec<ObjectSpec>,
    pub target_id: u32,
    #[serde(default)]
    pub events: Vec<DegradationEvent>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScene(msg));
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1".into());
        }
        if self.target_index().is_none() {
            return bad(format!("target id {} is not in the scene", self.target_id));
        }
        for o in &self.objects {
            if !(MIN_OBJECT_SIZE..=MAX_OBJECT_SIZE).contains(&o.size) {
                return bad(format!("object {} size {} outside [8, 64]", o.id, o.size));
            }
        }
        for e in &self.events {
            if e.start >= e.end || e.end > self.n_frames || !(0.0..=1.0).contains(&e.magnitude) {
                return bad(format!("malformed degradation event {e:?}"));
            }
        }
        Ok(())
    }

    pub fn target_index(&self) -> Option<usize> {
        self.objects.iter().position(|o| o.id == self.target_id)
    }

    pub fn target(&self) -> &ObjectSpec {
        &self.objects[self.target_index().expect("validated scene")]
    }

    /// Strongest active magnitude of one degradation kind.
    pub fn active_magnitude(&self, kind: DegradationKind, frame: usize) -> f64 {
        self.events
            .iter()
            .filter(|e| e.kind == kind && e.active_at(frame))
            .map(|e| e.magnitude)
            .fold(0.0, f64::max)
    }

    /// Strongest active magnitude over all kinds.
    pub fn max_active_magnitude(&self, frame: usize) -> f64 {
        self.events.iter().filter(|e| e.active_at(frame)).map(|e| e.magnitude).fold(0.0, f64::max)
    }

    pub fn median_object_size(&self) -> f64 {
        median_size(self.objects.iter().map(|o| o.size))
    }
}

/// Position of one object in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: u32,
    pub center: (f64, f64),
    pub size: f64,
}

impl ObjectState {
    pub fn bbox(&self) -> BBox {
        BBox { x: self.center.0 - self.size / 2.0, y: self.center.1 - self.size / 2.0, w: self.size, h: self.size }
    }
}

/// Object states for one frame, in scene object order.
pub type FrameState = Vec<ObjectState>;

/// Folds `p` into `[lo, hi]` as repeated mirror reflection.
fn fold(p: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return (lo + hi) / 2.0;
    }
    let span = hi - lo;
    let m = (p - lo).rem_euclid(2.0 * span);
    if m <= span {
        lo + m
    } else {
        lo + 2.0 * span - m
    }
}

/// Reflects position and velocity at the borders of `[lo, hi]`.
fn reflect(p: &mut f64, v: &mut f64, lo: f64, hi: f64) {
    if hi <= lo {
        *p = (lo + hi) / 2.0;
        return;
    }
    for _ in 0..8 {
        if *p < lo {
            *p = 2.0 * lo - *p;
            *v = -*v;
        } else if *p > hi {
            *p = 2.0 * hi - *p;
            *v = -*v;
        } else {
            return;
        }
    }
    *p = p.clamp(lo, hi);
}

/// Per-frame object centers. Deterministic in `(scene, scene.seed)`; object
/// centers are reflected so that every bounding square stays in frame.
pub fn simulate(scene: &SceneSpec) -> Vec<FrameState> {
    let (fw, fh) = (scene.bounds.width as f64, scene.bounds.height as f64);
    let mut frames: Vec<FrameState> = (0..scene.n_frames).map(|_| Vec::with_capacity(scene.objects.len())).collect();
    for obj in &scene.objects {
        let half = obj.size / 2.0;
        let (lo_x, hi_x, lo_y, hi_y) = (half, fw - half, half, fh - half);
        let mut rng = rng_for(&[scene.seed, TAG_WALK, obj.id as u64]);
        let mut p = [fold(obj.start[0], lo_x, hi_x), fold(obj.start[1], lo_y, hi_y)];
        let mut v = match obj.trajectory {
            Trajectory::Linear { velocity } | Trajectory::Sinusoidal { velocity, .. } => velocity,
            Trajectory::RandomWalk { .. } => [0.0, 0.0],
        };
        for (t, frame) in frames.iter_mut().enumerate() {
            if t > 0 {
                if let Trajectory::RandomWalk { step_scale } = obj.trajectory {
                    for vi in &mut v {
                        let kick: f64 = rng.sample(StandardNormal);
                        *vi = 0.85 * *vi + step_scale * kick;
                    }
                }
                p[0] += v[0];
                p[1] += v[1];
                reflect(&mut p[0], &mut v[0], lo_x, hi_x);
                reflect(&mut p[1], &mut v[1], lo_y, hi_y);
            }
            let center = match obj.trajectory {
                Trajectory::Sinusoidal { velocity, amplitude, angular_freq } => {
                    let norm = velocity[0].hypot(velocity[1]);
                    let (px, py) = if norm > 0.0 { (-velocity[1] / norm, velocity[0] / norm) } else { (0.0, 1.0) };
                    let off = amplitude * (angular_freq * t as f64).sin();
                    (fold(p[0] + px * off, lo_x, hi_x), fold(p[1] + py * off, lo_y, hi_y))
                }
                _ => (p[0], p[1]),
            };
            frame.push(ObjectState { id: obj.id, center, size: obj.size });
        }
    }
    frames
}

/// A query attached to a video, flagged when it refers to several objects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedQuery {
    pub text: String,
    pub ambiguous: bool,
}

/// A fully simulated video: scene, per-frame states, ground truth and queries.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub video_id: u64,
    pub scene: SceneSpec,
    pub states: Vec<FrameState>,
    pub gt_tubelet: Vec<BBox>,
    pub queries: Vec<GeneratedQuery>,
}

impl VideoSample {
    pub fn new(video_id: u64, scene: SceneSpec, queries: Vec<GeneratedQuery>) -> Result<Self> {
        scene.validate()?;
        let states = simulate(&scene);
        let ti = scene.target_index().expect("validated");
        let gt_tubelet = states.iter().map(|f| f[ti].bbox()).collect();
        Ok(VideoSample { video_id, scene, states, gt_tubelet, queries })
    }

    /// Builds a sample with generated queries.
    pub fn from_scene(video_id: u64, scene: SceneSpec) -> Result<Self> {
        scene.validate()?;
        let queries = make_queries(&scene);
        Self::new(video_id, scene, queries)
    }

    pub fn n_frames(&self) -> usize {
        self.scene.n_frames
    }

    pub fn target_index(&self) -> usize {
        self.scene.target_index().expect("validated")
    }

    pub fn frame(&self, index: usize) -> Result<Raster> {
        if index >= self.n_frames() {
            return Err(Error::FrameOutOfRange { index, n_frames: self.n_frames() });
        }
        Ok(render_frame(&self.scene, &self.states[index], index))
    }

    /// Renders every frame.
    pub fn frames(&self) -> Vec<Raster> {
        (0..self.n_frames()).map(|i| render_frame(&self.scene, &self.states[i], i)).collect()
    }

    /// Object views for the query matcher at one frame.
    pub fn object_views(&self, frame: usize) -> Vec<ObjectView> {
        object_views(&self.scene, &self.states[frame])
    }

    /// The video cut to its first `n` frames, as an online observer at frame
    /// `n - 1` would see it.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let n = n.clamp(1, self.n_frames());
        let mut scene = self.scene.clone();
        scene.n_frames = n;
        scene.events = scene
            .events
            .iter()
            .filter(|e| e.start < n)
            .map(|e| DegradationEvent { end: e.end.min(n), ..*e })
            .collect();
        Ok(VideoSample {
            video_id: self.video_id,
            scene,
            states: self.states[..n].to_vec(),
            gt_tubelet: self.gt_tubelet[..n].to_vec(),
            queries: self.queries.clone(),
        })
    }

    pub fn unambiguous_queries(&self) -> impl Iterator<Item = &GeneratedQuery> {
        self.queries.iter().filter(|q| !q.ambiguous)
    }
}

pub(crate) fn object_views(scene: &SceneSpec, state: &FrameState) -> Vec<ObjectView> {
    scene
        .objects
        .iter()
        .zip(state)
        .map(|(o, s)| ObjectView { shape: o.shape, color: o.color, size: o.size, center: s.center })
        .collect()
}

pub(crate) fn scene_context<'a>(scene: &SceneSpec, objects: &'a [ObjectView]) -> SceneContext<'a> {
    SceneContext { bounds: scene.bounds, median_size: scene.median_object_size(), objects }
}
