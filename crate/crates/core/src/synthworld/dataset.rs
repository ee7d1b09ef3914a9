use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    object_views, scene_context, simulate, DegradationEvent, DegradationKind, GeneratedQuery, ObjectSpec, SceneSpec,
    Trajectory, VideoSample,
};
use crate::geometry::FrameBounds;
use crate::queries::{
    count_satisfying, Color, ConstraintSet, ObjectView, SceneContext, Predicate, Reference, Relation, Shape, SizeQualifier, Spatial,
};
use crate::seeding::{mix, rng_for, unit, TAG_SCENE, TAG_SPLIT};
use crate::{Error, Result};

pub const DATASET_FORMAT: &str = "gti-dataset-v1";

/// Knobs for the synthetic video generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_videos: usize,
    pub bounds: FrameBounds,
    /// Inclusive range of video lengths.
    pub frames: [usize; 2],
    /// Inclusive range of distractor counts per video.
    pub distractors: [usize; 2],
    /// Probability a distractor copies the target's color and shape.
    pub same_kind_rate: f64,
    /// Probability a distractor copies exactly one of color or shape.
    pub similar_rate: f64,
    pub size_range: [f64; 2],
    /// Upper bound of the per-frame linear speed, pixels.
    pub max_speed: f64,
    /// Relative weights of linear, sinusoidal and random-walk trajectories.
    pub trajectory_mix: [f64; 3],
    pub random_walk_step: f64,
    /// Expected number of degradation events per video.
    pub event_rate: f64,
    /// Relative weights of blur, illumination-shift and occlusion-band events.
    pub event_mix: [f64; 3],
    pub event_length: [usize; 2],
    pub event_magnitude: [f64; 2],
    pub test_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_videos: 20,
            bounds: FrameBounds::default(),
            frames: [180, 220],
            distractors: [1, 4],
            same_kind_rate: 0.3,
            similar_rate: 0.4,
            size_range: [12.0, 48.0],
            max_speed: 2.0,
            trajectory_mix: [0.4, 0.3, 0.3],
            random_walk_step: 0.4,
            event_rate: 2.0,
            event_mix: [0.5, 0.25, 0.25],
            event_length: [8, 40],
            event_magnitude: [0.4, 1.0],
            test_fraction: 0.7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.frames[0] == 0 || self.frames[0] > self.frames[1] {
            return bad("frames must be a non-empty range starting at 1 or more");
        }
        if self.distractors[0] > self.distractors[1] {
            return bad("distractors range is reversed");
        }
        if self.size_range[0] < super::MIN_OBJECT_SIZE
            || self.size_range[1] > super::MAX_OBJECT_SIZE
            || self.size_range[0] > self.size_range[1]
        {
            return bad("size_range must lie within [8, 64]");
        }
        for r in [self.same_kind_rate, self.similar_rate, self.test_fraction] {
            if !(0.0..=1.0).contains(&r) {
                return bad("rates must lie in [0, 1]");
            }
        }
        if self.event_length[0] == 0 || self.event_length[0] > self.event_length[1] {
            return bad("event_length must be a non-empty range");
        }
        if !(0.0..=1.0).contains(&self.event_magnitude[0])
            || !(0.0..=1.0).contains(&self.event_magnitude[1])
            || self.event_magnitude[0] > self.event_magnitude[1]
        {
            return bad("event_magnitude must lie in [0, 1]");
        }
        if self.trajectory_mix.iter().sum::<f64>() <= 0.0 || self.event_mix.iter().sum::<f64>() <= 0.0 {
            return bad("mix weights must not all be zero");
        }
        FrameBounds::new(self.bounds.width, self.bounds.height)?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON config plus seed.
    pub fn digest(&self, seed: u64) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.update(seed.to_le_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: u64,
    pub split: Split,
    pub scene: SceneSpec,
    pub queries: Vec<GeneratedQuery>,
}

impl VideoRecord {
    pub fn to_sample(&self) -> Result<VideoSample> {
        VideoSample::new(self.video_id, self.scene.clone(), self.queries.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.videos.iter().filter(move |v| v.split == split)
    }
}

fn pick_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

fn random_trajectory<R: Rng>(rng: &mut R, cfg: &GenConfig) -> Trajectory {
    let speed = rng.random::<f64>() * cfg.max_speed;
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    let velocity = [speed * angle.cos(), speed * angle.sin()];
    match pick_weighted(rng, &cfg.trajectory_mix) {
        0 => Trajectory::Linear { velocity },
        1 => Trajectory::Sinusoidal {
            velocity: [velocity[0] * 0.6, velocity[1] * 0.6],
            amplitude: rng.random_range(6.0..30.0),
            angular_freq: rng.random_range(0.02..0.08),
        },
        _ => Trajectory::RandomWalk { step_scale: cfg.random_walk_step * rng.random_range(0.5..1.5) },
    }
}

fn draw_scene(cfg: &GenConfig, seed: u64, video_id: u64, attempt: u64) -> SceneSpec {
    let mut rng = rng_for(&[seed, TAG_SCENE, video_id, attempt]);
    let n_frames = rng.random_range(cfg.frames[0]..=cfg.frames[1]);
    let n_distractors = rng.random_range(cfg.distractors[0]..=cfg.distractors[1]);
    let (fw, fh) = (cfg.bounds.width as f64, cfg.bounds.height as f64);

    let target_color = *Color::ALL.choose(&mut rng).expect("non-empty");
    let target_shape = *Shape::ALL.choose(&mut rng).expect("non-empty");
    let mut kinds = vec![(target_color, target_shape)];
    for _ in 0..n_distractors {
        let u: f64 = rng.random();
        let kind = if u < cfg.same_kind_rate {
            (target_color, target_shape)
        } else if u < cfg.same_kind_rate + cfg.similar_rate {
            if rng.random::<bool>() {
                let shapes: Vec<Shape> = Shape::ALL.into_iter().filter(|s| *s != target_shape).collect();
                (target_color, *shapes.choose(&mut rng).expect("non-empty"))
            } else {
                let colors: Vec<Color> = Color::ALL.into_iter().filter(|c| *c != target_color).collect();
                (*colors.choose(&mut rng).expect("non-empty"), target_shape)
            }
        } else {
            loop {
                let c = *Color::ALL.choose(&mut rng).unwrap();
                let s = *Shape::ALL.choose(&mut rng).unwrap();
                if c != target_color && s != target_shape {
                    break (c, s);
                }
            }
        };
        kinds.push(kind);
    }

    let mut ids: Vec<u32> = (0..kinds.len() as u32).collect();
    ids.shuffle(&mut rng);
    let mut z: Vec<i32> = (0..kinds.len() as i32).collect();
    z.shuffle(&mut rng);
    let target_id = ids[0];
    let mut objects: Vec<ObjectSpec> = kinds
        .iter()
        .enumerate()
        .map(|(i, &(color, shape))| {
            let size = uniform(&mut rng, cfg.size_range).round().clamp(super::MIN_OBJECT_SIZE, super::MAX_OBJECT_SIZE);
            let half = size / 2.0;
            let start = [rng.random_range(half..=fw - half), rng.random_range(half..=fh - half)];
            ObjectSpec { id: ids[i], shape, color, size, start, trajectory: random_trajectory(&mut rng, cfg), z_order: z[i] }
        })
        .collect();
    objects.sort_by_key(|o| o.id);

    let n_events = if cfg.event_rate > 0.0 {
        Poisson::new(cfg.event_rate).map(|p| p.sample(&mut rng) as usize).unwrap_or(0)
    } else {
        0
    };
    let mut events = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        let kind = match pick_weighted(&mut rng, &cfg.event_mix) {
            0 => DegradationKind::Blur,
            1 => DegradationKind::IlluminationShift,
            _ => DegradationKind::FullOcclusionBand,
        };
        let len = rng.random_range(cfg.event_length[0]..=cfg.event_length[1]).min(n_frames);
        let start = rng.random_range(0..=n_frames - len);
        let magnitude = uniform(&mut rng, cfg.event_magnitude);
        events.push(DegradationEvent { kind, start, end: start + len, magnitude });
    }

    SceneSpec { bounds: cfg.bounds, n_frames, objects, target_id, events, seed: mix(&[seed, video_id, attempt]) }
}

/// Draws one scene that admits at least one unambiguous query.
pub fn generate_scene(cfg: &GenConfig, seed: u64, video_id: u64) -> (SceneSpec, Vec<GeneratedQuery>) {
    let mut attempt = 0;
    loop {
        let scene = draw_scene(cfg, seed, video_id, attempt);
        let queries = make_queries(&scene);
        if queries.iter().any(|q| !q.ambiguous) {
            return (scene, queries);
        }
        if attempt >= 64 {
            // after many attempts fall back to a scene without distractors
            let mut scene = scene;
            let tid = scene.target_id;
            scene.objects.retain(|o| o.id == tid);
            let queries = make_queries(&scene);
            return (scene, queries);
        }
        attempt += 1;
    }
}

/// Frame stride used when checking how long a qualifier stays valid.
const QUERY_CHECK_STRIDE: usize = 5;

/// Candidate disambiguations in preference order.
fn disambiguators(base: ConstraintSet, scene: &SceneSpec) -> Vec<ConstraintSet> {
    let mut out = Vec::new();
    for sp in Spatial::ALL {
        out.push(ConstraintSet { spatial: Some(sp), ..base });
    }
    for sz in [SizeQualifier::Small, SizeQualifier::Large] {
        out.push(ConstraintSet { size: Some(sz), ..base });
    }
    for sz in [SizeQualifier::Small, SizeQualifier::Large] {
        for sp in Spatial::ALL {
            out.push(ConstraintSet { size: Some(sz), spatial: Some(sp), ..base });
        }
    }
    let ti = scene.target_index().expect("validated");
    for (i, o) in scene.objects.iter().enumerate() {
        if i == ti {
            continue;
        }
        for predicate in Predicate::ALL {
            for color in [Some(o.color), None] {
                let reference = Reference { color, shape: o.shape };
                out.push(ConstraintSet { relation: Some(Relation { predicate, reference }), ..base });
            }
        }
    }
    out
}

/// Emits the minimal `"the <color> <shape>"` query and, when it is ambiguous
/// at frame 0, a qualifier that singles out the target there. Among those,
/// the one that keeps singling it out on the most later frames wins; ties go
/// to preference order.
pub fn make_queries(scene: &SceneSpec) -> Vec<GeneratedQuery> {
    let states = simulate(&SceneSpec { events: vec![], ..scene.clone() });
    let views: Vec<Vec<ObjectView>> = states.iter().map(|s| object_views(scene, s)).collect();
    let ctx = scene_context(scene, &views[0]);
    let ti = scene.target_index().expect("validated");
    let target = &scene.objects[ti];
    let minimal = ConstraintSet::kind(target.color, target.shape);
    let count = count_satisfying(&minimal, &ctx);
    let mut out = vec![GeneratedQuery { text: minimal.render(), ambiguous: count >= 2 }];
    if count >= 2 {
        let singles_out = |c: &ConstraintSet, ctx: &SceneContext| {
            crate::queries::satisfies(c, ti, ctx).satisfied && count_satisfying(c, ctx) == 1
        };
        let mut best: Option<(usize, ConstraintSet)> = None;
        for c in disambiguators(minimal, scene) {
            if !singles_out(&c, &ctx) {
                continue;
            }
            let held = views
                .iter()
                .step_by(QUERY_CHECK_STRIDE)
                .filter(|v| singles_out(&c, &scene_context(scene, v)))
                .count();
            if best.as_ref().is_none_or(|(h, _)| held > *h) {
                best = Some((held, c));
            }
        }
        if let Some((_, c)) = best {
            out.push(GeneratedQuery { text: c.render(), ambiguous: false });
        }
    }
    out
}

/// Generates the dataset records. Pure in `(cfg, seed)`.
pub fn generate_dataset(cfg: &GenConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let videos = (0..cfg.n_videos as u64)
        .map(|video_id| {
            let (scene, queries) = generate_scene(cfg, seed, video_id);
            let split = if unit(&[seed, TAG_SPLIT, video_id]) < cfg.test_fraction { Split::Test } else { Split::Train };
            VideoRecord { video_id, split, scene, queries }
        })
        .collect();
    Ok(Dataset { header: DatasetHeader { format: DATASET_FORMAT.into(), config_digest: cfg.digest(seed) }, videos })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    crate::io::write_json_line(&mut w, &ds.header, path)?;
    for v in &ds.videos {
        crate::io::write_json_line(&mut w, v, path)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty dataset file", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first)?;
    if header.format != DATASET_FORMAT {
        return Err(Error::Data(format!("unsupported dataset format `{}`", header.format)));
    }
    let mut videos = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VideoRecord = serde_json::from_str(&line)?;
        rec.scene.validate()?;
        videos.push(rec);
    }
    Ok(Dataset { header, videos })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queries::{parse, satisfies};
    use crate::synthworld::tests::{object, scene, still};

    fn brute_force_count(text: &str, scene: &SceneSpec) -> usize {
        let c = parse(text).unwrap();
        let states = simulate(scene);
        let views = object_views(scene, &states[0]);
        let ctx = scene_context(scene, &views);
        (0..views.len()).filter(|&i| satisfies(&c, i, &ctx).satisfied).count()
    }

    #[test]
    fn single_object_query() {
        let s = scene(3, vec![object(0, Shape::Rectangle, Color::Red, 20.0, [60.0, 60.0], still())], 0);
        assert_eq!(make_queries(&s), vec![GeneratedQuery { text: "the red rectangle".into(), ambiguous: false }]);
    }

    #[test]
    fn two_reds_disambiguated_spatially() {
        let s = scene(
            3,
            vec![
                object(0, Shape::Rectangle, Color::Red, 20.0, [40.0, 128.0], still()),
                object(1, Shape::Rectangle, Color::Red, 20.0, [200.0, 128.0], still()),
            ],
            0,
        );
        let q = make_queries(&s);
        assert_eq!(q.len(), 2);
        assert!(q[0].ambiguous);
        assert!(!q[1].ambiguous);
        let c = parse(&q[1].text).unwrap();
        assert_eq!(c.spatial, Some(Spatial::Left));
        assert_eq!(brute_force_count(&q[1].text, &s), 1);
        assert_eq!(brute_force_count(&q[0].text, &s), 2);
    }

    #[test]
    fn colocated_twins_are_ambiguous() {
        let s = scene(
            3,
            vec![
                object(0, Shape::Ellipse, Color::Red, 20.0, [128.0, 128.0], still()),
                object(1, Shape::Ellipse, Color::Red, 20.0, [128.0, 128.0], still()),
            ],
            0,
        );
        let q = make_queries(&s);
        assert!(q[0].ambiguous);
        assert!(q.iter().all(|q| q.ambiguous));
    }

    #[test]
    fn flags_match_brute_force_count() {
        let cfg = GenConfig { n_videos: 40, frames: [3, 5], distractors: [1, 5], same_kind_rate: 0.5, ..Default::default() };
        let ds = generate_dataset(&cfg, 99).unwrap();
        for v in &ds.videos {
            assert!(v.queries.iter().any(|q| !q.ambiguous));
            for q in &v.queries {
                assert_eq!(q.ambiguous, brute_force_count(&q.text, &v.scene) >= 2, "{}", q.text);
            }
        }
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig { n_videos: 4, frames: [5, 8], ..Default::default() };
        let ds = generate_dataset(&cfg, 3).unwrap();
        let p = dir.path().join("d.gti.jsonl");
        write_dataset(&ds, &p).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back, ds);
        let first = std::fs::read_to_string(&p).unwrap();
        let first = first.lines().next().unwrap();
        assert!(first.starts_with(r#"{"format":"gti-dataset-v1","config_digest":""#));
    }

    #[test]
    fn empty_dataset_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&GenConfig { n_videos: 0, ..Default::default() }, 1).unwrap();
        let p = dir.path().join("e.gti.jsonl");
        write_dataset(&ds, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(read_dataset(&p).unwrap().videos.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig { n_videos: 6, frames: [10, 20], ..Default::default() };
        assert_eq!(generate_dataset(&cfg, 5).unwrap(), generate_dataset(&cfg, 5).unwrap());
        assert_ne!(generate_dataset(&cfg, 5).unwrap(), generate_dataset(&cfg, 6).unwrap());
    }

    #[test]
    fn fifty_videos_each_with_unambiguous_query() {
        let cfg = GenConfig { n_videos: 50, frames: [2, 4], ..Default::default() };
        let ds = generate_dataset(&cfg, 17).unwrap();
        assert_eq!(ds.videos.len(), 50);
        assert!(ds.videos.iter().all(|v| v.queries.iter().any(|q| !q.ambiguous)));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(GenConfig { frames: [0, 3], ..Default::default() }.validate().is_err());
        assert!(GenConfig { size_range: [4.0, 10.0], ..Default::default() }.validate().is_err());
        assert!(GenConfig { test_fraction: 1.5, ..Default::default() }.validate().is_err());
    }
}
