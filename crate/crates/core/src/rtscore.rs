//! Region (R) and template (T) quality scores: ground-truth derivation,
//! per-frame features, and a small regressor that predicts both from the
//! grounding output.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{clamp_to_frame, iou, BBox};
use crate::grounder::{self, NoiseProfile, ScoredCandidate};
use crate::raster::Raster;
use crate::seeding::{rng_for, TAG_INIT, TAG_SHUFFLE};
use crate::synthworld::{SceneSpec, Split, VideoRecord, VideoSample};
use crate::tracker::{self, TrackerConfig};
use crate::{Error, Result};

pub const FEATURE_DIM: usize = 10;
pub const HIDDEN: usize = 16;
/// Groundings below this confidence are treated as wrong.
pub const CONFIDENCE_GATE: f64 = 0.5;
pub const MODEL_FORMAT: &str = "gti-score-model-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RTScores {
    pub r: f64,
    pub t: f64,
}

/// Hand-crafted summary of one grounding result.
///
/// | idx | feature |
/// |-----|---------|
/// | 0 | top-1 confidence |
/// | 1 | top-1 match strength |
/// | 2 | confidence margin to the runner-up |
/// | 3 | other candidates matching at least as well, as `c / (c + 1)` |
/// | 4..7 | box area, width, height relative to the frame |
/// | 7 | active blur magnitude |
/// | 8 | active illumination magnitude |
/// | 9 | grayscale std of the crop / 128 |
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundingFeatures(pub [f64; FEATURE_DIM]);

impl GroundingFeatures {
    pub fn extract(candidates: &[ScoredCandidate], best: usize, scene: &SceneSpec, frame: usize, raster: &Raster) -> Self {
        let top = &candidates[best];
        let runner_up = candidates
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, c)| c.confidence)
            .fold(0.0, f64::max);
        let rivals = candidates
            .iter()
            .enumerate()
            .filter(|(i, c)| {
                *i != best && c.candidate.source != grounder::CandidateSource::Fallback && c.match_strength >= top.match_strength
            })
            .count() as f64;
        let b = top.candidate.bbox;
        let (fw, fh) = (scene.bounds.width as f64, scene.bounds.height as f64);
        let (blur, illum) = grounder::degradation_levels(scene, frame);
        let f = [
            top.confidence,
            top.match_strength,
            (top.confidence - runner_up).max(0.0),
            rivals / (rivals + 1.0),
            (b.area() / (fw * fh)).min(1.0),
            (b.w / fw).min(1.0),
            (b.h / fh).min(1.0),
            blur,
            illum,
            (gray_std(raster, &b) / 128.0).min(1.0),
        ];
        GroundingFeatures(f.map(|v| if v.is_finite() { v } else { 0.0 }))
    }
}

fn gray_std(raster: &Raster, b: &BBox) -> f64 {
    let x0 = (b.x.floor().max(0.0) as usize).min(raster.width());
    let x1 = (b.right().ceil().max(0.0) as usize).min(raster.width());
    let y0 = (b.y.floor().max(0.0) as usize).min(raster.height());
    let y1 = (b.bottom().ceil().max(0.0) as usize).min(raster.height());
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let p = raster.pixel(x, y);
            let g = (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0;
            n += 1.0;
            s += g;
            s2 += g * g;
        }
    }
    if n == 0.0 {
        return 0.0;
    }
    let mean = s / n;
    (s2 / n - mean * mean).max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub features: GroundingFeatures,
    pub confidence: f64,
    pub gt_r: f64,
    pub gt_t: f64,
    pub video_id: u64,
    pub query: String,
    pub frame_index: usize,
}

pub fn derive_r(grounded: &BBox, gt: &BBox) -> f64 {
    iou(grounded, gt)
}

/// T-score of frame `k` from pre-rendered frames: mean IoU of a tracker
/// started at the GT box of frame `k`, run forward to the end and, from a
/// fresh start, backward to frame 0.
pub fn derive_t_on(frames: &[Raster], gt: &[BBox], k: usize, cfg: &TrackerConfig) -> Result<f64> {
    let n = frames.len();
    if gt.len() != n {
        return Err(Error::LengthMismatch(n, gt.len()));
    }
    if n < 2 {
        return Err(Error::SingleFrameVideo);
    }
    if k >= n {
        return Err(Error::FrameOutOfRange { index: k, n_frames: n });
    }
    let start = clamp_to_frame(&gt[k], frames[k].bounds());
    let mut total = 0.0;
    let mut st = tracker::init(&frames[k], start, cfg)?;
    for t in k + 1..n {
        let (b, _) = tracker::track(&frames[t], &mut st, cfg);
        total += iou(&b, &gt[t]);
    }
    let mut st = tracker::init(&frames[k], start, cfg)?;
    for t in (0..k).rev() {
        let (b, _) = tracker::track(&frames[t], &mut st, cfg);
        total += iou(&b, &gt[t]);
    }
    Ok((total / (n - 1) as f64).clamp(0.0, 1.0))
}

/// T-score of frame `k`, rendering the video first.
pub fn derive_t(sample: &VideoSample, k: usize, cfg: &TrackerConfig) -> Result<f64> {
    if sample.n_frames() < 2 {
        return Err(Error::SingleFrameVideo);
    }
    derive_t_on(&sample.frames(), &sample.gt_tubelet, k, cfg)
}

pub fn smoothed_l1(prediction: f64, target: f64) -> f64 {
    let e = prediction - target;
    if e.abs() < 1.0 {
        0.5 * e * e
    } else {
        e.abs() - 0.5
    }
}

/// d smoothed_l1 / d prediction.
pub fn smoothed_l1_grad(prediction: f64, target: f64) -> f64 {
    let e = prediction - target;
    if e.abs() < 1.0 {
        e
    } else {
        e.signum()
    }
}

pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;

/// In-place RMSProp update.
pub fn rmsprop_step(params: &mut [f64], grads: &[f64], acc: &mut [f64], lr: f64, decay: f64, eps: f64) {
    assert!(params.len() == grads.len() && grads.len() == acc.len(), "shape mismatch");
    for ((p, g), a) in params.iter_mut().zip(grads).zip(acc.iter_mut()) {
        *a = decay * *a + (1.0 - decay) * g * g;
        *p -= lr * g / (a.sqrt() + eps);
    }
}

/// One regression head: `d -> 16 (ReLU) -> 1`. All parameters live in one
/// flat vector: `w1` (row-major, `HIDDEN x FEATURE_DIM`), `b1`, `w2`, `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub params: Vec<f64>,
}

const W1: usize = 0;
const B1: usize = HIDDEN * FEATURE_DIM;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN;
pub const HEAD_PARAMS: usize = B2 + 1;

impl Head {
    fn init<R: Rng>(rng: &mut R, bias: f64) -> Self {
        let mut p = vec![0.0; HEAD_PARAMS];
        let s1 = (2.0 / FEATURE_DIM as f64).sqrt();
        let s2 = (1.0 / HIDDEN as f64).sqrt() * 0.1;
        for v in &mut p[W1..B1] {
            *v = rng.sample::<f64, _>(StandardNormal) * s1;
        }
        for v in &mut p[B1..W2] {
            *v = 0.01;
        }
        for v in &mut p[W2..B2] {
            *v = rng.sample::<f64, _>(StandardNormal) * s2;
        }
        p[B2] = bias;
        Head { params: p }
    }

    /// Unclamped output and hidden activations.
    fn forward(&self, x: &[f64; FEATURE_DIM]) -> (f64, [f64; HIDDEN]) {
        let p = &self.params;
        let mut h = [0.0; HIDDEN];
        let mut out = p[B2];
        for j in 0..HIDDEN {
            let row = &p[W1 + j * FEATURE_DIM..W1 + (j + 1) * FEATURE_DIM];
            let z = p[B1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            h[j] = z.max(0.0);
            out += p[W2 + j] * h[j];
        }
        (out, h)
    }

    pub fn raw(&self, x: &GroundingFeatures) -> f64 {
        self.forward(&x.0).0
    }

    pub fn predict(&self, x: &GroundingFeatures) -> f64 {
        self.raw(x).clamp(0.0, 1.0)
    }

    /// Accumulates `scale * d loss / d params` for one sample into `grad`.
    fn backward(&self, x: &[f64; FEATURE_DIM], target: f64, scale: f64, grad: &mut [f64]) -> f64 {
        let (out, h) = self.forward(x);
        let g = smoothed_l1_grad(out, target) * scale;
        let p = &self.params;
        grad[B2] += g;
        for j in 0..HIDDEN {
            grad[W2 + j] += g * h[j];
            if h[j] > 0.0 {
                let gz = g * p[W2 + j];
                grad[B1 + j] += gz;
                for (k, v) in x.iter().enumerate() {
                    grad[W1 + j * FEATURE_DIM + k] += gz * v;
                }
            }
        }
        smoothed_l1(out, target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate; decays linearly to 0 over all steps.
    pub learning_rate: f64,
    /// Set from the run's master seed rather than the config section.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 50, batch_size: 32, learning_rate: 1e-4, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub n_samples: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub format: String,
    pub feature_dim: usize,
    pub hidden: usize,
    pub r_head: Head,
    pub t_head: Head,
    pub meta: TrainingMeta,
}

impl ScoreModel {
    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Data(format!("unsupported model format {:?}", self.format)));
        }
        if self.feature_dim != FEATURE_DIM || self.hidden != HIDDEN {
            return Err(Error::Data(format!("model shape {}x{} unsupported", self.feature_dim, self.hidden)));
        }
        for h in [&self.r_head, &self.t_head] {
            if h.params.len() != HEAD_PARAMS || h.params.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("malformed model weights".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let m: ScoreModel = crate::io::read_json(path)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    /// Mean loss over both heads, averaged over `samples`.
    pub fn loss(&self, samples: &[TrainingSample]) -> f64 {
        let total: f64 = samples
            .iter()
            .map(|s| 0.5 * (smoothed_l1(self.r_head.raw(&s.features), s.gt_r) + smoothed_l1(self.t_head.raw(&s.features), s.gt_t)))
            .sum();
        total / samples.len().max(1) as f64
    }

    /// Analytic gradient of [`ScoreModel::loss`], as `(r_head, t_head)`.
    pub fn gradient(&self, samples: &[TrainingSample]) -> (Vec<f64>, Vec<f64>) {
        let mut gr = vec![0.0; HEAD_PARAMS];
        let mut gt = vec![0.0; HEAD_PARAMS];
        let scale = 0.5 / samples.len().max(1) as f64;
        for s in samples {
            self.r_head.backward(&s.features.0, s.gt_r, scale, &mut gr);
            self.t_head.backward(&s.features.0, s.gt_t, scale, &mut gt);
        }
        (gr, gt)
    }
}

/// Fits both heads with mini-batch RMSProp on the mean smoothed-L1 loss.
pub fn train(samples: &[TrainingSample], cfg: &TrainConfig) -> Result<ScoreModel> {
    cfg.validate()?;
    if samples.len() < cfg.batch_size {
        return Err(Error::InsufficientSamples { needed: cfg.batch_size, got: samples.len() });
    }
    let n = samples.len() as f64;
    let mean_r = samples.iter().map(|s| s.gt_r).sum::<f64>() / n;
    let mean_t = samples.iter().map(|s| s.gt_t).sum::<f64>() / n;
    let mut init_rng = rng_for(&[cfg.seed, TAG_INIT]);
    let mut model = ScoreModel {
        format: MODEL_FORMAT.into(),
        feature_dim: FEATURE_DIM,
        hidden: HIDDEN,
        r_head: Head::init(&mut init_rng, mean_r),
        t_head: Head::init(&mut init_rng, mean_t),
        meta: TrainingMeta { epochs: cfg.epochs, n_samples: samples.len(), initial_loss: 0.0, final_loss: 0.0, epoch_losses: vec![] },
    };
    model.meta.initial_loss = model.loss(samples);

    let batches_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch) as f64;
    let mut acc_r = vec![0.0; HEAD_PARAMS];
    let mut acc_t = vec![0.0; HEAD_PARAMS];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0usize;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_for(&[cfg.seed, TAG_SHUFFLE, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].clone()));
            let lr = cfg.learning_rate * (1.0 - step as f64 / total_steps);
            let (gr, gt) = model.gradient(&batch);
            rmsprop_step(&mut model.r_head.params, &gr, &mut acc_r, lr, RMSPROP_DECAY, RMSPROP_EPS);
            rmsprop_step(&mut model.t_head.params, &gt, &mut acc_t, lr, RMSPROP_DECAY, RMSPROP_EPS);
            step += 1;
        }
        let l = model.loss(samples);
        log::debug!("epoch {} loss {:.6}", epoch + 1, l);
        model.meta.epoch_losses.push(l);
    }
    model.meta.final_loss = *model.meta.epoch_losses.last().unwrap_or(&model.meta.initial_loss);
    Ok(model)
}

/// Predicted scores; a grounding below the confidence gate gets `r = 0`.
pub fn predict(model: &ScoreModel, features: &GroundingFeatures, confidence: f64) -> RTScores {
    let t = model.t_head.predict(features);
    let r = if confidence < CONFIDENCE_GATE { 0.0 } else { model.r_head.predict(features) };
    RTScores { r, t }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeriveSummary {
    pub grounded_frames: usize,
    pub kept: usize,
    pub filtered: usize,
    pub skipped_single_frame_videos: Vec<u64>,
}

/// Training triplets from every (train video, unambiguous query, frame).
pub fn collect_training_set(
    videos: &[VideoRecord],
    noise: &NoiseProfile,
    tracker_cfg: &TrackerConfig,
) -> Result<(Vec<TrainingSample>, DeriveSummary)> {
    let train: Vec<&VideoRecord> = videos.iter().filter(|v| v.split == Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let per_video: Vec<Result<(Vec<TrainingSample>, DeriveSummary)>> =
        train.par_iter().map(|rec| derive_video(rec, noise, tracker_cfg)).collect();
    let mut samples = Vec::new();
    let mut summary = DeriveSummary::default();
    for r in per_video {
        let (s, sum) = r?;
        samples.extend(s);
        summary.grounded_frames += sum.grounded_frames;
        summary.kept += sum.kept;
        summary.filtered += sum.filtered;
        summary.skipped_single_frame_videos.extend(sum.skipped_single_frame_videos);
    }
    if samples.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    Ok((samples, summary))
}

fn derive_video(rec: &VideoRecord, noise: &NoiseProfile, cfg: &TrackerConfig) -> Result<(Vec<TrainingSample>, DeriveSummary)> {
    let sample = rec.to_sample()?;
    let mut summary = DeriveSummary::default();
    if sample.n_frames() < 2 {
        summary.skipped_single_frame_videos.push(sample.video_id);
        return Ok((vec![], summary));
    }
    let frames = sample.frames();
    let mut t_cache: Vec<Option<f64>> = vec![None; sample.n_frames()];
    let mut out = Vec::new();
    for q in sample.unambiguous_queries() {
        let constraints = crate::queries::parse(&q.text)?;
        for (f, raster) in frames.iter().enumerate() {
            let g = grounder::ground_constraints(&sample, f, &constraints, noise, raster)?;
            summary.grounded_frames += 1;
            if g.top1.confidence < CONFIDENCE_GATE {
                summary.filtered += 1;
                continue;
            }
            let gt_t = match t_cache[f] {
                Some(t) => t,
                None => {
                    let t = derive_t_on(&frames, &sample.gt_tubelet, f, cfg)?;
                    t_cache[f] = Some(t);
                    t
                }
            };
            summary.kept += 1;
            out.push(TrainingSample {
                features: g.features,
                confidence: g.top1.confidence,
                gt_r: derive_r(&g.top1.bbox, &sample.gt_tubelet[f]),
                gt_t,
                video_id: sample.video_id,
                query: q.text.clone(),
                frame_index: f,
            });
        }
    }
    Ok((out, summary))
}
