//! Per-frame integration of grounding and tracking.
//!
//! The adaptive schedule is a greedy hard switch: the grounded box is adopted
//! (and becomes the new template) whenever its score beats the saved score,
//! otherwise the tracker's box is output and the saved score decays.

use serde::{Deserialize, Serialize};

use crate::geometry::{clamp_to_frame, iou, BBox};
use crate::grounder::{self, GroundingOutput, NoiseProfile};
use crate::raster::Raster;
use crate::rtscore::{self, RTScores, ScoreModel};
use crate::seeding::{unit, TAG_RANDOM_FRAME};
use crate::synthworld::VideoSample;
use crate::tracker::{self, ResponseEntry, TrackerConfig, TrackerState};
use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.998;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSource {
    GroundingConfidence,
    ROnly,
    RtProduct,
    OracleR,
    OracleRt,
}

impl ScoreSource {
    pub fn is_oracle(self) -> bool {
        matches!(self, ScoreSource::OracleR | ScoreSource::OracleRt)
    }

    pub fn needs_model(self) -> bool {
        matches!(self, ScoreSource::ROnly | ScoreSource::RtProduct)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TemplateUpdate {
    Greedy,
    /// Switch only when the score beats the saved one by a relative margin.
    ImprovementThreshold { tau: f64 },
    FixedWeight { rate: f64 },
    /// Blend rate equals the frame's score.
    ScoreWeighted,
    /// Keep the first template for the whole video.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OutputFusion {
    HardSwitch,
    /// `weight = None` uses the frame's score as the grounding weight.
    SoftFusion { weight: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitFrame {
    First,
    Middle,
    Last,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Schedule {
    Adaptive,
    AllGrounding,
    FrameKInit(InitFrame),
    FixedInterval(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationPolicy {
    pub name: String,
    pub score_source: ScoreSource,
    pub template_update: TemplateUpdate,
    pub output_fusion: OutputFusion,
    pub schedule: Schedule,
    pub lambda: f64,
}

impl IntegrationPolicy {
    fn adaptive(name: &str, score_source: ScoreSource, template_update: TemplateUpdate, output_fusion: OutputFusion) -> Self {
        IntegrationPolicy {
            name: name.into(),
            score_source,
            template_update,
            output_fusion,
            schedule: Schedule::Adaptive,
            lambda: DEFAULT_LAMBDA,
        }
    }

    fn fixed(name: &str, schedule: Schedule) -> Self {
        IntegrationPolicy {
            name: name.into(),
            score_source: ScoreSource::GroundingConfidence,
            template_update: TemplateUpdate::Greedy,
            output_fusion: OutputFusion::HardSwitch,
            schedule,
            lambda: DEFAULT_LAMBDA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config(format!("{}: lambda must be in (0, 1]", self.name)));
        }
        match self.template_update {
            TemplateUpdate::ImprovementThreshold { tau } if !(tau >= 0.0) => {
                return Err(Error::Config(format!("{}: tau must be >= 0", self.name)))
            }
            TemplateUpdate::FixedWeight { rate } if !(0.0..=1.0).contains(&rate) => {
                return Err(Error::Config(format!("{}: rate must be in [0, 1]", self.name)))
            }
            _ => {}
        }
        if let OutputFusion::SoftFusion { weight: Some(w) } = self.output_fusion {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("{}: fusion weight must be in [0, 1]", self.name)));
            }
        }
        if self.schedule == Schedule::FixedInterval(0) {
            return Err(Error::Config(format!("{}: interval must be positive", self.name)));
        }
        Ok(())
    }

    /// Whether the policy consumes per-frame scores at all.
    pub fn uses_scores(&self) -> bool {
        self.schedule == Schedule::Adaptive
            && !(self.template_update == TemplateUpdate::Frozen
                && matches!(self.output_fusion, OutputFusion::SoftFusion { weight: Some(_) }))
    }
}

/// Every named policy, baselines first.
pub fn registry() -> Vec<IntegrationPolicy> {
    use OutputFusion::*;
    use ScoreSource::*;
    use TemplateUpdate::*;
    vec![
        IntegrationPolicy::fixed("grounding-only", Schedule::AllGrounding),
        IntegrationPolicy::fixed("first-frame", Schedule::FrameKInit(InitFrame::First)),
        IntegrationPolicy::fixed("middle-frame", Schedule::FrameKInit(InitFrame::Middle)),
        IntegrationPolicy::fixed("last-frame", Schedule::FrameKInit(InitFrame::Last)),
        IntegrationPolicy::fixed("random-frame", Schedule::FrameKInit(InitFrame::Random)),
        IntegrationPolicy::fixed("fixed-interval-5", Schedule::FixedInterval(5)),
        IntegrationPolicy::fixed("fixed-interval-10", Schedule::FixedInterval(10)),
        IntegrationPolicy::fixed("fixed-interval-20", Schedule::FixedInterval(20)),
        IntegrationPolicy::adaptive("lsan++", GroundingConfidence, Frozen, SoftFusion { weight: Some(0.5) }),
        IntegrationPolicy::adaptive("ours-grounding", GroundingConfidence, Greedy, HardSwitch),
        IntegrationPolicy::adaptive("ours-r", ROnly, Greedy, HardSwitch),
        IntegrationPolicy::adaptive("ours-rt", RtProduct, Greedy, HardSwitch),
        IntegrationPolicy::adaptive("oracle-r", OracleR, Greedy, HardSwitch),
        IntegrationPolicy::adaptive("oracle-rt", OracleRt, Greedy, HardSwitch),
        IntegrationPolicy::adaptive("ablation-greedy-soft", OracleRt, Greedy, SoftFusion { weight: None }),
        IntegrationPolicy::adaptive("ablation-threshold-hard", OracleRt, ImprovementThreshold { tau: 0.2 }, HardSwitch),
        IntegrationPolicy::adaptive("ablation-fixed-weight-hard", OracleRt, FixedWeight { rate: 0.9 }, HardSwitch),
        IntegrationPolicy::adaptive("ablation-score-weighted-hard", OracleRt, ScoreWeighted, HardSwitch),
    ]
}

/// Names of the single-module baselines.
pub const SINGLE_MODULE: [&str; 5] = ["grounding-only", "first-frame", "middle-frame", "last-frame", "random-frame"];
pub const FIXED_INTERVAL: [&str; 3] = ["fixed-interval-5", "fixed-interval-10", "fixed-interval-20"];
/// The template-update x output-fusion grid, greedy hard switch first.
pub const ABLATIONS: [&str; 5] = [
    "oracle-rt",
    "ablation-greedy-soft",
    "ablation-threshold-hard",
    "ablation-fixed-weight-hard",
    "ablation-score-weighted-hard",
];

pub fn policy_by_name(name: &str) -> Result<IntegrationPolicy> {
    registry()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("unknown policy {name:?}")))
}

/// Resolves a comma-separated list; `all` expands to the registry.
pub fn parse_policy_list(spec: &str) -> Result<Vec<IntegrationPolicy>> {
    let mut out = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if name == "all" {
            out.extend(registry());
        } else {
            out.push(policy_by_name(name)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty policy list".into()));
    }
    Ok(out)
}

/// The scalar a score source feeds to the switch test.
pub fn combined_score(s: RTScores, confidence: f64, source: ScoreSource) -> f64 {
    match source {
        ScoreSource::GroundingConfidence => confidence,
        ScoreSource::ROnly | ScoreSource::OracleR => s.r,
        ScoreSource::RtProduct | ScoreSource::OracleRt => s.r * s.t,
    }
}

/// Greedy switch state shared by every hard-switch variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchController {
    pub lambda: f64,
    pub tau: f64,
    saved: Option<f64>,
}

impl SwitchController {
    pub fn new(lambda: f64, tau: f64) -> Self {
        SwitchController { lambda, tau, saved: None }
    }

    pub fn saved(&self) -> Option<f64> {
        self.saved
    }

    /// Scores at or below this value cannot trigger a switch; `None` on the
    /// first frame, which always switches.
    pub fn bar(&self) -> Option<f64> {
        self.saved.map(|s| s * (1.0 + self.tau))
    }

    /// Feeds one frame's score. `None` means the score is known not to exceed
    /// [`SwitchController::bar`]. Returns `true` when grounding wins.
    pub fn step(&mut self, score: Option<f64>) -> bool {
        match (self.bar(), score) {
            (None, s) => {
                self.saved = Some(s.unwrap_or(0.0));
                true
            }
            (Some(bar), Some(s)) if bar < s => {
                self.saved = Some(s);
                true
            }
            (Some(_), _) => {
                self.saved = self.saved.map(|v| v * self.lambda);
                false
            }
        }
    }
}

/// Per-frame score provider for the adaptive schedule.
pub enum Scorer<'a> {
    /// Fixed per-frame scores, for traces and tests.
    Injected(&'a [f64]),
    Confidence,
    Predicted { model: &'a ScoreModel, use_t: bool },
    /// Ground-truth scores; `t_score` is called lazily.
    Oracle { gt: &'a [BBox], t_score: &'a (dyn Fn(usize) -> Result<f64> + Sync), use_t: bool },
}

impl Scorer<'_> {
    /// Score of frame `t`, or `None` when it provably cannot exceed `bar`.
    pub fn score(&self, t: usize, g: &GroundingOutput, bar: Option<f64>) -> Result<Option<f64>> {
        Ok(Some(match self {
            Scorer::Injected(s) => *s.get(t).ok_or(Error::FrameOutOfRange { index: t, n_frames: s.len() })?,
            Scorer::Confidence => g.top1.confidence,
            Scorer::Predicted { model, use_t } => {
                let p = rtscore::predict(model, &g.features, g.top1.confidence);
                if *use_t {
                    p.r * p.t
                } else {
                    p.r
                }
            }
            Scorer::Oracle { gt, t_score, use_t } => {
                let r = rtscore::derive_r(&g.top1.bbox, &gt[t]);
                if !*use_t {
                    r
                } else if bar.is_some_and(|b| r <= b) {
                    // t <= 1, so r * t <= bar as well
                    return Ok(None);
                } else {
                    r * t_score(t)?
                }
            }
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameSource {
    Grounding,
    Tracking,
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub source: FrameSource,
    /// `None` when the score was not needed for the decision.
    pub score: Option<f64>,
    pub saved_before: Option<f64>,
    pub saved: Option<f64>,
    pub grounded: BBox,
    pub tracked: Option<BBox>,
    pub output: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub tubelet: Vec<BBox>,
    pub frame_log: Vec<FrameRecord>,
}

impl RunOutput {
    /// Mean number of frames per grounding adoption.
    pub fn mean_reground_interval(&self) -> f64 {
        let n = self.frame_log.iter().filter(|r| r.source == FrameSource::Grounding).count();
        self.tubelet.len() as f64 / n.max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunContext {
    pub video_id: u64,
    pub seed: u64,
}

/// Runs one policy over pre-rendered frames and per-frame groundings.
pub fn run_video(
    frames: &[Raster],
    groundings: &[GroundingOutput],
    scorer: &Scorer,
    policy: &IntegrationPolicy,
    cfg: &TrackerConfig,
    ctx: RunContext,
) -> Result<RunOutput> {
    if frames.len() != groundings.len() {
        return Err(Error::LengthMismatch(frames.len(), groundings.len()));
    }
    if frames.is_empty() {
        return Err(Error::Data("video has no frames".into()));
    }
    match policy.schedule {
        Schedule::Adaptive => adaptive(frames, groundings, scorer, policy, cfg),
        schedule => fixed_schedule_run(frames, groundings, schedule, cfg, ctx),
    }
}

fn start(frame: &Raster, b: &BBox, cfg: &TrackerConfig) -> Result<TrackerState> {
    tracker::init(frame, clamp_to_frame(b, frame.bounds()), cfg)
}

fn adaptive(
    frames: &[Raster],
    groundings: &[GroundingOutput],
    scorer: &Scorer,
    policy: &IntegrationPolicy,
    cfg: &TrackerConfig,
) -> Result<RunOutput> {
    let tau = match policy.template_update {
        TemplateUpdate::ImprovementThreshold { tau } => tau,
        _ => 0.0,
    };
    let mut ctl = SwitchController::new(policy.lambda, tau);
    let frozen = policy.template_update == TemplateUpdate::Frozen;
    let needs_score = policy.uses_scores();

    let g0 = groundings[0].top1.bbox;
    let s0 = if needs_score { scorer.score(0, &groundings[0], None)? } else { None };
    ctl.step(s0.or(Some(0.0)));
    let mut state = start(&frames[0], &g0, cfg)?;
    let mut out = RunOutput {
        tubelet: vec![g0],
        frame_log: vec![FrameRecord {
            frame: 0,
            source: FrameSource::Grounding,
            score: s0,
            saved_before: None,
            saved: ctl.saved(),
            grounded: g0,
            tracked: None,
            output: g0,
        }],
    };

    for t in 1..frames.len() {
        let g = &groundings[t];
        let bg = clamp_to_frame(&g.top1.bbox, frames[t].bounds());
        let before = ctl.saved();
        let (record, output) = match policy.output_fusion {
            OutputFusion::HardSwitch => {
                let s = if frozen { None } else { scorer.score(t, g, ctl.bar())? };
                if !frozen && ctl.step(s) {
                    adopt(&mut state, &frames[t], bg, s.unwrap_or(1.0), policy.template_update)?;
                    ((FrameSource::Grounding, s, None), bg)
                } else {
                    if frozen {
                        ctl.step(None);
                    }
                    let (bt, _) = tracker::track(&frames[t], &mut state, cfg);
                    ((FrameSource::Tracking, s, Some(bt)), bt)
                }
            }
            OutputFusion::SoftFusion { weight } => {
                let s = if needs_score { scorer.score(t, g, None)? } else { None };
                let w = weight.or(s).unwrap_or(0.5).clamp(0.0, 1.0);
                let map = tracker::response(&frames[t], &state, cfg);
                let tracked = map.best().bbox;
                let fused = fuse(&map.entries, g, w);
                if !frozen && ctl.step(s) {
                    adopt(&mut state, &frames[t], bg, s.unwrap_or(1.0), policy.template_update)?;
                } else if frozen {
                    ctl.step(None);
                }
                state.relocate(fused);
                ((FrameSource::Fused, s, Some(tracked)), fused)
            }
        };
        let (source, score, tracked) = record;
        out.tubelet.push(output);
        out.frame_log.push(FrameRecord {
            frame: t,
            source,
            score,
            saved_before: before,
            saved: ctl.saved(),
            grounded: g.top1.bbox,
            tracked,
            output,
        });
    }
    Ok(out)
}

/// Re-templates at the grounded box with the policy's blend rate.
fn adopt(state: &mut TrackerState, frame: &Raster, bg: BBox, score: f64, update: TemplateUpdate) -> Result<()> {
    let rate = match update {
        TemplateUpdate::FixedWeight { rate } => rate,
        TemplateUpdate::ScoreWeighted => score,
        _ => 1.0,
    };
    tracker::update_template(state, frame, bg, rate)?;
    state.relocate(bg);
    Ok(())
}

fn min_max(v: &mut [f64]) {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for x in v.iter_mut() {
        *x = if hi > lo { (*x - lo) / (hi - lo) } else { 0.0 };
    }
}

/// Soft fusion over the tracker's candidate set: grounding confidences are
/// splatted onto each candidate by IoU (max over detections), both maps are
/// min-max normalized, and `w * grounding + (1 - w) * tracking` is maximized.
pub fn fuse(entries: &[ResponseEntry], g: &GroundingOutput, w: f64) -> BBox {
    let mut track: Vec<f64> = entries.iter().map(|e| e.score).collect();
    let mut ground: Vec<f64> = entries
        .iter()
        .map(|e| g.candidates.iter().map(|c| iou(&e.bbox, &c.candidate.bbox) * c.confidence).fold(0.0, f64::max))
        .collect();
    min_max(&mut track);
    min_max(&mut ground);
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, e) in entries.iter().enumerate() {
        let v = w * ground[i] + (1.0 - w) * track[i];
        let b = &entries[best];
        let better = v > best_v
            || (v == best_v && (e.displacement, e.scale_offset) < (b.displacement, b.scale_offset));
        if better {
            best = i;
            best_v = v;
        }
    }
    entries[best].bbox
}

/// Template frame used by a frame-k-init schedule.
pub fn init_frame_index(which: InitFrame, n: usize, ctx: RunContext) -> usize {
    match which {
        InitFrame::First => 0,
        InitFrame::Middle => n / 2,
        InitFrame::Last => n - 1,
        InitFrame::Random => ((unit(&[ctx.seed, TAG_RANDOM_FRAME, ctx.video_id]) * n as f64) as usize).min(n - 1),
    }
}

fn fixed_record(t: usize, source: FrameSource, g: BBox, tracked: Option<BBox>, output: BBox) -> FrameRecord {
    FrameRecord { frame: t, source, score: None, saved_before: None, saved: None, grounded: g, tracked, output }
}

/// Score-free baselines. Grounded boxes are adopted without any gate.
pub fn fixed_schedule_run(
    frames: &[Raster],
    groundings: &[GroundingOutput],
    schedule: Schedule,
    cfg: &TrackerConfig,
    ctx: RunContext,
) -> Result<RunOutput> {
    let n = frames.len();
    let gbox = |t: usize| groundings[t].top1.bbox;
    let mut log: Vec<FrameRecord> = Vec::with_capacity(n);
    match schedule {
        Schedule::Adaptive => return Err(Error::Config("adaptive is not a fixed schedule".into())),
        Schedule::AllGrounding => {
            for t in 0..n {
                log.push(fixed_record(t, FrameSource::Grounding, gbox(t), None, gbox(t)));
            }
        }
        Schedule::FixedInterval(m) => {
            if m == 0 {
                return Err(Error::Config("interval must be positive".into()));
            }
            let mut state = start(&frames[0], &gbox(0), cfg)?;
            for t in 0..n {
                if t % m == 0 {
                    let bg = clamp_to_frame(&gbox(t), frames[t].bounds());
                    if t > 0 {
                        tracker::update_template(&mut state, &frames[t], bg, 1.0)?;
                        state.relocate(bg);
                    }
                    log.push(fixed_record(t, FrameSource::Grounding, gbox(t), None, gbox(t)));
                } else {
                    let (bt, _) = tracker::track(&frames[t], &mut state, cfg);
                    log.push(fixed_record(t, FrameSource::Tracking, gbox(t), Some(bt), bt));
                }
            }
        }
        Schedule::FrameKInit(which) => {
            let k = init_frame_index(which, n, ctx);
            let mut slots: Vec<Option<FrameRecord>> = vec![None; n];
            slots[k] = Some(fixed_record(k, FrameSource::Grounding, gbox(k), None, gbox(k)));
            let mut state = start(&frames[k], &gbox(k), cfg)?;
            for t in k + 1..n {
                let (bt, _) = tracker::track(&frames[t], &mut state, cfg);
                slots[t] = Some(fixed_record(t, FrameSource::Tracking, gbox(t), Some(bt), bt));
            }
            let mut state = start(&frames[k], &gbox(k), cfg)?;
            for t in (0..k).rev() {
                let (bt, _) = tracker::track(&frames[t], &mut state, cfg);
                slots[t] = Some(fixed_record(t, FrameSource::Tracking, gbox(t), Some(bt), bt));
            }
            log = slots.into_iter().map(|r| r.expect("every frame visited")).collect();
        }
    }
    Ok(RunOutput { tubelet: log.iter().map(|r| r.output).collect(), frame_log: log })
}

/// Renders, grounds every frame, and runs a policy: the end-to-end path for
/// one (video, query).
pub fn run_query(
    sample: &VideoSample,
    query: &str,
    noise: &NoiseProfile,
    scorer: &Scorer,
    policy: &IntegrationPolicy,
    cfg: &TrackerConfig,
    seed: u64,
) -> Result<RunOutput> {
    let constraints = crate::queries::parse(query)?;
    let frames = sample.frames();
    let groundings = frames
        .iter()
        .enumerate()
        .map(|(t, r)| grounder::ground_constraints(sample, t, &constraints, noise, r))
        .collect::<Result<Vec<_>>>()?;
    run_video(&frames, &groundings, scorer, policy, cfg, RunContext { video_id: sample.video_id, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queries::{Color, Shape};
    use crate::synthworld::tests::{object, scene, still};
    use crate::synthworld::{DegradationEvent, DegradationKind, Trajectory};

    fn cheap() -> TrackerConfig {
        TrackerConfig { template_size: 12, search_radius: 8, ..Default::default() }
    }

    fn video(n: usize) -> VideoSample {
        let s = scene(
            n,
            vec![
                object(0, Shape::Rectangle, Color::Red, 24.0, [60.0, 80.0], Trajectory::Linear { velocity: [1.5, 0.7] }),
                object(1, Shape::Ellipse, Color::Blue, 20.0, [190.0, 190.0], still()),
            ],
            0,
        );
        VideoSample::from_scene(3, s).unwrap()
    }

    fn grounded(v: &VideoSample, noise: &NoiseProfile) -> (Vec<Raster>, Vec<GroundingOutput>) {
        let frames = v.frames();
        let g = frames.iter().enumerate().map(|(t, r)| grounder::ground(v, t, "the red rectangle", noise, r).unwrap()).collect();
        (frames, g)
    }

    const CTX: RunContext = RunContext { video_id: 3, seed: 0 };

    #[test]
    fn hand_trace() {
        let v = video(3);
        let (frames, g) = grounded(&v, &NoiseProfile::noiseless());
        let p = policy_by_name("ours-grounding").unwrap();
        let out = run_video(&frames, &g, &Scorer::Injected(&[0.9, 0.5, 0.95]), &p, &cheap(), CTX).unwrap();
        let sources: Vec<_> = out.frame_log.iter().map(|r| r.source).collect();
        assert_eq!(sources, [FrameSource::Grounding, FrameSource::Tracking, FrameSource::Grounding]);
        let saved: Vec<f64> = out.frame_log.iter().map(|r| r.saved.unwrap()).collect();
        assert_eq!(saved[0], 0.9);
        assert!((saved[1] - 0.8982).abs() < 1e-12);
        assert_eq!(saved[2], 0.95);
    }

    #[test]
    fn controller_matches_trace() {
        let mut c = SwitchController::new(0.998, 0.0);
        assert!(c.step(Some(0.9)));
        assert!(!c.step(Some(0.5)));
        assert!(c.step(Some(0.95)));
        assert_eq!(c.saved(), Some(0.95));
    }

    #[test]
    fn combined_scores() {
        let s = |r, t| RTScores { r, t };
        assert_eq!(combined_score(s(1.0, 1.0), 0.3, ScoreSource::RtProduct), 1.0);
        assert!((combined_score(s(0.8, 0.5), 0.3, ScoreSource::RtProduct) - 0.4).abs() < 1e-12);
        assert_eq!(combined_score(s(0.0, 0.7), 0.3, ScoreSource::OracleRt), 0.0);
        assert_eq!(combined_score(s(0.6, 0.7), 0.3, ScoreSource::ROnly), 0.6);
        assert_eq!(combined_score(s(0.6, 0.7), 0.3, ScoreSource::GroundingConfidence), 0.3);
    }

    #[test]
    fn single_frame_outputs_grounding_for_every_policy() {
        let v = video(1);
        let (frames, g) = grounded(&v, &NoiseProfile::default());
        let t = |_: usize| Ok(1.0);
        for p in registry() {
            let scorer = match p.score_source {
                s if s.is_oracle() => Scorer::Oracle { gt: &v.gt_tubelet, t_score: &t, use_t: true },
                _ => Scorer::Confidence,
            };
            let out = run_video(&frames, &g, &scorer, &p, &cheap(), CTX).unwrap();
            assert_eq!(out.tubelet, vec![g[0].top1.bbox], "{}", p.name);
        }
    }

    #[test]
    fn oracle_rt_exact_on_noiseless_video() {
        // a still target keeps tracking frames exact too
        let s = scene(
            40,
            vec![
                object(0, Shape::Rectangle, Color::Red, 24.0, [60.0, 80.0], still()),
                object(1, Shape::Ellipse, Color::Blue, 20.0, [150.0, 150.0], Trajectory::Linear { velocity: [1.0, 0.5] }),
            ],
            0,
        );
        let v = VideoSample::from_scene(3, s).unwrap();
        let (frames, g) = grounded(&v, &NoiseProfile::noiseless());
        let cfg = cheap();
        let t = |k: usize| rtscore::derive_t_on(&frames, &v.gt_tubelet, k, &cfg);
        let scorer = Scorer::Oracle { gt: &v.gt_tubelet, t_score: &t, use_t: true };
        let out = run_video(&frames, &g, &scorer, &policy_by_name("oracle-rt").unwrap(), &cfg, CTX).unwrap();
        for (b, gt) in out.tubelet.iter().zip(&v.gt_tubelet) {
            assert_eq!(iou(b, gt), 1.0);
        }
    }

    #[test]
    fn greedy_regrounds_exactly_where_score_beats_saved() {
        let v = video(30);
        let (frames, g) = grounded(&v, &NoiseProfile { seed: 5, ..Default::default() });
        let scores: Vec<f64> = (0..30).map(|i| ((i * 37 % 11) as f64) / 10.0).collect();
        let out = run_video(&frames, &g, &Scorer::Injected(&scores), &policy_by_name("ours-rt").unwrap(), &cheap(), CTX).unwrap();
        for r in &out.frame_log[1..] {
            let switched = r.saved_before.unwrap() < r.score.unwrap();
            assert_eq!(switched, r.source == FrameSource::Grounding);
        }
    }

    #[test]
    fn no_reground_when_first_score_is_max() {
        let v = video(25);
        let (frames, g) = grounded(&v, &NoiseProfile::default());
        let mut scores = vec![0.4; 25];
        scores[0] = 0.9;
        scores[7] = 0.9;
        let mut p = policy_by_name("ours-rt").unwrap();
        p.lambda = 1.0;
        let out = run_video(&frames, &g, &Scorer::Injected(&scores), &p, &cheap(), CTX).unwrap();
        assert!(out.frame_log[1..].iter().all(|r| r.source == FrameSource::Tracking));
    }

    #[test]
    fn all_grounding_exact_outside_occlusion() {
        let mut v = video(30);
        v.scene.events.push(DegradationEvent { kind: DegradationKind::FullOcclusionBand, start: 10, end: 14, magnitude: 1.0 });
        let v = VideoSample::from_scene(3, v.scene.clone()).unwrap();
        let (frames, g) = grounded(&v, &NoiseProfile::noiseless());
        let out = fixed_schedule_run(&frames, &g, Schedule::AllGrounding, &cheap(), CTX).unwrap();
        for t in 0..30 {
            if !(10..14).contains(&t) {
                assert_eq!(iou(&out.tubelet[t], &v.gt_tubelet[t]), 1.0);
            }
        }
    }

    #[test]
    fn long_interval_equals_first_frame_tracking() {
        let v = video(20);
        let (frames, g) = grounded(&v, &NoiseProfile { seed: 2, ..Default::default() });
        let a = fixed_schedule_run(&frames, &g, Schedule::FixedInterval(21), &cheap(), CTX).unwrap();
        let b = fixed_schedule_run(&frames, &g, Schedule::FrameKInit(InitFrame::First), &cheap(), CTX).unwrap();
        assert_eq!(a.tubelet, b.tubelet);
    }

    #[test]
    fn middle_frame_template_index() {
        let v = video(21);
        let (frames, g) = grounded(&v, &NoiseProfile::default());
        let out = fixed_schedule_run(&frames, &g, Schedule::FrameKInit(InitFrame::Middle), &cheap(), CTX).unwrap();
        let grounded: Vec<usize> =
            out.frame_log.iter().filter(|r| r.source == FrameSource::Grounding).map(|r| r.frame).collect();
        assert_eq!(grounded, vec![10]);
        assert_eq!(init_frame_index(InitFrame::Last, 21, CTX), 20);
    }

    #[test]
    fn fixed_interval_reground_rate() {
        let v = video(40);
        let (frames, g) = grounded(&v, &NoiseProfile::default());
        for m in [5, 10, 20] {
            let out = fixed_schedule_run(&frames, &g, Schedule::FixedInterval(m), &cheap(), CTX).unwrap();
            assert!((out.mean_reground_interval() - m as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn every_variant_runs() {
        let v = video(15);
        let (frames, g) = grounded(&v, &NoiseProfile { seed: 9, ..Default::default() });
        let cfg = cheap();
        let t = |k: usize| rtscore::derive_t_on(&frames, &v.gt_tubelet, k, &cfg);
        for name in ABLATIONS.iter().chain(["lsan++"].iter()) {
            let p = policy_by_name(name).unwrap();
            p.validate().unwrap();
            let scorer = Scorer::Oracle { gt: &v.gt_tubelet, t_score: &t, use_t: true };
            let out = run_video(&frames, &g, &scorer, &p, &cfg, CTX).unwrap();
            assert_eq!(out.tubelet.len(), 15);
            assert!(out.tubelet.iter().all(|b| b.inside(v.scene.bounds)));
        }
    }

    #[test]
    fn registry_names_unique_and_valid() {
        let r = registry();
        let mut names: Vec<_> = r.iter().map(|p| p.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), r.len());
        r.iter().for_each(|p| p.validate().unwrap());
        assert_eq!(parse_policy_list("all").unwrap().len(), r.len());
        assert!(parse_policy_list("nope").is_err());
    }
}
