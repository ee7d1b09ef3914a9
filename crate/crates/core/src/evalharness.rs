//! Tracking metrics, oracle scores, and the benchmark grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{center_distance, iou, BBox};
use crate::grounder::{self, GroundingOutput, NoiseProfile, ScoredBox};
use crate::integrator::{self, IntegrationPolicy, RunContext, ScoreSource, Scorer};
use crate::raster::Raster;
use crate::rtscore::{self, RTScores, ScoreModel};
use crate::synthworld::{VideoRecord, VideoSample};
use crate::tracker::TrackerConfig;
use crate::{Error, Result};

pub const PRECISION_THRESHOLD: f64 = 20.0;
pub const SUCCESS_STEPS: usize = 21;
pub const REPORT_FORMAT: &str = "gti-report-v1";

/// Success-plot thresholds `0, 0.05, ..., 1`.
pub fn success_thresholds() -> Vec<f64> {
    (0..SUCCESS_STEPS).map(|i| i as f64 / (SUCCESS_STEPS - 1) as f64).collect()
}

fn check_lengths(pred: &[BBox], gt: &[BBox]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(Error::Data("empty tubelet".into()));
    }
    Ok(())
}

/// Fraction of frames whose center error is at most `threshold` pixels.
pub fn precision_at(pred: &[BBox], gt: &[BBox], threshold: f64) -> Result<f64> {
    check_lengths(pred, gt)?;
    let hits = pred.iter().zip(gt).filter(|(p, g)| center_distance(p, g) <= threshold).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Fraction of frames with IoU strictly above each threshold.
pub fn success_curve(pred: &[BBox], gt: &[BBox], thresholds: &[f64]) -> Result<Vec<f64>> {
    check_lengths(pred, gt)?;
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect();
    Ok(thresholds
        .iter()
        .map(|&tau| ious.iter().filter(|&&v| v > tau).count() as f64 / ious.len() as f64)
        .collect())
}

/// Mean of the success curve over the 21 standard thresholds.
pub fn success_auc(pred: &[BBox], gt: &[BBox]) -> Result<f64> {
    let curve = success_curve(pred, gt, &success_thresholds())?;
    Ok(curve.iter().sum::<f64>() / curve.len() as f64)
}

/// Precision at every integer pixel threshold `0..=max`.
pub fn precision_curve(pred: &[BBox], gt: &[BBox], max: usize) -> Result<Vec<f64>> {
    (0..=max).map(|t| precision_at(pred, gt, t as f64)).collect()
}

/// Ground-truth scores of one grounding. Uncached; the benchmark goes through
/// [`TCache`] which calls the same T derivation.
pub fn oracle_scores(sample: &VideoSample, frame: usize, grounded: &ScoredBox, cfg: &TrackerConfig) -> Result<RTScores> {
    let gt = sample.gt_tubelet.get(frame).ok_or(Error::FrameOutOfRange { index: frame, n_frames: sample.n_frames() })?;
    Ok(RTScores { r: rtscore::derive_r(&grounded.bbox, gt), t: rtscore::derive_t(sample, frame, cfg)? })
}

/// Lazily filled per-frame T-scores of one video.
pub struct TCache<'a> {
    frames: &'a [Raster],
    gt: &'a [BBox],
    cfg: &'a TrackerConfig,
    cells: Vec<OnceLock<f64>>,
}

impl<'a> TCache<'a> {
    pub fn new(frames: &'a [Raster], gt: &'a [BBox], cfg: &'a TrackerConfig) -> Self {
        TCache { frames, gt, cfg, cells: (0..frames.len()).map(|_| OnceLock::new()).collect() }
    }

    pub fn get(&self, k: usize) -> Result<f64> {
        if let Some(v) = self.cells.get(k).and_then(OnceLock::get) {
            return Ok(*v);
        }
        let v = rtscore::derive_t_on(self.frames, self.gt, k, self.cfg)?;
        Ok(*self.cells[k].get_or_init(|| v))
    }

    pub fn computed(&self) -> usize {
        self.cells.iter().filter(|c| c.get().is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub policies: Vec<IntegrationPolicy>,
    pub seeds: Vec<u64>,
    pub noise: NoiseProfile,
    pub tracker: TrackerConfig,
    /// Also evaluate queries flagged as ambiguous, reported separately.
    pub include_ambiguous: bool,
}

/// One (policy, video, query, seed) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub policy: String,
    pub video_id: u64,
    pub query: String,
    pub ambiguous: bool,
    pub seed: u64,
    pub success_auc: f64,
    pub precision_at_20: f64,
    pub mean_reground_interval: f64,
    pub success_curve: Vec<f64>,
    pub precision_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRow {
    pub policy: String,
    pub video_id: u64,
    pub success_auc: f64,
    pub precision_at_20: f64,
    pub mean_reground_interval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub policy: String,
    pub success_auc: f64,
    pub precision_at_20: f64,
    pub mean_reground_interval: f64,
    pub n_videos: usize,
    pub success_curve: Vec<f64>,
    pub precision_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<PolicyRow>,
    pub ambiguous_rows: Vec<PolicyRow>,
    pub per_video: Vec<VideoRow>,
}

impl MetricReport {
    pub fn row(&self, policy: &str) -> Option<&PolicyRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    pub fn success(&self, policy: &str) -> Option<f64> {
        self.row(policy).map(|r| r.success_auc)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, rows_csv(&self.rows)).map_err(|e| Error::io(path, e))
    }

    pub fn write_ambiguous_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, rows_csv(&self.ambiguous_rows)).map_err(|e| Error::io(path, e))
    }
}

pub fn rows_csv(rows: &[PolicyRow]) -> String {
    let mut s = String::from("policy,success_auc,precision_at_20,mean_reground_interval,n_videos\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.4},{}",
            r.policy, r.success_auc, r.precision_at_20, r.mean_reground_interval, r.n_videos
        );
    }
    s
}

pub fn config_digest(spec: &BenchmarkSpec, dataset_digest: &str, model: Option<&ScoreModel>) -> String {
    let mut h = Sha256::new();
    h.update(dataset_digest.as_bytes());
    h.update(serde_json::to_vec(spec).unwrap_or_default());
    if let Some(m) = model {
        h.update(serde_json::to_vec(m).unwrap_or_default());
    }
    hex::encode(h.finalize())
}

/// Evaluates every policy on every test video, query and seed.
pub fn run_benchmark(
    videos: &[VideoRecord],
    spec: &BenchmarkSpec,
    model: Option<&ScoreModel>,
    dataset_digest: &str,
) -> Result<MetricReport> {
    if videos.is_empty() {
        return Err(Error::EmptyTestSplit);
    }
    if spec.seeds.is_empty() {
        return Err(Error::Config("no seeds".into()));
    }
    let mut unique: Vec<&IntegrationPolicy> = Vec::new();
    for p in &spec.policies {
        p.validate()?;
        if p.score_source.needs_model() && p.uses_scores() && model.is_none() {
            return Err(Error::MissingModel(p.name.clone()));
        }
        if !unique.iter().any(|u| u.name == p.name) {
            unique.push(p);
        }
    }
    let results: Vec<Vec<RunResult>> =
        videos.par_iter().map(|rec| evaluate_video(rec, &unique, spec, model)).collect::<Result<_>>()?;
    let results: Vec<RunResult> = results.into_iter().flatten().collect();

    let mut rows = Vec::new();
    let mut ambiguous_rows = Vec::new();
    let mut per_video = Vec::new();
    for p in &spec.policies {
        let (row, videos) = aggregate(&p.name, results.iter().filter(|r| r.policy == p.name && !r.ambiguous));
        rows.push(row);
        per_video.extend(videos);
        if spec.include_ambiguous {
            let (row, _) = aggregate(&p.name, results.iter().filter(|r| r.policy == p.name && r.ambiguous));
            ambiguous_rows.push(row);
        }
    }
    Ok(MetricReport {
        format: REPORT_FORMAT.into(),
        config_digest: config_digest(spec, dataset_digest, model),
        seeds: spec.seeds.clone(),
        rows,
        ambiguous_rows,
        per_video,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn mean_vec<'a>(v: impl Iterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0.0;
    for x in v {
        if acc.is_empty() {
            acc = vec![0.0; x.len()];
        }
        acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        n += 1.0;
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Per-video means over queries and seeds, then an unweighted mean over
/// videos.
fn aggregate<'a>(policy: &str, results: impl Iterator<Item = &'a RunResult>) -> (PolicyRow, Vec<VideoRow>) {
    let mut by_video: BTreeMap<u64, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        by_video.entry(r.video_id).or_default().push(r);
    }
    let mut videos = Vec::new();
    let mut sc = Vec::new();
    let mut pc = Vec::new();
    for (id, rs) in &by_video {
        videos.push(VideoRow {
            policy: policy.into(),
            video_id: *id,
            success_auc: mean(rs.iter().map(|r| r.success_auc)),
            precision_at_20: mean(rs.iter().map(|r| r.precision_at_20)),
            mean_reground_interval: mean(rs.iter().map(|r| r.mean_reground_interval)),
        });
        sc.push(mean_vec(rs.iter().map(|r| &r.success_curve)));
        pc.push(mean_vec(rs.iter().map(|r| &r.precision_curve)));
    }
    let row = PolicyRow {
        policy: policy.into(),
        success_auc: mean(videos.iter().map(|v| v.success_auc)),
        precision_at_20: mean(videos.iter().map(|v| v.precision_at_20)),
        mean_reground_interval: mean(videos.iter().map(|v| v.mean_reground_interval)),
        n_videos: videos.len(),
        success_curve: mean_vec(sc.iter()),
        precision_curve: mean_vec(pc.iter()),
    };
    (row, videos)
}

pub const PRECISION_CURVE_MAX: usize = 50;

fn evaluate_video(
    rec: &VideoRecord,
    policies: &[&IntegrationPolicy],
    spec: &BenchmarkSpec,
    model: Option<&ScoreModel>,
) -> Result<Vec<RunResult>> {
    let sample = rec.to_sample()?;
    let frames = sample.frames();
    let gt = &sample.gt_tubelet;
    let cache = TCache::new(&frames, gt, &spec.tracker);
    let t_score = |k: usize| cache.get(k);
    let mut out = Vec::new();
    for q in &sample.queries {
        if q.ambiguous && !spec.include_ambiguous {
            continue;
        }
        let constraints = crate::queries::parse(&q.text)?;
        for &seed in &spec.seeds {
            let noise = spec.noise.reseeded(seed);
            let groundings: Vec<GroundingOutput> = frames
                .iter()
                .enumerate()
                .map(|(t, r)| grounder::ground_constraints(&sample, t, &constraints, &noise, r))
                .collect::<Result<_>>()?;
            for p in policies {
                let scorer = match p.score_source {
                    ScoreSource::GroundingConfidence => Scorer::Confidence,
                    ScoreSource::ROnly | ScoreSource::RtProduct => match model {
                        Some(m) => Scorer::Predicted { model: m, use_t: p.score_source == ScoreSource::RtProduct },
                        None if !p.uses_scores() => Scorer::Confidence,
                        None => return Err(Error::MissingModel(p.name.clone())),
                    },
                    ScoreSource::OracleR | ScoreSource::OracleRt => {
                        Scorer::Oracle { gt, t_score: &t_score, use_t: p.score_source == ScoreSource::OracleRt }
                    }
                };
                let ctx = RunContext { video_id: sample.video_id, seed };
                let run = integrator::run_video(&frames, &groundings, &scorer, p, &spec.tracker, ctx)?;
                out.push(RunResult {
                    policy: p.name.clone(),
                    video_id: sample.video_id,
                    query: q.text.clone(),
                    ambiguous: q.ambiguous,
                    seed,
                    success_auc: success_auc(&run.tubelet, gt)?,
                    precision_at_20: precision_at(&run.tubelet, gt, PRECISION_THRESHOLD)?,
                    mean_reground_interval: run.mean_reground_interval(),
                    success_curve: success_curve(&run.tubelet, gt, &success_thresholds())?,
                    precision_curve: precision_curve(&run.tubelet, gt, PRECISION_CURVE_MAX)?,
                });
            }
        }
    }
    log::debug!("video {} done, {} T-scores derived", sample.video_id, cache.computed());
    Ok(out)
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// A standalone line plot, one polyline per row.
pub fn curve_svg(title: &str, x_label: &str, xs: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 420.0, 60.0, 200.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let x_max = xs.iter().cloned().fold(f64::MIN, f64::max).max(1e-9);
    let px = |x: f64| left + x / x_max * pw;
    let py = |y: f64| top + (1.0 - y.clamp(0.0, 1.0)) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, title);
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.1}</text>"#, left - 6.0, py(v) + 4.0, v);
        let xv = x_max * v;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, px(xv), top + ph + 18.0, trim(xv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 10.0, x_label);
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = xs.iter().zip(ys).map(|(x, y)| format!("{:.1},{:.1}", px(*x), py(*y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = top + 12.0 + i as f64 * 16.0;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - right + 10.0, w - right + 30.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, w - right + 36.0, ly + 4.0, name);
    }
    s.push_str("</svg>\n");
    s
}

fn trim(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn success_svg(rows: &[PolicyRow]) -> String {
    let series: Vec<(String, Vec<f64>)> =
        rows.iter().map(|r| (format!("{} [{:.3}]", r.policy, r.success_auc), r.success_curve.clone())).collect();
    curve_svg("Success plot", "overlap threshold", &success_thresholds(), &series)
}

pub fn precision_svg(rows: &[PolicyRow]) -> String {
    let xs: Vec<f64> = (0..=PRECISION_CURVE_MAX).map(|v| v as f64).collect();
    let series: Vec<(String, Vec<f64>)> =
        rows.iter().map(|r| (format!("{} [{:.3}]", r.policy, r.precision_at_20), r.precision_curve.clone())).collect();
    curve_svg("Precision plot", "location error threshold (px)", &xs, &series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox { x, y, w, h }
    }

    /// A box sharing the reference's top-left corner with the given IoU.
    fn with_iou(v: f64) -> BBox {
        // (w * 10) / 100 = v for a 10-high box nested in a 10x10 one
        bb(0.0, 0.0, 10.0 * v, 10.0)
    }

    #[test]
    fn auc_examples() {
        let gt = vec![bb(0.0, 0.0, 10.0, 10.0); 8];
        assert!((success_auc(&gt, &gt).unwrap() - 20.0 / 21.0).abs() < 1e-12);
        let far = vec![bb(50.0, 50.0, 10.0, 10.0); 8];
        assert_eq!(success_auc(&far, &gt).unwrap(), 0.0);
        let p = vec![with_iou(0.52); 8];
        assert!((iou(&p[0], &gt[0]) - 0.52).abs() < 1e-12);
        assert!((success_auc(&p, &gt).unwrap() - 11.0 / 21.0).abs() < 1e-12);
    }

    #[test]
    fn precision_examples() {
        let gt = vec![bb(0.0, 0.0, 10.0, 10.0); 6];
        assert_eq!(precision_at(&gt, &gt, 20.0).unwrap(), 1.0);
        let shifted = vec![bb(21.0, 0.0, 10.0, 10.0); 6];
        assert_eq!(precision_at(&shifted, &gt, 20.0).unwrap(), 0.0);
        let half: Vec<BBox> = (0..6).map(|i| if i % 2 == 0 { gt[i] } else { shifted[i] }).collect();
        assert_eq!(precision_at(&half, &gt, 20.0).unwrap(), 0.5);
        let edge = vec![bb(20.0, 0.0, 10.0, 10.0); 6];
        assert_eq!(precision_at(&edge, &gt, 20.0).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch() {
        let a = vec![bb(0.0, 0.0, 1.0, 1.0); 3];
        assert!(matches!(success_auc(&a, &a[..2]), Err(Error::LengthMismatch(3, 2))));
        assert!(matches!(precision_at(&a[..1], &a, 20.0), Err(Error::LengthMismatch(1, 3))));
    }

    #[test]
    fn empty_split_is_an_error() {
        let spec = BenchmarkSpec {
            policies: integrator::registry(),
            seeds: vec![0],
            noise: NoiseProfile::default(),
            tracker: TrackerConfig::default(),
            include_ambiguous: false,
        };
        assert!(matches!(run_benchmark(&[], &spec, None, ""), Err(Error::EmptyTestSplit)));
    }

    #[test]
    fn svg_is_well_formed() {
        let row = PolicyRow {
            policy: "x".into(),
            success_auc: 0.5,
            precision_at_20: 0.5,
            mean_reground_interval: 3.0,
            n_videos: 1,
            success_curve: vec![0.5; SUCCESS_STEPS],
            precision_curve: vec![0.5; PRECISION_CURVE_MAX + 1],
        };
        let s = success_svg(std::slice::from_ref(&row));
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<polyline").count(), 1);
    }

    fn arb_pairs() -> impl Strategy<Value = Vec<(BBox, BBox)>> {
        let b = (0.0f64..100.0, 0.0f64..100.0, 1.0f64..40.0, 1.0f64..40.0).prop_map(|(x, y, w, h)| bb(x, y, w, h));
        prop::collection::vec((b.clone(), b), 1..40)
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_invariant(pairs in arb_pairs(), rot in 0usize..40) {
            let (p, g): (Vec<BBox>, Vec<BBox>) = pairs.iter().cloned().unzip();
            let k = rot % p.len();
            let mut p2 = p.clone();
            let mut g2 = g.clone();
            p2.rotate_left(k);
            g2.rotate_left(k);
            p2.reverse();
            g2.reverse();
            prop_assert!((success_auc(&p, &g).unwrap() - success_auc(&p2, &g2).unwrap()).abs() < 1e-12);
            prop_assert_eq!(precision_at(&p, &g, 20.0).unwrap(), precision_at(&p2, &g2, 20.0).unwrap());
        }

        #[test]
        fn auc_matches_recount(pairs in arb_pairs()) {
            let (p, g): (Vec<BBox>, Vec<BBox>) = pairs.iter().cloned().unzip();
            let mut hits = 0usize;
            for i in 0..=20 {
                let tau = i as f64 * 0.05;
                for (a, b) in p.iter().zip(&g) {
                    if iou(a, b) > tau {
                        hits += 1;
                    }
                }
            }
            let expected = hits as f64 / (21 * p.len()) as f64;
            prop_assert!((success_auc(&p, &g).unwrap() - expected).abs() < 1e-12);
            let a = success_auc(&p, &g).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
