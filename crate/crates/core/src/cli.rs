//! Command-line front end. `gti <command>`; see `gti --help`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::evalharness::{self, BenchmarkSpec, MetricReport, TCache};
use crate::grounder;
use crate::integrator::{self, RunContext, ScoreSource, Scorer};
use crate::io;
use crate::rtscore::{self, ScoreModel, TrainingSample};
use crate::synthworld::{self, Split};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "gti", version, about = "Tracking by language: grounding, tracking, and their integration")]
pub struct Cli {
    /// Run configuration (JSON). Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Master seed.
    #[arg(long, global = true, env = "GTI_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen {
        /// Output directory; the dataset is written to `<out>/dataset.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_videos: Option<usize>,
    },
    /// Derive R/T training samples from the training split.
    DeriveScores {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the score model.
    Train {
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Run the benchmark on the test split.
    Run {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated policy names, or `all`.
        #[arg(long)]
        policies: Option<String>,
        /// Comma-separated run seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render success and precision plots from a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Per-frame log of one policy on one video.
    Trace {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        video: u64,
        /// Defaults to the video's first unambiguous query.
        #[arg(long)]
        query: Option<String>,
        #[arg(long, default_value = "ours-rt")]
        policy: String,
        /// Injected per-frame scores instead of a score source.
        #[arg(long, value_delimiter = ',')]
        scores: Option<Vec<f64>>,
        /// Only use the first N frames.
        #[arg(long)]
        frames: Option<usize>,
        /// Run seed for the grounder noise.
        #[arg(long, default_value_t = 0)]
        run_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write every frame as PPM into this directory.
        #[arg(long)]
        dump_frames: Option<PathBuf>,
    },
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn required(p: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.ok_or_else(|| Error::Config(format!("no {what} path given (flag or config)")))
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Some(Command::Gen { out, n_videos }) => {
            if let Some(n) = n_videos {
                cfg.gen.n_videos = *n;
            }
            if let Some(o) = out {
                cfg.dataset = Some(o.join("dataset.jsonl"));
            }
        }
        Some(Command::DeriveScores { dataset, out }) => {
            cfg.dataset = dataset.clone().or(cfg.dataset.take());
            cfg.samples = out.clone().or(cfg.samples.take());
        }
        Some(Command::Train { samples, out, epochs, lr, batch_size }) => {
            cfg.samples = samples.clone().or(cfg.samples.take());
            cfg.model = out.clone().or(cfg.model.take());
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(l) = lr {
                cfg.train.learning_rate = *l;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = *b;
            }
        }
        Some(Command::Run { dataset, model, policies, seeds, out }) => {
            cfg.dataset = dataset.clone().or(cfg.dataset.take());
            cfg.model = model.clone().or(cfg.model.take());
            cfg.output = out.clone().or(cfg.output.take());
            if let Some(p) = policies {
                cfg.policies = p.split(',').map(|s| s.trim().to_string()).collect();
            }
            if let Some(s) = seeds {
                cfg.seeds = s.clone();
            }
        }
        Some(Command::Trace { dataset, model, .. }) => {
            cfg.dataset = dataset.clone().or(cfg.dataset.take());
            cfg.model = model.clone().or(cfg.model.take());
        }
        Some(Command::Report { .. }) | None => {}
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, &cli);
    cfg.validate()?;
    if cli.print_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    match cli.command {
        None => Err(Error::Config("no command given; see --help".into())),
        Some(Command::Gen { .. }) => cmd_gen(&cfg),
        Some(Command::DeriveScores { .. }) => cmd_derive(&cfg),
        Some(Command::Train { .. }) => cmd_train(&cfg),
        Some(Command::Run { .. }) => cmd_run(&cfg),
        Some(Command::Report { run }) => cmd_report(&run),
        Some(Command::Trace { video, query, policy, scores, frames, run_seed, out, dump_frames, .. }) => {
            cmd_trace(&cfg, TraceArgs { video, query, policy, scores, frames, run_seed, out, dump_frames })
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn cmd_gen(cfg: &RunConfig) -> Result<()> {
    let path = required(cfg.dataset.clone(), "dataset output")?;
    let ds = synthworld::generate_dataset(&cfg.gen, cfg.seed)?;
    ensure_parent(&path)?;
    synthworld::write_dataset(&ds, &path)?;
    let n_test = ds.split(Split::Test).count();
    println!("{}", ds.header.config_digest);
    log::info!("wrote {} videos ({} test) to {}", ds.videos.len(), n_test, path.display());
    Ok(())
}

fn cmd_derive(cfg: &RunConfig) -> Result<()> {
    let input = required(cfg.dataset.clone(), "dataset")?;
    let out = required(cfg.samples.clone(), "samples output")?;
    let ds = synthworld::read_dataset(&input)?;
    let (samples, summary) = rtscore::collect_training_set(&ds.videos, &cfg.noise, &cfg.tracker)?;
    ensure_parent(&out)?;
    io::write_jsonl(&out, &samples)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let input = required(cfg.samples.clone(), "samples")?;
    let out = required(cfg.model.clone(), "model output")?;
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;
    let samples: Vec<TrainingSample> = io::read_jsonl(&input)?;
    let model = rtscore::train(&samples, &train_cfg)?;
    ensure_parent(&out)?;
    model.save(&out)?;
    println!("initial loss {:.6} final loss {:.6}", model.meta.initial_loss, model.meta.final_loss);
    Ok(())
}

fn load_model_for(cfg: &RunConfig, needed: bool) -> Result<Option<ScoreModel>> {
    match &cfg.model {
        Some(p) if needed || p.exists() => Ok(Some(ScoreModel::load(p)?)),
        _ => Ok(None),
    }
}

fn cmd_run(cfg: &RunConfig) -> Result<()> {
    let input = required(cfg.dataset.clone(), "dataset")?;
    let out = required(cfg.output.clone(), "output directory")?;
    let policies = cfg.policy_list()?;
    let needs_model = policies.iter().any(|p| p.score_source.needs_model() && p.uses_scores());
    let model = load_model_for(cfg, needs_model)?;
    let ds = synthworld::read_dataset(&input)?;
    let test: Vec<_> = ds.split(Split::Test).cloned().collect();
    let spec = BenchmarkSpec {
        policies,
        seeds: cfg.seeds.clone(),
        noise: cfg.noise,
        tracker: cfg.tracker.clone(),
        include_ambiguous: cfg.include_ambiguous,
    };
    let report = evalharness::run_benchmark(&test, &spec, model.as_ref(), &ds.header.config_digest)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    report.write_csv(&out.join("report.csv"))?;
    if cfg.include_ambiguous {
        report.write_ambiguous_csv(&out.join("ambiguous.csv"))?;
    }
    io::write_json(&out.join("report.json"), &report)?;
    print!("{}", evalharness::rows_csv(&report.rows));
    Ok(())
}

fn cmd_report(run: &Path) -> Result<()> {
    let report: MetricReport = io::read_json(&run.join("report.json"))?;
    let write = |name: &str, body: String| {
        let p = run.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("success.svg", evalharness::success_svg(&report.rows))?;
    write("precision.svg", evalharness::precision_svg(&report.rows))?;
    Ok(())
}

struct TraceArgs {
    video: u64,
    query: Option<String>,
    policy: String,
    scores: Option<Vec<f64>>,
    frames: Option<usize>,
    run_seed: u64,
    out: Option<PathBuf>,
    dump_frames: Option<PathBuf>,
}

fn cmd_trace(cfg: &RunConfig, args: TraceArgs) -> Result<()> {
    let input = required(cfg.dataset.clone(), "dataset")?;
    let ds = synthworld::read_dataset(&input)?;
    let rec = ds
        .videos
        .iter()
        .find(|v| v.video_id == args.video)
        .ok_or_else(|| Error::Data(format!("no video {} in {}", args.video, input.display())))?;
    let mut sample = rec.to_sample()?;
    let n = args.frames.or(args.scores.as_ref().map(Vec::len)).unwrap_or(sample.n_frames());
    if n == 0 || n > sample.n_frames() {
        return Err(Error::Config(format!("video {} has {} frames, asked for {n}", args.video, sample.n_frames())));
    }
    sample = sample.truncated(n)?;
    let query = match args.query {
        Some(q) => q,
        None => sample
            .unambiguous_queries()
            .next()
            .map(|q| q.text.clone())
            .ok_or_else(|| Error::Data(format!("video {} has no unambiguous query", args.video)))?,
    };
    let policy = integrator::policy_by_name(&args.policy)?;
    let model = load_model_for(cfg, args.scores.is_none() && policy.score_source.needs_model() && policy.uses_scores())?;

    let frames = sample.frames();
    if let Some(dir) = &args.dump_frames {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, f) in frames.iter().enumerate() {
            let p = dir.join(format!("frame_{i:05}.ppm"));
            let file = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            f.write_ppm(std::io::BufWriter::new(file)).map_err(|e| Error::io(&p, e))?;
        }
    }
    let constraints = crate::queries::parse(&query)?;
    let noise = cfg.noise.reseeded(args.run_seed);
    let groundings = frames
        .iter()
        .enumerate()
        .map(|(t, r)| grounder::ground_constraints(&sample, t, &constraints, &noise, r))
        .collect::<Result<Vec<_>>>()?;
    let cache = TCache::new(&frames, &sample.gt_tubelet, &cfg.tracker);
    let t_score = |k: usize| cache.get(k);
    let scorer = match (&args.scores, policy.score_source) {
        (Some(s), _) => Scorer::Injected(s),
        (None, ScoreSource::GroundingConfidence) => Scorer::Confidence,
        (None, src @ (ScoreSource::ROnly | ScoreSource::RtProduct)) => match &model {
            Some(m) => Scorer::Predicted { model: m, use_t: src == ScoreSource::RtProduct },
            None => return Err(Error::MissingModel(policy.name.clone())),
        },
        (None, src) => Scorer::Oracle { gt: &sample.gt_tubelet, t_score: &t_score, use_t: src == ScoreSource::OracleRt },
    };
    let ctx = RunContext { video_id: sample.video_id, seed: args.run_seed };
    let run = integrator::run_video(&frames, &groundings, &scorer, &policy, &cfg.tracker, ctx)?;
    match &args.out {
        Some(p) => {
            ensure_parent(p)?;
            io::write_jsonl(p, &run.frame_log)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for r in &run.frame_log {
                io::write_json_line(&mut w, r, Path::new("<stdout>"))?;
            }
            w.flush().map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}
