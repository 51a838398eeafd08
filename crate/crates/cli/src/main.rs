use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sparsemo::datagen::{generate_corpus, generate_motion, label_contacts, CorpusConfig, Dataset, MotionKind, MotionParams, DATASET_MAGIC};
use sparsemo::diffusion::{Checkpoint, DenoiserParams, DiffusionSchedule, ModelSize, TrainConfig, Trainer, DEFAULT_STEPS};
use sparsemo::eval::{bench, compute_metrics, motion_from_records, sweep_configs, MetricsReport, Objective, TrialReport};
use sparsemo::features::{Normalizer, SensorConfig};
use sparsemo::inference::{
    read_input_records, read_output_records, reconstruct_trial, simulate_stream, trial_measurements,
    write_records, OutputRecord, RawFrame, Reconstructor, SessionConfig, StepSpread, StreamIngest,
};
use sparsemo::kinematics::KinematicTree;
use sparsemo::numerics::AdamConfig;

#[derive(Parser)]
#[command(name = "sparsemo", version, about = "Whole-body motion from sparse inertial sensors and insoles")]
struct Cli {
    /// Skeleton definition (TOML); defaults to the bundled 24-segment tree.
    #[arg(long, global = true)]
    skeleton: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Skeleton tooling.
    Skeleton {
        #[command(subcommand)]
        cmd: SkeletonCmd,
    },
    /// Generate a procedural training/evaluation corpus.
    Datagen(DatagenArgs),
    /// Write the 60 Hz sensor stream of one procedural motion as NDJSON.
    Simulate(SimulateArgs),
    /// Train a denoiser on a corpus.
    Train(TrainArgs),
    /// Reconstruct motion from a dataset trial or an NDJSON sensor stream.
    Reconstruct(ReconstructArgs),
    /// Score a reconstruction against a dataset trial.
    Evaluate(EvaluateArgs),
    /// Compare sensor configurations on a corpus.
    Sweep(SweepArgs),
    /// Per-frame latency of the reconstruction loop.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum SkeletonCmd {
    /// Parse and check a skeleton file.
    Validate { file: PathBuf },
}

#[derive(Args)]
struct DatagenArgs {
    /// Comma-separated motion kinds (gait, random_smooth, stationary, jump).
    #[arg(long, default_value = "gait,random_smooth,stationary,jump")]
    kinds: String,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 30.0)]
    seconds: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of additive acceleration noise, m/s².
    #[arg(long, default_value_t = 0.0)]
    acc_noise: f64,
    #[arg(long)]
    out: PathBuf,
    /// Write the lossless JSON form instead of the binary container.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "gait")]
    kind: String,
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also emit insole contact labels.
    #[arg(long)]
    insoles: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// `toy`, `full` or `L/d/f`.
    #[arg(long, default_value = "toy")]
    size: String,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Diffusion steps T.
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    diffusion_steps: usize,
    #[arg(long, default_value_t = 50)]
    log_every: usize,
    /// Write the per-step loss curve as JSON.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SessionArgs {
    /// Spread name (10A–10D), step count, or explicit list `1000/850/…/0`.
    #[arg(long, default_value = "30")]
    spread: String,
    #[arg(long, default_value = "renoise")]
    sampler: String,
    #[arg(long)]
    no_root_correction: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Sensor sites (names or presets: all, six, shanks, wrists, none), plus `insoles`.
    #[arg(long, default_value = "six")]
    config: String,
    #[command(flatten)]
    session: SessionArgs,
    /// Dataset file, NDJSON stream file, or `-` for stdin.
    #[arg(long = "in")]
    input: String,
    /// Trial index when reading a dataset.
    #[arg(long, default_value_t = 0)]
    trial: usize,
    /// Subject height in meters (required for streams).
    #[arg(long)]
    height: Option<f64>,
    /// Output NDJSON file or `-` for stdout.
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Ground-truth dataset.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0)]
    trial: usize,
    /// Reconstruction NDJSON.
    #[arg(long)]
    rec: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Semicolon-separated configurations, e.g. `all;six;shanks,insoles`.
    #[arg(long, default_value = "all;six;shanks")]
    configs: String,
    #[arg(long, default_value = "ga,legs_la,back_la,re10")]
    objectives: String,
    #[command(flatten)]
    session: SessionArgs,
    /// Evaluate only the first N trials.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Checkpoint to time; without it a freshly initialized model of `--size` is used.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value = "toy")]
    size: String,
    #[arg(long, default_value = "30")]
    spread: String,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value = "six")]
    config: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_tree(path: &Option<PathBuf>) -> anyhow::Result<KinematicTree> {
    Ok(match path {
        Some(p) => KinematicTree::from_file(p).with_context(|| format!("loading skeleton {}", p.display()))?,
        None => KinematicTree::default_tree(),
    })
}

fn open_out(path: &str) -> anyhow::Result<Box<dyn Write>> {
    Ok(if path == "-" {
        Box::new(BufWriter::new(std::io::stdout()))
    } else {
        Box::new(BufWriter::new(File::create(path).with_context(|| format!("creating {path}"))?))
    })
}

fn write_json(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(path: &Path, tree: &KinematicTree) -> anyhow::Result<Dataset> {
    let mut head = [0u8; 8];
    let n = File::open(path).with_context(|| format!("opening {}", path.display()))?.read(&mut head)?;
    let d = if n == 8 && &head == DATASET_MAGIC {
        Dataset::load(path)?
    } else {
        Dataset::from_json(&std::fs::read_to_string(path)?)?
    };
    d.check(tree)?;
    Ok(d)
}

fn session(args: &SessionArgs, sensors: SensorConfig, height: f64, t_max: usize) -> anyhow::Result<SessionConfig> {
    let mut s = SessionConfig::new(sensors, height, t_max)?;
    s.spread = StepSpread::parse(&args.spread, t_max)?;
    s.sampler = args.sampler.parse()?;
    s.root_correction = !args.no_root_correction;
    s.seed = args.seed;
    Ok(s)
}

fn cmd_datagen(tree: &KinematicTree, a: DatagenArgs) -> anyhow::Result<()> {
    let kinds = a.kinds.split(',').map(|k| k.trim().parse::<MotionKind>()).collect::<Result<Vec<_>, _>>()?;
    let cfg = CorpusConfig { kinds, trials: a.trials, seconds: a.seconds, seed: a.seed, acc_noise: a.acc_noise };
    let d = generate_corpus(&cfg, tree)?;
    if a.json {
        write_json(&a.out, &d.to_json()?)?;
    } else {
        d.save(&a.out)?;
    }
    let frames: usize = d.trials.iter().map(|t| t.len()).sum();
    println!("{}", json!({"trials": d.trials.len(), "frames": frames, "out": a.out}));
    eprintln!("wrote {} trials ({frames} frames at 20 Hz) to {}", d.trials.len(), a.out.display());
    Ok(())
}

fn cmd_simulate(tree: &KinematicTree, a: SimulateArgs) -> anyhow::Result<()> {
    use rand::SeedableRng;
    let kind: MotionKind = a.kind.parse()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let params = MotionParams::random(kind, a.seconds, &mut rng);
    let motion = generate_motion(&params, tree, a.seed)?.motion;
    let contacts = if a.insoles { Some(label_contacts_60(&motion, tree)?) } else { None };
    let frames = simulate_stream(&motion, tree, contacts.as_deref())?;
    let records: Vec<_> = frames.iter().map(|f| f.to_record(tree)).collect();
    let mut w = BufWriter::new(File::create(&a.out)?);
    write_records(&mut w, &records)?;
    w.flush()?;
    println!("{}", json!({"frames": records.len(), "height": motion.height, "out": a.out}));
    eprintln!("wrote {} frames at 60 Hz, subject height {:.3} m", records.len(), motion.height);
    Ok(())
}

/// Contact labels at every 60 Hz frame (insole stream), nearest 20 Hz label.
fn label_contacts_60(motion: &sparsemo::datagen::MotionSequence, tree: &KinematicTree) -> anyhow::Result<Vec<[f64; 4]>> {
    let labels = label_contacts(motion, tree)?;
    let first = sparsemo::datagen::first_instant();
    Ok((0..motion.len())
        .map(|k| {
            let i = (k.saturating_sub(first) + 1) / 3;
            labels[i.min(labels.len() - 1)]
        })
        .collect())
}

fn cmd_train(tree: &KinematicTree, a: TrainArgs) -> anyhow::Result<()> {
    let d = load_dataset(&a.data, tree)?;
    let corpus = d.features(tree)?;
    let weights: Vec<f64> = d.trials.iter().map(|t| t.probability).collect();
    let cfg = TrainConfig {
        size: a.size.parse()?,
        steps: a.steps,
        batch: a.batch,
        adam: AdamConfig { lr: a.lr, ..AdamConfig::default() },
        seed: a.seed,
        schedule_steps: a.diffusion_steps,
        log_every: a.log_every,
        ..TrainConfig::default()
    };
    let started = std::time::Instant::now();
    let mut t = Trainer::<f32>::new(&corpus, &weights, tree, cfg)?;
    t.run(a.steps)?;
    let ckpt = t.checkpoint(tree);
    ckpt.save(&a.out)?;
    if let Some(p) = &a.curve {
        write_json(p, &serde_json::to_string(&t.curve)?)?;
    }
    let last = t.curve.last().map(|l| l.total).unwrap_or(f64::NAN);
    println!(
        "{}",
        json!({"steps": a.steps, "size": ckpt.params.size.to_string(), "params": ckpt.params.count(), "final_loss": last,
               "seconds": started.elapsed().as_secs_f64(), "out": a.out})
    );
    eprintln!("trained {} parameters for {} steps, final loss {last:.4}", ckpt.params.count(), a.steps);
    Ok(())
}

fn is_dataset(path: &str) -> bool {
    let mut head = [0u8; 8];
    path != "-" && File::open(path).and_then(|mut f| f.read_exact(&mut head)).is_ok() && &head == DATASET_MAGIC
}

fn cmd_reconstruct(tree: &KinematicTree, a: ReconstructArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::<f32>::load_for(&a.ckpt, tree)?;
    let sensors = SensorConfig::parse(&a.config, tree)?;
    let t_max = ckpt.schedule.steps;
    let mut out = open_out(&a.out)?;
    let mut frames = 0usize;
    let mut latency = Vec::new();
    if is_dataset(&a.input) {
        let d = load_dataset(Path::new(&a.input), tree)?;
        let trial = d.trials.get(a.trial).with_context(|| format!("dataset has {} trials", d.trials.len()))?;
        let s = session(&a.session, sensors, a.height.unwrap_or(trial.motion.height), t_max)?;
        for f in reconstruct_trial(&ckpt, tree, trial, &s)? {
            write_records(&mut out, &[f.to_record()])?;
            latency.push(f.latency_ms);
            frames += 1;
        }
    } else {
        let Some(height) = a.height else { bail!(UsageError("--height is required for stream input".into())) };
        let reader: Box<dyn BufRead> = if a.input == "-" {
            Box::new(BufReader::new(std::io::stdin()))
        } else {
            Box::new(BufReader::new(File::open(&a.input).with_context(|| format!("opening {}", a.input))?))
        };
        let s = session(&a.session, sensors, height, t_max)?;
        let mut r = Reconstructor::new(ckpt, tree, s)?;
        let mut ingest = StreamIngest::new(sensors);
        for rec in read_input_records(reader)? {
            let raw = RawFrame::from_record(&rec, tree)?;
            if let Some(m) = ingest.push(raw) {
                let f = r.step(&m.measurement, m.t_ms)?;
                write_records(&mut out, &[f.to_record()])?;
                latency.push(f.latency_ms);
                frames += 1;
            }
        }
        if ingest.dropped > 0 {
            eprintln!("dropped {} out-of-order frames", ingest.dropped);
        }
    }
    out.flush()?;
    latency.sort_by(f64::total_cmp);
    let p95 = sparsemo::eval::percentile(&latency, 95.0);
    eprintln!("reconstructed {frames} frames, p95 latency {p95:.2} ms");
    Ok(())
}

fn cmd_evaluate(tree: &KinematicTree, a: EvaluateArgs) -> anyhow::Result<()> {
    let d = load_dataset(&a.gt, tree)?;
    let trial = d.trials.get(a.trial).with_context(|| format!("dataset has {} trials", d.trials.len()))?;
    let records: Vec<OutputRecord> = read_output_records(BufReader::new(File::open(&a.rec)?))?;
    let rec = motion_from_records(&records, tree, trial.motion.height, trial.motion.mass, trial.motion.trial_id)?;
    let metrics = compute_metrics(&trial.motion, &rec, tree)?;
    let report = MetricsReport::new(vec![TrialReport { trial_id: trial.motion.trial_id, config: "reconstruction".into(), metrics }]);
    let text = report.to_json()?;
    match &a.out {
        Some(p) => write_json(p, &text)?,
        None => println!("{text}"),
    }
    eprintln!("{}", report.summary());
    Ok(())
}

fn cmd_sweep(tree: &KinematicTree, a: SweepArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::<f32>::load_for(&a.ckpt, tree)?;
    let d = load_dataset(&a.data, tree)?;
    let trials = &d.trials[..a.trials.unwrap_or(d.trials.len()).min(d.trials.len())];
    let configs = a.configs.split(';').filter(|c| !c.trim().is_empty()).map(|c| SensorConfig::parse(c, tree)).collect::<Result<Vec<_>, _>>()?;
    let objectives = a.objectives.split(',').map(|o| o.parse::<Objective>()).collect::<Result<Vec<_>, _>>()?;
    let base = session(&a.session, SensorConfig::empty(), 1.7, ckpt.schedule.steps)?;
    let result = sweep_configs(&ckpt, tree, trials, &configs, &objectives, &base)?;
    let text = result.to_json()?;
    match &a.out {
        Some(p) => write_json(p, &text)?,
        None => println!("{text}"),
    }
    eprint!("{}", result.table());
    Ok(())
}

fn cmd_bench(tree: &KinematicTree, a: BenchArgs) -> anyhow::Result<()> {
    let ckpt = match &a.ckpt {
        Some(p) => Checkpoint::<f32>::load_for(p, tree)?,
        None => {
            let size: ModelSize = a.size.parse()?;
            Checkpoint::new(DenoiserParams::init(size, 0)?, DiffusionSchedule::cosine(DEFAULT_STEPS)?, Normalizer::default(), tree)
        }
    };
    let sensors = SensorConfig::parse(&a.config, tree)?;
    let cfg = CorpusConfig { trials: 1, seconds: (a.frames as f64 / 20.0 + 1.0).min(30.0), ..CorpusConfig::default() };
    let trial = sparsemo::datagen::generate_trial(&cfg, 0, tree)?.0;
    let mut s = SessionConfig::new(sensors, trial.motion.height, ckpt.schedule.steps)?;
    s.spread = StepSpread::parse(&a.spread, ckpt.schedule.steps)?;
    let report = bench(&ckpt, tree, &s, &trial_measurements(&trial, &sensors), a.frames)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => write_json(p, &text)?,
        None => println!("{text}"),
    }
    eprintln!(
        "size {}  spread {} steps  {} frames: p50 {:.2} ms  p95 {:.2} ms  (budget {:.0} ms)",
        report.size,
        report.spread_len,
        report.frames,
        report.p50_ms,
        report.p95_ms,
        sparsemo::eval::p95_budget_ms()
    );
    Ok(())
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit status per failure category; 2 is reserved for usage errors.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.chain().find_map(|c| c.downcast_ref::<sparsemo::Error>()).map(|e| e.category()) {
        Some("contract") => 3,
        Some("numerical") => 4,
        Some("format") => 5,
        Some("io") => 6,
        _ if e.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some()) => 6,
        _ => 1,
    }
}

fn category(code: u8) -> &'static str {
    match code {
        2 => "usage",
        3 => "contract",
        4 => "numerical",
        5 => "format",
        6 => "io",
        _ => "error",
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let tree = load_tree(&cli.skeleton)?;
    match cli.cmd {
        Cmd::Skeleton { cmd: SkeletonCmd::Validate { file } } => {
            let t = KinematicTree::from_file(&file).with_context(|| format!("validating {}", file.display()))?;
            t.validate()?;
            println!(
                "{}",
                json!({"ok": true, "segments": t.len(), "sites": t.sites.len(), "contacts": t.contacts.len(),
                       "reference_height": t.reference_height, "hash": t.source_hash})
            );
            eprintln!("{}: {} segments, {} sites, {} contacts — ok", file.display(), t.len(), t.sites.len(), t.contacts.len());
            Ok(())
        }
        Cmd::Datagen(a) => cmd_datagen(&tree, a),
        Cmd::Simulate(a) => cmd_simulate(&tree, a),
        Cmd::Train(a) => cmd_train(&tree, a),
        Cmd::Reconstruct(a) => cmd_reconstruct(&tree, a),
        Cmd::Evaluate(a) => cmd_evaluate(&tree, a),
        Cmd::Sweep(a) => cmd_sweep(&tree, a),
        Cmd::Bench(a) => cmd_bench(&tree, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error [{}]: {e:#}", category(code));
            ExitCode::from(code)
        }
    }
}
