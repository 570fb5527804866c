//! `simfuzz` command-line front end.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use simfuzz::features::TensorConfig;
use simfuzz::ga::Variant;
use simfuzz::harness::{
    generate_training_corpus, replay, write_report, Campaign, CampaignConfig, CampaignReport, ModelBundle, Recording, ReportFormat,
    TrainingCorpus, REPORT_FILE,
};
use simfuzz::map::{bundled, LaneMap};
use simfuzz::sdc::{train_lr, LrConfig};
use simfuzz::vpm::{self, TrainConfig, VpmConfig, VpmPredictor};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const CORPUS_FILE: &str = "corpus.json";

#[derive(Parser)]
#[command(name = "simfuzz", version, about = "Simulation-feedback scenario fuzzer for driving agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fuzzing campaign.
    Fuzz(FuzzArgs),
    /// Label random scenarios by simulation for model training.
    GenCorpus(GenCorpusArgs),
    /// Train the violation prediction model on a corpus.
    TrainVpm(TrainVpmArgs),
    /// Train the road-feature logistic regression on a corpus.
    TrainSdc(TrainSdcArgs),
    /// Re-execute a recording.
    Replay(ReplayArgs),
    /// Render a campaign report.
    Report(ReportArgs),
}

#[derive(Args)]
struct FuzzArgs {
    /// Campaign configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Agent profile under test.
    #[arg(long)]
    agent: Option<String>,
    /// Selection and mutation variant, e.g. VS+D.
    #[arg(long)]
    variant: Option<Variant>,
    /// Generation budget.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for recordings, checkpoint and report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Map file or bundled map name.
    #[arg(long)]
    map: Option<String>,
    /// Model bundles used by the fitness function.
    #[arg(long)]
    models: Vec<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    wall_clock: Option<f64>,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "corpus")]
    out: PathBuf,
    #[arg(long, default_value = "town")]
    map: String,
    #[arg(long, default_value = "blindspot")]
    agent: String,
    #[arg(long, default_value_t = 120.0)]
    max_duration: f64,
    /// Resampled trace length of the temporal tensor.
    #[arg(long, default_value_t = 240)]
    t_fixed: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainVpmArgs {
    /// Corpus directory or file.
    #[arg(long)]
    corpus: PathBuf,
    /// Model bundle to write; an existing bundle keeps its other models.
    #[arg(long)]
    out: PathBuf,
    /// Use the reduced architecture.
    #[arg(long)]
    compact: bool,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainSdcArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    l2: Option<f64>,
}

#[derive(Args)]
struct ReplayArgs {
    recording: PathBuf,
    /// Require the re-execution to match the stored trace.
    #[arg(long)]
    verify: bool,
    /// Map file or bundled map name; bundled maps are matched by hash otherwise.
    #[arg(long)]
    map: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Campaign output directory or report file.
    dir: PathBuf,
    #[arg(long, default_value = "json")]
    format: String,
    /// Destination directory; defaults to the campaign directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_map(spec: &str) -> anyhow::Result<LaneMap> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(text) = bundled::by_name(spec) {
            return Ok(LaneMap::from_json(text)?);
        }
    }
    Ok(LaneMap::from_path(path)?)
}

fn map_for_hash(hash: &str) -> anyhow::Result<LaneMap> {
    for name in ["straight", "crossmap", "town"] {
        let map = LaneMap::from_json(bundled::by_name(name).unwrap())?;
        if map.hash() == hash {
            return Ok(map);
        }
    }
    Err(simfuzz::Error::Argument("recording map is not bundled; pass --map".into()).into())
}

fn load_corpus(path: &Path) -> anyhow::Result<TrainingCorpus> {
    let file = if path.is_dir() { path.join(CORPUS_FILE) } else { path.to_path_buf() };
    Ok(TrainingCorpus::load(&file)?)
}

fn load_bundle(path: &Path) -> anyhow::Result<ModelBundle> {
    Ok(if path.exists() { ModelBundle::load(path)? } else { ModelBundle::default() })
}

fn fuzz(args: FuzzArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => CampaignConfig::load(p)?,
        None => CampaignConfig::default(),
    };
    if let Some(a) = args.agent {
        cfg.agent = a;
    }
    if let Some(v) = args.variant {
        cfg.ga.variant = v;
    }
    if let Some(b) = args.budget {
        cfg.generations = b;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = args.out {
        cfg.out_dir = Some(o);
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if args.wall_clock.is_some() {
        cfg.wall_clock_s = args.wall_clock;
    }
    cfg.models.extend(args.models);
    let map = match (&args.map, cfg.map.as_os_str().is_empty()) {
        (Some(m), _) => load_map(m)?,
        (None, true) => bundled::town(),
        (None, false) => LaneMap::from_path(&cfg.map)?,
    };
    cfg.validate()?;
    let models = cfg.load_models()?.fitness_models();
    let report = Campaign::new(&map, cfg, models)?.run()?;
    println!(
        "{} on {}: {} generations, {} scenarios, {} unique violations, coverage {:.2}%",
        report.variant,
        report.agent,
        report.generations,
        report.records.len(),
        report.total_uv(),
        report.coverage_percent
    );
    Ok(())
}

fn gen_corpus(args: GenCorpusArgs) -> anyhow::Result<()> {
    if args.n == 0 {
        bail!(simfuzz::Error::Argument("--n must be positive".into()));
    }
    let map = load_map(&args.map)?;
    let tensor = TensorConfig { t_fixed: args.t_fixed, ..TensorConfig::default() };
    let corpus = generate_training_corpus(&map, &args.agent, args.n, args.max_duration, tensor, args.seed)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let file = args.out.join(CORPUS_FILE);
    corpus.save(&file)?;
    println!("{} samples, positive rate {:.3}, written to {}", corpus.samples.len(), corpus.positive_rate(), file.display());
    Ok(())
}

fn train_vpm(args: TrainVpmArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let model_cfg = if args.compact { VpmConfig::compact(&corpus.tensor) } else { VpmConfig::for_tensor(&corpus.tensor) };
    let mut train_cfg = TrainConfig { seed: args.seed, ..TrainConfig::default() };
    if let Some(e) = args.max_epochs {
        train_cfg.max_epochs = e;
    }
    let outcome = vpm::train(&corpus.tensors(), model_cfg, &train_cfg)?;
    let predictor = VpmPredictor::new(&outcome.model, corpus.tensor, corpus.norms.clone())?;
    let bundle = load_bundle(&args.out)?.merge(ModelBundle { vpm: Some(predictor), sdc: None });
    bundle.save(&args.out)?;
    println!(
        "trained {} epochs (best {}), validation accuracy {:.3}",
        outcome.epochs_run, outcome.best_epoch, outcome.validation_accuracy
    );
    Ok(())
}

fn train_sdc(args: TrainSdcArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let mut cfg = LrConfig::default();
    if let Some(l2) = args.l2 {
        cfg.l2 = l2;
    }
    let rows = corpus.road_rows();
    let model = train_lr(&rows, &cfg)?;
    let correct = rows.iter().filter(|(f, y)| (model.predict_unsafe(f) >= 0.5) == (*y >= 0.5)).count();
    let bundle = load_bundle(&args.out)?.merge(ModelBundle { vpm: None, sdc: Some(model) });
    bundle.save(&args.out)?;
    println!("training accuracy {:.3}", correct as f64 / rows.len().max(1) as f64);
    Ok(())
}

fn replay_cmd(args: ReplayArgs) -> anyhow::Result<()> {
    let rec = Recording::load(&args.recording)?;
    let map = match &args.map {
        Some(m) => load_map(m)?,
        None => map_for_hash(&rec.map_hash)?,
    };
    if args.verify && !rec.is_full() {
        log::warn!("scenario-only recording: nothing stored to verify against");
    }
    let trace = replay(&rec, &map, args.verify)?;
    println!(
        "{} ticks, termination {}, {} violations{}",
        trace.len(),
        trace.termination.label(),
        trace.violations.len(),
        if args.verify && rec.is_full() { ", verified" } else { "" }
    );
    for v in &trace.violations {
        println!("  {:?} at tick {}", v.kind, v.tick);
    }
    Ok(())
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    let format: ReportFormat = args.format.parse()?;
    let file = if args.dir.is_dir() { args.dir.join(REPORT_FILE) } else { args.dir.clone() };
    let report = CampaignReport::load(&file)?;
    let out = args.out.unwrap_or_else(|| file.parent().map(Path::to_path_buf).unwrap_or_default());
    for p in write_report(&report, format, &out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<simfuzz::Error>() {
        Some(simfuzz::Error::Integrity { .. }) => 3,
        Some(simfuzz::Error::Argument(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Fuzz(a) => fuzz(a),
        Command::GenCorpus(a) => gen_corpus(a),
        Command::TrainVpm(a) => train_vpm(a),
        Command::TrainSdc(a) => train_sdc(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
