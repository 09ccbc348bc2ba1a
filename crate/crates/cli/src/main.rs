//! Command-line front end: generate synthetic corpora, train a parser,
//! evaluate it, and parse single episodes.
//!
//! Exit codes: 0 on success, 1 on runtime failures (I/O, training aborts),
//! 2 on usage or configuration errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ontoparse::eval::{evaluate, EvalOptions};
use ontoparse::learning::{
    episode_reward, train, RewardKind, TrainConfig, TrainMode, METRICS_CSV_HEADER,
};
use ontoparse::memory::EpisodeRecord;
use ontoparse::model::{Dims, Model, Vocab};
use ontoparse::reader::{parse, ActionSource, ParseNn, ReaderConfig};
use ontoparse::reasoner::RuleSet;
use ontoparse::worldsim::{
    dynamic_rules, dynamic_schema, generate_dynamic, generate_report, report_rules,
    report_schema, DynConfig, ReportConfig,
};
use ontoparse::Schema;

/// Environment variable that, when set, overrides every `--seed` flag.
const SEED_ENV: &str = "OONP_SEED";

#[derive(Parser)]
#[command(
    name = "ontoparse",
    version,
    about = "Schema-driven document parsing: generate worlds, train, evaluate, parse",
    after_help = "The OONP_SEED environment variable overrides --seed everywhere."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a synthetic corpus and write it as JSONL plus schema/rules.
    Gen(GenArgs),
    /// Train a model on a JSONL corpus and save checkpoint + metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a JSONL corpus and print a JSON summary.
    Eval(EvalArgs),
    /// Greedy-parse one episode and print the resulting graph.
    Parse(ParseArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum World {
    /// Household stories where objects move around (stateful links).
    Dynamic,
    /// Incident reports with typed events and participants (static).
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Teacher forcing on derived reference actions.
    Sl,
    /// Sampled rollouts scored by the terminal reward.
    Rl,
    /// Forced reading, sampled update rounds, mixed objective.
    Mixed,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sl => TrainMode::Supervised,
            ModeArg::Rl => TrainMode::Reinforce,
            ModeArg::Mixed => TrainMode::Mixed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardArg {
    /// Link F1 scaled by object-count agreement (all-or-nothing structure).
    Structure,
    /// Fact-level micro-F1 (partial credit).
    Consistency,
}

impl From<RewardArg> for RewardKind {
    fn from(r: RewardArg) -> Self {
        match r {
            RewardArg::Structure => RewardKind::StructureMatch,
            RewardArg::Consistency => RewardKind::Consistency,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Which synthetic world to sample.
    #[arg(long, value_enum)]
    world: World,
    /// Number of episodes to generate.
    #[arg(long)]
    n: usize,
    /// Base seed; episode i draws from an independent stream of it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSONL path; `<stem>.schema.json` and `<stem>.rules.json`
    /// are written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Dynamic world: minimum sentences per episode.
    #[arg(long, default_value_t = 2)]
    min_sentences: usize,
    /// Dynamic world: maximum sentences per episode.
    #[arg(long, default_value_t = 10)]
    max_sentences: usize,
    /// Report world: minimum persons per report.
    #[arg(long, default_value_t = 1)]
    min_persons: usize,
    /// Report world: maximum persons per report.
    #[arg(long, default_value_t = 3)]
    max_persons: usize,
    /// Report world: minimum items per report.
    #[arg(long, default_value_t = 1)]
    min_items: usize,
    /// Report world: maximum items per report.
    #[arg(long, default_value_t = 3)]
    max_items: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Held-out corpus evaluated after every epoch (JSONL).
    #[arg(long)]
    heldout: PathBuf,
    /// Schema JSON; defaults to `<data stem>.schema.json`.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Rule set JSON; defaults to `<data stem>.rules.json`.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Sl)]
    mode: ModeArg,
    /// Weight of the reward-scaled term in mixed mode.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Base seed for init, shuffling and rollouts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = RewardArg::Structure)]
    reward: RewardArg,
    /// Filter candidate menus by annotation class hints.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    masking: bool,
    /// Fold rule consequences into the graph after every link edit.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    reasoner: bool,
    /// Cap on update rounds per milestone.
    #[arg(long, default_value_t = 8)]
    max_rounds: usize,
    /// Stop early once held-out action accuracy reaches this.
    #[arg(long)]
    early_stop_acc: Option<f64>,
    /// Stop early once held-out mean reward reaches this.
    #[arg(long)]
    early_stop_reward: Option<f64>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch metrics CSV; defaults to `<out stem>.metrics.csv`.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Warm-start from an existing checkpoint instead of a fresh model.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    model: PathBuf,
    /// Evaluation corpus (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Rule set JSON; defaults to `<data stem>.rules.json`.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RewardArg::Structure)]
    reward: RewardArg,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    masking: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    reasoner: bool,
    #[arg(long, default_value_t = 8)]
    max_rounds: usize,
    /// Also write the JSON summary to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    /// Checkpoint to parse with.
    #[arg(long)]
    model: PathBuf,
    /// Corpus holding the episode (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Zero-based episode index within the corpus.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Rule set JSON; defaults to `<data stem>.rules.json`.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    masking: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    reasoner: bool,
    #[arg(long, default_value_t = 8)]
    max_rounds: usize,
    /// Write the full decision trace as JSON to this path.
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// Provenance record written next to every checkpoint.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: String,
    revision: String,
    unix_time: u64,
    seed: u64,
    data: String,
    heldout: String,
    mode: String,
    lambda: f64,
    epochs_requested: usize,
    epochs_run: usize,
    stopped_early: bool,
    batch_size: usize,
    masking: bool,
    reasoner: bool,
    reward: String,
}

enum CliError {
    /// Bad flags, bad env, inconsistent ranges: exit 2.
    Usage(String),
    /// Everything that goes wrong while actually working: exit 1.
    Runtime(String),
}

impl From<ontoparse::Error> for CliError {
    fn from(e: ontoparse::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Gen(a) => run_gen(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Parse(a) => run_parse(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// `OONP_SEED` beats the flag when present; a malformed value is a usage
/// error rather than something to silently ignore.
fn resolve_seed(flag: u64) -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw.trim().parse().map_err(|_| {
            CliError::Usage(format!(
                "{SEED_ENV} must be an unsigned integer, got {raw:?}"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(flag),
        Err(e) => Err(CliError::Usage(format!("{SEED_ENV}: {e}"))),
    }
}

fn sibling(path: &Path, extension: &str) -> PathBuf {
    path.with_extension(extension)
}

fn load_schema(explicit: Option<&Path>, data: &Path) -> Result<Schema, CliError> {
    let path = explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sibling(data, "schema.json"));
    let text = fs::read_to_string(&path).map_err(|e| {
        CliError::Runtime(format!("cannot read schema {}: {e}", path.display()))
    })?;
    Ok(Schema::from_json(&text)?)
}

fn load_rules(explicit: Option<&Path>, data: &Path, schema: &Schema) -> Result<RuleSet, CliError> {
    let path = explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sibling(data, "rules.json"));
    let text = fs::read_to_string(&path).map_err(|e| {
        CliError::Runtime(format!("cannot read rules {}: {e}", path.display()))
    })?;
    let rules = RuleSet::from_json(&text)?;
    rules.validate_against(schema)?;
    Ok(rules)
}

fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn unix_time() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn run_gen(a: GenArgs) -> Result<(), CliError> {
    let seed = resolve_seed(a.seed)?;
    if a.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let (records, schema_json, rules_json) = match a.world {
        World::Dynamic => {
            if a.min_sentences < 1 || a.min_sentences > a.max_sentences {
                return Err(CliError::Usage(
                    "sentence range must satisfy 1 <= min <= max".into(),
                ));
            }
            let cfg = DynConfig {
                min_sentences: a.min_sentences,
                max_sentences: a.max_sentences,
            };
            (
                generate_dynamic(&cfg, a.n, seed),
                dynamic_schema().to_json(),
                dynamic_rules().to_json()?,
            )
        }
        World::Report => {
            if a.min_persons < 1
                || a.min_persons > a.max_persons
                || a.min_items < 1
                || a.min_items > a.max_items
            {
                return Err(CliError::Usage(
                    "person/item ranges must satisfy 1 <= min <= max".into(),
                ));
            }
            let cfg = ReportConfig {
                min_persons: a.min_persons,
                max_persons: a.max_persons,
                min_items: a.min_items,
                max_items: a.max_items,
            };
            (
                generate_report(&cfg, a.n, seed),
                report_schema().to_json(),
                report_rules().to_json()?,
            )
        }
    };
    if let Some(dir) = a.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    EpisodeRecord::write_jsonl(&a.out, &records)?;
    let schema_path = sibling(&a.out, "schema.json");
    let rules_path = sibling(&a.out, "rules.json");
    fs::write(&schema_path, schema_json)?;
    fs::write(&rules_path, rules_json)?;
    println!(
        "wrote {} episodes to {} (schema {}, rules {})",
        records.len(),
        a.out.display(),
        schema_path.display(),
        rules_path.display()
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<(), CliError> {
    let seed = resolve_seed(a.seed)?;
    if !(0.0..=f64::MAX).contains(&a.lambda) || !a.lambda.is_finite() {
        return Err(CliError::Usage("--lambda must be a finite non-negative number".into()));
    }
    if a.epochs == 0 || a.batch_size == 0 {
        return Err(CliError::Usage("--epochs and --batch-size must be positive".into()));
    }
    let records = EpisodeRecord::read_jsonl(&a.data)?;
    let heldout = EpisodeRecord::read_jsonl(&a.heldout)?;
    let schema = load_schema(a.schema.as_deref(), &a.data)?;
    let rules = load_rules(a.rules.as_deref(), &a.data, &schema)?;
    let mut model = match &a.init {
        Some(path) => {
            let model = Model::load(path)?;
            if model.schema.to_json() != schema.to_json() {
                return Err(CliError::Usage(format!(
                    "--init checkpoint {} was built for a different schema",
                    path.display()
                )));
            }
            model
        }
        None => {
            let vocab = Vocab::build(&records);
            Model::new(schema, vocab, Dims::default(), seed)?
        }
    };
    let cfg = TrainConfig {
        mode: a.mode.into(),
        lambda: a.lambda,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed,
        reward: a.reward.into(),
        use_reasoner: a.reasoner,
        masking: a.masking,
        max_rounds: a.max_rounds,
        early_stop_acc: a.early_stop_acc,
        early_stop_reward: a.early_stop_reward,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &rules, &records, &heldout, &cfg)?;
    if let Some(dir) = a.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    model.save(&a.out)?;
    let metrics_path = a
        .metrics
        .unwrap_or_else(|| sibling(&a.out, "metrics.csv"));
    fs::write(&metrics_path, report.to_csv())?;
    let manifest = RunManifest {
        command: "train".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        revision: git_revision(),
        unix_time: unix_time(),
        seed,
        data: a.data.display().to_string(),
        heldout: a.heldout.display().to_string(),
        mode: TrainMode::from(a.mode).name().into(),
        lambda: a.lambda,
        epochs_requested: a.epochs,
        epochs_run: report.epochs.len(),
        stopped_early: report.stopped_early,
        batch_size: a.batch_size,
        masking: a.masking,
        reasoner: a.reasoner,
        reward: match a.reward {
            RewardArg::Structure => "structure".into(),
            RewardArg::Consistency => "consistency".into(),
        },
    };
    let manifest_path = sibling(&a.out, "manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    println!("{METRICS_CSV_HEADER}");
    if let Some(last) = report.last() {
        println!("{}", last.csv_row());
    }
    println!(
        "saved checkpoint {} (metrics {}, manifest {})",
        a.out.display(),
        metrics_path.display(),
        manifest_path.display()
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<(), CliError> {
    let model = Model::load(&a.model)?;
    let records = EpisodeRecord::read_jsonl(&a.data)?;
    let rules = load_rules(a.rules.as_deref(), &a.data, &model.schema)?;
    let opts = EvalOptions {
        masking: a.masking,
        use_reasoner: a.reasoner,
        max_rounds: a.max_rounds,
        reward: a.reward.into(),
    };
    let summary = evaluate(&model, &rules, &records, &opts)?;
    let json = serde_json::to_string_pretty(&summary)?;
    if let Some(out) = &a.out {
        fs::write(out, &json)?;
    }
    println!("{json}");
    Ok(())
}

fn run_parse(a: ParseArgs) -> Result<(), CliError> {
    let model = Model::load(&a.model)?;
    let records = EpisodeRecord::read_jsonl(&a.data)?;
    let rules = load_rules(a.rules.as_deref(), &a.data, &model.schema)?;
    let rec = records.get(a.index).ok_or_else(|| {
        CliError::Usage(format!(
            "--index {} out of range: corpus has {} episodes",
            a.index,
            records.len()
        ))
    })?;
    let cfg = ReaderConfig {
        masking: a.masking,
        use_reasoner: a.reasoner,
        max_rounds: a.max_rounds,
        nn: ParseNn::Full,
        collect_loss: false,
    };
    let mut source = ActionSource::Greedy;
    let mut tape = ontoparse::nn::Tape::new();
    let out = parse(
        &model.schema,
        &rules,
        Some(&model),
        Some(&mut tape),
        rec,
        &cfg,
        &mut source,
    )?;
    if let Some(trace_path) = &a.trace {
        fs::write(trace_path, serde_json::to_string_pretty(&out.trace)?)?;
    }
    println!("{}", out.graph.canonical_json());
    let reward = episode_reward(
        RewardKind::StructureMatch,
        &model.schema,
        &out.graph,
        rec.final_snapshot()?,
    )?;
    eprintln!(
        "episode {}: {} decisions, structure score {reward:.4}",
        a.index, out.decisions
    );
    Ok(())
}
