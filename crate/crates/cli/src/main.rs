use std::path::PathBuf;
use std::process::ExitCode;
use std::{env, fs};

use clap::{ArgGroup, Args, Parser, Subcommand};
use graphmind::config::parse_subjects;
use graphmind::data::{ingest, read_cache, synth, write_cache};
use graphmind::graph::{read_matrix_csv, CorrelationGraph};
use graphmind::pipeline::{
    evaluate_files, export_graph, fold_dir, matrix_to_tensor, plan_folds, read_split, run_cv, run_fold,
};
use graphmind::{Error, GraphSource, RunConfig, SplitMode};

#[derive(Parser)]
#[command(name = "graphmind", version, about = "Attention BiLSTM + GCN motor-imagery EEG classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode EDF recordings into a segment cache.
    Ingest(IngestArgs),
    /// Train both stages on one fold or on every fold.
    Train(TrainArgs),
    /// Recompute metrics from saved checkpoints.
    Eval(EvalArgs),
    /// Write the Pearson, absolute Pearson, adjacency and Laplacian matrices of a feature matrix.
    ExportGraph(ExportArgs),
    /// Write a synthetic dataset in the EEGMMIDB directory layout.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    data_root: PathBuf,
    /// Subject ids such as `1-20` or `1,4,7`.
    #[arg(long)]
    subjects: String,
    #[arg(long)]
    out: PathBuf,
    /// Ingest whatever runs exist instead of refusing.
    #[arg(long)]
    allow_missing: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("which").required(true).args(["fold", "cv"])))]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// 1-based fold to train.
    #[arg(long)]
    fold: Option<usize>,
    /// Train every fold and write a median summary.
    #[arg(long)]
    cv: bool,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep all segments of a trial in the same fold.
    #[arg(long)]
    split_by_trial: bool,
    /// Estimate the feature graph from every sample, test split included.
    #[arg(long)]
    graph_from_all: bool,
    /// Override any config key, e.g. `--set rnn.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint_rnn: PathBuf,
    #[arg(long)]
    checkpoint_gcn: PathBuf,
    /// Adjacency matrix CSV written by `train`.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    /// `train`, `test` or `all`.
    #[arg(long, default_value = "test")]
    split: String,
    /// Defaults to `split.csv` next to the stage-2 checkpoint.
    #[arg(long)]
    split_file: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "1")]
    subjects: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Peak amplitude of the task rhythms, µV.
    #[arg(long)]
    amplitude: Option<f64>,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Outcome = Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match env::var("GRAPHMIND_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("GRAPHMIND_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn subjects(list: &str) -> Result<Vec<u16>, Failure> {
    let s = parse_subjects(list).map_err(|e| Failure::Usage(e.to_string()))?;
    if s.is_empty() {
        return Err(Failure::Usage("subject list is empty".into()));
    }
    Ok(s)
}

fn cmd_ingest(a: IngestArgs) -> Outcome {
    let subjects = subjects(&a.subjects)?;
    let out = ingest(&a.data_root, &subjects, a.allow_missing)?;
    for p in &out.missing {
        eprintln!("missing: {}", p.display());
    }
    write_cache(&a.out, &out.segments)?;
    for (s, n) in &out.counts {
        println!("S{s:03}: {n} segments");
    }
    println!("total: {} segments -> {}", out.segments.len(), a.out.display());
    Ok(())
}

/// Defaults, then `GRAPHMIND_SEED`, then the config file, then flags.
fn resolve_config(a: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut c = RunConfig::default();
    if let Some(seed) = env_seed()? {
        c.seed = seed;
    }
    let mut problems = Vec::new();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        if let Err(e) = c.apply_text(&text) {
            problems.push(e.to_string());
        }
    }
    for o in &a.overrides {
        match o.split_once('=') {
            Some((k, v)) => {
                if let Err(e) = c.set(k, v) {
                    problems.push(format!("--set {o}: {e}"));
                }
            }
            None => problems.push(format!("--set {o}: expected KEY=VALUE")),
        }
    }
    if let Some(seed) = a.seed {
        c.seed = seed;
    }
    if let Some(p) = &a.cache {
        c.cache = p.clone();
    }
    if let Some(p) = &a.out {
        c.output = p.clone();
    }
    if a.split_by_trial {
        c.split = SplitMode::Trial;
    }
    if a.graph_from_all {
        c.graph = GraphSource::All;
    }
    problems.extend(c.problems());
    if let Some(k) = a.fold {
        if k == 0 || k > c.folds {
            problems.push(format!("--fold {k} outside 1..={}", c.folds));
        }
    }
    let top_level = ["config.txt", "summary.csv", "summary.txt"].map(|f| c.output.join(f));
    if top_level.contains(&c.cache) || (1..=c.folds).any(|k| c.cache.starts_with(fold_dir(&c.output, k))) {
        problems.push(format!("cache {} lies where train writes its outputs", c.cache.display()));
    }
    if problems.is_empty() {
        Ok(c)
    } else {
        Err(Failure::Usage(problems.join("\n")))
    }
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let config = resolve_config(&a)?;
    let segments = read_cache(&config.cache)?;
    let mut log = |m: &str| eprintln!("{m}");
    if a.cv {
        let outcomes = run_cv(&segments, &config, &mut log)?;
        println!("folds: {}", outcomes.len());
        println!("summary: {}", config.output.join("summary.txt").display());
    } else {
        let fold = a.fold.expect("clap requires --fold or --cv");
        let plan = plan_folds(&segments, &config)?;
        let dir = fold_dir(&config.output, fold);
        let outcome = run_fold(&segments, &plan, fold, &config, &dir, &mut log)?;
        println!("gaa: {}", outcome.report.metrics.gaa);
        println!("kappa: {}", outcome.report.metrics.kappa);
        println!("auc: {}", outcome.report.auc);
        println!("report: {}", dir.join("report.txt").display());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    let split_file = match a.split_file {
        Some(p) => p,
        None => a.checkpoint_gcn.with_file_name("split.csv"),
    };
    let inputs = [&a.checkpoint_rnn, &a.checkpoint_gcn, &a.graph, &a.cache, &split_file];
    for name in ["report.txt", "confusion.csv", "roc.csv", "metrics.csv"] {
        let target = a.out.join(name);
        if inputs.iter().any(|p| **p == target) {
            return Err(Failure::Usage(format!("{} is both an input and an output", target.display())));
        }
    }
    let indices = read_split(&split_file, &a.split).map_err(|e| match e {
        Error::Config(m) => Failure::Usage(m),
        other => Failure::Run(other),
    })?;
    let segments = read_cache(&a.cache)?;
    let report = evaluate_files(&a.checkpoint_rnn, &a.checkpoint_gcn, &a.graph, &segments, &indices)?;
    report.write_dir(&a.out)?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_export_graph(a: ExportArgs) -> Outcome {
    for name in ["pearson.csv", "abs_pearson.csv", "adjacency.csv", "laplacian.csv"] {
        if a.out_dir.join(name) == a.features {
            return Err(Failure::Usage(format!("{} is both an input and an output", a.features.display())));
        }
    }
    let features = matrix_to_tensor(&read_matrix_csv(&a.features)?);
    let graph = CorrelationGraph::from_features(&features)?;
    export_graph(&graph, &a.out_dir)?;
    println!("nodes: {}", graph.nodes());
    println!("lambda_max: {}", graph.lambda_max);
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Outcome {
    let subjects = subjects(&a.subjects)?;
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let mut config = synth::SynthConfig::default();
    if let Some(amp) = a.amplitude {
        config.amplitude = amp;
    }
    let files = synth::write_synthetic_dataset(&a.out, &subjects, seed, &config)?;
    println!("wrote {} recordings under {}", files.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportGraph(a) => cmd_export_graph(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
