//! Command-line front end for the BGP anomaly-detection pipeline.
//!
//! Every subcommand writes its artifacts atomically and drops a
//! `<artifact>.manifest.json` beside each one so a run can be reproduced
//! from the manifest alone. Exit codes: 0 success, 1 stage error
//! (message names the stage), 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use bgpscope_core::augment::{
    augment_series, fit_normalizer, normalize_windows, slice_windows_raw, NormalizerStats,
    StlConfig,
};
use bgpscope_core::error::Result;
use bgpscope_core::features::{
    bin_updates_with, read_series_csv, write_feature_csv, write_series_csv, EventLabelSpec,
    FeatureConfig, FeatureSeries, FlapDefinition,
};
use bgpscope_core::ingest::{
    merge_streams, parse_mrt_stream, parse_text_log, render_text_log, AddressFamily, IngestConfig,
};
use bgpscope_core::model::{load_checkpoint, save_checkpoint};
use bgpscope_core::pipeline::{
    ablate, holdout_event_run, multiclass_run, run_pipeline, sweep, write_atomic, AblationArm,
    PipelineConfig, RunManifest,
};
use bgpscope_core::synth::{synth_events, EventKind, SynthSpec};
use bgpscope_core::train::{attention_edges, average_attention, SplitConfig, TrainConfig};
use bgpscope_core::Error;

#[derive(Parser)]
#[command(name = "bgpscope", version, about = "BGP update anomaly detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Pipeline-stage parameters shared by the training-style subcommands.
#[derive(Args, Serialize, Clone)]
struct StageOpts {
    /// STL period (seasonal cycle length in minutes).
    #[arg(long, default_value_t = 35)]
    period: usize,
    /// Skip STL augmentation and train on the raw feature channels.
    #[arg(long, default_value_t = false)]
    no_stl: bool,
    /// Window length m.
    #[arg(long, default_value_t = 25)]
    window: usize,
    /// LSTM hidden size.
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Dropout rate on the fused sequence.
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    /// Maximum training epochs.
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Early-stop patience (epochs without validation-F1 improvement).
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// RNG seed for splitting, initialization, shuffling, and dropout.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Split chronologically instead of shuffled-stratified.
    #[arg(long, default_value_t = false)]
    chronological: bool,
}

impl StageOpts {
    fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            period: if self.no_stl { None } else { Some(self.period) },
            window: self.window,
            hidden: self.hidden,
            dropout: self.dropout,
            split: SplitConfig {
                chronological: self.chronological,
                stratified: !self.chronological,
                seed: self.seed,
                ..Default::default()
            },
            train: TrainConfig {
                lr: self.lr,
                max_epochs: self.epochs,
                batch_size: self.batch_size,
                patience: self.patience,
                seed: self.seed,
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Decode MRT dumps (or text logs) into a merged text update log.
    Ingest(IngestArgs),
    /// Compute the 46 per-minute features from an update log.
    Featurize(FeaturizeArgs),
    /// Expand a feature CSV to 5k channels via STL decomposition.
    Augment(AugmentArgs),
    /// Slice a series CSV into normalized, labeled windows.
    Window(WindowArgs),
    /// Train a detector and save its checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split of a series.
    Evaluate(EvaluateArgs),
    /// Train/evaluate once per ablation arm.
    Ablate(AblateArgs),
    /// Accuracy grid over window sizes and STL periods.
    Sweep(SweepArgs),
    /// Multi-class protocol over several event series.
    Multiclass(MulticlassArgs),
    /// Train on all but one event series, test on the held-out one.
    Holdout(HoldoutArgs),
    /// Generate a synthetic labeled feature series.
    Synth(SynthArgs),
    /// Export averaged attention graphs from a checkpoint.
    Attention(AttentionArgs),
    /// End-to-end: series CSV in, evaluation report out.
    Pipeline(PipelineArgs),
}

#[derive(Args, Serialize)]
struct IngestArgs {
    /// MRT files (gzip allowed); with --text, text update logs.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Inputs are text logs rather than MRT.
    #[arg(long, default_value_t = false)]
    text: bool,
    #[arg(long = "out")]
    out: PathBuf,
    /// Keep only these peer ASes.
    #[arg(long = "peer-as", num_args = 0..)]
    peer_as: Vec<u32>,
    /// Keep records with timestamp >= this (epoch seconds).
    #[arg(long)]
    start: Option<i64>,
    /// Keep records with timestamp < this.
    #[arg(long)]
    end: Option<i64>,
    /// Address family filter: any, v4, or v6.
    #[arg(long, default_value = "any")]
    family: String,
}

#[derive(Args, Serialize)]
struct FeaturizeArgs {
    /// Text update log.
    #[arg(long = "in")]
    input: PathBuf,
    /// Event label spec JSON: [{"event":1,"start":...,"end":...}].
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long = "out")]
    out: PathBuf,
    /// Rare-AS history threshold R.
    #[arg(long, default_value_t = 5)]
    rare_threshold: u64,
    /// Flap definition: duplicate or rewithdraw.
    #[arg(long, default_value = "duplicate")]
    flap: String,
}

#[derive(Args, Serialize)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 35)]
    period: usize,
    #[arg(long = "out")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct WindowArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Window length m.
    #[arg(long, default_value_t = 25)]
    size: usize,
    #[arg(long = "out")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Feature or augmented series CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Checkpoint output path.
    #[arg(long = "out")]
    out: PathBuf,
    /// Normalizer statistics output (default: <out>.stats.json).
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Training log CSV output (epoch, train loss, validation F1).
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    stage: StageOpts,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Normalizer statistics from training (fitted on input when absent).
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long = "out")]
    out: PathBuf,
    #[command(flatten)]
    stage: StageOpts,
}

#[derive(Args, Serialize)]
struct AblateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Comma-separated arms; each arm is "full", "none", or a
    /// '+'-joined subset of feature_gat, temporal_gat, stl, window.
    #[arg(long, default_value = "full,window")]
    arms: String,
    #[arg(long = "out")]
    out: PathBuf,
    /// Parallel worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    stage: StageOpts,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Comma-separated window sizes.
    #[arg(long, default_value = "1,5,10,15,20,25")]
    windows: String,
    /// Comma-separated STL periods.
    #[arg(long, default_value = "25,35")]
    periods: String,
    #[arg(long = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    stage: StageOpts,
}

#[derive(Args, Serialize)]
struct MulticlassArgs {
    /// One labeled series CSV per event.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Minimum labeled rows each event must supply.
    #[arg(long, default_value_t = 600)]
    samples: usize,
    #[arg(long = "out")]
    out: PathBuf,
    /// Confusion-matrix CSV output.
    #[arg(long)]
    confusion: Option<PathBuf>,
    #[command(flatten)]
    stage: StageOpts,
}

#[derive(Args, Serialize)]
struct HoldoutArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Index of the held-out series.
    #[arg(long)]
    holdout: usize,
    #[arg(long = "out")]
    out: PathBuf,
    #[command(flatten)]
    stage: StageOpts,
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Event kind: worm, blackout, hijack, leak, flap, or pathshift.
    #[arg(long)]
    events: String,
    /// Number of one-minute rows.
    #[arg(long)]
    n: usize,
    /// Label id for the anomaly span.
    #[arg(long, default_value_t = 1)]
    event_id: u32,
    /// Anomaly span start row (default: 45% of n).
    #[arg(long)]
    start: Option<usize>,
    /// Anomaly span end row, exclusive (default: 55% of n).
    #[arg(long)]
    end: Option<usize>,
    /// Signature strength; 0 = null effect.
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "out")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct AttentionArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Edge threshold for the feature (channel) view.
    #[arg(long, default_value_t = 0.3)]
    feature_threshold: f64,
    /// Edge threshold for the temporal view.
    #[arg(long, default_value_t = 0.2)]
    temporal_threshold: f64,
    /// Feature-view edge list CSV.
    #[arg(long)]
    out_feature: PathBuf,
    /// Temporal-view edge list CSV.
    #[arg(long)]
    out_temporal: PathBuf,
    #[command(flatten)]
    stage: StageOpts,
}

#[derive(Args, Serialize)]
struct PipelineArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Evaluation report JSON output.
    #[arg(long = "out")]
    out: PathBuf,
    /// Also save the trained checkpoint here.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also save the training log CSV here.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    stage: StageOpts,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, result) = run(cli.command);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error in {}: {}", stage, e);
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> (&'static str, Result<()>) {
    match cmd {
        Command::Ingest(a) => ("ingest", cmd_ingest(a)),
        Command::Featurize(a) => ("featurize", cmd_featurize(a)),
        Command::Augment(a) => ("augment", cmd_augment(a)),
        Command::Window(a) => ("window", cmd_window(a)),
        Command::Train(a) => ("train", cmd_train(a)),
        Command::Evaluate(a) => ("evaluate", cmd_evaluate(a)),
        Command::Ablate(a) => ("ablate", cmd_ablate(a)),
        Command::Sweep(a) => ("sweep", cmd_sweep(a)),
        Command::Multiclass(a) => ("multiclass", cmd_multiclass(a)),
        Command::Holdout(a) => ("holdout", cmd_holdout(a)),
        Command::Synth(a) => ("synth", cmd_synth(a)),
        Command::Attention(a) => ("attention", cmd_attention(a)),
        Command::Pipeline(a) => ("pipeline", cmd_pipeline(a)),
    }
}

fn manifest_for<T: Serialize>(subcommand: &str, args: &T, seed: u64) -> RunManifest {
    let parameters = serde_json::to_value(args).expect("args serialize");
    RunManifest::new(subcommand, parameters, seed)
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let family = match a.family.as_str() {
        "any" => AddressFamily::Any,
        "v4" => AddressFamily::V4,
        "v6" => AddressFamily::V6,
        other => {
            return Err(Error::Config(format!(
                "unknown address family {:?}; expected any, v4, or v6",
                other
            )))
        }
    };
    let cfg = IngestConfig {
        peer_as_filter: if a.peer_as.is_empty() {
            None
        } else {
            Some(a.peer_as.clone())
        },
        start: a.start,
        end: a.end,
        family,
    };
    let mut streams = Vec::new();
    for path in &a.inputs {
        if a.text {
            streams.push(parse_text_log(&std::fs::read_to_string(path)?)?);
        } else {
            let bytes = std::fs::read(path)?;
            let (records, counters) = parse_mrt_stream(&bytes, &cfg)?;
            eprintln!(
                "{}: emitted {}, skipped {}, dropped {}",
                path.display(),
                counters.emitted,
                counters.skipped(),
                counters.dropped
            );
            streams.push(records);
        }
    }
    let merged = merge_streams(streams)?;
    write_atomic(&a.out, render_text_log(&merged).as_bytes())?;
    let mut manifest = manifest_for("ingest", &a, 0);
    manifest.inputs = a.inputs.iter().map(|p| p.display().to_string()).collect();
    manifest.outputs = vec![a.out.display().to_string()];
    manifest.write_beside(&a.out)
}

fn cmd_featurize(a: FeaturizeArgs) -> Result<()> {
    let records = parse_text_log(&std::fs::read_to_string(&a.input)?)?;
    let labels: EventLabelSpec = match &a.labels {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => EventLabelSpec::default(),
    };
    let flap = match a.flap.as_str() {
        "duplicate" => FlapDefinition::Duplicate,
        "rewithdraw" => FlapDefinition::ReAnnounceAfterWithdraw,
        other => {
            return Err(Error::Config(format!(
                "unknown flap definition {:?}; expected duplicate or rewithdraw",
                other
            )))
        }
    };
    let cfg = FeatureConfig {
        rare_threshold: a.rare_threshold,
        flap_definition: flap,
    };
    let series = bin_updates_with(&records, &labels, &cfg)?;
    write_feature_csv(&series, &a.out)?;
    let mut manifest = manifest_for("featurize", &a, 0);
    manifest.inputs = vec![a.input.display().to_string()];
    manifest.outputs = vec![a.out.display().to_string()];
    manifest.write_beside(&a.out)
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    let series = read_series_csv(&a.input, None)?;
    let aug = augment_series(&series, &StlConfig::new(a.period)?)?;
    write_series_csv(&aug, &a.out)?;
    let mut manifest = manifest_for("augment", &a, 0);
    manifest.inputs = vec![a.input.display().to_string()];
    manifest.outputs = vec![a.out.display().to_string()];
    manifest.write_beside(&a.out)
}

#[derive(Serialize, Deserialize)]
struct WindowsArtifact {
    window: usize,
    channels: usize,
    stats: NormalizerStats,
    samples: Vec<WindowRepr>,
}

#[derive(Serialize, Deserialize)]
struct WindowRepr {
    start: usize,
    label: u32,
    rows: Vec<Vec<f64>>,
}

fn cmd_window(a: WindowArgs) -> Result<()> {
    let series = read_series_csv(&a.input, None)?;
    let stats = fit_normalizer(&series.rows)?;
    let mut samples = slice_windows_raw(&series.rows, &series.labels, a.size)?;
    normalize_windows(&mut samples, &stats);
    let artifact = WindowsArtifact {
        window: a.size,
        channels: series.width(),
        stats,
        samples: samples
            .iter()
            .map(|s| WindowRepr {
                start: s.start,
                label: s.label,
                rows: (0..s.data.rows())
                    .map(|r| (0..s.data.cols()).map(|c| s.data.get(r, c)).collect())
                    .collect(),
            })
            .collect(),
    };
    write_atomic(&a.out, &serde_json::to_vec(&artifact)?)?;
    let mut manifest = manifest_for("window", &a, 0);
    manifest.inputs = vec![a.input.display().to_string()];
    manifest.outputs = vec![a.out.display().to_string()];
    manifest.write_beside(&a.out)
}

fn write_train_log(path: &PathBuf, log: &[bgpscope_core::train::TrainLogEntry]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_f1\n");
    for e in log {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_f1));
    }
    write_atomic(path, out.as_bytes())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let series = read_series_csv(&a.input, None)?;
    let cfg = a.stage.pipeline_config();
    let outcome = run_pipeline(&series, &cfg)?;
    save_checkpoint(&outcome.params, &a.out)?;
    let stats_path = a
        .stats
        .clone()
        .unwrap_or_else(|| a.out.with_extension("stats.json"));
    write_atomic(&stats_path, &serde_json::to_vec_pretty(&outcome.stats)?)?;
    if let Some(log_path) = &a.log {
        write_train_log(log_path, &outcome.log)?;
    }
    println!(
        "trained {} epochs, best val F1 {:.4}, test F1 {:.4}",
        outcome.log.len(),
        outcome.log.iter().map(|e| e.val_f1).fold(0.0, f64::max),
        outcome.report.f1
    );
    let seed = a.stage.seed;
    let mut manifest = manifest_for("train", &a, seed);
    manifest.inputs = vec![a.input.display().to_string()];
    manifest.outputs = vec![
        a.out.display().to_string(),
        stats_path.display().to_string(),
    ];
    manifest.write_beside(&a.out)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let series = read_series_csv(&a.input, None)?;
    let params = load_checkpoint(&a.model)?;
    let cfg = a.stage.pipeline_config();

    let mut windows = {
        let augmented;
        let source = match cfg.period {
            Some(p) => {
                augmented = augment_series(&series, &StlConfig::new(p)?)?;
                &augmented
            }
            None => &series,
        };
        slice_windows_raw(&source.rows, &source.labels, cfg.window)?
    };
    let stats: NormalizerStats = match &a.stats {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => {
            let rows: Vec<Vec<f64>> = windows
                .iter()
                .flat_map(|w| {
                    (0..w.data.rows()).map(move |r| {
                        (0..w.data.cols()).map(|c| w.data.get(r, c)).collect()
                    })
                })
                .collect();
            fit_normalizer(&rows)?
        }
    };
    normalize_windows(&mut windows, &stats);
    let (_, _, test_set) = bgpscope_core::train::split(&windows, &cfg.split)?;
    let (_, mut report) = bgpscope_core::train::evaluate(&params, &test_set)?;
    report.seed = a.stage.seed;
    write_atomic(&a.out, &serde_json::to_vec_pretty(&report)?)?;
    let seed = a.stage.seed;
    let mut manifest = manifest_for("evaluate", &a, seed);
    manifest.inputs = vec![
        a.input.display().to_string(),
        a.model.display().to_string(),
    ];
    manifest.outputs = vec![a.out.display().to_string()];
    manifest.write_beside(&a.out)
}

fn parse_arms(spec: &str) -> Result<Vec<AblationArm>> {
    let mut arms = Vec::new();
    for token in spec.split(',') {
        let token = token.trim();
        let arm = match token {
            "full" => AblationArm::FULL,
            "none" => AblationArm {
                feature_gat: false,
                temporal_gat: false,
                stl: false,
                window: false,
            },
            _ => {
                let mut arm = AblationArm {
                    feature_gat: false,
                    temporal_gat: false,
                    stl: false,
                    window: false,
                };
                for part in token.split('+') {
                    match part {
                        "feature_gat" => arm.feature_gat = true,
                        "temporal_gat" => arm.temporal_gat = true,
                        "stl" => arm.stl = true,
                        "window" => arm.window = true,
                        other => {
                            return Err(Error::Config(format!(
                                "unknown ablation toggle {:?}",
                                other
                            )))
                        }
                    }
                }
                arm
            }
        };
        arms.push(arm);
    }
    Ok(arms)
}

/// Run `f` over `items` with at most `jobs` worker threads, preserving
/// input order in the output.
fn fan_out<T, R, F>(items: Vec<T>, jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R> + Sync,
{
    let jobs = jobs.max(1);
    if jobs == 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let items: Vec<(usize, T)> = items.into_iter().enumerate().collect();
    let queue = std::sync::Mutex::new(items);
    let results = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|_| {
                scope.spawn(|| loop {
                    let next = queue.lock().expect("queue lock").pop();
                    match next {
                        Some((i, item)) => {
                            let r = f(item);
                            results.lock().expect("results lock").push((i, r));
                        }
                        None => break,
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().expect("worker panicked");
        }
    });
    let mut collected = results.into_inner().expect("results lock");
    collected.sort_by_key(|(i, _)| *i);
    collected.into_iter().map(|(_, r)| r).collect()
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let series = read_series_csv(&a.input, None)?;
    let arms = parse_arms(&a.arms)?;
    let base = a.stage.pipeline_config();
    let rows = fan_out(arms, a.jobs, |arm| {
        Ok(ablate(&series, &[arm], &base)?.remove(0))
    })?;
    let mut csv = String::from("arm,channels,window,accuracy,f1\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.arm, r.channels, r.window, r.accuracy, r.f1
        ));
    }
    write_atomic(&a.out, csv.as_bytes())?;
    let seed = a.stage.seed;
    let mut manifest = manifest_for("ablate", &a, seed);
    manifest.inputs = vec![a.input.display().to_string()];
    manifest.outputs = vec![a.out.display().to_string()];
    manifest.write_beside(&a.out)
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad {} value {:?}", what, t)))
        })
        .collect()
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let series = read_series_csv(&a.input, None)?;
    let windows = parse_usize_list(&a.windows, "window")?;
    let periods = parse_usize_list(&a.periods, "period")?;
    let base = a.stage.pipeline_config();
    let grid: Vec<(usize, usize)> = periods
        .iter()
        .flat_map(|&p| windows.iter().map(move |&m| (m, p)))
        .collect();
    let cells = fan_out(grid, a.jobs, |(m, p)| {
        Ok(sweep(&series, &[m], &[p], &base)?.remove(0))
    })?;
    let mut csv = String::from("window,period,accuracy,f1\n");
    for c in &cells {
        csv.push_str(&format!("{},{},{},{}\n", c.window, c.period, c.accuracy, c.f1));
    }
    write_atomic(&a.out, csv.as_bytes())?;
    let seed = a.stage.seed;
    let mut manifest = manifest_for("sweep", &a, seed);
    manifest.inputs = vec![a.input.display().to_string()];
    manifest.outputs = vec![a.out.display().to_string()];
    manifest.write_beside(&a.out)
}

fn read_many(paths: &[PathBuf]) -> Result<Vec<FeatureSeries>> {
    paths.iter().map(|p| read_series_csv(p, None)).collect()
}

fn cmd_multiclass(a: MulticlassArgs) -> Result<()> {
    let series = read_many(&a.inputs)?;
    let cfg = a.stage.pipeline_config();
    let outcome = multiclass_run(&series, a.samples, &cfg)?;
    write_atomic(&a.out, &serde_json::to_vec_pretty(&outcome.report)?)?;
    if let Some(confusion_path) = &a.confusion {
        let classes = outcome.confusion.classes;
        let mut csv = String::from("truth\\pred");
        for p in 0..classes {
            csv.push_str(&format!(",{}", p));
        }
        csv.push('\n');
        for t in 0..classes {
            csv.push_str(&t.to_string());
            for p in 0..classes {
                csv.push_str(&format!(",{}", outcome.confusion.count(t, p)));
            }
            csv.push('\n');
        }
        write_atomic(confusion_path, csv.as_bytes())?;
    }
    let seed = a.stage.seed;
    let mut manifest = manifest_for("multiclass", &a, seed);
    manifest.inputs = a.inputs.iter().map(|p| p.display().to_string()).collect();
    manifest.outputs = vec![a.out.display().to_string()];
    manifest.write_beside(&a.out)
}

fn cmd_holdout(a: HoldoutArgs) -> Result<()> {
    let series = read_many(&a.inputs)?;
    let cfg = a.stage.pipeline_config();
    let (_, report) = holdout_event_run(&series, a.holdout, &cfg)?;
    write_atomic(&a.out, &serde_json::to_vec_pretty(&report)?)?;
    let seed = a.stage.seed;
    let mut manifest = manifest_for("holdout", &a, seed);
    manifest.inputs = a.inputs.iter().map(|p| p.display().to_string()).collect();
    manifest.outputs = vec![a.out.display().to_string()];
    manifest.write_beside(&a.out)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let kind = EventKind::from_name(&a.events)?;
    let mut spec = SynthSpec::new(a.event_id, kind, a.n, a.seed);
    if let Some(s) = a.start {
        spec.anomaly_start = s;
    }
    if let Some(e) = a.end {
        spec.anomaly_end = e;
    }
    spec.amplitude = a.amplitude;
    let series = synth_events(&spec)?;
    write_feature_csv(&series, &a.out)?;
    let mut manifest = manifest_for("synth", &a, a.seed);
    manifest.outputs = vec![a.out.display().to_string()];
    manifest.write_beside(&a.out)
}

fn write_edges(path: &PathBuf, edges: &[(String, String, f64)]) -> Result<()> {
    let mut csv = String::from("src,dst,weight\n");
    for (s, d, w) in edges {
        csv.push_str(&format!("{},{},{}\n", s, d, w));
    }
    write_atomic(path, csv.as_bytes())
}

fn cmd_attention(a: AttentionArgs) -> Result<()> {
    let series = read_series_csv(&a.input, None)?;
    let params = load_checkpoint(&a.model)?;
    let cfg = a.stage.pipeline_config();
    let augmented;
    let source = match cfg.period {
        Some(p) => {
            augmented = augment_series(&series, &StlConfig::new(p)?)?;
            &augmented
        }
        None => &series,
    };
    let mut windows = slice_windows_raw(&source.rows, &source.labels, cfg.window)?;
    let stats: NormalizerStats = match &a.stats {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => fit_normalizer(&source.rows)?,
    };
    normalize_windows(&mut windows, &stats);
    let (feat, time) = average_attention(&params, &windows)?;
    // Feature-view nodes are the input channels; temporal nodes are
    // window row offsets.
    let feat_edges = attention_edges(&feat, a.feature_threshold, Some(&source.names));
    let time_edges = attention_edges(&time, a.temporal_threshold, None);
    write_edges(&a.out_feature, &feat_edges)?;
    write_edges(&a.out_temporal, &time_edges)?;
    let seed = a.stage.seed;
    let mut manifest = manifest_for("attention", &a, seed);
    manifest.inputs = vec![
        a.input.display().to_string(),
        a.model.display().to_string(),
    ];
    manifest.outputs = vec![
        a.out_feature.display().to_string(),
        a.out_temporal.display().to_string(),
    ];
    manifest.write_beside(&a.out_feature)
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let series = read_series_csv(&a.input, None)?;
    let cfg = a.stage.pipeline_config();
    let outcome = run_pipeline(&series, &cfg)?;
    write_atomic(&a.out, &serde_json::to_vec_pretty(&outcome.report)?)?;
    if let Some(model_path) = &a.model {
        save_checkpoint(&outcome.params, model_path)?;
    }
    if let Some(log_path) = &a.log {
        write_train_log(log_path, &outcome.log)?;
    }
    println!(
        "pipeline: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
        outcome.report.accuracy,
        outcome.report.precision,
        outcome.report.recall,
        outcome.report.f1
    );
    let seed = a.stage.seed;
    let mut manifest = manifest_for("pipeline", &a, seed);
    manifest.inputs = vec![a.input.display().to_string()];
    manifest.outputs = vec![a.out.display().to_string()];
    manifest.write_beside(&a.out)
}
