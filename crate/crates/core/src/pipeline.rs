//! End-to-end wiring: featurized series → STL augmentation → windows →
//! stratified split → leak-free normalization → training → evaluation,
//! plus the ablation/sweep/multi-class/holdout harnesses and run-manifest
//! helpers shared by the CLI subcommands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{
    augment_series, fit_normalizer, normalize_windows, slice_windows_raw, NormalizerStats,
    StlConfig, WindowSample,
};
use crate::error::{Error, Result};
use crate::features::FeatureSeries;
use crate::model::{Activation, LeakyMode, MGatParams, ModelConfig};
use crate::train::{
    evaluate, split, train, ConfusionMatrix, EvalReport, SplitConfig, TrainConfig, TrainLogEntry,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// STL period; `None` skips augmentation and trains on the raw k
    /// channels (the "stl off" ablation arm).
    pub period: Option<usize>,
    /// Window length m.
    pub window: usize,
    pub hidden: usize,
    pub use_feature_gat: bool,
    pub use_temporal_gat: bool,
    pub fusion_weights: [f64; 3],
    pub activation: Activation,
    pub leaky: LeakyMode,
    pub dropout: f64,
    pub split: SplitConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            period: Some(35),
            window: 25,
            hidden: 32,
            use_feature_gat: true,
            use_temporal_gat: true,
            fusion_weights: [0.5, 1.0, 0.5],
            activation: Activation::default(),
            leaky: LeakyMode::default(),
            dropout: 0.2,
            split: SplitConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    fn model_config(&self, channels: usize, classes: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.window, channels, classes);
        cfg.hidden = self.hidden;
        cfg.use_feature_gat = self.use_feature_gat;
        cfg.use_temporal_gat = self.use_temporal_gat;
        cfg.fusion_weights = self.fusion_weights;
        cfg.activation = self.activation;
        cfg.leaky = self.leaky;
        cfg.dropout = self.dropout;
        cfg
    }
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub params: MGatParams,
    pub report: EvalReport,
    pub confusion: ConfusionMatrix,
    pub log: Vec<TrainLogEntry>,
    pub stats: NormalizerStats,
    /// Normalized test windows, kept for attention export.
    pub test_windows: Vec<WindowSample>,
}

/// Augment (optionally) and slice one series into unnormalized windows.
pub fn prepare_windows(series: &FeatureSeries, cfg: &PipelineConfig) -> Result<Vec<WindowSample>> {
    let augmented;
    let source = match cfg.period {
        Some(p) => {
            augmented = augment_series(series, &StlConfig::new(p)?)?;
            &augmented
        }
        None => series,
    };
    slice_windows_raw(&source.rows, &source.labels, cfg.window)
}

fn window_rows(windows: &[WindowSample]) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for w in windows {
        for r in 0..w.data.rows() {
            rows.push((0..w.data.cols()).map(|c| w.data.get(r, c)).collect());
        }
    }
    rows
}

/// Split, fit the normalizer on training rows only, normalize every set,
/// train, and evaluate on the held-out test windows.
pub fn run_windows(windows: Vec<WindowSample>, cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to run".into()));
    }
    let channels = windows[0].data.cols();
    let classes = (windows.iter().map(|w| w.label).max().unwrap_or(0) + 1).max(2) as usize;

    let (mut train_set, mut val_set, mut test_set) = split(&windows, &cfg.split)?;
    let stats = fit_normalizer(&window_rows(&train_set))?;
    normalize_windows(&mut train_set, &stats);
    normalize_windows(&mut val_set, &stats);
    normalize_windows(&mut test_set, &stats);

    let model_cfg = cfg.model_config(channels, classes);
    let (params, log) = train(&train_set, &val_set, model_cfg, &cfg.train)?;
    let (confusion, mut report) = evaluate(&params, &test_set)?;
    report.seed = cfg.train.seed;
    Ok(PipelineOutcome {
        params,
        report,
        confusion,
        log,
        stats,
        test_windows: test_set,
    })
}

/// Full pipeline over one labeled feature series.
pub fn run_pipeline(series: &FeatureSeries, cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    run_windows(prepare_windows(series, cfg)?, cfg)
}

/// One ablation arm: which subsystems stay enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationArm {
    pub feature_gat: bool,
    pub temporal_gat: bool,
    pub stl: bool,
    pub window: bool,
}

impl AblationArm {
    pub const FULL: AblationArm = AblationArm {
        feature_gat: true,
        temporal_gat: true,
        stl: true,
        window: true,
    };

    pub fn label(&self) -> String {
        let mut on = Vec::new();
        if self.feature_gat {
            on.push("feature_gat");
        }
        if self.temporal_gat {
            on.push("temporal_gat");
        }
        if self.stl {
            on.push("stl");
        }
        if self.window {
            on.push("window");
        }
        if on.is_empty() {
            "none".into()
        } else {
            on.join("+")
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    /// Input channel width the arm trained on (5k with STL, k without).
    pub channels: usize,
    pub window: usize,
    pub accuracy: f64,
    pub f1: f64,
}

/// Train and evaluate one run per arm. Disabling `stl` trains on the raw
/// k channels; disabling `window` uses m = 1.
pub fn ablate(
    series: &FeatureSeries,
    arms: &[AblationArm],
    base: &PipelineConfig,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(arms.len());
    for arm in arms {
        let mut cfg = base.clone();
        cfg.use_feature_gat = arm.feature_gat;
        cfg.use_temporal_gat = arm.temporal_gat;
        if !arm.stl {
            cfg.period = None;
        }
        if !arm.window {
            cfg.window = 1;
        }
        let outcome = run_pipeline(series, &cfg)?;
        let expected_width = if arm.stl {
            5 * series.width()
        } else {
            series.width()
        };
        debug_assert_eq!(outcome.params.config.channels, expected_width);
        rows.push(AblationRow {
            arm: arm.label(),
            channels: outcome.params.config.channels,
            window: cfg.window,
            accuracy: outcome.report.accuracy,
            f1: outcome.report.f1,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub window: usize,
    pub period: usize,
    pub accuracy: f64,
    pub f1: f64,
}

/// Accuracy grid over (window length, STL period) pairs.
pub fn sweep(
    series: &FeatureSeries,
    windows: &[usize],
    periods: &[usize],
    base: &PipelineConfig,
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::with_capacity(windows.len() * periods.len());
    for &p in periods {
        if series.len() < 2 * p {
            return Err(Error::Data(format!(
                "series of {} rows too short for period {}",
                series.len(),
                p
            )));
        }
        for &m in windows {
            let mut cfg = base.clone();
            cfg.window = m;
            cfg.period = Some(p);
            let outcome = run_pipeline(series, &cfg)?;
            cells.push(SweepCell {
                window: m,
                period: p,
                accuracy: outcome.report.accuracy,
                f1: outcome.report.f1,
            });
        }
    }
    Ok(cells)
}

/// Pool windows from several event series (each labeled with its own
/// event id) into one multi-class task and run it. Every series must
/// contain at least `min_event_rows` rows carrying its event label.
pub fn multiclass_run(
    event_series: &[FeatureSeries],
    min_event_rows: usize,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome> {
    if event_series.is_empty() {
        return Err(Error::Data("no event series supplied".into()));
    }
    let mut pooled = Vec::new();
    for series in event_series {
        let event = series
            .labels
            .iter()
            .copied()
            .filter(|&l| l != 0)
            .max()
            .ok_or_else(|| Error::Data("series has no anomaly labels".into()))?;
        let count = series.labels.iter().filter(|&&l| l == event).count();
        if count < min_event_rows {
            return Err(Error::Data(format!(
                "event {} supplies only {} labeled rows, need {}",
                event, count, min_event_rows
            )));
        }
        pooled.extend(prepare_windows(series, cfg)?);
    }
    run_windows(pooled, cfg)
}

/// Collapse labels to binary (normal vs any anomaly).
fn binarize(windows: &mut [WindowSample]) {
    for w in windows {
        w.label = u32::from(w.label >= 1);
    }
}

/// Train a binary detector on all but one event series and evaluate it on
/// the held-out one.
pub fn holdout_event_run(
    event_series: &[FeatureSeries],
    holdout: usize,
    cfg: &PipelineConfig,
) -> Result<(ConfusionMatrix, EvalReport)> {
    if holdout >= event_series.len() {
        return Err(Error::Config(format!(
            "holdout index {} out of range for {} series",
            holdout,
            event_series.len()
        )));
    }
    if event_series.len() < 2 {
        return Err(Error::Data("holdout protocol needs at least two series".into()));
    }

    let mut seen = Vec::new();
    for (i, series) in event_series.iter().enumerate() {
        if i != holdout {
            seen.extend(prepare_windows(series, cfg)?);
        }
    }
    binarize(&mut seen);
    let mut unseen = prepare_windows(&event_series[holdout], cfg)?;
    binarize(&mut unseen);

    let (mut train_set, mut val_set, _) = split(&seen, &cfg.split)?;
    let stats = fit_normalizer(&window_rows(&train_set))?;
    normalize_windows(&mut train_set, &stats);
    normalize_windows(&mut val_set, &stats);
    normalize_windows(&mut unseen, &stats);

    let channels = train_set[0].data.cols();
    let model_cfg = cfg.model_config(channels, 2);
    let (params, _) = train(&train_set, &val_set, model_cfg, &cfg.train)?;
    let (cm, mut report) = evaluate(&params, &unseen)?;
    report.seed = cfg.train.seed;
    Ok((cm, report))
}

// ---------------------------------------------------------------------------
// Artifact helpers
// ---------------------------------------------------------------------------

/// Write via a temp file in the target directory plus rename, so an
/// interrupted run never leaves a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp",
            path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
        )),
        None => std::path::PathBuf::from(format!(
            ".{}.tmp",
            path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
        )),
    };
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reproducibility record written next to every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Every parameter of the run, defaults included.
    pub parameters: serde_json::Value,
    pub seed: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, parameters: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            parameters,
            seed,
        }
    }

    /// Write `<artifact>.manifest.json` beside the artifact.
    pub fn write_beside(&self, artifact: &Path) -> Result<()> {
        let mut name = artifact
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        name.push_str(".manifest.json");
        let path = artifact.with_file_name(name);
        let json = serde_json::to_vec_pretty(self)?;
        write_atomic(&path, &json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_events, EventKind, SynthSpec, ALL_EVENT_KINDS};

    fn fast_cfg() -> PipelineConfig {
        PipelineConfig {
            period: Some(12),
            window: 5,
            hidden: 6,
            train: TrainConfig {
                lr: 0.01,
                max_epochs: 12,
                seed: 7,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn small_series(kind: EventKind, event: u32, seed: u64) -> FeatureSeries {
        let mut spec = SynthSpec::new(event, kind, 160, seed);
        spec.anomaly_start = 60;
        spec.anomaly_end = 100;
        synth_events(&spec).unwrap()
    }

    #[test]
    fn pipeline_detects_worm_spike() {
        let series = small_series(EventKind::Worm, 1, 3);
        let outcome = run_pipeline(&series, &fast_cfg()).unwrap();
        assert!(
            outcome.report.f1 >= 0.8,
            "F1 {} log {:?}",
            outcome.report.f1,
            outcome.log
        );
        assert_eq!(outcome.params.config.channels, 5 * 46);
        // Reports carry the seed and config hash.
        assert_eq!(outcome.report.seed, 7);
        assert!(!outcome.report.config_hash.is_empty());
    }

    #[test]
    fn pipeline_determinism() {
        let series = small_series(EventKind::Worm, 1, 3);
        let a = run_pipeline(&series, &fast_cfg()).unwrap();
        let b = run_pipeline(&series, &fast_cfg()).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.log, b.log);
        for ((_, x), (_, y)) in a
            .params
            .named_tensors()
            .iter()
            .zip(b.params.named_tensors())
        {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn ablation_widths_and_rows() {
        let series = small_series(EventKind::Worm, 1, 4);
        let arms = [
            AblationArm::FULL,
            AblationArm {
                stl: false,
                ..AblationArm::FULL
            },
            AblationArm {
                feature_gat: false,
                temporal_gat: false,
                stl: false,
                window: true,
            },
        ];
        let mut cfg = fast_cfg();
        cfg.train.max_epochs = 4;
        let rows = ablate(&series, &arms, &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].channels, 5 * 46);
        assert_eq!(rows[1].channels, 46);
        assert_eq!(rows[2].arm, "window");
        for r in &rows {
            assert!((0.0..=1.0).contains(&r.f1));
        }
    }

    #[test]
    fn sweep_grid_shape() {
        let series = small_series(EventKind::Worm, 1, 5);
        let mut cfg = fast_cfg();
        cfg.train.max_epochs = 3;
        let cells = sweep(&series, &[3, 5], &[12], &cfg).unwrap();
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().any(|c| c.window == 3 && c.period == 12));
        // Too-short series rejected.
        assert!(sweep(&series, &[3], &[100], &cfg).is_err());
    }

    #[test]
    fn multiclass_insufficient_rows_names_event() {
        let series = vec![small_series(EventKind::Worm, 1, 6)];
        let err = multiclass_run(&series, 600, &fast_cfg()).unwrap_err();
        assert!(err.to_string().contains("event 1"), "{}", err);
    }

    #[test]
    fn multiclass_runs_seven_classes() {
        let series: Vec<FeatureSeries> = ALL_EVENT_KINDS
            .iter()
            .enumerate()
            .map(|(i, &kind)| small_series(kind, i as u32 + 1, 10 + i as u64))
            .collect();
        let mut cfg = fast_cfg();
        cfg.period = None; // raw channels keep this test quick
        cfg.train.max_epochs = 3;
        let outcome = multiclass_run(&series, 40, &cfg).unwrap();
        assert_eq!(outcome.report.classes, 7);
        assert_eq!(outcome.report.per_class.len(), 7);
    }

    #[test]
    fn holdout_runs_binary() {
        let series: Vec<FeatureSeries> = [EventKind::Worm, EventKind::FlapStorm, EventKind::Blackout]
            .iter()
            .enumerate()
            .map(|(i, &kind)| small_series(kind, i as u32 + 1, 20 + i as u64))
            .collect();
        let mut cfg = fast_cfg();
        cfg.period = None;
        cfg.train.max_epochs = 3;
        let (cm, report) = holdout_event_run(&series, 0, &cfg).unwrap();
        assert_eq!(report.classes, 2);
        assert_eq!(cm.total() as usize, 160 - cfg.window + 1);
        assert!(holdout_event_run(&series, 9, &cfg).is_err());
    }

    #[test]
    fn atomic_write_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"hello").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"hello");
        // No temp file left behind.
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);

        let manifest = RunManifest::new("synth", serde_json::json!({"n": 10}), 7);
        manifest.write_beside(&path).unwrap();
        let mpath = dir.path().join("out.txt.manifest.json");
        let back: RunManifest =
            serde_json::from_slice(&std::fs::read(&mpath).unwrap()).unwrap();
        assert_eq!(back.subcommand, "synth");
        assert_eq!(back.seed, 7);
    }
}
