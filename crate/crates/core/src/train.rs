//! Dataset splitting, the optimization loop, and metric computation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::WindowSample;
use crate::error::{Error, Result};
use crate::model::{build_forward, model_forward, MGatParams, ModelConfig};
use crate::tensor::Graph;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    /// train:val:test shares.
    pub ratios: [u32; 3],
    /// Per-class shuffled splitting; off = single-pool shuffle.
    pub stratified: bool,
    /// In-order splitting instead of shuffled, for leakage-aware runs
    /// where overlapping windows must not straddle the boundary.
    pub chronological: bool,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [6, 1, 3],
            stratified: true,
            chronological: false,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|&r| r == 0) {
            return Err(Error::Config("split ratios must all be positive".into()));
        }
        Ok(())
    }
}

/// Counts for one group: floor shares with the remainder handed out
/// train, then val, then test.
fn share_counts(n: usize, ratios: [u32; 3]) -> [usize; 3] {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = (n as u64 * ratios[i] as u64 / total) as usize;
    }
    let mut rest = n - counts.iter().sum::<usize>();
    let mut i = 0;
    while rest > 0 {
        counts[i % 3] += 1;
        rest -= 1;
        i += 1;
    }
    counts
}

/// Partition windows into train/val/test.
pub fn split(
    windows: &[WindowSample],
    cfg: &SplitConfig,
) -> Result<(Vec<WindowSample>, Vec<WindowSample>, Vec<WindowSample>)> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Data("no windows to split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let groups: Vec<Vec<usize>> = if cfg.stratified {
        let mut labels: Vec<u32> = windows.iter().map(|w| w.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
            .into_iter()
            .map(|l| {
                (0..windows.len())
                    .filter(|&i| windows[i].label == l)
                    .collect()
            })
            .collect()
    } else {
        vec![(0..windows.len()).collect()]
    };

    if cfg.stratified {
        for g in &groups {
            if g.len() < 10 {
                return Err(Error::Data(format!(
                    "class {} has only {} windows; stratified splitting needs at least 10",
                    windows[g[0]].label,
                    g.len()
                )));
            }
        }
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for mut idx in groups {
        if !cfg.chronological {
            idx.shuffle(&mut rng);
        }
        let counts = share_counts(idx.len(), cfg.ratios);
        for (pos, &i) in idx.iter().enumerate() {
            let w = windows[i].clone();
            if pos < counts[0] {
                train.push(w);
            } else if pos < counts[0] + counts[1] {
                val.push(w);
            } else {
                test.push(w);
            }
        }
    }
    Ok((train, val, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ClassWeighting {
    /// Weight each class by total/(classes · count) over the training set.
    #[default]
    InverseFrequency,
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation-F1 improvement before stopping.
    pub patience: usize,
    pub optimizer: Optimizer,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            max_epochs: 100,
            batch_size: 32,
            patience: 10,
            optimizer: Optimizer::default(),
            class_weighting: ClassWeighting::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
}

/// Inverse-frequency class weights over training labels; absent classes
/// get weight 0 (they can never appear in the loss).
pub fn class_weights(samples: &[WindowSample], classes: usize, mode: ClassWeighting) -> Vec<f64> {
    match mode {
        ClassWeighting::Uniform => vec![1.0; classes],
        ClassWeighting::InverseFrequency => {
            let mut counts = vec![0u64; classes];
            for s in samples {
                counts[s.label as usize] += 1;
            }
            let total = samples.len() as f64;
            counts
                .iter()
                .map(|&c| {
                    if c == 0 {
                        0.0
                    } else {
                        total / (classes as f64 * c as f64)
                    }
                })
                .collect()
        }
    }
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

/// Train and return the parameters of the best-validation-F1 epoch with
/// the per-epoch log. Deterministic for a fixed seed; stops early after
/// `patience` epochs without improvement or as soon as validation F1
/// reaches 1.0 (no further improvement is possible).
pub fn train(
    train_set: &[WindowSample],
    val_set: &[WindowSample],
    model_cfg: ModelConfig,
    tc: &TrainConfig,
) -> Result<(MGatParams, Vec<TrainLogEntry>)> {
    tc.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("train and validation sets must be nonempty".into()));
    }
    let classes = model_cfg.classes;
    for s in train_set.iter().chain(val_set) {
        if s.label as usize >= classes {
            return Err(Error::Data(format!(
                "label {} outside {} classes",
                s.label, classes
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut params = MGatParams::init(model_cfg, &mut rng);
    let weights = class_weights(train_set, classes, tc.class_weighting);

    let shapes: Vec<usize> = params
        .named_tensors()
        .iter()
        .map(|(_, t)| t.len())
        .collect();
    let mut adam = AdamState {
        m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        t: 0,
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, MGatParams)> = None;
    let mut since_best = 0usize;

    for epoch in 0..tc.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for batch in order.chunks(tc.batch_size) {
            let mut grads: Vec<Vec<f64>> = shapes.iter().map(|&n| vec![0.0; n]).collect();
            let mut batch_loss = 0.0;
            for &i in batch {
                let sample = &train_set[i];
                let mut graph = Graph::new();
                let pass = build_forward(&mut graph, &params, &sample.data, true, &mut rng)?;
                let loss = graph.weighted_ce(
                    pass.logits,
                    sample.label as usize,
                    weights[sample.label as usize],
                )?;
                let loss_val = graph.value(loss).item();
                if !loss_val.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss diverged (non-finite) at epoch {}",
                        epoch
                    )));
                }
                batch_loss += loss_val;
                graph.backward(loss)?;
                for (g, &node) in grads.iter_mut().zip(&pass.params.0) {
                    let grad = graph.grad(node);
                    for (acc, &v) in g.iter_mut().zip(grad.data()) {
                        *acc += v;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            epoch_loss += batch_loss;

            adam.t += 1;
            let mut tensors = params.named_tensors_mut();
            for (pi, (_, tensor)) in tensors.iter_mut().enumerate() {
                let data = tensor.data_mut();
                match tc.optimizer {
                    Optimizer::Sgd => {
                        for (w, g) in data.iter_mut().zip(&grads[pi]) {
                            *w -= tc.lr * g * scale;
                        }
                    }
                    Optimizer::Adam { beta1, beta2, eps } => {
                        let bc1 = 1.0 - beta1.powi(adam.t as i32);
                        let bc2 = 1.0 - beta2.powi(adam.t as i32);
                        for (j, (w, g)) in data.iter_mut().zip(&grads[pi]).enumerate() {
                            let g = g * scale;
                            let m = &mut adam.m[pi][j];
                            let v = &mut adam.v[pi][j];
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            let mhat = *m / bc1;
                            let vhat = *v / bc2;
                            *w -= tc.lr * mhat / (vhat.sqrt() + eps);
                        }
                    }
                }
            }
        }

        let (_, val_report) = evaluate(&params, val_set)?;
        let val_f1 = val_report.f1;
        log.push(TrainLogEntry {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_f1,
        });

        let improved = best.as_ref().map_or(true, |(b, _)| val_f1 > *b);
        if improved {
            best = Some((val_f1, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if val_f1 >= 1.0 || since_best >= tc.patience {
            break;
        }
    }

    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, log))
}

/// Square confusion matrix; rows index true labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn record(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.classes + pred] += 1;
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.count(c, c)
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.classes).filter(|&t| t != c).map(|t| self.count(t, c)).sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.classes).filter(|&p| p != c).map(|p| self.count(c, p)).sum()
    }

    pub fn tn(&self, c: usize) -> u64 {
        self.total() - self.tp(c) - self.fp(c) - self.fn_(c)
    }

    /// Collapse all labels ≥ 1 into a single anomaly class.
    pub fn collapse_to_binary(&self) -> ConfusionMatrix {
        let mut out = ConfusionMatrix::new(2);
        for t in 0..self.classes {
            for p in 0..self.classes {
                let bt = usize::from(t >= 1);
                let bp = usize::from(p >= 1);
                out.counts[bt * 2 + bp] += self.count(t, p);
            }
        }
        out
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: usize,
    pub accuracy: f64,
    /// Positive-class value in binary mode, macro average otherwise.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassReport>,
    pub config_hash: String,
    pub seed: u64,
}

/// Accuracy/precision/recall/F1 from a confusion matrix. Binary reports
/// quote the positive class (label 1); multi-class reports macro-average
/// over all classes. Zero denominators yield 0.
pub fn metrics_from_confusion(
    cm: &ConfusionMatrix,
    config_hash: String,
    seed: u64,
) -> EvalReport {
    let total = cm.total() as f64;
    let correct: u64 = (0..cm.classes).map(|c| cm.tp(c)).sum();
    let accuracy = ratio(correct as f64, total);

    let per_class: Vec<ClassReport> = (0..cm.classes)
        .map(|c| {
            let tp = cm.tp(c) as f64;
            let precision = ratio(tp, tp + cm.fp(c) as f64);
            let recall = ratio(tp, tp + cm.fn_(c) as f64);
            let f1 = ratio(2.0 * precision * recall, precision + recall);
            ClassReport {
                class: c as u32,
                precision,
                recall,
                f1,
                support: cm.tp(c) + cm.fn_(c),
            }
        })
        .collect();

    let (precision, recall, f1) = if cm.classes == 2 {
        let p = &per_class[1];
        (p.precision, p.recall, p.f1)
    } else {
        let n = cm.classes as f64;
        (
            per_class.iter().map(|c| c.precision).sum::<f64>() / n,
            per_class.iter().map(|c| c.recall).sum::<f64>() / n,
            per_class.iter().map(|c| c.f1).sum::<f64>() / n,
        )
    };

    EvalReport {
        classes: cm.classes,
        accuracy,
        precision,
        recall,
        f1,
        per_class,
        config_hash,
        seed,
    }
}

/// Argmax class prediction for one window.
pub fn predict(params: &MGatParams, sample: &WindowSample) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in eval mode
    let (logits, _, _) = model_forward(params, &sample.data, false, &mut rng)?;
    Ok(argmax(&logits))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(
    params: &MGatParams,
    test: &[WindowSample],
) -> Result<(ConfusionMatrix, EvalReport)> {
    if test.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let mut cm = ConfusionMatrix::new(params.config.classes);
    for s in test {
        let pred = predict(params, s)?;
        cm.record(s.label as usize, pred);
    }
    let report = metrics_from_confusion(&cm, params.config.hash(), 0);
    Ok((cm, report))
}

/// Average both attention matrices over a set of windows.
pub fn average_attention(
    params: &MGatParams,
    windows: &[WindowSample],
) -> Result<(crate::tensor::Tensor, crate::tensor::Tensor)> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to average attention over".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut feat: Option<crate::tensor::Tensor> = None;
    let mut time: Option<crate::tensor::Tensor> = None;
    for w in windows {
        let (_, af, at) = model_forward(params, &w.data, false, &mut rng)?;
        match &mut feat {
            None => feat = Some(af.0),
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(af.0.data()) {
                    *a += b;
                }
            }
        }
        match &mut time {
            None => time = Some(at.0),
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(at.0.data()) {
                    *a += b;
                }
            }
        }
    }
    let n = windows.len() as f64;
    let mut feat = feat.expect("nonempty");
    let mut time = time.expect("nonempty");
    for v in feat.data_mut() {
        *v /= n;
    }
    for v in time.data_mut() {
        *v /= n;
    }
    Ok((feat, time))
}

/// Edges of an averaged attention matrix above a threshold, as
/// (source, destination, weight). Names label the nodes when given;
/// otherwise nodes are indexed.
pub fn attention_edges(
    avg: &crate::tensor::Tensor,
    threshold: f64,
    names: Option<&[String]>,
) -> Vec<(String, String, f64)> {
    let n = avg.rows();
    let label = |i: usize| -> String {
        match names {
            Some(ns) => ns[i].clone(),
            None => i.to_string(),
        }
    };
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let w = avg.get(i, j);
            if w > threshold {
                edges.push((label(i), label(j), w));
            }
        }
    }
    edges
}
