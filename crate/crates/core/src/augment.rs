//! Series augmentation: robust STL decomposition expands each feature
//! channel into observed/residual/seasonal/trend/weight channels, then
//! stride-1 window slicing with majority labels and leak-free min–max
//! normalization produces model-ready samples.

use crate::error::{Error, Result};
use crate::features::FeatureSeries;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct StlConfig {
    /// Seasonal period in samples.
    pub period: usize,
    /// Inner (seasonal/trend) iterations per robustness pass.
    pub inner_iters: usize,
    /// Outer robustness-reweighting iterations.
    pub outer_iters: usize,
    /// Loess span for cycle-subseries smoothing, in subseries points.
    pub seasonal_span: usize,
    pub trend_span: usize,
    pub lowpass_span: usize,
}

fn smallest_odd_at_least(x: f64) -> usize {
    let mut n = x.ceil() as usize;
    if n < 3 {
        n = 3;
    }
    if n % 2 == 0 {
        n += 1;
    }
    n
}

impl StlConfig {
    pub fn new(period: usize) -> Result<Self> {
        if period < 2 {
            return Err(Error::Config(format!("period {} must be at least 2", period)));
        }
        let seasonal_span = 7usize;
        let trend_span =
            smallest_odd_at_least(1.5 * period as f64 / (1.0 - 1.5 / seasonal_span as f64));
        let lowpass_span = smallest_odd_at_least(period as f64);
        Ok(StlConfig {
            period,
            inner_iters: 2,
            outer_iters: 1,
            seasonal_span,
            trend_span,
            lowpass_span,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.period < 2 {
            return Err(Error::Config("period must be at least 2".into()));
        }
        for (name, span) in [
            ("seasonal", self.seasonal_span),
            ("trend", self.trend_span),
            ("low-pass", self.lowpass_span),
        ] {
            if span < 3 || span % 2 == 0 {
                return Err(Error::Config(format!(
                    "{} span {} must be odd and at least 3",
                    name, span
                )));
            }
        }
        Ok(())
    }
}

impl Default for StlConfig {
    fn default() -> Self {
        StlConfig::new(35).expect("valid default period")
    }
}

/// One decomposed channel: observed = trend + seasonal + residual, plus
/// bisquare robustness weights in [0, 1].
#[derive(Debug, Clone)]
pub struct DecomposedSeries {
    pub observed: Vec<f64>,
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Degree-1 loess fit at position `x` over integer sample positions
/// `0..n`, using the `span` nearest points with tricube neighborhood
/// weights multiplied by per-point robustness weights.
fn loess_at(y: &[f64], rho: Option<&[f64]>, span: usize, x: f64) -> f64 {
    let n = y.len();
    let span = span.min(n);
    // Nearest `span` integer positions to x form a contiguous block.
    let mut lo = (x - (span as f64 - 1.0) / 2.0).round() as isize;
    lo = lo.clamp(0, (n - span) as isize);
    let lo = lo as usize;
    let hi = lo + span;

    let mut max_d = 0.0f64;
    for i in lo..hi {
        max_d = max_d.max((i as f64 - x).abs());
    }
    if max_d == 0.0 {
        return y[lo];
    }
    // Widen the bandwidth when the span exceeds the data (per-loess convention).
    let lambda = if span < n {
        max_d
    } else {
        max_d * span as f64 / n as f64
    };

    let mut sw = 0.0;
    let mut swx = 0.0;
    let mut swy = 0.0;
    let mut swxy = 0.0;
    let mut swxx = 0.0;
    for i in lo..hi {
        let d = (i as f64 - x).abs() / lambda;
        let mut w = if d < 1.0 {
            let t = 1.0 - d * d * d;
            t * t * t
        } else {
            0.0
        };
        if let Some(r) = rho {
            w *= r[i];
        }
        if w <= 0.0 {
            continue;
        }
        let xi = i as f64 - x; // center at the evaluation point
        sw += w;
        swx += w * xi;
        swy += w * y[i];
        swxy += w * xi * y[i];
        swxx += w * xi * xi;
    }
    if sw == 0.0 {
        // All neighborhood weights vanished (extreme robustness weights):
        // fall back to an unweighted local mean.
        let m: f64 = y[lo..hi].iter().sum::<f64>() / span as f64;
        return m;
    }
    let det = sw * swxx - swx * swx;
    if det.abs() < 1e-12 * sw.max(1.0) {
        return swy / sw;
    }
    // Weighted least squares for y = b0 + b1·xi, evaluated at xi = 0.
    (swxx * swy - swx * swxy) / det
}

/// Loess-smooth a series at every integer position.
fn loess_smooth(y: &[f64], rho: Option<&[f64]>, span: usize) -> Vec<f64> {
    (0..y.len())
        .map(|i| loess_at(y, rho, span, i as f64))
        .collect()
}

/// Centered moving average of width `w`; output length n − w + 1.
fn moving_average(y: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len() + 1 - w);
    let mut sum: f64 = y[..w].iter().sum();
    out.push(sum / w as f64);
    for i in w..y.len() {
        sum += y[i] - y[i - w];
        out.push(sum / w as f64);
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Bisquare robustness weights from residuals: w = (1 − u²)² for
/// u = |r| / (6·median|r|) < 1, else 0; all ones when median|r| = 0.
/// `scale` is the magnitude of the decomposed series, so that residuals
/// that are pure floating-point noise count as zero.
fn bisquare_weights(residual: &[f64], scale: f64) -> Vec<f64> {
    let mut abs: Vec<f64> = residual.iter().map(|r| r.abs()).collect();
    let med = median(&mut abs);
    if med <= 1e-12 * scale.max(1.0) {
        return vec![1.0; residual.len()];
    }
    let scale = 6.0 * med;
    residual
        .iter()
        .map(|r| {
            let u = r.abs() / scale;
            if u < 1.0 {
                let t = 1.0 - u * u;
                t * t
            } else {
                0.0
            }
        })
        .collect()
}

/// Classic additive STL: iterate cycle-subseries smoothing, low-pass
/// filtering, and trend smoothing, with bisquare robustness passes.
pub fn stl_decompose(y: &[f64], cfg: &StlConfig) -> Result<DecomposedSeries> {
    cfg.validate()?;
    let n = y.len();
    let p = cfg.period;
    if n < 2 * p {
        return Err(Error::Data(format!(
            "series too short for period: {} samples, need at least {}",
            n,
            2 * p
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("series contains a non-finite value".into()));
    }

    let mut trend = vec![0.0; n];
    let mut seasonal = vec![0.0; n];
    let mut rho: Option<Vec<f64>> = None;
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    for outer in 0..=cfg.outer_iters {
        for _ in 0..cfg.inner_iters {
            // Detrend.
            let detrended: Vec<f64> = (0..n).map(|i| y[i] - trend[i]).collect();

            // Cycle-subseries loess, extended one period on each side.
            let mut extended = vec![0.0; n + 2 * p];
            for phase in 0..p {
                let idx: Vec<usize> = (phase..n).step_by(p).collect();
                let sub: Vec<f64> = idx.iter().map(|&i| detrended[i]).collect();
                let sub_rho: Option<Vec<f64>> = rho
                    .as_ref()
                    .map(|r| idx.iter().map(|&i| r[i]).collect());
                let m = sub.len();
                // Fitted values at each subseries point plus one
                // extrapolated point before and after.
                for (j, &i) in idx.iter().enumerate() {
                    extended[i + p] = loess_at(&sub, sub_rho.as_deref(), cfg.seasonal_span, j as f64);
                }
                extended[phase] = loess_at(&sub, sub_rho.as_deref(), cfg.seasonal_span, -1.0);
                extended[phase + p + (m - 1) * p + p] =
                    loess_at(&sub, sub_rho.as_deref(), cfg.seasonal_span, m as f64);
            }

            // Low-pass: MA(p), MA(p), MA(3), then loess; length returns to n.
            let low = moving_average(&extended, p);
            let low = moving_average(&low, p);
            let low = moving_average(&low, 3);
            debug_assert_eq!(low.len(), n);
            let low = loess_smooth(&low, rho.as_deref(), cfg.lowpass_span);

            for i in 0..n {
                seasonal[i] = extended[i + p] - low[i];
            }

            // Trend from the deseasonalized series.
            let deseasonalized: Vec<f64> = (0..n).map(|i| y[i] - seasonal[i]).collect();
            trend = loess_smooth(&deseasonalized, rho.as_deref(), cfg.trend_span);
        }

        if outer < cfg.outer_iters {
            let residual: Vec<f64> =
                (0..n).map(|i| y[i] - trend[i] - seasonal[i]).collect();
            rho = Some(bisquare_weights(&residual, scale));
        }
    }

    let residual: Vec<f64> = (0..n).map(|i| y[i] - trend[i] - seasonal[i]).collect();
    let weights = bisquare_weights(&residual, scale);
    Ok(DecomposedSeries {
        observed: y.to_vec(),
        trend,
        seasonal,
        residual,
        weights,
    })
}

/// Suffixes appended per decomposition part, in channel-block order.
pub const CHANNEL_SUFFIXES: [&str; 5] = [".obs", ".res", ".seas", ".trend", ".w"];

/// Expand k channels to 5k: [observed×k, residual×k, seasonal×k,
/// trend×k, weight×k], labels unchanged.
pub fn augment_series(series: &FeatureSeries, cfg: &StlConfig) -> Result<FeatureSeries> {
    let n = series.len();
    let k = series.width();
    if k == 0 {
        return Err(Error::Data("series has no feature columns".into()));
    }
    let mut parts: Vec<DecomposedSeries> = Vec::with_capacity(k);
    for (ci, name) in series.names.iter().enumerate() {
        let column: Vec<f64> = series.rows.iter().map(|r| r[ci]).collect();
        let dec = stl_decompose(&column, cfg)
            .map_err(|e| Error::Data(format!("feature {:?}: {}", name, e)))?;
        parts.push(dec);
    }

    let mut names = Vec::with_capacity(5 * k);
    for suffix in CHANNEL_SUFFIXES {
        for name in &series.names {
            names.push(format!("{}{}", name, suffix));
        }
    }
    let mut rows = Vec::with_capacity(n);
    for t in 0..n {
        let mut row = Vec::with_capacity(5 * k);
        for d in &parts {
            row.push(d.observed[t]);
        }
        for d in &parts {
            row.push(d.residual[t]);
        }
        for d in &parts {
            row.push(d.seasonal[t]);
        }
        for d in &parts {
            row.push(d.trend[t]);
        }
        for d in &parts {
            row.push(d.weights[t]);
        }
        rows.push(row);
    }
    Ok(FeatureSeries {
        start_ts: series.start_ts,
        bin_secs: series.bin_secs,
        names,
        rows,
        labels: series.labels.clone(),
    })
}

/// Per-channel min–max statistics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalizerStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizerStats {
    /// Map a value to [0, 1]; constant channels map to 0, out-of-range
    /// values clip.
    pub fn apply(&self, channel: usize, value: f64) -> f64 {
        let (lo, hi) = (self.min[channel], self.max[channel]);
        if hi <= lo {
            return 0.0;
        }
        ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

pub fn fit_normalizer(rows: &[Vec<f64>]) -> Result<NormalizerStats> {
    let first = rows.first().ok_or_else(|| Error::Data("no rows to fit".into()))?;
    let mut min = first.clone();
    let mut max = first.clone();
    for row in rows {
        for (c, &v) in row.iter().enumerate() {
            if v < min[c] {
                min[c] = v;
            }
            if v > max[c] {
                max[c] = v;
            }
        }
    }
    Ok(NormalizerStats { min, max })
}

/// One model sample: m consecutive rows, majority label (ties toward the
/// larger label id), and the start row index.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub data: Tensor,
    pub label: u32,
    pub start: usize,
}

fn majority_label(labels: &[u32]) -> u32 {
    let mut counts: Vec<(u32, usize)> = Vec::new();
    for &l in labels {
        match counts.iter_mut().find(|(v, _)| *v == l) {
            Some((_, c)) => *c += 1,
            None => counts.push((l, 1)),
        }
    }
    counts
        .into_iter()
        .max_by_key(|&(label, count)| (count, label))
        .map(|(label, _)| label)
        .unwrap_or(0)
}

/// Cut stride-1 windows without normalizing (for split-then-fit flows).
pub fn slice_windows_raw(
    rows: &[Vec<f64>],
    labels: &[u32],
    m: usize,
) -> Result<Vec<WindowSample>> {
    let n = rows.len();
    if n != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            n,
            labels.len()
        )));
    }
    if m == 0 {
        return Err(Error::Config("window length must be positive".into()));
    }
    if n < m {
        return Err(Error::Data(format!(
            "series of {} rows shorter than window {}",
            n, m
        )));
    }
    let width = rows[0].len();
    let mut out = Vec::with_capacity(n - m + 1);
    for start in 0..=(n - m) {
        let mut data = Tensor::zeros(m, width);
        for r in 0..m {
            for c in 0..width {
                data.set(r, c, rows[start + r][c]);
            }
        }
        out.push(WindowSample {
            data,
            label: majority_label(&labels[start..start + m]),
            start,
        });
    }
    Ok(out)
}

pub fn normalize_window(sample: &mut WindowSample, stats: &NormalizerStats) {
    let (rows, cols) = (sample.data.rows(), sample.data.cols());
    for r in 0..rows {
        for c in 0..cols {
            let v = stats.apply(c, sample.data.get(r, c));
            sample.data.set(r, c, v);
        }
    }
}

pub fn normalize_windows(samples: &mut [WindowSample], stats: &NormalizerStats) {
    for s in samples {
        normalize_window(s, stats);
    }
}

/// Slice and normalize in one step. With `stats: None` the normalizer is
/// fitted on all provided rows; pass pre-fitted stats to avoid leakage
/// across a train/test split.
pub fn slice_windows(
    rows: &[Vec<f64>],
    labels: &[u32],
    m: usize,
    stats: Option<&NormalizerStats>,
) -> Result<(Vec<WindowSample>, NormalizerStats)> {
    let fitted;
    let stats = match stats {
        Some(s) => s,
        None => {
            fitted = fit_normalizer(rows)?;
            &fitted
        }
    };
    let mut samples = slice_windows_raw(rows, labels, m)?;
    normalize_windows(&mut samples, stats);
    Ok((samples, stats.clone()))
}
