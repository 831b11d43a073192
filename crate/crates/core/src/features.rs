//! Per-minute feature extraction: 46 volume and AS-path statistics per
//! one-minute bin, with per-prefix state carried across bins for
//! duplicate/flap/implicit-withdrawal detection and path edit distances.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Origin, Prefix, UpdateRecord};
use crate::pipeline::write_atomic;

pub const FEATURE_COUNT: usize = 46;
pub const BIN_SECS: i64 = 60;

/// Column names in table order. Indices below refer to 1-based feature ids.
pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = [
        "announcements",                    // 1
        "withdrawals",                      // 2
        "duplicate_announcements",          // 3
        "nlri_announcements",               // 4
        "non_duplicate_announcements",      // 5
        "flaps",                            // 6
        "new_after_withdraw",               // 7
        "plain_new_announcements",          // 8
        "implicit_withdrawals_same_path",   // 9
        "implicit_withdrawals_diff_path",   // 10
        "igp_messages",                     // 11
        "egp_messages",                     // 12
        "incomplete_messages",              // 13
        "origin_changes",                   // 14
        "announcements_longer_path",        // 15
        "announcements_shorter_path",       // 16
        "avg_as_path_length",               // 17
        "max_as_path_length",               // 18
        "avg_unique_as_path_length",        // 19
        "max_unique_as_path_length",        // 20
        "avg_edit_distance",                // 21
        "max_edit_distance",                // 22
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for n in 0..=10 {
        names.push(format!("edit_distance_{}", n)); // 23-33
    }
    for n in 0..=10 {
        names.push(format!("unique_edit_distance_{}", n)); // 34-44
    }
    names.push("rare_as_count".into()); // 45
    names.push("max_rare_as_per_path".into()); // 46
    debug_assert_eq!(names.len(), FEATURE_COUNT);
    names
}

/// How feature 6 (flaps) is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlapDefinition {
    /// A flap is a duplicate announcement (identical path and origin).
    #[default]
    Duplicate,
    /// A flap is a re-announcement of a withdrawn prefix.
    ReAnnounceAfterWithdraw,
}

#[derive(Debug, Clone)]
pub struct FeatureConfig {
    /// An AS is rare while its cumulative pre-bin occurrence count is < this.
    pub rare_threshold: u64,
    pub flap_definition: FlapDefinition,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            rare_threshold: 5,
            flap_definition: FlapDefinition::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LastAction {
    Announced,
    Withdrawn,
}

/// Last observed action for one prefix; `path` is nonempty only while the
/// prefix is announced.
#[derive(Debug, Clone)]
struct PrefixState {
    action: LastAction,
    path: Vec<u32>,
    origin: Origin,
}

/// Anomaly interval list: (event id ≥ 1, [start, end) in epoch seconds).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EventInterval {
    pub event: u32,
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EventLabelSpec(pub Vec<EventInterval>);

impl EventLabelSpec {
    pub fn validate(&self) -> Result<()> {
        let mut spans: Vec<(i64, i64)> = Vec::new();
        for iv in &self.0 {
            if iv.event == 0 {
                return Err(Error::Config("event id 0 is reserved for normal".into()));
            }
            if iv.start >= iv.end {
                return Err(Error::Config(format!(
                    "event {} interval start {} must precede end {}",
                    iv.event, iv.start, iv.end
                )));
            }
            spans.push((iv.start, iv.end));
        }
        spans.sort_unstable();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Config("event intervals overlap".into()));
            }
        }
        Ok(())
    }

    pub fn label_at(&self, ts: i64) -> u32 {
        self.0
            .iter()
            .find(|iv| iv.start <= ts && ts < iv.end)
            .map_or(0, |iv| iv.event)
    }
}

/// Per-minute feature matrix with labels; bins are contiguous and empty
/// bins are present as zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    /// Start of the first bin (multiple of the bin width).
    pub start_ts: i64,
    pub bin_secs: i64,
    /// One column per name, in `names` order.
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
}

impl FeatureSeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }
}

#[derive(Default)]
struct BinAcc {
    announcements: u64,
    withdrawals: u64,
    duplicates: u64,
    nlri_messages: u64,
    flaps: u64,
    new_after_withdraw: u64,
    plain_new: u64,
    implicit_same_path: u64,
    implicit_diff_path: u64,
    igp_messages: u64,
    egp_messages: u64,
    incomplete_messages: u64,
    origin_changes: u64,
    longer_paths: u64,
    shorter_paths: u64,
    path_len_sum: u64,
    path_count: u64,
    max_path_len: u64,
    /// Distinct announcement paths seen in the bin, insertion-ordered.
    unique_paths: Vec<Vec<u32>>,
    edit_sum: u64,
    edit_count: u64,
    edit_max: u64,
    edit_hist: [u64; 11],
    /// Paths whose first in-bin edit distance is already histogrammed.
    unique_hist_paths: Vec<Vec<u32>>,
    unique_edit_hist: [u64; 11],
    rare_count: u64,
    rare_max_per_path: u64,
    /// AS occurrence deltas to fold into the history when the bin closes.
    as_delta: HashMap<u32, u64>,
}

impl BinAcc {
    fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(FEATURE_COUNT);
        row.push(self.announcements as f64);
        row.push(self.withdrawals as f64);
        row.push(self.duplicates as f64);
        row.push(self.nlri_messages as f64);
        row.push((self.announcements - self.duplicates) as f64);
        row.push(self.flaps as f64);
        row.push(self.new_after_withdraw as f64);
        row.push(self.plain_new as f64);
        row.push(self.implicit_same_path as f64);
        row.push(self.implicit_diff_path as f64);
        row.push(self.igp_messages as f64);
        row.push(self.egp_messages as f64);
        row.push(self.incomplete_messages as f64);
        row.push(self.origin_changes as f64);
        row.push(self.longer_paths as f64);
        row.push(self.shorter_paths as f64);
        if self.path_count > 0 {
            row.push(self.path_len_sum as f64 / self.path_count as f64);
        } else {
            row.push(0.0);
        }
        row.push(self.max_path_len as f64);
        if self.unique_paths.is_empty() {
            row.push(0.0);
            row.push(0.0);
        } else {
            let sum: usize = self.unique_paths.iter().map(|p| p.len()).sum();
            let max = self.unique_paths.iter().map(|p| p.len()).max().unwrap_or(0);
            row.push(sum as f64 / self.unique_paths.len() as f64);
            row.push(max as f64);
        }
        if self.edit_count > 0 {
            row.push(self.edit_sum as f64 / self.edit_count as f64);
        } else {
            row.push(0.0);
        }
        row.push(self.edit_max as f64);
        for h in self.edit_hist {
            row.push(h as f64);
        }
        for h in self.unique_edit_hist {
            row.push(h as f64);
        }
        row.push(self.rare_count as f64);
        row.push(self.rare_max_per_path as f64);
        debug_assert_eq!(row.len(), FEATURE_COUNT);
        row
    }
}

/// Streaming extractor: push timestamp-sorted records (possibly across
/// several files), then `finish`. Prefix state, AS history, and the open
/// bin carry across pushes, so split passes equal a single pass.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    prefixes: HashMap<Prefix, PrefixState>,
    as_history: HashMap<u32, u64>,
    bin_start: Option<i64>,
    acc: BinAcc,
    rows: Vec<Vec<f64>>,
    first_bin: Option<i64>,
    last_ts: Option<i64>,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Self {
        FeatureExtractor {
            cfg,
            prefixes: HashMap::new(),
            as_history: HashMap::new(),
            bin_start: None,
            acc: BinAcc::default(),
            rows: Vec::new(),
            first_bin: None,
            last_ts: None,
        }
    }

    fn close_bin(&mut self) {
        self.rows.push(self.acc.to_row());
        let acc = std::mem::take(&mut self.acc);
        for (asn, delta) in acc.as_delta {
            *self.as_history.entry(asn).or_insert(0) += delta;
        }
    }

    pub fn push(&mut self, rec: &UpdateRecord) -> Result<()> {
        if let Some(last) = self.last_ts {
            if rec.timestamp < last {
                return Err(Error::Data(format!(
                    "records not timestamp-sorted: {} follows {}",
                    rec.timestamp, last
                )));
            }
        }
        self.last_ts = Some(rec.timestamp);

        let bin = rec.timestamp.div_euclid(BIN_SECS) * BIN_SECS;
        match self.bin_start {
            None => {
                self.bin_start = Some(bin);
                self.first_bin = Some(bin);
            }
            Some(open) if bin != open => {
                self.close_bin();
                // Empty bins between active ones become zero rows.
                let mut cursor = open + BIN_SECS;
                while cursor < bin {
                    self.rows.push(vec![0.0; FEATURE_COUNT]);
                    cursor += BIN_SECS;
                }
                self.bin_start = Some(bin);
            }
            Some(_) => {}
        }

        let acc = &mut self.acc;

        if !rec.announced.is_empty() {
            acc.nlri_messages += 1;
            match rec.origin {
                Origin::Igp => acc.igp_messages += 1,
                Origin::Egp => acc.egp_messages += 1,
                Origin::Incomplete => acc.incomplete_messages += 1,
                Origin::Absent => {}
            }
            acc.path_len_sum += rec.as_path.len() as u64;
            acc.path_count += 1;
            acc.max_path_len = acc.max_path_len.max(rec.as_path.len() as u64);
            if !acc.unique_paths.iter().any(|p| p == &rec.as_path) {
                acc.unique_paths.push(rec.as_path.clone());
            }

            // Rare-AS statistics against pre-bin history only.
            let mut rare_in_path = 0u64;
            for asn in &rec.as_path {
                let seen = self.as_history.get(asn).copied().unwrap_or(0);
                if seen < self.cfg.rare_threshold {
                    rare_in_path += 1;
                }
                *acc.as_delta.entry(*asn).or_insert(0) += 1;
            }
            acc.rare_count += rare_in_path;
            acc.rare_max_per_path = acc.rare_max_per_path.max(rare_in_path);
        }

        for prefix in &rec.announced {
            acc.announcements += 1;
            let prev = self.prefixes.get(prefix);
            let mut edit_distance = None;
            match prev {
                Some(state) if state.action == LastAction::Announced => {
                    let same_path = state.path == rec.as_path;
                    let same_origin = state.origin == rec.origin;
                    if same_path && same_origin {
                        acc.duplicates += 1;
                        if self.cfg.flap_definition == FlapDefinition::Duplicate {
                            acc.flaps += 1;
                        }
                    } else if same_path {
                        acc.implicit_same_path += 1;
                    } else {
                        acc.implicit_diff_path += 1;
                    }
                    if !same_origin {
                        acc.origin_changes += 1;
                    }
                    if rec.as_path.len() > state.path.len() {
                        acc.longer_paths += 1;
                    } else if rec.as_path.len() < state.path.len() {
                        acc.shorter_paths += 1;
                    }
                    edit_distance = Some(path_edit_distance(&state.path, &rec.as_path));
                }
                Some(state) if state.action == LastAction::Withdrawn => {
                    acc.new_after_withdraw += 1;
                    if self.cfg.flap_definition == FlapDefinition::ReAnnounceAfterWithdraw {
                        acc.flaps += 1;
                    }
                }
                _ => acc.plain_new += 1,
            }
            if let Some(d) = edit_distance {
                let d = d as u64;
                acc.edit_sum += d;
                acc.edit_count += 1;
                acc.edit_max = acc.edit_max.max(d);
                if d <= 10 {
                    acc.edit_hist[d as usize] += 1;
                    if !acc.unique_hist_paths.iter().any(|p| p == &rec.as_path) {
                        acc.unique_edit_hist[d as usize] += 1;
                    }
                }
                if !acc.unique_hist_paths.iter().any(|p| p == &rec.as_path) {
                    acc.unique_hist_paths.push(rec.as_path.clone());
                }
            }
            self.prefixes.insert(
                *prefix,
                PrefixState {
                    action: LastAction::Announced,
                    path: rec.as_path.clone(),
                    origin: rec.origin,
                },
            );
        }

        for prefix in &rec.withdrawn {
            acc.withdrawals += 1;
            self.prefixes.insert(
                *prefix,
                PrefixState {
                    action: LastAction::Withdrawn,
                    path: Vec::new(),
                    origin: Origin::Absent,
                },
            );
        }

        Ok(())
    }

    pub fn finish(mut self, labels: &EventLabelSpec) -> Result<FeatureSeries> {
        labels.validate()?;
        if self.bin_start.is_none() {
            return Err(Error::Data("no data in range".into()));
        }
        self.close_bin();
        let start_ts = self.first_bin.expect("bin recorded");
        let label_vec: Vec<u32> = (0..self.rows.len())
            .map(|i| labels.label_at(start_ts + i as i64 * BIN_SECS))
            .collect();
        Ok(FeatureSeries {
            start_ts,
            bin_secs: BIN_SECS,
            names: feature_names(),
            rows: self.rows,
            labels: label_vec,
        })
    }
}

/// One-shot extraction over a sorted record stream.
pub fn bin_updates(records: &[UpdateRecord], labels: &EventLabelSpec) -> Result<FeatureSeries> {
    bin_updates_with(records, labels, &FeatureConfig::default())
}

pub fn bin_updates_with(
    records: &[UpdateRecord],
    labels: &EventLabelSpec,
    cfg: &FeatureConfig,
) -> Result<FeatureSeries> {
    let mut ex = FeatureExtractor::new(cfg.clone());
    for rec in records {
        ex.push(rec)?;
    }
    ex.finish(labels)
}

/// Levenshtein distance over AS-number tokens.
pub fn path_edit_distance(a: &[u32], b: &[u32]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// CSV layout shared by feature and augmented series: named numeric
/// columns, then `timestamp`, then `label`.
pub fn write_series_csv(series: &FeatureSeries, path: &std::path::Path) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = series.names.clone();
    header.push("timestamp".into());
    header.push("label".into());
    wtr.write_record(&header)?;
    for (i, row) in series.rows.iter().enumerate() {
        if row.len() != series.names.len() {
            return Err(Error::CsvFormat(format!(
                "row {} has {} columns, expected {}",
                i,
                row.len(),
                series.names.len()
            )));
        }
        let mut rec: Vec<String> = row.iter().map(|v| format!("{}", v)).collect();
        rec.push((series.start_ts + i as i64 * series.bin_secs).to_string());
        rec.push(series.labels[i].to_string());
        wtr.write_record(&rec)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::CsvFormat(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Read a series CSV; when `expected_names` is given the header must match
/// it exactly.
pub fn read_series_csv(
    path: &std::path::Path,
    expected_names: Option<&[String]>,
) -> Result<FeatureSeries> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    if header.len() < 3 {
        return Err(Error::CsvFormat(format!(
            "header has {} columns, need at least one feature plus timestamp/label",
            header.len()
        )));
    }
    let k = header.len() - 2;
    if header[k] != "timestamp" || header[k + 1] != "label" {
        return Err(Error::CsvFormat(format!(
            "trailing columns must be timestamp,label, found {},{}",
            header[k],
            header[k + 1]
        )));
    }
    let names = header[..k].to_vec();
    if let Some(expected) = expected_names {
        if names.len() != expected.len() {
            return Err(Error::CsvFormat(format!(
                "expected {} feature columns, found {}",
                expected.len(),
                names.len()
            )));
        }
        for (got, want) in names.iter().zip(expected) {
            if got != want {
                return Err(Error::CsvFormat(format!(
                    "header column {:?} does not match expected {:?}",
                    got, want
                )));
            }
        }
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut timestamps: Vec<i64> = Vec::new();
    for (ri, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != k + 2 {
            return Err(Error::CsvFormat(format!(
                "row {} has {} columns, expected {}",
                ri + 1,
                record.len(),
                k + 2
            )));
        }
        let mut row = Vec::with_capacity(k);
        for ci in 0..k {
            let v: f64 = record[ci].parse().map_err(|_| {
                Error::CsvFormat(format!(
                    "non-numeric cell at row {}, column {} ({:?})",
                    ri + 1,
                    names[ci],
                    &record[ci]
                ))
            })?;
            row.push(v);
        }
        let ts: i64 = record[k].parse().map_err(|_| {
            Error::CsvFormat(format!("bad timestamp at row {}", ri + 1))
        })?;
        let label: u32 = record[k + 1].parse().map_err(|_| {
            Error::CsvFormat(format!("bad label at row {}", ri + 1))
        })?;
        rows.push(row);
        labels.push(label);
        timestamps.push(ts);
    }
    if rows.is_empty() {
        return Err(Error::CsvFormat("series CSV has no data rows".into()));
    }
    let start_ts = timestamps[0];
    let bin_secs = if timestamps.len() > 1 {
        timestamps[1] - timestamps[0]
    } else {
        BIN_SECS
    };
    if bin_secs <= 0 {
        return Err(Error::CsvFormat("timestamps not increasing".into()));
    }
    for (i, &ts) in timestamps.iter().enumerate() {
        if ts != start_ts + i as i64 * bin_secs {
            return Err(Error::CsvFormat(format!(
                "bins not contiguous at row {}: timestamp {}",
                i + 1,
                ts
            )));
        }
    }
    Ok(FeatureSeries {
        start_ts,
        bin_secs,
        names,
        rows,
        labels,
    })
}

pub fn write_feature_csv(series: &FeatureSeries, path: &std::path::Path) -> Result<()> {
    if series.names != feature_names() {
        return Err(Error::CsvFormat(
            "series does not carry the 46 standard feature columns".into(),
        ));
    }
    write_series_csv(series, path)
}

pub fn read_feature_csv(path: &std::path::Path) -> Result<FeatureSeries> {
    read_series_csv(path, Some(&feature_names()))
}
