//! Seeded synthetic feature series: low-variance periodic baselines with
//! event-specific multiplicative anomaly signatures, used for desk-scale
//! experiments in place of archived BGP corpora.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{feature_names, FeatureSeries, FEATURE_COUNT};

/// Six event archetypes, each spiking a different feature subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Announcement flood (worm-style): volume features x10.
    Worm,
    /// Session/prefix blackout: withdrawals x8, announcements suppressed.
    Blackout,
    /// Origin hijack: ORIGIN churn and implicit withdrawals.
    Hijack,
    /// Route leak: paths lengthen.
    RouteLeak,
    /// Flap storm: duplicates and flaps.
    FlapStorm,
    /// Topology shift: rare ASes and large edit distances.
    PathShift,
}

pub const ALL_EVENT_KINDS: [EventKind; 6] = [
    EventKind::Worm,
    EventKind::Blackout,
    EventKind::Hijack,
    EventKind::RouteLeak,
    EventKind::FlapStorm,
    EventKind::PathShift,
];

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Worm => "worm",
            EventKind::Blackout => "blackout",
            EventKind::Hijack => "hijack",
            EventKind::RouteLeak => "leak",
            EventKind::FlapStorm => "flap",
            EventKind::PathShift => "pathshift",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        ALL_EVENT_KINDS
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown event kind {:?}; expected one of {}",
                    s,
                    ALL_EVENT_KINDS.map(|k| k.name()).join(", ")
                ))
            })
    }

    /// (0-based feature index, multiplier) applied inside the anomaly span.
    pub fn signature(&self) -> Vec<(usize, f64)> {
        match self {
            // announcements, NLRI messages, non-duplicates, plain new x10
            EventKind::Worm => vec![(0, 10.0), (3, 10.0), (4, 10.0), (7, 10.0)],
            EventKind::Blackout => vec![(1, 8.0), (0, 0.3), (3, 0.3)],
            // origin changes, implicit withdrawals (diff path), INCOMPLETE
            EventKind::Hijack => vec![(13, 8.0), (9, 6.0), (12, 5.0)],
            // longer paths, avg/max path length
            EventKind::RouteLeak => vec![(14, 6.0), (16, 3.0), (17, 3.0)],
            // duplicates, flaps, announcements (shared with Worm)
            EventKind::FlapStorm => vec![(2, 8.0), (5, 8.0), (0, 3.0)],
            // rare-AS counts and edit distances
            EventKind::PathShift => vec![(44, 8.0), (45, 6.0), (20, 4.0), (21, 4.0)],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    /// Label id assigned inside the anomaly span (≥ 1).
    pub event: u32,
    pub kind: EventKind,
    /// Number of one-minute rows.
    pub n: usize,
    /// Anomaly span [start, end) in row indices.
    pub anomaly_start: usize,
    pub anomaly_end: usize,
    pub seed: u64,
    /// Scales the signature's deviation from 1; 0 produces a labeled
    /// span with an unchanged distribution (null effect).
    pub amplitude: f64,
}

impl SynthSpec {
    /// Anomaly over the central 10% of the timeline.
    pub fn new(event: u32, kind: EventKind, n: usize, seed: u64) -> Self {
        SynthSpec {
            event,
            kind,
            n,
            anomaly_start: n * 45 / 100,
            anomaly_end: n * 55 / 100,
            seed,
            amplitude: 1.0,
        }
    }
}

/// Baseline level for one feature: deterministic variety across columns.
fn base_level(c: usize) -> f64 {
    8.0 + 3.0 * ((c * 7) % 13) as f64
}

/// Period of the baseline's seasonal component, matching the default
/// STL period so decomposition captures it.
pub const BASELINE_PERIOD: usize = 35;

pub fn synth_events(spec: &SynthSpec) -> Result<FeatureSeries> {
    if spec.event == 0 {
        return Err(Error::Config("synthetic event label must be at least 1".into()));
    }
    if spec.n == 0 {
        return Err(Error::Config("series length must be positive".into()));
    }
    if spec.anomaly_start >= spec.anomaly_end || spec.anomaly_end > spec.n {
        return Err(Error::Config(format!(
            "anomaly span [{}, {}) outside series of {} rows",
            spec.anomaly_start, spec.anomaly_end, spec.n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let signature = spec.kind.signature();
    let mut rows = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for t in 0..spec.n {
        let in_anomaly = (spec.anomaly_start..spec.anomaly_end).contains(&t);
        let mut row = Vec::with_capacity(FEATURE_COUNT);
        for c in 0..FEATURE_COUNT {
            let seasonal =
                1.0 + 0.25 * (2.0 * std::f64::consts::PI * (t + c) as f64 / BASELINE_PERIOD as f64).sin();
            let noise = 1.0 + rng.gen_range(-0.05..0.05);
            let mut v = base_level(c) * seasonal * noise;
            if in_anomaly {
                if let Some(&(_, mult)) = signature.iter().find(|(idx, _)| *idx == c) {
                    v *= 1.0 + (mult - 1.0) * spec.amplitude;
                }
            }
            row.push(v.max(0.0));
        }
        rows.push(row);
        labels.push(if in_anomaly { spec.event } else { 0 });
    }
    Ok(FeatureSeries {
        start_ts: 0,
        bin_secs: 60,
        names: feature_names(),
        rows,
        labels,
    })
}
