//! Acceptance gate: one test per release criterion, each printing a single
//! PASS line on success (run with `-- --nocapture` to see them live).
//! Numeric oracles are transcribed independently inside this file rather
//! than reusing library helpers.

use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bgpscope_core::augment::{stl_decompose, StlConfig};
use bgpscope_core::features::{
    bin_updates, path_edit_distance, EventInterval, EventLabelSpec,
};
use bgpscope_core::ingest::{
    parse_mrt_stream, IngestConfig, Origin, Prefix, UpdateRecord,
};
use bgpscope_core::model::{
    build_forward, gat_forward, load_checkpoint, model_forward, Activation, LeakyMode,
    MGatParams, ModelConfig,
};
use bgpscope_core::tensor::{Graph, Tensor};
use bgpscope_core::train::{metrics_from_confusion, ConfusionMatrix};
use bgpscope_core::Error;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_bgpscope")
}

/// Run the CLI, panicking with its stderr on a nonzero exit.
fn run_cli(args: &[&str]) {
    let out = Command::new(bin())
        .args(args)
        .output()
        .expect("spawn bgpscope");
    assert!(
        out.status.success(),
        "FAIL: bgpscope {:?} exited {:?}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).expect("read json artifact");
    serde_json::from_str(&text).expect("parse json artifact")
}

fn report_f1(path: &Path) -> f64 {
    read_json(path)["f1"].as_f64().expect("f1 field")
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness on a toy model.
// ---------------------------------------------------------------------------

#[test]
fn c01_gradient_check_toy_model() {
    let started = Instant::now();
    let (m, k, hidden, classes) = (5usize, 2usize, 3usize, 2usize);
    let mut cfg = ModelConfig::new(m, k, classes);
    cfg.hidden = hidden;
    cfg.dropout = 0.0; // deterministic loss for finite differences
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let params = MGatParams::init(cfg, &mut rng);

    let mut window = Tensor::zeros(m, k);
    for r in 0..m {
        for c in 0..k {
            window.set(r, c, ((r * k + c) as f64 * 0.37).sin() * 0.5 + 0.5);
        }
    }
    let target = 1usize;
    let weight = 1.3;

    let loss_of = |p: &MGatParams| -> f64 {
        let mut g = Graph::new();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let pass = build_forward(&mut g, p, &window, false, &mut r).unwrap();
        let loss = g.weighted_ce(pass.logits, target, weight).unwrap();
        g.value(loss).item()
    };

    // Analytic gradients once.
    let mut g = Graph::new();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let pass = build_forward(&mut g, &params, &window, false, &mut r).unwrap();
    let loss = g.weighted_ce(pass.logits, target, weight).unwrap();
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = pass.params.0.iter().map(|&id| g.grad(id)).collect();

    let h = 1e-5;
    let names: Vec<&str> = params.named_tensors().iter().map(|(n, _)| *n).collect();
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for (pi, name) in names.iter().enumerate() {
        let len = params.named_tensors()[pi].1.len();
        for ei in 0..len {
            let mut plus = params.clone();
            plus.named_tensors_mut()[pi].1.data_mut()[ei] += h;
            let mut minus = params.clone();
            minus.named_tensors_mut()[pi].1.data_mut()[ei] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let a = analytic[pi].data()[ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(
                rel < 1e-4,
                "FAIL: gradient of {}[{}]: analytic {} vs numeric {} (rel {})",
                name,
                ei,
                a,
                numeric,
                rel
            );
            checked += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "FAIL: gradient check took {:?} (limit 10 s)",
        elapsed
    );
    println!(
        "PASS: gradient check — {} parameters match central differences (worst rel err {:.2e}) in {:?}",
        checked, worst, elapsed
    );
}

// ---------------------------------------------------------------------------
// 2. GAT layer equals an independent scalar transcription.
// ---------------------------------------------------------------------------

/// Scalar reference GAT, written loop-by-loop from the layer definition:
/// e_ij = LeakyReLU(a^T [W h_i || W h_j]), alpha = row softmax, out =
/// tanh(alpha . (W h)). Returns (output N x F, alpha N x N).
fn scalar_gat(
    nodes: &[Vec<f64>],
    w: &[Vec<f64>],
    a: &[f64],
    slope: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = nodes.len();
    let f = w.len();
    let mut wh = vec![vec![0.0; f]; n];
    for i in 0..n {
        for r in 0..f {
            let mut s = 0.0;
            for c in 0..f {
                s += w[r][c] * nodes[i][c];
            }
            wh[i][r] = s;
        }
    }
    let mut alpha = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut logits = vec![0.0; n];
        for j in 0..n {
            let mut e = 0.0;
            for r in 0..f {
                e += a[r] * wh[i][r] + a[f + r] * wh[j][r];
            }
            logits[j] = if e >= 0.0 { e } else { slope * e };
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..n {
            alpha[i][j] = (logits[j] - max).exp();
            denom += alpha[i][j];
        }
        for j in 0..n {
            alpha[i][j] /= denom;
        }
    }
    let mut out = vec![vec![0.0; f]; n];
    for i in 0..n {
        for r in 0..f {
            let mut s = 0.0;
            for j in 0..n {
                s += alpha[i][j] * wh[j][r];
            }
            out[i][r] = s.tanh();
        }
    }
    (out, alpha)
}

#[test]
fn c02_gat_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let n = rng.gen_range(1..=4usize);
        let f = rng.gen_range(1..=4usize);
        let nodes: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let w: Vec<Vec<f64>> = (0..f)
            .map(|_| (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let a: Vec<f64> = (0..2 * f).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut g = Graph::new();
        let nodes_id = g.leaf(Tensor::from_vec(n, f, nodes.concat()).unwrap());
        let w_id = g.leaf(Tensor::from_vec(f, f, w.concat()).unwrap());
        let a_id = g.leaf(Tensor::from_vec(2 * f, 1, a.clone()).unwrap());
        let (out_id, att) = gat_forward(
            &mut g,
            nodes_id,
            w_id,
            a_id,
            Activation::Tanh,
            LeakyMode::Slope(0.2),
        )
        .unwrap();

        let (ref_out, ref_alpha) = scalar_gat(&nodes, &w, &a, 0.2);
        for i in 0..n {
            for r in 0..f {
                let got = g.value(out_id).get(i, r);
                assert!(
                    (got - ref_out[i][r]).abs() <= 1e-12,
                    "FAIL: case {}: output[{}][{}] {} vs oracle {}",
                    case,
                    i,
                    r,
                    got,
                    ref_out[i][r]
                );
            }
            for j in 0..n {
                assert!(
                    (att.get(i, j) - ref_alpha[i][j]).abs() <= 1e-12,
                    "FAIL: case {}: alpha[{}][{}] {} vs oracle {}",
                    case,
                    i,
                    j,
                    att.get(i, j),
                    ref_alpha[i][j]
                );
            }
        }
    }
    println!("PASS: GAT layer matches the scalar oracle within 1e-12 on 100 random instances");
}

// ---------------------------------------------------------------------------
// 3. STL identity and sanity examples.
// ---------------------------------------------------------------------------

#[test]
fn c03_stl_identity_and_examples() {
    // Identity on random inputs.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg12 = StlConfig::new(12).unwrap();
    for _ in 0..20 {
        let n = rng.gen_range(60..200usize);
        let mut level: f64 = rng.gen_range(5.0..50.0);
        let y: Vec<f64> = (0..n)
            .map(|_| {
                level += rng.gen_range(-1.0..1.0);
                level
            })
            .collect();
        let d = stl_decompose(&y, &cfg12).unwrap();
        for i in 0..n {
            let resid = y[i] - (d.trend[i] + d.seasonal[i] + d.residual[i]);
            assert!(
                resid.abs() <= 1e-9,
                "FAIL: STL identity violated by {} at index {}",
                resid,
                i
            );
        }
    }

    // Constant series: no seasonal or residual structure.
    let constant = vec![5.0; 240];
    let d = stl_decompose(&constant, &cfg12).unwrap();
    for i in 0..240 {
        assert!(
            d.seasonal[i].abs() < 1e-6 && d.residual[i].abs() < 1e-6,
            "FAIL: constant series decomposition leaks: S={} R={} at {}",
            d.seasonal[i],
            d.residual[i],
            i
        );
    }

    // Pure sinusoid, p = 12, n = 240: seasonal captures the wave, trend flat.
    let n = 240;
    let y: Vec<f64> = (0..n)
        .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 12.0).sin())
        .collect();
    let d = stl_decompose(&y, &cfg12).unwrap();
    let central = n / 4..3 * n / 4;
    for t in central.clone() {
        assert!(
            d.trend[t].abs() < 0.05,
            "FAIL: sinusoid trend {} at index {} exceeds 0.05",
            d.trend[t],
            t
        );
    }
    for phase in 0..12 {
        let pts: Vec<usize> = central.clone().filter(|t| t % 12 == phase).collect();
        let mean = |v: &[f64]| pts.iter().map(|&t| v[t]).sum::<f64>() / pts.len() as f64;
        let diff = (mean(&d.seasonal) - mean(&y)).abs();
        assert!(
            diff < 0.05,
            "FAIL: sinusoid cycle-subseries mean off by {} at phase {}",
            diff,
            phase
        );
    }

    // Linear ramp, p = 7, n = 140: trend tracks the line, seasonal flat.
    let cfg7 = StlConfig::new(7).unwrap();
    let n = 140;
    let y: Vec<f64> = (0..n).map(|t| t as f64).collect();
    let d = stl_decompose(&y, &cfg7).unwrap();
    for t in n / 4..3 * n / 4 {
        assert!(
            (d.trend[t] - t as f64).abs() < 0.5,
            "FAIL: ramp trend {} at index {} off the line by more than 0.5",
            d.trend[t],
            t
        );
        assert!(
            d.seasonal[t].abs() < 0.1,
            "FAIL: ramp seasonal {} at index {} exceeds 0.1",
            d.seasonal[t],
            t
        );
    }
    println!("PASS: STL identity within 1e-9 and constant/sinusoid/ramp examples within tolerance");
}

// ---------------------------------------------------------------------------
// 4. Attention matrices are row-stochastic in both views.
// ---------------------------------------------------------------------------

#[test]
fn c04_attention_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut tested = 0usize;
    for seed in [1u64, 2, 3] {
        let mut cfg = ModelConfig::new(6, 4, 3);
        cfg.hidden = 5;
        let mut prng = ChaCha8Rng::seed_from_u64(seed);
        let params = MGatParams::init(cfg, &mut prng);
        for _ in 0..10 {
            let data: Vec<f64> = (0..6 * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let window = Tensor::from_vec(6, 4, data).unwrap();
            for training in [false, true] {
                let (_, feat, time) =
                    model_forward(&params, &window, training, &mut rng).unwrap();
                for (label, att) in [("feature", &feat), ("temporal", &time)] {
                    for i in 0..att.size() {
                        let sum: f64 = (0..att.size()).map(|j| att.get(i, j)).sum();
                        assert!(
                            (sum - 1.0).abs() <= 1e-12,
                            "FAIL: {} attention row {} sums to {}",
                            label,
                            i,
                            sum
                        );
                    }
                }
                tested += 1;
            }
        }
    }
    println!(
        "PASS: attention row sums within 1e-12 of 1 in both views across {} forward passes",
        tested
    );
}

// ---------------------------------------------------------------------------
// 5. Feature-extractor ledger examples and fuzzed invariants.
// ---------------------------------------------------------------------------

fn prefix(a: u8, b: u8, c: u8, len: u8) -> Prefix {
    Prefix::new(IpAddr::V4(Ipv4Addr::new(a, b, c, 0)), len).unwrap()
}

fn announce(ts: i64, p: Prefix, path: &[u32], origin: Origin) -> UpdateRecord {
    UpdateRecord {
        timestamp: ts,
        peer_as: 65000,
        peer_ip: IpAddr::V4(Ipv4Addr::new(192, 0, 2, 1)),
        announced: vec![p],
        withdrawn: vec![],
        as_path: path.to_vec(),
        has_as_set: false,
        origin,
    }
}

fn withdraw(ts: i64, p: Prefix) -> UpdateRecord {
    UpdateRecord {
        timestamp: ts,
        peer_as: 65000,
        peer_ip: IpAddr::V4(Ipv4Addr::new(192, 0, 2, 1)),
        announced: vec![],
        withdrawn: vec![p],
        as_path: vec![],
        has_as_set: false,
        origin: Origin::Absent,
    }
}

/// Reference Levenshtein distance, full-matrix transcription.
fn lev(a: &[u32], b: &[u32]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1)
                .min(d[i - 1][j - 1] + sub);
        }
    }
    d[n][m]
}

#[test]
fn c05_feature_ledger_examples_and_invariants() {
    let no_labels = EventLabelSpec::default();

    // Two fresh announcements in one minute.
    let recs = vec![
        announce(60, prefix(10, 0, 0, 24), &[64500], Origin::Igp),
        announce(90, prefix(10, 0, 1, 24), &[64500, 64501], Origin::Igp),
    ];
    let s = bin_updates(&recs, &no_labels).unwrap();
    assert_eq!(s.rows[0][0], 2.0, "FAIL: announcements"); // field 1
    assert_eq!(s.rows[0][7], 2.0, "FAIL: plain new"); // field 8
    assert_eq!(s.rows[0][1], 0.0, "FAIL: withdrawals"); // field 2
    assert_eq!(s.rows[0][2], 0.0, "FAIL: duplicates"); // field 3

    // Same prefix, identical path, same minute: duplicate + flap.
    let p = prefix(10, 0, 0, 24);
    let recs = vec![
        announce(0, p, &[64500, 64501], Origin::Igp),
        announce(30, p, &[64500, 64501], Origin::Igp),
    ];
    let s = bin_updates(&recs, &no_labels).unwrap();
    assert_eq!(s.rows[0][0], 2.0, "FAIL: announcements"); // field 1
    assert_eq!(s.rows[0][2], 1.0, "FAIL: duplicate"); // field 3
    assert_eq!(s.rows[0][5], 1.0, "FAIL: flap"); // field 6

    // Empty minute between two active ones: zero row, label from interval.
    let labels = EventLabelSpec(vec![EventInterval {
        event: 3,
        start: 60,
        end: 120,
    }]);
    let recs = vec![
        announce(10, prefix(10, 0, 0, 24), &[64500], Origin::Igp),
        announce(130, prefix(10, 0, 1, 24), &[64500], Origin::Igp),
    ];
    let s = bin_updates(&recs, &labels).unwrap();
    assert_eq!(s.len(), 3);
    assert!(s.rows[1].iter().all(|&v| v == 0.0), "FAIL: empty bin not zero");
    assert_eq!(s.labels, vec![0, 3, 0], "FAIL: empty-bin label");

    // Edit-distance examples.
    assert_eq!(path_edit_distance(&[64500, 64501], &[64500, 64501]), 0);
    assert_eq!(path_edit_distance(&[1, 2, 3], &[1, 3]), 1);
    assert_eq!(path_edit_distance(&[1, 2], &[3, 4]), 2);

    // Rare ASes: fresh history makes everything rare.
    let recs = vec![announce(0, prefix(10, 0, 0, 24), &[1, 2], Origin::Igp)];
    let s = bin_updates(&recs, &no_labels).unwrap();
    assert_eq!(s.rows[0][44], 2.0, "FAIL: rare count"); // field 45
    assert_eq!(s.rows[0][45], 2.0, "FAIL: rare max per path"); // field 46

    // Threshold boundary: an AS seen exactly R=5 times before is not rare.
    let mut recs: Vec<UpdateRecord> = (0..5)
        .map(|i| announce(i, prefix(10, 0, i as u8, 24), &[64500], Origin::Igp))
        .collect();
    recs.push(announce(60, prefix(10, 1, 0, 24), &[64500], Origin::Igp));
    let s = bin_updates(&recs, &no_labels).unwrap();
    assert_eq!(s.rows[0][44], 5.0, "FAIL: first-bin rare count");
    assert_eq!(s.rows[1][44], 0.0, "FAIL: boundary rare count");
    assert_eq!(s.rows[1][45], 0.0, "FAIL: boundary rare max");

    // Paths [[1,2],[1,9]] where only 9 is still rare.
    let mut recs: Vec<UpdateRecord> = (0..5)
        .map(|i| announce(60 * i, prefix(10, 0, i as u8, 24), &[1, 2], Origin::Igp))
        .collect();
    recs.push(announce(300, prefix(10, 1, 0, 24), &[1, 2], Origin::Igp));
    recs.push(announce(301, prefix(10, 1, 1, 24), &[1, 9], Origin::Igp));
    let s = bin_updates(&recs, &no_labels).unwrap();
    assert_eq!(s.rows[5][44], 1.0, "FAIL: rare count with warm history");
    assert_eq!(s.rows[5][45], 1.0, "FAIL: rare max with warm history");

    // Fuzzed invariants on 1,000 random streams, with an independent
    // shadow count for duplicates and the edit-distance histogram.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let prefixes: Vec<Prefix> = (0..8).map(|i| prefix(10, 0, i, 24)).collect();
    let paths: Vec<Vec<u32>> = vec![
        vec![1],
        vec![1, 2],
        vec![1, 2, 3],
        vec![2, 3],
        vec![4, 5, 6, 7],
        vec![1, 9],
    ];
    for stream in 0..1000 {
        let n_recs = rng.gen_range(1..40usize);
        let mut ts = rng.gen_range(0..120i64);
        let mut recs = Vec::with_capacity(n_recs);
        for _ in 0..n_recs {
            let p = prefixes[rng.gen_range(0..prefixes.len())];
            if rng.gen_bool(0.75) {
                let path = paths[rng.gen_range(0..paths.len())].clone();
                let origin = match rng.gen_range(0..3) {
                    0 => Origin::Igp,
                    1 => Origin::Egp,
                    _ => Origin::Incomplete,
                };
                recs.push(announce(ts, p, &path, origin));
            } else {
                recs.push(withdraw(ts, p));
            }
            ts += rng.gen_range(0..90i64);
        }
        let series = bin_updates(&recs, &no_labels).unwrap();

        // Shadow pass: replay the stream against an independent state table.
        let first_bin = recs[0].timestamp.div_euclid(60);
        let mut shadow_hist = vec![0u64; series.len()];
        let mut shadow_dup = vec![0u64; series.len()];
        let mut state: HashMap<Prefix, Option<(Vec<u32>, Origin)>> = HashMap::new();
        for rec in &recs {
            let bin = (rec.timestamp.div_euclid(60) - first_bin) as usize;
            for p in &rec.announced {
                if let Some(Some((old_path, old_origin))) = state.get(p) {
                    if lev(old_path, &rec.as_path) <= 10 {
                        shadow_hist[bin] += 1;
                    }
                    if *old_path == rec.as_path && *old_origin == rec.origin {
                        shadow_dup[bin] += 1;
                    }
                }
                state.insert(*p, Some((rec.as_path.clone(), rec.origin)));
            }
            for p in &rec.withdrawn {
                state.insert(*p, None);
            }
        }

        for (b, row) in series.rows.iter().enumerate() {
            assert!(
                row.iter().all(|&v| v >= 0.0),
                "FAIL: stream {}: negative count",
                stream
            );
            // field5 + field3 = field1
            assert_eq!(
                row[4] + row[2],
                row[0],
                "FAIL: stream {} bin {}: non-duplicates + duplicates != announcements",
                stream,
                b
            );
            assert_eq!(
                row[2], shadow_dup[b] as f64,
                "FAIL: stream {} bin {}: duplicate count vs shadow",
                stream, b
            );
            // field9 + field10 <= field1
            assert!(row[8] + row[9] <= row[0]);
            // Histogram sum identity against the shadow count.
            let hist_sum: f64 = row[22..=32].iter().sum();
            assert_eq!(
                hist_sum, shadow_hist[b] as f64,
                "FAIL: stream {} bin {}: edit-distance histogram sum vs shadow",
                stream, b
            );
            // Averages never exceed maxima.
            assert!(row[16] <= row[17] && row[18] <= row[19]);
        }
    }
    println!("PASS: feature ledger hand examples exact; invariants hold on 1000 fuzzed streams");
}

// ---------------------------------------------------------------------------
// 6. MRT parser fixtures, error paths, counter conservation.
// ---------------------------------------------------------------------------

mod mrt {
    //! Fixture bytes re-assembled here, field by field, from the record
    //! layouts so the parser is checked against the values written.

    pub fn header(ts: u32, mrt_type: u16, subtype: u16, len: u32) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&ts.to_be_bytes());
        v.extend_from_slice(&mrt_type.to_be_bytes());
        v.extend_from_slice(&subtype.to_be_bytes());
        v.extend_from_slice(&len.to_be_bytes());
        v
    }

    pub fn bgp4mp(peer_as: u16, peer_ip: [u8; 4], bgp_msg: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&peer_as.to_be_bytes());
        v.extend_from_slice(&0u16.to_be_bytes()); // local AS
        v.extend_from_slice(&0u16.to_be_bytes()); // interface index
        v.extend_from_slice(&1u16.to_be_bytes()); // AFI = IPv4
        v.extend_from_slice(&peer_ip);
        v.extend_from_slice(&[10, 0, 0, 254]); // local IP
        v.extend_from_slice(bgp_msg);
        v
    }

    pub fn bgp_message(msg_type: u8, body: &[u8]) -> Vec<u8> {
        let mut v = vec![0xff; 16];
        v.extend_from_slice(&((19 + body.len()) as u16).to_be_bytes());
        v.push(msg_type);
        v.extend_from_slice(body);
        v
    }

    pub fn record(ts: u32, subtype_body: &[u8]) -> Vec<u8> {
        let mut rec = header(ts, 16, 1, subtype_body.len() as u32);
        rec.extend_from_slice(subtype_body);
        rec
    }

    /// UPDATE announcing 10.0.0.0/8 with AS_PATH [64500, 64501], ORIGIN IGP.
    pub fn announce(ts: u32, peer_as: u16) -> Vec<u8> {
        let attrs: Vec<u8> = [
            vec![0x40u8, 1, 1, 0], // ORIGIN IGP
            // AS_PATH: one AS_SEQUENCE of two 16-bit ASes
            vec![0x40, 2, 6, 2, 2, 0xfb, 0xf4, 0xfb, 0xf5],
        ]
        .concat();
        let mut body = Vec::new();
        body.extend_from_slice(&0u16.to_be_bytes()); // no withdrawals
        body.extend_from_slice(&(attrs.len() as u16).to_be_bytes());
        body.extend_from_slice(&attrs);
        body.extend_from_slice(&[8, 10]); // NLRI 10.0.0.0/8
        record(ts, &bgp4mp(peer_as, [192, 0, 2, 1], &bgp_message(2, &body)))
    }

    /// UPDATE withdrawing 192.0.2.0/24.
    pub fn withdraw(ts: u32, peer_as: u16) -> Vec<u8> {
        let mut body = Vec::new();
        body.extend_from_slice(&4u16.to_be_bytes());
        body.extend_from_slice(&[24, 192, 0, 2]);
        body.extend_from_slice(&0u16.to_be_bytes()); // no attributes
        record(ts, &bgp4mp(peer_as, [192, 0, 2, 1], &bgp_message(2, &body)))
    }

    pub fn keepalive(ts: u32, peer_as: u16) -> Vec<u8> {
        record(ts, &bgp4mp(peer_as, [192, 0, 2, 1], &bgp_message(4, &[])))
    }

    pub fn unknown_type(ts: u32) -> Vec<u8> {
        let mut rec = header(ts, 99, 0, 4);
        rec.extend_from_slice(&[0, 0, 0, 0]);
        rec
    }

    /// UPDATE whose body is too short to parse: dropped, not fatal.
    pub fn corrupt(ts: u32, peer_as: u16) -> Vec<u8> {
        record(ts, &bgp4mp(peer_as, [192, 0, 2, 1], &bgp_message(2, &[1])))
    }
}

#[test]
fn c06_mrt_fixtures_and_counters() {
    let cfg = IngestConfig::default();

    // Announce fixture decodes to its construction values.
    let bytes = mrt::announce(1000, 64496);
    let (recs, counters) = parse_mrt_stream(&bytes, &cfg).unwrap();
    assert_eq!(recs.len(), 1);
    let r = &recs[0];
    assert_eq!(r.timestamp, 1000);
    assert_eq!(r.peer_as, 64496);
    assert_eq!(r.peer_ip, IpAddr::V4(Ipv4Addr::new(192, 0, 2, 1)));
    assert_eq!(r.announced, vec![prefix(10, 0, 0, 8)]);
    assert!(r.withdrawn.is_empty());
    assert_eq!(r.as_path, vec![64500, 64501]);
    assert_eq!(r.origin, Origin::Igp);
    assert_eq!(counters.emitted, 1);

    // Withdraw fixture.
    let bytes = mrt::withdraw(2000, 64497);
    let (recs, _) = parse_mrt_stream(&bytes, &cfg).unwrap();
    assert_eq!(recs[0].withdrawn, vec![prefix(192, 0, 2, 24)]);
    assert!(recs[0].announced.is_empty());

    // Truncated header after a valid record: error carries the offset.
    let mut bytes = mrt::announce(1000, 64496);
    let valid_len = bytes.len() as u64;
    bytes.extend_from_slice(&[0, 1, 2, 3, 4]);
    match parse_mrt_stream(&bytes, &cfg) {
        Err(Error::Mrt { offset, .. }) => assert_eq!(offset, valid_len),
        other => panic!("FAIL: truncated header gave {:?}", other.map(|_| ())),
    }

    // Body shorter than the declared length: error at the record start.
    let mut bytes = mrt::header(0, 16, 1, 100);
    bytes.extend_from_slice(&[0; 10]);
    match parse_mrt_stream(&bytes, &cfg) {
        Err(Error::Mrt { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("FAIL: truncated body gave {:?}", other.map(|_| ())),
    }

    // Corrupt BGP payload degrades to a dropped record, not an error.
    let (recs, counters) = parse_mrt_stream(&mrt::corrupt(0, 1), &cfg).unwrap();
    assert!(recs.is_empty());
    assert_eq!(counters.dropped, 1);

    // Counter conservation on fuzzed concatenations.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.gen_range(1..30usize);
        let mut bytes = Vec::new();
        let (mut updates, mut keepalives, mut unknowns, mut corrupts) = (0u64, 0u64, 0u64, 0u64);
        let mut ts = 0u32;
        for _ in 0..n {
            match rng.gen_range(0..5) {
                0 | 1 => {
                    bytes.extend_from_slice(&mrt::announce(ts, 64496));
                    updates += 1;
                }
                2 => {
                    bytes.extend_from_slice(&mrt::withdraw(ts, 64496));
                    updates += 1;
                }
                3 => {
                    bytes.extend_from_slice(&mrt::keepalive(ts, 64496));
                    keepalives += 1;
                }
                4 if rng.gen_bool(0.5) => {
                    bytes.extend_from_slice(&mrt::unknown_type(ts));
                    unknowns += 1;
                }
                _ => {
                    bytes.extend_from_slice(&mrt::corrupt(ts, 64496));
                    corrupts += 1;
                }
            }
            ts += rng.gen_range(0..10);
        }
        let (recs, c) = parse_mrt_stream(&bytes, &cfg).unwrap();
        assert_eq!(c.total(), n as u64, "FAIL: counter conservation");
        assert_eq!(c.emitted, updates);
        assert_eq!(c.skipped_non_update, keepalives);
        assert_eq!(c.skipped_unknown_type, unknowns);
        assert_eq!(c.dropped, corrupts);
        assert_eq!(recs.len() as u64, updates);
    }
    println!("PASS: MRT fixtures decode exactly, error paths fire, counters conserve on 200 fuzzed streams");
}

// ---------------------------------------------------------------------------
// 7. Metrics match a brute-force confusion counter.
// ---------------------------------------------------------------------------

#[test]
fn c07_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let safe_div = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    for case in 0..1000 {
        let classes = rng.gen_range(2..=5usize);
        let len = rng.gen_range(5..60usize);
        let truth: Vec<usize> = (0..len).map(|_| rng.gen_range(0..classes)).collect();
        let preds: Vec<usize> = (0..len).map(|_| rng.gen_range(0..classes)).collect();

        let mut cm = ConfusionMatrix::new(classes);
        for i in 0..len {
            cm.record(truth[i], preds[i]);
        }
        let report = metrics_from_confusion(&cm, "test".into(), 0);

        // Brute force straight from the vectors.
        let correct = (0..len).filter(|&i| truth[i] == preds[i]).count();
        let accuracy = correct as f64 / len as f64;
        let mut per: Vec<(f64, f64, f64)> = Vec::new();
        for c in 0..classes {
            let tp = (0..len).filter(|&i| truth[i] == c && preds[i] == c).count() as f64;
            let fp = (0..len).filter(|&i| truth[i] != c && preds[i] == c).count() as f64;
            let fn_ = (0..len).filter(|&i| truth[i] == c && preds[i] != c).count() as f64;
            let p = safe_div(tp, tp + fp);
            let r = safe_div(tp, tp + fn_);
            let f1 = safe_div(2.0 * p * r, p + r);
            per.push((p, r, f1));
        }
        let (ep, er, ef) = if classes == 2 {
            per[1]
        } else {
            let n = classes as f64;
            (
                per.iter().map(|x| x.0).sum::<f64>() / n,
                per.iter().map(|x| x.1).sum::<f64>() / n,
                per.iter().map(|x| x.2).sum::<f64>() / n,
            )
        };
        for (name, got, want) in [
            ("accuracy", report.accuracy, accuracy),
            ("precision", report.precision, ep),
            ("recall", report.recall, er),
            ("f1", report.f1, ef),
        ] {
            assert!(
                (got - want).abs() <= 1e-12,
                "FAIL: case {}: {} {} vs brute force {}",
                case,
                name,
                got,
                want
            );
        }
        for c in 0..classes {
            assert!((report.per_class[c].precision - per[c].0).abs() <= 1e-12);
            assert!((report.per_class[c].recall - per[c].1).abs() <= 1e-12);
            assert!((report.per_class[c].f1 - per[c].2).abs() <= 1e-12);
        }
    }
    println!("PASS: metrics equal the brute-force confusion oracle on 1000 random vectors");
}

// ---------------------------------------------------------------------------
// 8. End-to-end synthetic detection and ablation ordering.
// ---------------------------------------------------------------------------

#[test]
fn c08_end_to_end_pipeline_and_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("worm.csv");
    let report = dir.path().join("report.json");
    run_cli(&[
        "synth", "--events", "worm", "--n", "2000", "--seed", "7",
        "--out", series.to_str().unwrap(),
    ]);

    let started = Instant::now();
    run_cli(&[
        "pipeline",
        "--in", series.to_str().unwrap(),
        "--out", report.to_str().unwrap(),
        "--period", "35", "--window", "25", "--lr", "0.005", "--seed", "7",
    ]);
    let elapsed = started.elapsed();
    let f1 = report_f1(&report);
    assert!(
        f1 >= 0.90,
        "FAIL: end-to-end test F1 {} below 0.90",
        f1
    );
    assert!(
        elapsed.as_secs() < 300,
        "FAIL: pipeline took {:?} (limit 5 min)",
        elapsed
    );

    // Ablation: the full model must not lose to the window-only arm.
    let ab_series = dir.path().join("ab.csv");
    let ab_out = dir.path().join("ablation.csv");
    run_cli(&[
        "synth", "--events", "worm", "--n", "800", "--start", "320", "--end", "480",
        "--seed", "21", "--out", ab_series.to_str().unwrap(),
    ]);
    run_cli(&[
        "ablate",
        "--in", ab_series.to_str().unwrap(),
        "--out", ab_out.to_str().unwrap(),
        "--arms", "full,window",
        "--period", "35", "--window", "10", "--hidden", "32",
        "--lr", "0.005", "--seed", "5",
    ]);
    let csv = std::fs::read_to_string(&ab_out).unwrap();
    let f1_of = |arm: &str| -> f64 {
        csv.lines()
            .find(|l| l.starts_with(&format!("{},", arm)))
            .unwrap_or_else(|| panic!("FAIL: arm {} missing from {}", arm, csv))
            .rsplit(',')
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    let full = f1_of("feature_gat+temporal_gat+stl+window");
    let window_only = f1_of("window");
    assert!(
        full >= window_only - 1e-9,
        "FAIL: full-model F1 {} below window-only F1 {}",
        full,
        window_only
    );
    println!(
        "PASS: end-to-end F1 {:.4} in {:?} (limit 5 min); ablation full {:.4} >= window-only {:.4}",
        f1, elapsed, full, window_only
    );
}

// ---------------------------------------------------------------------------
// 9. Determinism: same seed, same inputs, identical outputs.
// ---------------------------------------------------------------------------

#[test]
fn c09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    run_cli(&[
        "synth", "--events", "worm", "--n", "400", "--seed", "3",
        "--out", series.to_str().unwrap(),
    ]);
    let run = |tag: &str| -> (std::path::PathBuf, std::path::PathBuf) {
        let report = dir.path().join(format!("report_{}.json", tag));
        let model = dir.path().join(format!("model_{}.json", tag));
        run_cli(&[
            "pipeline",
            "--in", series.to_str().unwrap(),
            "--out", report.to_str().unwrap(),
            "--model", model.to_str().unwrap(),
            "--period", "12", "--window", "5", "--hidden", "8",
            "--lr", "0.01", "--epochs", "8", "--seed", "3",
        ]);
        (report, model)
    };
    let (r1, m1) = run("a");
    let (r2, m2) = run("b");

    let report1 = std::fs::read(&r1).unwrap();
    let report2 = std::fs::read(&r2).unwrap();
    assert_eq!(report1, report2, "FAIL: evaluation reports differ between runs");

    let p1 = load_checkpoint(&m1).unwrap();
    let p2 = load_checkpoint(&m2).unwrap();
    assert_eq!(p1.config, p2.config, "FAIL: checkpoint configs differ");
    for ((name, a), (_, b)) in p1.named_tensors().iter().zip(p2.named_tensors().iter()) {
        assert_eq!(a, b, "FAIL: checkpoint array {} differs between runs", name);
    }
    println!("PASS: repeated runs with one seed produce identical reports and checkpoints");
}

// ---------------------------------------------------------------------------
// 10. Multi-class and held-out-event protocols.
// ---------------------------------------------------------------------------

#[test]
fn c10_multiclass_and_holdout() {
    let dir = tempfile::tempdir().unwrap();
    let kinds = ["worm", "blackout", "hijack", "leak", "flap", "pathshift"];
    let mut files: Vec<String> = Vec::new();
    for (i, kind) in kinds.iter().enumerate() {
        let path = dir.path().join(format!("ev{}.csv", i + 1));
        run_cli(&[
            "synth", "--events", kind,
            "--n", "1000", "--start", "200", "--end", "800",
            "--event-id", &(i + 1).to_string(),
            "--seed", &(41 + i).to_string(),
            "--out", path.to_str().unwrap(),
        ]);
        files.push(path.to_str().unwrap().to_string());
    }

    let stage: [&str; 9] = [
        "--no-stl", "--window", "8", "--hidden", "16", "--lr", "0.01",
        "--seed", "7",
    ];

    let mc_report = dir.path().join("multiclass.json");
    let mut args: Vec<&str> = vec!["multiclass", "--in"];
    args.extend(files.iter().map(|s| s.as_str()));
    args.extend(["--samples", "600", "--out", mc_report.to_str().unwrap()]);
    args.extend(stage);
    run_cli(&args);
    let mc_f1 = report_f1(&mc_report);
    assert!(
        mc_f1 >= 0.9,
        "FAIL: multi-class macro F1 {} below 0.9",
        mc_f1
    );

    // Holdout: hold out the worm series; training keeps a weaker worm
    // variant so the held-out signature overlaps the training classes.
    let variant = dir.path().join("worm_variant.csv");
    run_cli(&[
        "synth", "--events", "worm",
        "--n", "1000", "--start", "200", "--end", "800",
        "--event-id", "2", "--amplitude", "0.7", "--seed", "99",
        "--out", variant.to_str().unwrap(),
    ]);
    let mut holdout_files = files.clone();
    holdout_files[1] = variant.to_str().unwrap().to_string();

    let ho_report = dir.path().join("holdout.json");
    let mut args: Vec<&str> = vec!["holdout", "--in"];
    args.extend(holdout_files.iter().map(|s| s.as_str()));
    args.extend(["--holdout", "0", "--out", ho_report.to_str().unwrap()]);
    args.extend(stage);
    run_cli(&args);
    let ho_f1 = report_f1(&ho_report);
    assert!(
        ho_f1 >= 0.8,
        "FAIL: held-out-event F1 {} below 0.8",
        ho_f1
    );
    println!(
        "PASS: multi-class macro F1 {:.4} >= 0.9; held-out-event F1 {:.4} >= 0.8",
        mc_f1, ho_f1
    );
}
