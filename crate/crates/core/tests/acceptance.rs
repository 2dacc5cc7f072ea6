//! Acceptance criteria, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`) and exits non-zero when any
//! criterion fails.

use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::Rng;
use resam_core::detect::{detect_autoencoder, rule_detect, window_errors, RuleSpec};
use resam_core::evaluation::{auc_oracle, f1_from_pr, prf1, roc_auc};
use resam_core::features::{minmax_apply, minmax_fit, minmax_invert, FeatureSpec};
use resam_core::logdata::{AnomalyType, FlightLog, Schema};
use resam_core::logparser::{parse_log, serialize_log};
use resam_core::neural::{gradient_check, load_model, save_model, train, ModelKind, ModelSpec, TrainedModel};
use resam_core::pipeline::{evaluate_corpus, rule_baseline, train_detector, CorpusEvaluation, TrainConfig};
use resam_core::rng::seeded;
use resam_core::synth::{benchmark_suite, generate_normal, inject, InjectionShape, InjectionSpec, SynthProfile};

const TRAIN_SEED: u64 = 1000;
const TEST_SEED: u64 = 2000;
const STRIDE: usize = 10;

/// Epoch budget per detector, at most 50.
fn epochs(kind: ModelKind) -> usize {
    match kind {
        ModelKind::Vibration => 6,
        ModelKind::Attitude => 10,
        ModelKind::Compass => 40,
    }
}

struct Tally {
    failed: Vec<String>,
}

impl Tally {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        println!("criterion {id}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id.to_string());
        }
    }
}

fn gradients(t: &mut Tally) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for kind in ModelKind::ALL {
        let spec = ModelSpec::preset(kind).reduced(8);
        for seed in 0..5 {
            worst = worst.max(gradient_check(&spec, seed, 1e-5));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    t.record(
        "1 gradient check",
        worst <= 1e-4 && secs <= 60.0,
        format!("max rel error {worst:.3e} <= 1e-4 over 3 presets x 5 seeds, {secs:.1} s <= 60 s"),
    );
}

fn auc_equivalence(t: &mut Tally) {
    let start = Instant::now();
    let mut rng = seeded(2);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let levels = rng.random_range(2..=8);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 4.0).collect();
        let (_, auc) = roc_auc(&scores, &labels).expect("both classes present");
        let oracle = auc_oracle(&scores, &labels).expect("both classes present");
        worst = worst.max((auc - oracle).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    t.record(
        "2 AUC oracle",
        worst <= 1e-9 && secs <= 10.0,
        format!("max |roc_auc - mann_whitney| {worst:.1e} <= 1e-9 on 200 sets, {secs:.2} s"),
    );
}

fn confusion(tp: usize, fp: usize, tn: usize, fn_: usize) -> (Vec<bool>, Vec<bool>) {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (n, p, l) in [(tp, true, true), (fp, true, false), (tn, false, false), (fn_, false, true)] {
        preds.extend(std::iter::repeat_n(p, n));
        labels.extend(std::iter::repeat_n(l, n));
    }
    (preds, labels)
}

fn f1_consistency(t: &mut Tally) {
    let (p1, l1) = confusion(17, 8, 0, 0);
    let a = prf1(&p1, &l1).unwrap();
    let (p2, l2) = confusion(201, 99, 0, 1139);
    let b = prf1(&p2, &l2).unwrap();
    let direct = (f1_from_pr(0.68, 1.0), f1_from_pr(0.67, 0.15));
    let ok = (a.f1 - 0.81).abs() <= 0.005
        && (b.f1 - 0.25).abs() <= 0.005
        && (direct.0 - 0.81).abs() <= 0.005
        && (direct.1 - 0.25).abs() <= 0.005
        && format!("{:.2}/{:.2}", a.precision, a.recall) == "0.68/1.00"
        && format!("{:.2}/{:.2}", b.precision, b.recall) == "0.67/0.15";
    t.record(
        "3 F1 consistency",
        ok,
        format!(
            "P={:.2} R={:.2} -> F1 {:.4}; P={:.2} R={:.2} -> F1 {:.4}; tolerance 0.005",
            a.precision, a.recall, a.f1, b.precision, b.recall, b.f1
        ),
    );
}

struct Benchmark {
    kind: ModelKind,
    model: TrainedModel,
    eval: CorpusEvaluation,
    train_logs: Vec<FlightLog>,
    secs: f64,
}

fn run_benchmark(kind: ModelKind) -> Benchmark {
    let start = Instant::now();
    let t = kind.anomaly_type();
    let train_corpus = benchmark_suite(30, 0, t, TRAIN_SEED);
    let test_corpus = benchmark_suite(20, 20, t, TEST_SEED);
    let cfg = TrainConfig::preset(kind, epochs(kind), STRIDE, 42);
    let (model, _) = train_detector(&train_corpus.logs, &train_corpus.annotations, &cfg).expect("training succeeds");
    let eval = evaluate_corpus(&model, &test_corpus.logs, &test_corpus.annotations, STRIDE, 1, true).expect("evaluation");
    Benchmark {
        kind,
        model,
        eval,
        train_logs: train_corpus.logs,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn calibration(t: &mut Tally, runs: &[Benchmark]) {
    let mut flagged = 0;
    let mut windows = 0;
    for b in runs {
        for log in &b.train_logs {
            let r = detect_autoencoder(&b.model, log, &b.model.features, STRIDE).expect("scoring");
            flagged += r.spans.iter().map(|s| s.windows).sum::<usize>();
            windows += 1 + (1000 - b.model.spec.timesteps) / STRIDE;
        }
    }
    t.record(
        "4 calibration soundness",
        flagged == 0,
        format!("{flagged} of {windows} training windows flagged across 3 detectors, required 0"),
    );
}

fn benchmark(t: &mut Tally, runs: &[Benchmark]) {
    for b in runs {
        let lstm = b.eval.lstm.f1;
        let rule = b.eval.rules.as_ref().expect("rules evaluated").f1;
        let ok = lstm >= 0.85 && lstm - rule >= 0.10 && b.secs <= 900.0;
        t.record(
            &format!("5 synthetic benchmark {:?}", b.kind),
            ok,
            format!(
                "LSTM F1 {lstm:.3} >= 0.85, rule F1 {rule:.3}, gap {:.3} >= 0.10, {} epochs, {:.0} s <= 900 s",
                lstm - rule,
                epochs(b.kind),
                b.secs
            ),
        );
    }
}

fn sub_threshold_vibration(t: &mut Tally, vibration: &Benchmark) {
    let mut rule_quiet = 0;
    let mut lstm_fired = 0;
    for seed in 1..=5u64 {
        let clean = generate_normal(&SynthProfile::default().with_seed(3000 + seed)).unwrap();
        let spec = InjectionSpec {
            anomaly_type: AnomalyType::Vibration,
            start_frac: 0.3,
            end_frac: 0.6,
            magnitude: 25.0,
            shape: InjectionShape::Oscillation,
        };
        let (log, _) = inject(&clean, &spec, seed).unwrap();
        if !rule_baseline(&log, AnomalyType::Vibration).unwrap().verdict {
            rule_quiet += 1;
        }
        let m = &vibration.model;
        if detect_autoencoder(m, &log, &m.features, STRIDE).unwrap().verdict {
            lstm_fired += 1;
        }
    }
    t.record(
        "6 sub-threshold vibration",
        rule_quiet == 5 && lstm_fired >= 4,
        format!("rule silent on {rule_quiet}/5 (need 5), LSTM flagged {lstm_fired}/5 (need >= 4)"),
    );
}

fn random_log(rng: &mut impl Rng, id: usize) -> FlightLog {
    let groups = ["ATT", "VIBE", "GPS", "BAT", "MAG", "CTUN"];
    let mut log = FlightLog::new(format!("random-{id}"));
    let n_groups = rng.random_range(1..=4);
    for g in &groups[..n_groups] {
        let n_fields = rng.random_range(1..=5);
        let mut cols = vec!["TimeUS".to_string()];
        cols.extend((0..n_fields).map(|i| format!("F{i}")));
        log.add_schema(g, Schema::new(&cols)).unwrap();
        let mut time = rng.random_range(0..1_000_000i64);
        for _ in 0..rng.random_range(0..40) {
            time += rng.random_range(0..5_000);
            let values = (0..n_fields)
                .map(|_| {
                    let m: f64 = rng.random_range(-1.0..1.0);
                    m * 10f64.powi(rng.random_range(-8..9))
                })
                .collect();
            log.push_record(g, time, values).unwrap();
        }
    }
    log
}

fn round_trips(t: &mut Tally) {
    let mut rng = seeded(7);
    let logs_ok = (0..100).all(|i| {
        let log = random_log(&mut rng, i);
        matches!(parse_log(&log.log_id, &serialize_log(&log), true), Ok((parsed, _)) if parsed == log)
    });

    let mut spec = ModelSpec::preset(ModelKind::Compass);
    spec.batch_size = 16;
    let corpus = benchmark_suite(2, 0, AnomalyType::CompassInterference, 11);
    let (train_set, val_set) = resam_core::features::build_dataset(
        &corpus.logs,
        FeatureSpec::new(resam_core::features::FeatureKind::CompassThrottleMag),
        spec.timesteps,
        20,
        0.2,
        3,
    )
    .unwrap();
    let model = train(&spec, &train_set, &val_set, 2, 3).unwrap();
    let reloaded = load_model(&save_model(&model)).unwrap();
    let windows = Array3::from_shape_fn((10, spec.timesteps, 3), |_| rng.random_range(-1.0..2.0));
    let a = window_errors(&model, windows.view()).unwrap();
    let b = window_errors(&reloaded, windows.view()).unwrap();
    let scores_ok = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());

    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let rows = rng.random_range(2..200);
        let data = Array2::from_shape_fn((rows, 3), |_| rng.random_range(-100.0..100.0));
        let norm = minmax_fit(data.view()).unwrap();
        let back = minmax_invert(minmax_apply(data.view(), &norm).unwrap().view(), &norm).unwrap();
        worst = worst.max((&back - &data).iter().fold(0.0, |m, d| m.max(d.abs())));
    }
    t.record(
        "7 round-trips",
        logs_ok && scores_ok && worst <= 1e-12,
        format!(
            "100 logs identical: {logs_ok}; 10 window scores bit-identical after reload: {scores_ok}; minmax max error {worst:.1e} <= 1e-12"
        ),
    );
}

fn grid(n: usize) -> Vec<i64> {
    (0..n as i64).map(|i| 5_000 + 10_000 * i).collect()
}

fn single(name: &str, fields: &[&str], cols: Vec<Vec<f64>>) -> FlightLog {
    let n = cols[0].len();
    let mut log = FlightLog::new("rule");
    log.insert_columns(name, fields, &grid(n), &cols).unwrap();
    log
}

/// Spans of `rule` on `log` as `(start, end)` pairs.
fn spans(log: &FlightLog, rule: RuleSpec) -> Vec<(i64, i64)> {
    rule_detect(log, &rule)
        .unwrap()
        .spans
        .iter()
        .map(|s| (s.start_us, s.end_us))
        .collect()
}

fn interval(first: usize, last: usize) -> (i64, i64) {
    let ts = grid(last + 1);
    (ts[first], ts[last] + 1)
}

/// Throttle that is constant outside `[a, b)` and alternates ±0.1 inside,
/// so any trailing window touching `[a, b)` sees a perfect linear relation.
fn coupled(n: usize, a: usize, b: usize, gain: f64, offset: f64) -> (Vec<f64>, Vec<f64>) {
    let thr: Vec<f64> = (0..n)
        .map(|i| if (a..b).contains(&i) { 0.4 + if i % 2 == 0 { 0.1 } else { -0.1 } } else { 0.4 })
        .collect();
    let other = thr.iter().map(|t| offset + gain * (t - 0.4)).collect();
    (thr, other)
}

fn rule_exactness(t: &mut Tally) {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let n = 600;

    let mut z = vec![10.0; n];
    for v in &mut z[100..120] {
        *v = 31.0;
    }
    z[300] = 45.0;
    let flat = vec![10.0; n];
    let vib = single("VIBE", &["VibeX", "VibeY", "VibeZ"], vec![flat.clone(), flat.clone(), z]);
    checks.push(("vibration", spans(&vib, RuleSpec::VIBRATION) == [interval(100, 119), interval(300, 300)]));
    let at_limit = single("VIBE", &["VibeX", "VibeY", "VibeZ"], vec![vec![30.0; n], flat.clone(), flat.clone()]);
    checks.push(("vibration compliant", spans(&at_limit, RuleSpec::VIBRATION).is_empty()));

    let zero = vec![0.0; n];
    let mut roll = zero.clone();
    for v in &mut roll[200..260] {
        *v = -10.5;
    }
    let mut yaw = vec![179.0; n];
    for v in &mut yaw[400..410] {
        *v = -168.0;
    }
    let att = single(
        "ATT",
        &["DesRoll", "Roll", "DesPitch", "Pitch", "DesYaw", "Yaw"],
        vec![zero.clone(), roll, zero.clone(), zero.clone(), vec![179.0; n], yaw],
    );
    checks.push(("attitude", spans(&att, RuleSpec::ATTITUDE) == [interval(200, 259), interval(400, 409)]));
    let mut wrap_only = vec![179.0; n];
    wrap_only[50] = -175.0;
    let calm = single(
        "ATT",
        &["DesRoll", "Roll", "DesPitch", "Pitch", "DesYaw", "Yaw"],
        vec![zero.clone(), vec![9.9; n], zero.clone(), zero.clone(), vec![179.0; n], wrap_only],
    );
    checks.push(("attitude compliant", spans(&calm, RuleSpec::ATTITUDE).is_empty()));

    let mut clip = vec![0.0; n];
    let mut count = 0.0;
    for (i, c) in clip.iter_mut().enumerate() {
        if (100..=302).contains(&i) && i % 2 == 0 {
            count += 1.0;
        }
        *c = count;
    }
    let clips = single(
        "VIBE",
        &["VibeX", "VibeY", "VibeZ", "Clip0", "Clip1", "Clip2"],
        vec![flat.clone(), flat.clone(), flat.clone(), clip, zero.clone(), zero.clone()],
    );
    checks.push(("clip count", spans(&clips, RuleSpec::CLIPS) == [interval(100, 302)]));
    let few: Vec<f64> = (0..n).map(|i| (i.min(100)) as f64).collect();
    let quiet_clips = single(
        "VIBE",
        &["VibeX", "VibeY", "VibeZ", "Clip0", "Clip1", "Clip2"],
        vec![flat.clone(), flat.clone(), flat.clone(), few, zero.clone(), zero.clone()],
    );
    checks.push(("clip compliant", spans(&quiet_clips, RuleSpec::CLIPS).is_empty()));

    let mut hdop = vec![1.0; n];
    for v in &mut hdop[10..13] {
        *v = 2.5;
    }
    let gps = single("GPS", &["HDop"], vec![hdop]);
    checks.push(("gps", spans(&gps, RuleSpec::GPS) == [interval(10, 12)]));
    let gps_ok = single("GPS", &["HDop"], vec![vec![2.0; n]]);
    checks.push(("gps compliant", spans(&gps_ok, RuleSpec::GPS).is_empty()));

    let (a, b) = (300, 320);
    let expected = [interval(a.max(199), (b + 198).min(n - 1))];
    let (thr, mag) = coupled(n, a, b, 100.0, 450.0);
    let mut log = single("MAG", &["MagX", "MagY", "MagZ"], vec![mag, zero.clone(), zero.clone()]);
    log.insert_columns("CTUN", &["ThO"], &grid(n), &[thr.clone()]).unwrap();
    checks.push(("compass", spans(&log, RuleSpec::COMPASS) == expected));
    let mut log = single("MAG", &["MagX", "MagY", "MagZ"], vec![vec![450.0; n], zero.clone(), zero.clone()]);
    log.insert_columns("CTUN", &["ThO"], &grid(n), &[thr.clone()]).unwrap();
    checks.push(("compass compliant", spans(&log, RuleSpec::COMPASS).is_empty()));

    let (thr, volt) = coupled(n, a, b, -1.0, 16.0);
    let mut log = single("BAT", &["Volt"], vec![volt]);
    log.insert_columns("CTUN", &["ThO"], &grid(n), &[thr.clone()]).unwrap();
    checks.push(("power", spans(&log, RuleSpec::POWER) == expected));
    let (_, rising) = coupled(n, a, b, 1.0, 16.0);
    let mut log = single("BAT", &["Volt"], vec![rising]);
    log.insert_columns("CTUN", &["ThO"], &grid(n), &[thr]).unwrap();
    checks.push(("power compliant", spans(&log, RuleSpec::POWER).is_empty()));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    t.record(
        "8 rule exactness",
        failed.is_empty(),
        format!("{} of {} series exact; failing: {failed:?}", checks.len() - failed.len(), checks.len()),
    );
}

fn determinism(t: &mut Tally, first: &[Benchmark]) {
    let mut same = Vec::new();
    for b in first {
        let again = run_benchmark(b.kind);
        let model_same = save_model(&b.model) == save_model(&again.model);
        let eval_same = b.eval.to_json() == again.eval.to_json() && b.eval.table() == again.eval.table();
        same.push((b.kind, model_same && eval_same));
    }
    t.record(
        "9 determinism",
        same.iter().all(|(_, s)| *s),
        format!("byte-identical model file and metrics on rerun: {same:?}"),
    );
}

fn main() {
    let mut t = Tally { failed: Vec::new() };
    gradients(&mut t);
    auc_equivalence(&mut t);
    f1_consistency(&mut t);
    let runs: Vec<Benchmark> = ModelKind::ALL.into_iter().map(run_benchmark).collect();
    calibration(&mut t, &runs);
    benchmark(&mut t, &runs);
    for b in &runs {
        println!("{:?} benchmark table:\n{}", b.kind, b.eval.table());
    }
    sub_threshold_vibration(&mut t, &runs[0]);
    round_trips(&mut t);
    rule_exactness(&mut t);
    determinism(&mut t, &runs);
    if t.failed.is_empty() {
        println!("all acceptance criteria passed");
    } else {
        println!("failed criteria: {:?}", t.failed);
        std::process::exit(1);
    }
}
