use std::fs;

use proptest::prelude::*;
use tempfile::TempDir;

use resam_core::detect::{classify_log, DetectionResult};
use resam_core::explain::{builtin_templates, render_report};
use resam_core::logdata::AnomalyType;
use resam_core::logparser::{load_annotations, parse_log, serialize_log};
use resam_core::pipeline::{corpus_log_dir, load_annotation_file, load_logs, rule_baseline};
use resam_core::synth::{benchmark_suite, generate_normal, inject, write_corpus, InjectionShape, InjectionSpec, SynthProfile};

#[test]
fn written_corpus_reloads_identically() {
    let corpus = benchmark_suite(2, 2, AnomalyType::GpsGlitch, 17);
    let tmp = TempDir::new().unwrap();
    write_corpus(&corpus, tmp.path()).unwrap();

    let mut logs = load_logs(&corpus_log_dir(tmp.path()).unwrap()).unwrap();
    logs.sort_by(|a, b| a.log_id.cmp(&b.log_id));
    let mut expected = corpus.logs.clone();
    expected.sort_by(|a, b| a.log_id.cmp(&b.log_id));
    assert_eq!(logs.len(), expected.len());
    for (a, b) in logs.iter().zip(&expected) {
        assert_eq!(a.log_id, b.log_id);
        assert_eq!(serialize_log(a), serialize_log(b));
    }
    let anns = load_annotation_file(&tmp.path().join("annotations.json")).unwrap();
    assert_eq!(anns, corpus.annotations);
}

#[test]
fn rule_detection_feeds_report() {
    let corpus = benchmark_suite(1, 2, AnomalyType::Vibration, 5);
    // Odd anomalous indices carry supra-threshold injections.
    let log = corpus.logs.iter().find(|l| l.log_id == "anomalous-001").unwrap();
    let ann = corpus.annotations.iter().find(|a| a.log_id == log.log_id).unwrap();

    let result = rule_baseline(log, AnomalyType::Vibration).unwrap();
    assert!(classify_log(&result.spans, 1));
    assert!(result
        .spans
        .iter()
        .all(|s| s.start_us < ann.end_us && ann.start_us < s.end_us));

    let tmp = TempDir::new().unwrap();
    let files = render_report(log, &result.spans, &builtin_templates(), None, tmp.path()).unwrap();
    let md = fs::read_to_string(&files.report).unwrap();
    assert!(md.contains("Vibration"));
    assert!(!md.contains("No anomalies detected"));
    let vibe = tmp.path().join("channels").join("VIBE.VibeX.csv");
    let csv = fs::read_to_string(vibe).unwrap();
    assert!(csv.starts_with("timestamp_us,value,in_anomaly"));
    assert!(csv.lines().skip(1).any(|l| l.ends_with(",1") || l.ends_with(",true")));

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(&files.summary).unwrap()).unwrap();
    assert!(summary.is_object());
}

#[test]
fn clean_log_gives_empty_report() {
    let log = generate_normal(&SynthProfile::default().with_seed(3)).unwrap();
    for t in AnomalyType::ALL {
        let r = rule_baseline(&log, t).unwrap();
        assert!(r.spans.is_empty(), "{t} fired on a clean log");
    }
    let tmp = TempDir::new().unwrap();
    let files = render_report(&log, &[], &builtin_templates(), None, tmp.path()).unwrap();
    assert!(fs::read_to_string(files.report).unwrap().contains("No anomalies detected"));
}

#[test]
fn detection_json_round_trips() {
    let corpus = benchmark_suite(0, 2, AnomalyType::CompassInterference, 8);
    let log = corpus.logs.iter().find(|l| l.log_id == "anomalous-001").unwrap();
    let r = rule_baseline(log, AnomalyType::CompassInterference).unwrap();
    assert!(!r.spans.is_empty());
    let back: DetectionResult = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back.spans.len(), r.spans.len());
    for (a, b) in back.spans.iter().zip(&r.spans) {
        assert_eq!((a.start_us, a.end_us), (b.start_us, b.end_us));
        assert_eq!(a.score.to_bits(), b.score.to_bits());
    }
}

fn shape() -> impl Strategy<Value = InjectionShape> {
    prop_oneof![
        Just(InjectionShape::Burst),
        Just(InjectionShape::Ramp),
        Just(InjectionShape::Oscillation)
    ]
}

fn anomaly() -> impl Strategy<Value = AnomalyType> {
    prop::sample::select(AnomalyType::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn injected_span_lies_inside_log(
        t in anomaly(),
        shape in shape(),
        start in 0.05f64..0.6,
        len in 0.05f64..0.35,
        magnitude in 1.0f64..50.0,
        seed in any::<u64>(),
    ) {
        let log = generate_normal(&SynthProfile::default().with_seed(seed)).unwrap();
        let spec = InjectionSpec { anomaly_type: t, start_frac: start, end_frac: start + len, magnitude, shape };
        let (out, ann) = inject(&log, &spec, seed).unwrap();
        let (lo, hi) = out.time_range().unwrap();
        prop_assert!(ann.start_us < ann.end_us);
        prop_assert!(ann.start_us >= lo && ann.end_us <= hi + 1);
        prop_assert_eq!(ann.anomaly_type, t);

        // Text serialization preserves the injected log.
        let text = serialize_log(&out);
        let (parsed, _) = parse_log(&out.log_id, &text, true).unwrap();
        prop_assert_eq!(serialize_log(&parsed), text);

        let json = serde_json::to_string(&vec![ann.clone()]).unwrap();
        prop_assert_eq!(load_annotations(&json).unwrap(), vec![ann]);
    }
}
