use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use resam_core::detect::{detect_autoencoder, rule_detect, DetectError, DetectionResult, RuleSpec};
use resam_core::explain::{builtin_templates, render_report, LearnedThreshold};
use resam_core::logdata::AnomalyType;
use resam_core::logparser::parse_log;
use resam_core::neural::{load_model, save_model, ModelKind, NeuralError, TrainedModel};
use resam_core::pipeline::{
    corpus_log_dir, evaluate_corpus, load_annotation_file, load_log, load_logs, rule_baseline, train_detector,
    PipelineError, TrainConfig,
};
use resam_core::synth::{benchmark_suite, write_corpus};

#[derive(Parser)]
#[command(name = "resam", version, about = "Flight-log anomaly detection and explanation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Window stride for training and scoring.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    stride: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a log and print the line report.
    Parse {
        log: PathBuf,
        #[arg(long)]
        strict: bool,
    },
    /// Generate a synthetic benchmark corpus.
    Synth {
        #[arg(long = "type", value_parser = parse_type)]
        anomaly_type: AnomalyType,
        #[arg(long)]
        n_normal: usize,
        #[arg(long)]
        n_anomalous: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and calibrate a detector on the anomaly-free logs of a corpus.
    Train {
        #[arg(long = "type", value_parser = parse_type)]
        anomaly_type: AnomalyType,
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        epochs: u64,
    },
    /// Score one log with a trained detector and write an explained report.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the rule detectors of one anomaly type on a log.
    Rules {
        #[arg(long = "type", value_parser = parse_type)]
        anomaly_type: AnomalyType,
        #[arg(long)]
        log: PathBuf,
        /// Replaces the limit (or correlation threshold) of the type's first rule.
        #[arg(long)]
        limit: Option<f64>,
    },
    /// Log-level metrics of a detector over an annotated corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        rules: bool,
        /// Metrics JSON path; defaults to `<model>.eval.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a report from saved detections.
    Explain {
        #[arg(long)]
        log: PathBuf,
        /// Detection JSON as printed by `detect` or `rules`.
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

fn parse_type(s: &str) -> Result<AnomalyType, String> {
    let t = AnomalyType::ALL
        .into_iter()
        .find(|t| t.as_str().eq_ignore_ascii_case(s));
    match t {
        Some(t) => Ok(t),
        None if s.eq_ignore_ascii_case("compass") => Ok(AnomalyType::CompassInterference),
        None => Err(format!(
            "unknown anomaly type `{s}` (expected Vibration, Attitude, Compass, CompassInterference, GpsGlitch or Power)"
        )),
    }
}

enum Failure {
    Data(String),
    Divergence(String),
}

impl Failure {
    fn data(e: impl Display) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Neural(n @ NeuralError::NonFiniteLoss { .. }) => Failure::Divergence(n.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<DetectError> for Failure {
    fn from(e: DetectError) -> Self {
        Failure::Data(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn model_kind(t: AnomalyType) -> Result<ModelKind, Failure> {
    ModelKind::from_anomaly_type(t).ok_or_else(|| Failure::Data(format!("no autoencoder detector for {t}")))
}

fn read_model(path: &Path) -> Result<TrainedModel, Failure> {
    load_model(&read(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn learned(model: &TrainedModel) -> Option<LearnedThreshold> {
    model.threshold.map(|value| LearnedThreshold {
        value,
        metric: model.spec.loss.as_str().to_string(),
    })
}

fn with_limit(rule: RuleSpec, x: f64) -> RuleSpec {
    match rule {
        RuleSpec::VibrationThreshold { .. } => RuleSpec::VibrationThreshold { limit: x },
        RuleSpec::AttitudeThreshold { .. } => RuleSpec::AttitudeThreshold { limit: x },
        RuleSpec::ClipCount { .. } => RuleSpec::ClipCount { limit: x },
        RuleSpec::GpsHdop { .. } => RuleSpec::GpsHdop { limit: x },
        RuleSpec::CompassCorrelation { window, .. } => RuleSpec::CompassCorrelation {
            corr_threshold: x,
            window,
        },
        RuleSpec::PowerCorrelation { window, .. } => RuleSpec::PowerCorrelation {
            corr_threshold: x,
            window,
        },
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let seed = cli.global.seed;
    let stride = cli.global.stride as usize;
    match cli.command {
        Command::Parse { log, strict } => {
            let text = read(&log)?;
            let id = log.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let (_, report) = parse_log(&id, &text, strict).map_err(|e| Failure::Data(format!("{}: {e}", log.display())))?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::Synth {
            anomaly_type,
            n_normal,
            n_anomalous,
            out,
        } => {
            let corpus = benchmark_suite(n_normal, n_anomalous, anomaly_type, seed);
            write_corpus(&corpus, &out).map_err(Failure::data)?;
            println!(
                "wrote {} logs and {} annotations to {}",
                corpus.logs.len(),
                corpus.annotations.len(),
                out.display()
            );
        }
        Command::Train {
            anomaly_type,
            logs,
            annotations,
            out,
            epochs,
        } => {
            let kind = model_kind(anomaly_type)?;
            let logs = load_logs(&corpus_log_dir(&logs)?)?;
            let annotations = load_annotation_file(&annotations)?;
            let cfg = TrainConfig::preset(kind, epochs as usize, stride, seed);
            let (model, summary) = train_detector(&logs, &annotations, &cfg)?;
            write(&out, &save_model(&model))?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Detect { model, log, report } => {
            let model = read_model(&model)?;
            let log = load_log(&log, false)?;
            let result = detect_autoencoder(&model, &log, &model.features, stride)?;
            let templates = builtin_templates();
            render_report(&log, &result.spans, &templates, learned(&model).as_ref(), &report).map_err(Failure::data)?;
            write(&report.join("detections.json"), &result.to_json())?;
            println!("{}", result.to_json());
        }
        Command::Rules {
            anomaly_type,
            log,
            limit,
        } => {
            let log = load_log(&log, false)?;
            let result = match limit {
                None => rule_baseline(&log, anomaly_type)?,
                Some(x) => {
                    let rule = with_limit(RuleSpec::for_type(anomaly_type)[0], x);
                    rule.validate()?;
                    rule_detect(&log, &rule)?
                }
            };
            println!("{}", result.to_json());
        }
        Command::Eval {
            model: model_path,
            corpus,
            annotations,
            rules,
            out,
        } => {
            let model = read_model(&model_path)?;
            let logs = load_logs(&corpus_log_dir(&corpus)?)?;
            let annotations = load_annotation_file(&annotations)?;
            let eval = evaluate_corpus(&model, &logs, &annotations, stride, 1, rules)?;
            let out = out.unwrap_or_else(|| model_path.with_extension("eval.json"));
            write(&out, &eval.to_json())?;
            info!("wrote {}", out.display());
            print!("{}", eval.table());
        }
        Command::Explain {
            log,
            detections,
            report,
        } => {
            let log = load_log(&log, false)?;
            let result: DetectionResult = serde_json::from_str(&read(&detections)?)
                .map_err(|e| Failure::Data(format!("{}: {e}", detections.display())))?;
            let files = render_report(&log, &result.spans, &builtin_templates(), None, &report).map_err(Failure::data)?;
            println!("{}", files.report.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let level = std::env::var("RESAM_LOG_LEVEL").unwrap_or_else(|_| "warn".into());
    env_logger::Builder::new().parse_filters(&level).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Divergence(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
