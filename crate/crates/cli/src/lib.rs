//! Command-line front end for the grounding toolkit.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use stgkit::decoder::{
    deinterleave, hash_tokens, interleave_queries, stub_frame_features, stub_text_embed,
    FrameFeatures, QueryGuidedDecoder, QueryLayout, SpaceHeadParams,
};
use stgkit::gradcheck::{run_gradient_suite, GradcheckConfig, GradcheckReport};
use stgkit::jsonl::read_jsonl;
use stgkit::losses::LossWeights;
use stgkit::metrics::{
    evaluate_rec, evaluate_stvg, evaluate_vtg, BoxRecord, GroundingSample, Prediction, SpanRecord,
    DEFAULT_REC_THRESHOLD, DEFAULT_RECALL_THRESHOLDS, DEFAULT_VIOU_THRESHOLDS,
};
use stgkit::sequencing::{parse_span_text, sample_frames, timespan_to_frame_range};
use stgkit::tensor::Tensor;
use stgkit::unistg::{
    synthesize_dataset, write_records, CaptionRecord, GroundingServices, HttpServices,
    MockServices, RejectionReason, ServiceError, SynthesisConfig,
};
use stgkit::{Error, TimeSpan, Tube};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_SCHEMA: u8 = 2;
pub const EXIT_ID_MISMATCH: u8 = 3;
pub const EXIT_SERVICE: u8 = 4;
pub const EXIT_PARSE: u8 = 5;

const TEXT_VOCAB: u32 = 32_000;

#[derive(Debug, Parser)]
#[command(name = "stgkit", version, about = "Spatio-temporal video grounding toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score spatio-temporal tube predictions (m_tIoU, m_vIoU, vIoU@R).
    EvalStvg(EvalArgs),
    /// Score temporal grounding predictions (R@1 at IoU thresholds, m_tIoU).
    EvalVtg(EvalArgs),
    /// Score referring-expression box predictions (accuracy at an IoU threshold).
    EvalRec(EvalArgs),
    /// Synthesize grounding training records from captioned clips.
    Synth(SynthArgs),
    /// Decode a tube for a span from seeded stub features.
    DecodeDemo(DecodeArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated IoU thresholds.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Input captions, one JSON record per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSON pipeline configuration; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output records (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Output statistics (JSON).
    #[arg(long)]
    pub stats: PathBuf,
    /// Replay service responses from this fixture file.
    #[arg(long)]
    pub mock_fixtures: Option<PathBuf>,
    /// Base URL of the analyzer/detector services.
    #[arg(long)]
    pub service_url: Option<String>,
    /// Frames sampled per clip.
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    #[arg(long, default_value_t = 4)]
    pub tokens_per_frame: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Video length in seconds.
    #[arg(long, default_value_t = 20.0)]
    pub duration: f64,
    /// Span in the form "from 2.40s to 5.60s".
    #[arg(long)]
    pub span: String,
    #[arg(long, default_value = "the person in the video")]
    pub caption: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = stgkit::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = stgkit::gradcheck::DEFAULT_CASES)]
    pub cases: usize,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Perturb analytic gradients (negative control).
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    #[arg(long)]
    pub lambda_time: Option<f64>,
    #[arg(long)]
    pub lambda_space: Option<f64>,
    #[arg(long)]
    pub lambda_l1: Option<f64>,
    #[arg(long)]
    pub lambda_giou: Option<f64>,
}

impl WeightArgs {
    pub fn resolve(&self) -> LossWeights {
        let d = LossWeights::default();
        LossWeights {
            lambda_time: self.lambda_time.unwrap_or(d.lambda_time),
            lambda_space: self.lambda_space.unwrap_or(d.lambda_space),
            lambda_l1: self.lambda_l1.unwrap_or(d.lambda_l1),
            lambda_giou: self.lambda_giou.unwrap_or(d.lambda_giou),
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    CheckFailed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        CliError::Core(Error::Service(e))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::CheckFailed(msg) => f.write_str(msg),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
            CliError::Core(e) => match e {
                Error::IdMismatch { .. } | Error::LengthMismatch { .. } => EXIT_ID_MISMATCH,
                Error::Service(_) => EXIT_SERVICE,
                Error::Parse { .. } => EXIT_PARSE,
                _ => EXIT_SCHEMA,
            },
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::EvalStvg(a) => cmd_eval_stvg(&a, &mut stdout),
        Command::EvalVtg(a) => cmd_eval_vtg(&a, &mut stdout),
        Command::EvalRec(a) => cmd_eval_rec(&a, &mut stdout),
        Command::Synth(a) => cmd_synth(&a, &mut stdout),
        Command::DecodeDemo(a) => cmd_decode_demo(&a, &mut stdout),
        Command::Gradcheck(a) => cmd_gradcheck(&a, &mut stdout),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn cmd_eval_stvg(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let gts: Vec<GroundingSample> = read_jsonl(&a.gt)?;
    let preds: Vec<Prediction> = read_jsonl(&a.pred)?;
    let thresholds = a.thresholds.clone().unwrap_or(DEFAULT_VIOU_THRESHOLDS.to_vec());
    let report = evaluate_stvg(&preds, &gts, &thresholds)?.rounded();
    writeln!(out, "{report}")?;
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    Ok(())
}

pub fn cmd_eval_vtg(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let gts: Vec<SpanRecord> = read_jsonl(&a.gt)?;
    let preds: Vec<SpanRecord> = read_jsonl(&a.pred)?;
    let thresholds = a.thresholds.clone().unwrap_or(DEFAULT_RECALL_THRESHOLDS.to_vec());
    let report = evaluate_vtg(&preds, &gts, &thresholds)?.rounded();
    writeln!(out, "{report}")?;
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    Ok(())
}

pub fn cmd_eval_rec(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let gts: Vec<BoxRecord> = read_jsonl(&a.gt)?;
    let preds: Vec<BoxRecord> = read_jsonl(&a.pred)?;
    let threshold = match a.thresholds.as_deref() {
        None => DEFAULT_REC_THRESHOLD,
        Some([t]) => *t,
        Some(ts) => {
            return Err(Error::InvalidConfig(format!(
                "accuracy takes a single threshold, got {}",
                ts.len()
            ))
            .into())
        }
    };
    let report = evaluate_rec(&preds, &gts, threshold)?.rounded();
    writeln!(out, "{report}")?;
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn load_synth_config(a: &SynthArgs) -> CliResult<SynthesisConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let mut cfg: SynthesisConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
            // fixture paths in a config file are relative to that file
            if let (Some(fixtures), Some(dir)) = (&cfg.mock_fixture_path, path.parent()) {
                if fixtures.is_relative() {
                    cfg.mock_fixture_path = Some(dir.join(fixtures));
                }
            }
            cfg
        }
        None => SynthesisConfig::default(),
    };
    if let Some(p) = &a.mock_fixtures {
        cfg.mock_fixture_path = Some(p.clone());
    }
    if let Some(url) = &a.service_url {
        cfg.service_url = Some(url.clone());
        cfg.mock_fixture_path = None;
    }
    if let Some(n) = a.frames {
        cfg.n_frames = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult {
    let cfg = load_synth_config(a)?;
    let corpus: Vec<CaptionRecord> = read_jsonl(&a.corpus)?;
    let services: Box<dyn GroundingServices> = match (&cfg.mock_fixture_path, &cfg.service_url) {
        (Some(path), _) => Box::new(MockServices::load(path)?),
        (None, Some(url)) => Box::new(HttpServices::new(
            url,
            Duration::from_secs_f64(cfg.request_timeout_s),
        )),
        (None, None) => {
            return Err(Error::InvalidConfig(
                "synthesis needs either mock fixtures or a service URL".into(),
            )
            .into())
        }
    };
    log::info!("synthesizing {} records", corpus.len());
    let (outcomes, stats) = synthesize_dataset(&corpus, &cfg, services.as_ref())?;

    let file = fs::File::create(&a.out)?;
    write_records(&outcomes, io::BufWriter::new(file))?;
    write_json(&a.stats, &stats)?;

    writeln!(out, "records   {:>6}", stats.total)?;
    writeln!(out, "emitted   {:>6}", stats.emitted)?;
    writeln!(out, "rejected  {:>6}  ({:.1}%)", stats.rejected, stats.rejection_rate * 100.0)?;
    for reason in RejectionReason::ALL {
        let n = stats.per_reason.get(reason);
        if n > 0 {
            writeln!(out, "  {:<18}{:>4}", reason.to_string(), n)?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct DecodeDemoOutput {
    pub span: TimeSpan,
    pub frame_range: [usize; 2],
    pub frame_timestamps: Vec<f64>,
    pub tube: Tube,
}

pub fn decode_demo(a: &DecodeArgs) -> CliResult<DecodeDemoOutput> {
    let span = parse_span_text(&a.span)?;
    if span.end_s > a.duration {
        return Err(Error::InvalidSpan(format!(
            "span ends at {} past the {} s video",
            span.end_s, a.duration
        ))
        .into());
    }
    let grid = sample_frames(a.duration, a.frames)?;
    let (first, last) = timespan_to_frame_range(&span, &grid);

    let layout = QueryLayout::new(a.frames, a.tokens_per_frame, a.dim)?;
    let stubs = stub_frame_features(&layout, a.seed);
    let visual = Tensor::stack(&stubs.values().map(|f| f.visual.clone()).collect::<Vec<_>>())?;
    let queries = Tensor::stack(&stubs.values().map(|f| f.query.clone()).collect::<Vec<_>>())?;
    // round-trip through the interleaved token sequence the language model sees
    let (visual, queries) = deinterleave(&interleave_queries(&visual, &queries)?)?;
    let features = (first..=last)
        .map(|i| {
            Ok((
                i,
                FrameFeatures {
                    visual: visual.block(i)?,
                    query: queries.block(i)?,
                },
            ))
        })
        .collect::<Result<_, Error>>()?;

    let tokens = hash_tokens(&a.caption, TEXT_VOCAB);
    if tokens.is_empty() {
        return Err(Error::EmptyInput("caption").into());
    }
    let text = stub_text_embed(&tokens, a.dim, a.seed);
    let decoder = QueryGuidedDecoder::new(SpaceHeadParams::random(a.dim, a.seed));
    let tube = decoder.decode_tube((first, last), &features, &text, &text)?;
    Ok(DecodeDemoOutput {
        span,
        frame_range: [first, last],
        frame_timestamps: grid.timestamps[first..=last].to_vec(),
        tube,
    })
}

pub fn cmd_decode_demo(a: &DecodeArgs, out: &mut dyn Write) -> CliResult {
    let result = decode_demo(a)?;
    let text = serde_json::to_string_pretty(&result)?;
    writeln!(out, "{text}")?;
    if let Some(path) = &a.out {
        write_json(path, &result)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct GradcheckSummary {
    passed: bool,
    tolerance: f64,
    cases: usize,
    worst: Vec<WorstCase>,
}

#[derive(Debug, Serialize)]
struct WorstCase {
    check: String,
    seed: u64,
    n_params: usize,
    rel_error: f64,
}

fn summarize(report: &GradcheckReport) -> GradcheckSummary {
    use stgkit::gradcheck::CheckKind::*;
    GradcheckSummary {
        passed: report.passed(),
        tolerance: report.tolerance,
        cases: report.cases.len(),
        worst: [SpaceLoss, TimeLoss, DecodeSpaceLoss]
            .into_iter()
            .filter_map(|k| report.worst_of(k))
            .map(|c| WorstCase {
                check: c.kind.to_string(),
                seed: c.seed,
                n_params: c.n_params,
                rel_error: c.rel_error,
            })
            .collect(),
    }
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> CliResult {
    if a.tolerance.is_nan() || a.tolerance <= 0.0 {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", a.tolerance)).into());
    }
    let cfg = GradcheckConfig {
        seed: a.seed,
        cases: a.cases,
        tolerance: a.tolerance,
        weights: a.weights.resolve(),
        corrupt_analytic: a.corrupt_gradient,
    };
    let report = run_gradient_suite(&cfg)?;
    let summary = summarize(&report);
    writeln!(out, "{:<24} {:>6} {:>8} {:>12}", "check", "seed", "params", "rel_error")?;
    for w in &summary.worst {
        writeln!(out, "{:<24} {:>6} {:>8} {:>12.3e}", w.check, w.seed, w.n_params, w.rel_error)?;
    }
    writeln!(
        out,
        "{} cases, tolerance {:e}: {}",
        summary.cases,
        summary.tolerance,
        if summary.passed { "PASS" } else { "FAIL" }
    )?;
    if let Some(path) = &a.out {
        write_json(path, &summary)?;
    }
    if !report.passed() {
        let worst = report.worst().expect("a failing report has cases");
        return Err(CliError::CheckFailed(format!(
            "{} of {} gradient checks exceed {:e}; worst {} (seed {}) at {:.3e}",
            report.failures().count(),
            report.cases.len(),
            report.tolerance,
            worst.kind,
            worst.seed,
            worst.rel_error
        )));
    }
    Ok(())
}

