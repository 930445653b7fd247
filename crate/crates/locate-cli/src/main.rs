//! Command-line surface for the localization pipeline.
//!
//! Subcommands compose into the full chain: `generate` → `preprocess` (or let
//! `train` handle preprocessing itself) → `train` → `predict` → `nms` →
//! `eval` → `report`. Every run prints its resolved configuration first, so a
//! log line is always enough to reproduce a file.
//!
//! Exit codes: 0 success, 2 bad flags/configs/files, 3 training divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use locate_core::data::{
    generate_synthetic, load_dataset, normalize_skeleton, save_dataset, snippetize,
    SyntheticConfig,
};
use locate_core::evaluation::{
    confusion_matrix, decode_predictions, default_thresholds, map_sweep,
    read_detections_jsonl, temporal_nms, write_detections_jsonl, GroundTruth, Interpolation,
};
use locate_core::model::predict;
use locate_core::trainer::{load_checkpoint, log_to_csv, save_checkpoint, TrainConfig};
use locate_core::{Detection, ModelConfig, MotionSequence, SnippetTensor};

mod svg;

/// tIoU at which the confusion matrix in the eval bundle is computed.
const CONFUSION_TIOU: f64 = 0.5;

#[derive(Parser)]
#[command(
    name = "locate",
    version,
    about = "Temporal action localization on 3D skeletons",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled motion dataset.
    Generate(GenerateArgs),
    /// Canonicalize skeletons and cut sequences into snippet tensors.
    Preprocess(PreprocessArgs),
    /// Train a model; keeps the best-by-validation checkpoint and a CSV log.
    Train(TrainArgs),
    /// Run a checkpoint over a dataset and write detections as JSONL.
    Predict(PredictArgs),
    /// Suppress overlapping same-class detections.
    Nms(NmsArgs),
    /// Score detections against ground truth across tIoU thresholds.
    Eval(EvalArgs),
    /// Render an evaluation bundle as standalone SVG plots.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of action classes.
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Number of sequences.
    #[arg(long, default_value_t = 20)]
    sequences: usize,
    /// Shortest sequence duration, seconds.
    #[arg(long, default_value_t = 8.0)]
    duration_min: f64,
    /// Longest sequence duration, seconds.
    #[arg(long, default_value_t = 16.0)]
    duration_max: f64,
    /// Std of the per-coordinate Gaussian jitter, meters.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset path (JSON).
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Input dataset (JSON).
    dataset: PathBuf,
    /// Frames per snippet.
    #[arg(long, default_value_t = 8)]
    snippet: usize,
    /// Snippets per sequence (the model's temporal length).
    #[arg(long, default_value_t = 100)]
    seq_len: usize,
    /// Output snippet-tensor path (JSON).
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (JSON).
    #[arg(long)]
    train: PathBuf,
    /// Validation dataset (JSON).
    #[arg(long)]
    val: PathBuf,
    /// Output directory for best.ckpt and train_log.csv.
    #[arg(long, short = 'o')]
    out: PathBuf,
    /// Learning rate.
    #[arg(long, default_value_t = 4e-3)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Batch size.
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Encoder and decoder depth together; the per-side flags override it.
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// Encoder layers (overrides --layers).
    #[arg(long)]
    layers_enc: Option<usize>,
    /// Decoder layers (overrides --layers).
    #[arg(long)]
    layers_dec: Option<usize>,
    /// Attention heads.
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Model width C.
    #[arg(long, default_value_t = 256)]
    dim: usize,
    /// Temporal positions T.
    #[arg(long, default_value_t = 100)]
    seq_len: usize,
    /// Frames per snippet.
    #[arg(long, default_value_t = 8)]
    snippet: usize,
    /// Action queries.
    #[arg(long, default_value_t = 30)]
    queries: usize,
    /// Deformable sampling points per head.
    #[arg(long, default_value_t = 4)]
    samples_k: usize,
    /// Weight of the gIoU span term.
    #[arg(long, default_value_t = 2.0)]
    lambda_iou: f64,
    /// Weight of the L1 span term.
    #[arg(long, default_value_t = 5.0)]
    lambda_l1: f64,
    /// Class-balance beta.
    #[arg(long, default_value_t = 0.99)]
    cb_beta: f64,
    /// Focal gamma.
    #[arg(long, default_value_t = 2.0)]
    cb_gamma: f64,
    /// Seeds both the parameter init and the shuffle order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint file.
    ckpt: PathBuf,
    /// Dataset to run over (JSON).
    dataset: PathBuf,
    /// Minimum class score for a span to be emitted.
    #[arg(long, default_value_t = 0.5)]
    score_threshold: f64,
    /// Output detections path (JSONL).
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Args)]
struct NmsArgs {
    /// Input detections (JSONL).
    detections: PathBuf,
    /// Suppression threshold: same-class overlap at or above this is removed.
    #[arg(long, default_value_t = 0.5)]
    nms_iou: f64,
    /// Output detections path (JSONL).
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Detections to score (JSONL).
    detections: PathBuf,
    /// Dataset providing the ground truth (JSON).
    dataset: PathBuf,
    /// Comma-separated tIoU thresholds (default 0.1..0.9).
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Output directory for report.json and report.csv.
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation bundle (report.json from `eval`).
    report: PathBuf,
    /// Output directory for the SVG plots.
    #[arg(long, short = 'o')]
    out: PathBuf,
}

/// Error + the exit code it maps to.
struct CliError {
    code: u8,
    msg: String,
}

impl From<locate_core::Error> for CliError {
    fn from(e: locate_core::Error) -> Self {
        CliError {
            code: 2,
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        msg: msg.into(),
    }
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Preprocess(a) => cmd_preprocess(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Predict(a) => cmd_predict(a),
        Cmd::Nms(a) => cmd_nms(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Report(a) => cmd_report(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

/// Worker-thread cap from the environment; 1 (fully deterministic) unless
/// LOCATE_THREADS says otherwise.
fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var("LOCATE_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| usage(format!("LOCATE_THREADS must be a positive integer, got `{s}`"))),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text)
        .map_err(|e| usage(format!("writing {}: {e}", path.display())))
}

fn cmd_generate(a: GenerateArgs) -> CliResult {
    let cfg = SyntheticConfig {
        num_sequences: a.sequences,
        num_classes: a.classes,
        duration_range: (a.duration_min, a.duration_max),
        noise_std: a.noise,
        seed: a.seed,
        ..SyntheticConfig::default()
    };
    println!("resolved config: {cfg:#?}");
    let ds = generate_synthetic(&cfg)?;
    save_dataset(&ds, &a.out)?;
    let mut counts = vec![0usize; ds.class_names.len()];
    for seq in &ds.sequences {
        for span in &seq.spans {
            counts[span.class_id] += 1;
        }
    }
    println!(
        "wrote {} sequences ({} classes) to {}",
        ds.sequences.len(),
        ds.class_names.len(),
        a.out.display()
    );
    for (name, n) in ds.class_names.iter().zip(&counts) {
        println!("  {name}: {n} spans");
    }
    Ok(())
}

/// One preprocessed sequence as stored by `preprocess`.
#[derive(Serialize, Deserialize)]
struct SnippetRecord {
    id: String,
    t: usize,
    n_f: usize,
    source_duration: f64,
    /// Row-major `[t × (66·n_f)]` features.
    data: Vec<f64>,
}

/// Canonicalize one sequence and cut it into snippets.
fn preprocess_sequence(
    seq: &MotionSequence,
    n_f: usize,
    t: usize,
) -> locate_core::Result<SnippetTensor> {
    let normed = MotionSequence {
        id: seq.id.clone(),
        fps: seq.fps,
        frames: normalize_skeleton(&seq.frames)?,
        spans: seq.spans.clone(),
    };
    snippetize(&normed, n_f, t)
}

fn cmd_preprocess(a: PreprocessArgs) -> CliResult {
    println!(
        "resolved config: snippet_frames = {}, seq_len = {}",
        a.snippet, a.seq_len
    );
    let ds = load_dataset(&a.dataset)?;
    ds.validate()?;
    let records: Vec<SnippetRecord> = ds
        .sequences
        .iter()
        .map(|seq| {
            let s = preprocess_sequence(seq, a.snippet, a.seq_len)?;
            Ok(SnippetRecord {
                id: seq.id.clone(),
                t: s.t,
                n_f: s.n_f,
                source_duration: s.source_duration,
                data: s.data,
            })
        })
        .collect::<locate_core::Result<_>>()?;
    let json = serde_json::to_string(&records)
        .map_err(|e| usage(format!("encoding snippets: {e}")))?;
    write_text(&a.out, &json)?;
    println!(
        "wrote {} snippet tensors ({} x {} each) to {}",
        records.len(),
        a.seq_len,
        66 * a.snippet,
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let train = load_dataset(&a.train)?;
    let val = load_dataset(&a.val)?;
    if train.class_names != val.class_names {
        return Err(usage(format!(
            "train and val class vocabularies differ ({:?} vs {:?})",
            train.class_names, val.class_names
        )));
    }
    let model_cfg = ModelConfig {
        t: a.seq_len,
        n_f: a.snippet,
        c: a.dim,
        l_e: a.layers_enc.unwrap_or(a.layers),
        l_d: a.layers_dec.unwrap_or(a.layers),
        h: a.heads,
        k: a.samples_k,
        n_a: a.queries,
        c_cls: train.class_names.len(),
        ffn_width: a.dim.saturating_mul(4),
        seed: a.seed,
    };
    let threads = threads_from_env()?;
    let train_cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        lambda_iou: a.lambda_iou,
        lambda_l1: a.lambda_l1,
        cb_beta: a.cb_beta,
        cb_gamma: a.cb_gamma,
        threads,
        ..TrainConfig::default()
    };
    println!("resolved model config: {model_cfg:#?}");
    println!("resolved train config: {train_cfg:#?}");

    std::fs::create_dir_all(&a.out)
        .map_err(|e| usage(format!("creating {}: {e}", a.out.display())))?;
    let run = locate_core::fit(&train, &val, &model_cfg, &train_cfg)?;

    let ckpt_path = a.out.join("best.ckpt");
    let log_path = a.out.join("train_log.csv");
    save_checkpoint(&ckpt_path, &run.best)?;
    write_text(&log_path, &log_to_csv(&run.log))?;
    println!("wrote {} and {}", ckpt_path.display(), log_path.display());
    match run.best_score {
        Some((epoch, val_map)) => {
            println!("best checkpoint: epoch {epoch}, val mAP@0.5 = {val_map:.4}")
        }
        None => println!("no epoch completed; checkpoint holds the last finite parameters"),
    }
    if let Some((epoch, cause)) = run.diverged {
        return Err(CliError {
            code: 3,
            msg: format!("training diverged in epoch {epoch}: {cause}"),
        });
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> CliResult {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let ds = load_dataset(&a.dataset)?;
    ds.validate()?;
    if ds.class_names.len() != ckpt.config.c_cls {
        return Err(usage(format!(
            "checkpoint was trained for {} classes but the dataset declares {}",
            ckpt.config.c_cls,
            ds.class_names.len()
        )));
    }
    println!("resolved model config: {:#?}", ckpt.config);
    println!("score threshold: {}", a.score_threshold);

    let mut dets: Vec<Detection> = Vec::new();
    for seq in &ds.sequences {
        let snip = preprocess_sequence(seq, ckpt.config.n_f, ckpt.config.t)?;
        let raw = predict(&ckpt.config, &ckpt.params, &snip)?;
        dets.extend(decode_predictions(
            &raw,
            &seq.id,
            snip.source_duration,
            a.score_threshold,
        )?);
    }
    write_detections_jsonl(&a.out, &dets)?;
    println!(
        "wrote {} detections over {} sequences to {}",
        dets.len(),
        ds.sequences.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_nms(a: NmsArgs) -> CliResult {
    println!("resolved config: nms_iou = {}", a.nms_iou);
    let dets = read_detections_jsonl(&a.detections)?;
    let kept = temporal_nms(&dets, a.nms_iou)?;
    write_detections_jsonl(&a.out, &kept)?;
    println!(
        "kept {} of {} detections -> {}",
        kept.len(),
        dets.len(),
        a.out.display()
    );
    Ok(())
}

/// Everything `eval` knows, bundled so `report` needs a single input file.
#[derive(Serialize, Deserialize)]
struct EvalBundle {
    class_names: Vec<String>,
    report: locate_core::EvalReport,
    confusion_tiou: f64,
    /// `[gt class][predicted class]`, trailing row/column = unmatched.
    confusion: Vec<Vec<u64>>,
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let thresholds = a.thresholds.unwrap_or_else(default_thresholds);
    println!("resolved config: thresholds = {thresholds:?}");
    let dets = read_detections_jsonl(&a.detections)?;
    let ds = load_dataset(&a.dataset)?;
    ds.validate()?;
    let gts: Vec<GroundTruth> = ds
        .sequences
        .iter()
        .flat_map(|seq| seq.spans.iter().map(|&s| (seq.id.clone(), s)))
        .collect();
    let num_classes = ds.class_names.len();
    let report = map_sweep(&dets, &gts, num_classes, &thresholds, Interpolation::default())?;
    let confusion = confusion_matrix(&dets, &gts, num_classes, CONFUSION_TIOU)?;

    std::fs::create_dir_all(&a.out)
        .map_err(|e| usage(format!("creating {}: {e}", a.out.display())))?;
    let csv = report.to_csv(Some(&ds.class_names))?;
    let bundle = EvalBundle {
        class_names: ds.class_names.clone(),
        report,
        confusion_tiou: CONFUSION_TIOU,
        confusion: (0..=num_classes)
            .map(|i| (0..=num_classes).map(|j| confusion.at(i, j)).collect())
            .collect(),
    };
    let json = serde_json::to_string_pretty(&bundle)
        .map_err(|e| usage(format!("encoding report: {e}")))?;
    write_text(&a.out.join("report.json"), &json)?;
    write_text(&a.out.join("report.csv"), &csv)?;
    println!(
        "avg mAP = {:.4} over {} thresholds -> {}",
        bundle.report.avg_map,
        bundle.report.thresholds.len(),
        a.out.display()
    );
    for (t, m) in bundle
        .report
        .thresholds
        .iter()
        .zip(&bundle.report.map_per_threshold)
    {
        println!("  mAP@{t} = {m:.4}");
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> CliResult {
    let text = std::fs::read_to_string(&a.report)
        .map_err(|e| usage(format!("reading {}: {e}", a.report.display())))?;
    let bundle: EvalBundle = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{} is not an eval bundle: {e}", a.report.display())))?;
    println!(
        "resolved config: {} classes, {} thresholds",
        bundle.class_names.len(),
        bundle.report.thresholds.len()
    );
    if bundle.report.ap.len() != bundle.class_names.len() {
        return Err(usage(format!(
            "bundle lists {} classes but has AP rows for {}",
            bundle.class_names.len(),
            bundle.report.ap.len()
        )));
    }
    std::fs::create_dir_all(&a.out)
        .map_err(|e| usage(format!("creating {}: {e}", a.out.display())))?;
    let ap_svg = svg::ap_vs_tiou(
        &bundle.report.thresholds,
        &bundle.report.ap,
        &bundle.class_names,
    );
    let conf_svg = svg::confusion(&bundle.confusion, &bundle.class_names);
    let ap_path = a.out.join("ap_vs_tiou.svg");
    let conf_path = a.out.join("confusion.svg");
    write_text(&ap_path, &ap_svg)?;
    write_text(&conf_path, &conf_svg)?;
    println!("wrote {} and {}", ap_path.display(), conf_path.display());
    Ok(())
}
