//! The epoch loop: seeded shuffling, batched backprop, Adam updates, and a
//! validation mAP sweep after every epoch.
//!
//! `fit` is a pure function of its inputs in the sense that two calls with
//! equal datasets and configs produce bitwise-identical logs and parameters,
//! including when `threads > 1`: batch elements run on independent tapes and
//! their gradients are reduced in element order, so the arithmetic never
//! depends on scheduling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::data::{
    normalize_skeleton, snippetize, Dataset, LabeledSpan, MotionSequence, SnippetTensor,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    decode_predictions, map_sweep, temporal_nms, GroundTruth, Interpolation,
};
use crate::matching::{
    hungarian_loss, hungarian_loss_on_tape, ClassStats, LossBreakdown, MatchWeights,
    PaddedGroundTruth,
};
use crate::model::{detach, forward, predict, ModelConfig, ModelParams};

use super::{adam_step, class_counts, Checkpoint, OptimizerState, TrainConfig};

/// Score floor when decoding validation predictions. Zero keeps every span the
/// no-action class does not veto; ranking inside the AP computation sorts out
/// the rest, so a floor would only hide early-training recall.
const VAL_SCORE_THRESHOLD: f64 = 0.0;
/// Overlap threshold for the validation NMS pass.
const VAL_NMS_TIOU: f64 = 0.5;
/// The validation metric is mAP at this single tIoU.
const VAL_MAP_TIOU: f64 = 0.5;

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    /// Mean per-sequence total loss over the epoch.
    pub l_total: f64,
    pub l_cb: f64,
    pub l_span: f64,
    /// Validation mAP@0.5 with the parameters as of the end of this epoch.
    pub val_map50: f64,
}

/// Render log rows as CSV. Values use the shortest representation that parses
/// back to the same `f64`, so logs stay faithful to the run.
pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("epoch,l_total,l_cb,l_span,val_map50\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.l_total, r.l_cb, r.l_span, r.val_map50
        ));
    }
    out
}

/// What a training run hands back.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Checkpoint from the epoch with the highest validation mAP (earliest on
    /// ties). If training diverged before finishing a single epoch this holds
    /// the last parameters that were still finite.
    pub best: Checkpoint,
    /// `(epoch, val mAP@0.5)` the best checkpoint came from; `None` only when
    /// no epoch completed.
    pub best_score: Option<(usize, f64)>,
    /// Parameters as of the last completed update, best or not.
    pub final_params: ModelParams,
    pub log: Vec<LogRow>,
    /// Set when the run aborted on a non-finite loss or gradient: the epoch it
    /// happened in and a description of what blew up.
    pub diverged: Option<(usize, String)>,
}

/// A training sequence after one-time preprocessing.
struct TrainItem {
    snip: SnippetTensor,
    spans: Vec<LabeledSpan>,
    padded: PaddedGroundTruth,
}

struct ElementCtx<'a> {
    model_cfg: &'a ModelConfig,
    params: &'a ModelParams,
    stats: &'a ClassStats,
    weights: MatchWeights,
    items: &'a [TrainItem],
}

/// Forward + loss + backward for one sequence on its own tape. Returns the
/// loss breakdown and one gradient per trainable tensor in canonical order
/// (zeros for tensors the loss never touched).
fn element_pass(ctx: &ElementCtx, idx: usize) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let item = &ctx.items[idx];
    let mut tape = Tape::new();
    let bound = ctx.params.bind(&mut tape, true)?;
    let fwd = forward(&mut tape, ctx.model_cfg, &bound, &item.snip)?;
    let preds = detach(&tape, &fwd)?;
    let (breakdown, assignment) = hungarian_loss(
        &preds,
        &item.spans,
        item.snip.source_duration,
        ctx.stats,
        ctx.weights,
    )?;
    let loss = hungarian_loss_on_tape(
        &mut tape,
        fwd.logits,
        fwd.span_lo,
        fwd.span_hi,
        &item.padded,
        &assignment,
        ctx.stats,
        ctx.weights,
    )?;
    tape.backward(loss)?;
    let mut grads = Vec::with_capacity(ctx.params.num_tensors());
    bound.for_each(&mut |_, var| {
        grads.push(match tape.grad(*var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(*var).shape()),
        });
    });
    Ok((breakdown, grads))
}

/// Evaluate a batch, optionally across threads. The output order always
/// matches `batch`, which keeps the gradient reduction deterministic.
fn run_batch(
    ctx: &ElementCtx,
    batch: &[usize],
    threads: usize,
) -> Vec<Result<(LossBreakdown, Vec<Tensor>)>> {
    if threads <= 1 || batch.len() <= 1 {
        return batch.iter().map(|&i| element_pass(ctx, i)).collect();
    }
    let per = batch.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(per)
            .map(|chunk| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|&i| element_pass(ctx, i))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("batch worker panicked"))
            .collect()
    })
}

/// Errors that mean the optimization blew up rather than the program being
/// misused: these end training gracefully instead of propagating.
fn divergence_cause(e: &Error) -> Option<String> {
    match e {
        Error::NonFinite { op } | Error::NonFiniteGradient { op } => Some(op.clone()),
        Error::InvalidCostMatrix(msg) if msg.contains("non-finite") => {
            Some(format!("cost matrix: {msg}"))
        }
        _ => None,
    }
}

/// Canonicalize skeletons, snippetize, and pre-pad ground truth once.
fn prepare_train(train: &Dataset, cfg: &ModelConfig) -> Result<Vec<TrainItem>> {
    train
        .sequences
        .iter()
        .map(|seq| {
            let snip = preprocess(seq, cfg)?;
            let padded = PaddedGroundTruth::from_spans(
                &seq.spans,
                snip.source_duration,
                cfg.n_a,
                cfg.c_cls,
            )?;
            Ok(TrainItem {
                snip,
                spans: seq.spans.clone(),
                padded,
            })
        })
        .collect()
}

fn preprocess(seq: &MotionSequence, cfg: &ModelConfig) -> Result<SnippetTensor> {
    let normed = MotionSequence {
        id: seq.id.clone(),
        fps: seq.fps,
        frames: normalize_skeleton(&seq.frames)?,
        spans: seq.spans.clone(),
    };
    snippetize(&normed, cfg.n_f, cfg.t)
}

/// mAP@0.5 of the current parameters on the validation set.
fn validation_map(
    cfg: &ModelConfig,
    params: &ModelParams,
    val: &[(String, SnippetTensor)],
    gts: &[GroundTruth],
) -> Result<f64> {
    let mut dets = Vec::new();
    for (id, snip) in val {
        let raw = predict(cfg, params, snip)?;
        dets.extend(decode_predictions(&raw, id, snip.source_duration, VAL_SCORE_THRESHOLD)?);
    }
    let kept = temporal_nms(&dets, VAL_NMS_TIOU)?;
    let report = map_sweep(&kept, gts, cfg.c_cls, &[VAL_MAP_TIOU], Interpolation::RightMax)?;
    Ok(report.map_per_threshold[0])
}

/// Train a freshly initialized model.
///
/// Sequences are canonicalized and snippetized internally (canonicalization is
/// idempotent, so already-normalized data passes through unchanged). Each
/// epoch shuffles with the config seed, walks batches, averages per-sequence
/// gradients in element order, and takes one Adam step per batch; afterwards
/// the whole validation set is decoded and swept at tIoU 0.5. The best-by-
/// validation checkpoint is kept alongside the final parameters.
///
/// A non-finite loss or gradient ends the run early with `diverged` set and
/// the last good state returned — that outcome is data, not a usage error.
pub fn fit(
    train: &Dataset,
    val: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    model_cfg.validate()?;
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Err(Error::InvalidConfig {
            field: "epochs",
            problem: "must be at least 1".into(),
        });
    }
    train.validate()?;
    val.validate()?;

    let (stats, missing) =
        class_counts(train, model_cfg.c_cls, model_cfg.n_a, cfg.cb_beta, cfg.cb_gamma)?;
    for c in &missing {
        log::warn!("class {c} never occurs in the training set; weighting it as if it occurred once");
    }
    let weights = cfg.match_weights();

    let items = prepare_train(train, model_cfg)?;
    let val_snips: Vec<(String, SnippetTensor)> = val
        .sequences
        .iter()
        .map(|seq| Ok((seq.id.clone(), preprocess(seq, model_cfg)?)))
        .collect::<Result<_>>()?;
    let val_gts: Vec<GroundTruth> = val
        .sequences
        .iter()
        .flat_map(|seq| seq.spans.iter().map(|&s| (seq.id.clone(), s)))
        .collect();

    let mut params = ModelParams::init(model_cfg)?;
    let mut opt = OptimizerState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();

    let checkpoint = |params: &ModelParams, opt: &OptimizerState| Checkpoint {
        config: *model_cfg,
        params: params.clone(),
        opt: opt.clone(),
        data_seed: cfg.seed,
        counts: stats.counts().to_vec(),
        cb_beta: cfg.cb_beta,
        cb_gamma: cfg.cb_gamma,
    };

    let mut log_rows: Vec<LogRow> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    let mut diverged: Option<(usize, String)> = None;

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum_total = 0.0;
        let mut sum_cb = 0.0;
        let mut sum_span = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            let ctx = ElementCtx {
                model_cfg,
                params: &params,
                stats: &stats,
                weights,
                items: &items,
            };
            let outs = run_batch(&ctx, batch, cfg.threads);

            let mut grads: Option<Vec<Tensor>> = None;
            for out in outs {
                let (bd, g) = match out {
                    Ok(pair) => pair,
                    Err(e) => match divergence_cause(&e) {
                        Some(cause) => {
                            diverged = Some((epoch, cause));
                            break 'epochs;
                        }
                        None => return Err(e),
                    },
                };
                sum_total += bd.l_total;
                sum_cb += bd.l_cb;
                sum_span += bd.l_span;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, gi) in acc.iter_mut().zip(&g) {
                            for (x, y) in a.data_mut().iter_mut().zip(gi.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let mut grads = grads.expect("batches are never empty");
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grads {
                for x in g.data_mut() {
                    *x *= inv;
                }
            }

            if let Err(e) = adam_step(&mut params, &grads, &mut opt, cfg) {
                match divergence_cause(&e) {
                    Some(cause) => {
                        diverged = Some((epoch, cause));
                        break 'epochs;
                    }
                    None => return Err(e),
                }
            }
        }

        let n = items.len() as f64;
        let (l_total, l_cb, l_span) = (sum_total / n, sum_cb / n, sum_span / n);
        if !l_total.is_finite() {
            diverged = Some((epoch, format!("epoch loss {l_total}")));
            break;
        }

        let val_map50 = validation_map(model_cfg, &params, &val_snips, &val_gts)?;
        log_rows.push(LogRow {
            epoch,
            l_total,
            l_cb,
            l_span,
            val_map50,
        });
        log::info!(
            "epoch {epoch}: loss {l_total:.4} (cb {l_cb:.4}, span {l_span:.4}), val mAP@0.5 {val_map50:.4}"
        );
        if best.as_ref().is_none_or(|(_, b, _)| val_map50 > *b) {
            best = Some((epoch, val_map50, checkpoint(&params, &opt)));
        }
    }

    let (best_score, best_ckpt) = match best {
        Some((e, v, c)) => (Some((e, v)), c),
        // Diverged inside the very first epoch: the parameters were still
        // finite when we stopped, so hand those back rather than nothing.
        None => (None, checkpoint(&params, &opt)),
    };
    Ok(FitResult {
        best: best_ckpt,
        best_score,
        final_params: params,
        log: log_rows,
        diverged,
    })
}
