//! The forward pass: snippet embedding, deformable-attention encoder,
//! query decoder, and the two prediction heads.
//!
//! Everything is built on the tape so one `backward` call reaches every
//! parameter. Feature matrices are column-per-position throughout: the
//! encoder works on `[C, T]`, the decoder on `[C, N_a]`.

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::SnippetTensor;
use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::params::{BoundParams, DeformAttn, Linear, ModelParams, Norm, LN_EPS};
use super::RawPredictionSet;

/// Tape handles for the model outputs: class logits `[C_cls+1, N_a]` and the
/// canonicalized span edges, each `[1, N_a]`, in normalized `[0,1]` time.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub logits: Var,
    pub span_lo: Var,
    pub span_hi: Var,
}

fn affine(tape: &mut Tape, lin: &Linear<Var>, x: Var) -> Result<Var> {
    let wx = tape.matmul(lin.w, x)?;
    tape.add(wx, lin.b)
}

fn norm(tape: &mut Tape, n: &Norm<Var>, x: Var) -> Result<Var> {
    tape.layer_norm(x, 0, n.gain, n.bias, LN_EPS)
}

/// Residual add followed by layer norm — the post-norm sublayer wrapper.
fn residual_norm(tape: &mut Tape, n: &Norm<Var>, x: Var, dx: Var) -> Result<Var> {
    let sum = tape.add(x, dx)?;
    norm(tape, n, sum)
}

fn ffn(tape: &mut Tape, lin1: &Linear<Var>, lin2: &Linear<Var>, x: Var) -> Result<Var> {
    let h = affine(tape, lin1, x)?;
    let h = tape.relu(h)?;
    affine(tape, lin2, h)
}

/// Project snippet features to model width and add the position encoding.
///
/// The snippet table is `T × D` row-per-position; the network wants
/// column-per-position, so it is transposed once here, outside the tape.
pub fn embed_input(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &BoundParams,
    snippets: &SnippetTensor,
) -> Result<Var> {
    if snippets.t != cfg.t || snippets.dim() != cfg.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "embed_input",
            lhs: vec![cfg.t, cfg.input_dim()],
            rhs: vec![snippets.t, snippets.dim()],
        });
    }
    let x = Tensor::new(vec![snippets.t, snippets.dim()], snippets.data.clone())?
        .transposed()?;
    let x = tape.constant(x)?;
    let proj = affine(tape, &bound.input, x)?;
    tape.add(proj, bound.pe)
}

/// One deformable-attention block.
///
/// Each of the `H` heads turns every query column of `z` into `K` sampling
/// positions (a learned offset around the query's reference point) and a
/// softmax over the `K` attention logits, then mixes linearly-interpolated
/// reads of the value-projected `x` at those positions. Queries touch only
/// the positions they point at, which is what keeps this linear in `T`
/// rather than quadratic.
///
/// Shapes: `x` is `[C, T_x]`, `z` is `[C, N_q]`, `refs` is `[1, N_q]` in
/// position units (fractional indices into `x`'s columns); returns
/// `[C, N_q]`.
pub fn deformable_attention(
    tape: &mut Tape,
    cfg: &ModelConfig,
    attn: &DeformAttn<Var>,
    x: Var,
    z: Var,
    refs: Var,
) -> Result<Var> {
    let [_, nq] = tape.value(z).dims2("deformable_attention")?;
    let cv = cfg.head_dim();
    let values = affine(tape, &attn.value, x)?; // [C, T_x]
    let offsets = affine(tape, &attn.offset, z)?; // [H·K, N_q]
    let logits = affine(tape, &attn.weight, z)?; // [H·K, N_q]
    let mut heads = Vec::with_capacity(cfg.h);
    for head in 0..cfg.h {
        let v_h = tape.slice_rows(values, head * cv, cv)?; // [Cv, T_x]
        let off_h = tape.slice_rows(offsets, head * cfg.k, cfg.k)?; // [K, N_q]
        let pos = tape.add(off_h, refs)?; // broadcast over the K rows
        let pos_flat = tape.reshape(pos, &[cfg.k * nq])?;
        let samples = tape.interp_sample(v_h, pos_flat)?; // [Cv, K·N_q]
        let att_h = tape.slice_rows(logits, head * cfg.k, cfg.k)?;
        let att = tape.softmax(att_h, 0)?; // over the K samples
        let att_flat = tape.reshape(att, &[1, cfg.k * nq])?;
        let weighted = tape.mul(samples, att_flat)?; // [Cv, K·N_q]
        let grouped = tape.reshape(weighted, &[cv, cfg.k, nq])?;
        heads.push(tape.sum(grouped, Some(1))?); // [Cv, N_q]
    }
    let cat = tape.concat(&heads, 0)?; // [C, N_q]
    affine(tape, &attn.out, cat)
}

/// Run the encoder stack over the embedded sequence `[C, T]`. With zero
/// layers this is the identity.
pub fn encoder_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &BoundParams,
    x: Var,
) -> Result<Var> {
    // Encoder positions attend around themselves: reference point = own index.
    let refs = tape.constant(Tensor::from_fn(&[1, cfg.t], |i| i as f64))?;
    let mut h = x;
    for layer in &bound.enc {
        let da = deformable_attention(tape, cfg, &layer.attn, h, h, refs)?;
        let n1 = residual_norm(tape, &layer.norm1, h, da)?;
        let f = ffn(tape, &layer.ffn1, &layer.ffn2, n1)?;
        h = residual_norm(tape, &layer.norm2, n1, f)?;
    }
    Ok(h)
}

/// Run the decoder stack: `N_a` learned queries refine themselves with dense
/// self-attention and read from the encoder memory with deformable
/// cross-attention anchored at each query's learned reference point. With
/// zero layers the output is the query embedding matrix itself.
pub fn decoder_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &BoundParams,
    memory: Var,
) -> Result<Var> {
    let mut y = bound.queries; // [C, N_a]
    let sig = tape.sigmoid(bound.query_ref)?;
    let refs = tape.scale(sig, (cfg.t - 1) as f64)?; // [1, N_a] in (0, T-1)
    let cv = cfg.head_dim();
    let scale = 1.0 / (cv as f64).sqrt();
    for layer in &bound.dec {
        // Dense multi-head self-attention over the queries.
        let q = affine(tape, &layer.sa_q, y)?;
        let k = affine(tape, &layer.sa_k, y)?;
        let v = affine(tape, &layer.sa_v, y)?;
        let mut heads = Vec::with_capacity(cfg.h);
        for head in 0..cfg.h {
            let qh = tape.slice_rows(q, head * cv, cv)?;
            let kh = tape.slice_rows(k, head * cv, cv)?;
            let vh = tape.slice_rows(v, head * cv, cv)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(kt, qh)?; // [N_a keys, N_a queries]
            let scores = tape.scale(scores, scale)?;
            let att = tape.softmax(scores, 0)?; // each query's column sums to 1
            heads.push(tape.matmul(vh, att)?); // [Cv, N_a]
        }
        let cat = tape.concat(&heads, 0)?;
        let sa = affine(tape, &layer.sa_out, cat)?;
        let n1 = residual_norm(tape, &layer.norm1, y, sa)?;

        let ca = deformable_attention(tape, cfg, &layer.cross, memory, n1, refs)?;
        let n2 = residual_norm(tape, &layer.norm2, n1, ca)?;

        let f = ffn(tape, &layer.ffn1, &layer.ffn2, n2)?;
        y = residual_norm(tape, &layer.norm3, n2, f)?;
    }
    Ok(y)
}

/// Apply the classification and span-regression heads to the decoder output
/// `[C, N_a]`. Span edges pass through a sigmoid and are canonicalized with
/// min/max so `lo <= hi` always holds.
pub fn predict_heads(tape: &mut Tape, bound: &BoundParams, y: Var) -> Result<ForwardVars> {
    let logits = affine(tape, &bound.cls, y)?;
    let r = affine(tape, &bound.reg1, y)?;
    let r = tape.relu(r)?;
    let r = affine(tape, &bound.reg2, r)?;
    let r = tape.relu(r)?;
    let r = affine(tape, &bound.reg3, r)?; // [2, N_a]
    let edges = tape.sigmoid(r)?;
    let a = tape.slice_rows(edges, 0, 1)?;
    let b = tape.slice_rows(edges, 1, 1)?;
    let span_lo = tape.minimum(a, b)?;
    let span_hi = tape.maximum(a, b)?;
    Ok(ForwardVars {
        logits,
        span_lo,
        span_hi,
    })
}

/// Full forward pass on an already-bound parameter set.
pub fn forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &BoundParams,
    snippets: &SnippetTensor,
) -> Result<ForwardVars> {
    let x = embed_input(tape, cfg, bound, snippets)?;
    let mem = encoder_forward(tape, cfg, bound, x)?;
    let y = decoder_forward(tape, cfg, bound, mem)?;
    predict_heads(tape, bound, y)
}

/// Copy a forward pass's outputs off the tape into plain numbers.
pub fn detach(tape: &Tape, fwd: &ForwardVars) -> Result<RawPredictionSet> {
    let logits = tape.value(fwd.logits);
    let [labels, n_a] = logits.dims2("detach")?;
    let lo = tape.value(fwd.span_lo);
    let hi = tape.value(fwd.span_hi);
    let class_logits = (0..n_a)
        .map(|q| (0..labels).map(|j| logits.at(&[j, q])).collect())
        .collect();
    let spans = (0..n_a)
        .map(|q| [lo.at(&[0, q]), hi.at(&[0, q])])
        .collect();
    let preds = RawPredictionSet {
        class_logits,
        spans,
    };
    preds.validate()?;
    Ok(preds)
}

/// Inference convenience: bind frozen, run forward, detach.
pub fn predict(
    cfg: &ModelConfig,
    params: &ModelParams,
    snippets: &SnippetTensor,
) -> Result<RawPredictionSet> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false)?;
    let fwd = forward(&mut tape, cfg, &bound, snippets)?;
    detach(&tape, &fwd)
}
