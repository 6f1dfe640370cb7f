use rayon::prelude::*;

use crate::cfm::{cfm_loss_and_grad, CfmConfig, FlowSample};
use crate::error::{Error, Result};
use crate::linalg::{matmul_block, matmul_block_t, Matrix};
use crate::motion_data::ConditionId;

use super::params::{ParamLayout, PredictorParams};
use super::{PredictorConfig, Variant};

const LN_EPS: f64 = 1e-5;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn map(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let mut out = m.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = f(*v));
    out
}

fn hadamard_silu_grad(upstream: &Matrix, pre: &Matrix) -> Matrix {
    let mut out = upstream.clone();
    for (g, a) in out.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        *g *= silu_grad(*a);
    }
    out
}

/// Sinusoidal features of `t`: `[sin(1000·t·ω_i)…, cos(1000·t·ω_i)…]`
/// with geometrically spaced `ω_i`, padded with zeros to `dim`.
pub fn time_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        let arg = 1000.0 * t * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// Gradient accumulator laid out like the parameters.
struct Grad<'a> {
    layout: &'a ParamLayout,
    values: Vec<f64>,
}

impl<'a> Grad<'a> {
    fn new(layout: &'a ParamLayout) -> Self {
        Grad {
            layout,
            values: vec![0.0; layout.total()],
        }
    }

    fn block(&mut self, name: &str) -> &mut [f64] {
        let r = self.layout.range(name);
        &mut self.values[r]
    }

    fn add(&mut self, name: &str, v: &[f64]) {
        for (g, x) in self.block(name).iter_mut().zip(v) {
            *g += x;
        }
    }
}

struct ContextCache {
    features: Matrix,
    pre: Matrix,
    act: Matrix,
    condition: usize,
}

fn check_inputs(params: &PredictorParams, config: &PredictorConfig, xt: &Matrix, condition: ConditionId) -> Result<()> {
    let layout = params.layout();
    let d = layout.block("output.b").cols;
    if xt.cols() != d {
        return Err(Error::Shape(format!("input has {} features, model expects {d}", xt.cols())));
    }
    if xt.rows() == 0 {
        return Err(Error::Shape("input has no frames".into()));
    }
    if xt.rows() > config.max_frames {
        return Err(Error::Shape(format!(
            "{} frames exceed max_frames {}",
            xt.rows(),
            config.max_frames
        )));
    }
    let rows = layout.block("cond.table").rows;
    if condition.0 >= rows {
        return Err(Error::InvalidInput(format!(
            "condition {condition} outside the {rows}-row table"
        )));
    }
    if layout.find("pos.table").is_some() != config.positional_encoding
        || layout.find("mlp.0.w").is_some() != (config.variant == Variant::FrameMlp && config.layer_count > 0)
    {
        return Err(Error::Shape("parameters were built for a different configuration".into()));
    }
    Ok(())
}

/// Context token: time embedding plus condition row.
fn context(params: &PredictorParams, h: usize, t: f64, condition: ConditionId) -> (Vec<f64>, ContextCache) {
    let features = Matrix::from_vec(1, h, time_features(t, h)).unwrap();
    let mut pre = matmul_block(&features, params.block("time.w1"), h);
    pre.add_row_vector(params.block("time.b1"));
    let act = map(&pre, silu);
    let mut emb = matmul_block(&act, params.block("time.w2"), h);
    emb.add_row_vector(params.block("time.b2"));
    let table = params.block("cond.table");
    let row = &table[condition.0 * h..(condition.0 + 1) * h];
    let ctx: Vec<f64> = emb.as_slice().iter().zip(row).map(|(a, b)| a + b).collect();
    (
        ctx,
        ContextCache {
            features,
            pre,
            act,
            condition: condition.0,
        },
    )
}

fn context_backward(params: &PredictorParams, grad: &mut Grad, cache: &ContextCache, dctx: &[f64]) {
    let h = dctx.len();
    let c = cache.condition;
    for (g, d) in grad.block("cond.table")[c * h..(c + 1) * h].iter_mut().zip(dctx) {
        *g += d;
    }
    let demb = Matrix::from_vec(1, h, dctx.to_vec()).unwrap();
    cache.act.t_matmul_acc(&demb, grad.block("time.w2"));
    grad.add("time.b2", dctx);
    let dact = matmul_block_t(&demb, params.block("time.w2"), h);
    let dpre = hadamard_silu_grad(&dact, &cache.pre);
    cache.features.t_matmul_acc(&dpre, grad.block("time.w1"));
    grad.add("time.b1", dpre.as_slice());
}

/// Frame tokens before the context is mixed in: `x·W_in + b_in (+ pos)`.
fn frame_tokens(params: &PredictorParams, config: &PredictorConfig, xt: &Matrix) -> Matrix {
    let h = config.hidden_dim;
    let mut tok = matmul_block(xt, params.block("input.w"), h);
    tok.add_row_vector(params.block("input.b"));
    if config.positional_encoding {
        let pos = params.block("pos.table");
        for r in 0..tok.rows() {
            for (x, p) in tok.row_mut(r).iter_mut().zip(&pos[r * h..(r + 1) * h]) {
                *x += p;
            }
        }
    }
    tok
}

fn frame_tokens_backward(config: &PredictorConfig, grad: &mut Grad, xt: &Matrix, dtok: &Matrix) {
    let h = config.hidden_dim;
    xt.t_matmul_acc(dtok, grad.block("input.w"));
    dtok.col_sums_acc(grad.block("input.b"));
    if config.positional_encoding {
        let pos = grad.block("pos.table");
        for r in 0..dtok.rows() {
            for (g, d) in pos[r * h..(r + 1) * h].iter_mut().zip(dtok.row(r)) {
                *g += d;
            }
        }
    }
}

/// Token sequence seen by the body: row 0 is the context token (time plus
/// condition embedding), rows `1..=N` are the projected frames.
pub fn embed_inputs(
    params: &PredictorParams,
    config: &PredictorConfig,
    xt: &Matrix,
    t: f64,
    condition: ConditionId,
) -> Result<Matrix> {
    check_inputs(params, config, xt, condition)?;
    let h = config.hidden_dim;
    let (ctx, _) = context(params, h, t, condition);
    let frames = frame_tokens(params, config, xt);
    let mut out = Matrix::zeros(xt.rows() + 1, h);
    out.row_mut(0).copy_from_slice(&ctx);
    out.as_mut_slice()[h..].copy_from_slice(frames.as_slice());
    Ok(out)
}

// ---------------------------------------------------------------- FrameMlp

struct MlpCache {
    ctx: ContextCache,
    hidden: Vec<Matrix>,
    pre: Vec<Matrix>,
}

fn mlp_forward(params: &PredictorParams, config: &PredictorConfig, xt: &Matrix, t: f64, c: ConditionId) -> (Matrix, MlpCache) {
    let h = config.hidden_dim;
    let (ctx, ctx_cache) = context(params, h, t, c);
    let mut x = frame_tokens(params, config, xt);
    x.add_row_vector(&ctx);
    let mut hidden = Vec::with_capacity(config.layer_count + 1);
    let mut pre = Vec::with_capacity(config.layer_count);
    for l in 0..config.layer_count {
        let mut a = matmul_block(&x, params.block(&format!("mlp.{l}.w")), h);
        a.add_row_vector(params.block(&format!("mlp.{l}.b")));
        let mut next = x.clone();
        for (n, v) in next.as_mut_slice().iter_mut().zip(a.as_slice()) {
            *n += silu(*v);
        }
        hidden.push(x);
        pre.push(a);
        x = next;
    }
    let d = params.layout().block("output.b").cols;
    let mut out = matmul_block(&x, params.block("output.w"), d);
    out.add_row_vector(params.block("output.b"));
    hidden.push(x);
    (
        out,
        MlpCache {
            ctx: ctx_cache,
            hidden,
            pre,
        },
    )
}

fn mlp_backward(params: &PredictorParams, config: &PredictorConfig, xt: &Matrix, cache: &MlpCache, dy: &Matrix) -> Vec<f64> {
    let h = config.hidden_dim;
    let mut grad = Grad::new(params.layout());
    let last = cache.hidden.last().unwrap();
    last.t_matmul_acc(dy, grad.block("output.w"));
    dy.col_sums_acc(grad.block("output.b"));
    let mut dx = matmul_block_t(dy, params.block("output.w"), h);
    for l in (0..config.layer_count).rev() {
        let da = hadamard_silu_grad(&dx, &cache.pre[l]);
        cache.hidden[l].t_matmul_acc(&da, grad.block(&format!("mlp.{l}.w")));
        da.col_sums_acc(grad.block(&format!("mlp.{l}.b")));
        dx.add_assign(&matmul_block_t(&da, params.block(&format!("mlp.{l}.w")), h));
    }
    frame_tokens_backward(config, &mut grad, xt, &dx);
    let mut dctx = vec![0.0; h];
    dx.col_sums_acc(&mut dctx);
    context_backward(params, &mut grad, &cache.ctx, &dctx);
    grad.values
}

// ------------------------------------------------------- AttentionEncoder

struct NormCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64]) -> (Matrix, NormCache) {
    let h = x.cols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = xhat.row_mut(r);
        let mean = row.iter().sum::<f64>() / h;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h;
        let s = 1.0 / (var + LN_EPS).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * s);
        rstd.push(s);
    }
    let mut y = xhat.clone();
    for r in 0..y.rows() {
        for ((v, g), b) in y.row_mut(r).iter_mut().zip(gain).zip(bias) {
            *v = *v * g + b;
        }
    }
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward(dy: &Matrix, cache: &NormCache, gain: &[f64], grad: &mut Grad, gain_name: &str, bias_name: &str) -> Matrix {
    let h = dy.cols();
    {
        let dg = grad.block(gain_name);
        for r in 0..dy.rows() {
            for ((g, d), x) in dg.iter_mut().zip(dy.row(r)).zip(cache.xhat.row(r)) {
                *g += d * x;
            }
        }
    }
    dy.col_sums_acc(grad.block(bias_name));
    let mut dx = Matrix::zeros(dy.rows(), h);
    let mut dxhat = vec![0.0; h];
    for r in 0..dy.rows() {
        for ((o, d), g) in dxhat.iter_mut().zip(dy.row(r)).zip(gain) {
            *o = d * g;
        }
        let xhat = cache.xhat.row(r);
        let mean_d = dxhat.iter().sum::<f64>() / h as f64;
        let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / h as f64;
        let s = cache.rstd[r];
        for ((o, d), x) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xhat) {
            *o = s * (d - mean_d - x * mean_dx);
        }
    }
    dx
}

fn columns(m: &Matrix, start: usize, width: usize) -> Matrix {
    Matrix::from_fn(m.rows(), width, |r, c| m.get(r, start + c))
}

fn add_columns(dst: &mut Matrix, start: usize, src: &Matrix) {
    for r in 0..src.rows() {
        for c in 0..src.cols() {
            let v = dst.get(r, start + c) + src.get(r, c);
            dst.set(r, start + c, v);
        }
    }
}

fn softmax_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

struct LayerCache {
    input: Matrix,
    ln1: NormCache,
    normed1: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    attended: Matrix,
    ln2: NormCache,
    normed2: Matrix,
    ff_pre: Matrix,
    ff_act: Matrix,
}

struct AttentionCache {
    ctx: ContextCache,
    layers: Vec<LayerCache>,
    final_ln: NormCache,
    final_out: Matrix,
}

fn affine(x: &Matrix, params: &PredictorParams, w: &str, b: &str, cols: usize) -> Matrix {
    let mut y = matmul_block(x, params.block(w), cols);
    y.add_row_vector(params.block(b));
    y
}

fn attention_forward(params: &PredictorParams, config: &PredictorConfig, xt: &Matrix, t: f64, c: ConditionId) -> (Matrix, AttentionCache) {
    let h = config.hidden_dim;
    let heads = config.head_count;
    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (ctx, ctx_cache) = context(params, h, t, c);
    let frames = frame_tokens(params, config, xt);
    let len = xt.rows() + 1;
    let mut x = Matrix::zeros(len, h);
    x.row_mut(0).copy_from_slice(&ctx);
    x.as_mut_slice()[h..].copy_from_slice(frames.as_slice());

    let mut layers = Vec::with_capacity(config.layer_count);
    for l in 0..config.layer_count {
        let p = format!("attn.{l}");
        let (normed1, ln1) = layer_norm(&x, params.block(&format!("{p}.ln1.g")), params.block(&format!("{p}.ln1.b")));
        let q = affine(&normed1, params, &format!("{p}.wq"), &format!("{p}.bq"), h);
        let k = affine(&normed1, params, &format!("{p}.wk"), &format!("{p}.bk"), h);
        let v = affine(&normed1, params, &format!("{p}.wv"), &format!("{p}.bv"), h);
        let mut attended = Matrix::zeros(len, h);
        let mut probs = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = columns(&q, head * dh, dh);
            let kh = columns(&k, head * dh, dh);
            let vh = columns(&v, head * dh, dh);
            let mut s = qh.matmul_t(&kh);
            s.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
            softmax_rows(&mut s);
            add_columns(&mut attended, head * dh, &s.matmul(&vh));
            probs.push(s);
        }
        let proj = affine(&attended, params, &format!("{p}.wo"), &format!("{p}.bo"), h);
        let mut mid = x.clone();
        mid.add_assign(&proj);
        let (normed2, ln2) = layer_norm(&mid, params.block(&format!("{p}.ln2.g")), params.block(&format!("{p}.ln2.b")));
        let ff_pre = affine(&normed2, params, &format!("{p}.ff1.w"), &format!("{p}.ff1.b"), config.ff_dim);
        let ff_act = map(&ff_pre, silu);
        let ff_out = affine(&ff_act, params, &format!("{p}.ff2.w"), &format!("{p}.ff2.b"), h);
        let mut out = mid;
        out.add_assign(&ff_out);
        layers.push(LayerCache {
            input: std::mem::replace(&mut x, out),
            ln1,
            normed1,
            q,
            k,
            v,
            probs,
            attended,
            ln2,
            normed2,
            ff_pre,
            ff_act,
        });
    }
    let (normed, final_ln) = layer_norm(&x, params.block("final_ln.g"), params.block("final_ln.b"));
    let frames_out = Matrix::from_vec(len - 1, h, normed.as_slice()[h..].to_vec()).unwrap();
    let d = params.layout().block("output.b").cols;
    let out = affine(&frames_out, params, "output.w", "output.b", d);
    (
        out,
        AttentionCache {
            ctx: ctx_cache,
            layers,
            final_ln,
            final_out: frames_out,
        },
    )
}

fn attention_backward(params: &PredictorParams, config: &PredictorConfig, xt: &Matrix, cache: &AttentionCache, dy: &Matrix) -> Vec<f64> {
    let h = config.hidden_dim;
    let heads = config.head_count;
    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let len = xt.rows() + 1;
    let mut grad = Grad::new(params.layout());

    cache.final_out.t_matmul_acc(dy, grad.block("output.w"));
    dy.col_sums_acc(grad.block("output.b"));
    let dframes = matmul_block_t(dy, params.block("output.w"), h);
    let mut dnormed = Matrix::zeros(len, h);
    dnormed.as_mut_slice()[h..].copy_from_slice(dframes.as_slice());
    let mut dx = layer_norm_backward(&dnormed, &cache.final_ln, params.block("final_ln.g"), &mut grad, "final_ln.g", "final_ln.b");

    for l in (0..config.layer_count).rev() {
        let p = format!("attn.{l}");
        let lc = &cache.layers[l];
        // feed-forward branch
        let ff2 = format!("{p}.ff2.w");
        lc.ff_act.t_matmul_acc(&dx, grad.block(&ff2));
        dx.col_sums_acc(grad.block(&format!("{p}.ff2.b")));
        let dact = matmul_block_t(&dx, params.block(&ff2), config.ff_dim);
        let dpre = hadamard_silu_grad(&dact, &lc.ff_pre);
        let ff1 = format!("{p}.ff1.w");
        lc.normed2.t_matmul_acc(&dpre, grad.block(&ff1));
        dpre.col_sums_acc(grad.block(&format!("{p}.ff1.b")));
        let dnormed2 = matmul_block_t(&dpre, params.block(&ff1), h);
        let g2 = format!("{p}.ln2.g");
        let dmid = layer_norm_backward(&dnormed2, &lc.ln2, params.block(&g2), &mut grad, &g2, &format!("{p}.ln2.b"));
        dx.add_assign(&dmid);

        // attention branch
        let wo = format!("{p}.wo");
        lc.attended.t_matmul_acc(&dx, grad.block(&wo));
        dx.col_sums_acc(grad.block(&format!("{p}.bo")));
        let dattended = matmul_block_t(&dx, params.block(&wo), h);
        let mut dq = Matrix::zeros(len, h);
        let mut dk = Matrix::zeros(len, h);
        let mut dv = Matrix::zeros(len, h);
        for head in 0..heads {
            let probs = &lc.probs[head];
            let qh = columns(&lc.q, head * dh, dh);
            let kh = columns(&lc.k, head * dh, dh);
            let vh = columns(&lc.v, head * dh, dh);
            let dout = columns(&dattended, head * dh, dh);
            let dprobs = dout.matmul_t(&vh);
            add_columns(&mut dv, head * dh, &probs.t_matmul(&dout));
            let mut dscores = dprobs;
            for r in 0..len {
                let pr = probs.row(r);
                let row = dscores.row_mut(r);
                let dot: f64 = row.iter().zip(pr).map(|(a, b)| a * b).sum();
                for (d, p) in row.iter_mut().zip(pr) {
                    *d = p * (*d - dot) * scale;
                }
            }
            add_columns(&mut dq, head * dh, &dscores.matmul(&kh));
            add_columns(&mut dk, head * dh, &dscores.t_matmul(&qh));
        }
        let mut dnormed1 = Matrix::zeros(len, h);
        for (m, dm) in [("q", &dq), ("k", &dk), ("v", &dv)] {
            let w = format!("{p}.w{m}");
            lc.normed1.t_matmul_acc(dm, grad.block(&w));
            dm.col_sums_acc(grad.block(&format!("{p}.b{m}")));
            dnormed1.add_assign(&matmul_block_t(dm, params.block(&w), h));
        }
        let g1 = format!("{p}.ln1.g");
        let din = layer_norm_backward(&dnormed1, &lc.ln1, params.block(&g1), &mut grad, &g1, &format!("{p}.ln1.b"));
        dx.add_assign(&din);
        debug_assert_eq!(lc.input.rows(), len);
    }

    let dctx = dx.row(0).to_vec();
    let dtok = Matrix::from_vec(len - 1, h, dx.as_slice()[h..].to_vec()).unwrap();
    frame_tokens_backward(config, &mut grad, xt, &dtok);
    context_backward(params, &mut grad, &cache.ctx, &dctx);
    grad.values
}

// ---------------------------------------------------------------- public

enum Cache {
    Mlp(MlpCache),
    Attention(AttentionCache),
}

fn forward_cached(params: &PredictorParams, config: &PredictorConfig, xt: &Matrix, t: f64, c: ConditionId) -> Result<(Matrix, Cache)> {
    check_inputs(params, config, xt, c)?;
    Ok(match config.variant {
        Variant::FrameMlp => {
            let (y, cache) = mlp_forward(params, config, xt, t, c);
            (y, Cache::Mlp(cache))
        }
        Variant::AttentionEncoder => {
            let (y, cache) = attention_forward(params, config, xt, t, c);
            (y, Cache::Attention(cache))
        }
    })
}

/// `x̂ = G(x_t, t, c; θ)`, one output row per input frame.
pub fn forward(params: &PredictorParams, config: &PredictorConfig, xt: &Matrix, t: f64, condition: ConditionId) -> Result<Matrix> {
    forward_cached(params, config, xt, t, condition).map(|(y, _)| y)
}

fn sample_loss_and_grad(params: &PredictorParams, config: &PredictorConfig, sample: &FlowSample, cfm: &CfmConfig) -> Result<(f64, Vec<f64>)> {
    let xt = sample.valid_xt();
    let (y, cache) = forward_cached(params, config, &xt, sample.t, sample.condition)?;
    let (loss, dy) = cfm_loss_and_grad(&y, sample, cfm)?;
    let grad = match cache {
        Cache::Mlp(c) => mlp_backward(params, config, &xt, &c, &dy),
        Cache::Attention(c) => attention_backward(params, config, &xt, &c, &dy),
    };
    Ok((loss, grad))
}

/// Mean flow-matching loss over `batch` and its gradient with respect to
/// every parameter, indexed like [`PredictorParams::flat`].
///
/// Samples are processed in parallel; per-sample results are reduced in
/// batch order so the output does not depend on scheduling.
pub fn backward(params: &PredictorParams, config: &PredictorConfig, batch: &[FlowSample], cfm: &CfmConfig) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let per_sample: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .map(|s| sample_loss_and_grad(params, config, s, cfm))
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let n = batch.len() as f64;
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((loss, grad))
}
