//! Forward pass and backpropagation through time for the GRU scorer.
//!
//! For a clickout with history tokens `t_1..t_k` and candidate `c`, the GRU
//! consumes `t_1..t_k, c` and the click probability is read from the final
//! hidden state (optionally concatenated with the context MLP output):
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ŷ  = σ(w · [h_T ; mlp(device ⊕ platform)] + b_y)
//! ```
//!
//! The history prefix shared by the candidates of one clickout is run and
//! back-propagated once.

use std::sync::Arc;

use super::encode::{ContextInput, Token, TrainingExample};
use super::params::{ModelParameters, ModelShape, CANDIDATE, RESET, UPDATE};
use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub probability: f64,
    pub logit: f64,
    /// Final GRU hidden state.
    pub hidden: Vec<f64>,
    /// Context MLP output, empty when context is disabled.
    pub context: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy of a clamped probability.
pub fn bce(probability: f64, label: f64) -> f64 {
    let p = clamp_prob(probability);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

fn check_token(shape: &ModelShape, tok: &Token) -> Result<()> {
    if tok.pair >= shape.vocab {
        return Err(Error::IndexOutOfRange {
            index: tok.pair,
            size: shape.vocab,
        });
    }
    if let Some(m) = shape.metadata {
        if let Some(&bad) = tok.properties.iter().find(|&&p| p >= m.properties) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                size: m.properties,
            });
        }
    }
    Ok(())
}

fn check_context(shape: &ModelShape, ctx: &ContextInput) -> Result<()> {
    if let Some(c) = shape.context {
        if let Some(&bad) = ctx.active.iter().find(|&&k| k >= c.inputs) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                size: c.inputs,
            });
        }
    }
    Ok(())
}

/// GRU input: pair embedding, then the summed projection rows of the active properties.
fn input_vector(p: &ModelParameters, tok: &Token) -> Vec<f64> {
    let s = &p.shape;
    let mut x = vec![0.0; s.input_dim()];
    x[..s.embed].copy_from_slice(p.embedding_row(tok.pair));
    if let Some(m) = s.metadata {
        let proj = p.slice(&p.layout.meta_proj);
        for &prop in &tok.properties {
            axpy(
                1.0,
                &proj[prop * m.dim..(prop + 1) * m.dim],
                &mut x[s.embed..],
            );
        }
    }
    x
}

struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

fn gru_step(p: &ModelParameters, x: Vec<f64>, h_prev: &[f64]) -> (StepCache, Vec<f64>) {
    let (h, d) = (p.shape.hidden, p.shape.input_dim());
    let gate = |g: usize, input_h: &[f64]| {
        let gl = &p.layout.gates[g];
        let mut a = p.slice(&gl.b).to_vec();
        gemv(p.slice(&gl.w), d, &x, &mut a);
        gemv(p.slice(&gl.u), h, input_h, &mut a);
        a
    };
    let mut z = gate(UPDATE, h_prev);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut r = gate(RESET, h_prev);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut n = gate(CANDIDATE, &rh);
    n.iter_mut().for_each(|v| *v = v.tanh());
    let h_new = (0..h)
        .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * n[i])
        .collect();
    let cache = StepCache {
        x,
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
        rh,
    };
    (cache, h_new)
}

/// Accumulates parameter gradients of one step and returns `∂L/∂h_prev`.
fn gru_step_backward(
    p: &ModelParameters,
    g: &mut ModelParameters,
    c: &StepCache,
    tok: &Token,
    dh_new: &[f64],
) -> Vec<f64> {
    let s = p.shape;
    let (h, d) = (s.hidden, s.input_dim());
    let gates = &p.layout.gates;

    let mut dh_prev: Vec<f64> = (0..h).map(|i| dh_new[i] * (1.0 - c.z[i])).collect();
    let da_n: Vec<f64> = (0..h)
        .map(|i| dh_new[i] * c.z[i] * (1.0 - c.n[i] * c.n[i]))
        .collect();
    let da_z: Vec<f64> = (0..h)
        .map(|i| dh_new[i] * (c.n[i] - c.h_prev[i]) * c.z[i] * (1.0 - c.z[i]))
        .collect();

    let mut drh = vec![0.0; h];
    gemv_t(p.slice(&gates[CANDIDATE].u), h, &da_n, &mut drh);
    let da_r: Vec<f64> = (0..h)
        .map(|i| drh[i] * c.h_prev[i] * c.r[i] * (1.0 - c.r[i]))
        .collect();
    for i in 0..h {
        dh_prev[i] += drh[i] * c.r[i];
    }

    let mut dx = vec![0.0; d];
    for (gate, da, hin) in [
        (UPDATE, &da_z, &c.h_prev),
        (RESET, &da_r, &c.h_prev),
        (CANDIDATE, &da_n, &c.rh),
    ] {
        let gl = &gates[gate];
        ger(&mut g.data[gl.w.clone()], d, da, &c.x);
        ger(&mut g.data[gl.u.clone()], h, da, hin);
        axpy(1.0, da, &mut g.data[gl.b.clone()]);
        gemv_t(p.slice(&gl.w), d, da, &mut dx);
        if gate != CANDIDATE {
            gemv_t(p.slice(&gl.u), h, da, &mut dh_prev);
        }
    }

    let e = s.embed;
    let row = p.layout.embedding.start + tok.pair * e;
    axpy(1.0, &dx[..e], &mut g.data[row..row + e]);
    if let Some(m) = s.metadata {
        let base = p.layout.meta_proj.start;
        for &prop in &tok.properties {
            let at = base + prop * m.dim;
            axpy(1.0, &dx[e..], &mut g.data[at..at + m.dim]);
        }
    }
    dh_prev
}

struct MlpCache {
    a1: Vec<f64>,
    c1: Vec<f64>,
    a2: Vec<f64>,
    out: Vec<f64>,
}

fn mlp_forward(p: &ModelParameters, ctx: &ContextInput) -> Option<MlpCache> {
    let c = p.shape.context?;
    let l = &p.layout;
    let w1 = p.slice(&l.mlp1_w);
    let mut a1 = p.slice(&l.mlp1_b).to_vec();
    for (i, a) in a1.iter_mut().enumerate() {
        for &k in &ctx.active {
            *a += w1[i * c.inputs + k];
        }
    }
    let c1: Vec<f64> = a1.iter().map(|v| v.max(0.0)).collect();
    let mut a2 = p.slice(&l.mlp2_b).to_vec();
    gemv(p.slice(&l.mlp2_w), c.layer1, &c1, &mut a2);
    let out = a2.iter().map(|v| v.max(0.0)).collect();
    Some(MlpCache { a1, c1, a2, out })
}

fn mlp_backward(
    p: &ModelParameters,
    g: &mut ModelParameters,
    cache: &MlpCache,
    ctx: &ContextInput,
    d_out: &[f64],
) {
    let Some(c) = p.shape.context else { return };
    let l = &p.layout;
    let da2: Vec<f64> = d_out
        .iter()
        .zip(&cache.a2)
        .map(|(d, a)| if *a > 0.0 { *d } else { 0.0 })
        .collect();
    ger(&mut g.data[l.mlp2_w.clone()], c.layer1, &da2, &cache.c1);
    axpy(1.0, &da2, &mut g.data[l.mlp2_b.clone()]);
    let mut dc1 = vec![0.0; c.layer1];
    gemv_t(p.slice(&l.mlp2_w), c.layer1, &da2, &mut dc1);
    let da1: Vec<f64> = dc1
        .iter()
        .zip(&cache.a1)
        .map(|(d, a)| if *a > 0.0 { *d } else { 0.0 })
        .collect();
    let w1 = l.mlp1_w.start;
    for (i, &da) in da1.iter().enumerate() {
        for &k in &ctx.active {
            g.data[w1 + i * c.inputs + k] += da;
        }
    }
    axpy(1.0, &da1, &mut g.data[l.mlp1_b.clone()]);
}

fn head_logit(p: &ModelParameters, hidden: &[f64], context: &[f64]) -> f64 {
    let w = p.slice(&p.layout.head_w);
    let (wh, wc) = w.split_at(hidden.len());
    dot(wh, hidden) + dot(wc, context) + p.head_bias()
}

fn run_history(p: &ModelParameters, history: &[Token]) -> (Vec<StepCache>, Vec<f64>) {
    let mut h = vec![0.0; p.shape.hidden];
    let mut steps = Vec::with_capacity(history.len());
    for tok in history {
        let (cache, next) = gru_step(p, input_vector(p, tok), &h);
        steps.push(cache);
        h = next;
    }
    (steps, h)
}

/// Click probability of a single (history, candidate) example.
pub fn forward(p: &ModelParameters, example: &TrainingExample) -> Result<Forward> {
    let s = &p.shape;
    for tok in example.history.iter().chain([&example.candidate]) {
        check_token(s, tok)?;
    }
    check_context(s, &example.context)?;
    let (_, h_hist) = run_history(p, &example.history);
    let (_, hidden) = gru_step(p, input_vector(p, &example.candidate), &h_hist);
    let context = mlp_forward(p, &example.context).map_or_else(Vec::new, |m| m.out);
    let logit = head_logit(p, &hidden, &context);
    Ok(Forward {
        probability: clamp_prob(sigmoid(logit)),
        logit,
        hidden,
        context,
    })
}

/// Click probabilities for several candidates after one shared history.
pub fn score_candidates(
    p: &ModelParameters,
    history: &[Token],
    candidates: &[Token],
    ctx: &ContextInput,
) -> Result<Vec<f64>> {
    let s = &p.shape;
    for tok in history.iter().chain(candidates) {
        check_token(s, tok)?;
    }
    check_context(s, ctx)?;
    let (_, h_hist) = run_history(p, history);
    let context = mlp_forward(p, ctx).map_or_else(Vec::new, |m| m.out);
    Ok(candidates
        .iter()
        .map(|c| {
            let (_, hidden) = gru_step(p, input_vector(p, c), &h_hist);
            clamp_prob(sigmoid(head_logit(p, &hidden, &context)))
        })
        .collect())
}

/// Summed loss of one clickout group; gradients of `scale × loss` are added to `g`.
fn group_backward(
    p: &ModelParameters,
    g: &mut ModelParameters,
    history: &[Token],
    candidates: &[(&Token, f64)],
    ctx: &ContextInput,
    scale: f64,
) -> Result<f64> {
    let s = p.shape;
    for tok in history.iter().chain(candidates.iter().map(|(t, _)| *t)) {
        check_token(&s, tok)?;
    }
    check_context(&s, ctx)?;

    let (steps, h_hist) = run_history(p, history);
    let mlp = mlp_forward(p, ctx);
    let context: &[f64] = mlp.as_ref().map_or(&[], |m| &m.out);
    let head_w = p.slice(&p.layout.head_w).to_vec();
    let (wh, wc) = head_w.split_at(s.hidden);

    let mut dh_hist = vec![0.0; s.hidden];
    let mut d_context = vec![0.0; context.len()];
    let mut loss = 0.0;
    for &(tok, label) in candidates {
        let (cache, hidden) = gru_step(p, input_vector(p, tok), &h_hist);
        let prob = sigmoid(head_logit(p, &hidden, context));
        loss += bce(prob, label);

        let dlogit = (prob - label) * scale;
        let hw = p.layout.head_w.clone();
        axpy(dlogit, &hidden, &mut g.data[hw.start..hw.start + s.hidden]);
        axpy(dlogit, context, &mut g.data[hw.start + s.hidden..hw.end]);
        g.data[p.layout.head_b] += dlogit;
        axpy(dlogit, wc, &mut d_context);

        let dh_final: Vec<f64> = wh.iter().map(|w| w * dlogit).collect();
        let dh = gru_step_backward(p, g, &cache, tok, &dh_final);
        axpy(1.0, &dh, &mut dh_hist);
    }

    if let Some(m) = &mlp {
        mlp_backward(p, g, m, ctx, &d_context);
    }
    let mut dh = dh_hist;
    for (cache, tok) in steps.iter().zip(history).rev() {
        dh = gru_step_backward(p, g, cache, tok, &dh);
    }
    Ok(loss)
}

/// Mean binary cross-entropy over `batch` and its gradient.
///
/// Consecutive examples sharing a history allocation are evaluated as one group.
pub fn loss_and_gradients(
    p: &ModelParameters,
    batch: &[TrainingExample],
) -> Result<(f64, ModelParameters)> {
    let mut g = p.zeros_like();
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let loss = accumulate_gradients(p, &refs, &mut g)?;
    Ok((loss, g))
}

/// Like [`loss_and_gradients`] but accumulates into an existing (zeroed) buffer.
pub(crate) fn accumulate_gradients(
    p: &ModelParameters,
    batch: &[&TrainingExample],
    g: &mut ModelParameters,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut start = 0;
    while start < batch.len() {
        let first = batch[start];
        let end = start
            + batch[start..]
                .iter()
                .take_while(|e| {
                    Arc::ptr_eq(&e.history, &first.history) && e.context == first.context
                })
                .count();
        let candidates: Vec<(&Token, f64)> = batch[start..end]
            .iter()
            .map(|e| (&e.candidate, e.label))
            .collect();
        total += group_backward(p, g, &first.history, &candidates, &first.context, scale)?;
        start = end;
    }
    Ok(total * scale)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out += W x` for row-major `W` with `cols` columns.
fn gemv(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `dx += Wᵀ da`.
fn gemv_t(w: &[f64], cols: usize, da: &[f64], dx: &mut [f64]) {
    for (&a, row) in da.iter().zip(w.chunks_exact(cols)) {
        axpy(a, row, dx);
    }
}

/// `dw += da ⊗ x`.
fn ger(dw: &mut [f64], cols: usize, da: &[f64], x: &[f64]) {
    for (&a, row) in da.iter().zip(dw.chunks_exact_mut(cols)) {
        axpy(a, x, row);
    }
}
