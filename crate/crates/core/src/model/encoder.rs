//! Forward and backward passes of the subgraph Transformer.

use super::linalg::{axpy, dot, matmul, Float};
use super::params::{LayerParams, ModelParams};
use crate::error::{Error, Result};
use crate::hin::Hin;
use crate::subgraph::MultiSlotSequence;

const LN_EPS: f64 = 1e-5;
/// Logits are clamped to this magnitude before the sigmoid.
pub const LOGIT_CLAMP: f64 = 30.0;

/// A sequence in model-ready form. `ids[t] == None` marks a masked node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderInput {
    pub ids: Vec<Option<u32>>,
    pub types: Vec<u8>,
    pub slots: Vec<u16>,
    pub precursors: Vec<Vec<u16>>,
    pub user_pos: usize,
    pub item_pos: usize,
}

impl EncoderInput {
    pub fn from_sequence(seq: &MultiSlotSequence, hin: &Hin) -> Self {
        EncoderInput {
            ids: seq.elements.iter().map(|e| Some(hin.global(e.node) as u32)).collect(),
            types: seq.elements.iter().map(|e| e.node.ty).collect(),
            slots: seq.elements.iter().map(|e| e.slot).collect(),
            precursors: seq.elements.iter().map(|e| e.precursors.clone()).collect(),
            user_pos: seq.user_pos,
            item_pos: seq.item_pos,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `E = M_V[id] + M_A[type] + M_S[slot] + sum of M_P[p]` per row; masked rows
/// use the mask embedding in place of the ID term.
pub fn compose_embeddings<F: Float>(input: &EncoderInput, p: &ModelParams<F>) -> Result<Vec<F>> {
    let d = p.dims.d;
    let n = input.len();
    if n == 0 {
        return Err(Error::Contract("empty sequence".into()));
    }
    if n > p.dims.max_positions {
        return Err(Error::Bounds(format!(
            "sequence length {n} exceeds max_positions {}",
            p.dims.max_positions
        )));
    }
    let mut e = vec![F::ZERO; n * d];
    for t in 0..n {
        let row = &mut e[t * d..(t + 1) * d];
        match input.ids[t] {
            Some(id) if (id as usize) < p.dims.num_nodes => axpy(F::ONE, p.node_emb.row(id as usize), row),
            Some(id) => return Err(Error::Bounds(format!("node index {id} out of range"))),
            None => axpy(F::ONE, p.mask_emb.row(0), row),
        }
        let ty = input.types[t] as usize;
        let slot = input.slots[t] as usize;
        if ty >= p.dims.num_types {
            return Err(Error::Bounds(format!("type index {ty} out of range")));
        }
        if slot >= p.dims.num_slots {
            return Err(Error::Bounds(format!("slot {slot} out of range")));
        }
        axpy(F::ONE, p.type_emb.row(ty), row);
        axpy(F::ONE, p.slot_emb.row(slot), row);
        for &q in &input.precursors[t] {
            if q as usize >= n {
                return Err(Error::Bounds(format!("precursor position {q} out of range")));
            }
            axpy(F::ONE, p.prec_emb.row(q as usize), row);
        }
    }
    Ok(e)
}

#[derive(Clone, Debug)]
pub struct NormCache<F> {
    pub xhat: Vec<F>,
    pub rstd: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct LayerTrace<F> {
    /// Input `F^{l-1}`.
    pub x: Vec<F>,
    pub q: Vec<F>,
    pub k: Vec<F>,
    pub v: Vec<F>,
    /// Attention probabilities, `heads x n x n`.
    pub probs: Vec<F>,
    pub ctx: Vec<F>,
    pub ln1: NormCache<F>,
    /// Output of the first residual block.
    pub y: Vec<F>,
    /// FFN pre-activation, `n x d_ff`.
    pub h_pre: Vec<F>,
    pub h: Vec<F>,
    pub ln2: NormCache<F>,
}

#[derive(Clone, Debug)]
pub struct ActivationTrace<F> {
    pub n: usize,
    pub d: usize,
    pub layers: Vec<LayerTrace<F>>,
    /// Final representations `F^L`, `n x d`.
    pub output: Vec<F>,
}

impl<F: Float> ActivationTrace<F> {
    pub fn row(&self, t: usize) -> &[F] {
        &self.output[t * self.d..(t + 1) * self.d]
    }
}

fn layer_norm<F: Float>(x: &[F], g: &[F], b: &[F], d: usize, enabled: bool) -> (Vec<F>, NormCache<F>) {
    let n = x.len() / d;
    if !enabled {
        return (
            x.to_vec(),
            NormCache {
                xhat: Vec::new(),
                rstd: Vec::new(),
            },
        );
    }
    let mut out = vec![F::ZERO; x.len()];
    let mut xhat = vec![F::ZERO; x.len()];
    let mut rstd = vec![F::ZERO; n];
    let inv_d = F::from_f64(1.0 / d as f64);
    for t in 0..n {
        let row = &x[t * d..(t + 1) * d];
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let r = F::ONE / (var + F::from_f64(LN_EPS)).sqrt();
        rstd[t] = r;
        for c in 0..d {
            let xh = (row[c] - mean) * r;
            xhat[t * d + c] = xh;
            out[t * d + c] = g[c] * xh + b[c];
        }
    }
    (out, NormCache { xhat, rstd })
}

/// Returns `dx`; accumulates gain and bias gradients.
fn layer_norm_backward<F: Float>(
    dy: &[F],
    cache: &NormCache<F>,
    g: &[F],
    dg: &mut [F],
    db: &mut [F],
    d: usize,
    enabled: bool,
) -> Vec<F> {
    if !enabled {
        return dy.to_vec();
    }
    let n = dy.len() / d;
    let mut dx = vec![F::ZERO; dy.len()];
    let inv_d = F::from_f64(1.0 / d as f64);
    let mut dxhat = vec![F::ZERO; d];
    for t in 0..n {
        let dyr = &dy[t * d..(t + 1) * d];
        let xh = &cache.xhat[t * d..(t + 1) * d];
        for c in 0..d {
            dg[c] += dyr[c] * xh[c];
            db[c] += dyr[c];
            dxhat[c] = dyr[c] * g[c];
        }
        let m1 = dxhat.iter().copied().sum::<F>() * inv_d;
        let m2 = dot(&dxhat, xh) * inv_d;
        for c in 0..d {
            dx[t * d + c] = cache.rstd[t] * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
    dx
}

fn add_bias<F: Float>(x: &mut [F], b: &[F]) {
    let w = b.len();
    for row in x.chunks_mut(w) {
        for (v, &bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn col_sum<F: Float>(x: &[F], out: &mut [F]) {
    let w = out.len();
    for row in x.chunks(w) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

fn softmax_rows<F: Float>(s: &mut [F], n: usize) {
    for row in s.chunks_mut(n) {
        let m = row.iter().copied().fold(row[0], F::max);
        let mut z = F::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        let inv = F::ONE / z;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

fn forward_layer<F: Float>(
    x: Vec<F>,
    lp: &LayerParams<F>,
    n: usize,
    heads: usize,
    ln: bool,
) -> (LayerTrace<F>, Vec<F>) {
    let d = lp.wq.rows;
    let d_ff = lp.w1.cols;
    let dk = d / heads;
    let scale = F::from_f64(1.0 / (dk as f64).sqrt());
    let mut q = vec![F::ZERO; n * d];
    let mut k = vec![F::ZERO; n * d];
    let mut v = vec![F::ZERO; n * d];
    matmul(n, d, d, &x, d, false, &lp.wq.data, d, false, &mut q, d, false);
    matmul(n, d, d, &x, d, false, &lp.wk.data, d, false, &mut k, d, false);
    matmul(n, d, d, &x, d, false, &lp.wv.data, d, false, &mut v, d, false);
    let mut probs = vec![F::ZERO; heads * n * n];
    let mut ctx = vec![F::ZERO; n * d];
    for h in 0..heads {
        let off = h * dk;
        let s = &mut probs[h * n * n..(h + 1) * n * n];
        matmul(n, dk, n, &q[off..], d, false, &k[off..], d, true, s, n, false);
        s.iter_mut().for_each(|x| *x *= scale);
        softmax_rows(s, n);
        matmul(n, n, dk, s, n, false, &v[off..], d, false, &mut ctx[off..], d, false);
    }
    let mut a = x.clone();
    matmul(n, d, d, &ctx, d, false, &lp.wo.data, d, false, &mut a, d, true);
    let (y, ln1) = layer_norm(&a, &lp.ln1_g.data, &lp.ln1_b.data, d, ln);
    let mut h_pre = vec![F::ZERO; n * d_ff];
    matmul(n, d, d_ff, &y, d, false, &lp.w1.data, d_ff, false, &mut h_pre, d_ff, false);
    add_bias(&mut h_pre, &lp.b1.data);
    let hid: Vec<F> = h_pre.iter().map(|&z| z.max(F::ZERO)).collect();
    let mut o = y.clone();
    matmul(n, d_ff, d, &hid, d_ff, false, &lp.w2.data, d, false, &mut o, d, true);
    add_bias(&mut o, &lp.b2.data);
    let (out, ln2) = layer_norm(&o, &lp.ln2_g.data, &lp.ln2_b.data, d, ln);
    (
        LayerTrace {
            x,
            q,
            k,
            v,
            probs,
            ctx,
            ln1,
            y,
            h_pre,
            h: hid,
            ln2,
        },
        out,
    )
}

/// Run the encoder stack over composed embeddings `e` (`n x d`).
pub fn encode<F: Float>(e: Vec<F>, p: &ModelParams<F>) -> Result<ActivationTrace<F>> {
    let d = p.dims.d;
    if e.is_empty() || !e.len().is_multiple_of(d) {
        return Err(Error::Contract("embedding matrix must be n x d with n >= 1".into()));
    }
    let n = e.len() / d;
    let mut x = e;
    let mut layers = Vec::with_capacity(p.layers.len());
    for (l, lp) in p.layers.iter().enumerate() {
        let (trace, out) = forward_layer(x, lp, n, p.dims.heads, p.dims.layer_norm);
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericFault(format!("non-finite activation in layer {}", l + 1)));
        }
        layers.push(trace);
        x = out;
    }
    Ok(ActivationTrace {
        n,
        d,
        layers,
        output: x,
    })
}

/// Backpropagate `d_out` (gradient w.r.t. `F^L`) through the encoder and the
/// embedding composition, accumulating into `g`.
pub fn backward<F: Float>(
    input: &EncoderInput,
    trace: &ActivationTrace<F>,
    d_out: Vec<F>,
    p: &ModelParams<F>,
    g: &mut ModelParams<F>,
) {
    let (n, d) = (trace.n, trace.d);
    let heads = p.dims.heads;
    let dk = d / heads;
    let d_ff = p.dims.d_ff;
    let ln = p.dims.layer_norm;
    let scale = F::from_f64(1.0 / (dk as f64).sqrt());
    let mut dx_next = d_out;
    for (l, t) in trace.layers.iter().enumerate().rev() {
        let lp = &p.layers[l];
        let gl = &mut g.layers[l];
        // second residual block
        let d_o = layer_norm_backward(&dx_next, &t.ln2, &lp.ln2_g.data, &mut gl.ln2_g.data, &mut gl.ln2_b.data, d, ln);
        col_sum(&d_o, &mut gl.b2.data);
        matmul(d_ff, n, d, &t.h, d_ff, true, &d_o, d, false, &mut gl.w2.data, d, true);
        let mut d_h = vec![F::ZERO; n * d_ff];
        matmul(n, d, d_ff, &d_o, d, false, &lp.w2.data, d, true, &mut d_h, d_ff, false);
        for (dh, &z) in d_h.iter_mut().zip(&t.h_pre) {
            if z <= F::ZERO {
                *dh = F::ZERO;
            }
        }
        col_sum(&d_h, &mut gl.b1.data);
        matmul(d, n, d_ff, &t.y, d, true, &d_h, d_ff, false, &mut gl.w1.data, d_ff, true);
        let mut d_y = d_o;
        matmul(n, d_ff, d, &d_h, d_ff, false, &lp.w1.data, d_ff, true, &mut d_y, d, true);
        // first residual block
        let d_a = layer_norm_backward(&d_y, &t.ln1, &lp.ln1_g.data, &mut gl.ln1_g.data, &mut gl.ln1_b.data, d, ln);
        matmul(d, n, d, &t.ctx, d, true, &d_a, d, false, &mut gl.wo.data, d, true);
        let mut d_ctx = vec![F::ZERO; n * d];
        matmul(n, d, d, &d_a, d, false, &lp.wo.data, d, true, &mut d_ctx, d, false);
        let mut dq = vec![F::ZERO; n * d];
        let mut dkm = vec![F::ZERO; n * d];
        let mut dv = vec![F::ZERO; n * d];
        let mut dp = vec![F::ZERO; n * n];
        for h in 0..heads {
            let off = h * dk;
            let pr = &t.probs[h * n * n..(h + 1) * n * n];
            matmul(n, dk, n, &d_ctx[off..], d, false, &t.v[off..], d, true, &mut dp, n, false);
            matmul(n, n, dk, pr, n, true, &d_ctx[off..], d, false, &mut dv[off..], d, false);
            for r in 0..n {
                let prow = &pr[r * n..(r + 1) * n];
                let drow = &mut dp[r * n..(r + 1) * n];
                let s = dot(prow, drow);
                for c in 0..n {
                    drow[c] = prow[c] * (drow[c] - s) * scale;
                }
            }
            matmul(n, n, dk, &dp, n, false, &t.k[off..], d, false, &mut dq[off..], d, false);
            matmul(n, n, dk, &dp, n, true, &t.q[off..], d, false, &mut dkm[off..], d, false);
        }
        matmul(d, n, d, &t.x, d, true, &dq, d, false, &mut gl.wq.data, d, true);
        matmul(d, n, d, &t.x, d, true, &dkm, d, false, &mut gl.wk.data, d, true);
        matmul(d, n, d, &t.x, d, true, &dv, d, false, &mut gl.wv.data, d, true);
        let mut dx = d_a;
        matmul(n, d, d, &dq, d, false, &lp.wq.data, d, true, &mut dx, d, true);
        matmul(n, d, d, &dkm, d, false, &lp.wk.data, d, true, &mut dx, d, true);
        matmul(n, d, d, &dv, d, false, &lp.wv.data, d, true, &mut dx, d, true);
        dx_next = dx;
    }
    // embedding composition
    for t in 0..n {
        let row = &dx_next[t * d..(t + 1) * d];
        match input.ids[t] {
            Some(id) => axpy(F::ONE, row, g.node_emb.row_mut(id as usize)),
            None => axpy(F::ONE, row, g.mask_emb.row_mut(0)),
        }
        axpy(F::ONE, row, g.type_emb.row_mut(input.types[t] as usize));
        axpy(F::ONE, row, g.slot_emb.row_mut(input.slots[t] as usize));
        for &q in &input.precursors[t] {
            axpy(F::ONE, row, g.prec_emb.row_mut(q as usize));
        }
    }
}

/// Cached pieces of `z = tanh(W_mlpᵀ (F_u ⊕ F_i) + b_mlp)`.
#[derive(Clone, Debug)]
pub struct Representation<F> {
    pub concat: Vec<F>,
    pub pre: Vec<F>,
    pub z: Vec<F>,
}

pub fn subgraph_representation<F: Float>(
    trace: &ActivationTrace<F>,
    user_pos: usize,
    item_pos: usize,
    p: &ModelParams<F>,
) -> Result<Representation<F>> {
    if user_pos >= trace.n || item_pos >= trace.n {
        return Err(Error::Bounds("endpoint position out of range".into()));
    }
    let d = trace.d;
    let mut concat = Vec::with_capacity(2 * d);
    concat.extend_from_slice(trace.row(user_pos));
    concat.extend_from_slice(trace.row(item_pos));
    let mut pre = p.b_mlp.data.clone();
    matmul(1, 2 * d, d, &concat, 2 * d, false, &p.w_mlp.data, d, false, &mut pre, d, true);
    let z = pre.iter().map(|&v| v.tanh()).collect();
    Ok(Representation { concat, pre, z })
}

/// Backprop `dz` through the representation MLP into `d_out` rows.
pub fn representation_backward<F: Float>(
    rep: &Representation<F>,
    dz: &[F],
    user_pos: usize,
    item_pos: usize,
    p: &ModelParams<F>,
    g: &mut ModelParams<F>,
    d_out: &mut [F],
) {
    let d = p.dims.d;
    let dpre: Vec<F> = dz
        .iter()
        .zip(&rep.z)
        .map(|(&g, &z)| g * (F::ONE - z * z))
        .collect();
    axpy(F::ONE, &dpre, &mut g.b_mlp.data);
    for (r, &c) in rep.concat.iter().enumerate() {
        axpy(c, &dpre, g.w_mlp.row_mut(r));
    }
    for r in 0..d {
        let gu = dot(p.w_mlp.row(r), &dpre);
        let gi = dot(p.w_mlp.row(d + r), &dpre);
        d_out[user_pos * d + r] += gu;
        d_out[item_pos * d + r] += gi;
    }
}

/// Clamped logit `w_scoreᵀ z`, and whether the clamp was active.
pub fn score_logit<F: Float>(z: &[F], p: &ModelParams<F>) -> (f64, bool) {
    let raw = dot(&p.w_score.data, z).to_f64();
    let c = raw.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    (c, c != raw)
}

/// `σ(w_scoreᵀ z)` with the logit clamped to `[-30, 30]`.
pub fn interaction_score<F: Float>(z: &[F], p: &ModelParams<F>) -> f64 {
    sigmoid(score_logit(z, p).0)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Full forward from input to `z`.
pub fn represent<F: Float>(input: &EncoderInput, p: &ModelParams<F>) -> Result<Vec<F>> {
    let e = compose_embeddings(input, p)?;
    let trace = encode(e, p)?;
    Ok(subgraph_representation(&trace, input.user_pos, input.item_pos, p)?.z)
}

/// Interaction probability for one encoded pair.
pub fn score_input<F: Float>(input: &EncoderInput, p: &ModelParams<F>) -> Result<f64> {
    Ok(interaction_score(&represent(input, p)?, p))
}
