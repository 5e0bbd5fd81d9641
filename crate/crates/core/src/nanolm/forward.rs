use super::config::ModelConfig;
use super::params::Params;
use crate::error::{CoreError, Result};
use crate::textcodec::TokenId;

pub(super) const LN_EPS: f64 = 1e-5;

/// `out = W x` for row-major `W: [out_dim, in_dim]`.
pub(super) fn matvec(w: &[f64], x: &[f64], out_dim: usize, in_dim: usize, out: &mut [f64]) {
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = 0.0;
        for i in 0..in_dim {
            acc += row[i] * x[i];
        }
        out[o] = acc;
    }
}

/// `out = W^T x` for row-major `W: [rows, cols]` (x has rows entries).
fn matvec_t(w: &[f64], x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = 0.0;
    }
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let xr = x[r];
        for c in 0..cols {
            out[c] += row[c] * xr;
        }
    }
}

/// Layer norm of one position. Writes the normalized vector and the gained
/// output, returns `(mean, rstd)` for the backward pass.
pub(super) fn layer_norm(
    x: &[f64],
    g: &[f64],
    b: &[f64],
    xhat: &mut [f64],
    y: &mut [f64],
) -> (f64, f64) {
    let d = x.len();
    let mut mean = 0.0;
    for &v in x {
        mean += v;
    }
    mean /= d as f64;
    let mut var = 0.0;
    for &v in x {
        let c = v - mean;
        var += c * c;
    }
    var /= d as f64;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..d {
        xhat[i] = (x[i] - mean) * rstd;
        y[i] = g[i] * xhat[i] + b[i];
    }
    (mean, rstd)
}

const GELU_C: f64 = 0.044715;

pub(super) fn gelu(x: f64) -> f64 {
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    let u = s * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_C * x * x)
}

/// Attention output for one query position given keys/values of positions
/// `0..=t` (row-major `[pos, model_dim]`). The incremental decoder calls this
/// with its cache, the training forward with the full-sequence arrays; the
/// accumulation order is identical, so the numbers are too. When `probs_out`
/// is given, each head's softmax row is recorded (length `t+1` per head).
pub(super) fn attend_one(
    q: &[f64],
    keys: &[f64],
    values: &[f64],
    t: usize,
    n_heads: usize,
    head_dim: usize,
    out: &mut [f64],
    mut probs_out: Option<&mut [Vec<f64>]>,
) {
    let d = n_heads * head_dim;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut scores = vec![0.0; t + 1];
    for h in 0..n_heads {
        let hoff = h * head_dim;
        let mut maxv = f64::NEG_INFINITY;
        for (s, score) in scores.iter_mut().enumerate() {
            let k = &keys[s * d + hoff..s * d + hoff + head_dim];
            let mut acc = 0.0;
            for i in 0..head_dim {
                acc += q[hoff + i] * k[i];
            }
            *score = acc * scale;
            if *score > maxv {
                maxv = *score;
            }
        }
        let mut denom = 0.0;
        for score in scores.iter_mut() {
            *score = (*score - maxv).exp();
            denom += *score;
        }
        let o = &mut out[hoff..hoff + head_dim];
        for v in o.iter_mut() {
            *v = 0.0;
        }
        for (s, score) in scores.iter_mut().enumerate() {
            let p = *score / denom;
            *score = p;
            let val = &values[s * d + hoff..s * d + hoff + head_dim];
            for i in 0..head_dim {
                o[i] += p * val[i];
            }
        }
        if let Some(rows) = probs_out.as_deref_mut() {
            rows[h][..=t].copy_from_slice(&scores);
        }
    }
}

struct LayerCache {
    ln1_xhat: Vec<f64>,
    ln1_stats: Vec<(f64, f64)>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Softmax rows: `probs[h][t * T + s]`, zero above the diagonal.
    probs: Vec<Vec<f64>>,
    /// Concatenated head outputs before the output projection.
    att_concat: Vec<f64>,
    ln2_xhat: Vec<f64>,
    ln2_stats: Vec<(f64, f64)>,
    /// Pre-activation of the feed-forward hidden layer.
    h1: Vec<f64>,
    gact: Vec<f64>,
}

/// Activations of one full forward pass, kept for the backward pass.
pub struct ForwardCache {
    pub tokens: Vec<TokenId>,
    layers: Vec<LayerCache>,
    lnf_xhat: Vec<f64>,
    lnf_stats: Vec<(f64, f64)>,
    /// Row-major `[position, vocab]`.
    pub logits: Vec<f64>,
    t_len: usize,
}

impl ForwardCache {
    pub fn logits_row(&self, t: usize) -> &[f64] {
        let v = self.logits.len() / self.t_len;
        &self.logits[t * v..(t + 1) * v]
    }

    pub fn len(&self) -> usize {
        self.t_len
    }

    pub fn is_empty(&self) -> bool {
        self.t_len == 0
    }
}

/// Full-sequence causal forward pass.
pub fn forward(cfg: &ModelConfig, params: &Params, tokens: &[TokenId]) -> Result<ForwardCache> {
    let t_len = tokens.len();
    if t_len == 0 {
        return Err(CoreError::invalid("empty token sequence"));
    }
    if t_len > cfg.context_len {
        return Err(CoreError::invalid(format!(
            "sequence length {} exceeds context {}",
            t_len, cfg.context_len
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(CoreError::invalid(format!("token id {bad} out of vocabulary")));
    }
    let d = cfg.model_dim;
    let f = cfg.ff_dim;
    let h = cfg.n_heads;
    let hd = cfg.head_dim();

    let mut x = vec![0.0; t_len * d];
    for (t, &tok) in tokens.iter().enumerate() {
        let e = &params.tok_emb[tok as usize * d..(tok as usize + 1) * d];
        let p = &params.pos_emb[t * d..(t + 1) * d];
        for i in 0..d {
            x[t * d + i] = e[i] + p[i];
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lp in &params.layers {
        let mut ln1_xhat = vec![0.0; t_len * d];
        let mut ln1_stats = vec![(0.0, 0.0); t_len];
        let mut a = vec![0.0; t_len * d];
        for t in 0..t_len {
            ln1_stats[t] = layer_norm(
                &x[t * d..(t + 1) * d],
                &lp.ln1_g,
                &lp.ln1_b,
                &mut ln1_xhat[t * d..(t + 1) * d],
                &mut a[t * d..(t + 1) * d],
            );
        }
        let mut q = vec![0.0; t_len * d];
        let mut k = vec![0.0; t_len * d];
        let mut v = vec![0.0; t_len * d];
        for t in 0..t_len {
            let at = &a[t * d..(t + 1) * d];
            matvec(&lp.wq, at, d, d, &mut q[t * d..(t + 1) * d]);
            matvec(&lp.wk, at, d, d, &mut k[t * d..(t + 1) * d]);
            matvec(&lp.wv, at, d, d, &mut v[t * d..(t + 1) * d]);
        }
        let mut probs = vec![vec![0.0; t_len * t_len]; h];
        let mut att_concat = vec![0.0; t_len * d];
        {
            for t in 0..t_len {
                let mut row_bufs: Vec<Vec<f64>> = vec![vec![0.0; t + 1]; h];
                attend_one(
                    &q[t * d..(t + 1) * d],
                    &k[..(t + 1) * d],
                    &v[..(t + 1) * d],
                    t,
                    h,
                    hd,
                    &mut att_concat[t * d..(t + 1) * d],
                    Some(&mut row_bufs),
                );
                for (head, buf) in row_bufs.iter().enumerate() {
                    probs[head][t * t_len..t * t_len + t + 1].copy_from_slice(buf);
                }
            }
        }
        for t in 0..t_len {
            let mut attn_out = vec![0.0; d];
            matvec(&lp.wo, &att_concat[t * d..(t + 1) * d], d, d, &mut attn_out);
            for i in 0..d {
                x[t * d + i] += attn_out[i];
            }
        }
        let mut ln2_xhat = vec![0.0; t_len * d];
        let mut ln2_stats = vec![(0.0, 0.0); t_len];
        let mut h1 = vec![0.0; t_len * f];
        let mut gact = vec![0.0; t_len * f];
        for t in 0..t_len {
            let mut fin = vec![0.0; d];
            ln2_stats[t] = layer_norm(
                &x[t * d..(t + 1) * d],
                &lp.ln2_g,
                &lp.ln2_b,
                &mut ln2_xhat[t * d..(t + 1) * d],
                &mut fin,
            );
            let h1t = &mut h1[t * f..(t + 1) * f];
            matvec(&lp.w1, &fin, f, d, h1t);
            for i in 0..f {
                h1t[i] += lp.b1[i];
                gact[t * f + i] = gelu(h1t[i]);
            }
            let mut ffn_out = vec![0.0; d];
            matvec(&lp.w2, &gact[t * f..(t + 1) * f], d, f, &mut ffn_out);
            for i in 0..d {
                x[t * d + i] += ffn_out[i] + lp.b2[i];
            }
        }
        layers.push(LayerCache {
            ln1_xhat,
            ln1_stats,
            q,
            k,
            v,
            probs,
            att_concat,
            ln2_xhat,
            ln2_stats,
            h1,
            gact,
        });
    }

    let mut lnf_xhat = vec![0.0; t_len * d];
    let mut lnf_stats = vec![(0.0, 0.0); t_len];
    let mut logits = vec![0.0; t_len * cfg.vocab_size];
    for t in 0..t_len {
        let mut y = vec![0.0; d];
        lnf_stats[t] = layer_norm(
            &x[t * d..(t + 1) * d],
            &params.lnf_g,
            &params.lnf_b,
            &mut lnf_xhat[t * d..(t + 1) * d],
            &mut y,
        );
        matvec(
            &params.head,
            &y,
            cfg.vocab_size,
            d,
            &mut logits[t * cfg.vocab_size..(t + 1) * cfg.vocab_size],
        );
    }

    Ok(ForwardCache {
        tokens: tokens.to_vec(),
        layers,
        lnf_xhat,
        lnf_stats,
        logits,
        t_len,
    })
}

/// Log-softmax value of one logit row at `target`.
pub fn log_softmax_at(row: &[f64], target: usize) -> f64 {
    let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for &v in row {
        denom += (v - maxv).exp();
    }
    row[target] - maxv - denom.ln()
}

/// Mean negative log-likelihood over masked positions. `logits` is row-major
/// `[len, vocab]`; `targets[t]` is scored from row `t`.
pub fn loss_xent(logits: &[f64], vocab_size: usize, targets: &[TokenId], mask: &[bool]) -> Result<f64> {
    let t_len = targets.len();
    if logits.len() != t_len * vocab_size || mask.len() != t_len {
        return Err(CoreError::invalid("loss shape mismatch"));
    }
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(CoreError::invalid("loss mask has no active positions"));
    }
    let mut loss = 0.0;
    for t in 0..t_len {
        if mask[t] {
            let row = &logits[t * vocab_size..(t + 1) * vocab_size];
            loss -= log_softmax_at(row, targets[t] as usize);
        }
    }
    Ok(loss / m as f64)
}

/// Backward pass through the cached forward. Returns the masked mean
/// cross-entropy and the gradient of every parameter. The grad of position
/// embeddings past the last masked position and of embedding rows of absent
/// tokens is exactly zero by construction.
pub fn backward(
    cfg: &ModelConfig,
    params: &Params,
    cache: &ForwardCache,
    targets: &[TokenId],
    mask: &[bool],
) -> Result<(f64, Params)> {
    let t_len = cache.t_len;
    if targets.len() != t_len || mask.len() != t_len {
        return Err(CoreError::State(format!(
            "cache built for {} positions, targets cover {}",
            t_len,
            targets.len()
        )));
    }
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(CoreError::invalid("loss mask has no active positions"));
    }
    let v_sz = cfg.vocab_size;
    let mut loss = 0.0;
    // d loss / d logits, only masked rows populated.
    let mut dlogits = vec![0.0; t_len * v_sz];
    for t in 0..t_len {
        if !mask[t] {
            continue;
        }
        let row = &cache.logits[t * v_sz..(t + 1) * v_sz];
        let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &x in row {
            denom += (x - maxv).exp();
        }
        let target = targets[t] as usize;
        loss -= row[target] - maxv - denom.ln();
        let drow = &mut dlogits[t * v_sz..(t + 1) * v_sz];
        for i in 0..v_sz {
            let p = (row[i] - maxv).exp() / denom;
            drow[i] = p / m as f64;
        }
        drow[target] -= 1.0 / m as f64;
    }
    loss /= m as f64;
    let grads = backprop_from_dlogits(cfg, params, cache, &dlogits)?;
    Ok((loss, grads))
}

/// Shared backprop body: pushes `d objective / d logits` through the head,
/// every block and the embeddings. Zero rows contribute nothing.
fn backprop_from_dlogits(
    cfg: &ModelConfig,
    params: &Params,
    cache: &ForwardCache,
    dlogits: &[f64],
) -> Result<Params> {
    let t_len = cache.t_len;
    if cache.layers.len() != cfg.n_layers || cache.logits.len() != t_len * cfg.vocab_size {
        return Err(CoreError::State("forward cache does not match config".into()));
    }
    let d = cfg.model_dim;
    let f = cfg.ff_dim;
    let h = cfg.n_heads;
    let hd = cfg.head_dim();
    let v_sz = cfg.vocab_size;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut grads = Params::zeros(cfg);

    // Head and final layer norm.
    let mut dx = vec![0.0; t_len * d];
    {
        let mut y = vec![0.0; d];
        let mut dy = vec![0.0; d];
        for t in 0..t_len {
            let xhat = &cache.lnf_xhat[t * d..(t + 1) * d];
            for i in 0..d {
                y[i] = params.lnf_g[i] * xhat[i] + params.lnf_b[i];
            }
            let drow = &dlogits[t * v_sz..(t + 1) * v_sz];
            matvec_t(&params.head, drow, v_sz, d, &mut dy);
            for o in 0..v_sz {
                let go = drow[o];
                if go != 0.0 {
                    let hrow = &mut grads.head[o * d..(o + 1) * d];
                    for i in 0..d {
                        hrow[i] += go * y[i];
                    }
                }
            }
            ln_backward(
                &dy,
                xhat,
                &params.lnf_g,
                cache.lnf_stats[t].1,
                &mut grads.lnf_g,
                &mut grads.lnf_b,
                &mut dx[t * d..(t + 1) * d],
                true,
            );
        }
    }

    for (l, lc) in cache.layers.iter().enumerate().rev() {
        let lp = &params.layers[l];
        let gl = &mut grads.layers[l];

        // Feed-forward block: x_out = x_mid + W2 gelu(W1 ln2(x_mid) + b1) + b2.
        let mut dx_mid = dx.clone();
        {
            let mut fin = vec![0.0; d];
            let mut dgact = vec![0.0; f];
            let mut dh1 = vec![0.0; f];
            let mut dfin = vec![0.0; d];
            for t in 0..t_len {
                let dout = &dx[t * d..(t + 1) * d];
                let gact = &lc.gact[t * f..(t + 1) * f];
                matvec_t(&lp.w2, dout, d, f, &mut dgact);
                for o in 0..d {
                    let go = dout[o];
                    gl.b2[o] += go;
                    let row = &mut gl.w2[o * f..(o + 1) * f];
                    for i in 0..f {
                        row[i] += go * gact[i];
                    }
                }
                let h1 = &lc.h1[t * f..(t + 1) * f];
                for i in 0..f {
                    dh1[i] = dgact[i] * gelu_grad(h1[i]);
                    gl.b1[i] += dh1[i];
                }
                let xhat = &lc.ln2_xhat[t * d..(t + 1) * d];
                for i in 0..d {
                    fin[i] = lp.ln2_g[i] * xhat[i] + lp.ln2_b[i];
                }
                for o in 0..f {
                    let go = dh1[o];
                    let row = &mut gl.w1[o * d..(o + 1) * d];
                    for i in 0..d {
                        row[i] += go * fin[i];
                    }
                }
                matvec_t(&lp.w1, &dh1, f, d, &mut dfin);
                ln_backward(
                    &dfin,
                    xhat,
                    &lp.ln2_g,
                    lc.ln2_stats[t].1,
                    &mut gl.ln2_g,
                    &mut gl.ln2_b,
                    &mut dx_mid[t * d..(t + 1) * d],
                    false,
                );
            }
        }

        // Attention block: x_mid = xin + Wo attend(ln1(xin)).
        let mut dxin = dx_mid.clone();
        {
            let mut do_concat = vec![0.0; t_len * d];
            for t in 0..t_len {
                let dout = &dx_mid[t * d..(t + 1) * d];
                let oc = &lc.att_concat[t * d..(t + 1) * d];
                for o in 0..d {
                    let go = dout[o];
                    let row = &mut gl.wo[o * d..(o + 1) * d];
                    for i in 0..d {
                        row[i] += go * oc[i];
                    }
                }
                matvec_t(&lp.wo, dout, d, d, &mut do_concat[t * d..(t + 1) * d]);
            }
            let mut dq = vec![0.0; t_len * d];
            let mut dk = vec![0.0; t_len * d];
            let mut dv = vec![0.0; t_len * d];
            let mut dp = vec![0.0; t_len];
            let mut ds = vec![0.0; t_len];
            for head in 0..h {
                let hoff = head * hd;
                let probs = &lc.probs[head];
                for t in 0..t_len {
                    let doh = &do_concat[t * d + hoff..t * d + hoff + hd];
                    let prow = &probs[t * t_len..t * t_len + t + 1];
                    let mut inner = 0.0;
                    for s in 0..=t {
                        let vh = &lc.v[s * d + hoff..s * d + hoff + hd];
                        let mut acc = 0.0;
                        for i in 0..hd {
                            acc += doh[i] * vh[i];
                            dv[s * d + hoff + i] += prow[s] * doh[i];
                        }
                        dp[s] = acc;
                        inner += prow[s] * acc;
                    }
                    for s in 0..=t {
                        ds[s] = prow[s] * (dp[s] - inner) * scale;
                    }
                    let qh = &lc.q[t * d + hoff..t * d + hoff + hd];
                    for s in 0..=t {
                        let kh = &lc.k[s * d + hoff..s * d + hoff + hd];
                        for i in 0..hd {
                            dq[t * d + hoff + i] += ds[s] * kh[i];
                            dk[s * d + hoff + i] += ds[s] * qh[i];
                        }
                    }
                }
            }
            let mut a = vec![0.0; d];
            let mut da = vec![0.0; d];
            let mut tmp = vec![0.0; d];
            for t in 0..t_len {
                let xhat = &lc.ln1_xhat[t * d..(t + 1) * d];
                for i in 0..d {
                    a[i] = lp.ln1_g[i] * xhat[i] + lp.ln1_b[i];
                }
                let dqt = &dq[t * d..(t + 1) * d];
                let dkt = &dk[t * d..(t + 1) * d];
                let dvt = &dv[t * d..(t + 1) * d];
                for o in 0..d {
                    let (gq, gk, gv) = (dqt[o], dkt[o], dvt[o]);
                    let rq = &mut gl.wq[o * d..(o + 1) * d];
                    let rk = &mut gl.wk[o * d..(o + 1) * d];
                    let rv = &mut gl.wv[o * d..(o + 1) * d];
                    for i in 0..d {
                        rq[i] += gq * a[i];
                        rk[i] += gk * a[i];
                        rv[i] += gv * a[i];
                    }
                }
                matvec_t(&lp.wq, dqt, d, d, &mut da);
                matvec_t(&lp.wk, dkt, d, d, &mut tmp);
                for i in 0..d {
                    da[i] += tmp[i];
                }
                matvec_t(&lp.wv, dvt, d, d, &mut tmp);
                for i in 0..d {
                    da[i] += tmp[i];
                }
                ln_backward(
                    &da,
                    xhat,
                    &lp.ln1_g,
                    lc.ln1_stats[t].1,
                    &mut gl.ln1_g,
                    &mut gl.ln1_b,
                    &mut dxin[t * d..(t + 1) * d],
                    false,
                );
            }
        }
        dx = dxin;
    }

    for (t, &tok) in cache.tokens.iter().enumerate() {
        let dxt = &dx[t * d..(t + 1) * d];
        let te = &mut grads.tok_emb[tok as usize * d..(tok as usize + 1) * d];
        let pe = &mut grads.pos_emb[t * d..(t + 1) * d];
        for i in 0..d {
            te[i] += dxt[i];
            pe[i] += dxt[i];
        }
    }

    Ok(grads)
}

/// Backward pass with an arbitrary per-position coefficient on each target's
/// log-probability: the objective is `-sum_t w_t * log p(target_t)`, with
/// positions of zero weight contributing nothing. The policy-gradient trainer
/// folds advantages, ratios and averaging into the weights. Returns the
/// objective value and the parameter gradients.
pub fn backward_weighted(
    cfg: &ModelConfig,
    params: &Params,
    cache: &ForwardCache,
    targets: &[TokenId],
    weights: &[f64],
) -> Result<(f64, Params)> {
    let t_len = cache.t_len;
    if targets.len() != t_len || weights.len() != t_len {
        return Err(CoreError::State(format!(
            "cache built for {} positions, targets cover {}",
            t_len,
            targets.len()
        )));
    }
    let v_sz = cfg.vocab_size;
    let mut objective = 0.0;
    let mut dlogits = vec![0.0; t_len * v_sz];
    for t in 0..t_len {
        let w = weights[t];
        if w == 0.0 {
            continue;
        }
        let row = &cache.logits[t * v_sz..(t + 1) * v_sz];
        let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &x in row {
            denom += (x - maxv).exp();
        }
        let target = targets[t] as usize;
        objective -= w * (row[target] - maxv - denom.ln());
        let drow = &mut dlogits[t * v_sz..(t + 1) * v_sz];
        for i in 0..v_sz {
            drow[i] = w * (row[i] - maxv).exp() / denom;
        }
        drow[target] -= w;
    }
    let grads = backprop_from_dlogits(cfg, params, cache, &dlogits)?;
    Ok((objective, grads))
}

/// Layer-norm backward for one position. `dy` is the gradient at the gained
/// output; the input gradient is added to (`overwrite=false`) or stored in
/// (`overwrite=true`... callers always pass accumulate target pre-filled with
/// the residual-path gradient, except the final norm which owns its slot).
#[allow(clippy::too_many_arguments)]
fn ln_backward(
    dy: &[f64],
    xhat: &[f64],
    g: &[f64],
    rstd: f64,
    dg: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
    overwrite: bool,
) {
    let d = dy.len();
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    let mut dxhat = vec![0.0; d];
    for i in 0..d {
        dg[i] += dy[i] * xhat[i];
        db[i] += dy[i];
        dxhat[i] = dy[i] * g[i];
        m1 += dxhat[i];
        m2 += dxhat[i] * xhat[i];
    }
    m1 /= d as f64;
    m2 /= d as f64;
    for i in 0..d {
        let v = rstd * (dxhat[i] - m1 - xhat[i] * m2);
        if overwrite {
            dx[i] = v;
        } else {
            dx[i] += v;
        }
    }
}
