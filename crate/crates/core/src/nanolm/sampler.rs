use super::config::ModelConfig;
use super::forward::{attend_one, gelu, layer_norm, matvec};
use super::params::Params;
use crate::error::{CoreError, Result};
use crate::textcodec::TokenId;
use rand::Rng;

/// Per-layer key/value rows for incremental decoding, row-major
/// `[position, model_dim]` exactly like the training forward's arrays, so
/// the attention arithmetic is bitwise identical.
pub struct KvCache {
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn new(cfg: &ModelConfig) -> KvCache {
        KvCache {
            k: vec![Vec::new(); cfg.n_layers],
            v: vec![Vec::new(); cfg.n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Feed one token at the next position and return the logits row.
pub fn forward_next(
    cfg: &ModelConfig,
    params: &Params,
    cache: &mut KvCache,
    token: TokenId,
) -> Result<Vec<f64>> {
    let pos = cache.len;
    if pos >= cfg.context_len {
        return Err(CoreError::invalid(format!(
            "context window {} exhausted",
            cfg.context_len
        )));
    }
    if token as usize >= cfg.vocab_size {
        return Err(CoreError::invalid(format!("token id {token} out of vocabulary")));
    }
    let d = cfg.model_dim;
    let mut x = vec![0.0; d];
    {
        let e = &params.tok_emb[token as usize * d..(token as usize + 1) * d];
        let p = &params.pos_emb[pos * d..(pos + 1) * d];
        for i in 0..d {
            x[i] = e[i] + p[i];
        }
    }
    let mut xhat = vec![0.0; d];
    let mut a = vec![0.0; d];
    let mut q = vec![0.0; d];
    let mut att = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for (l, lp) in params.layers.iter().enumerate() {
        layer_norm(&x, &lp.ln1_g, &lp.ln1_b, &mut xhat, &mut a);
        matvec(&lp.wq, &a, d, d, &mut q);
        let k_new = {
            let mut k = vec![0.0; d];
            matvec(&lp.wk, &a, d, d, &mut k);
            k
        };
        let v_new = {
            let mut v = vec![0.0; d];
            matvec(&lp.wv, &a, d, d, &mut v);
            v
        };
        cache.k[l].extend_from_slice(&k_new);
        cache.v[l].extend_from_slice(&v_new);
        attend_one(
            &q,
            &cache.k[l],
            &cache.v[l],
            pos,
            cfg.n_heads,
            cfg.head_dim(),
            &mut att,
            None,
        );
        matvec(&lp.wo, &att, d, d, &mut tmp);
        for i in 0..d {
            x[i] += tmp[i];
        }
        let mut fin = vec![0.0; d];
        layer_norm(&x, &lp.ln2_g, &lp.ln2_b, &mut xhat, &mut fin);
        let f = cfg.ff_dim;
        let mut h1 = vec![0.0; f];
        matvec(&lp.w1, &fin, f, d, &mut h1);
        let mut gact = vec![0.0; f];
        for i in 0..f {
            gact[i] = gelu(h1[i] + lp.b1[i]);
        }
        matvec(&lp.w2, &gact, d, f, &mut tmp);
        for i in 0..d {
            x[i] += tmp[i] + lp.b2[i];
        }
    }
    let mut y = vec![0.0; d];
    layer_norm(&x, &params.lnf_g, &params.lnf_b, &mut xhat, &mut y);
    let mut logits = vec![0.0; cfg.vocab_size];
    matvec(&params.head, &y, cfg.vocab_size, d, &mut logits);
    cache.len += 1;
    Ok(logits)
}

/// A sampled continuation with the log-probability of each emitted token.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<f64>,
    /// Generation was cut off (context window or max_new) without emitting
    /// the stop token.
    pub truncated: bool,
}

/// Autoregressive sampling. Temperature 0 is greedy with lowest-id
/// tie-breaks; its reported log-probs are under the unscaled distribution.
/// The stop token, when emitted, is included in the continuation.
pub fn sample(
    cfg: &ModelConfig,
    params: &Params,
    prompt: &[TokenId],
    temperature: f64,
    max_new: usize,
    stop: TokenId,
    rng: &mut impl Rng,
) -> Result<Sampled> {
    if temperature < 0.0 {
        return Err(CoreError::invalid("temperature must be nonnegative"));
    }
    if prompt.is_empty() {
        return Err(CoreError::invalid("empty prompt"));
    }
    if prompt.len() >= cfg.context_len {
        return Err(CoreError::invalid(format!(
            "prompt length {} leaves no room in context {}",
            prompt.len(),
            cfg.context_len
        )));
    }
    let mut cache = KvCache::new(cfg);
    let mut logits = vec![0.0; cfg.vocab_size];
    for &tok in prompt {
        logits = forward_next(cfg, params, &mut cache, tok)?;
    }
    let mut out = Sampled {
        tokens: Vec::new(),
        logprobs: Vec::new(),
        truncated: false,
    };
    for _ in 0..max_new {
        let (token, logprob) = pick(&logits, temperature, rng);
        out.tokens.push(token);
        out.logprobs.push(logprob);
        if token == stop {
            return Ok(out);
        }
        if cache.len() == cfg.context_len {
            out.truncated = true;
            return Ok(out);
        }
        logits = forward_next(cfg, params, &mut cache, token)?;
    }
    out.truncated = !out.tokens.is_empty();
    Ok(out)
}

fn pick(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> (TokenId, f64) {
    let maxv = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if temperature == 0.0 {
        let mut best = 0;
        for (i, &x) in logits.iter().enumerate() {
            if x > logits[best] {
                best = i;
            }
        }
        let mut denom = 0.0;
        for &x in logits {
            denom += (x - maxv).exp();
        }
        let logprob = logits[best] - maxv - denom.ln();
        return (best as TokenId, logprob);
    }
    let mut weights = vec![0.0; logits.len()];
    let mut denom = 0.0;
    for (i, &x) in logits.iter().enumerate() {
        weights[i] = ((x - maxv) / temperature).exp();
        denom += weights[i];
    }
    let mut r = rng.gen::<f64>() * denom;
    let mut chosen = logits.len() - 1;
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            chosen = i;
            break;
        }
        r -= w;
    }
    let logprob = (logits[chosen] - maxv) / temperature - denom.ln();
    (chosen as TokenId, logprob)
}

/// Log-probabilities of a known continuation under the current parameters,
/// via one full forward pass. Matches the sampler's reported values bitwise
/// at temperature 1 because both share the per-position arithmetic.
pub fn continuation_logprobs(
    cfg: &ModelConfig,
    params: &Params,
    prompt: &[TokenId],
    continuation: &[TokenId],
) -> Result<Vec<f64>> {
    if prompt.is_empty() {
        return Err(CoreError::invalid("empty prompt"));
    }
    let mut full: Vec<TokenId> = Vec::with_capacity(prompt.len() + continuation.len());
    full.extend_from_slice(prompt);
    full.extend_from_slice(continuation);
    if full.len() > cfg.context_len {
        return Err(CoreError::invalid("sequence exceeds context window"));
    }
    let cache = super::forward::forward(cfg, params, &full)?;
    let mut out = Vec::with_capacity(continuation.len());
    for (i, &tok) in continuation.iter().enumerate() {
        let row = cache.logits_row(prompt.len() + i - 1);
        out.push(super::forward::log_softmax_at(row, tok as usize));
    }
    Ok(out)
}
