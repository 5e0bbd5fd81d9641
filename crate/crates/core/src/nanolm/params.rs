use super::config::ModelConfig;
use crate::error::{CoreError, Result};
use rand::Rng;

/// One transformer block's weights. Matrices are row-major `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// All model parameters. The same struct doubles as a gradient store.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok_emb: Vec<f64>,
    pub pos_emb: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Vec<f64>,
    pub lnf_b: Vec<f64>,
    pub head: Vec<f64>,
}

fn normal(rng: &mut impl Rng, std: f64) -> f64 {
    // Box-Muller; u1 bounded away from zero.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn filled(rng: &mut impl Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len).map(|_| normal(rng, std)).collect()
}

impl Params {
    /// Normal(0, 0.02) init with residual projections scaled down by
    /// 1/sqrt(2 * n_layers); gains 1, biases 0.
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Params {
        let d = cfg.model_dim;
        let f = cfg.ff_dim;
        let std = 0.02;
        let resid_std = std / (2.0 * cfg.n_layers as f64).sqrt();
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                ln1_g: vec![1.0; d],
                ln1_b: vec![0.0; d],
                wq: filled(rng, d * d, std),
                wk: filled(rng, d * d, std),
                wv: filled(rng, d * d, std),
                wo: filled(rng, d * d, resid_std),
                ln2_g: vec![1.0; d],
                ln2_b: vec![0.0; d],
                w1: filled(rng, f * d, std),
                b1: vec![0.0; f],
                w2: filled(rng, d * f, resid_std),
                b2: vec![0.0; d],
            })
            .collect();
        Params {
            tok_emb: filled(rng, cfg.vocab_size * d, std),
            pos_emb: filled(rng, cfg.context_len * d, std),
            layers,
            lnf_g: vec![1.0; d],
            lnf_b: vec![0.0; d],
            head: filled(rng, cfg.vocab_size * d, std),
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Params {
        let d = cfg.model_dim;
        let f = cfg.ff_dim;
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                ln1_g: vec![0.0; d],
                ln1_b: vec![0.0; d],
                wq: vec![0.0; d * d],
                wk: vec![0.0; d * d],
                wv: vec![0.0; d * d],
                wo: vec![0.0; d * d],
                ln2_g: vec![0.0; d],
                ln2_b: vec![0.0; d],
                w1: vec![0.0; f * d],
                b1: vec![0.0; f],
                w2: vec![0.0; d * f],
                b2: vec![0.0; d],
            })
            .collect();
        Params {
            tok_emb: vec![0.0; cfg.vocab_size * d],
            pos_emb: vec![0.0; cfg.context_len * d],
            layers,
            lnf_g: vec![0.0; d],
            lnf_b: vec![0.0; d],
            head: vec![0.0; cfg.vocab_size * d],
        }
    }

    /// Canonical `(name, tensor)` listing. Layer indices are zero-padded so
    /// lexicographic name order matches layer order.
    pub fn entries(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out: Vec<(String, &Vec<f64>)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("pos_emb".into(), &self.pos_emb),
            ("lnf.g".into(), &self.lnf_g),
            ("lnf.b".into(), &self.lnf_b),
            ("head".into(), &self.head),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layer{i:02}.{s}");
            out.push((p("ln1.g"), &l.ln1_g));
            out.push((p("ln1.b"), &l.ln1_b));
            out.push((p("attn.wq"), &l.wq));
            out.push((p("attn.wk"), &l.wk));
            out.push((p("attn.wv"), &l.wv));
            out.push((p("attn.wo"), &l.wo));
            out.push((p("ln2.g"), &l.ln2_g));
            out.push((p("ln2.b"), &l.ln2_b));
            out.push((p("ffn.w1"), &l.w1));
            out.push((p("ffn.b1"), &l.b1));
            out.push((p("ffn.w2"), &l.w2));
            out.push((p("ffn.b2"), &l.b2));
        }
        out
    }

    pub fn entries_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> = vec![
            ("tok_emb".into(), &mut self.tok_emb),
            ("pos_emb".into(), &mut self.pos_emb),
            ("lnf.g".into(), &mut self.lnf_g),
            ("lnf.b".into(), &mut self.lnf_b),
            ("head".into(), &mut self.head),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |s: &str| format!("layer{i:02}.{s}");
            out.push((p("ln1.g"), &mut l.ln1_g));
            out.push((p("ln1.b"), &mut l.ln1_b));
            out.push((p("attn.wq"), &mut l.wq));
            out.push((p("attn.wk"), &mut l.wk));
            out.push((p("attn.wv"), &mut l.wv));
            out.push((p("attn.wo"), &mut l.wo));
            out.push((p("ln2.g"), &mut l.ln2_g));
            out.push((p("ln2.b"), &mut l.ln2_b));
            out.push((p("ffn.w1"), &mut l.w1));
            out.push((p("ffn.b1"), &mut l.b1));
            out.push((p("ffn.w2"), &mut l.w2));
            out.push((p("ffn.b2"), &mut l.b2));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += a * other`, tensor by tensor.
    pub fn axpy(&mut self, a: f64, other: &Params) {
        let others = other.entries();
        for (i, (name, tensor)) in self.entries_mut().into_iter().enumerate() {
            debug_assert_eq!(name, others[i].0);
            for (x, y) in tensor.iter_mut().zip(others[i].1.iter()) {
                *x += a * y;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for (_, tensor) in self.entries_mut() {
            for x in tensor.iter_mut() {
                *x *= a;
            }
        }
    }

    pub fn assert_finite(&self, context: &str, step: u64) -> Result<()> {
        for (name, tensor) in self.entries() {
            if tensor.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::NonFinite {
                    context: format!("{context}: tensor {name}"),
                    step,
                });
            }
        }
        Ok(())
    }

    /// Largest absolute difference across all tensors; the determinism and
    /// no-op tests compare parameter states with this.
    pub fn max_abs_diff(&self, other: &Params) -> f64 {
        let others = other.entries();
        self.entries()
            .iter()
            .enumerate()
            .flat_map(|(i, (_, t))| {
                t.iter()
                    .zip(others[i].1.iter())
                    .map(|(a, b)| (a - b).abs())
                    .collect::<Vec<f64>>()
            })
            .fold(0.0, f64::max)
    }
}
