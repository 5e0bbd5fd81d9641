use super::config::ModelConfig;
use super::params::Params;
use crate::error::Result;

/// Adam with decoupled weight decay. Decay applies to matrices (embeddings,
/// projections, head), never to layer-norm parameters or biases.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    names: Vec<String>,
}

fn decays(name: &str) -> bool {
    !(name.contains("ln") || name.ends_with(".b1") || name.ends_with(".b2"))
}

impl AdamW {
    pub fn new(cfg: &ModelConfig, lr: f64, weight_decay: f64) -> AdamW {
        let shape = Params::zeros(cfg);
        let entries = shape.entries();
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: entries.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            v: entries.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            names: entries.into_iter().map(|(n, _)| n).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update. Afterwards every parameter must still be finite.
    pub fn step(&mut self, params: &mut Params, grads: &Params) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let grad_entries = grads.entries();
        for (i, (name, tensor)) in params.entries_mut().into_iter().enumerate() {
            debug_assert_eq!(name, self.names[i]);
            debug_assert_eq!(name, grad_entries[i].0);
            let g = grad_entries[i].1;
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let wd = if decays(&name) { self.weight_decay } else { 0.0 };
            for j in 0..tensor.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                tensor[j] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + wd * tensor[j]);
            }
        }
        params.assert_finite("optimizer step", self.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nanolm::forward::{backward, forward};
    use crate::rng::stream;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 2,
            model_dim: 8,
            ff_dim: 16,
            context_len: 8,
            vocab_size: 11,
        }
    }

    #[test]
    fn repeated_steps_reduce_loss() {
        let cfg = cfg();
        let mut params = Params::init(&cfg, &mut stream(30, "optim", 0));
        let mut opt = AdamW::new(&cfg, 1e-2, 0.0);
        let tokens = [1, 5, 2, 5, 3];
        let targets = [5, 2, 5, 3, 7];
        let mask = [true; 5];
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..60 {
            let cache = forward(&cfg, &params, &tokens).unwrap();
            let (loss, grads) = backward(&cfg, &params, &cache, &targets, &mask).unwrap();
            opt.step(&mut params, &grads).unwrap();
            first.get_or_insert(loss);
            last = loss;
        }
        assert!(last < first.unwrap() * 0.2, "{last} vs {first:?}");
        assert_eq!(opt.step_count(), 60);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let cfg = cfg();
        let mut params = Params::init(&cfg, &mut stream(31, "optim", 0));
        let snapshot = params.clone();
        let zeros = Params::zeros(&cfg);
        let mut opt = AdamW::new(&cfg, 1e-2, 0.0);
        opt.step(&mut params, &zeros).unwrap();
        assert_eq!(params.max_abs_diff(&snapshot), 0.0);
    }

    #[test]
    fn weight_decay_shrinks_matrices_not_norms() {
        let cfg = cfg();
        let mut params = Params::init(&cfg, &mut stream(32, "optim", 0));
        let snapshot = params.clone();
        let zeros = Params::zeros(&cfg);
        let mut opt = AdamW::new(&cfg, 1e-2, 0.1);
        opt.step(&mut params, &zeros).unwrap();
        assert!(params.tok_emb[0].abs() < snapshot.tok_emb[0].abs());
        assert_eq!(params.layers[0].ln1_g, snapshot.layers[0].ln1_g);
        assert_eq!(params.layers[0].b1, snapshot.layers[0].b1);
    }

    #[test]
    fn nonfinite_gradient_is_caught() {
        let cfg = cfg();
        let mut params = Params::init(&cfg, &mut stream(33, "optim", 0));
        let mut grads = Params::zeros(&cfg);
        grads.head[0] = f64::INFINITY;
        let mut opt = AdamW::new(&cfg, 1e-2, 0.0);
        assert!(opt.step(&mut params, &grads).is_err());
    }
}
