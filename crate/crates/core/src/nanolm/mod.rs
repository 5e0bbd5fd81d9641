//! A tiny decoder-only autoregressive transformer in 64-bit floats with
//! hand-rolled reverse-mode differentiation.
//!
//! Pre-norm blocks, learned absolute position embeddings, GELU feed-forward,
//! untied output head. Everything is plain loops over flat `Vec<f64>` in a
//! fixed order, so a forward pass is bitwise reproducible and the incremental
//! decode cache produces the same numbers as the training forward.

mod checkpoint;
mod config;
mod forward;
mod optim;
mod params;
mod sampler;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use forward::{backward, backward_weighted, forward, log_softmax_at, loss_xent, ForwardCache};
pub use optim::AdamW;
pub use params::Params;
pub use sampler::{continuation_logprobs, sample, KvCache, Sampled};
