//! A desk-scale lab for budget-conditioned reasoning training.
//!
//! The pipeline generates verifiable arithmetic tasks with verbose teacher
//! traces, compresses each trace to several sampled token budgets, fine-tunes
//! a small autoregressive transformer on the budget-conditioned pairs, then
//! runs group-relative policy optimization with a multiplicative
//! accuracy-and-budget reward. An evaluation harness sweeps budgets and
//! reports accuracy, budget fidelity and their combined score.

pub mod budgetpress;
pub mod error;
pub mod evalkit;
pub mod grpo;
pub mod jsonl;
pub mod nanolm;
pub mod pipeline;
pub mod rng;
pub mod sft;
pub mod stats;
pub mod taskgen;
pub mod textcodec;

pub use error::{CoreError, Result};
