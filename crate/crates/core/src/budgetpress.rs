//! Budget sampling and rule-based trace compression.
//!
//! Each teacher trace is condensed to several sampled token budgets by a
//! fixed ladder of moves: drop whole low-priority steps (explore, then
//! verify, then restate), compact derive prose down to bare equations, drop
//! the decompose step, and finally stop at the equation-only core. The core
//! is never cut further, so every compressed trace still replays to the gold
//! answer; a record whose core exceeds its budget is kept and flagged.

use crate::error::{CoreError, Result};
use crate::jsonl;
use crate::taskgen::{parse_task_id, StepKind, TeacherTrace};
use crate::textcodec::{TokenId, Vocab};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Ordering of compression moves. Derive steps are compacted, never dropped,
/// and decompose is only dropped after every listed kind is gone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPolicy {
    /// Step kinds removed whole, lowest priority first.
    pub drop_order: Vec<StepKind>,
    /// Replace derive prose ("then add 7 : -5+7=2") with the equation alone.
    pub compact_derive: bool,
    /// Budgets are drawn from [1, headroom * source_len]. Values above 1
    /// put slack budgets in the data, which is the only way the model ever
    /// sees "budget is bigger than you need; stop at the natural length".
    #[serde(default = "default_budget_headroom")]
    pub budget_headroom: f64,
}

fn default_budget_headroom() -> f64 {
    2.0
}

impl Default for CompressionPolicy {
    fn default() -> Self {
        CompressionPolicy {
            drop_order: vec![StepKind::Explore, StepKind::Verify, StepKind::Restate],
            compact_derive: true,
            budget_headroom: default_budget_headroom(),
        }
    }
}

impl CompressionPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.drop_order.contains(&StepKind::Decompose) {
            return Err(CoreError::invalid("drop_order must not contain decompose"));
        }
        if self.drop_order.contains(&StepKind::Derive) {
            return Err(CoreError::invalid("derive steps are compacted, never dropped"));
        }
        if !self.budget_headroom.is_finite() || self.budget_headroom < 1.0 {
            return Err(CoreError::invalid("budget_headroom must be >= 1"));
        }
        Ok(())
    }
}

/// One budget-conditioned training record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetedExample {
    pub task_id: String,
    /// Sampled target budget, stored even when compression undershoots it.
    pub budget: u32,
    /// Encoded think segment (step tags plus text tokens).
    pub cot_tokens: Vec<TokenId>,
    pub answer: String,
    /// Token count of the uncompressed trace.
    pub source_len: u32,
    /// Set when even the equation-only core is longer than the budget.
    pub min_core_exceeds: bool,
}

/// Sidecar summary of a built dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: usize,
    /// Keyed by power-of-two bucket floor of the budget.
    pub budget_histogram: BTreeMap<u32, usize>,
    pub difficulty_counts: BTreeMap<u32, usize>,
    pub seed: u64,
    pub k_budgets: usize,
}

pub fn bucket_floor(budget: u32) -> u32 {
    let mut floor = 1;
    while floor * 2 <= budget {
        floor *= 2;
    }
    floor
}

/// Draw `k` distinct budgets uniformly without replacement from `[1, l_full]`.
pub fn sample_budgets<R: Rng>(l_full: u32, k: usize, rng: &mut R) -> Result<Vec<u32>> {
    if k == 0 {
        return Err(CoreError::invalid("k must be at least 1"));
    }
    if (l_full as usize) < k {
        return Err(CoreError::invalid(format!(
            "cannot draw {k} distinct budgets from [1, {l_full}]"
        )));
    }
    let mut budgets: Vec<u32> = rand::seq::index::sample(rng, l_full as usize, k)
        .into_iter()
        .map(|i| i as u32 + 1)
        .collect();
    budgets.sort_unstable();
    Ok(budgets)
}

fn segment_len(vocab: &Vocab, steps: &[(StepKind, String)]) -> u32 {
    vocab.encode_steps(steps).len() as u32
}

/// The equation chunk of a derive step is its last whitespace chunk.
fn equation_of(text: &str) -> &str {
    text.split_whitespace().last().unwrap_or("")
}

/// Condense one trace to a budget by the fixed move ladder. The output always
/// keeps every derive step's equation, so replaying the derives still yields
/// the answer regardless of how hard the trace was cut.
pub fn compress_trace(
    vocab: &Vocab,
    trace: &TeacherTrace,
    budget: u32,
    policy: &CompressionPolicy,
) -> BudgetedExample {
    assert!(budget >= 1, "budget must be at least 1");
    policy.validate().expect("valid compression policy");
    let source_len = segment_len(vocab, &trace.steps);
    let mut steps: Vec<(StepKind, String)> = trace.steps.clone();

    let fits = |steps: &[(StepKind, String)]| segment_len(vocab, steps) <= budget;

    // Drop whole steps of each kind front to back, re-checking after each.
    'drop: for kind in &policy.drop_order {
        while !fits(&steps) {
            match steps.iter().position(|(k, _)| k == kind) {
                Some(i) => {
                    steps.remove(i);
                }
                None => continue 'drop,
            }
        }
        break;
    }

    // Compact derive prose to the bare equation, front to back.
    if policy.compact_derive {
        for i in 0..steps.len() {
            if fits(&steps) {
                break;
            }
            if steps[i].0 == StepKind::Derive {
                steps[i].1 = equation_of(&steps[i].1).to_string();
            }
        }
    }

    if !fits(&steps) {
        steps.retain(|(k, _)| *k != StepKind::Decompose);
    }

    let min_core_exceeds = !fits(&steps);
    BudgetedExample {
        task_id: trace.task_id.clone(),
        budget,
        cot_tokens: vocab.encode_steps(&steps),
        answer: trace.answer.clone(),
        source_len,
        min_core_exceeds,
    }
}

fn build_set<R: Rng>(
    vocab: &Vocab,
    traces: &[TeacherTrace],
    k: usize,
    policy: &CompressionPolicy,
    seed: u64,
    rng: &mut R,
) -> Result<(Vec<BudgetedExample>, DatasetManifest)> {
    let mut records = Vec::with_capacity(traces.len() * k);
    for trace in traces {
        let l_full = segment_len(vocab, &trace.steps);
        let window = (l_full as f64 * policy.budget_headroom).round() as u32;
        for budget in sample_budgets(window, k, rng)? {
            records.push(compress_trace(vocab, trace, budget, policy));
        }
    }
    records.sort_by(|a, b| (&a.task_id, a.budget).cmp(&(&b.task_id, b.budget)));
    records.shuffle(rng);

    let mut budget_histogram = BTreeMap::new();
    let mut difficulty_counts = BTreeMap::new();
    for record in &records {
        *budget_histogram.entry(bucket_floor(record.budget)).or_insert(0) += 1;
        let (_, difficulty) = parse_task_id(&record.task_id)?;
        *difficulty_counts.entry(difficulty).or_insert(0) += 1;
    }
    let manifest = DatasetManifest {
        records: records.len(),
        budget_histogram,
        difficulty_counts,
        seed,
        k_budgets: k,
    };
    Ok((records, manifest))
}

/// Expand each trace into `k ≥ 2` records at distinct budgets, shuffled.
pub fn build_contrastive_set<R: Rng>(
    vocab: &Vocab,
    traces: &[TeacherTrace],
    k: usize,
    policy: &CompressionPolicy,
    seed: u64,
    rng: &mut R,
) -> Result<(Vec<BudgetedExample>, DatasetManifest)> {
    if k < 2 {
        return Err(CoreError::invalid(
            "contrastive construction needs at least 2 budgets per trace",
        ));
    }
    build_set(vocab, traces, k, policy, seed, rng)
}

/// One budget per trace: the non-contrastive ablation's dataset builder.
pub fn build_single_budget_set<R: Rng>(
    vocab: &Vocab,
    traces: &[TeacherTrace],
    policy: &CompressionPolicy,
    seed: u64,
    rng: &mut R,
) -> Result<(Vec<BudgetedExample>, DatasetManifest)> {
    build_set(vocab, traces, 1, policy, seed, rng)
}

pub fn save_dataset(
    dir: &Path,
    records: &[BudgetedExample],
    manifest: &DatasetManifest,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    jsonl::write_jsonl(&dir.join("contrastive.jsonl"), records)?;
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(Vec<BudgetedExample>, DatasetManifest)> {
    let records = jsonl::read_jsonl(&dir.join("contrastive.jsonl"))?;
    let manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    Ok((records, manifest))
}
