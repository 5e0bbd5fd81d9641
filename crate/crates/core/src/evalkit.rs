//! Evaluation harness: accuracy, budget fidelity and their blend across a
//! budget sweep, plus a breakdown of which reasoning moves survive at each
//! budget.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nanolm::{sample, ModelConfig, Params};
use crate::rng::stream;
use crate::stats;
use crate::taskgen::{verify_answer, StepKind, Task};
use crate::textcodec::{TokenId, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Budgets to sweep, each one evaluated over the whole task set.
    pub budgets: Vec<u32>,
    /// Weight on accuracy in the blended score; the rest goes to fidelity.
    pub ups_weight: f64,
    pub max_new_tokens: usize,
    /// Also decode every task without a budget clause for a reference row.
    pub include_unbudgeted: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            budgets: vec![32, 48, 64, 96, 160],
            ups_weight: 0.5,
            max_new_tokens: 192,
            include_unbudgeted: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() {
            return Err(CoreError::invalid("eval budget sweep is empty"));
        }
        if self.budgets.iter().any(|&b| b == 0) {
            return Err(CoreError::invalid("eval budgets must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ups_weight) {
            return Err(CoreError::invalid("ups weight must lie in [0, 1]"));
        }
        if self.max_new_tokens == 0 {
            return Err(CoreError::invalid("max_new_tokens must be positive"));
        }
        Ok(())
    }
}

/// Fraction of thinks that fit their budget. Sitting exactly at the budget
/// counts as compliant. An empty sample has no defined fidelity.
pub fn fidelity(think_lens: &[usize], budget: u32) -> Result<f64> {
    if think_lens.is_empty() {
        return Err(CoreError::invalid(
            "fidelity over an empty sample is undefined",
        ));
    }
    let ok = think_lens
        .iter()
        .filter(|&&l| l <= budget as usize)
        .count();
    Ok(ok as f64 / think_lens.len() as f64)
}

/// Blend of accuracy and fidelity: `w * acc + (1 - w) * fid`.
pub fn ups(accuracy: f64, fidelity: f64, weight: f64) -> f64 {
    weight * accuracy + (1.0 - weight) * fidelity
}

/// One greedy decode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub task_id: String,
    /// `None` for the unbudgeted reference decode.
    pub budget: Option<u32>,
    pub think_len: usize,
    pub correct: bool,
    pub malformed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub budget: u32,
    pub n: usize,
    pub accuracy: f64,
    pub fidelity: f64,
    pub ups: f64,
    pub mean_think_len: f64,
    pub min_think_len: f64,
    pub q1_think_len: f64,
    pub median_think_len: f64,
    pub q3_think_len: f64,
    pub max_think_len: f64,
}

/// Length and accuracy of decodes prompted without any budget clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbudgetedRow {
    pub n: usize,
    pub accuracy: f64,
    pub mean_think_len: f64,
    pub min_think_len: f64,
    pub median_think_len: f64,
    pub max_think_len: f64,
}

/// Token-weighted share of each reasoning move in the thinks at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorRow {
    pub budget: u32,
    pub think_tokens: usize,
    /// Keyed by move name plus `untagged` for tokens before any tag.
    /// Sums to 1 whenever `think_tokens > 0`.
    pub proportions: BTreeMap<String, f64>,
}

impl BehaviorRow {
    pub fn share(&self, kind: StepKind) -> f64 {
        self.proportions.get(kind.as_str()).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ups_weight: f64,
    pub rows: Vec<EvalRow>,
    pub unbudgeted: Option<UnbudgetedRow>,
    /// Means over the budget rows.
    pub overall_accuracy: f64,
    pub overall_fidelity: f64,
    pub overall_ups: f64,
    pub behavior: Vec<BehaviorRow>,
    pub outcomes: Vec<Outcome>,
}

impl EvalReport {
    pub fn row(&self, budget: u32) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.budget == budget)
    }

    pub fn behavior_row(&self, budget: u32) -> Option<&BehaviorRow> {
        self.behavior.iter().find(|r| r.budget == budget)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "budget,n,accuracy,fidelity,ups,mean_think_len,min,q1,median,q3,max"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.budget,
                r.n,
                r.accuracy,
                r.fidelity,
                r.ups,
                r.mean_think_len,
                r.min_think_len,
                r.q1_think_len,
                r.median_think_len,
                r.q3_think_len,
                r.max_think_len
            )?;
        }
        if let Some(u) = &self.unbudgeted {
            writeln!(
                f,
                "none,{},{},,,{},{},,{},,{}",
                u.n, u.accuracy, u.mean_think_len, u.min_think_len, u.median_think_len, u.max_think_len
            )?;
        }
        Ok(())
    }

    pub fn write_behavior_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "budget,think_tokens,untagged")?;
        for k in StepKind::ALL {
            write!(f, ",{}", k.as_str())?;
        }
        writeln!(f)?;
        for b in &self.behavior {
            write!(
                f,
                "{},{},{}",
                b.budget,
                b.think_tokens,
                b.proportions.get("untagged").copied().unwrap_or(0.0)
            )?;
            for k in StepKind::ALL {
                write!(f, ",{}", b.share(k))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }

    /// Raw per-decode think lengths, one row per (budget, task), for plotting.
    pub fn write_length_samples(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "budget,task_id,think_len,correct,malformed")?;
        for o in &self.outcomes {
            let b = o
                .budget
                .map(|b| b.to_string())
                .unwrap_or_else(|| "none".into());
            writeln!(
                f,
                "{},{},{},{},{}",
                b, o.task_id, o.think_len, o.correct as u8, o.malformed as u8
            )?;
        }
        Ok(())
    }
}

/// Attribute every think token to the most recent step tag before it (the tag
/// token included); tokens before the first tag count as `untagged`.
pub fn behavior_counts(vocab: &Vocab, think: &[TokenId]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    let mut current = "untagged";
    for &tok in think {
        if let Some(kind) = vocab.tag_kind(tok) {
            current = kind.as_str();
        }
        *counts.entry(current.to_string()).or_insert(0) += 1;
    }
    counts
}

fn length_stats(lens: &[usize]) -> (f64, f64, f64, f64, f64, f64) {
    let mut sorted: Vec<f64> = lens.iter().map(|&l| l as f64).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        stats::mean(&sorted),
        stats::quantile_sorted(&sorted, 0.0),
        stats::quantile_sorted(&sorted, 0.25),
        stats::quantile_sorted(&sorted, 0.5),
        stats::quantile_sorted(&sorted, 0.75),
        stats::quantile_sorted(&sorted, 1.0),
    )
}

/// Greedy-decode every task at every budget in the sweep and aggregate.
/// A decode that fails to parse scores as incorrect; its emitted tokens still
/// count against the budget.
pub fn run_eval(
    model_cfg: &ModelConfig,
    params: &Params,
    vocab: &Vocab,
    tasks: &[Task],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(CoreError::invalid("eval task set is empty"));
    }
    // Greedy decoding ignores the draw stream; one throwaway serves all.
    let mut rng = stream(0, "eval-greedy", 0);
    let mut rows = Vec::new();
    let mut behavior = Vec::new();
    let mut outcomes = Vec::new();
    for &budget in &cfg.budgets {
        let mut lens = Vec::with_capacity(tasks.len());
        let mut correct = 0usize;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut total_tokens = 0usize;
        for task in tasks {
            let prompt = vocab.encode_prompt(task, budget);
            let sampled = sample(
                model_cfg,
                params,
                &prompt,
                0.0,
                cfg.max_new_tokens,
                vocab.eos(),
                &mut rng,
            )?;
            let parsed = vocab.parse_generation(&sampled.tokens);
            let is_correct =
                !parsed.malformed && verify_answer(&parsed.answer_text, &task.gold_answer);
            correct += is_correct as usize;
            lens.push(parsed.think_len);
            total_tokens += parsed.think_tokens.len();
            for (k, n) in behavior_counts(vocab, &parsed.think_tokens) {
                *counts.entry(k).or_insert(0) += n;
            }
            outcomes.push(Outcome {
                task_id: task.id.clone(),
                budget: Some(budget),
                think_len: parsed.think_len,
                correct: is_correct,
                malformed: parsed.malformed,
            });
        }
        let accuracy = correct as f64 / tasks.len() as f64;
        let fid = fidelity(&lens, budget)?;
        let (mean_l, min_l, q1, med, q3, max_l) = length_stats(&lens);
        rows.push(EvalRow {
            budget,
            n: tasks.len(),
            accuracy,
            fidelity: fid,
            ups: ups(accuracy, fid, cfg.ups_weight),
            mean_think_len: mean_l,
            min_think_len: min_l,
            q1_think_len: q1,
            median_think_len: med,
            q3_think_len: q3,
            max_think_len: max_l,
        });
        behavior.push(BehaviorRow {
            budget,
            think_tokens: total_tokens,
            proportions: counts
                .into_iter()
                .map(|(k, n)| (k, n as f64 / total_tokens.max(1) as f64))
                .collect(),
        });
    }

    let unbudgeted = if cfg.include_unbudgeted {
        let mut lens = Vec::with_capacity(tasks.len());
        let mut correct = 0usize;
        for task in tasks {
            let prompt = vocab.encode_prompt_unbudgeted(task);
            let sampled = sample(
                model_cfg,
                params,
                &prompt,
                0.0,
                cfg.max_new_tokens,
                vocab.eos(),
                &mut rng,
            )?;
            let parsed = vocab.parse_generation(&sampled.tokens);
            let is_correct =
                !parsed.malformed && verify_answer(&parsed.answer_text, &task.gold_answer);
            correct += is_correct as usize;
            lens.push(parsed.think_len);
            outcomes.push(Outcome {
                task_id: task.id.clone(),
                budget: None,
                think_len: parsed.think_len,
                correct: is_correct,
                malformed: parsed.malformed,
            });
        }
        let (mean_l, min_l, _, med, _, max_l) = length_stats(&lens);
        Some(UnbudgetedRow {
            n: tasks.len(),
            accuracy: correct as f64 / tasks.len() as f64,
            mean_think_len: mean_l,
            min_think_len: min_l,
            median_think_len: med,
            max_think_len: max_l,
        })
    } else {
        None
    };

    let overall_accuracy = stats::mean(&rows.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let overall_fidelity = stats::mean(&rows.iter().map(|r| r.fidelity).collect::<Vec<_>>());
    let overall_ups = stats::mean(&rows.iter().map(|r| r.ups).collect::<Vec<_>>());
    Ok(EvalReport {
        ups_weight: cfg.ups_weight,
        rows,
        unbudgeted,
        overall_accuracy,
        overall_fidelity,
        overall_ups,
        behavior,
        outcomes,
    })
}
