//! Phase-1 trainer: budget-conditioned supervised fine-tuning.
//!
//! Training sequences put the budget clause before the question and mask the
//! loss to the continuation (think segment, close tag, answer, EOS), so the
//! model learns to produce budget-shaped reasoning, never to echo prompts.
//! The dataset mixes budget-conditioned records with plain full-trace records
//! at a configurable ratio.

use crate::budgetpress::BudgetedExample;
use crate::error::{CoreError, Result};
use crate::nanolm::{save_checkpoint, AdamW, Checkpoint, ModelConfig, Params};
use crate::rng::stream;
use crate::stats::pearson;
use crate::taskgen::{task_from_id, TeacherTrace};
use crate::textcodec::{TokenId, Vocab};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of budget-conditioned records in the mixed dataset.
    pub mix_ratio: f64,
    /// Held-out loss cadence in optimizer steps.
    pub eval_every: usize,
    pub seed: u64,
    /// Probe budgets for the budget-length correlation; empty = derive from
    /// the dataset's budget range.
    pub probe_budgets_in: Vec<u32>,
    pub probe_budgets_out: Vec<u32>,
    /// Number of tasks decoded per probe budget.
    pub probe_tasks: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            epochs: 4,
            batch_size: 16,
            learning_rate: 3e-4,
            weight_decay: 0.0,
            mix_ratio: 0.53,
            eval_every: 50,
            seed: 0,
            probe_budgets_in: Vec::new(),
            probe_budgets_out: Vec::new(),
            probe_tasks: 24,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CoreError::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(CoreError::invalid("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(CoreError::invalid("mix_ratio must lie in [0,1]"));
        }
        Ok(())
    }
}

/// One supervised item: an optional budget, a think segment and an answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftItem {
    pub task_id: String,
    pub budget: Option<u32>,
    pub cot_tokens: Vec<TokenId>,
    pub answer: String,
}

impl SftItem {
    pub fn from_budgeted(example: &BudgetedExample) -> SftItem {
        SftItem {
            task_id: example.task_id.clone(),
            budget: Some(example.budget),
            cot_tokens: example.cot_tokens.clone(),
            answer: example.answer.clone(),
        }
    }

    /// A plain full-trace record without budget conditioning.
    pub fn from_trace(vocab: &Vocab, trace: &TeacherTrace) -> SftItem {
        SftItem {
            task_id: trace.task_id.clone(),
            budget: None,
            cot_tokens: vocab.encode_trace(trace),
            answer: trace.answer.clone(),
        }
    }
}

/// Mix budget-conditioned records with plain traces. All contrastive records
/// are kept; plain records are drawn (with replacement if needed) until the
/// budget-aware fraction hits `mix_ratio`. The result is shuffled.
pub fn assemble_sft_dataset(
    vocab: &Vocab,
    contrastive: &[BudgetedExample],
    traces: &[TeacherTrace],
    mix_ratio: f64,
    rng: &mut impl Rng,
) -> Result<Vec<SftItem>> {
    if !(0.0..=1.0).contains(&mix_ratio) {
        return Err(CoreError::invalid("mix_ratio must lie in [0,1]"));
    }
    let mut items: Vec<SftItem> = contrastive.iter().map(SftItem::from_budgeted).collect();
    let n_budgeted = items.len();
    let n_plain = if mix_ratio == 0.0 {
        traces.len()
    } else if n_budgeted == 0 {
        0
    } else {
        ((n_budgeted as f64) * (1.0 - mix_ratio) / mix_ratio).round() as usize
    };
    if n_plain > 0 && traces.is_empty() {
        return Err(CoreError::invalid("plain records requested but no traces given"));
    }
    for i in 0..n_plain {
        let trace = if i < traces.len() {
            &traces[i]
        } else {
            &traces[rng.gen_range(0..traces.len())]
        };
        items.push(SftItem::from_trace(vocab, trace));
    }
    items.shuffle(rng);
    Ok(items)
}

/// Token sequence and loss mask for one item. The mask is true exactly on
/// the think segment, `</think>`, the answer segment and the final EOS.
pub fn make_training_sequence(vocab: &Vocab, item: &SftItem) -> Result<(Vec<TokenId>, Vec<bool>)> {
    let task = task_from_id(&item.task_id)?;
    let prompt = match item.budget {
        Some(b) => vocab.encode_prompt(&task, b),
        None => vocab.encode_prompt_unbudgeted(&task),
    };
    let mut tokens = prompt.clone();
    tokens.extend_from_slice(&item.cot_tokens);
    tokens.push(vocab.think_close());
    tokens.extend(vocab.encode_answer(&item.answer));
    tokens.push(vocab.eos());
    let mut mask = vec![false; tokens.len()];
    for m in mask.iter_mut().skip(prompt.len()) {
        *m = true;
    }
    Ok((tokens, mask))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbePoint {
    pub budget: u32,
    pub think_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub in_range: Vec<ProbePoint>,
    pub out_of_range: Vec<ProbePoint>,
    /// Pearson r between requested budget and generated think length.
    pub r_in_range: f64,
    pub r_out_of_range: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftReport {
    pub epoch_train_loss: Vec<f64>,
    /// `(step, held-out loss)` at the configured cadence.
    pub heldout_loss: Vec<(usize, f64)>,
    pub final_heldout_loss: Option<f64>,
    pub skipped_overlength: usize,
    pub steps: usize,
    pub probe: ProbeReport,
}

struct Encoded {
    tokens: Vec<TokenId>,
    mask: Vec<bool>,
}

fn encode_items(
    vocab: &Vocab,
    items: &[SftItem],
    context_len: usize,
) -> Result<(Vec<Encoded>, usize)> {
    let mut encoded = Vec::with_capacity(items.len());
    let mut skipped = 0usize;
    for item in items {
        let (tokens, mask) = make_training_sequence(vocab, item)?;
        // Training rows are tokens[..n-1]; the row count must fit the model.
        if tokens.len() > context_len + 1 {
            skipped += 1;
            continue;
        }
        encoded.push(Encoded { tokens, mask });
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} over-length records");
    }
    Ok((encoded, skipped))
}

fn batch_loss_and_step(
    model_cfg: &ModelConfig,
    params: &mut Params,
    opt: &mut AdamW,
    batch: &[&Encoded],
    step: usize,
) -> Result<f64> {
    let mut total = Params::zeros(model_cfg);
    let mut loss_sum = 0.0;
    for enc in batch {
        let n = enc.tokens.len();
        let inputs = &enc.tokens[..n - 1];
        let targets = &enc.tokens[1..];
        let tmask: Vec<bool> = enc.mask[1..].to_vec();
        let cache = crate::nanolm::forward(model_cfg, params, inputs)?;
        let (loss, grads) = crate::nanolm::backward(model_cfg, params, &cache, targets, &tmask)?;
        if !loss.is_finite() {
            return Err(CoreError::NonFinite {
                context: format!("sft loss, batch of {}", batch.len()),
                step: step as u64,
            });
        }
        loss_sum += loss;
        total.axpy(1.0 / batch.len() as f64, &grads);
    }
    opt.step(params, &total)?;
    Ok(loss_sum / batch.len() as f64)
}

fn heldout_loss(
    model_cfg: &ModelConfig,
    params: &Params,
    heldout: &[Encoded],
) -> Result<Option<f64>> {
    if heldout.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for enc in heldout {
        let n = enc.tokens.len();
        let cache = crate::nanolm::forward(model_cfg, params, &enc.tokens[..n - 1])?;
        let tmask: Vec<bool> = enc.mask[1..].to_vec();
        sum += crate::nanolm::loss_xent(
            &cache.logits,
            model_cfg.vocab_size,
            &enc.tokens[1..],
            &tmask,
        )?;
    }
    Ok(Some(sum / heldout.len() as f64))
}

/// Decode every probe task at each budget and correlate budget with the
/// generated think length.
pub fn probe_budget_correlation(
    model_cfg: &ModelConfig,
    params: &Params,
    vocab: &Vocab,
    task_ids: &[String],
    budgets: &[u32],
) -> Result<Vec<ProbePoint>> {
    let mut points = Vec::new();
    let mut rng = stream(0, "probe", 0);
    for &budget in budgets {
        for id in task_ids {
            let task = task_from_id(id)?;
            let prompt = vocab.encode_prompt(&task, budget);
            if prompt.len() + 2 > model_cfg.context_len {
                return Err(CoreError::invalid("probe prompt exceeds context"));
            }
            let max_new = model_cfg.context_len - prompt.len();
            let out = crate::nanolm::sample(
                model_cfg,
                params,
                &prompt,
                0.0,
                max_new,
                vocab.eos(),
                &mut rng,
            )?;
            let parsed = vocab.parse_generation(&out.tokens);
            points.push(ProbePoint { budget, think_len: parsed.think_len });
        }
    }
    Ok(points)
}

fn correlation_of(points: &[ProbePoint]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.budget as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.think_len as f64).collect();
    pearson(&xs, &ys).unwrap_or(0.0)
}

/// Evenly spaced probe budgets inside and beyond the observed budget range.
fn derive_probe_budgets(items: &[SftItem]) -> (Vec<u32>, Vec<u32>) {
    let budgets: Vec<u32> = items.iter().filter_map(|i| i.budget).collect();
    if budgets.is_empty() {
        return (vec![8, 16, 32, 64], vec![128, 192, 256]);
    }
    let lo = *budgets.iter().min().unwrap();
    let hi = *budgets.iter().max().unwrap();
    let span = (hi - lo).max(5);
    let in_range: Vec<u32> = (0..6).map(|i| lo + span * i / 5).collect();
    let out_of_range: Vec<u32> = [3, 4, 5, 6].iter().map(|&m| hi * m / 2).collect();
    (in_range, out_of_range)
}

/// Train on the mixed dataset, checkpointing each epoch, then run the probe
/// sweep. Deterministic for a fixed config.
pub fn train_sft(
    model_cfg: &ModelConfig,
    params: &mut Params,
    vocab: &Vocab,
    items: &[SftItem],
    cfg: &SftConfig,
    out_dir: &Path,
) -> Result<SftReport> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(CoreError::invalid("empty SFT dataset"));
    }
    std::fs::create_dir_all(out_dir)?;
    let (encoded, skipped) = encode_items(vocab, items, model_cfg.context_len)?;
    if encoded.is_empty() {
        return Err(CoreError::invalid("every record was over-length"));
    }
    // Last ~5% (at least 1, never all) held out for loss tracking.
    let n_held = (encoded.len() / 20).clamp(1, encoded.len() - 1);
    let (train, held) = encoded.split_at(encoded.len() - n_held);

    let mut opt = AdamW::new(model_cfg, cfg.learning_rate, cfg.weight_decay);
    let mut curve: Vec<(usize, f64)> = Vec::new();
    let mut heldout_curve: Vec<(usize, f64)> = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(cfg.seed, "sft-shuffle", epoch as u64));
        let mut epoch_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Encoded> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = batch_loss_and_step(model_cfg, params, &mut opt, &batch, step)?;
            step += 1;
            epoch_sum += loss;
            batches += 1;
            curve.push((step, loss));
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                if let Some(hl) = heldout_loss(model_cfg, params, held)? {
                    heldout_curve.push((step, hl));
                }
            }
        }
        epoch_losses.push(epoch_sum / batches.max(1) as f64);
        let ckpt = Checkpoint {
            config: model_cfg.clone(),
            vocab_hash: vocab.hash(),
            step: step as u64,
            params: params.clone(),
        };
        save_checkpoint(&out_dir.join(format!("epoch{epoch:02}.ckpt")), &ckpt)?;
    }
    let final_held = heldout_loss(model_cfg, params, held)?;
    let ckpt = Checkpoint {
        config: model_cfg.clone(),
        vocab_hash: vocab.hash(),
        step: step as u64,
        params: params.clone(),
    };
    save_checkpoint(&out_dir.join("sft.ckpt"), &ckpt)?;

    let mut curve_file = std::fs::File::create(out_dir.join("sft_curve.csv"))?;
    writeln!(curve_file, "step,loss")?;
    for (s, l) in &curve {
        writeln!(curve_file, "{s},{l}")?;
    }

    // Probe sweep on a deterministic sample of the dataset's tasks.
    let (auto_in, auto_out) = derive_probe_budgets(items);
    let probe_in = if cfg.probe_budgets_in.is_empty() { auto_in } else { cfg.probe_budgets_in.clone() };
    let probe_out = if cfg.probe_budgets_out.is_empty() { auto_out } else { cfg.probe_budgets_out.clone() };
    let mut task_ids: Vec<String> = items.iter().map(|i| i.task_id.clone()).collect();
    task_ids.sort();
    task_ids.dedup();
    let keep = cfg.probe_tasks.max(1).min(task_ids.len());
    let stride = task_ids.len() / keep;
    let probe_ids: Vec<String> =
        task_ids.iter().step_by(stride.max(1)).take(keep).cloned().collect();
    let in_points = probe_budget_correlation(model_cfg, params, vocab, &probe_ids, &probe_in)?;
    let out_points = probe_budget_correlation(model_cfg, params, vocab, &probe_ids, &probe_out)?;
    let probe = ProbeReport {
        r_in_range: correlation_of(&in_points),
        r_out_of_range: correlation_of(&out_points),
        in_range: in_points,
        out_of_range: out_points,
    };

    let report = SftReport {
        epoch_train_loss: epoch_losses,
        heldout_loss: heldout_curve,
        final_heldout_loss: final_held,
        skipped_overlength: skipped,
        steps: step,
        probe,
    };
    std::fs::write(
        out_dir.join("sft_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budgetpress::{build_contrastive_set, CompressionPolicy};
    use crate::taskgen::{generate_task, teacher_trace, Verbosity};

    fn small_model(vocab: &Vocab) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            model_dim: 32,
            ff_dim: 64,
            context_len: 320,
            vocab_size: vocab.len(),
        }
    }

    fn sample_dataset(vocab: &Vocab, n: u64) -> (Vec<BudgetedExample>, Vec<TeacherTrace>) {
        let traces: Vec<TeacherTrace> = (0..n)
            .map(|s| teacher_trace(&generate_task(s, 1 + (s % 3) as u32).unwrap(), Verbosity::High))
            .collect();
        let mut rng = stream(1, "sft-test", 0);
        let (records, _) =
            build_contrastive_set(vocab, &traces, 3, &CompressionPolicy::default(), 1, &mut rng)
                .unwrap();
        (records, traces)
    }

    #[test]
    fn training_sequence_layout_and_mask() {
        let vocab = Vocab::new();
        let (records, _) = sample_dataset(&vocab, 5);
        let item = SftItem::from_budgeted(&records[0]);
        let (tokens, mask) = make_training_sequence(&vocab, &item).unwrap();
        let task = task_from_id(&item.task_id).unwrap();
        let prompt = vocab.encode_prompt(&task, item.budget.unwrap());
        assert_eq!(&tokens[..prompt.len()], prompt.as_slice());
        assert!(mask[..prompt.len()].iter().all(|&m| !m));
        assert!(mask[prompt.len()..].iter().all(|&m| m));
        let expected_len =
            prompt.len() + item.cot_tokens.len() + 1 + (item.answer.len() + 2) + 1;
        assert_eq!(tokens.len(), expected_len);
        assert_eq!(*tokens.last().unwrap(), vocab.eos());
    }

    #[test]
    fn post_prompt_segment_parses_back() {
        let vocab = Vocab::new();
        let (records, _) = sample_dataset(&vocab, 70);
        for record in records.iter().take(200) {
            let item = SftItem::from_budgeted(record);
            let (tokens, _) = make_training_sequence(&vocab, &item).unwrap();
            let task = task_from_id(&item.task_id).unwrap();
            let prompt_len = vocab.encode_prompt(&task, item.budget.unwrap()).len();
            let parsed = vocab.parse_generation(&tokens[prompt_len..]);
            assert!(!parsed.malformed);
            assert_eq!(parsed.think_len, item.cot_tokens.len());
            assert_eq!(parsed.answer_text, item.answer);
        }
    }

    #[test]
    fn unbudgeted_items_have_no_budget_clause() {
        let vocab = Vocab::new();
        let task = generate_task(3, 2).unwrap();
        let trace = teacher_trace(&task, Verbosity::High);
        let item = SftItem::from_trace(&vocab, &trace);
        let (tokens, _) = make_training_sequence(&vocab, &item).unwrap();
        assert!(!tokens.contains(&vocab.budget_open()));
    }

    #[test]
    fn mix_ratio_controls_composition() {
        let vocab = Vocab::new();
        let (records, traces) = sample_dataset(&vocab, 40);
        let mut rng = stream(2, "sft-test", 1);
        let items = assemble_sft_dataset(&vocab, &records, &traces, 0.53, &mut rng).unwrap();
        let budgeted = items.iter().filter(|i| i.budget.is_some()).count();
        let plain = items.len() - budgeted;
        assert_eq!(budgeted, records.len());
        let ratio = budgeted as f64 / items.len() as f64;
        assert!((ratio - 0.53).abs() < 0.02, "ratio {ratio}");
        assert!(plain > 0);

        let all_budgeted = assemble_sft_dataset(&vocab, &records, &traces, 1.0, &mut rng).unwrap();
        assert!(all_budgeted.iter().all(|i| i.budget.is_some()));
        let all_plain = assemble_sft_dataset(&vocab, &[], &traces, 0.0, &mut rng).unwrap();
        assert!(all_plain.iter().all(|i| i.budget.is_none()));
        assert_eq!(all_plain.len(), traces.len());
    }

    #[test]
    fn contrastive_pairs_share_question_tokens() {
        let vocab = Vocab::new();
        let (records, _) = sample_dataset(&vocab, 10);
        for pair in records.windows(2) {
            if pair[0].task_id != pair[1].task_id {
                continue;
            }
            let a = make_training_sequence(&vocab, &SftItem::from_budgeted(&pair[0])).unwrap().0;
            let b = make_training_sequence(&vocab, &SftItem::from_budgeted(&pair[1])).unwrap().0;
            let task = task_from_id(&pair[0].task_id).unwrap();
            let qa = vocab.tokenize(&task.question_text).unwrap();
            let find = |seq: &[TokenId]| {
                seq.windows(qa.len()).position(|w| w == qa.as_slice()).unwrap()
            };
            let (pa, pb) = (find(&a), find(&b));
            assert_eq!(&a[pa..pa + qa.len()], &b[pb..pb + qa.len()]);
        }
    }

    #[test]
    fn overfits_a_tiny_dataset() {
        let vocab = Vocab::new();
        let (records, _) = sample_dataset(&vocab, 11);
        let items: Vec<SftItem> = records.iter().take(32).map(SftItem::from_budgeted).collect();
        assert_eq!(items.len(), 32);
        let model_cfg = small_model(&vocab);
        let mut params = Params::init(&model_cfg, &mut stream(5, "sft-test", 2));
        let cfg = SftConfig {
            epochs: 70,
            batch_size: 8,
            learning_rate: 3e-3,
            eval_every: 0,
            probe_tasks: 2,
            probe_budgets_in: vec![10, 40],
            probe_budgets_out: vec![300],
            seed: 5,
            ..SftConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let report = train_sft(&model_cfg, &mut params, &vocab, &items, &cfg, dir.path()).unwrap();
        // 70 epochs x 4 batches = 280 steps; memorization drives loss under 0.1.
        assert_eq!(report.steps, 280);
        let last = *report.epoch_train_loss.last().unwrap();
        assert!(last < 0.1, "final train loss {last}");
        assert!(dir.path().join("sft.ckpt").exists());
        assert!(dir.path().join("epoch00.ckpt").exists());
        assert!(dir.path().join("sft_curve.csv").exists());
    }

    #[test]
    fn training_is_deterministic() {
        let vocab = Vocab::new();
        let (records, traces) = sample_dataset(&vocab, 8);
        let mut rng = stream(3, "sft-test", 3);
        let items = assemble_sft_dataset(&vocab, &records, &traces, 0.6, &mut rng).unwrap();
        let model_cfg = small_model(&vocab);
        let cfg = SftConfig {
            epochs: 1,
            batch_size: 8,
            eval_every: 2,
            probe_tasks: 2,
            probe_budgets_in: vec![10, 40],
            probe_budgets_out: vec![200],
            ..SftConfig::default()
        };
        let run = |dir: &Path| {
            let mut params = Params::init(&model_cfg, &mut stream(6, "sft-test", 4));
            let report = train_sft(&model_cfg, &mut params, &vocab, &items, &cfg, dir).unwrap();
            (params, report)
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let (p1, r1) = run(d1.path());
        let (p2, r2) = run(d2.path());
        assert_eq!(p1.max_abs_diff(&p2), 0.0);
        assert_eq!(r1.epoch_train_loss, r2.epoch_train_loss);
        assert_eq!(
            std::fs::read(d1.path().join("sft.ckpt")).unwrap(),
            std::fs::read(d2.path().join("sft.ckpt")).unwrap()
        );
    }

    #[test]
    fn empty_dataset_rejected() {
        let vocab = Vocab::new();
        let model_cfg = small_model(&vocab);
        let mut params = Params::init(&model_cfg, &mut stream(7, "sft-test", 5));
        let dir = tempfile::tempdir().unwrap();
        let err = train_sft(
            &model_cfg,
            &mut params,
            &vocab,
            &[],
            &SftConfig::default(),
            dir.path(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn overlength_records_are_skipped_not_fatal() {
        let vocab = Vocab::new();
        let (records, _) = sample_dataset(&vocab, 12);
        let items: Vec<SftItem> = records.iter().map(SftItem::from_budgeted).collect();
        let mut model_cfg = small_model(&vocab);
        // Squeeze the context so the longest records no longer fit.
        let lens: Vec<usize> = items
            .iter()
            .map(|i| make_training_sequence(&vocab, i).unwrap().0.len())
            .collect();
        let max = *lens.iter().max().unwrap();
        model_cfg.context_len = max - 2;
        let (encoded, skipped) = encode_items(&vocab, &items, model_cfg.context_len).unwrap();
        assert!(skipped > 0);
        assert_eq!(encoded.len() + skipped, items.len());
    }
}
