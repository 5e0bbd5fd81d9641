//! Experiment orchestration. One config drives task generation, contrastive
//! compression, both training phases and evaluation; every artifact lands
//! under a single run directory with a ledger at its root so an interrupted
//! run resumes from the last completed stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::budgetpress::{
    build_contrastive_set, build_single_budget_set, load_dataset, save_dataset, CompressionPolicy,
    DatasetManifest,
};
use crate::error::{CoreError, Result};
use crate::evalkit::{run_eval, EvalConfig, EvalReport};
use crate::grpo::{train_rl, RewardConfig, RewardMode, RlConfig};
use crate::jsonl;
use crate::nanolm::{load_checkpoint, ModelConfig, Params};
use crate::rng::{derive_seed, stream};
use crate::sft::{assemble_sft_dataset, train_sft, SftConfig, SftItem};
use crate::taskgen::{generate_task, teacher_trace, Task, TeacherTrace, Verbosity};
use crate::textcodec::Vocab;

pub const PRESETS: [&str; 6] = [
    "bard",
    "sft-full",
    "no-contrastive",
    "additive-reward",
    "rl-direct",
    "bard-no-budget",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskGenConfig {
    /// Teacher-traced tasks feeding the SFT dataset.
    pub n_sft: usize,
    /// Fresh tasks for the RL prompt pool.
    pub n_rl: usize,
    /// Held-out tasks for the eval suite.
    pub n_eval: usize,
    /// Difficulty cycle applied to tasks in generation order.
    pub difficulties: Vec<u32>,
    /// Fraction of teacher traces rendered at high verbosity.
    pub high_verbosity: f64,
}

impl Default for TaskGenConfig {
    fn default() -> Self {
        TaskGenConfig {
            n_sft: 700,
            n_rl: 256,
            n_eval: 48,
            difficulties: vec![1, 2, 3],
            high_verbosity: 0.7,
        }
    }
}

impl TaskGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sft == 0 || self.n_eval == 0 {
            return Err(CoreError::invalid("task counts must be positive"));
        }
        if self.difficulties.is_empty() || self.difficulties.iter().any(|&d| d == 0) {
            return Err(CoreError::invalid(
                "difficulty cycle must be non-empty with entries >= 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.high_verbosity) {
            return Err(CoreError::invalid("high_verbosity must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Optional inputs shared across runs; a run's own layout is used when unset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Directory holding a prebuilt dataset (`contrastive.jsonl` + manifest).
    pub data: Option<String>,
    /// Checkpoint to start RL from instead of this run's SFT output.
    pub rl_init: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    pub paths: PathsConfig,
    pub tasks: TaskGenConfig,
    /// Budgets drawn per trace during contrastive compression.
    pub k_budgets: usize,
    pub compression: CompressionPolicy,
    /// Compress traces into budget-conditioned records; off for the
    /// full-distillation presets, which train on raw traces.
    pub compress: bool,
    /// Budget clauses in SFT prompts.
    pub budget_in_sft: bool,
    pub run_rl: bool,
    /// Roll RL prompts over the SFT task pool instead of fresh tasks.
    pub rl_reuse_sft_tasks: bool,
    /// Evaluate on a slice of the SFT task pool instead of fresh tasks.
    pub eval_reuse_sft_tasks: bool,
    pub model: ModelConfig,
    pub sft: SftConfig,
    pub rl: RlConfig,
    pub reward: RewardConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: "bard".into(),
            seed: 42,
            paths: PathsConfig::default(),
            tasks: TaskGenConfig::default(),
            k_budgets: 3,
            compression: CompressionPolicy::default(),
            compress: true,
            budget_in_sft: true,
            run_rl: true,
            rl_reuse_sft_tasks: false,
            eval_reuse_sft_tasks: false,
            model: ModelConfig {
                n_layers: 2,
                n_heads: 4,
                model_dim: 48,
                ff_dim: 192,
                context_len: 320,
                vocab_size: Vocab::new().len(),
            },
            sft: SftConfig::default(),
            rl: RlConfig {
                steps: 160,
                groups_per_step: 4,
                group_size: 8,
                budget_min: 8,
                budget_max: 160,
                max_new_tokens: 176,
                ..RlConfig::default()
            },
            reward: RewardConfig {
                alpha: 1.0 / 16.0,
                ..RewardConfig::default()
            },
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !PRESETS.contains(&self.preset.as_str()) {
            return Err(CoreError::invalid(format!(
                "unknown preset {:?}; expected one of {:?}",
                self.preset, PRESETS
            )));
        }
        self.tasks.validate()?;
        if self.compress && self.k_budgets == 0 {
            return Err(CoreError::invalid("k_budgets must be >= 1"));
        }
        self.compression.validate()?;
        self.model.validate()?;
        self.sft.validate()?;
        self.rl.validate()?;
        self.reward.validate()?;
        self.eval.validate()?;
        if self.model.vocab_size != Vocab::new().len() {
            return Err(CoreError::invalid(format!(
                "model vocab_size {} does not match the tokenizer ({})",
                self.model.vocab_size,
                Vocab::new().len()
            )));
        }
        Ok(())
    }

    /// Apply a named preset's documented field overrides.
    pub fn with_preset(mut self, preset: &str) -> Result<Self> {
        match preset {
            "bard" => {}
            "sft-full" => {
                self.compress = false;
                self.budget_in_sft = false;
                self.run_rl = false;
            }
            "no-contrastive" => {
                self.k_budgets = 1;
            }
            "additive-reward" => {
                self.reward.mode = RewardMode::Additive;
            }
            "rl-direct" => {
                self.compress = false;
                self.budget_in_sft = false;
            }
            "bard-no-budget" => {
                self.budget_in_sft = false;
                self.rl.budget_prompts = false;
                self.reward.mode = RewardMode::AccuracyOnly;
            }
            other => {
                return Err(CoreError::invalid(format!(
                    "unknown preset {other:?}; expected one of {PRESETS:?}"
                )));
            }
        }
        self.preset = preset.to_string();
        Ok(self)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| CoreError::invalid(format!("bad experiment config: {e}")))?;
        Ok(cfg)
    }

    pub fn from_toml_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::invalid(format!("{e}")))
    }

    /// Canonical config hash: SHA-256 of the sorted-key JSON rendering, so
    /// key order in the source file cannot change it.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(value.to_string().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed: bool,
    pub wall_clock_secs: f64,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub run_id: String,
    pub preset: String,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunLedger {
    fn new(cfg: &ExperimentConfig) -> RunLedger {
        let hash = cfg.hash();
        RunLedger {
            run_id: format!("{}-s{}-{}", cfg.preset, cfg.seed, &hash[..8]),
            preset: cfg.preset.clone(),
            config_hash: hash,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<RunLedger> {
        let text = std::fs::read_to_string(run_dir.join("ledger.json"))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every artifact referenced by a completed stage must exist on disk.
    pub fn write(&self, run_dir: &Path) -> Result<()> {
        for (name, rec) in &self.stages {
            if !rec.completed {
                continue;
            }
            for a in &rec.artifacts {
                if !run_dir.join(a).exists() {
                    return Err(CoreError::State(format!(
                        "ledger for stage {name} references missing artifact {a}"
                    )));
                }
            }
        }
        std::fs::write(
            run_dir.join("ledger.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }

    fn stage_done(&self, run_dir: &Path, name: &str) -> bool {
        self.stages
            .get(name)
            .map(|r| r.completed && r.artifacts.iter().all(|a| run_dir.join(a).exists()))
            .unwrap_or(false)
    }
}

fn rel(run_dir: &Path, path: &Path) -> String {
    path.strip_prefix(run_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

fn gen_tasks(seed: u64, label: &str, n: usize, difficulties: &[u32]) -> Result<Vec<Task>> {
    (0..n)
        .map(|i| {
            let d = difficulties[i % difficulties.len()];
            generate_task(derive_seed(seed, label, i as u64), d)
        })
        .collect()
}

/// Generate the three task pools and the teacher traces for the SFT pool.
pub fn stage_gen_data(cfg: &ExperimentConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let data = run_dir.join("data");
    std::fs::create_dir_all(&data)?;
    let sft_tasks = gen_tasks(cfg.seed, "tasks-sft", cfg.tasks.n_sft, &cfg.tasks.difficulties)?;
    let rl_tasks = gen_tasks(cfg.seed, "tasks-rl", cfg.tasks.n_rl, &cfg.tasks.difficulties)?;
    let eval_tasks = gen_tasks(
        cfg.seed,
        "tasks-eval",
        cfg.tasks.n_eval,
        &cfg.tasks.difficulties,
    )?;
    let mut verb_rng = stream(cfg.seed, "trace-verbosity", 0);
    let traces: Vec<TeacherTrace> = sft_tasks
        .iter()
        .map(|t| {
            let v = if verb_rng.gen::<f64>() < cfg.tasks.high_verbosity {
                Verbosity::High
            } else {
                Verbosity::Low
            };
            teacher_trace(t, v)
        })
        .collect();
    let paths = [
        ("tasks_sft.jsonl", ()),
        ("tasks_rl.jsonl", ()),
        ("tasks_eval.jsonl", ()),
        ("traces.jsonl", ()),
    ];
    jsonl::write_jsonl(&data.join(paths[0].0), &sft_tasks)?;
    jsonl::write_jsonl(&data.join(paths[1].0), &rl_tasks)?;
    jsonl::write_jsonl(&data.join(paths[2].0), &eval_tasks)?;
    jsonl::write_jsonl(&data.join(paths[3].0), &traces)?;
    Ok(paths.iter().map(|(p, _)| data.join(p)).collect())
}

/// Build the budget-conditioned dataset (or an empty one for presets that
/// train on raw traces, so the manifest still records the decision).
pub fn stage_compress(cfg: &ExperimentConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let data = run_dir.join("data");
    let traces: Vec<TeacherTrace> = jsonl::read_jsonl(&data.join("traces.jsonl"))?;
    let vocab = Vocab::new();
    let ds_seed = derive_seed(cfg.seed, "compress", 0);
    let (records, manifest) = if !cfg.compress {
        (
            Vec::new(),
            DatasetManifest {
                records: 0,
                budget_histogram: BTreeMap::new(),
                difficulty_counts: BTreeMap::new(),
                seed: ds_seed,
                k_budgets: 0,
            },
        )
    } else if cfg.k_budgets >= 2 {
        build_contrastive_set(
            &vocab,
            &traces,
            cfg.k_budgets,
            &cfg.compression,
            ds_seed,
            &mut stream(cfg.seed, "compress-budgets", 0),
        )?
    } else {
        build_single_budget_set(
            &vocab,
            &traces,
            &cfg.compression,
            ds_seed,
            &mut stream(cfg.seed, "compress-budgets", 0),
        )?
    };
    save_dataset(&data, &records, &manifest)?;
    Ok(vec![data.join("contrastive.jsonl"), data.join("manifest.json")])
}

fn dataset_dir(cfg: &ExperimentConfig, run_dir: &Path) -> PathBuf {
    match &cfg.paths.data {
        Some(p) => PathBuf::from(p),
        None => run_dir.join("data"),
    }
}

/// Budget-conditioned supervised training from the compressed dataset (or
/// plain distillation on raw traces when compression is off).
pub fn stage_sft(cfg: &ExperimentConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let data = dataset_dir(cfg, run_dir);
    let vocab = Vocab::new();
    let traces: Vec<TeacherTrace> = jsonl::read_jsonl(&data.join("traces.jsonl"))?;
    let mut items: Vec<SftItem> = if cfg.compress {
        let (records, _) = load_dataset(&data)?;
        assemble_sft_dataset(
            &vocab,
            &records,
            &traces,
            cfg.sft.mix_ratio,
            &mut stream(cfg.seed, "sft-assemble", 0),
        )?
    } else {
        traces.iter().map(|t| SftItem::from_trace(&vocab, t)).collect()
    };
    if !cfg.budget_in_sft {
        for item in &mut items {
            item.budget = None;
        }
    }
    let sft_dir = run_dir.join("sft");
    let mut sft_cfg = cfg.sft.clone();
    sft_cfg.seed = derive_seed(cfg.seed, "sft", 0);
    let mut params = Params::init(&cfg.model, &mut stream(cfg.seed, "model-init", 0));
    let report = train_sft(&cfg.model, &mut params, &vocab, &items, &sft_cfg, &sft_dir)?;
    let _ = report;
    Ok(vec![
        sft_dir.join("sft.ckpt"),
        sft_dir.join("sft_report.json"),
        sft_dir.join("sft_curve.csv"),
    ])
}

fn load_params_checked(cfg: &ExperimentConfig, vocab: &Vocab, path: &Path) -> Result<Params> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.config != cfg.model {
        return Err(CoreError::State(format!(
            "checkpoint {} was trained with a different model config",
            path.display()
        )));
    }
    if ckpt.vocab_hash != vocab.hash() {
        return Err(CoreError::State(format!(
            "checkpoint {} was trained with a different vocabulary",
            path.display()
        )));
    }
    Ok(ckpt.params)
}

/// The RL phase, starting from this run's SFT checkpoint unless overridden.
pub fn stage_rl(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    init_override: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let vocab = Vocab::new();
    let init_path = match init_override {
        Some(p) => p.to_path_buf(),
        None => match &cfg.paths.rl_init {
            Some(p) => PathBuf::from(p),
            None => run_dir.join("sft").join("sft.ckpt"),
        },
    };
    let params = load_params_checked(cfg, &vocab, &init_path)?;
    let data = dataset_dir(cfg, run_dir);
    let pool_file = if cfg.rl_reuse_sft_tasks {
        "tasks_sft.jsonl"
    } else {
        "tasks_rl.jsonl"
    };
    let pool: Vec<Task> = jsonl::read_jsonl(&data.join(pool_file))?;
    let rl_dir = run_dir.join("rl");
    let mut rl_cfg = cfg.rl.clone();
    rl_cfg.seed = derive_seed(cfg.seed, "rl", 0);
    train_rl(&cfg.model, params, &vocab, &pool, &rl_cfg, &cfg.reward, &rl_dir)?;
    Ok(vec![
        rl_dir.join("rl.ckpt"),
        rl_dir.join("rl_log.csv"),
        rl_dir.join("rl_report.json"),
    ])
}

/// Evaluate the run's final checkpoint over the budget sweep.
pub fn stage_eval(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    ckpt_override: Option<&Path>,
    plot_data: bool,
) -> Result<Vec<PathBuf>> {
    let vocab = Vocab::new();
    let ckpt_path = match ckpt_override {
        Some(p) => p.to_path_buf(),
        None if cfg.run_rl => run_dir.join("rl").join("rl.ckpt"),
        None => run_dir.join("sft").join("sft.ckpt"),
    };
    let params = load_params_checked(cfg, &vocab, &ckpt_path)?;
    let data = dataset_dir(cfg, run_dir);
    let tasks: Vec<Task> = if cfg.eval_reuse_sft_tasks {
        let pool: Vec<Task> = jsonl::read_jsonl(&data.join("tasks_sft.jsonl"))?;
        pool.into_iter().take(cfg.tasks.n_eval).collect()
    } else {
        jsonl::read_jsonl(&data.join("tasks_eval.jsonl"))?
    };
    let report = run_eval(&cfg.model, &params, &vocab, &tasks, &cfg.eval)?;
    let eval_dir = run_dir.join("eval");
    std::fs::create_dir_all(&eval_dir)?;
    report.write_json(&eval_dir.join("eval_report.json"))?;
    report.write_csv(&eval_dir.join("eval_summary.csv"))?;
    report.write_behavior_csv(&eval_dir.join("behavior.csv"))?;
    let mut artifacts = vec![
        eval_dir.join("eval_report.json"),
        eval_dir.join("eval_summary.csv"),
        eval_dir.join("behavior.csv"),
    ];
    if plot_data {
        report.write_length_samples(&eval_dir.join("lengths.csv"))?;
        artifacts.push(eval_dir.join("lengths.csv"));
    }
    Ok(artifacts)
}

/// Run every stage of the preset in order, resuming from the ledger when one
/// already completed. A failed stage leaves earlier artifacts in place.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    plot_data: bool,
) -> Result<RunLedger> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir)?;
    let mut ledger = if run_dir.join("ledger.json").exists() {
        let existing = RunLedger::load(run_dir)?;
        if existing.config_hash != cfg.hash() {
            return Err(CoreError::invalid(format!(
                "run directory {} holds a different config (hash {} vs {})",
                run_dir.display(),
                existing.config_hash,
                cfg.hash()
            )));
        }
        existing
    } else {
        RunLedger::new(cfg)
    };
    std::fs::write(run_dir.join("config.toml"), cfg.to_toml_string()?)?;

    type StageFn<'a> = Box<dyn FnOnce() -> Result<Vec<PathBuf>> + 'a>;
    let mut stages: Vec<(&str, StageFn)> = vec![
        ("gen-data", Box::new(|| stage_gen_data(cfg, run_dir))),
        ("compress", Box::new(|| stage_compress(cfg, run_dir))),
        ("sft", Box::new(|| stage_sft(cfg, run_dir))),
    ];
    if cfg.run_rl {
        stages.push(("rl", Box::new(|| stage_rl(cfg, run_dir, None))));
    }
    stages.push((
        "eval",
        Box::new(move || stage_eval(cfg, run_dir, None, plot_data)),
    ));

    for (name, run) in stages {
        if ledger.stage_done(run_dir, name) {
            log::info!("stage {name} already complete; skipping");
            continue;
        }
        let t0 = Instant::now();
        let artifacts = run()?;
        ledger.stages.insert(
            name.to_string(),
            StageRecord {
                completed: true,
                wall_clock_secs: t0.elapsed().as_secs_f64(),
                artifacts: artifacts.iter().map(|p| rel(run_dir, p)).collect(),
            },
        );
        ledger.write(run_dir)?;
    }
    Ok(ledger)
}

/// Side-by-side delta of two eval reports at one budget (or pooled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub label: String,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub accuracy_delta: f64,
    pub fidelity_a: f64,
    pub fidelity_b: f64,
    pub fidelity_delta: f64,
    pub ups_a: f64,
    pub ups_b: f64,
    pub ups_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub run_a: String,
    pub run_b: String,
    /// One row per budget plus a pooled `overall` row (same averaging as the
    /// per-report summary) and, when both runs have one, an `n/a` row for the
    /// unconstrained decodes (accuracy only).
    pub rows: Vec<CompareRow>,
}

impl RunComparison {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("comparing a={} b={}\n", self.run_a, self.run_b));
        out.push_str(&format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "budget", "acc_a", "acc_b", "d_acc", "fid_a", "fid_b", "d_fid", "ups_a", "ups_b",
            "d_ups"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:>8} {:>8.3} {:>8.3} {:>+8.3} {:>8.3} {:>8.3} {:>+8.3} {:>8.3} {:>8.3} {:>+8.3}\n",
                r.label,
                r.accuracy_a,
                r.accuracy_b,
                r.accuracy_delta,
                r.fidelity_a,
                r.fidelity_b,
                r.fidelity_delta,
                r.ups_a,
                r.ups_b,
                r.ups_delta
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write as _;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "budget,acc_a,acc_b,acc_delta,fid_a,fid_b,fid_delta,ups_a,ups_b,ups_delta"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{}",
                r.label,
                r.accuracy_a,
                r.accuracy_b,
                r.accuracy_delta,
                r.fidelity_a,
                r.fidelity_b,
                r.fidelity_delta,
                r.ups_a,
                r.ups_b,
                r.ups_delta
            )?;
        }
        Ok(())
    }
}

fn load_eval_report(run_dir: &Path) -> Result<EvalReport> {
    let path = run_dir.join("eval").join("eval_report.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| CoreError::invalid(format!("no eval report at {}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Per-budget deltas (b minus a) between two finished runs.
pub fn compare_runs(run_a: &Path, run_b: &Path) -> Result<RunComparison> {
    let a = load_eval_report(run_a)?;
    let b = load_eval_report(run_b)?;
    let budgets_a: Vec<u32> = a.rows.iter().map(|r| r.budget).collect();
    let budgets_b: Vec<u32> = b.rows.iter().map(|r| r.budget).collect();
    if budgets_a != budgets_b {
        let only_a: Vec<u32> = budgets_a
            .iter()
            .filter(|x| !budgets_b.contains(x))
            .copied()
            .collect();
        let only_b: Vec<u32> = budgets_b
            .iter()
            .filter(|x| !budgets_a.contains(x))
            .copied()
            .collect();
        return Err(CoreError::invalid(format!(
            "eval sweeps differ: only in a {only_a:?}, only in b {only_b:?}"
        )));
    }
    let mut rows = Vec::new();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        rows.push(CompareRow {
            label: ra.budget.to_string(),
            accuracy_a: ra.accuracy,
            accuracy_b: rb.accuracy,
            accuracy_delta: rb.accuracy - ra.accuracy,
            fidelity_a: ra.fidelity,
            fidelity_b: rb.fidelity,
            fidelity_delta: rb.fidelity - ra.fidelity,
            ups_a: ra.ups,
            ups_b: rb.ups,
            ups_delta: rb.ups - ra.ups,
        });
    }
    rows.push(CompareRow {
        label: "overall".into(),
        accuracy_a: a.overall_accuracy,
        accuracy_b: b.overall_accuracy,
        accuracy_delta: b.overall_accuracy - a.overall_accuracy,
        fidelity_a: a.overall_fidelity,
        fidelity_b: b.overall_fidelity,
        fidelity_delta: b.overall_fidelity - a.overall_fidelity,
        ups_a: a.overall_ups,
        ups_b: b.overall_ups,
        ups_delta: b.overall_ups - a.overall_ups,
    });
    if let (Some(ua), Some(ub)) = (&a.unbudgeted, &b.unbudgeted) {
        rows.push(CompareRow {
            label: "n/a".into(),
            accuracy_a: ua.accuracy,
            accuracy_b: ub.accuracy,
            accuracy_delta: ub.accuracy - ua.accuracy,
            fidelity_a: f64::NAN,
            fidelity_b: f64::NAN,
            fidelity_delta: f64::NAN,
            ups_a: f64::NAN,
            ups_b: f64::NAN,
            ups_delta: f64::NAN,
        });
    }
    Ok(RunComparison {
        run_a: run_a.display().to_string(),
        run_b: run_b.display().to_string(),
        rows,
    })
}
