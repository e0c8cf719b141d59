//! Toy-world harness and the reproduction suites built on it.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::Evaluator;
use crate::optimizer::{
    ablate_groups, autonat, concurrent_search, line_search_training, optimize_generation, AblationResult,
    AutoNatState, ConcurrentResult, GenOptResult, LineSearchResult, StrategyHarness, TrainBudget,
};
use crate::predictor::{train, ModelDims, TrainConfig, TrainLog, TrainableModel};
use crate::sampler::SelectionPolicy;
use crate::strategy::{heuristic_schedule, GenerationSchedule, MaskRatioDist, ParamGroup, TrainingStrategy};
use crate::toyworld::{make_chain, sample_dataset, Dataset, GroundTruthChain};

/// Trains [`TrainableModel`]s on a sampled toy dataset and scores schedules
/// with a frozen [`Evaluator`]. Training is memoized per (distribution,
/// budget) since it is deterministic.
pub struct ToyHarness {
    pub chain: GroundTruthChain,
    pub dataset: Dataset,
    pub dims: ModelDims,
    pub train_cfg: TrainConfig,
    pub init_seed: u64,
    pub candidate_budget: f64,
    pub evaluator: Evaluator,
    pub policy: SelectionPolicy,
    trained: Mutex<HashMap<String, TrainableModel>>,
    runs: AtomicUsize,
}

impl ToyHarness {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let t = &cfg.toyworld;
        let seeds = cfg.seeds();
        let chain = make_chain(t.k, t.n, t.c, t.chain_seed)?;
        let dataset = sample_dataset(&chain, t.per_class, seeds.dataset)?;
        let evaluator = Evaluator::new(chain.clone(), cfg.eval_spec())?;
        Ok(ToyHarness {
            chain,
            dataset,
            dims: cfg.dims(),
            train_cfg: cfg.train_config(),
            init_seed: seeds.model_init,
            candidate_budget: cfg.line_search.candidate_budget,
            evaluator,
            policy: cfg.policy.clone(),
            trained: Mutex::new(HashMap::new()),
            runs: AtomicUsize::new(0),
        })
    }

    /// Training runs actually computed (memoized repeats excluded).
    pub fn training_runs(&self) -> usize {
        self.runs.load(Ordering::SeqCst)
    }

    pub fn budget_config(&self, budget: TrainBudget) -> TrainConfig {
        let steps = match budget {
            TrainBudget::Full => self.train_cfg.steps,
            TrainBudget::Candidate => ((self.train_cfg.steps as f64 * self.candidate_budget).round() as usize).max(1),
        };
        TrainConfig { steps, ..self.train_cfg.clone() }
    }

    /// Trains without memoization, returning the loss log.
    pub fn train_logged(&self, dist: &MaskRatioDist, budget: TrainBudget) -> Result<(TrainableModel, TrainLog)> {
        let model = TrainableModel::new(self.dims, self.init_seed)?;
        self.runs.fetch_add(1, Ordering::SeqCst);
        train(model, &self.dataset, dist, &self.budget_config(budget))
    }
}

impl StrategyHarness for ToyHarness {
    type Model = TrainableModel;

    fn seq_len(&self) -> usize {
        self.chain.n
    }

    fn train(&self, dist: &MaskRatioDist, budget: TrainBudget) -> Result<TrainableModel> {
        let key = format!("{}|{:?}", serde_json::to_string(dist)?, budget);
        if let Some(m) = self.trained.lock().expect("training cache").get(&key) {
            return Ok(m.clone());
        }
        let (model, _) = self.train_logged(dist, budget)?;
        self.trained.lock().expect("training cache").insert(key, model.clone());
        Ok(model)
    }

    fn evaluate(&self, model: &TrainableModel, sched: &GenerationSchedule) -> Result<f64> {
        self.evaluator.evaluate(model, sched, &self.policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Contribution,
    Iterations,
    AlternatingVsConcurrent,
    AblateGroups,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Contribution, Suite::Iterations, Suite::AlternatingVsConcurrent, Suite::AblateGroups];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Contribution => "contribution",
            Suite::Iterations => "iterations",
            Suite::AlternatingVsConcurrent => "alternating-vs-concurrent",
            Suite::AblateGroups => "ablate-groups",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite '{s}' (expected one of contribution, iterations, alternating-vs-concurrent, ablate-groups)")))
    }
}

/// A small table rendered as both markdown and CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl SuiteReport {
    fn new(title: &str, headers: &[&str]) -> Self {
        SuiteReport { title: title.into(), headers: headers.iter().map(|h| h.to_string()).collect(), rows: Vec::new(), notes: Vec::new() }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("# {}\n\n| {} |\n|", self.title, self.headers.join(" | "));
        for _ in &self.headers {
            out.push_str("---|");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "| {} |", row.join(" | "));
        }
        if !self.notes.is_empty() {
            out.push('\n');
            for n in &self.notes {
                let _ = writeln!(out, "- {n}");
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<stem>.md` and `<stem>.csv` into `dir` and returns both names.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<[String; 2]> {
        let md = format!("{stem}.md");
        let csv = format!("{stem}.csv");
        std::fs::write(dir.join(&md), self.to_markdown())?;
        self.write_csv(&dir.join(&csv))?;
        Ok([md, csv])
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

/// Heuristic schedule plus the model trained on the baseline distribution.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub schedule: GenerationSchedule,
    pub dist: MaskRatioDist,
    pub model: TrainableModel,
    pub f: f64,
}

pub fn baseline(h: &ToyHarness, cfg: &RunConfig) -> Result<Baseline> {
    let schedule = heuristic_schedule(cfg.steps, cfg.toyworld.n, cfg.heuristic)?;
    let model = h.train(&cfg.baseline_dist, TrainBudget::Full)?;
    let f = h.evaluate(&model, &schedule)?;
    Ok(Baseline { schedule, dist: cfg.baseline_dist, model, f })
}

/// Schedule descent against a fixed model.
pub fn optimize_schedule_for(h: &ToyHarness, cfg: &RunConfig, model: &TrainableModel, start: &GenerationSchedule) -> Result<GenOptResult> {
    let eval = |s: &GenerationSchedule| h.evaluate(model, s);
    optimize_generation(&eval, start, cfg.toyworld.n, &cfg.gen_opt)
}

/// Line search over (α, β) with a fixed schedule; each candidate trains at the
/// reduced budget.
pub fn optimize_strategy_for(h: &ToyHarness, cfg: &RunConfig, schedule: &GenerationSchedule) -> Result<LineSearchResult> {
    let eval = |s: TrainingStrategy| {
        let model = h.train(&s.into(), TrainBudget::Candidate)?;
        h.evaluate(&model, schedule)
    };
    let start = cfg.baseline_dist.as_beta().unwrap_or(cfg.line_search.start);
    line_search_training(&eval, &cfg.line_search, start)
}

pub fn run_autonat(h: &ToyHarness, cfg: &RunConfig) -> Result<AutoNatState<TrainableModel>> {
    let schedule = heuristic_schedule(cfg.steps, cfg.toyworld.n, cfg.heuristic)?;
    autonat(h, &schedule, cfg.baseline_dist, &cfg.optimizer_configs())
}

#[derive(Debug, Clone)]
pub struct ContributionResult {
    pub neither: f64,
    pub gen_only: f64,
    pub train_only: f64,
    pub both: f64,
    pub train_only_strategy: TrainingStrategy,
}

pub fn run_contribution(h: &ToyHarness, cfg: &RunConfig) -> Result<ContributionResult> {
    let base = baseline(h, cfg)?;
    let gen = optimize_schedule_for(h, cfg, &base.model, &base.schedule)?;
    let ls = optimize_strategy_for(h, cfg, &base.schedule)?;
    let train_model = h.train(&ls.best.into(), TrainBudget::Full)?;
    let train_only = h.evaluate(&train_model, &base.schedule)?.min(base.f);
    let state = run_autonat(h, cfg)?;
    Ok(ContributionResult { neither: base.f, gen_only: gen.best_f, train_only, both: state.best.f, train_only_strategy: ls.best })
}

pub fn contribution_report(r: &ContributionResult) -> SuiteReport {
    let mut rep = SuiteReport::new("Contribution of each optimized strategy", &["gen_strategy", "train_strategy", "f_value"]);
    for (g, t, f) in [("yes", "yes", r.both), ("yes", "no", r.gen_only), ("no", "yes", r.train_only), ("no", "no", r.neither)] {
        rep.rows.push(vec![g.into(), t.into(), fmt_f(f)]);
    }
    rep.notes.push(format!(
        "train-only strategy: Beta({}, {})",
        r.train_only_strategy.alpha, r.train_only_strategy.beta
    ));
    rep
}

pub fn iterations_report(state: &AutoNatState<TrainableModel>) -> SuiteReport {
    let mut rep = SuiteReport::new(
        "F per alternation",
        &["alternation", "f_after_generation", "alpha", "beta", "f_after_retrain", "accepted", "best_f"],
    );
    rep.rows.push(vec!["0".into(), String::new(), String::new(), String::new(), String::new(), "true".into(), fmt_f(state.baseline_f)]);
    for rec in &state.records {
        rep.rows.push(vec![
            rec.alternation.to_string(),
            fmt_f(rec.f_after_generation),
            rec.strategy.alpha.to_string(),
            rec.strategy.beta.to_string(),
            fmt_f(rec.f_after_retrain),
            rec.accepted.to_string(),
            fmt_f(rec.best_f),
        ]);
    }
    let rel = (state.baseline_f - state.best.f) / state.baseline_f;
    rep.notes.push(format!("relative improvement over baseline: {:.2}%", 100.0 * rel));
    rep
}

#[derive(Debug, Clone)]
pub struct VersusResult {
    pub alternating_f: f64,
    pub alternating_runs: usize,
    pub concurrent: ConcurrentResult,
}

/// Runs the concurrent baseline with the training-run budget the alternating
/// run used.
pub fn run_versus(h: &ToyHarness, cfg: &RunConfig, alternating: &AutoNatState<TrainableModel>) -> Result<VersusResult> {
    let schedule = heuristic_schedule(cfg.steps, cfg.toyworld.n, cfg.heuristic)?;
    let start = cfg.baseline_dist.as_beta().unwrap_or(cfg.line_search.start);
    let concurrent = concurrent_search(h, &schedule, start, &cfg.gen_opt, alternating.training_runs)?;
    Ok(VersusResult { alternating_f: alternating.best.f, alternating_runs: alternating.training_runs, concurrent })
}

pub fn versus_report(r: &VersusResult) -> SuiteReport {
    let mut rep = SuiteReport::new("Alternating vs concurrent search", &["method", "training_runs", "f_value"]);
    rep.rows.push(vec!["alternating".into(), r.alternating_runs.to_string(), fmt_f(r.alternating_f)]);
    rep.rows.push(vec!["concurrent".into(), r.concurrent.training_runs.to_string(), fmt_f(r.concurrent.f)]);
    rep
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub baseline_f: f64,
    pub full_f: f64,
    pub groups: Vec<AblationResult>,
}

/// Schedule descent against the baseline model with each group frozen in
/// turn, compared with the unfrozen run.
pub fn run_ablation(h: &ToyHarness, cfg: &RunConfig) -> Result<AblationReport> {
    let base = baseline(h, cfg)?;
    let full = optimize_schedule_for(h, cfg, &base.model, &base.schedule)?;
    let eval = |s: &GenerationSchedule| h.evaluate(&base.model, s);
    let groups = ParamGroup::ALL
        .iter()
        .map(|&g| ablate_groups(&eval, &base.schedule, cfg.toyworld.n, &cfg.gen_opt, &[g], full.best_f))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport { baseline_f: base.f, full_f: full.best_f, groups })
}

pub fn ablation_report(r: &AblationReport) -> SuiteReport {
    let mut rep = SuiteReport::new("Hyperparameter-group ablation", &["frozen_group", "f_value", "delta_f"]);
    rep.rows.push(vec!["none".into(), fmt_f(r.full_f), fmt_f(0.0)]);
    for g in &r.groups {
        let names: Vec<&str> = g.frozen.iter().map(|p| p.name()).collect();
        rep.rows.push(vec![names.join("+"), fmt_f(g.f), fmt_f(g.delta_f)]);
    }
    rep.notes.push(format!("heuristic baseline F: {}", fmt_f(r.baseline_f)));
    rep
}

/// Runs one suite and returns its report.
pub fn run_suite(h: &ToyHarness, cfg: &RunConfig, suite: Suite) -> Result<SuiteReport> {
    Ok(match suite {
        Suite::Contribution => contribution_report(&run_contribution(h, cfg)?),
        Suite::Iterations => iterations_report(&run_autonat(h, cfg)?),
        Suite::AlternatingVsConcurrent => {
            let state = run_autonat(h, cfg)?;
            versus_report(&run_versus(h, cfg, &state)?)
        }
        Suite::AblateGroups => ablation_report(&run_ablation(h, cfg)?),
    })
}
