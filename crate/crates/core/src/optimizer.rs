//! Black-box search over generation schedules and mask-ratio distributions.
//!
//! - [`finite_diff_grad`] / [`optimize_generation`]: forward-difference
//!   gradient descent over the concatenated schedule vector, with projection
//!   after every update and best-so-far acceptance.
//! - [`line_search_training`]: greedy coordinate-wise grid search over the
//!   Beta parameters (α, β).
//! - [`autonat`]: alternates the two, retraining and re-evaluating after each
//!   round, as a resumable phase machine ([`AutoNatState`]).
//! - [`concurrent_search`]: the joint single-loop baseline that retrains on
//!   every candidate.
//! - [`ablate_groups`]: reruns schedule descent with some groups frozen.
//!
//! Every objective passed in is expected to be a deterministic function of its
//! argument (common random numbers), so finite differences measure the effect
//! of the perturbation rather than sampling noise.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategy::{
    project_schedule, GenerationSchedule, MaskRatioDist, ParamGroup, TrainingStrategy, BETA_PARAM_RANGE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenOptConfig {
    /// Relative finite-difference step: coordinate `i` moves by
    /// `epsilon · max(|ξ_i|, min_scale)`.
    pub epsilon: f64,
    pub min_scale: f64,
    pub eta: f64,
    pub max_iters: usize,
    pub eta_decay: f64,
    /// Non-improving iterations tolerated before `eta` decays and the search
    /// restarts from the best schedule.
    pub patience: usize,
    /// Groups held fixed (gradient masked to zero).
    pub frozen: Vec<ParamGroup>,
    pub parallel: bool,
}

impl Default for GenOptConfig {
    fn default() -> Self {
        GenOptConfig {
            epsilon: 0.05,
            min_scale: 0.1,
            eta: 0.1,
            max_iters: 30,
            eta_decay: 0.5,
            patience: 5,
            frozen: Vec::new(),
            parallel: true,
        }
    }
}

impl GenOptConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.epsilon) || !positive(self.eta) || !positive(self.min_scale) {
            return Err(Error::Validation("epsilon, eta and min_scale must be > 0".into()));
        }
        if !(self.eta_decay > 0.0 && self.eta_decay <= 1.0) {
            return Err(Error::Validation(format!("eta_decay must be in (0, 1], got {}", self.eta_decay)));
        }
        if self.patience == 0 {
            return Err(Error::Validation("patience must be >= 1".into()));
        }
        Ok(())
    }

    fn is_frozen(&self, coord: usize, steps: usize) -> bool {
        let group = ParamGroup::ALL[coord / steps];
        self.frozen.contains(&group)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub base_f: f64,
    pub grad: Vec<f64>,
    /// Objective evaluations spent, including the baseline.
    pub evaluations: usize,
}

fn map_maybe_parallel<T, U, F>(items: &[T], parallel: bool, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

fn gradient_at<F>(eval: &F, base: &GenerationSchedule, base_f: f64, n: usize, cfg: &GenOptConfig) -> Result<GradientEstimate>
where
    F: Fn(&GenerationSchedule) -> Result<f64> + Sync,
{
    let xi = base.to_vector();
    let steps = base.steps;
    let coords: Vec<usize> = (0..xi.len()).filter(|&i| !cfg.is_frozen(i, steps)).collect();
    let probes = map_maybe_parallel(&coords, cfg.parallel, |&i| {
        let mut moved = xi.clone();
        moved[i] += cfg.epsilon * xi[i].abs().max(cfg.min_scale);
        let projected = project_schedule(&GenerationSchedule::from_vector(&moved)?, n);
        let displacement = projected.to_vector()[i] - xi[i];
        if displacement == 0.0 || projected == *base {
            return Ok((i, 0.0, false));
        }
        let f = eval(&projected)?;
        Ok((i, (f - base_f) / displacement, true))
    })?;
    let mut grad = vec![0.0; xi.len()];
    let mut evaluations = 1;
    for (i, g, evaluated) in probes {
        grad[i] = g;
        evaluations += evaluated as usize;
    }
    Ok(GradientEstimate { base_f, grad, evaluations })
}

/// Forward-difference gradient of `eval` at the projection of `sched`.
///
/// Perturbed points are projected before evaluation; a coordinate whose
/// projected perturbation is a no-op gets gradient 0 and costs nothing.
pub fn finite_diff_grad<F>(eval: &F, sched: &GenerationSchedule, n: usize, cfg: &GenOptConfig) -> Result<GradientEstimate>
where
    F: Fn(&GenerationSchedule) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let base = project_schedule(sched, n);
    let base_f = eval(&base)?;
    gradient_at(eval, &base, base_f, n, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptRecord {
    pub iteration: usize,
    pub xi: Vec<f64>,
    pub f: f64,
    pub accepted: bool,
    /// Best F seen up to and including this record.
    pub best_f: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub records: Vec<OptRecord>,
}

impl OptTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_trace_csv(path, std::slice::from_ref(self))
    }
}

/// CSV of one or more traces, one row per evaluated candidate, with the
/// per-group norms of each schedule vector. `run` indexes the trace.
pub fn write_trace_csv(path: &Path, traces: &[OptTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "iteration", "norm_r", "norm_tau1", "norm_tau2", "norm_s", "f", "accepted", "accepted_f", "eta"])?;
    for (run, trace) in traces.iter().enumerate() {
        for rec in &trace.records {
            let steps = rec.xi.len() / 4;
            let mut row = vec![run.to_string(), rec.iteration.to_string()];
            for g in 0..4 {
                let norm = rec.xi[g * steps..(g + 1) * steps].iter().map(|v| v * v).sum::<f64>().sqrt();
                row.push(format!("{norm:.10}"));
            }
            row.push(format!("{:.12}", rec.f));
            row.push(rec.accepted.to_string());
            row.push(format!("{:.12}", rec.best_f));
            row.push(format!("{}", rec.eta));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenOptResult {
    pub best: GenerationSchedule,
    pub best_f: f64,
    pub initial_f: f64,
    pub evaluations: usize,
    pub trace: OptTrace,
}

/// Projected gradient descent `ξ ← Π(ξ − η ∇̂F)` with best-so-far tracking.
///
/// After `patience` consecutive non-improving steps `eta` is multiplied by
/// `eta_decay` and the iterate returns to the best schedule. The search stops
/// early when every gradient coordinate is zero. The returned schedule is the
/// best one evaluated, so `best_f <= initial_f`.
pub fn optimize_generation<F>(eval: &F, initial: &GenerationSchedule, n: usize, cfg: &GenOptConfig) -> Result<GenOptResult>
where
    F: Fn(&GenerationSchedule) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let mut current = project_schedule(initial, n);
    let mut f_current = eval(&current)?;
    let initial_f = f_current;
    let mut best = current.clone();
    let mut best_f = f_current;
    let mut eta = cfg.eta;
    let mut stall = 0;
    let mut evaluations = 1;
    let mut trace = OptTrace::default();
    trace.records.push(OptRecord { iteration: 0, xi: current.to_vector(), f: f_current, accepted: true, best_f, eta });

    for iteration in 1..=cfg.max_iters {
        let g = gradient_at(eval, &current, f_current, n, cfg)?;
        evaluations += g.evaluations - 1;
        if g.grad.iter().all(|&v| v == 0.0) {
            break;
        }
        let stepped: Vec<f64> = current.to_vector().iter().zip(&g.grad).map(|(x, d)| x - eta * d).collect();
        let candidate = project_schedule(&GenerationSchedule::from_vector(&stepped)?, n);
        let f_candidate = if candidate == current {
            f_current
        } else {
            evaluations += 1;
            eval(&candidate)?
        };
        let accepted = f_candidate < best_f;
        if accepted {
            best = candidate.clone();
            best_f = f_candidate;
            stall = 0;
        } else {
            stall += 1;
        }
        trace.records.push(OptRecord { iteration, xi: candidate.to_vector(), f: f_candidate, accepted, best_f, eta });
        current = candidate;
        f_current = f_candidate;
        if stall >= cfg.patience {
            eta *= cfg.eta_decay;
            stall = 0;
            current = best.clone();
            f_current = best_f;
        }
    }
    Ok(GenOptResult { best, best_f, initial_f, evaluations, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearchConfig {
    /// Candidate values for both α and β.
    pub grid: Vec<f64>,
    /// Rounds of geometric-midpoint refinement around the incumbent once a
    /// sweep stops improving.
    pub refinement_rounds: usize,
    pub max_sweeps: usize,
    /// Incumbent used when the current distribution is not a Beta.
    pub start: TrainingStrategy,
    /// Fraction of the full training steps spent on each candidate.
    pub candidate_budget: f64,
    pub parallel: bool,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            grid: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            refinement_rounds: 1,
            max_sweeps: 10,
            start: TrainingStrategy { alpha: 1.0, beta: 1.0 },
            candidate_budget: 0.25,
            parallel: true,
        }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Validation("line-search grid is empty".into()));
        }
        if self.grid.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::Validation("line-search grid values must be > 0".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Validation("max_sweeps must be >= 1".into()));
        }
        if !(self.candidate_budget > 0.0 && self.candidate_budget <= 1.0) {
            return Err(Error::Validation(format!("candidate_budget must be in (0, 1], got {}", self.candidate_budget)));
        }
        self.start.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchEval {
    pub alpha: f64,
    pub beta: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSearchResult {
    pub best: TrainingStrategy,
    pub best_f: f64,
    /// Unique candidates in the order they were first evaluated.
    pub evaluations: Vec<LineSearchEval>,
    pub sweeps: usize,
}

impl LineSearchResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["order", "alpha", "beta", "f"])?;
        for (i, e) in self.evaluations.iter().enumerate() {
            w.write_record([i.to_string(), e.alpha.to_string(), e.beta.to_string(), format!("{:.12}", e.f)])?;
        }
        w.flush()?;
        Ok(())
    }
}

type CacheKey = (u64, u64);

fn key(s: TrainingStrategy) -> CacheKey {
    (s.alpha.to_bits(), s.beta.to_bits())
}

struct CandidateCache<'a, F> {
    eval: &'a F,
    parallel: bool,
    values: BTreeMap<CacheKey, f64>,
    order: Vec<LineSearchEval>,
}

impl<F> CandidateCache<'_, F>
where
    F: Fn(TrainingStrategy) -> Result<f64> + Sync,
{
    fn lookup(&mut self, candidates: &[TrainingStrategy]) -> Result<Vec<f64>> {
        let mut fresh: Vec<TrainingStrategy> = Vec::new();
        for &c in candidates {
            if !self.values.contains_key(&key(c)) && !fresh.iter().any(|f| key(*f) == key(c)) {
                fresh.push(c);
            }
        }
        let results = map_maybe_parallel(&fresh, self.parallel, |&c| (self.eval)(c))?;
        for (c, f) in fresh.into_iter().zip(results) {
            self.values.insert(key(c), f);
            self.order.push(LineSearchEval { alpha: c.alpha, beta: c.beta, f });
        }
        Ok(candidates.iter().map(|c| self.values[&key(*c)]).collect())
    }
}

fn refine_grid(grid: &mut Vec<f64>, incumbent: f64) {
    if !grid.contains(&incumbent) {
        grid.push(incumbent);
    }
    grid.sort_by(f64::total_cmp);
    let at = grid.iter().position(|&g| g == incumbent).expect("incumbent inserted");
    let mut extra = Vec::new();
    if at > 0 {
        extra.push((grid[at - 1] * incumbent).sqrt());
    }
    if at + 1 < grid.len() {
        extra.push((grid[at + 1] * incumbent).sqrt());
    }
    for e in extra {
        if !grid.contains(&e) {
            grid.push(e);
        }
    }
    grid.sort_by(f64::total_cmp);
}

/// Greedy coordinate-wise search: scan α over the grid with β fixed, adopt the
/// best, scan β, and repeat until a full sweep brings no improvement; then
/// refine the grid around the incumbent for up to `refinement_rounds` more
/// attempts. Repeated candidates are served from a cache and never re-evaluated.
pub fn line_search_training<F>(eval: &F, cfg: &LineSearchConfig, start: TrainingStrategy) -> Result<LineSearchResult>
where
    F: Fn(TrainingStrategy) -> Result<f64> + Sync,
{
    cfg.validate()?;
    start.validate()?;
    let mut cache = CandidateCache { eval, parallel: cfg.parallel, values: BTreeMap::new(), order: Vec::new() };
    let mut incumbent = start;
    let mut incumbent_f = cache.lookup(&[start])?[0];
    let mut alpha_grid = cfg.grid.clone();
    let mut beta_grid = cfg.grid.clone();
    alpha_grid.sort_by(f64::total_cmp);
    beta_grid.sort_by(f64::total_cmp);
    let mut rounds_left = cfg.refinement_rounds;
    let mut sweeps = 0;

    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut improved = false;
        for axis in 0..2 {
            let cands: Vec<TrainingStrategy> = if axis == 0 {
                alpha_grid.iter().map(|&a| TrainingStrategy { alpha: a, beta: incumbent.beta }).collect()
            } else {
                beta_grid.iter().map(|&b| TrainingStrategy { alpha: incumbent.alpha, beta: b }).collect()
            };
            let fs = cache.lookup(&cands)?;
            for (c, f) in cands.into_iter().zip(fs) {
                if f < incumbent_f {
                    incumbent = c;
                    incumbent_f = f;
                    improved = true;
                }
            }
        }
        if !improved {
            if rounds_left == 0 {
                break;
            }
            rounds_left -= 1;
            refine_grid(&mut alpha_grid, incumbent.alpha);
            refine_grid(&mut beta_grid, incumbent.beta);
        }
    }
    Ok(LineSearchResult { best: incumbent, best_f: incumbent_f, evaluations: cache.order, sweeps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoNatConfig {
    /// Stop once the relative change of the retrained F falls to this level.
    pub convergence_threshold: f64,
    pub max_alternations: usize,
}

impl Default for AutoNatConfig {
    fn default() -> Self {
        AutoNatConfig { convergence_threshold: 0.01, max_alternations: 3 }
    }
}

impl AutoNatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.convergence_threshold.is_nan() || self.convergence_threshold <= 0.0 {
            return Err(Error::Validation("convergence threshold must be > 0".into()));
        }
        if self.max_alternations == 0 {
            return Err(Error::Validation("max_alternations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainBudget {
    Full,
    Candidate,
}

/// Trains models for a mask-ratio distribution and scores schedules with them.
pub trait StrategyHarness: Sync {
    type Model: Clone + Send + Sync;

    fn seq_len(&self) -> usize;
    fn train(&self, dist: &MaskRatioDist, budget: TrainBudget) -> Result<Self::Model>;
    fn evaluate(&self, model: &Self::Model, sched: &GenerationSchedule) -> Result<f64>;
}

/// A complete configuration with its trained model and score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent<M> {
    pub schedule: GenerationSchedule,
    pub dist: MaskRatioDist,
    pub model: M,
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Ready to optimize the generation schedule of the current alternation.
    Start,
    GenerationDone,
    TrainingDone,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternationRecord {
    pub alternation: usize,
    pub f_after_generation: f64,
    pub strategy: TrainingStrategy,
    pub f_after_retrain: f64,
    pub accepted: bool,
    pub best_f: f64,
    pub relative_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoNatState<M> {
    pub alternation: usize,
    pub phase: Phase,
    pub baseline_f: f64,
    pub current: Incumbent<M>,
    pub best: Incumbent<M>,
    pub prev_f: Option<f64>,
    pub pending_strategy: Option<TrainingStrategy>,
    pub records: Vec<AlternationRecord>,
    pub gen_results: Vec<GenOptResult>,
    pub line_searches: Vec<LineSearchResult>,
    /// Best F after each completed phase, starting with the baseline.
    pub accepted_f: Vec<f64>,
    pub training_runs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfigs {
    pub gen_opt: GenOptConfig,
    pub line_search: LineSearchConfig,
    pub autonat: AutoNatConfig,
}

impl OptimizerConfigs {
    pub fn validate(&self) -> Result<()> {
        self.gen_opt.validate()?;
        self.line_search.validate()?;
        self.autonat.validate()
    }
}

/// Trains the initial model and scores the initial configuration.
pub fn autonat_init<H: StrategyHarness>(
    harness: &H,
    initial_schedule: &GenerationSchedule,
    initial_dist: MaskRatioDist,
) -> Result<AutoNatState<H::Model>> {
    initial_dist.validate()?;
    let schedule = project_schedule(initial_schedule, harness.seq_len());
    let model = harness.train(&initial_dist, TrainBudget::Full)?;
    let f = harness.evaluate(&model, &schedule)?;
    let current = Incumbent { schedule, dist: initial_dist, model, f };
    Ok(AutoNatState {
        alternation: 1,
        phase: Phase::Start,
        baseline_f: f,
        best: current.clone(),
        current,
        prev_f: None,
        pending_strategy: None,
        records: Vec::new(),
        gen_results: Vec::new(),
        line_searches: Vec::new(),
        accepted_f: vec![f],
        training_runs: 1,
    })
}

/// Runs the next phase of the alternating loop.
pub fn autonat_advance<H: StrategyHarness>(
    harness: &H,
    mut state: AutoNatState<H::Model>,
    cfgs: &OptimizerConfigs,
) -> Result<AutoNatState<H::Model>> {
    let n = harness.seq_len();
    match state.phase {
        Phase::Finished => {}
        Phase::Start => {
            let model = &state.current.model;
            let eval = |s: &GenerationSchedule| harness.evaluate(model, s);
            let result = optimize_generation(&eval, &state.current.schedule, n, &cfgs.gen_opt)?;
            state.current.schedule = result.best.clone();
            state.current.f = result.best_f;
            if result.best_f <= state.best.f {
                state.best = state.current.clone();
            }
            state.gen_results.push(result);
            state.accepted_f.push(state.best.f);
            state.phase = Phase::GenerationDone;
        }
        Phase::GenerationDone => {
            let schedule = &state.current.schedule;
            let eval = |s: TrainingStrategy| {
                let model = harness.train(&s.into(), TrainBudget::Candidate)?;
                harness.evaluate(&model, schedule)
            };
            let start = state.current.dist.as_beta().unwrap_or(cfgs.line_search.start);
            let result = line_search_training(&eval, &cfgs.line_search, start)?;
            state.training_runs += result.evaluations.len();
            state.pending_strategy = Some(result.best);
            state.line_searches.push(result);
            state.accepted_f.push(state.best.f);
            state.phase = Phase::TrainingDone;
        }
        Phase::TrainingDone => {
            let strategy = state
                .pending_strategy
                .take()
                .ok_or_else(|| Error::InvalidArgument("no pending training strategy to retrain".into()))?;
            let dist = MaskRatioDist::from(strategy);
            let model = harness.train(&dist, TrainBudget::Full)?;
            state.training_runs += 1;
            let f_new = harness.evaluate(&model, &state.current.schedule)?;
            let f_generation = state.current.f;
            let candidate = Incumbent { schedule: state.current.schedule.clone(), dist, model, f: f_new };
            let accepted = f_new <= state.best.f;
            if accepted {
                state.best = candidate.clone();
                state.current = candidate;
            } else {
                state.current = state.best.clone();
            }
            let relative_change = state.prev_f.map(|p| (f_new - p).abs() / p.abs().max(f64::MIN_POSITIVE));
            state.records.push(AlternationRecord {
                alternation: state.alternation,
                f_after_generation: f_generation,
                strategy,
                f_after_retrain: f_new,
                accepted,
                best_f: state.best.f,
                relative_change,
            });
            state.accepted_f.push(state.best.f);
            state.prev_f = Some(f_new);
            let converged = relative_change.is_some_and(|c| c <= cfgs.autonat.convergence_threshold);
            if converged || state.alternation >= cfgs.autonat.max_alternations {
                state.phase = Phase::Finished;
            } else {
                state.alternation += 1;
                state.phase = Phase::Start;
            }
        }
    }
    Ok(state)
}

/// Runs the alternating loop to completion from an existing state, calling
/// `on_phase` after every completed phase.
pub fn autonat_resume<H, C>(
    harness: &H,
    mut state: AutoNatState<H::Model>,
    cfgs: &OptimizerConfigs,
    mut on_phase: C,
) -> Result<AutoNatState<H::Model>>
where
    H: StrategyHarness,
    C: FnMut(&AutoNatState<H::Model>) -> Result<()>,
{
    cfgs.validate()?;
    while state.phase != Phase::Finished {
        state = autonat_advance(harness, state, cfgs)?;
        on_phase(&state)?;
    }
    Ok(state)
}

/// Alternates schedule descent and mask-ratio line search until the
/// retrained F stops changing or the alternation limit is reached. The
/// returned state's `best` is the best configuration ever evaluated.
pub fn autonat<H: StrategyHarness>(
    harness: &H,
    initial_schedule: &GenerationSchedule,
    initial_dist: MaskRatioDist,
    cfgs: &OptimizerConfigs,
) -> Result<AutoNatState<H::Model>> {
    cfgs.validate()?;
    let state = autonat_init(harness, initial_schedule, initial_dist)?;
    autonat_resume(harness, state, cfgs, |_| Ok(()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcurrentResult {
    pub schedule: GenerationSchedule,
    pub strategy: TrainingStrategy,
    /// F of the final full-budget retrain at the best candidate.
    pub f: f64,
    pub training_runs: usize,
    pub trace: OptTrace,
}

/// Joint finite-difference descent over `[ξ, ln α, ln β]` where every
/// evaluation retrains a candidate model. α and β are clamped into
/// [`BETA_PARAM_RANGE`]. The search stops when the next iteration
/// would exceed `budget_runs` training runs (one run is reserved for the final
/// full-budget retrain).
pub fn concurrent_search<H: StrategyHarness>(
    harness: &H,
    initial_schedule: &GenerationSchedule,
    start: TrainingStrategy,
    cfg: &GenOptConfig,
    budget_runs: usize,
) -> Result<ConcurrentResult> {
    cfg.validate()?;
    start.validate()?;
    let n = harness.seq_len();
    let split = |z: &[f64]| -> Result<(GenerationSchedule, TrainingStrategy)> {
        let sched = project_schedule(&GenerationSchedule::from_vector(&z[..z.len() - 2])?, n);
        let (lo, hi) = BETA_PARAM_RANGE;
        let param = |v: f64| v.exp().clamp(lo, hi);
        let strat = TrainingStrategy { alpha: param(z[z.len() - 2]), beta: param(z[z.len() - 1]) };
        Ok((sched, strat))
    };
    let join = |s: &GenerationSchedule, t: TrainingStrategy| {
        let mut z = s.to_vector();
        z.push(t.alpha.ln());
        z.push(t.beta.ln());
        z
    };
    let eval = |z: &[f64]| -> Result<f64> {
        let (sched, strat) = split(z)?;
        let model = harness.train(&strat.into(), TrainBudget::Candidate)?;
        harness.evaluate(&model, &sched)
    };

    let (s0, t0) = split(&join(&project_schedule(initial_schedule, n), start))?;
    let mut z = join(&s0, t0);
    let steps = s0.steps;
    let mut f_z = eval(&z)?;
    let mut runs = 1;
    let mut best = z.clone();
    let mut best_f = f_z;
    let mut eta = cfg.eta;
    let mut stall = 0;
    let mut trace = OptTrace::default();
    trace.records.push(OptRecord { iteration: 0, xi: z[..4 * steps].to_vec(), f: f_z, accepted: true, best_f, eta });
    let coords: Vec<usize> = (0..z.len()).filter(|&i| i >= 4 * steps || !cfg.is_frozen(i, steps)).collect();

    let mut iteration = 0;
    while runs + coords.len() + 2 <= budget_runs {
        iteration += 1;
        let probes = map_maybe_parallel(&coords, cfg.parallel, |&i| {
            let mut moved = z.clone();
            moved[i] += cfg.epsilon * z[i].abs().max(cfg.min_scale);
            let (s, t) = split(&moved)?;
            let projected = join(&s, t);
            let displacement = projected[i] - z[i];
            if displacement == 0.0 || projected == z {
                return Ok((i, 0.0, false));
            }
            Ok((i, (eval(&projected)? - f_z) / displacement, true))
        })?;
        let mut grad = vec![0.0; z.len()];
        for (i, g, evaluated) in probes {
            grad[i] = g;
            runs += evaluated as usize;
        }
        if grad.iter().all(|&g| g == 0.0) {
            break;
        }
        let stepped: Vec<f64> = z.iter().zip(&grad).map(|(x, g)| x - eta * g).collect();
        let (s, t) = split(&stepped)?;
        let candidate = join(&s, t);
        let f_candidate = eval(&candidate)?;
        runs += 1;
        let accepted = f_candidate < best_f;
        if accepted {
            best = candidate.clone();
            best_f = f_candidate;
            stall = 0;
        } else {
            stall += 1;
        }
        trace.records.push(OptRecord { iteration, xi: candidate[..4 * steps].to_vec(), f: f_candidate, accepted, best_f, eta });
        z = candidate;
        f_z = f_candidate;
        if stall >= cfg.patience {
            eta *= cfg.eta_decay;
            stall = 0;
            z = best.clone();
            f_z = best_f;
        }
    }

    let (schedule, strategy) = split(&best)?;
    let model = harness.train(&strategy.into(), TrainBudget::Full)?;
    runs += 1;
    let f = harness.evaluate(&model, &schedule)?;
    Ok(ConcurrentResult { schedule, strategy, f, training_runs: runs, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub frozen: Vec<ParamGroup>,
    pub f: f64,
    /// `f` minus the F of the fully optimized run.
    pub delta_f: f64,
    pub schedule: GenerationSchedule,
}

/// Reruns schedule descent from `initial` with `frozen` groups held at their
/// initial values and compares against `full_f`.
pub fn ablate_groups<F>(
    eval: &F,
    initial: &GenerationSchedule,
    n: usize,
    cfg: &GenOptConfig,
    frozen: &[ParamGroup],
    full_f: f64,
) -> Result<AblationResult>
where
    F: Fn(&GenerationSchedule) -> Result<f64> + Sync,
{
    let mut cfg = cfg.clone();
    for g in frozen {
        if !cfg.frozen.contains(g) {
            cfg.frozen.push(*g);
        }
    }
    let result = optimize_generation(eval, initial, n, &cfg)?;
    Ok(AblationResult { frozen: frozen.to_vec(), f: result.best_f, delta_f: result.best_f - full_f, schedule: result.best })
}

/// Parses a group name and ablates it.
pub fn ablate_hyperparameter_group<F>(
    eval: &F,
    initial: &GenerationSchedule,
    n: usize,
    cfg: &GenOptConfig,
    group: &str,
    full_f: f64,
) -> Result<AblationResult>
where
    F: Fn(&GenerationSchedule) -> Result<f64> + Sync,
{
    let group: ParamGroup = group.parse()?;
    ablate_groups(eval, initial, n, cfg, &[group], full_f)
}
