use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use natsched::config::RunConfig;
use natsched::experiments::{iterations_report, optimize_schedule_for, optimize_strategy_for, run_suite, Suite, ToyHarness};
use natsched::manifest::{RunManifest, RunStatus};
use natsched::metrics::{append_metric_row, Evaluator, MetricKind};
use natsched::optimizer::{autonat_advance, autonat_init, write_trace_csv, AutoNatState, Phase, StrategyHarness, TrainBudget};
use natsched::predictor::{OraclePredictor, Predictor, TrainableModel};
use natsched::rng::{derive_seed, StreamRng};
use natsched::sampler::generate;
use natsched::strategy::{deserialize_schedule, heuristic_schedule, serialize_schedule, GenerationSchedule, MaskRatioDist};
use natsched::toyworld::{make_chain, sample_class};
use natsched::{Error, Result};
use rand::SeedableRng;

const STATE_FILE: &str = "state.json";
const CONFIG_FILE: &str = "config.json";

/// Schedule search for masked parallel decoders on a synthetic Markov task.
#[derive(Parser)]
#[command(name = "natsched", version)]
struct Cli {
    /// Run configuration (JSON); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the toy dataset.
    Train {
        /// Mask-ratio distribution JSON; defaults to the baseline distribution.
        #[arg(long)]
        strategy: Option<PathBuf>,
    },
    /// Generate sequences with a trained model or the exact oracle.
    Generate {
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Fixed class label; sampled from the class mixture when omitted.
        #[arg(long)]
        class: Option<usize>,
    },
    /// Compute F for a sequence file or for freshly generated samples.
    Eval {
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
        /// Sequence CSV written by `generate`.
        #[arg(long, conflicts_with_all = ["checkpoint", "oracle"])]
        sequences: Option<PathBuf>,
        #[arg(long)]
        metric: Option<MetricKind>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        reference_size: Option<usize>,
    },
    /// Optimize the generation schedule against a fixed model.
    OptimizeGen {
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Line-search the mask-ratio distribution for a fixed schedule.
    OptimizeTrain {
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Alternate schedule and training-distribution search.
    Autonat {
        /// Continue the run stored in this directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, hide = true)]
        max_phases: Option<usize>,
    },
    /// Run a reproduction suite and write its report.
    Reproduce {
        /// contribution, iterations, alternating-vs-concurrent or ablate-groups
        suite: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Generate { .. } => "generate",
            Command::Eval { .. } => "eval",
            Command::OptimizeGen { .. } => "optimize-gen",
            Command::OptimizeTrain { .. } => "optimize-train",
            Command::Autonat { .. } => "autonat",
            Command::Reproduce { .. } => "reproduce",
        }
    }
}

fn is_input_error(e: &Error) -> bool {
    e.is_config_error() || matches!(e, Error::ScheduleMismatch { .. } | Error::InvalidArgument(_))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_input_error(&e) { 2 } else { 3 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    if let Command::Autonat { resume: Some(dir), max_phases } = &cli.command {
        return cmd_autonat_resume(dir, *max_phases);
    }
    let mut cfg = load_config(&cli)?;
    if let Command::Eval { metric, samples, reference_size, .. } = &cli.command {
        if let Some(m) = metric {
            cfg.eval.metric = *m;
        }
        if let Some(s) = samples {
            cfg.eval.samples = *s;
        }
        if let Some(r) = reference_size {
            cfg.eval.reference_size = *r;
        }
    }
    cfg.validate()?;
    let mut manifest = RunManifest::begin(&cfg.output_dir, cli.command.name(), &cfg, cfg.seeds().as_map())?;
    let result = dispatch(&cli.command, &cfg, &mut manifest);
    let status = if result.is_ok() { RunStatus::Completed } else { RunStatus::Failed };
    manifest.finish(status)?;
    result
}

fn dispatch(command: &Command, cfg: &RunConfig, m: &mut RunManifest) -> Result<()> {
    match command {
        Command::Train { strategy } => cmd_train(cfg, m, strategy.as_deref()),
        Command::Generate { schedule, checkpoint, oracle, count, class } => {
            cmd_generate(cfg, m, schedule.as_deref(), checkpoint.as_deref(), *oracle, *count, *class)
        }
        Command::Eval { schedule, checkpoint, oracle, sequences, .. } => {
            cmd_eval(cfg, m, schedule.as_deref(), checkpoint.as_deref(), *oracle, sequences.as_deref())
        }
        Command::OptimizeGen { schedule, checkpoint } => cmd_optimize_gen(cfg, m, schedule.as_deref(), checkpoint.as_deref()),
        Command::OptimizeTrain { schedule } => cmd_optimize_train(cfg, m, schedule.as_deref()),
        Command::Autonat { max_phases, .. } => cmd_autonat(cfg, m, *max_phases),
        Command::Reproduce { suite } => cmd_reproduce(cfg, m, suite),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(m: &mut RunManifest, name: &str, value: &T) -> Result<()> {
    std::fs::write(m.path(name), serde_json::to_string_pretty(value)?)?;
    m.record(name)
}

fn write_schedule(m: &mut RunManifest, name: &str, sched: &GenerationSchedule) -> Result<()> {
    std::fs::write(m.path(name), serialize_schedule(sched)?)?;
    m.record(name)
}

fn load_schedule(cfg: &RunConfig, path: Option<&Path>) -> Result<GenerationSchedule> {
    let n = cfg.toyworld.n;
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let sched = deserialize_schedule(&text)?;
            sched.validate(Some(n))?;
            Ok(sched)
        }
        None => heuristic_schedule(cfg.steps, n, cfg.heuristic),
    }
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<TrainableModel> {
    TrainableModel::load(path, Some(cfg.dims()))
}

fn predictor(cfg: &RunConfig, checkpoint: Option<&Path>, oracle: bool) -> Result<Box<dyn Predictor>> {
    match (checkpoint, oracle) {
        (Some(p), _) => Ok(Box::new(load_model(cfg, p)?)),
        (None, true) => {
            let t = &cfg.toyworld;
            let chain = make_chain(t.k, t.n, t.c, t.chain_seed)?;
            let weights = cfg.eval.weights(t.c)?;
            Ok(Box::new(OraclePredictor::with_class_weights(chain, weights)?))
        }
        (None, false) => Err(Error::Config("pass --checkpoint <file> or --oracle".into())),
    }
}

fn cmd_train(cfg: &RunConfig, m: &mut RunManifest, strategy: Option<&Path>) -> Result<()> {
    let dist: MaskRatioDist = match strategy {
        Some(p) => read_json(p)?,
        None => cfg.baseline_dist,
    };
    dist.validate().map_err(|e| Error::Config(e.to_string()))?;
    let h = ToyHarness::from_config(cfg)?;
    h.chain.save_json(&m.path("chain.json"))?;
    m.record("chain.json")?;
    std::fs::write(m.path("dataset.txt"), h.dataset.to_text())?;
    m.record("dataset.txt")?;
    let (model, log) = h.train_logged(&dist, TrainBudget::Full)?;
    model.save(&m.path("checkpoint.bin"))?;
    m.record("checkpoint.bin")?;
    log.write_csv(&m.path("train_log.csv"))?;
    m.record("train_log.csv")?;
    write_json(m, "strategy.json", &dist)?;
    let last = log.entries.last().map(|e| e.1).unwrap_or(f64::NAN);
    println!("trained {} steps with {}; final mean loss {last:.6}", h.train_cfg.steps, dist.label());
    Ok(())
}

fn cmd_generate(
    cfg: &RunConfig,
    m: &mut RunManifest,
    schedule: Option<&Path>,
    checkpoint: Option<&Path>,
    oracle: bool,
    count: usize,
    class: Option<usize>,
) -> Result<()> {
    if count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    let sched = load_schedule(cfg, schedule)?;
    let model = predictor(cfg, checkpoint, oracle)?;
    let c = cfg.toyworld.c;
    if let Some(cl) = class {
        if cl >= c {
            return Err(Error::ClassOutOfRange { class: cl, classes: c });
        }
    }
    let weights = cfg.eval.weights(c)?;
    let base = cfg.seeds().generate;
    let mut w = csv::Writer::from_path(m.path("sequences.csv"))?;
    w.write_record(["index", "class", "tokens"])?;
    for i in 0..count {
        let mut g = StreamRng::seed_from_u64(derive_seed(base, &[i as u64]));
        let label = class.unwrap_or_else(|| sample_class(&weights, &mut g));
        let seq = generate(model.as_ref(), &sched, Some(label), &cfg.policy, &mut g)?;
        let tokens: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
        w.write_record([i.to_string(), label.to_string(), tokens.join(" ")])?;
    }
    w.flush()?;
    drop(w);
    m.record("sequences.csv")?;
    write_schedule(m, "schedule.json", &sched)?;
    println!("wrote {count} sequences to {}", m.path("sequences.csv").display());
    Ok(())
}

fn read_sequences(path: &Path) -> Result<Vec<Vec<usize>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let tokens = rec.get(2).ok_or_else(|| Error::Config(format!("{}: missing tokens column", path.display())))?;
        let seq = tokens
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Config(format!("{}: bad token '{t}': {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        out.push(seq);
    }
    Ok(out)
}

fn cmd_eval(
    cfg: &RunConfig,
    m: &mut RunManifest,
    schedule: Option<&Path>,
    checkpoint: Option<&Path>,
    oracle: bool,
    sequences: Option<&Path>,
) -> Result<()> {
    let t = &cfg.toyworld;
    let chain = make_chain(t.k, t.n, t.c, t.chain_seed)?;
    let spec = cfg.eval_spec();
    let evaluator = Evaluator::new(chain, spec.clone())?;
    let (value, samples) = match sequences {
        Some(p) => {
            let seqs = read_sequences(p)?;
            (evaluator.score(&seqs)?, seqs.len())
        }
        None => {
            let sched = load_schedule(cfg, schedule)?;
            let model = predictor(cfg, checkpoint, oracle)?;
            write_schedule(m, "schedule.json", &sched)?;
            (evaluator.evaluate(model.as_ref(), &sched, &cfg.policy)?, spec.samples)
        }
    };
    let run_id = format!("seed{}", cfg.seed);
    append_metric_row(&m.path("metrics.csv"), &run_id, spec.metric, value, samples, spec.base_seed)?;
    m.record("metrics.csv")?;
    println!("{value:.12}");
    Ok(())
}

fn model_or_baseline(h: &ToyHarness, cfg: &RunConfig, m: &mut RunManifest, checkpoint: Option<&Path>) -> Result<TrainableModel> {
    match checkpoint {
        Some(p) => load_model(cfg, p),
        None => {
            let model = h.train(&cfg.baseline_dist, TrainBudget::Full)?;
            model.save(&m.path("checkpoint.bin"))?;
            m.record("checkpoint.bin")?;
            Ok(model)
        }
    }
}

fn cmd_optimize_gen(cfg: &RunConfig, m: &mut RunManifest, schedule: Option<&Path>, checkpoint: Option<&Path>) -> Result<()> {
    let start = load_schedule(cfg, schedule)?;
    let h = ToyHarness::from_config(cfg)?;
    let model = model_or_baseline(&h, cfg, m, checkpoint)?;
    let result = optimize_schedule_for(&h, cfg, &model, &start)?;
    write_schedule(m, "schedule.json", &result.best)?;
    result.trace.write_csv(&m.path("trace.csv"))?;
    m.record("trace.csv")?;
    println!("F {:.6} -> {:.6} in {} evaluations", result.initial_f, result.best_f, result.evaluations);
    Ok(())
}

fn cmd_optimize_train(cfg: &RunConfig, m: &mut RunManifest, schedule: Option<&Path>) -> Result<()> {
    let sched = load_schedule(cfg, schedule)?;
    let h = ToyHarness::from_config(cfg)?;
    let result = optimize_strategy_for(&h, cfg, &sched)?;
    m.note(format!(
        "candidates trained for {} of {} steps",
        h.budget_config(TrainBudget::Candidate).steps,
        h.train_cfg.steps
    ));
    write_json(m, "strategy.json", &MaskRatioDist::from(result.best))?;
    result.write_csv(&m.path("line_search.csv"))?;
    m.record("line_search.csv")?;
    println!(
        "best Beta({}, {}) with F {:.6} after {} candidates",
        result.best.alpha,
        result.best.beta,
        result.best_f,
        result.evaluations.len()
    );
    Ok(())
}

fn save_state(m: &mut RunManifest, state: &AutoNatState<TrainableModel>) -> Result<()> {
    write_json(m, STATE_FILE, state)
}

fn drive_autonat(
    h: &ToyHarness,
    cfg: &RunConfig,
    m: &mut RunManifest,
    mut state: AutoNatState<TrainableModel>,
    mut budget: Option<usize>,
) -> Result<()> {
    let cfgs = cfg.optimizer_configs();
    while state.phase != Phase::Finished {
        if budget == Some(0) {
            println!("stopped at alternation {} ({:?}); resume with --resume {}", state.alternation, state.phase, m.dir().display());
            return Ok(());
        }
        state = autonat_advance(h, state, &cfgs)?;
        save_state(m, &state)?;
        budget = budget.map(|b| b - 1);
    }
    write_schedule(m, "schedule.json", &state.best.schedule)?;
    write_json(m, "strategy.json", &state.best.dist)?;
    state.best.model.save(&m.path("checkpoint.bin"))?;
    m.record("checkpoint.bin")?;
    let traces: Vec<_> = state.gen_results.iter().map(|g| g.trace.clone()).collect();
    write_trace_csv(&m.path("trace.csv"), &traces)?;
    m.record("trace.csv")?;
    for (i, ls) in state.line_searches.iter().enumerate() {
        let name = format!("line_search_{}.csv", i + 1);
        ls.write_csv(&m.path(&name))?;
        m.record(&name)?;
    }
    let report = iterations_report(&state);
    for name in report.write(m.dir(), "alternations")? {
        m.record(&name)?;
    }
    println!("{}", report.to_markdown());
    println!("baseline F {:.6}, final F {:.6}, training runs {}", state.baseline_f, state.best.f, state.training_runs);
    Ok(())
}

fn cmd_autonat(cfg: &RunConfig, m: &mut RunManifest, max_phases: Option<usize>) -> Result<()> {
    write_json(m, CONFIG_FILE, cfg)?;
    m.note(format!("line-search candidates trained at {} of full budget", cfg.line_search.candidate_budget));
    let h = ToyHarness::from_config(cfg)?;
    if max_phases == Some(0) {
        return Ok(());
    }
    let schedule = heuristic_schedule(cfg.steps, cfg.toyworld.n, cfg.heuristic)?;
    let state = autonat_init(&h, &schedule, cfg.baseline_dist)?;
    save_state(m, &state)?;
    drive_autonat(&h, cfg, m, state, max_phases.map(|p| p - 1))
}

fn cmd_autonat_resume(dir: &Path, max_phases: Option<usize>) -> Result<()> {
    let cfg: RunConfig = read_json(&dir.join(CONFIG_FILE))?;
    cfg.validate()?;
    let mut m = RunManifest::load(dir).map_err(|e| Error::Config(format!("{}: not a run directory: {e}", dir.display())))?;
    m.note("resumed");
    let h = ToyHarness::from_config(&cfg)?;
    let state: Option<AutoNatState<TrainableModel>> =
        if dir.join(STATE_FILE).exists() { Some(read_json(&dir.join(STATE_FILE))?) } else { None };
    let result = match state {
        Some(s) => drive_autonat(&h, &cfg, &mut m, s, max_phases),
        None => {
            let schedule = heuristic_schedule(cfg.steps, cfg.toyworld.n, cfg.heuristic)?;
            autonat_init(&h, &schedule, cfg.baseline_dist).and_then(|s| {
                save_state(&mut m, &s)?;
                drive_autonat(&h, &cfg, &mut m, s, max_phases.map(|p| p.saturating_sub(1)))
            })
        }
    };
    m.finish(if result.is_ok() { RunStatus::Completed } else { RunStatus::Failed })?;
    result
}

fn cmd_reproduce(cfg: &RunConfig, m: &mut RunManifest, suite: &str) -> Result<()> {
    let suite: Suite = suite.parse()?;
    let h = ToyHarness::from_config(cfg)?;
    let report = run_suite(&h, cfg, suite)?;
    for name in report.write(m.dir(), suite.name())? {
        m.record(&name)?;
    }
    println!("{}", report.to_markdown());
    Ok(())
}
