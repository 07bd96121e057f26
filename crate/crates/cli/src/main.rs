use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ssdp_core::backends::synthetic::{PlantedPathProblem, SyntheticBackend, SyntheticCosts};
use ssdp_core::backends::{Backends, GeneratorBackend};
use ssdp_core::harness::sweep::default_grid;
use ssdp_core::harness::{
    self, node_diagnostics, read_trace, replay_trace, run_experiment, tau_sweep, ExperimentSpec,
    Suite,
};
use ssdp_core::{run_strategy, ClockMode, MergeMode, StrategyId};

#[derive(Parser)]
#[command(name = "ssdp", version, about = "Tree-of-thought search with semantic sibling merging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one search on one problem and print its metrics.
    Run {
        #[command(flatten)]
        spec: SpecArgs,
        /// Problem seed (synthetic) or dataset index (http); defaults to the first.
        #[arg(long)]
        problem: Option<u64>,
        /// Write the run's JSONL trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run every problem and repetition of an experiment spec.
    Experiment {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Repeat an experiment over a grid of tau values.
    Sweep {
        #[command(flatten)]
        spec: SpecArgs,
        /// Comma-separated tau values; defaults to 0.00..=1.00 step 0.05.
        #[arg(long, value_delimiter = ',')]
        taus: Vec<f64>,
    },
    /// Tabulate mean nodes generated and explored from trace files.
    Diagnose {
        /// Trace files or directories containing `.jsonl` traces.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Rebuild a tree from a trace and check its counters.
    Replay { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Ssdp,
    ParallelNoMerge,
    Mcts,
    BestOfN,
    Beam,
}

impl From<StrategyArg> for StrategyId {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Ssdp => StrategyId::Ssdp,
            StrategyArg::ParallelNoMerge => StrategyId::ParallelNoMerge,
            StrategyArg::Mcts => StrategyId::Mcts,
            StrategyArg::BestOfN => StrategyId::BestOfN,
            StrategyArg::Beam => StrategyId::Beam,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MergeArg {
    OptionA,
    OptionB,
    Disabled,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    Simulated,
    Real,
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment spec (TOML). Without one, a single default synthetic problem is used.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    lambda_es: Option<f64>,
    #[arg(long)]
    lambda_ds: Option<f64>,
    #[arg(long)]
    t_star: Option<usize>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    r_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    merge_mode: Option<MergeArg>,
    #[arg(long, value_enum)]
    clock: Option<ClockArg>,
    #[arg(long)]
    bon_n: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
}

impl SpecArgs {
    fn load(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::load(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentSpec {
                strategy: StrategyId::Ssdp,
                config: Default::default(),
                suite: Suite::Synthetic {
                    seeds: vec![0],
                    problem: PlantedPathProblem::default(),
                    costs: SyntheticCosts::default(),
                },
                repetitions: 1,
                output_dir: PathBuf::from("results"),
                write_traces: true,
            },
        };
        let c = &mut spec.config;
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        apply!(tau, b, k, w, p, lambda_es, lambda_ds, t_star, t_max, r_max, seed, bon_n, beam_width, max_depth);
        if let Some(m) = self.merge_mode {
            c.merge_mode = match m {
                MergeArg::OptionA => MergeMode::OptionA,
                MergeArg::OptionB => MergeMode::OptionB,
                MergeArg::Disabled => MergeMode::Disabled,
            };
        }
        if let Some(clock) = self.clock {
            c.clock_mode = match clock {
                ClockArg::Simulated => ClockMode::Simulated,
                ClockArg::Real => ClockMode::Real,
            };
        }
        if let Some(s) = self.strategy {
            spec.strategy = s.into();
        }
        if let Some(r) = self.repetitions {
            spec.repetitions = r;
        }
        if let Some(dir) = &self.output_dir {
            spec.output_dir = dir.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn single_run(spec: &ExperimentSpec, problem: Option<u64>, trace: Option<&Path>) -> Result<()> {
    let Suite::Synthetic {
        seeds,
        problem: template,
        costs,
    } = &spec.suite
    else {
        return http_single_run(spec, problem, trace);
    };
    let seed = problem.unwrap_or(seeds[0]);
    let backend = SyntheticBackend::with_costs(
        PlantedPathProblem {
            seed,
            ..template.clone()
        },
        *costs,
    )?;
    let outcome = run_strategy(
        spec.strategy,
        &backend.statement(),
        &spec.config,
        &Backends::uniform(&backend),
    )?;
    let correct = outcome
        .metrics
        .answer
        .as_deref()
        .is_some_and(|a| backend.answer_matches(a, &backend.expected_answer()));
    print_metrics(&outcome.metrics, Some(correct));
    if let Some(path) = trace {
        harness::write_trace(path, &outcome.trace)?;
    }
    Ok(())
}

fn http_single_run(spec: &ExperimentSpec, problem: Option<u64>, trace: Option<&Path>) -> Result<()> {
    let Suite::Http { dataset, .. } = &spec.suite else {
        unreachable!("synthetic suites are handled by the caller")
    };
    let index = problem.unwrap_or(0) as usize;
    let items = harness::load_dataset(dataset)?;
    if index >= items.len() {
        bail!("dataset has {} items, no index {index}", items.len());
    }
    let one = ExperimentSpec {
        repetitions: 1,
        ..spec.clone()
    };
    let records = harness::execute(&one)?;
    let record = &records[index];
    print_metrics(&record.metrics, Some(record.row.accuracy == 1.0));
    if let Some(path) = trace {
        harness::write_trace(path, &record.trace)?;
    }
    Ok(())
}

fn print_metrics(m: &ssdp_core::RunMetrics, correct: Option<bool>) {
    println!("strategy         {}", m.strategy);
    println!("halt             {:?}", m.halt);
    println!("answer           {}", m.answer.as_deref().unwrap_or("-"));
    if let Some(phi) = m.answer_phi {
        println!("answer phi       {phi:.4}");
    }
    if let Some(c) = correct {
        println!("correct          {c}");
    }
    println!("time_s           {:.3}", m.wall_time_s);
    println!("nodes generated  {}", m.nodes_generated);
    println!("nodes explored   {}", m.nodes_explored);
    println!("nodes merged     {}", m.nodes_merged);
    println!("nodes pruned     {}", m.nodes_pruned);
    println!("rollouts         {}", m.rollouts_completed);
    println!("solutions        {}", m.solutions.len());
}

fn trace_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { spec, problem, trace } => single_run(&spec.load()?, problem, trace.as_deref())?,
        Command::Experiment { spec } => {
            let spec = spec.load()?;
            let report = run_experiment(&spec)?;
            print!("{}", report.render());
            println!("summary written to {}", report.summary_path.display());
        }
        Command::Sweep { spec, taus } => {
            let spec = spec.load()?;
            let taus = if taus.is_empty() { default_grid() } else { taus };
            let report = tau_sweep(&spec, &taus)?;
            print!("{}", report.render());
        }
        Command::Diagnose { paths } => {
            let traces = trace_files(&paths)?
                .iter()
                .map(|f| read_trace(f).with_context(|| format!("reading {}", f.display())))
                .collect::<Result<Vec<_>>>()?;
            print!("{}", node_diagnostics(&traces)?.render());
        }
        Command::Replay { path } => {
            let replay = replay_trace(&path).with_context(|| format!("replaying {}", path.display()))?;
            let c = replay.counters;
            println!("run              {}", replay.header.run_id);
            println!("strategy         {}", replay.header.strategy);
            println!("nodes            {}", replay.tree.len());
            println!("nodes generated  {}", c.nodes_generated);
            println!("nodes explored   {}", c.nodes_explored);
            println!("nodes merged     {}", c.nodes_merged);
            println!("rollouts         {}", c.rollouts);
            println!("counters match the recorded Halt event");
        }
    }
    Ok(())
}
