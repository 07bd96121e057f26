//! Seeded experiment runs, summaries and reports.
//!
//! An [`ExperimentSpec`] is a TOML document:
//!
//! ```toml
//! strategy = "ssdp"
//! repetitions = 3
//! output_dir = "results"
//!
//! [config]
//! tau = 0.75
//! r_max = 20
//!
//! [suite]
//! kind = "synthetic"
//! seeds = [1, 2, 3]
//!
//! [suite.problem]
//! dup_rate = 4
//! ```
//!
//! An HTTP suite instead names a JSON dataset of `{question, answer}` items:
//!
//! ```toml
//! [suite]
//! kind = "http"
//! dataset = "gsm8k.json"
//!
//! [suite.http]
//! base_url = "http://localhost:8000"
//! reward_url = "http://localhost:8001/score"
//! ```

pub mod diagnostics;
pub mod sweep;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::http::{HttpConfig, HttpEmbedder, HttpGenerator, HttpReward, JsonClient};
use crate::backends::synthetic::{PlantedPathProblem, SyntheticBackend, SyntheticCosts};
use crate::backends::{Backends, GeneratorBackend};
use crate::baselines::{run_strategy, StrategyId};
use crate::config::{ClockMode, Config};
use crate::error::{Error, Result};
use crate::search::{RunMetrics, SearchOutcome};
use crate::seed;
use crate::trace::{replay_reader, Replay, Trace};

pub use diagnostics::{node_diagnostics, NodeTable, StrategyNodes};
pub use sweep::{pareto_front, tau_sweep, SweepReport, SweepRow};

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Suite {
    Synthetic {
        seeds: Vec<u64>,
        /// Template for every problem; its `seed` is replaced per problem.
        #[serde(default)]
        problem: PlantedPathProblem,
        #[serde(default)]
        costs: SyntheticCosts,
    },
    Http {
        dataset: PathBuf,
        #[serde(default)]
        http: HttpConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub strategy: StrategyId,
    #[serde(default)]
    pub config: Config,
    pub suite: Suite,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "yes")]
    pub write_traces: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.repetitions == 0 {
            return Err(Error::InvalidInput("repetitions must be >= 1".into()));
        }
        if let Suite::Synthetic { seeds, .. } = &self.suite {
            if seeds.is_empty() {
                return Err(Error::InvalidInput("synthetic suite has no seeds".into()));
            }
            let distinct: BTreeSet<_> = seeds.iter().collect();
            if distinct.len() != seeds.len() {
                return Err(Error::InvalidInput("suite seeds must be distinct".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DatasetItem {
    pub question: String,
    pub answer: String,
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

/// One line of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub strategy: StrategyId,
    pub tau: f64,
    /// Problem seed for synthetic suites, dataset index for HTTP suites.
    pub seed: u64,
    pub repetition: usize,
    pub clock: ClockMode,
    /// 1 when the run's answer is correct, else 0.
    pub accuracy: f64,
    pub wall_time_s: f64,
    pub nodes_generated: usize,
    pub nodes_explored: usize,
    pub nodes_merged: usize,
    pub rollouts: usize,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub row: RunRow,
    pub metrics: RunMetrics,
    pub trace: Trace,
    pub file_stem: String,
}

/// Seed for repetition `repetition` of the problem with seed `problem_seed`.
pub fn run_seed(base: u64, problem_seed: u64, repetition: usize) -> u64 {
    seed::mix(base, seed::mix(problem_seed, repetition as u64))
}

struct HttpBundle {
    generator: HttpGenerator,
    reward: HttpReward,
    embedder: HttpEmbedder,
}

impl HttpBundle {
    fn new(config: &HttpConfig) -> Result<Self> {
        let url = config
            .reward_url
            .clone()
            .ok_or_else(|| Error::Config("http suite needs suite.http.reward_url".into()))?;
        let client = Arc::new(JsonClient::from_config(config)?);
        Ok(Self {
            generator: HttpGenerator::new(config, client.clone()),
            reward: HttpReward::new(url, client.clone()),
            embedder: HttpEmbedder::new(config, client),
        })
    }

    fn backends(&self) -> Backends<'_> {
        Backends {
            generator: &self.generator,
            reward: &self.reward,
            embedder: &self.embedder,
        }
    }
}

fn record(
    strategy: StrategyId,
    config: &Config,
    seed: u64,
    repetition: usize,
    outcome: SearchOutcome,
    correct: bool,
) -> RunRecord {
    let m = &outcome.metrics;
    let row = RunRow {
        strategy,
        tau: config.tau,
        seed,
        repetition,
        clock: config.clock_mode,
        accuracy: if correct { 1.0 } else { 0.0 },
        wall_time_s: m.wall_time_s,
        nodes_generated: m.nodes_generated,
        nodes_explored: m.nodes_explored,
        nodes_merged: m.nodes_merged,
        rollouts: m.rollouts_completed,
    };
    RunRecord {
        row,
        file_stem: format!("{}_p{}_r{}", strategy.name(), seed, repetition),
        metrics: outcome.metrics,
        trace: outcome.trace,
    }
}

struct Job<'a> {
    problem: &'a str,
    expected: &'a str,
    seed: u64,
    repetition: usize,
}

fn run_one(
    strategy: StrategyId,
    config: &Config,
    job: Job<'_>,
    backends: &Backends<'_>,
    generator: &dyn GeneratorBackend,
) -> Result<RunRecord> {
    let config = Config {
        seed: run_seed(config.seed, job.seed, job.repetition),
        ..config.clone()
    };
    let outcome = run_strategy(strategy, job.problem, &config, backends).map_err(|f| f.error)?;
    let correct = outcome
        .metrics
        .answer
        .as_deref()
        .is_some_and(|a| generator.answer_matches(a, job.expected));
    Ok(record(strategy, &config, job.seed, job.repetition, outcome, correct))
}

/// Run every (problem, repetition) pair in memory, in suite order.
pub fn execute(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let reps = spec.repetitions;
    match &spec.suite {
        Suite::Synthetic {
            seeds,
            problem,
            costs,
        } => {
            let jobs: Vec<(u64, usize)> = seeds
                .iter()
                .flat_map(|&s| (0..reps).map(move |r| (s, r)))
                .collect();
            jobs.par_iter()
                .map(|&(s, r)| {
                    let backend = SyntheticBackend::with_costs(
                        PlantedPathProblem {
                            seed: s,
                            ..problem.clone()
                        },
                        *costs,
                    )?;
                    let (problem, expected) = (backend.statement(), backend.expected_answer());
                    let job = Job {
                        problem: &problem,
                        expected: &expected,
                        seed: s,
                        repetition: r,
                    };
                    run_one(spec.strategy, &spec.config, job, &Backends::uniform(&backend), &backend)
                })
                .collect()
        }
        Suite::Http { dataset, http } => {
            let items = load_dataset(dataset)?;
            let bundle = HttpBundle::new(http)?;
            let jobs: Vec<(usize, usize)> = (0..items.len())
                .flat_map(|i| (0..reps).map(move |r| (i, r)))
                .collect();
            jobs.par_iter()
                .map(|&(i, r)| {
                    let backends = bundle.backends();
                    let job = Job {
                        problem: &items[i].question,
                        expected: &items[i].answer,
                        seed: i as u64,
                        repetition: r,
                    };
                    run_one(spec.strategy, &spec.config, job, &backends, &bundle.generator)
                })
                .collect()
        }
    }
}

/// Fail early if `dir` cannot be created or written.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        out.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

pub fn read_csv_rows(path: &Path) -> Result<Vec<RunRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Per-strategy means over an experiment's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub strategy: StrategyId,
    pub runs: usize,
    pub accuracy: f64,
    pub wall_time_s: f64,
    pub nodes_generated: f64,
    pub nodes_explored: f64,
    pub nodes_merged: f64,
    pub rollouts: f64,
}

pub fn aggregate(rows: &[RunRow]) -> Vec<Aggregate> {
    let strategies: BTreeSet<StrategyId> = rows.iter().map(|r| r.strategy).collect();
    strategies
        .into_iter()
        .map(|strategy| {
            let mine: Vec<&RunRow> = rows.iter().filter(|r| r.strategy == strategy).collect();
            let n = mine.len() as f64;
            let mean = |f: &dyn Fn(&RunRow) -> f64| mine.iter().map(|r| f(r)).sum::<f64>() / n;
            Aggregate {
                strategy,
                runs: mine.len(),
                accuracy: mean(&|r| r.accuracy),
                wall_time_s: mean(&|r| r.wall_time_s),
                nodes_generated: mean(&|r| r.nodes_generated as f64),
                nodes_explored: mean(&|r| r.nodes_explored as f64),
                nodes_merged: mean(&|r| r.nodes_merged as f64),
                rollouts: mean(&|r| r.rollouts as f64),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
    pub summary_path: PathBuf,
}

impl ExperimentReport {
    pub fn rows(&self) -> Vec<RunRow> {
        self.records.iter().map(|r| r.row.clone()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<18} {:>5} {:>9} {:>11} {:>10} {:>10} {:>9} {:>9}\n",
            "strategy", "runs", "accuracy", "time_s", "generated", "explored", "merged", "rollouts"
        );
        for a in &self.aggregates {
            out.push_str(&format!(
                "{:<18} {:>5} {:>9.4} {:>11.3} {:>10.2} {:>10.2} {:>9.2} {:>9.2}\n",
                a.strategy.name(),
                a.runs,
                a.accuracy,
                a.wall_time_s,
                a.nodes_generated,
                a.nodes_explored,
                a.nodes_merged,
                a.rollouts
            ));
        }
        out
    }
}

/// Run the spec, write one JSONL trace per run and the summary CSV.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    ensure_writable(&spec.output_dir)?;
    let records = execute(spec)?;
    if spec.write_traces {
        records
            .par_iter()
            .map(|r| write_trace(&spec.output_dir.join(format!("{}.jsonl", r.file_stem)), &r.trace))
            .collect::<Result<Vec<()>>>()?;
    }
    let rows: Vec<RunRow> = records.iter().map(|r| r.row.clone()).collect();
    let summary_path = spec.output_dir.join(SUMMARY_FILE);
    write_csv(&summary_path, &rows)?;
    Ok(ExperimentReport {
        aggregates: aggregate(&rows),
        records,
        summary_path,
    })
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    trace
        .write_jsonl(std::io::BufWriter::new(file))
        .map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Trace::read_jsonl(std::io::BufReader::new(file))
}

/// Rebuild the final tree recorded in a trace file.
pub fn replay_trace(path: &Path) -> Result<Replay> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    replay_reader(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dir: &Path) -> ExperimentSpec {
        ExperimentSpec {
            strategy: StrategyId::Ssdp,
            config: Config::default(),
            suite: Suite::Synthetic {
                seeds: vec![1, 2],
                problem: PlantedPathProblem {
                    depth: 3,
                    ..Default::default()
                },
                costs: SyntheticCosts::default(),
            },
            repetitions: 3,
            output_dir: dir.to_path_buf(),
            write_traces: true,
        }
    }

    #[test]
    fn spec_parses_from_toml() {
        let s = ExperimentSpec::from_toml(
            r#"
            strategy = "beam"
            repetitions = 2
            [config]
            tau = 0.9
            [suite]
            kind = "synthetic"
            seeds = [4, 5]
            [suite.problem]
            dup_rate = 4
            "#,
        )
        .unwrap();
        assert_eq!(s.strategy, StrategyId::Beam);
        assert_eq!(s.config.tau, 0.9);
        assert_eq!(s.config.b, 4);
        let Suite::Synthetic { seeds, problem, .. } = &s.suite else {
            panic!("expected synthetic suite")
        };
        assert_eq!(seeds, &[4, 5]);
        assert_eq!(problem.dup_rate, 4);
        assert_eq!(s.output_dir, PathBuf::from("results"));
        assert!(ExperimentSpec::from_toml("strategy = \"ssdp\"\nbogus = 1\n[suite]\nkind=\"synthetic\"\nseeds=[1]").is_err());
    }

    #[test]
    fn rejects_duplicate_seeds_and_zero_repetitions() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(dir.path());
        s.repetitions = 0;
        assert!(s.validate().is_err());
        let mut s = spec(dir.path());
        s.suite = Suite::Synthetic {
            seeds: vec![3, 3],
            problem: PlantedPathProblem::default(),
            costs: SyntheticCosts::default(),
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn writes_one_trace_per_run_and_a_summary() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&spec(dir.path())).unwrap();
        let traces = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "jsonl"))
            .count();
        assert_eq!(traces, 6);
        let rows = read_csv_rows(&report.summary_path).unwrap();
        assert_eq!(rows, report.rows());
        let header = fs::read_to_string(&report.summary_path).unwrap();
        assert!(header.starts_with(
            "strategy,tau,seed,repetition,clock,accuracy,wall_time_s,nodes_generated,nodes_explored,nodes_merged,rollouts\n"
        ));
    }

    #[test]
    fn aggregate_means_recompute_from_rows() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&spec(dir.path())).unwrap();
        let rows = report.rows();
        let a = &report.aggregates[0];
        let explored = rows.iter().map(|r| r.nodes_explored as f64).sum::<f64>() / rows.len() as f64;
        let time = rows.iter().map(|r| r.wall_time_s).sum::<f64>() / rows.len() as f64;
        assert!((a.nodes_explored - explored).abs() < 1e-9);
        assert!((a.wall_time_s - time).abs() < 1e-9);
        assert_eq!(a.runs, 6);
    }

    #[test]
    fn unwritable_output_dir_fails_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let s = spec(&blocker.join("sub"));
        assert!(matches!(run_experiment(&s), Err(Error::Io { .. })));
    }

    #[test]
    fn replayed_counters_match_every_run() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&spec(dir.path())).unwrap();
        for r in &report.records {
            let replay = replay_trace(&dir.path().join(format!("{}.jsonl", r.file_stem))).unwrap();
            assert_eq!(replay.counters, r.metrics.counters());
        }
    }
}
