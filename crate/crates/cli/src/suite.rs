//! Multi-seed suite execution and aggregation.
//!
//! A suite is a cross-product of graphs, strategies, and seeds over one set
//! of base settings. Runs execute in parallel, each into its own directory
//! named by graph, strategy, seed, and a configuration hash; a directory
//! whose hash and completion marker match is skipped, so rerunning an
//! interrupted suite resumes where it stopped. Failures are recorded per
//! run without aborting the rest.
//!
//! Aggregation is a pure function of what sits on disk: it collects every
//! finished run under `runs/`, groups by graph and strategy, and writes the
//! summary tables (`aushd_table.csv`, `shd_table.csv`, `eaushd_table.csv`,
//! `targets_histogram.csv`) with `mean (low, high)` bootstrap cells, so the
//! same code path serves both a fresh suite and re-evaluation of old runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use causalprobe_core::metrics::{aushd, bootstrap_ci, eaushd, RunRecord};
use causalprobe_core::online::{run_online, run_preinit_probe, OnlineOutcome, Strategy};
use causalprobe_core::targeting::StrategyKind;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{write_config, ExperimentConfig, GraphSource};
use crate::files;
use crate::{Error, Result};

/// Cross-product description: empty lists fall back to the base config's
/// own graph, strategy, or seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SuiteConfig {
    pub base: ExperimentConfig,
    #[serde(default)]
    pub graphs: Vec<GraphSource>,
    #[serde(default)]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "d_level")]
    pub bootstrap_level: f64,
    #[serde(default = "d_resamples")]
    pub bootstrap_resamples: usize,
}

fn d_level() -> f64 {
    0.9
}

fn d_resamples() -> usize {
    10_000
}

impl SuiteConfig {
    pub fn new(base: ExperimentConfig) -> Self {
        SuiteConfig {
            base,
            graphs: Vec::new(),
            strategies: Vec::new(),
            seeds: Vec::new(),
            bootstrap_level: d_level(),
            bootstrap_resamples: d_resamples(),
        }
    }

    /// Expands the cross-product into per-run configs.
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let graphs: Vec<GraphSource> = if self.graphs.is_empty() {
            vec![self.base.graph.clone()]
        } else {
            self.graphs.clone()
        };
        let strategies: Vec<Strategy> = if self.strategies.is_empty() {
            vec![self.base.strategy]
        } else {
            self.strategies.clone()
        };
        let seeds: Vec<u64> = if self.seeds.is_empty() {
            vec![self.base.seed]
        } else {
            self.seeds.clone()
        };
        let mut out = Vec::with_capacity(graphs.len() * strategies.len() * seeds.len());
        for graph in &graphs {
            for strategy in &strategies {
                for &seed in &seeds {
                    let mut config = self.base.clone();
                    config.graph = graph.clone();
                    config.strategy = *strategy;
                    config.seed = seed;
                    out.push(config);
                }
            }
        }
        out
    }
}

pub fn read_suite(path: &Path) -> Result<SuiteConfig> {
    let suite: SuiteConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
    suite.base.validate()?;
    Ok(suite)
}

/// `<graph>-<strategy>-s<seed>-<confighash>`; unique per (config, seed).
pub fn run_dir_name(config: &ExperimentConfig) -> String {
    format!(
        "{}-{}-s{}-{}",
        config.graph.label(),
        config.strategy_name(),
        config.seed,
        config.hash()
    )
}

/// Executes one run into `dir`, persisting the ground truth, the log, and
/// the final belief and model checkpoints. With `probe_free_node` set, the
/// belief starts from the ground truth clamped everywhere away from that
/// node. Returns the finished record.
pub fn execute_run(
    config: &ExperimentConfig,
    dir: &Path,
    probe_free_node: Option<usize>,
) -> Result<RunRecord> {
    let (scm, names) = config.build_system()?;
    fs::create_dir_all(dir)?;
    write_config(&dir.join("config.json"), config)?;
    files::write_scm(&dir.join("scm.json"), &scm)?;
    files::write_dag_json(&dir.join("graph.json"), scm.dag())?;
    fs::write(dir.join("graph.txt"), files::edge_list_text(scm.dag()))?;
    fs::write(dir.join("names.txt"), names.join("\n") + "\n")?;

    let online = config.to_online();
    let OnlineOutcome {
        record,
        belief,
        models,
    } = match probe_free_node {
        Some(node) => run_preinit_probe(&scm, &online, node)?,
        None => run_online(&scm, &online)?,
    };

    files::write_belief(&dir.join("belief.json"), &belief)?;
    files::write_models(&dir.join("models.bin"), &models)?;
    let learned = belief.extract_graph();
    files::write_dag_json(&dir.join("learned.json"), &learned)?;
    fs::write(dir.join("learned.txt"), files::edge_list_text(&learned))?;
    // The run log is written last: its presence marks the run complete.
    files::write_run_csv(&dir.join("run.csv"), &record, scm.n())?;
    Ok(record)
}

/// True when `dir` already holds a finished run of exactly this config.
fn is_complete(config: &ExperimentConfig, dir: &Path) -> bool {
    if !dir.join("run.csv").exists() {
        return false;
    }
    match crate::config::read_config(&dir.join("config.json")) {
        Ok(existing) => existing.hash() == config.hash() && existing.seed == config.seed,
        Err(_) => false,
    }
}

#[derive(Debug, Default)]
pub struct SuiteReport {
    pub executed: usize,
    pub skipped: usize,
    /// `(run directory name, error)` for runs that failed.
    pub failures: Vec<(String, String)>,
}

/// Runs the whole cross-product under `out_root`, resuming past work, then
/// aggregates the summary tables from everything on disk.
pub fn run_suite(suite: &SuiteConfig, out_root: &Path) -> Result<SuiteReport> {
    let runs_root = out_root.join("runs");
    fs::create_dir_all(&runs_root)?;
    fs::write(
        out_root.join("suite.json"),
        serde_json::to_string_pretty(suite)? + "\n",
    )?;

    let configs = suite.expand();
    let mut pending = Vec::new();
    let mut skipped = 0usize;
    for config in configs {
        let dir = runs_root.join(run_dir_name(&config));
        if is_complete(&config, &dir) {
            skipped += 1;
        } else {
            pending.push((config, dir));
        }
    }

    let failures = Mutex::new(Vec::new());
    let executed = pending.len();
    pending.into_par_iter().for_each(|(config, dir)| {
        if let Err(e) = execute_run(&config, &dir, None) {
            let name = dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            failures.lock().unwrap().push((name, e.to_string()));
        }
    });
    let mut failures = failures.into_inner().unwrap();
    failures.sort();

    files::write_table_csv(
        &out_root.join("failures.csv"),
        &["run".into(), "error".into()],
        &failures
            .iter()
            .map(|(run, error)| vec![run.clone(), error.clone()])
            .collect::<Vec<_>>(),
    )?;

    let runs = collect_runs(out_root)?;
    write_tables(
        out_root,
        &runs,
        suite.bootstrap_level,
        suite.bootstrap_resamples,
    )?;

    Ok(SuiteReport {
        executed: executed - failures.len(),
        skipped,
        failures,
    })
}

/// One finished run as the aggregator sees it.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub graph: String,
    pub method: StrategyKind,
    pub seed: u64,
    pub record: RunRecord,
    pub nodes: usize,
}

/// Loads every finished run under `<root>/runs`.
pub fn collect_runs(root: &Path) -> Result<Vec<RunSummary>> {
    let runs_root = root.join("runs");
    let mut out = Vec::new();
    if !runs_root.exists() {
        return Ok(out);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(&runs_root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let run_csv = dir.join("run.csv");
        if !run_csv.exists() {
            continue; // failed or in-flight run
        }
        let config = crate::config::read_config(&dir.join("config.json"))?;
        let record = files::read_run_csv(&run_csv)?;
        let nodes = record
            .rounds
            .first()
            .map(|r| r.scores.scores.len())
            .unwrap_or(0);
        out.push(RunSummary {
            graph: config.graph.label(),
            method: record.method,
            seed: record.seed,
            record,
            nodes,
        });
    }
    Ok(out)
}

/// `mean (low, high)` cell; a single sample prints bare, since an interval
/// from one value would be noise dressed up as precision.
fn cell(values: &[f64], level: f64, resamples: usize, tag: &str) -> Result<String> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return Ok(format!("{mean:.3}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(table_seed(tag));
    let (lo, hi) = bootstrap_ci(values, level, resamples, &mut rng)?;
    Ok(format!("{mean:.3} ({lo:.3}, {hi:.3})"))
}

/// Deterministic per-cell seed so re-evaluating a directory reproduces the
/// tables bit for bit.
fn table_seed(tag: &str) -> u64 {
    let digest = Sha256::digest(tag.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Parses a `mean (low, high)` cell back into numbers.
pub fn parse_mean_ci(cell: &str) -> Option<(f64, Option<(f64, f64)>)> {
    let cell = cell.trim();
    match cell.split_once('(') {
        None => cell.parse().ok().map(|m| (m, None)),
        Some((mean, rest)) => {
            let mean: f64 = mean.trim().parse().ok()?;
            let (lo, hi) = rest.strip_suffix(')')?.split_once(',')?;
            Some((mean, Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?))))
        }
    }
}

/// Writes the four aggregate tables for all collected runs.
pub fn write_tables(
    root: &Path,
    runs: &[RunSummary],
    level: f64,
    resamples: usize,
) -> Result<()> {
    let mut graphs: Vec<String> = runs.iter().map(|r| r.graph.clone()).collect();
    graphs.sort();
    graphs.dedup();
    let methods: Vec<StrategyKind> = StrategyKind::ALL
        .into_iter()
        .filter(|m| runs.iter().any(|r| r.method == *m))
        .collect();

    let group = |graph: &str, method: StrategyKind| -> Vec<&RunSummary> {
        runs.iter()
            .filter(|r| r.graph == graph && r.method == method)
            .collect()
    };
    let aushd_values = |rs: &[&RunSummary]| -> Result<Vec<f64>> {
        rs.iter()
            .map(|r| {
                let series = r.record.shd_series();
                Ok(aushd(&series, series.len())?)
            })
            .collect()
    };

    let mut header = vec!["graph".to_string()];
    header.extend(methods.iter().map(|m| m.name().to_string()));

    let mut aushd_rows = Vec::new();
    let mut shd_rows = Vec::new();
    let mut eaushd_rows = Vec::new();
    for graph in &graphs {
        let baseline: Option<Vec<f64>> = {
            let rs = group(graph, StrategyKind::Random);
            if rs.is_empty() {
                None
            } else {
                Some(aushd_values(&rs)?)
            }
        };
        let mut aushd_row = vec![graph.clone()];
        let mut shd_row = vec![graph.clone()];
        let mut eaushd_row = vec![graph.clone()];
        for &method in &methods {
            let rs = group(graph, method);
            if rs.is_empty() {
                aushd_row.push(String::new());
                shd_row.push(String::new());
                eaushd_row.push(String::new());
                continue;
            }
            let aushds = aushd_values(&rs)?;
            let finals: Vec<f64> = rs.iter().map(|r| r.record.final_shd() as f64).collect();
            aushd_row.push(cell(
                &aushds,
                level,
                resamples,
                &format!("aushd/{graph}/{method}"),
            )?);
            shd_row.push(cell(
                &finals,
                level,
                resamples,
                &format!("shd/{graph}/{method}"),
            )?);
            match &baseline {
                Some(base) => {
                    let values: Result<Vec<f64>> = aushds
                        .iter()
                        .map(|&a| Ok(eaushd(a, base)?))
                        .collect();
                    eaushd_row.push(cell(
                        &values?,
                        level,
                        resamples,
                        &format!("eaushd/{graph}/{method}"),
                    )?);
                }
                None => eaushd_row.push(String::new()),
            }
        }
        aushd_rows.push(aushd_row);
        shd_rows.push(shd_row);
        eaushd_rows.push(eaushd_row);
    }

    files::write_table_csv(&root.join("aushd_table.csv"), &header, &aushd_rows)?;
    files::write_table_csv(&root.join("shd_table.csv"), &header, &shd_rows)?;
    files::write_table_csv(&root.join("eaushd_table.csv"), &header, &eaushd_rows)?;

    let mut hist_rows = Vec::new();
    for graph in &graphs {
        for &method in &methods {
            let rs = group(graph, method);
            if rs.is_empty() {
                continue;
            }
            let n = rs.iter().map(|r| r.nodes).max().unwrap_or(0);
            let mut counts = vec![0u64; n];
            for r in &rs {
                for (node, c) in r.record.target_histogram(n).into_iter().enumerate() {
                    counts[node] += c;
                }
            }
            for (node, count) in counts.into_iter().enumerate() {
                hist_rows.push(vec![
                    graph.clone(),
                    method.name().to_string(),
                    node.to_string(),
                    count.to_string(),
                ]);
            }
        }
    }
    files::write_table_csv(
        &root.join("targets_histogram.csv"),
        &[
            "graph".into(),
            "method".into(),
            "node".into(),
            "count".into(),
        ],
        &hist_rows,
    )?;
    Ok(())
}

/// Re-aggregates an existing output directory without running anything.
pub fn evaluate(root: &Path, level: f64, resamples: usize) -> Result<usize> {
    let runs = collect_runs(root)?;
    if runs.is_empty() {
        return Err(Error::Format(format!(
            "no finished runs under {}",
            root.join("runs").display()
        )));
    }
    write_tables(root, &runs, level, resamples)?;
    Ok(runs.len())
}
