//! Command-line driver: system generation, single runs, multi-seed suites,
//! table re-aggregation, network-file inspection, and the clamped-belief
//! probe.
//!
//! Every experiment flag mirrors a config-file field; a JSON config (when
//! given) supplies the baseline and flags override individual fields. The
//! output root comes from `--out` when present, else the `CAUSALPROBE_OUT`
//! environment variable, else `./out`.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use causalprobe_core::condmodel::ModelSpec;
use causalprobe_core::graph::GraphFamily;
use causalprobe_core::online::Strategy;
use causalprobe_core::rng::RngFactory;
use causalprobe_core::scm::{ancestral_sample, intervene_sample};
use causalprobe_core::targeting::{GitConfig, StrategyKind};
use clap::{Args, Parser, Subcommand};

use causalprobe::config::{read_config, ExperimentConfig, GraphSource};
use causalprobe::suite::{self, run_dir_name};
use causalprobe::{bif, files, Error, Result};

#[derive(Parser)]
#[command(
    name = "causalprobe",
    version,
    about = "Gradient-based causal structure discovery with active intervention targeting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a ground-truth system, and optionally datasets, to a directory.
    Generate {
        #[command(flatten)]
        overrides: Overrides,
        /// Observational rows to sample into obs.csv.
        #[arg(long)]
        obs: Option<usize>,
        /// Interventional rows per node, as `node=rows`; repeatable.
        #[arg(long = "int", value_name = "NODE=ROWS", value_parser = parse_node_rows)]
        int: Vec<(usize, usize)>,
        /// Output directory (default: `<root>/<graph label>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute one online discovery run.
    Run {
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory (default: a hash-named dir under the root).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a cross-product of graphs, strategies, and seeds.
    Suite {
        /// Suite description: a base config plus lists to cross.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: `<root>/suite`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Rebuild the aggregate tables from an existing output directory.
    Eval {
        dir: PathBuf,
        /// Bootstrap confidence level.
        #[arg(long, default_value_t = 0.9)]
        level: f64,
        /// Bootstrap resamples per interval.
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
    },
    /// Parse a Bayesian-network file and print a summary.
    ParseBif {
        file: PathBuf,
        /// Also write the parsed system as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run with the belief clamped to the truth everywhere except the pairs
    /// touching one node, and report where the interventions landed.
    Probe {
        #[command(flatten)]
        overrides: Overrides,
        /// The node whose surrounding structure stays learnable.
        #[arg(long)]
        free_node: usize,
        /// Output directory (default: a hash-named dir under the root).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Config-file fields exposed as flags; flags win over the file.
#[derive(Args)]
struct Overrides {
    /// JSON experiment config to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from desk-scale defaults instead of full-scale ones.
    #[arg(long, conflicts_with = "config")]
    desk: bool,
    /// Synthetic family: chain|bidiag|collider|jungle|full|random.
    #[arg(long)]
    family: Option<GraphFamily>,
    /// Node count for synthetic graphs.
    #[arg(long)]
    nodes: Option<usize>,
    /// Edge probability (random family only).
    #[arg(long)]
    edge_prob: Option<f64>,
    /// Bayesian-network file as ground truth.
    #[arg(long, conflicts_with_all = ["family", "nodes", "edge_prob", "scm"])]
    bif: Option<PathBuf>,
    /// Serialized SCM as ground truth.
    #[arg(long, conflicts_with_all = ["family", "nodes", "edge_prob"])]
    scm: Option<PathBuf>,
    /// Categories per node (synthetic systems).
    #[arg(long)]
    cardinality: Option<usize>,
    /// Dirichlet concentration for random CPT rows.
    #[arg(long)]
    concentration: Option<f64>,
    /// Minimum per-parent total-variation effect in random CPTs.
    #[arg(long)]
    min_effect: Option<f64>,
    /// Seed for ground-truth construction.
    #[arg(long)]
    graph_seed: Option<u64>,
    /// Observational sample size.
    #[arg(long)]
    obs_size: Option<usize>,
    /// Intervention rounds (T).
    #[arg(long)]
    rounds: Option<usize>,
    /// Interventional batch size per round.
    #[arg(long)]
    batch: Option<usize>,
    /// Conditional-model family: table|net.
    #[arg(long)]
    model: Option<String>,
    /// Category-embedding width (net model).
    #[arg(long)]
    embed: Option<usize>,
    /// Hidden-layer width (net model).
    #[arg(long)]
    hidden: Option<usize>,
    /// Strategy: git|git-privileged|epsilon-git|ait|cbed|random.
    #[arg(long)]
    strategy: Option<StrategyKind>,
    /// Exploration rate for epsilon-git.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Monte Carlo graphs per score (M).
    #[arg(long)]
    m_graphs: Option<usize>,
    /// Simulated samples per sampled graph (S).
    #[arg(long)]
    s_samples: Option<usize>,
    /// Score repetitions averaged per node (GIT family).
    #[arg(long)]
    score_reps: Option<usize>,
    /// Distribution-fitting iterations per epoch (F).
    #[arg(long)]
    dist_iters: Option<usize>,
    /// Graph-fitting iterations per epoch (G).
    #[arg(long)]
    graph_iters: Option<usize>,
    /// Graph samples per row in the structure-gradient estimator (K).
    #[arg(long)]
    reps: Option<usize>,
    /// Sparsity regularizer weight.
    #[arg(long)]
    lambda_sparse: Option<f64>,
    /// Minibatch size for distribution fitting.
    #[arg(long)]
    fit_batch: Option<usize>,
    #[arg(long)]
    lr_model: Option<f64>,
    #[arg(long)]
    lr_gamma: Option<f64>,
    #[arg(long)]
    lr_theta: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Graph samples per data row when masking the conditionals.
    #[arg(long)]
    masks_per_sample: Option<usize>,
    /// Alternating fit cycles per round.
    #[arg(long)]
    epochs: Option<usize>,
    /// Fit structure on the newest batch only instead of replaying all.
    #[arg(long)]
    latest_only: bool,
    /// Let distribution fitting also see interventional rows.
    #[arg(long)]
    mixed_fit: bool,
    /// Reinitialize conditional models every round.
    #[arg(long)]
    cold_start: bool,
    /// Also log ground-truth-scored GIT alongside the chosen strategy.
    #[arg(long)]
    shadow_privileged: bool,
    /// Run seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    /// Effective config: file (or defaults) → graph flags → field flags.
    fn resolve(&self) -> Result<ExperimentConfig> {
        let file = match &self.config {
            Some(path) => Some(read_config(path)?),
            None => None,
        };
        let graph = if let Some(path) = &self.bif {
            Some(GraphSource::Bif { path: path.clone() })
        } else if let Some(path) = &self.scm {
            Some(GraphSource::Scm { path: path.clone() })
        } else if self.family.is_some() || self.nodes.is_some() || self.edge_prob.is_some() {
            let (family, n, edge_prob) = match file.as_ref().map(|c| &c.graph) {
                Some(GraphSource::Synthetic {
                    family,
                    n,
                    edge_prob,
                }) => (*family, *n, *edge_prob),
                _ => (GraphFamily::Chain, 8, 0.3),
            };
            Some(GraphSource::Synthetic {
                family: self.family.unwrap_or(family),
                n: self.nodes.unwrap_or(n),
                edge_prob: self.edge_prob.unwrap_or(edge_prob),
            })
        } else {
            None
        };

        let mut config = match (file, graph) {
            (Some(mut config), graph) => {
                if let Some(graph) = graph {
                    config.graph = graph;
                }
                config
            }
            (None, Some(graph)) if self.desk => ExperimentConfig::desk(graph),
            (None, Some(graph)) => ExperimentConfig::new(graph),
            (None, None) => {
                return Err(Error::Format(
                    "no graph source: pass --config, --family, --bif, or --scm".into(),
                ))
            }
        };

        macro_rules! overlay {
            ($target:expr; $($field:ident),*) => {
                $(if let Some(v) = self.$field { $target.$field = v; })*
            };
        }
        overlay!(config; cardinality, concentration, min_effect, graph_seed,
                 obs_size, rounds, batch, epochs, seed);
        overlay!(config.enco; dist_iters, graph_iters, reps, lambda_sparse,
                 fit_batch, lr_model, lr_gamma, lr_theta, weight_decay,
                 masks_per_sample);
        config.latest_only |= self.latest_only;
        config.mixed_fit |= self.mixed_fit;
        config.cold_start |= self.cold_start;
        config.shadow_privileged |= self.shadow_privileged;

        if let Some(kind) = &self.model {
            config.model = match kind.as_str() {
                "table" => ModelSpec::Table,
                "net" => ModelSpec::Net {
                    embed: 8,
                    hidden: 64,
                },
                other => {
                    return Err(Error::Format(format!(
                        "unknown model '{other}' (expected table or net)"
                    )))
                }
            };
        }
        if self.embed.is_some() || self.hidden.is_some() {
            let (embed, hidden) = match config.model {
                ModelSpec::Net { embed, hidden } => (embed, hidden),
                ModelSpec::Table => (8, 64),
            };
            config.model = ModelSpec::Net {
                embed: self.embed.unwrap_or(embed),
                hidden: self.hidden.unwrap_or(hidden),
            };
        }

        if self.strategy.is_some()
            || self.epsilon.is_some()
            || self.m_graphs.is_some()
            || self.s_samples.is_some()
            || self.score_reps.is_some()
        {
            config.strategy = self.strategy_over(config.strategy);
        }
        config.validate()?;
        Ok(config)
    }

    /// Rebuilds the strategy, keeping whatever hyperparameters the current
    /// one already carries and the flags do not touch.
    fn strategy_over(&self, current: Strategy) -> Strategy {
        let kind = self.strategy.unwrap_or_else(|| current.kind());
        let mut git = match current {
            Strategy::Git(c) | Strategy::GitPrivileged(c) => c,
            Strategy::EpsilonGit { config, .. } => config,
            Strategy::Ait {
                m_graphs,
                s_samples,
            }
            | Strategy::Cbed {
                m_graphs,
                s_samples,
            } => GitConfig {
                m_graphs,
                s_samples,
                ..GitConfig::default()
            },
            Strategy::Random => GitConfig::default(),
        };
        if let Some(m) = self.m_graphs {
            git.m_graphs = m;
        }
        if let Some(s) = self.s_samples {
            git.s_samples = s;
        }
        if let Some(r) = self.score_reps {
            git.reps = r;
        }
        match kind {
            StrategyKind::Git => Strategy::Git(git),
            StrategyKind::GitPrivileged => Strategy::GitPrivileged(git),
            StrategyKind::EpsilonGit => Strategy::EpsilonGit {
                config: git,
                epsilon: self.epsilon.unwrap_or(match current {
                    Strategy::EpsilonGit { epsilon, .. } => epsilon,
                    _ => 0.1,
                }),
            },
            StrategyKind::Ait => Strategy::Ait {
                m_graphs: git.m_graphs,
                s_samples: git.s_samples,
            },
            StrategyKind::Cbed => Strategy::Cbed {
                m_graphs: git.m_graphs,
                s_samples: git.s_samples,
            },
            StrategyKind::Random => Strategy::Random,
        }
    }
}

fn parse_node_rows(s: &str) -> std::result::Result<(usize, usize), String> {
    let (node, rows) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NODE=ROWS, got '{s}'"))?;
    Ok((
        node.trim().parse().map_err(|e| format!("bad node: {e}"))?,
        rows.trim().parse().map_err(|e| format!("bad rows: {e}"))?,
    ))
}

fn out_root() -> PathBuf {
    env::var_os("CAUSALPROBE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            overrides,
            obs,
            int,
            out,
        } => generate(&overrides, obs, &int, out),
        Command::Run { overrides, out } => run(&overrides, out),
        Command::Suite {
            config,
            out,
            threads,
        } => suite_cmd(&config, out, threads),
        Command::Eval {
            dir,
            level,
            resamples,
        } => {
            let n = suite::evaluate(&dir, level, resamples)?;
            println!("aggregated {n} runs under {}", dir.display());
            Ok(())
        }
        Command::ParseBif { file, json } => parse_bif_cmd(&file, json),
        Command::Probe {
            overrides,
            free_node,
            out,
        } => probe(&overrides, free_node, out),
    }
}

fn generate(
    overrides: &Overrides,
    obs: Option<usize>,
    int: &[(usize, usize)],
    out: Option<PathBuf>,
) -> Result<()> {
    let config = overrides.resolve()?;
    let (scm, names) = config.build_system()?;
    let dir = out.unwrap_or_else(|| out_root().join(config.graph.label()));
    fs::create_dir_all(&dir)?;
    files::write_scm(&dir.join("scm.json"), &scm)?;
    files::write_dag_json(&dir.join("graph.json"), scm.dag())?;
    fs::write(dir.join("graph.txt"), files::edge_list_text(scm.dag()))?;
    fs::write(dir.join("names.txt"), names.join("\n") + "\n")?;

    let factory = RngFactory::new(config.seed);
    if let Some(rows) = obs {
        let data = ancestral_sample(&scm, rows, &mut factory.stream("obs", &[]));
        files::write_dataset(&dir.join("obs.csv"), &data, &names)?;
    }
    for &(node, rows) in int {
        let data = intervene_sample(
            &scm,
            node,
            rows,
            &mut factory.stream("intervene", &[node as u64]),
        )?;
        files::write_dataset(&dir.join(format!("int_{node}.csv")), &data, &names)?;
    }
    println!(
        "{}: {} nodes, {} edges -> {}",
        config.graph.label(),
        scm.n(),
        scm.dag().edge_count(),
        dir.display()
    );
    Ok(())
}

fn run(overrides: &Overrides, out: Option<PathBuf>) -> Result<()> {
    let config = overrides.resolve()?;
    let dir =
        out.unwrap_or_else(|| out_root().join("runs").join(run_dir_name(&config)));
    let record = suite::execute_run(&config, &dir, None)?;
    println!(
        "{} on {} seed {}: SHD {} -> {} over {} rounds; results in {}",
        config.strategy_name(),
        config.graph.label(),
        config.seed,
        record.initial_shd,
        record.final_shd(),
        record.rounds.len(),
        dir.display()
    );
    Ok(())
}

fn suite_cmd(config: &Path, out: Option<PathBuf>, threads: Option<usize>) -> Result<()> {
    let suite = suite::read_suite(config)?;
    let dir = out.unwrap_or_else(|| out_root().join("suite"));
    let report = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Format(format!("thread pool: {e}")))?
            .install(|| suite::run_suite(&suite, &dir)),
        None => suite::run_suite(&suite, &dir),
    }?;
    println!(
        "executed {} runs, skipped {} already complete",
        report.executed, report.skipped
    );
    for (name, error) in &report.failures {
        eprintln!("failed {name}: {error}");
    }
    println!("tables written under {}", dir.display());
    Ok(())
}

fn parse_bif_cmd(file: &Path, json: Option<PathBuf>) -> Result<()> {
    let doc = bif::parse_bif(&fs::read_to_string(file)?)?;
    for warning in &doc.warnings {
        eprintln!("warning: {warning}");
    }
    let scm = bif::to_scm(&doc)?;
    let dag = scm.dag();
    let max_in = (0..dag.n()).map(|v| dag.parents(v).len()).max().unwrap_or(0);
    println!(
        "{}: {} nodes, {} edges, max in-degree {}",
        doc.network,
        dag.n(),
        dag.edge_count(),
        max_in
    );
    if let Some(path) = json {
        files::write_scm(&path, &scm)?;
        println!("system written to {}", path.display());
    }
    Ok(())
}

fn probe(overrides: &Overrides, free_node: usize, out: Option<PathBuf>) -> Result<()> {
    let config = overrides.resolve()?;
    let dir = out.unwrap_or_else(|| {
        out_root()
            .join("probes")
            .join(format!("{}-free{free_node}", run_dir_name(&config)))
    });
    let record = suite::execute_run(&config, &dir, Some(free_node))?;
    let n = record
        .rounds
        .first()
        .map(|r| r.scores.scores.len())
        .unwrap_or(0);
    let hist = record.target_histogram(n);
    files::write_table_csv(
        &dir.join("histogram.csv"),
        &["node".into(), "count".into()],
        &hist
            .iter()
            .enumerate()
            .map(|(node, count)| vec![node.to_string(), count.to_string()])
            .collect::<Vec<_>>(),
    )?;
    println!(
        "probe around node {free_node} ({} rounds): target counts {hist:?}; results in {}",
        record.rounds.len(),
        dir.display()
    );
    Ok(())
}
