//! Experiment configuration: one JSON document describes a single run, and
//! the suite runner crosses lists of graphs, strategies, and seeds over the
//! same base settings.
//!
//! Every field has a default matching the full-scale experimental setup
//! (5000 observational rows, 100 rounds, batches of 32, the standard
//! two-stage optimization constants), so a minimal config is just a graph
//! source. `desk()` shrinks the iteration counts for laptop-scale work.
//! Ground-truth construction draws from `graph_seed`, never from the run
//! seed, so different seeds of one experiment share the same system.

use std::fs;
use std::path::{Path, PathBuf};

use causalprobe_core::condmodel::ModelSpec;
use causalprobe_core::graph::{generate_synthetic, GraphFamily};
use causalprobe_core::online::{EncoParams, OnlineConfig, Strategy};
use causalprobe_core::rng::RngFactory;
use causalprobe_core::scm::{random_cpt_scm_with_min_effect, CategoricalScm};
use sha2::{Digest, Sha256};

use crate::bif;
use crate::files;
use crate::{Error, Result};

/// Where the ground-truth system comes from.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphSource {
    /// A deterministic family (or `random`) with random CPTs.
    Synthetic {
        family: GraphFamily,
        n: usize,
        #[serde(default)]
        edge_prob: f64,
    },
    /// A Bayesian-network file from the repository corpus.
    Bif { path: PathBuf },
    /// A previously serialized SCM.
    Scm { path: PathBuf },
}

impl GraphSource {
    /// Short name used in output paths and table rows.
    pub fn label(&self) -> String {
        match self {
            GraphSource::Synthetic { family, n, .. } => format!("{}{n}", family.name()),
            GraphSource::Bif { path } | GraphSource::Scm { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "unnamed".into()),
        }
    }
}

/// Everything one run needs: the system, the loop settings, and the seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSource,
    /// Categories per node for synthetic systems.
    #[serde(default = "d_cardinality")]
    pub cardinality: usize,
    /// Dirichlet concentration for random CPT rows.
    #[serde(default = "d_concentration")]
    pub concentration: f64,
    /// Minimum total-variation effect each parent must exert in a random
    /// CPT, so no ground-truth edge is statistically invisible.
    #[serde(default = "d_min_effect")]
    pub min_effect: f64,
    /// Seed for ground-truth construction, separate from the run seed.
    #[serde(default)]
    pub graph_seed: u64,
    #[serde(default = "d_obs_size")]
    pub obs_size: usize,
    #[serde(default = "d_rounds")]
    pub rounds: usize,
    #[serde(default = "d_batch")]
    pub batch: usize,
    #[serde(default = "d_model")]
    pub model: ModelSpec,
    #[serde(default = "d_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub enco: EncoParams,
    /// Alternating fit cycles per round.
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub latest_only: bool,
    #[serde(default)]
    pub mixed_fit: bool,
    #[serde(default)]
    pub cold_start: bool,
    #[serde(default)]
    pub shadow_privileged: bool,
    #[serde(default)]
    pub seed: u64,
}

fn d_cardinality() -> usize {
    10
}
fn d_concentration() -> f64 {
    0.5
}
fn d_min_effect() -> f64 {
    0.15
}
fn d_obs_size() -> usize {
    5000
}
fn d_rounds() -> usize {
    100
}
fn d_batch() -> usize {
    32
}
fn d_model() -> ModelSpec {
    ModelSpec::Net {
        embed: 8,
        hidden: 64,
    }
}
fn d_strategy() -> Strategy {
    Strategy::Random
}
fn d_epochs() -> usize {
    1
}

impl ExperimentConfig {
    /// Full-scale defaults around the given graph source.
    pub fn new(graph: GraphSource) -> Self {
        ExperimentConfig {
            graph,
            cardinality: d_cardinality(),
            concentration: d_concentration(),
            min_effect: d_min_effect(),
            graph_seed: 0,
            obs_size: d_obs_size(),
            rounds: d_rounds(),
            batch: d_batch(),
            model: d_model(),
            strategy: d_strategy(),
            enco: EncoParams::default(),
            epochs: d_epochs(),
            latest_only: false,
            mixed_fit: false,
            cold_start: false,
            shadow_privileged: false,
            seed: 0,
        }
    }

    /// Desk-scale variant: reduced iteration counts, smaller cardinality,
    /// tabular conditionals, a short horizon.
    pub fn desk(graph: GraphSource) -> Self {
        ExperimentConfig {
            cardinality: 4,
            obs_size: 1000,
            rounds: 40,
            model: ModelSpec::Table,
            enco: EncoParams::desk(),
            ..ExperimentConfig::new(graph)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cardinality < 2 {
            return Err(Error::Format(format!(
                "cardinality {} < 2",
                self.cardinality
            )));
        }
        if !(0.0..1.0).contains(&self.min_effect) {
            return Err(Error::Format(format!(
                "min_effect {} outside [0, 1)",
                self.min_effect
            )));
        }
        if self.concentration <= 0.0 {
            return Err(Error::Format(format!(
                "concentration {} must be positive",
                self.concentration
            )));
        }
        if self.obs_size == 0 || self.batch == 0 || self.epochs == 0 {
            return Err(Error::Format(
                "obs_size, batch, and epochs must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Constructs the ground-truth system and its node names.
    pub fn build_system(&self) -> Result<(CategoricalScm, Vec<String>)> {
        self.validate()?;
        match &self.graph {
            GraphSource::Synthetic {
                family,
                n,
                edge_prob,
            } => {
                let factory = RngFactory::new(self.graph_seed);
                let dag =
                    generate_synthetic(*family, *n, *edge_prob, &mut factory.stream("graph", &[]))?;
                let scm = random_cpt_scm_with_min_effect(
                    &dag,
                    &vec![self.cardinality; *n],
                    self.concentration,
                    self.min_effect,
                    &mut factory.stream("cpt", &[]),
                )?;
                Ok((scm, files::default_names(*n)))
            }
            GraphSource::Bif { path } => {
                let doc = bif::parse_bif(&fs::read_to_string(path)?)?;
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                bif::validate_known_network(&stem, &doc)?;
                let names = doc.variables.iter().map(|v| v.name.clone()).collect();
                Ok((bif::to_scm(&doc)?, names))
            }
            GraphSource::Scm { path } => {
                let scm = files::read_scm(path)?;
                let names = files::default_names(scm.n());
                Ok((scm, names))
            }
        }
    }

    pub fn to_online(&self) -> OnlineConfig {
        OnlineConfig {
            seed: self.seed,
            obs_size: self.obs_size,
            rounds: self.rounds,
            batch: self.batch,
            model: self.model,
            enco: self.enco,
            strategy: self.strategy,
            latest_only: self.latest_only,
            mixed_fit: self.mixed_fit,
            cold_start: self.cold_start,
            epochs_per_round: self.epochs,
            shadow_privileged: self.shadow_privileged,
        }
    }

    /// Hex digest over every field except the seed; two runs belong to the
    /// same experiment exactly when their hashes agree.
    pub fn hash(&self) -> String {
        let mut seedless = self.clone();
        seedless.seed = 0;
        let json = serde_json::to_string(&seedless).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    pub fn strategy_name(&self) -> &'static str {
        self.strategy.kind().name()
    }
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
    config.validate()?;
    Ok(config)
}

pub fn write_config(path: &Path, config: &ExperimentConfig) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(config)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use causalprobe_core::targeting::GitConfig;

    fn chain8() -> GraphSource {
        GraphSource::Synthetic {
            family: GraphFamily::Chain,
            n: 8,
            edge_prob: 0.0,
        }
    }

    #[test]
    fn minimal_json_fills_every_default() {
        let config: ExperimentConfig = serde_json::from_str(
            r#"{"graph": {"synthetic": {"family": "chain", "n": 8}},
                "enco": {"graph_iters": 100}}"#,
        )
        .unwrap_or_else(|e| panic!("{e}"));
        assert_eq!(config, ExperimentConfig::new(chain8()));
        assert_eq!(config.cardinality, 10);
        assert_eq!(config.obs_size, 5000);
        assert_eq!(config.rounds, 100);
        assert_eq!(config.batch, 32);
        assert_eq!(config.enco.dist_iters, 1000);
        assert_eq!(config.enco.lambda_sparse, 4e-3);
    }

    #[test]
    fn json_round_trip_preserves_strategy_details() {
        let mut config = ExperimentConfig::desk(chain8());
        config.strategy = Strategy::EpsilonGit {
            config: GitConfig {
                m_graphs: 7,
                ..GitConfig::default()
            },
            epsilon: 0.25,
        };
        config.seed = 42;
        let text = serde_json::to_string(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn hash_ignores_seed_and_tracks_everything_else() {
        let a = ExperimentConfig::desk(chain8());
        let mut b = a.clone();
        b.seed = 99;
        assert_eq!(a.hash(), b.hash());

        let mut c = a.clone();
        c.rounds += 1;
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.strategy = Strategy::Ait {
            m_graphs: 30,
            s_samples: 16,
        };
        assert_ne!(a.hash(), d.hash());
    }

    #[test]
    fn synthetic_systems_are_reproducible_and_seed_separated() {
        let mut config = ExperimentConfig::desk(chain8());
        let (a, names) = config.build_system().unwrap();
        let (b, _) = config.build_system().unwrap();
        assert_eq!(a, b);
        assert_eq!(names.len(), 8);
        assert_eq!(a.cardinalities(), &[4; 8]);

        config.seed = 7; // run seed must not perturb the ground truth
        let (c, _) = config.build_system().unwrap();
        assert_eq!(a, c);

        config.graph_seed = 1;
        let (d, _) = config.build_system().unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn validation_rejects_out_of_range_fields() {
        let mut config = ExperimentConfig::desk(chain8());
        config.cardinality = 1;
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::desk(chain8());
        config.min_effect = 1.0;
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::desk(chain8());
        config.batch = 0;
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::desk(chain8());
        config.epochs = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn labels_name_graphs_for_tables_and_paths() {
        assert_eq!(chain8().label(), "chain8");
        let bif = GraphSource::Bif {
            path: PathBuf::from("/somewhere/cancer.bif"),
        };
        assert_eq!(bif.label(), "cancer");
    }
}
