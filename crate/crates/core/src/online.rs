//! The online causal discovery loop: fit on observational data, then
//! alternate intervention-target selection, batch acquisition, and
//! refitting for a fixed number of rounds.
//!
//! Each round runs one epoch of the two-stage optimization — `dist_iters`
//! distribution-fitting steps on the observational data followed by
//! `graph_iters` structure steps, each on one accumulated interventional
//! batch — and logs the chosen target, the strategy's scores, and the SHD
//! of the extracted graph against the generating structure.
//!
//! All randomness flows through named [`RngFactory`] substreams keyed by
//! round (and, inside the strategies, by target and graph), so a record is
//! reproducible bit-for-bit from its seed.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::condmodel::{ConditionalModelSet, ModelSpec};
use crate::enco::GraphFitter;
use crate::graph::shd;
use crate::math::sqrt;
use crate::graphbelief::GraphBelief;
use crate::metrics::RunRecord;
use crate::rng::RngFactory;
use crate::scm::{ancestral_sample, intervene_sample, CategoricalScm, Dataset};
use crate::targeting::{
    ait_scores, cbed_scores, epsilon_greedy_select, git_privileged_scores, git_scores,
    GitConfig, RoundRobinState, ScoreVector, StrategyKind,
};
use crate::{Error, Result};

/// Two-stage optimization knobs for one epoch per round.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct EncoParams {
    /// Distribution-fitting iterations per epoch (F).
    pub dist_iters: usize,
    /// Graph-fitting iterations per epoch (G).
    pub graph_iters: usize,
    /// Graph samples per data row inside the structure-gradient estimator (K).
    pub reps: usize,
    pub lambda_sparse: f64,
    /// Minibatch size for distribution fitting.
    pub fit_batch: usize,
    pub lr_model: f64,
    pub weight_decay: f64,
    pub lr_gamma: f64,
    pub lr_theta: f64,
    /// Graph samples per data row when masking the conditionals.
    pub masks_per_sample: usize,
}

impl Default for EncoParams {
    fn default() -> Self {
        EncoParams {
            dist_iters: 1000,
            graph_iters: 100,
            reps: 100,
            lambda_sparse: 4e-3,
            fit_batch: 128,
            lr_model: 5e-3,
            weight_decay: 1e-4,
            lr_gamma: 2e-2,
            lr_theta: 1e-1,
            masks_per_sample: 1,
        }
    }
}

impl EncoParams {
    /// Reduced iteration counts sized for quick experiments and tests on
    /// small graphs; learning rates and regularization are unchanged.
    pub fn desk() -> Self {
        EncoParams {
            dist_iters: 200,
            graph_iters: 20,
            reps: 20,
            ..EncoParams::default()
        }
    }
}

/// Acquisition strategy plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Strategy {
    Git(GitConfig),
    GitPrivileged(GitConfig),
    EpsilonGit {
        #[cfg_attr(feature = "serde", serde(default))]
        config: GitConfig,
        epsilon: f64,
    },
    Ait {
        #[cfg_attr(feature = "serde", serde(default = "d_m_graphs"))]
        m_graphs: usize,
        #[cfg_attr(feature = "serde", serde(default = "d_s_samples"))]
        s_samples: usize,
    },
    Cbed {
        #[cfg_attr(feature = "serde", serde(default = "d_m_graphs"))]
        m_graphs: usize,
        #[cfg_attr(feature = "serde", serde(default = "d_s_samples"))]
        s_samples: usize,
    },
    Random,
}

#[cfg(feature = "serde")]
fn d_m_graphs() -> usize {
    GitConfig::default().m_graphs
}

#[cfg(feature = "serde")]
fn d_s_samples() -> usize {
    GitConfig::default().s_samples
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Git(_) => StrategyKind::Git,
            Strategy::GitPrivileged(_) => StrategyKind::GitPrivileged,
            Strategy::EpsilonGit { .. } => StrategyKind::EpsilonGit,
            Strategy::Ait { .. } => StrategyKind::Ait,
            Strategy::Cbed { .. } => StrategyKind::Cbed,
            Strategy::Random => StrategyKind::Random,
        }
    }

    /// Configuration the privileged shadow scorer should mirror.
    fn git_config(&self) -> GitConfig {
        match self {
            Strategy::Git(cfg)
            | Strategy::GitPrivileged(cfg)
            | Strategy::EpsilonGit { config: cfg, .. } => *cfg,
            _ => GitConfig::default(),
        }
    }
}

/// Everything one run needs beyond the generating system itself.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OnlineConfig {
    pub seed: u64,
    /// Observational rows sampled once up front.
    pub obs_size: usize,
    /// Intervention rounds (T).
    pub rounds: usize,
    /// Rows per interventional batch.
    pub batch: usize,
    pub model: ModelSpec,
    pub enco: EncoParams,
    pub strategy: Strategy,
    /// Graph fitting uses only the newest interventional batch instead of
    /// drawing uniformly from the accumulated pool.
    pub latest_only: bool,
    /// Ablation: distribution fitting also consumes the interventional
    /// pool (proportionally to its size) instead of observational data only.
    pub mixed_fit: bool,
    /// Reinitialize the conditional models from scratch at the start of
    /// every round instead of continuing from the previous round's
    /// parameters. Structural parameters always persist; they are the
    /// running estimate the loop exists to produce.
    #[cfg_attr(feature = "serde", serde(default))]
    pub cold_start: bool,
    /// Alternating (distribution-fit, graph-fit) cycles per round. The
    /// default of one cycle per intervention is the documented loop; larger
    /// values spend more optimization per acquired batch.
    #[cfg_attr(feature = "serde", serde(default = "one"))]
    pub epochs_per_round: usize,
    /// Additionally evaluate the privileged scorer each round without
    /// letting it pick targets, for score-correlation analyses.
    pub shadow_privileged: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            seed: 0,
            obs_size: 5000,
            rounds: 100,
            batch: 32,
            model: ModelSpec::Net {
                embed: 8,
                hidden: 64,
            },
            enco: EncoParams::default(),
            strategy: Strategy::Random,
            latest_only: false,
            mixed_fit: false,
            cold_start: false,
            epochs_per_round: 1,
            shadow_privileged: false,
        }
    }
}

#[cfg(feature = "serde")]
fn one() -> usize {
    1
}

/// A finished run: the log plus the final belief and models, ready for
/// persistence or further analysis.
#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub record: RunRecord,
    pub belief: GraphBelief,
    pub models: ConditionalModelSet,
}

fn l2(v: &[f64]) -> f64 {
    sqrt(v.iter().map(|x| x * x).sum())
}

fn validate(config: &OnlineConfig) -> Result<()> {
    if config.obs_size == 0 {
        return Err(Error::InvalidParam(alloc::format!(
            "obs_size must be positive, got {}",
            config.obs_size
        )));
    }
    if config.batch == 0 {
        return Err(Error::InvalidParam(alloc::format!(
            "batch must be positive, got {}",
            config.batch
        )));
    }
    if config.epochs_per_round == 0 {
        return Err(Error::InvalidParam(alloc::format!(
            "epochs_per_round must be positive, got {}",
            config.epochs_per_round
        )));
    }
    if let Strategy::EpsilonGit { epsilon, .. } = config.strategy {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidParam(alloc::format!(
                "epsilon {epsilon} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Runs the full loop from a fresh, uninformed belief.
pub fn run_online(scm: &CategoricalScm, config: &OnlineConfig) -> Result<OnlineOutcome> {
    let belief = GraphBelief::new(scm.n())?;
    run_with_belief(scm, config, belief)
}

/// As [`run_online`], but with every pair not touching `free_node` clamped
/// to the ground-truth structure and excluded from structural updates, so
/// the run only has to resolve the neighborhood of one node.
pub fn run_preinit_probe(
    scm: &CategoricalScm,
    config: &OnlineConfig,
    free_node: usize,
) -> Result<OnlineOutcome> {
    let mut belief = GraphBelief::new(scm.n())?;
    belief.clamp_known_edges(scm.dag(), free_node)?;
    run_with_belief(scm, config, belief)
}

fn run_with_belief(
    scm: &CategoricalScm,
    config: &OnlineConfig,
    mut belief: GraphBelief,
) -> Result<OnlineOutcome> {
    validate(config)?;
    let n = scm.n();
    let e = config.enco;
    let factory = RngFactory::new(config.seed);

    let obs = ancestral_sample(scm, config.obs_size, &mut factory.stream("obs", &[]));
    let mut models = match config.model {
        ModelSpec::Table => ConditionalModelSet::table_set(scm.cardinalities())?,
        ModelSpec::Net { embed, hidden } => ConditionalModelSet::net_set(
            scm.cardinalities(),
            embed,
            hidden,
            &mut factory.stream("model-init", &[]),
        )?,
    };
    let mut fitter = GraphFitter::new(n);
    let mut round_robin = RoundRobinState::new(n, factory.stream("round-robin", &[]))?;

    // Observational-only fit before any intervention.
    models.fit_distribution(
        &belief,
        &obs,
        e.dist_iters,
        e.fit_batch,
        e.lr_model,
        e.weight_decay,
        e.masks_per_sample,
        &mut factory.stream("dist-fit", &[0]),
    )?;
    let initial_shd = shd(&belief.extract_graph(), scm.dag())?;
    let mut record = RunRecord::new(config.strategy.kind(), config.seed, initial_shd);

    let mut batches: Vec<Dataset> = Vec::new();
    for t in 1..=config.rounds as u64 {
        let (scores, target) = match &config.strategy {
            Strategy::Git(cfg) => {
                let sv = git_scores(&belief, &models, cfg, &factory, t)?;
                let target = sv.argmax();
                (sv, target)
            }
            Strategy::GitPrivileged(cfg) => {
                let sv = git_privileged_scores(&belief, &models, scm, cfg, &factory, t)?;
                let target = sv.argmax();
                (sv, target)
            }
            Strategy::EpsilonGit { config: cfg, epsilon } => {
                let sv = git_scores(&belief, &models, cfg, &factory, t)?;
                let target = epsilon_greedy_select(
                    &sv.scores,
                    *epsilon,
                    &mut factory.stream("select", &[t]),
                );
                (sv, target)
            }
            Strategy::Ait { m_graphs, s_samples } => {
                let sv = ait_scores(&belief, &models, *m_graphs, *s_samples, &factory, t)?;
                let target = sv.argmax();
                (sv, target)
            }
            Strategy::Cbed { m_graphs, s_samples } => {
                let sv = cbed_scores(&belief, &models, *m_graphs, *s_samples, &factory, t)?;
                let target = sv.argmax();
                (sv, target)
            }
            Strategy::Random => {
                let target = round_robin.next_target();
                (
                    ScoreVector::new(StrategyKind::Random, t, vec![0.0; n]),
                    target,
                )
            }
        };
        let shadow = if config.shadow_privileged {
            Some(git_privileged_scores(
                &belief,
                &models,
                scm,
                &config.strategy.git_config(),
                &factory,
                t,
            )?)
        } else {
            None
        };

        let batch =
            intervene_sample(scm, target, config.batch, &mut factory.stream("intervene", &[t]))?;
        batches.push(batch);

        if config.cold_start {
            models = match config.model {
                ModelSpec::Table => ConditionalModelSet::table_set(scm.cardinalities())?,
                ModelSpec::Net { embed, hidden } => ConditionalModelSet::net_set(
                    scm.cardinalities(),
                    embed,
                    hidden,
                    &mut factory.stream("model-init", &[t]),
                )?,
            };
        }

        // One stream per purpose per round; extra epochs continue the same
        // sequences, so a single-epoch run is unaffected by the knob.
        let mut df_rng = factory.stream("dist-fit", &[t]);
        let mut dfi_rng = factory.stream("dist-fit-int", &[t]);
        let mut gf_rng = factory.stream("graph-fit", &[t]);
        let mut norm_sums = [0.0; 2];
        for _ in 0..config.epochs_per_round {
            models.fit_distribution(
                &belief,
                &obs,
                e.dist_iters,
                e.fit_batch,
                e.lr_model,
                e.weight_decay,
                e.masks_per_sample,
                &mut df_rng,
            )?;
            if config.mixed_fit {
                let int_rows: usize = batches.iter().map(|b| b.len()).sum();
                let extra = (e.dist_iters * int_rows).div_ceil(obs.len());
                for _ in 0..extra {
                    let idx = dfi_rng.random_range(0..batches.len());
                    models.fit_distribution(
                        &belief,
                        &batches[idx],
                        1,
                        e.fit_batch,
                        e.lr_model,
                        e.weight_decay,
                        e.masks_per_sample,
                        &mut dfi_rng,
                    )?;
                }
            }

            for _ in 0..e.graph_iters {
                let idx = if config.latest_only {
                    batches.len() - 1
                } else {
                    gf_rng.random_range(0..batches.len())
                };
                let grad = fitter.round(
                    &mut belief,
                    &models,
                    &[&batches[idx]],
                    e.reps,
                    e.lambda_sparse,
                    e.lr_gamma,
                    e.lr_theta,
                    &mut gf_rng,
                )?;
                norm_sums[0] += l2(&grad.d_gamma);
                norm_sums[1] += l2(&grad.d_theta);
            }
        }

        let round_shd = shd(&belief.extract_graph(), scm.dag())?;
        record.push_round(target, scores, round_shd, shadow);
        let iters = (e.graph_iters * config.epochs_per_round) as f64;
        if iters > 0.0 {
            record.rounds.last_mut().expect("just pushed").grad_norms =
                Some([norm_sums[0] / iters, norm_sums[1] / iters]);
        }
    }

    Ok(OnlineOutcome {
        record,
        belief,
        models,
    })
}
