//! Intervention-target acquisition strategies.
//!
//! Every strategy produces one score per node from the current belief and
//! models (GIT-privileged additionally peeks at the ground-truth system),
//! and [`epsilon_greedy_select`] turns scores into a target. Scores are
//! comparable only within one [`ScoreVector`]; selection depends on ranks,
//! not scales.
//!
//! Randomness is split per (round, target, graph) through an [`RngFactory`]
//! so that score computation is reproducible and could be parallelized
//! across targets without changing results.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::condmodel::ConditionalModelSet;
use crate::enco::estimate_structural_grads;
use crate::graph::Dag;
use crate::graphbelief::GraphBelief;
use crate::math::{ln, log_sum_exp};
use crate::rng::RngFactory;
use crate::scm::{intervene_sample, CategoricalScm};
use crate::{Error, Result};

/// Cap applied when a variance ratio's denominator degenerates to zero
/// while the numerator does not.
pub const SCORE_CAP: f64 = 1e12;
const DEGENERATE_EPS: f64 = 1e-12;

/// Tag identifying which strategy produced a score vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StrategyKind {
    Git,
    GitPrivileged,
    EpsilonGit,
    Ait,
    Cbed,
    Random,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Git,
        StrategyKind::GitPrivileged,
        StrategyKind::EpsilonGit,
        StrategyKind::Ait,
        StrategyKind::Cbed,
        StrategyKind::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Git => "git",
            StrategyKind::GitPrivileged => "git-privileged",
            StrategyKind::EpsilonGit => "epsilon-git",
            StrategyKind::Ait => "ait",
            StrategyKind::Cbed => "cbed",
            StrategyKind::Random => "random",
        }
    }
}

impl core::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "git" => Ok(StrategyKind::Git),
            "git-privileged" | "git_privileged" => Ok(StrategyKind::GitPrivileged),
            "epsilon-git" | "epsilon_git" => Ok(StrategyKind::EpsilonGit),
            "ait" => Ok(StrategyKind::Ait),
            "cbed" => Ok(StrategyKind::Cbed),
            "random" => Ok(StrategyKind::Random),
            other => Err(Error::InvalidParam(alloc::format!(
                "unknown strategy '{other}'"
            ))),
        }
    }
}

/// Per-node acquisition scores for one round.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreVector {
    pub kind: StrategyKind,
    pub round: u64,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub(crate) fn new(kind: StrategyKind, round: u64, mut scores: Vec<f64>) -> Self {
        // Nothing non-finite escapes: NaN becomes 0, infinities are capped.
        for s in &mut scores {
            if s.is_nan() {
                *s = 0.0;
            } else if !s.is_finite() {
                *s = if *s > 0.0 { SCORE_CAP } else { -SCORE_CAP };
            }
        }
        ScoreVector {
            kind,
            round,
            scores,
        }
    }

    /// Index of the maximal score, ties by lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.scores)
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Returns the argmax with probability `1 - epsilon` (ties by lowest
/// index), otherwise a uniformly random node. `epsilon = 0` is the pure
/// greedy rule shared by all score-based strategies.
pub fn epsilon_greedy_select<R: Rng + ?Sized>(scores: &[f64], epsilon: f64, rng: &mut R) -> usize {
    assert!(!scores.is_empty(), "selection over an empty score vector");
    let epsilon = epsilon.clamp(0.0, 1.0);
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..scores.len())
    } else {
        argmax(scores)
    }
}

/// Knobs shared by [`git_scores`] and [`git_privileged_scores`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct GitConfig {
    /// Graphs sampled from the belief per candidate target.
    pub m_graphs: usize,
    /// Samples drawn per graph (imaginary from the models, or real from
    /// the ground-truth system in privileged mode).
    pub s_samples: usize,
    /// Graph samples per data row inside the gradient estimator.
    pub reps: usize,
    pub lambda_sparse: f64,
    /// Sum squared gradient norms (the default) or plain norms.
    pub squared: bool,
}

impl Default for GitConfig {
    fn default() -> Self {
        GitConfig {
            m_graphs: 50,
            s_samples: 32,
            reps: 100,
            lambda_sparse: 4e-3,
            squared: true,
        }
    }
}

fn check_git_config(cfg: &GitConfig) -> Result<()> {
    if cfg.m_graphs == 0 || cfg.s_samples == 0 || cfg.reps == 0 {
        return Err(Error::InvalidParam(alloc::format!(
            "git scoring needs positive m_graphs, s_samples and reps (got {}, {}, {})",
            cfg.m_graphs,
            cfg.s_samples,
            cfg.reps
        )));
    }
    Ok(())
}

/// Expected-gradient-magnitude scores from imaginary interventions.
///
/// For each candidate target `i`: sample `m_graphs` DAGs from the belief;
/// under each, draw `s_samples` imaginary rows from the learned models
/// with node `i` intervened; run the structural-gradient estimator on that
/// batch; accumulate the (squared) gradient norms.
pub fn git_scores(
    belief: &GraphBelief,
    models: &ConditionalModelSet,
    cfg: &GitConfig,
    factory: &RngFactory,
    round: u64,
) -> Result<ScoreVector> {
    check_git_config(cfg)?;
    let n = belief.n();
    let mut scores = vec![0.0; n];
    for (target, score) in scores.iter_mut().enumerate() {
        for m in 0..cfg.m_graphs {
            let mut rng = factory.stream("git", &[round, target as u64, m as u64]);
            let dag = belief.sample_dag(&mut rng);
            let batch =
                models.sample_rows_under(&dag, Some(target), cfg.s_samples, &mut rng)?;
            let grad = estimate_structural_grads(
                belief,
                models,
                &batch,
                cfg.reps,
                cfg.lambda_sparse,
                &mut rng,
            )?;
            *score += if cfg.squared {
                grad.squared_norm()
            } else {
                grad.norm_sum()
            };
        }
    }
    Ok(ScoreVector::new(StrategyKind::Git, round, scores))
}

/// [`git_scores`] with the imaginary batches replaced by real
/// interventional draws from the ground-truth system — the upper-bound
/// oracle variant.
pub fn git_privileged_scores(
    belief: &GraphBelief,
    models: &ConditionalModelSet,
    scm: &CategoricalScm,
    cfg: &GitConfig,
    factory: &RngFactory,
    round: u64,
) -> Result<ScoreVector> {
    check_git_config(cfg)?;
    let n = belief.n();
    if scm.n() != n {
        return Err(Error::DimensionMismatch(alloc::format!(
            "belief over {n} nodes, system over {}",
            scm.n()
        )));
    }
    let mut scores = vec![0.0; n];
    for (target, score) in scores.iter_mut().enumerate() {
        for m in 0..cfg.m_graphs {
            let mut rng = factory.stream("git-priv", &[round, target as u64, m as u64]);
            let batch = intervene_sample(scm, target, cfg.s_samples, &mut rng)?;
            let grad = estimate_structural_grads(
                belief,
                models,
                &batch,
                cfg.reps,
                cfg.lambda_sparse,
                &mut rng,
            )?;
            *score += if cfg.squared {
                grad.squared_norm()
            } else {
                grad.norm_sum()
            };
        }
    }
    Ok(ScoreVector::new(StrategyKind::GitPrivileged, round, scores))
}

/// Degenerate-variance rule shared by the scoring loop: zero within-graph
/// variance means every graph reproduced its samples exactly, which is
/// either uninformative (no between-graph spread either) or maximally
/// informative; the latter is capped to keep scores finite.
fn variance_ratio(vbg: f64, vwg: f64) -> f64 {
    if vwg < DEGENERATE_EPS {
        if vbg < DEGENERATE_EPS {
            0.0
        } else {
            SCORE_CAP
        }
    } else {
        vbg / vwg
    }
}

/// Between- and within-graph variance of one-hot encoded rows drawn from
/// `models` under each DAG in `dags`. `tag` keys the per-graph rng
/// substreams alongside `round`.
fn ait_variance_components(
    models: &ConditionalModelSet,
    dags: &[Dag],
    intervention: Option<usize>,
    s_samples: usize,
    factory: &RngFactory,
    round: u64,
    tag: u64,
) -> Result<(f64, f64)> {
    let n = models.n();
    let cards = models.cards();
    let offsets: Vec<usize> = cards
        .iter()
        .scan(0usize, |acc, &c| {
            let o = *acc;
            *acc += c;
            Some(o)
        })
        .collect();
    let dim: usize = cards.iter().sum();
    let m_graphs = dags.len();

    let mut means = vec![0.0; m_graphs * dim];
    for (j, dag) in dags.iter().enumerate() {
        let mut rng = factory.stream("ait", &[round, tag, j as u64]);
        let data = models.sample_rows_under(dag, intervention, s_samples, &mut rng)?;
        let mean = &mut means[j * dim..(j + 1) * dim];
        for row in data.rows() {
            for (&val, &off) in row.iter().zip(&offsets) {
                mean[off + val as usize] += 1.0;
            }
        }
        mean.iter_mut().for_each(|v| *v /= s_samples as f64);
    }
    let mut grand = vec![0.0; dim];
    for j in 0..m_graphs {
        for (g, &m) in grand.iter_mut().zip(&means[j * dim..(j + 1) * dim]) {
            *g += m;
        }
    }
    grand.iter_mut().for_each(|v| *v /= m_graphs as f64);

    let mut vbg = 0.0;
    let mut within = 0.0;
    for j in 0..m_graphs {
        let mean = &means[j * dim..(j + 1) * dim];
        let mut sq = 0.0;
        for (&m, &g) in mean.iter().zip(&grand) {
            vbg += (m - g) * (m - g);
        }
        for &m in mean {
            sq += m * m;
        }
        // One-hot rows have squared norm n, so the within-graph sum of
        // squared deviations collapses to S*(n - ||mean||^2).
        within += s_samples as f64 * (n as f64 - sq);
    }
    Ok((
        vbg / (m_graphs - 1) as f64,
        within / (m_graphs * (s_samples - 1)) as f64,
    ))
}

/// Variance-ratio scores over one-hot encoded imaginary samples: the
/// between-graph variance of the per-graph sample means divided by the
/// within-graph variance. One shared set of `m_graphs` DAGs is used for
/// all targets.
pub fn ait_scores(
    belief: &GraphBelief,
    models: &ConditionalModelSet,
    m_graphs: usize,
    s_samples: usize,
    factory: &RngFactory,
    round: u64,
) -> Result<ScoreVector> {
    if m_graphs < 2 || s_samples < 2 {
        return Err(Error::InvalidParam(alloc::format!(
            "variance-ratio scoring needs m_graphs >= 2 and s_samples >= 2 (got {m_graphs}, {s_samples})"
        )));
    }
    let n = belief.n();
    let mut graph_rng = factory.stream("ait-graphs", &[round]);
    let dags: Vec<_> = (0..m_graphs)
        .map(|_| belief.sample_dag(&mut graph_rng))
        .collect();

    let mut scores = vec![0.0; n];
    for (target, score) in scores.iter_mut().enumerate() {
        let (vbg, vwg) = ait_variance_components(
            models,
            &dags,
            Some(target),
            s_samples,
            factory,
            round,
            target as u64,
        )?;
        *score = variance_ratio(vbg, vwg);
    }
    Ok(ScoreVector::new(StrategyKind::Ait, round, scores))
}

/// Mutual-information scores between the intervention outcome and the
/// graph: Monte-Carlo entropy of the pooled mixture minus the mean
/// per-graph entropy. Fresh graphs are sampled per target.
pub fn cbed_scores(
    belief: &GraphBelief,
    models: &ConditionalModelSet,
    m_graphs: usize,
    s_samples: usize,
    factory: &RngFactory,
    round: u64,
) -> Result<ScoreVector> {
    if m_graphs < 2 || s_samples == 0 {
        return Err(Error::InvalidParam(alloc::format!(
            "information scoring needs m_graphs >= 2 and s_samples >= 1 (got {m_graphs}, {s_samples})"
        )));
    }
    let n = belief.n();
    let total = m_graphs * s_samples;
    let ln_m = ln(m_graphs as f64);
    let mut scores = vec![0.0; n];
    let mut lp = vec![0.0; m_graphs]; // per-sample log-likelihood under each graph
    for (target, score) in scores.iter_mut().enumerate() {
        let mut graph_rng = factory.stream("cbed-graphs", &[round, target as u64]);
        let dags: Vec<_> = (0..m_graphs)
            .map(|_| belief.sample_dag(&mut graph_rng))
            .collect();
        let samples: Vec<_> = dags
            .iter()
            .enumerate()
            .map(|(j, dag)| {
                let mut rng = factory.stream("cbed", &[round, target as u64, j as u64]);
                models.sample_rows_under(dag, Some(target), s_samples, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut h_cond = 0.0;
        let mut h_marg = 0.0;
        for (j, data) in samples.iter().enumerate() {
            for row in data.rows() {
                for (slot, dag) in lp.iter_mut().zip(&dags) {
                    *slot = models.row_log_prob_under(dag, Some(target), row);
                }
                h_cond -= lp[j];
                h_marg -= log_sum_exp(&lp) - ln_m;
            }
        }
        *score = (h_marg - h_cond) / total as f64;
    }
    Ok(ScoreVector::new(StrategyKind::Cbed, round, scores))
}

/// Round-robin baseline: uniform over the not-yet-visited nodes, resetting
/// once every node has been picked.
#[derive(Debug, Clone)]
pub struct RoundRobinState {
    n: usize,
    unvisited: Vec<usize>,
    rng: ChaCha8Rng,
}

impl RoundRobinState {
    pub fn new(n: usize, rng: ChaCha8Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::TooFewNodes { n, min: 1 });
        }
        Ok(RoundRobinState {
            n,
            unvisited: (0..n).collect(),
            rng,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Picks uniformly among the unvisited nodes and marks it visited,
    /// refilling the pool first if the previous cycle finished.
    pub fn next_target(&mut self) -> usize {
        if self.unvisited.is_empty() {
            self.unvisited.extend(0..self.n);
        }
        let idx = self.rng.random_range(0..self.unvisited.len());
        self.unvisited.swap_remove(idx)
    }
}

/// See [`RoundRobinState::next_target`].
pub fn random_round_robin(state: &mut RoundRobinState) -> usize {
    state.next_target()
}
