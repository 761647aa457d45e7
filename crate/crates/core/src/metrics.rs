//! Evaluation metrics over run logs: SHD trajectories, area under the SHD
//! curve, excess area against a random baseline, target-distribution
//! entropy, rank correlation of score streams, and bootstrap confidence
//! intervals.
//!
//! Everything here is a pure function of its inputs; randomness enters only
//! through the caller-supplied rng of [`bootstrap_ci`].

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::math::{ln, sqrt};
use crate::targeting::{ScoreVector, StrategyKind};
use crate::{Error, Result};

/// One completed acquisition round inside a [`RunRecord`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundEntry {
    /// 1-based round index; contiguous within a record.
    pub round: u64,
    /// Node the intervention was performed on.
    pub target: usize,
    /// Scores the strategy produced this round.
    pub scores: ScoreVector,
    /// Structural Hamming distance of the extracted graph after refitting.
    pub shd: usize,
    /// Scores of a shadow strategy evaluated on the same belief without
    /// influencing selection (used for score-stream correlation analyses).
    pub shadow: Option<ScoreVector>,
    /// Euclidean norms of the structural gradients `[‖d_gamma‖, ‖d_theta‖]`
    /// averaged over the round's graph-fitting iterations, when recorded.
    #[cfg_attr(feature = "serde", serde(default))]
    pub grad_norms: Option<[f64; 2]>,
}

/// Full log of one online-discovery run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunRecord {
    pub method: StrategyKind,
    pub seed: u64,
    /// Distance of the extracted graph right after the observational-only
    /// fit, before any intervention.
    pub initial_shd: usize,
    pub rounds: Vec<RoundEntry>,
}

impl RunRecord {
    pub fn new(method: StrategyKind, seed: u64, initial_shd: usize) -> Self {
        RunRecord {
            method,
            seed,
            initial_shd,
            rounds: Vec::new(),
        }
    }

    /// Appends a round, assigning the next contiguous 1-based index.
    pub fn push_round(
        &mut self,
        target: usize,
        scores: ScoreVector,
        shd: usize,
        shadow: Option<ScoreVector>,
    ) {
        let round = self.rounds.len() as u64 + 1;
        self.rounds.push(RoundEntry {
            round,
            target,
            scores,
            shd,
            shadow,
            grad_norms: None,
        });
    }

    /// Per-round SHD values in round order (excludes `initial_shd`).
    pub fn shd_series(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.shd).collect()
    }

    /// SHD after the last round, or the initial one for a zero-round run.
    pub fn final_shd(&self) -> usize {
        self.rounds.last().map_or(self.initial_shd, |r| r.shd)
    }

    /// Selection counts per node over all rounds.
    pub fn target_histogram(&self, n: usize) -> Vec<u64> {
        let mut hist = vec![0u64; n];
        for r in &self.rounds {
            if r.target < n {
                hist[r.target] += 1;
            }
        }
        hist
    }

    /// Checks the contiguous-from-1 round indexing (useful after reading a
    /// record back from disk).
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rounds.iter().enumerate() {
            if r.round != i as u64 + 1 {
                return Err(Error::InvalidParam(alloc::format!(
                    "round index {} at position {i}, expected {}",
                    r.round,
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Area under the SHD curve: the mean of the first `horizon` per-round
/// distances.
pub fn aushd(shd_series: &[usize], horizon: usize) -> Result<f64> {
    if horizon == 0 || horizon > shd_series.len() {
        return Err(Error::InvalidParam(alloc::format!(
            "horizon {horizon} outside 1..={} rounds",
            shd_series.len()
        )));
    }
    let sum: f64 = shd_series[..horizon].iter().map(|&s| s as f64).sum();
    Ok(sum / horizon as f64)
}

/// Excess area under the SHD curve: how much lower the method's AUSHD is
/// than the mean of the random-baseline AUSHDs. Higher is better.
pub fn eaushd(method_aushd: f64, random_baseline_aushds: &[f64]) -> Result<f64> {
    if random_baseline_aushds.is_empty() {
        return Err(Error::EmptyData(String::from("random baseline AUSHDs")));
    }
    let mean: f64 =
        random_baseline_aushds.iter().sum::<f64>() / random_baseline_aushds.len() as f64;
    Ok(-(method_aushd - mean))
}

/// Shannon entropy (nats) of a selection histogram; zero-count nodes
/// contribute nothing.
pub fn target_entropy(histogram: &[u64]) -> Result<f64> {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return Err(Error::EmptyData(String::from("all-zero target histogram")));
    }
    let t = total as f64;
    let mut h = 0.0;
    for &c in histogram {
        if c > 0 {
            let p = c as f64 / t;
            h -= p * ln(p);
        }
    }
    Ok(h)
}

/// 1-based average ranks with ties sharing their group's mean rank.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either series has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "series of length {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidParam(String::from(
            "correlation needs at least two observations",
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Ok(None);
    }
    Ok(Some(sab / sqrt(saa * sbb)))
}

/// Spearman's rank correlation with average-rank tie handling; `None` for
/// constant series (undefined ranks spread).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "series of length {} vs {}",
            a.len(),
            b.len()
        )));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Rank correlation of two per-round score streams: scores are normalized
/// within each round (s / Σs, left untouched when the total is zero), the
/// per-node series are rank-correlated across rounds, and the per-node
/// correlations are averaged, skipping nodes where either stream is
/// constant. `None` when every node is skipped.
pub fn score_stream_correlation(
    a: &[ScoreVector],
    b: &[ScoreVector],
) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "streams of {} vs {} rounds",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidParam(String::from(
            "score-stream correlation needs at least two rounds",
        )));
    }
    let n = a[0].scores.len();
    for sv in a.iter().chain(b) {
        if sv.scores.len() != n {
            return Err(Error::DimensionMismatch(alloc::format!(
                "score vector over {} nodes in a stream over {n}",
                sv.scores.len()
            )));
        }
    }
    let normalize = |stream: &[ScoreVector]| -> Vec<Vec<f64>> {
        stream
            .iter()
            .map(|sv| {
                let total: f64 = sv.scores.iter().sum();
                if total != 0.0 {
                    sv.scores.iter().map(|&s| s / total).collect()
                } else {
                    sv.scores.clone()
                }
            })
            .collect()
    };
    let (na, nb) = (normalize(a), normalize(b));
    let (mut sum, mut used) = (0.0, 0usize);
    for node in 0..n {
        let sa: Vec<f64> = na.iter().map(|row| row[node]).collect();
        let sb: Vec<f64> = nb.iter().map(|row| row[node]).collect();
        if let Some(r) = spearman(&sa, &sb)? {
            sum += r;
            used += 1;
        }
    }
    Ok((used > 0).then(|| sum / used as f64))
}

/// Percentile bootstrap confidence interval for the mean.
pub fn bootstrap_ci(
    samples: &[f64],
    level: f64,
    resamples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::EmptyData(alloc::format!(
            "bootstrap needs at least two samples, got {}",
            samples.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParam(alloc::format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    if resamples < 1000 {
        return Err(Error::InvalidParam(alloc::format!(
            "{resamples} resamples is too few for stable percentiles (need >= 1000)"
        )));
    }
    let n = samples.len();
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..n {
            sum += samples[rng.random_range(0..n)];
        }
        means.push(sum / n as f64);
    }
    means.sort_by(f64::total_cmp);
    let quantile = |p: f64| -> f64 {
        let pos = p * (resamples - 1) as f64;
        let lo = pos as usize;
        let frac = pos - lo as f64;
        if lo + 1 < resamples {
            means[lo] + frac * (means[lo + 1] - means[lo])
        } else {
            means[lo]
        }
    };
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(alpha), quantile(1.0 - alpha)))
}
