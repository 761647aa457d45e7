//! Ground-truth structural causal models over categorical variables.
//!
//! An SCM pairs a [`Dag`] with one conditional probability table per node.
//! Sampling is ancestral (topological order); an intervention replaces the
//! target's CPT with the uniform distribution over its categories, leaving
//! every other mechanism untouched.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::graph::Dag;
use crate::{Error, Result};

/// Maximum number of joint states `exact_joint` will enumerate.
pub const ENUMERATION_LIMIT: usize = 1 << 20;

/// Row-major index of a category configuration: the **last** coordinate
/// varies fastest. `values` and `cards` must have equal length.
#[inline]
pub fn config_index(values: &[u8], cards: &[usize]) -> usize {
    debug_assert_eq!(values.len(), cards.len());
    let mut idx = 0;
    for (v, &c) in values.iter().zip(cards) {
        idx = idx * c + *v as usize;
    }
    idx
}

/// Inverse of [`config_index`].
pub fn index_to_config(mut idx: usize, cards: &[usize]) -> Vec<u8> {
    let mut out = vec![0u8; cards.len()];
    for k in (0..cards.len()).rev() {
        out[k] = (idx % cards[k]) as u8;
        idx /= cards[k];
    }
    out
}

/// Product of cardinalities, `None` on overflow.
pub fn state_count(cards: &[usize]) -> Option<usize> {
    cards.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c))
}

/// Conditional probability table for one node.
///
/// `table` holds one row per configuration of `parents` (row-major over the
/// parent axes in stored order, last parent fastest); each row is a
/// distribution over the node's `card` categories.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cpt {
    node: usize,
    parents: Vec<usize>,
    parent_cards: Vec<usize>,
    card: usize,
    table: Vec<f64>,
}

impl Cpt {
    /// Validates shape, entry range, strict parent ordering, and row
    /// normalization (each row sums to 1 within 1e-9).
    pub fn new(
        node: usize,
        parents: Vec<usize>,
        parent_cards: Vec<usize>,
        card: usize,
        table: Vec<f64>,
    ) -> Result<Self> {
        if parents.len() != parent_cards.len() {
            return Err(Error::DimensionMismatch(alloc::format!(
                "node {node}: {} parents but {} parent cardinalities",
                parents.len(),
                parent_cards.len()
            )));
        }
        if !parents.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidCpt(alloc::format!(
                "node {node}: parent list must be strictly ascending"
            )));
        }
        if parents.contains(&node) {
            return Err(Error::SelfLoop { node });
        }
        if card < 2 {
            return Err(Error::InvalidParam(alloc::format!(
                "node {node}: cardinality {card} < 2"
            )));
        }
        let rows = state_count(&parent_cards).ok_or_else(|| {
            Error::EnumerationBound(alloc::format!("node {node}: parent state space overflows"))
        })?;
        if table.len() != rows * card {
            return Err(Error::InvalidCpt(alloc::format!(
                "node {node}: table has {} entries, expected {} rows x {card}",
                table.len(),
                rows
            )));
        }
        for r in 0..rows {
            let row = &table[r * card..(r + 1) * card];
            let mut sum = 0.0;
            for &p in row {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidCpt(alloc::format!(
                        "node {node} row {r}: entry {p} outside [0, 1]"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidCpt(alloc::format!(
                    "node {node} row {r}: sums to {sum}"
                )));
            }
        }
        Ok(Cpt {
            node,
            parents,
            parent_cards,
            card,
            table,
        })
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn parent_cards(&self) -> &[usize] {
        &self.parent_cards
    }

    pub fn card(&self) -> usize {
        self.card
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn rows(&self) -> usize {
        self.table.len() / self.card
    }

    /// Distribution over the node's categories for one parent configuration,
    /// read from a full assignment over all nodes.
    pub fn row_for(&self, assignment: &[u8]) -> &[f64] {
        let mut idx = 0;
        for (&p, &c) in self.parents.iter().zip(&self.parent_cards) {
            idx = idx * c + assignment[p] as usize;
        }
        &self.table[idx * self.card..(idx + 1) * self.card]
    }
}

/// A categorical SCM: DAG structure plus per-node CPTs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CategoricalScm {
    dag: Dag,
    cardinalities: Vec<usize>,
    cpts: Vec<Cpt>,
}

impl CategoricalScm {
    /// Validates that CPTs line up with the DAG: one per node, parent lists
    /// equal to the graph's parent sets, and cardinalities consistent.
    pub fn new(dag: Dag, cardinalities: Vec<usize>, cpts: Vec<Cpt>) -> Result<Self> {
        let n = dag.n();
        if cardinalities.len() != n {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{} cardinalities for {n} nodes",
                cardinalities.len()
            )));
        }
        for (i, &c) in cardinalities.iter().enumerate() {
            if !(2..=256).contains(&c) {
                return Err(Error::InvalidParam(alloc::format!(
                    "node {i}: cardinality {c} outside [2, 256]"
                )));
            }
        }
        if cpts.len() != n {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{} CPTs for {n} nodes",
                cpts.len()
            )));
        }
        for (i, cpt) in cpts.iter().enumerate() {
            if cpt.node() != i {
                return Err(Error::InvalidCpt(alloc::format!(
                    "CPT at position {i} is for node {}",
                    cpt.node()
                )));
            }
            if cpt.card() != cardinalities[i] {
                return Err(Error::DimensionMismatch(alloc::format!(
                    "node {i}: CPT cardinality {} vs declared {}",
                    cpt.card(),
                    cardinalities[i]
                )));
            }
            if cpt.parents() != dag.parents(i).as_slice() {
                return Err(Error::InvalidCpt(alloc::format!(
                    "node {i}: CPT parents {:?} do not match graph parents {:?}",
                    cpt.parents(),
                    dag.parents(i)
                )));
            }
            let expected: Vec<usize> = cpt.parents().iter().map(|&p| cardinalities[p]).collect();
            if cpt.parent_cards() != expected.as_slice() {
                return Err(Error::DimensionMismatch(alloc::format!(
                    "node {i}: CPT parent cardinalities {:?} vs declared {:?}",
                    cpt.parent_cards(),
                    expected
                )));
            }
        }
        Ok(CategoricalScm {
            dag,
            cardinalities,
            cpts,
        })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn n(&self) -> usize {
        self.dag.n()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn cpt(&self, node: usize) -> &Cpt {
        &self.cpts[node]
    }

    pub fn cpts(&self) -> &[Cpt] {
        &self.cpts
    }
}

/// A batch of sampled rows, optionally tagged with the intervened node.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    nodes: usize,
    values: Vec<u8>,
    intervention: Option<usize>,
}

impl Dataset {
    pub fn new(nodes: usize, values: Vec<u8>, intervention: Option<usize>) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::InvalidParam(alloc::string::String::from(
                "dataset needs at least one column",
            )));
        }
        if values.len() % nodes != 0 {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{} values not divisible by {nodes} columns",
                values.len()
            )));
        }
        if let Some(t) = intervention {
            if t >= nodes {
                return Err(Error::NodeOutOfRange { node: t, n: nodes });
            }
        }
        Ok(Dataset {
            nodes,
            values,
            intervention,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn intervention(&self) -> Option<usize> {
        self.intervention
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u8] {
        &self.values[r * self.nodes..(r + 1) * self.nodes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.values.chunks_exact(self.nodes)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Appends all rows of `other` (same width and intervention tag not
    /// required; the tag of `self` is kept).
    pub fn extend_from(&mut self, other: &Dataset) -> Result<()> {
        if other.nodes != self.nodes {
            return Err(Error::DimensionMismatch(alloc::format!(
                "cannot append {}-column rows to {}-column dataset",
                other.nodes,
                self.nodes
            )));
        }
        self.values.extend_from_slice(&other.values);
        Ok(())
    }
}

#[inline]
fn draw_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> u8 {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return k as u8;
        }
    }
    (probs.len() - 1) as u8
}

fn sample_rows<R: Rng + ?Sized>(
    scm: &CategoricalScm,
    intervened: Option<usize>,
    count: usize,
    rng: &mut R,
) -> Dataset {
    let n = scm.n();
    let order = scm.dag.topological_order();
    let mut values = vec![0u8; count * n];
    for r in 0..count {
        let row = &mut values[r * n..(r + 1) * n];
        for &v in &order {
            row[v] = if intervened == Some(v) {
                rng.random_range(0..scm.cardinalities[v]) as u8
            } else {
                // Parents precede v in topological order, so their entries
                // are already filled in.
                draw_categorical(scm.cpts[v].row_for(row), rng)
            };
        }
    }
    Dataset {
        nodes: n,
        values,
        intervention: intervened,
    }
}

/// Draws `count` observational rows by ancestral sampling.
pub fn ancestral_sample<R: Rng + ?Sized>(
    scm: &CategoricalScm,
    count: usize,
    rng: &mut R,
) -> Dataset {
    sample_rows(scm, None, count, rng)
}

/// Draws `count` rows under a uniform intervention on `target`: the
/// target's mechanism is replaced by the uniform distribution, all other
/// CPTs still apply.
pub fn intervene_sample<R: Rng + ?Sized>(
    scm: &CategoricalScm,
    target: usize,
    count: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if target >= scm.n() {
        return Err(Error::NodeOutOfRange {
            node: target,
            n: scm.n(),
        });
    }
    Ok(sample_rows(scm, Some(target), count, rng))
}

/// Fills every CPT row with an independent symmetric-Dirichlet draw of
/// concentration `concentration` (small values give near-deterministic
/// mechanisms, large values near-uniform ones).
pub fn random_cpt_scm<R: Rng + ?Sized>(
    dag: &Dag,
    cardinalities: &[usize],
    concentration: f64,
    rng: &mut R,
) -> Result<CategoricalScm> {
    if !(concentration > 0.0) || !concentration.is_finite() {
        return Err(Error::InvalidParam(alloc::format!(
            "Dirichlet concentration must be positive and finite, got {concentration}"
        )));
    }
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|_| Error::InvalidParam(alloc::format!("bad Gamma shape {concentration}")))?;
    let n = dag.n();
    if cardinalities.len() != n {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{} cardinalities for {n} nodes",
            cardinalities.len()
        )));
    }
    let mut cpts = Vec::with_capacity(n);
    for node in 0..n {
        let parents = dag.parents(node);
        let parent_cards: Vec<usize> = parents.iter().map(|&p| cardinalities[p]).collect();
        let card = cardinalities[node];
        let rows = state_count(&parent_cards).ok_or_else(|| {
            Error::EnumerationBound(alloc::format!("node {node}: parent state space overflows"))
        })?;
        let table = random_cpt_rows(rows, card, &gamma, rng);
        cpts.push(Cpt::new(node, parents, parent_cards, card, table)?);
    }
    CategoricalScm::new(dag.clone(), cardinalities.to_vec(), cpts)
}

fn random_cpt_rows<R: Rng + ?Sized>(
    rows: usize,
    card: usize,
    gamma: &Gamma<f64>,
    rng: &mut R,
) -> Vec<f64> {
    let mut table = Vec::with_capacity(rows * card);
    for _ in 0..rows {
        // Dirichlet draw via normalized Gamma variates; resample the
        // rare all-underflow row rather than emit a zero-sum row.
        loop {
            let draw: Vec<f64> = (0..card).map(|_| gamma.sample(rng)).collect();
            let sum: f64 = draw.iter().sum();
            if sum.is_finite() && sum > 1e-12 {
                table.extend(draw.into_iter().map(|g| g / sum));
                break;
            }
        }
    }
    table
}

/// Largest total-variation swing a single parent exerts on `table`:
/// the maximum TV distance between rows whose parent configurations
/// differ only in `parent_idx`.
fn parent_effect(table: &[f64], parent_cards: &[usize], card: usize, parent_idx: usize) -> f64 {
    let rows = table.len() / card;
    let mut best = 0.0f64;
    for r1 in 0..rows {
        let c1 = index_to_config(r1, parent_cards);
        for r2 in r1 + 1..rows {
            let c2 = index_to_config(r2, parent_cards);
            let differs_elsewhere = c1
                .iter()
                .zip(&c2)
                .enumerate()
                .any(|(k, (a, b))| k != parent_idx && a != b);
            if differs_elsewhere || c1[parent_idx] == c2[parent_idx] {
                continue;
            }
            let tv = 0.5
                * table[r1 * card..(r1 + 1) * card]
                    .iter()
                    .zip(&table[r2 * card..(r2 + 1) * card])
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
            best = best.max(tv);
        }
    }
    best
}

/// As [`random_cpt_scm`], but every edge is guaranteed a detectable
/// effect: a node's table is resampled until each of its parents moves the
/// conditional by at least `min_effect` total variation between some pair
/// of parent configurations. A vanishing effect makes the edge
/// unidentifiable at any sample size, which random Dirichlet rows produce
/// surprisingly often at low cardinality.
pub fn random_cpt_scm_with_min_effect<R: Rng + ?Sized>(
    dag: &Dag,
    cardinalities: &[usize],
    concentration: f64,
    min_effect: f64,
    rng: &mut R,
) -> Result<CategoricalScm> {
    if !(0.0..1.0).contains(&min_effect) {
        return Err(Error::InvalidParam(alloc::format!(
            "min_effect {min_effect} outside [0, 1)"
        )));
    }
    if !(concentration > 0.0) || !concentration.is_finite() {
        return Err(Error::InvalidParam(alloc::format!(
            "Dirichlet concentration must be positive and finite, got {concentration}"
        )));
    }
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|_| Error::InvalidParam(alloc::format!("bad Gamma shape {concentration}")))?;
    let n = dag.n();
    if cardinalities.len() != n {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{} cardinalities for {n} nodes",
            cardinalities.len()
        )));
    }
    const MAX_ATTEMPTS: usize = 200;
    let mut cpts = Vec::with_capacity(n);
    for node in 0..n {
        let parents = dag.parents(node);
        let parent_cards: Vec<usize> = parents.iter().map(|&p| cardinalities[p]).collect();
        let card = cardinalities[node];
        let rows = state_count(&parent_cards).ok_or_else(|| {
            Error::EnumerationBound(alloc::format!("node {node}: parent state space overflows"))
        })?;
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let table = random_cpt_rows(rows, card, &gamma, rng);
            let ok = (0..parents.len())
                .all(|p| parent_effect(&table, &parent_cards, card, p) >= min_effect);
            if ok {
                accepted = Some(table);
                break;
            }
        }
        let Some(table) = accepted else {
            return Err(Error::InvalidParam(alloc::format!(
                "node {node}: no table reached min_effect {min_effect} in {MAX_ATTEMPTS} draws"
            )));
        };
        cpts.push(Cpt::new(node, parents, parent_cards, card, table)?);
    }
    CategoricalScm::new(dag.clone(), cardinalities.to_vec(), cpts)
}

/// Exact joint distribution by full enumeration, indexed by
/// [`config_index`] over all nodes. With `intervention = Some(k)` the
/// post-interventional joint is returned (node `k`'s factor replaced by
/// uniform). Errors once the state space exceeds [`ENUMERATION_LIMIT`].
pub fn exact_joint(scm: &CategoricalScm, intervention: Option<usize>) -> Result<Vec<f64>> {
    let states = state_count(scm.cardinalities()).filter(|&s| s <= ENUMERATION_LIMIT);
    let Some(states) = states else {
        return Err(Error::EnumerationBound(alloc::format!(
            "joint over {:?} states",
            scm.cardinalities()
        )));
    };
    if let Some(t) = intervention {
        if t >= scm.n() {
            return Err(Error::NodeOutOfRange {
                node: t,
                n: scm.n(),
            });
        }
    }
    let mut joint = Vec::with_capacity(states);
    for idx in 0..states {
        let assignment = index_to_config(idx, scm.cardinalities());
        let mut p = 1.0;
        for v in 0..scm.n() {
            p *= if intervention == Some(v) {
                1.0 / scm.cardinalities()[v] as f64
            } else {
                scm.cpts[v].row_for(&assignment)[assignment[v] as usize]
            };
        }
        joint.push(p);
    }
    Ok(joint)
}
