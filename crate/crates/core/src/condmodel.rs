//! Learned conditional distributions, one model per node.
//!
//! Every model answers the same query: given a binary parent mask (column
//! `i` of a candidate adjacency) and a full assignment row, what is the
//! distribution of node `i`? Two parameterizations are provided:
//!
//! * **table** — one logit row per full configuration of all other nodes;
//!   masked-out parents are marginalized uniformly. Exact and cheap to
//!   differentiate, but exponential in `n`, so it serves small systems and
//!   test oracles.
//! * **net** — per-parent category embeddings (masked-out parents
//!   contribute a learned "absent" embedding) feeding a two-layer
//!   leaky-ReLU perceptron. This is the working model for real runs.
//!
//! Gradients are hand-rolled reverse mode; [`fit_distribution`]
//! (ConditionalModelSet::fit_distribution) trains all nodes jointly on
//! masks drawn from a [`GraphBelief`].

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::Dag;
use crate::graphbelief::GraphBelief;
use crate::math::{exp, ln, log_sum_exp};
use crate::optim::{AdamConfig, AdamState};
use crate::scm::{state_count, CategoricalScm, Dataset};
use crate::{Error, Result};

pub const DEFAULT_EMBED_DIM: usize = 8;
pub const DEFAULT_HIDDEN_DIM: usize = 64;
pub const LEAKY_SLOPE: f64 = 0.1;
/// Maximum number of entries in one full conditional table.
pub const TABLE_LIMIT: usize = 1 << 20;

/// Parameterization of a [`ConditionalModel`], with net shape metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ModelSpec {
    Table,
    Net { embed: usize, hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Layout {
    Table {
        rows: usize,
    },
    Net(NetLayout),
}

#[derive(Debug, Clone, PartialEq)]
struct NetLayout {
    embed: usize,
    hidden: usize,
    /// Nodes other than `node`, ascending; position = input slot.
    others: Vec<usize>,
    /// Offset of each slot's `(card + 1) x embed` block (last row is the
    /// learned "absent" embedding).
    emb_off: Vec<usize>,
    w1_off: usize,
    b1_off: usize,
    w2_off: usize,
    b2_off: usize,
    input_dim: usize,
    out: usize,
}

impl NetLayout {
    fn build(node: usize, cards: &[usize], embed: usize, hidden: usize) -> (NetLayout, usize) {
        let others: Vec<usize> = (0..cards.len()).filter(|&j| j != node).collect();
        let mut emb_off = Vec::with_capacity(others.len());
        let mut off = 0;
        for &j in &others {
            emb_off.push(off);
            off += (cards[j] + 1) * embed;
        }
        let input_dim = others.len() * embed;
        let out = cards[node];
        let w1_off = off;
        let b1_off = w1_off + hidden * input_dim;
        let w2_off = b1_off + hidden;
        let b2_off = w2_off + out * hidden;
        let len = b2_off + out;
        (
            NetLayout {
                embed,
                hidden,
                others,
                emb_off,
                w1_off,
                b1_off,
                w2_off,
                b2_off,
                input_dim,
                out,
            },
            len,
        )
    }
}

/// Log-probabilities of one observed value under single-edge variants of a
/// mask: entry `i` gives the value's log-probability with parent `i` forced
/// present (`with_edge`) or forced absent (`without_edge`). The entry for
/// the modelled node itself is meaningless and set to 0.
#[derive(Debug, Clone)]
pub struct EdgeVariants {
    pub with_edge: Vec<f64>,
    pub without_edge: Vec<f64>,
}

/// Conditional distribution of a single node given any parent set.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalModel {
    node: usize,
    cards: Vec<usize>,
    layout: Layout,
    params: Vec<f64>,
}

impl ConditionalModel {
    /// Zero-initialized full-table model (uniform for every mask).
    pub fn table(node: usize, cards: &[usize]) -> Result<Self> {
        validate_node_cards(node, cards)?;
        let rows = table_rows(node, cards)?;
        Ok(ConditionalModel {
            node,
            cards: cards.to_vec(),
            layout: Layout::Table { rows },
            params: vec![0.0; rows * cards[node]],
        })
    }

    /// Table model whose full-mask conditionals reproduce `probs`, a
    /// `rows x card` row-major table over the configurations of all other
    /// nodes (ascending node order, last varying fastest).
    pub fn table_with_probs(node: usize, cards: &[usize], probs: &[f64]) -> Result<Self> {
        let mut model = ConditionalModel::table(node, cards)?;
        if probs.len() != model.params.len() {
            return Err(Error::DimensionMismatch(alloc::format!(
                "node {node}: {} probabilities for a {}-entry table",
                probs.len(),
                model.params.len()
            )));
        }
        for (logit, &p) in model.params.iter_mut().zip(probs) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidCpt(alloc::format!(
                    "probability {p} outside [0, 1]"
                )));
            }
            *logit = ln(p.max(1e-12));
        }
        Ok(model)
    }

    /// Randomly initialized two-layer perceptron model: affine weights
    /// uniform in `+-1/sqrt(fan_in)`, biases zero, category embeddings
    /// normal with scale 0.1, absent embeddings zero.
    pub fn net<R: Rng + ?Sized>(
        node: usize,
        cards: &[usize],
        embed: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        validate_node_cards(node, cards)?;
        if embed == 0 || hidden == 0 {
            return Err(Error::InvalidParam(alloc::format!(
                "net dimensions must be positive (embed {embed}, hidden {hidden})"
            )));
        }
        let (lay, len) = NetLayout::build(node, cards, embed, hidden);
        let mut params = vec![0.0; len];
        let emb_dist = Normal::new(0.0, 0.1).expect("valid normal");
        for (s, &j) in lay.others.iter().enumerate() {
            // Category rows only; the absent row stays zero.
            let start = lay.emb_off[s];
            for k in 0..cards[j] * embed {
                params[start + k] = emb_dist.sample(rng);
            }
        }
        let a1 = if lay.input_dim > 0 {
            1.0 / crate::math::sqrt(lay.input_dim as f64)
        } else {
            0.0
        };
        for w in &mut params[lay.w1_off..lay.b1_off] {
            *w = (rng.random::<f64>() * 2.0 - 1.0) * a1;
        }
        let a2 = 1.0 / crate::math::sqrt(hidden as f64);
        for w in &mut params[lay.w2_off..lay.b2_off] {
            *w = (rng.random::<f64>() * 2.0 - 1.0) * a2;
        }
        Ok(ConditionalModel {
            node,
            cards: cards.to_vec(),
            layout: Layout::Net(lay),
            params,
        })
    }

    /// Rebuilds a model from checkpoint parts, validating parameter count.
    pub fn from_spec(node: usize, cards: &[usize], spec: ModelSpec, params: Vec<f64>) -> Result<Self> {
        validate_node_cards(node, cards)?;
        let layout = match spec {
            ModelSpec::Table => Layout::Table {
                rows: table_rows(node, cards)?,
            },
            ModelSpec::Net { embed, hidden } => {
                if embed == 0 || hidden == 0 {
                    return Err(Error::InvalidParam(alloc::format!(
                        "net dimensions must be positive (embed {embed}, hidden {hidden})"
                    )));
                }
                Layout::Net(NetLayout::build(node, cards, embed, hidden).0)
            }
        };
        let expected = match &layout {
            Layout::Table { rows } => rows * cards[node],
            Layout::Net(l) => l.b2_off + l.out,
        };
        if params.len() != expected {
            return Err(Error::DimensionMismatch(alloc::format!(
                "node {node}: {} parameters, layout expects {expected}",
                params.len()
            )));
        }
        Ok(ConditionalModel {
            node,
            cards: cards.to_vec(),
            layout,
            params,
        })
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn card(&self) -> usize {
        self.cards[self.node]
    }

    pub fn spec(&self) -> ModelSpec {
        match &self.layout {
            Layout::Table { .. } => ModelSpec::Table,
            Layout::Net(l) => ModelSpec::Net {
                embed: l.embed,
                hidden: l.hidden,
            },
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Distribution over the node's categories given `mask` (parent set,
    /// indexed by node id; the own-node entry must be false) and `row`
    /// (values of present parents; other entries ignored).
    pub fn dist(&self, mask: &[bool], row: &[u8]) -> Vec<f64> {
        let mut out = vec![0.0; self.card()];
        self.dist_into(mask, row, &mut out);
        out
    }

    fn dist_into(&self, mask: &[bool], row: &[u8], out: &mut [f64]) {
        debug_assert!(!mask[self.node], "own node cannot be its own parent");
        match &self.layout {
            Layout::Table { .. } => self.table_mixture(mask, row, out),
            Layout::Net(lay) => {
                let mut z1 = vec![0.0; lay.hidden];
                let mut z2 = vec![0.0; lay.out];
                self.net_z1(lay, mask, row, &mut z1, None);
                self.net_head(lay, &z1, &mut z2, None);
                softmax_into(&z2, out);
            }
        }
    }

    /// `ln P(value | mask, row)`.
    pub fn log_prob(&self, value: u8, mask: &[bool], row: &[u8]) -> f64 {
        debug_assert!(!mask[self.node]);
        debug_assert!((value as usize) < self.card());
        match &self.layout {
            Layout::Table { .. } => {
                if self.full_mask(mask) {
                    let logits = self.table_row_logits(self.table_index(mask, row, &[]));
                    logits[value as usize] - log_sum_exp(logits)
                } else {
                    let mut p = vec![0.0; self.card()];
                    self.table_mixture(mask, row, &mut p);
                    ln(p[value as usize])
                }
            }
            Layout::Net(lay) => {
                let mut z1 = vec![0.0; lay.hidden];
                let mut z2 = vec![0.0; lay.out];
                self.net_z1(lay, mask, row, &mut z1, None);
                self.net_head(lay, &z1, &mut z2, None);
                z2[value as usize] - log_sum_exp(&z2)
            }
        }
    }

    /// Adds `scale * d log P(value|mask,row) / d params` into `grad` and
    /// returns the log-probability.
    pub fn accumulate_grad_log_prob(
        &self,
        value: u8,
        mask: &[bool],
        row: &[u8],
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        debug_assert_eq!(grad.len(), self.params.len());
        match &self.layout {
            Layout::Table { .. } => self.table_grad(value, mask, row, scale, grad),
            Layout::Net(_) => {
                let mut buf = NetBuffers::for_model(self);
                self.net_grad(value, mask, row, scale, grad, &mut buf)
            }
        }
    }

    /// Convenience wrapper returning `(log_prob, gradient)`.
    pub fn grad_log_prob(&self, value: u8, mask: &[bool], row: &[u8]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let lp = self.accumulate_grad_log_prob(value, mask, row, 1.0, &mut grad);
        (lp, grad)
    }

    /// For every candidate parent `i`, the log-probability of `value` with
    /// `i` forced present and forced absent, all other mask bits as given.
    ///
    /// For the net kind this reuses the shared hidden pre-activation and
    /// only swaps one slot's contribution per variant, which is what makes
    /// the structural-gradient estimators affordable.
    pub fn edge_variant_log_probs(&self, value: u8, mask: &[bool], row: &[u8]) -> EdgeVariants {
        let n = self.cards.len();
        match &self.layout {
            Layout::Table { .. } => {
                let mut with_edge = vec![0.0; n];
                let mut without_edge = vec![0.0; n];
                let mut m: Vec<bool> = mask.to_vec();
                for i in 0..n {
                    if i == self.node {
                        continue;
                    }
                    let orig = m[i];
                    m[i] = true;
                    with_edge[i] = self.log_prob(value, &m, row);
                    m[i] = false;
                    without_edge[i] = self.log_prob(value, &m, row);
                    m[i] = orig;
                }
                EdgeVariants {
                    with_edge,
                    without_edge,
                }
            }
            Layout::Net(lay) => self.net_edge_variants(lay, value, mask, row),
        }
    }

    // ---- table internals ----

    fn full_mask(&self, mask: &[bool]) -> bool {
        mask.iter()
            .enumerate()
            .all(|(j, &m)| j == self.node || m)
    }

    fn table_row_logits(&self, idx: usize) -> &[f64] {
        let c = self.card();
        &self.params[idx * c..(idx + 1) * c]
    }

    /// Row index for a full configuration of the other nodes; `overrides`
    /// supplies values for masked-out nodes during marginalization.
    fn table_index(&self, mask: &[bool], row: &[u8], overrides: &[(usize, u8)]) -> usize {
        let mut idx = 0;
        for (j, &c) in self.cards.iter().enumerate() {
            if j == self.node {
                continue;
            }
            let v = if mask[j] {
                row[j]
            } else {
                overrides
                    .iter()
                    .find(|&&(o, _)| o == j)
                    .map(|&(_, v)| v)
                    .unwrap_or(0)
            };
            idx = idx * c + v as usize;
        }
        idx
    }

    /// Visits every completion of the masked-out nodes, calling `f` with
    /// the table row index of each completion.
    fn for_each_completion(&self, mask: &[bool], row: &[u8], mut f: impl FnMut(usize)) {
        let absent: Vec<usize> = (0..self.cards.len())
            .filter(|&j| j != self.node && !mask[j])
            .collect();
        let mut overrides: Vec<(usize, u8)> = absent.iter().map(|&j| (j, 0u8)).collect();
        loop {
            f(self.table_index(mask, row, &overrides));
            // Odometer over the absent nodes, last varying fastest.
            let mut k = overrides.len();
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                let (j, ref mut v) = overrides[k];
                if (*v as usize) + 1 < self.cards[j] {
                    *v += 1;
                    break;
                }
                *v = 0;
            }
        }
    }

    fn completion_count(&self, mask: &[bool]) -> usize {
        (0..self.cards.len())
            .filter(|&j| j != self.node && !mask[j])
            .map(|j| self.cards[j])
            .product()
    }

    /// Uniform mixture over completions of the masked-out parents.
    fn table_mixture(&self, mask: &[bool], row: &[u8], out: &mut [f64]) {
        let c = self.card();
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut count = 0usize;
        let mut sm = vec![0.0; c];
        self.for_each_completion(mask, row, |idx| {
            softmax_into(self.table_row_logits(idx), &mut sm);
            for (o, &s) in out.iter_mut().zip(&sm) {
                *o += s;
            }
            count += 1;
        });
        let inv = 1.0 / count as f64;
        out.iter_mut().for_each(|v| *v *= inv);
    }

    fn table_grad(
        &self,
        value: u8,
        mask: &[bool],
        row: &[u8],
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let c = self.card();
        let x = value as usize;
        if self.full_mask(mask) {
            // Single row: d log softmax = onehot - softmax.
            let idx = self.table_index(mask, row, &[]);
            let logits = self.table_row_logits(idx);
            let lse = log_sum_exp(logits);
            let g = &mut grad[idx * c..(idx + 1) * c];
            for k in 0..c {
                let p = exp(logits[k] - lse);
                g[k] += scale * (((k == x) as u8 as f64) - p);
            }
            return logits[x] - lse;
        }
        let mut mix = vec![0.0; c];
        self.table_mixture(mask, row, &mut mix);
        let p_val = mix[x];
        let u = self.completion_count(mask) as f64;
        let outer = scale / (u * p_val);
        let mut sm = vec![0.0; c];
        self.for_each_completion(mask, row, |idx| {
            softmax_into(self.table_row_logits(idx), &mut sm);
            let g = &mut grad[idx * c..(idx + 1) * c];
            let sx = sm[x];
            for k in 0..c {
                g[k] += outer * sx * (((k == x) as u8 as f64) - sm[k]);
            }
        });
        ln(p_val)
    }

    // ---- net internals ----

    /// Embedding row for slot `s`: the category row when the parent is
    /// present, the trailing absent row otherwise.
    #[inline]
    fn emb_row(&self, lay: &NetLayout, s: usize, present: Option<u8>) -> &[f64] {
        let j = lay.others[s];
        let cat = match present {
            Some(v) => v as usize,
            None => self.cards[j],
        };
        let off = lay.emb_off[s] + cat * lay.embed;
        &self.params[off..off + lay.embed]
    }

    /// Hidden pre-activation `z1 = b1 + W1 . input`; if `contribs` is
    /// given, also records each slot's present/absent contribution pair
    /// for later single-slot swaps.
    fn net_z1(
        &self,
        lay: &NetLayout,
        mask: &[bool],
        row: &[u8],
        z1: &mut [f64],
        mut contribs: Option<&mut SlotContribs>,
    ) {
        let h = lay.hidden;
        let e = lay.embed;
        z1.copy_from_slice(&self.params[lay.b1_off..lay.b1_off + h]);
        if let Some(c) = contribs.as_deref_mut() {
            c.present.iter_mut().for_each(|v| *v = 0.0);
            c.absent.iter_mut().for_each(|v| *v = 0.0);
        }
        let w1 = &self.params[lay.w1_off..lay.b1_off];
        for (s, &j) in lay.others.iter().enumerate() {
            let emb_p = self.emb_row(lay, s, Some(row[j]));
            let emb_a = self.emb_row(lay, s, None);
            let active_is_present = mask[j];
            for hi in 0..h {
                let wrow = &w1[hi * lay.input_dim + s * e..hi * lay.input_dim + s * e + e];
                let mut dp = 0.0;
                let mut da = 0.0;
                for k in 0..e {
                    dp += wrow[k] * emb_p[k];
                    da += wrow[k] * emb_a[k];
                }
                if let Some(c) = contribs.as_deref_mut() {
                    c.present[s * h + hi] = dp;
                    c.absent[s * h + hi] = da;
                }
                z1[hi] += if active_is_present { dp } else { da };
            }
        }
    }

    /// Leaky-ReLU then output affine: `z2 = b2 + W2 . leaky(z1)`; stores
    /// the activations when `a1_out` is given (needed for backprop).
    fn net_head(&self, lay: &NetLayout, z1: &[f64], z2: &mut [f64], a1_out: Option<&mut [f64]>) {
        let h = lay.hidden;
        let mut a1_local = vec![0.0; h];
        let a1: &mut [f64] = match a1_out {
            Some(buf) => buf,
            None => &mut a1_local,
        };
        for (a, &z) in a1.iter_mut().zip(z1) {
            *a = if z > 0.0 { z } else { LEAKY_SLOPE * z };
        }
        let w2 = &self.params[lay.w2_off..lay.b2_off];
        let b2 = &self.params[lay.b2_off..lay.b2_off + lay.out];
        for c in 0..lay.out {
            let wrow = &w2[c * h..(c + 1) * h];
            let mut acc = b2[c];
            for k in 0..h {
                acc += wrow[k] * a1[k];
            }
            z2[c] = acc;
        }
    }

    fn net_grad(
        &self,
        value: u8,
        mask: &[bool],
        row: &[u8],
        scale: f64,
        grad: &mut [f64],
        buf: &mut NetBuffers,
    ) -> f64 {
        let Layout::Net(lay) = &self.layout else {
            unreachable!("net_grad called on non-net model")
        };
        let (h, e, d) = (lay.hidden, lay.embed, lay.input_dim);
        self.net_z1(lay, mask, row, &mut buf.z1, None);
        self.net_head(lay, &buf.z1, &mut buf.z2, Some(&mut buf.a1));
        let lse = log_sum_exp(&buf.z2);
        let x = value as usize;
        let logp = buf.z2[x] - lse;

        // dz2 = scale * (onehot - softmax).
        for c in 0..lay.out {
            buf.dz2[c] = scale * (((c == x) as u8 as f64) - exp(buf.z2[c] - lse));
        }
        // Output affine.
        let w2 = &self.params[lay.w2_off..lay.b2_off];
        for c in 0..lay.out {
            grad[lay.b2_off + c] += buf.dz2[c];
            let grow = &mut grad[lay.w2_off + c * h..lay.w2_off + (c + 1) * h];
            for k in 0..h {
                grow[k] += buf.dz2[c] * buf.a1[k];
            }
        }
        // Through the activation.
        for k in 0..h {
            let mut da = 0.0;
            for c in 0..lay.out {
                da += w2[c * h + k] * buf.dz2[c];
            }
            buf.dz1[k] = da * if buf.z1[k] > 0.0 { 1.0 } else { LEAKY_SLOPE };
            grad[lay.b1_off + k] += buf.dz1[k];
        }
        // Input vector (per-slot embedding rows) for the W1 gradient.
        for (s, &j) in lay.others.iter().enumerate() {
            let emb = self.emb_row(lay, s, if mask[j] { Some(row[j]) } else { None });
            buf.input[s * e..(s + 1) * e].copy_from_slice(emb);
        }
        let w1 = &self.params[lay.w1_off..lay.b1_off];
        buf.dx.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..h {
            let dz = buf.dz1[k];
            let wrow = &w1[k * d..(k + 1) * d];
            let grow = &mut grad[lay.w1_off + k * d..lay.w1_off + (k + 1) * d];
            for t in 0..d {
                grow[t] += dz * buf.input[t];
                buf.dx[t] += dz * wrow[t];
            }
        }
        // Scatter input gradient into the embedding rows actually used.
        for (s, &j) in lay.others.iter().enumerate() {
            let cat = if mask[j] {
                row[j] as usize
            } else {
                self.cards[j]
            };
            let off = lay.emb_off[s] + cat * e;
            let gslice = &mut grad[off..off + e];
            for k in 0..e {
                gslice[k] += buf.dx[s * e + k];
            }
        }
        logp
    }

    fn net_edge_variants(
        &self,
        lay: &NetLayout,
        value: u8,
        mask: &[bool],
        row: &[u8],
    ) -> EdgeVariants {
        let n = self.cards.len();
        let h = lay.hidden;
        let mut contribs = SlotContribs {
            present: vec![0.0; lay.others.len() * h],
            absent: vec![0.0; lay.others.len() * h],
        };
        let mut z1 = vec![0.0; h];
        self.net_z1(lay, mask, row, &mut z1, Some(&mut contribs));
        let mut z2 = vec![0.0; lay.out];
        self.net_head(lay, &z1, &mut z2, None);
        let base_logp = z2[value as usize] - log_sum_exp(&z2);

        let mut with_edge = vec![0.0; n];
        let mut without_edge = vec![0.0; n];
        let mut z1_var = vec![0.0; h];
        for (s, &j) in lay.others.iter().enumerate() {
            let cp = &contribs.present[s * h..(s + 1) * h];
            let ca = &contribs.absent[s * h..(s + 1) * h];
            // One of the two variants is the base mask itself; only the
            // flipped one needs a fresh head pass.
            let (base_contrib, alt_contrib) = if mask[j] { (cp, ca) } else { (ca, cp) };
            for k in 0..h {
                z1_var[k] = z1[k] - base_contrib[k] + alt_contrib[k];
            }
            self.net_head(lay, &z1_var, &mut z2, None);
            let alt_logp = z2[value as usize] - log_sum_exp(&z2);
            if mask[j] {
                with_edge[j] = base_logp;
                without_edge[j] = alt_logp;
            } else {
                with_edge[j] = alt_logp;
                without_edge[j] = base_logp;
            }
        }
        EdgeVariants {
            with_edge,
            without_edge,
        }
    }
}

struct SlotContribs {
    present: Vec<f64>,
    absent: Vec<f64>,
}

struct NetBuffers {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    dz2: Vec<f64>,
    dz1: Vec<f64>,
    input: Vec<f64>,
    dx: Vec<f64>,
}

impl NetBuffers {
    fn for_model(model: &ConditionalModel) -> NetBuffers {
        let (h, d, out) = match &model.layout {
            Layout::Net(l) => (l.hidden, l.input_dim, l.out),
            Layout::Table { .. } => (0, 0, 0),
        };
        NetBuffers {
            z1: vec![0.0; h],
            a1: vec![0.0; h],
            z2: vec![0.0; out],
            dz2: vec![0.0; out],
            dz1: vec![0.0; h],
            input: vec![0.0; d],
            dx: vec![0.0; d],
        }
    }
}

fn validate_node_cards(node: usize, cards: &[usize]) -> Result<()> {
    if cards.is_empty() {
        return Err(Error::TooFewNodes { n: 0, min: 1 });
    }
    if node >= cards.len() {
        return Err(Error::NodeOutOfRange {
            node,
            n: cards.len(),
        });
    }
    for (i, &c) in cards.iter().enumerate() {
        if !(2..=256).contains(&c) {
            return Err(Error::InvalidParam(alloc::format!(
                "node {i}: cardinality {c} outside [2, 256]"
            )));
        }
    }
    Ok(())
}

fn table_rows(node: usize, cards: &[usize]) -> Result<usize> {
    let other_cards: Vec<usize> = (0..cards.len())
        .filter(|&j| j != node)
        .map(|j| cards[j])
        .collect();
    let rows = state_count(&other_cards)
        .filter(|&r| r.saturating_mul(cards[node]) <= TABLE_LIMIT)
        .ok_or_else(|| {
            Error::EnumerationBound(alloc::format!(
                "full table for node {node} over cards {cards:?} exceeds {TABLE_LIMIT} entries"
            ))
        })?;
    Ok(rows)
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        let v = exp(z - m);
        *o = v;
        sum += v;
    }
    let inv = 1.0 / sum;
    out.iter_mut().for_each(|v| *v *= inv);
}

/// The per-node models of one system, with their optimizer states.
#[derive(Debug, Clone)]
pub struct ConditionalModelSet {
    cards: Vec<usize>,
    models: Vec<ConditionalModel>,
    opt: Vec<AdamState>,
}

impl ConditionalModelSet {
    pub fn table_set(cards: &[usize]) -> Result<Self> {
        let models = (0..cards.len())
            .map(|i| ConditionalModel::table(i, cards))
            .collect::<Result<Vec<_>>>()?;
        Self::from_models(models)
    }

    pub fn net_set<R: Rng + ?Sized>(
        cards: &[usize],
        embed: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let models = (0..cards.len())
            .map(|i| ConditionalModel::net(i, cards, embed, hidden, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_models(models)
    }

    /// Table models whose full-mask conditionals equal the SCM's CPTs
    /// (rows replicated across non-parent configurations). Useful as an
    /// exactly known conditional oracle in small systems.
    pub fn table_from_scm(scm: &CategoricalScm) -> Result<Self> {
        let cards = scm.cardinalities();
        let n = cards.len();
        let models = (0..n)
            .map(|i| {
                let rows = table_rows(i, cards)?;
                let card = cards[i];
                let mut probs = vec![0.0; rows * card];
                let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let other_cards: Vec<usize> = others.iter().map(|&j| cards[j]).collect();
                let mut assignment = vec![0u8; n];
                for r in 0..rows {
                    let cfg = crate::scm::index_to_config(r, &other_cards);
                    for (k, &j) in others.iter().enumerate() {
                        assignment[j] = cfg[k];
                    }
                    let p = scm.cpt(i).row_for(&assignment);
                    probs[r * card..(r + 1) * card].copy_from_slice(p);
                }
                ConditionalModel::table_with_probs(i, cards, &probs)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_models(models)
    }

    /// Wraps externally built models (e.g. a loaded checkpoint); optimizer
    /// state starts fresh.
    pub fn from_models(models: Vec<ConditionalModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::TooFewNodes { n: 0, min: 1 });
        }
        let cards = models[0].cards().to_vec();
        for (i, m) in models.iter().enumerate() {
            if m.node() != i {
                return Err(Error::InvalidParam(alloc::format!(
                    "model at position {i} is for node {}",
                    m.node()
                )));
            }
            if m.cards() != cards.as_slice() {
                return Err(Error::DimensionMismatch(alloc::format!(
                    "model {i} disagrees on cardinalities"
                )));
            }
        }
        let opt = models.iter().map(|m| AdamState::new(m.param_len())).collect();
        Ok(ConditionalModelSet { cards, models, opt })
    }

    pub fn n(&self) -> usize {
        self.models.len()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn model(&self, i: usize) -> &ConditionalModel {
        &self.models[i]
    }

    pub fn models(&self) -> &[ConditionalModel] {
        &self.models
    }

    /// Draws `count` rows from the models composed along `dag`, with an
    /// optional uniform intervention.
    pub fn sample_rows_under<R: Rng + ?Sized>(
        &self,
        dag: &Dag,
        intervention: Option<usize>,
        count: usize,
        rng: &mut R,
    ) -> Result<Dataset> {
        let n = self.n();
        if dag.n() != n {
            return Err(Error::DimensionMismatch(alloc::format!(
                "graph has {} nodes, models {n}",
                dag.n()
            )));
        }
        if let Some(t) = intervention {
            if t >= n {
                return Err(Error::NodeOutOfRange { node: t, n });
            }
        }
        let order = dag.topological_order();
        let masks: Vec<Vec<bool>> = (0..n).map(|j| dag.parent_mask(j)).collect();
        let mut values = vec![0u8; count * n];
        let mut dist = vec![0.0; self.cards.iter().copied().max().unwrap_or(2)];
        for r in 0..count {
            let row_range = r * n..(r + 1) * n;
            for &v in &order {
                let val = if intervention == Some(v) {
                    rng.random_range(0..self.cards[v]) as u8
                } else {
                    let card = self.cards[v];
                    let row = &values[row_range.clone()];
                    self.models[v].dist_into(&masks[v], row, &mut dist[..card]);
                    draw_from(&dist[..card], rng)
                };
                values[r * n + v] = val;
            }
        }
        Dataset::new(n, values, intervention)
    }

    /// Joint log-probability of one full row under the models composed
    /// along `dag`; an intervened node contributes its uniform term.
    pub fn row_log_prob_under(&self, dag: &Dag, intervention: Option<usize>, row: &[u8]) -> f64 {
        let mut total = 0.0;
        for j in 0..self.n() {
            total += if intervention == Some(j) {
                -ln(self.cards[j] as f64)
            } else {
                self.models[j].log_prob(row[j], &dag.parent_mask(j), row)
            };
        }
        total
    }

    /// Trains all models on `data` for `iters` steps of minibatch gradient
    /// descent (indices drawn with replacement), with parent masks
    /// resampled per sample and node from the belief's edge probabilities
    /// (`masks_per_sample` draws each, averaged). Returns the per-step
    /// mean negative log-likelihood per node.
    ///
    /// If `data` carries an intervention tag, that node's conditional is
    /// skipped — its mechanism did not generate the recorded values.
    #[allow(clippy::too_many_arguments)]
    pub fn fit_distribution<R: Rng + ?Sized>(
        &mut self,
        belief: &GraphBelief,
        data: &Dataset,
        iters: usize,
        batch: usize,
        lr: f64,
        weight_decay: f64,
        masks_per_sample: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let n = self.n();
        if belief.n() != n || data.nodes() != n {
            return Err(Error::DimensionMismatch(alloc::format!(
                "belief over {} and data over {} nodes for {n} models",
                belief.n(),
                data.nodes()
            )));
        }
        if data.is_empty() {
            return Err(Error::EmptyData(alloc::string::String::from(
                "fit_distribution needs at least one row",
            )));
        }
        if batch == 0 || masks_per_sample == 0 {
            return Err(Error::InvalidParam(alloc::format!(
                "batch ({batch}) and masks_per_sample ({masks_per_sample}) must be positive"
            )));
        }
        let skip = data.intervention();
        let fitted_nodes = n - usize::from(skip.is_some());
        if fitted_nodes == 0 {
            return Err(Error::EmptyData(alloc::string::String::from(
                "every node is intervened; nothing to fit",
            )));
        }
        let cfg = AdamConfig {
            lr,
            weight_decay,
            ..AdamConfig::default()
        };
        let mut grads: Vec<Vec<f64>> = self
            .models
            .iter()
            .map(|m| vec![0.0; m.param_len()])
            .collect();
        let mut bufs: Vec<NetBuffers> = self.models.iter().map(NetBuffers::for_model).collect();
        let mut mask = vec![false; n];
        let inv = 1.0 / (batch * masks_per_sample) as f64;
        let mut trace = Vec::with_capacity(iters);
        for _ in 0..iters {
            for g in &mut grads {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
            let mut nll = 0.0;
            for _ in 0..batch {
                let row = data.row(rng.random_range(0..data.len()));
                for i in 0..n {
                    if skip == Some(i) {
                        continue;
                    }
                    for _ in 0..masks_per_sample {
                        for (j, m) in mask.iter_mut().enumerate() {
                            *m = j != i && rng.random_bool(belief.edge_prob(j, i));
                        }
                        let model = &self.models[i];
                        let lp = match &model.layout {
                            Layout::Table { .. } => {
                                model.table_grad(row[i], &mask, row, -inv, &mut grads[i])
                            }
                            Layout::Net(_) => {
                                model.net_grad(row[i], &mask, row, -inv, &mut grads[i], &mut bufs[i])
                            }
                        };
                        nll -= lp;
                    }
                }
            }
            for (i, model) in self.models.iter_mut().enumerate() {
                self.opt[i].step(&mut model.params, &grads[i], &cfg);
            }
            trace.push(nll * inv / fitted_nodes as f64);
        }
        Ok(trace)
    }
}

#[inline]
fn draw_from<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> u8 {
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
