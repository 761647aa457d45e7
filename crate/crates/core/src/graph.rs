//! Directed acyclic graphs, synthetic graph families, and structural
//! Hamming distance.
//!
//! Adjacency is stored dense and row-major (`adj[i*n + j] = 1` iff the edge
//! `i -> j` is present); every graph here is small enough (tens of nodes)
//! that O(n^2) scans beat pointer-chasing adjacency lists.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::{Error, Result};

/// A directed acyclic graph over nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dag {
    n: usize,
    adj: Vec<u8>,
}

impl Dag {
    /// Builds a DAG from a dense row-major adjacency matrix.
    ///
    /// Fails on wrong length, entries outside {0,1}, self-loops, or cycles.
    pub fn new(n: usize, adj: Vec<u8>) -> Result<Self> {
        if adj.len() != n * n {
            return Err(Error::DimensionMismatch(alloc::format!(
                "adjacency has {} entries, expected {}",
                adj.len(),
                n * n
            )));
        }
        for i in 0..n {
            if adj[i * n + i] != 0 {
                return Err(Error::SelfLoop { node: i });
            }
        }
        if let Some(&bad) = adj.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidCpt(alloc::format!(
                "adjacency entry {bad} is not 0 or 1"
            )));
        }
        if !is_acyclic_adj(n, &adj) {
            return Err(Error::CyclicGraph);
        }
        Ok(Dag { n, adj })
    }

    /// The empty graph on `n` nodes.
    pub fn empty(n: usize) -> Self {
        Dag {
            n,
            adj: vec![0; n * n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![0u8; n * n];
        for &(i, j) in edges {
            if i >= n {
                return Err(Error::NodeOutOfRange { node: i, n });
            }
            if j >= n {
                return Err(Error::NodeOutOfRange { node: j, n });
            }
            adj[i * n + j] = 1;
        }
        Dag::new(n, adj)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j] != 0
    }

    /// Row-major dense adjacency, `n*n` entries of 0/1.
    pub fn adjacency(&self) -> &[u8] {
        &self.adj
    }

    /// Adjacency as nested rows (the JSON wire form).
    pub fn adjacency_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| self.adj[i * self.n..(i + 1) * self.n].to_vec())
            .collect()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(|&v| v as usize).sum()
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.has_edge(i, j)).collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.has_edge(i, j)).collect()
    }

    pub fn in_degree(&self, j: usize) -> usize {
        (0..self.n).filter(|&i| self.has_edge(i, j)).count()
    }

    pub fn max_in_degree(&self) -> usize {
        (0..self.n).map(|j| self.in_degree(j)).max().unwrap_or(0)
    }

    /// Parent mask of node `j`: `mask[i]` is true iff `i -> j`.
    pub fn parent_mask(&self, j: usize) -> Vec<bool> {
        (0..self.n).map(|i| self.has_edge(i, j)).collect()
    }

    /// Topological order; among simultaneously ready nodes, lower indices
    /// come first, so the order is a pure function of the graph.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.n;
        let mut indeg: Vec<usize> = (0..n).map(|j| self.in_degree(j)).collect();
        let mut placed = vec![false; n];
        let mut order = Vec::with_capacity(n);
        for _ in 0..n {
            let next = (0..n)
                .find(|&v| !placed[v] && indeg[v] == 0)
                .expect("Dag invariant guarantees a ready node");
            placed[next] = true;
            order.push(next);
            for j in 0..n {
                if self.has_edge(next, j) {
                    indeg[j] -= 1;
                }
            }
        }
        order
    }

    /// Nodes reachable from `i` by directed paths of length >= 1.
    pub fn descendants(&self, i: usize) -> Vec<bool> {
        let n = self.n;
        let mut seen = vec![false; n];
        let mut stack: Vec<usize> = self.children(i);
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend(self.children(v));
            }
        }
        seen
    }

    /// Plain-text edge list, one `i -> j` per line, row-major order.
    pub fn edge_list_string(&self) -> String {
        let mut s = String::new();
        for (i, j) in self.edges() {
            s.push_str(&alloc::format!("{i} -> {j}\n"));
        }
        s
    }
}

/// Kahn's algorithm on a raw adjacency matrix (any digraph).
pub fn is_acyclic_adj(n: usize, adj: &[u8]) -> bool {
    debug_assert_eq!(adj.len(), n * n);
    let mut indeg: Vec<usize> = (0..n)
        .map(|j| (0..n).filter(|&i| adj[i * n + j] != 0).count())
        .collect();
    let mut removed = vec![false; n];
    for _ in 0..n {
        let Some(v) = (0..n).find(|&v| !removed[v] && indeg[v] == 0) else {
            return false;
        };
        removed[v] = true;
        for j in 0..n {
            if adj[v * n + j] != 0 {
                indeg[j] -= 1;
            }
        }
    }
    true
}

/// Structural Hamming distance between two digraphs given as dense
/// row-major adjacency matrices (self-loops rejected, cycles allowed).
///
/// Counts, over unordered pairs `{i, j}`, the pairs whose edge pattern
/// differs, so a reversed edge costs 1, as does an added or removed edge:
/// the summand is `1(c_ij + c_ji != c'_ij + c'_ji  or  c_ij != c'_ij)`
/// evaluated once per pair with `i > j`.
pub fn shd_adj(n: usize, a: &[u8], b: &[u8]) -> Result<usize> {
    if a.len() != n * n || b.len() != n * n {
        return Err(Error::DimensionMismatch(alloc::format!(
            "adjacency lengths {} and {} for n={n}",
            a.len(),
            b.len()
        )));
    }
    for i in 0..n {
        if a[i * n + i] != 0 || b[i * n + i] != 0 {
            return Err(Error::SelfLoop { node: i });
        }
    }
    let mut dist = 0;
    for i in 0..n {
        for j in 0..i {
            let (c_ij, c_ji) = (a[i * n + j], a[j * n + i]);
            let (d_ij, d_ji) = (b[i * n + j], b[j * n + i]);
            if c_ij + c_ji != d_ij + d_ji || c_ij != d_ij {
                dist += 1;
            }
        }
    }
    Ok(dist)
}

/// [`shd_adj`] over two DAGs of equal size.
pub fn shd(a: &Dag, b: &Dag) -> Result<usize> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "graphs have {} and {} nodes",
            a.n(),
            b.n()
        )));
    }
    shd_adj(a.n(), a.adjacency(), b.adjacency())
}

/// The synthetic ground-truth graph families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum GraphFamily {
    /// Path `0 -> 1 -> ... -> n-1`.
    Chain,
    /// Chain plus the second-order skips `i -> i+2`.
    Bidiag,
    /// All of `0..n-1` point at the single sink `n-1`.
    Collider,
    /// Binary tree (node `v` has parent `(v-1)/2`) plus grandparent edges.
    Jungle,
    /// Every forward edge `i -> j`, `i < j`.
    FullDag,
    /// Each forward edge `i -> j`, `i < j`, included independently with
    /// probability `edge_prob`.
    Random,
}

impl GraphFamily {
    pub const ALL: [GraphFamily; 6] = [
        GraphFamily::Chain,
        GraphFamily::Bidiag,
        GraphFamily::Collider,
        GraphFamily::Jungle,
        GraphFamily::FullDag,
        GraphFamily::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GraphFamily::Chain => "chain",
            GraphFamily::Bidiag => "bidiag",
            GraphFamily::Collider => "collider",
            GraphFamily::Jungle => "jungle",
            GraphFamily::FullDag => "full",
            GraphFamily::Random => "random",
        }
    }
}

impl fmt::Display for GraphFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GraphFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(GraphFamily::Chain),
            "bidiag" => Ok(GraphFamily::Bidiag),
            "collider" => Ok(GraphFamily::Collider),
            "jungle" => Ok(GraphFamily::Jungle),
            "full" | "fulldag" | "full_dag" => Ok(GraphFamily::FullDag),
            "random" => Ok(GraphFamily::Random),
            other => Err(Error::UnknownFamily(String::from(other))),
        }
    }
}

/// Generates a ground-truth DAG from one of the synthetic families.
///
/// `edge_prob` only matters for [`GraphFamily::Random`]; the generator is
/// only consulted for that family, so deterministic families give the same
/// graph regardless of `rng`.
pub fn generate_synthetic<R: Rng + ?Sized>(
    family: GraphFamily,
    n: usize,
    edge_prob: f64,
    rng: &mut R,
) -> Result<Dag> {
    if n < 2 {
        return Err(Error::TooFewNodes { n, min: 2 });
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidParam(alloc::format!(
            "edge_prob {edge_prob} outside [0, 1]"
        )));
    }
    let mut edges: Vec<(usize, usize)> = Vec::new();
    match family {
        GraphFamily::Chain => {
            for i in 0..n - 1 {
                edges.push((i, i + 1));
            }
        }
        GraphFamily::Bidiag => {
            for i in 0..n - 1 {
                edges.push((i, i + 1));
            }
            for i in 0..n.saturating_sub(2) {
                edges.push((i, i + 2));
            }
        }
        GraphFamily::Collider => {
            for i in 0..n - 1 {
                edges.push((i, n - 1));
            }
        }
        GraphFamily::Jungle => {
            for v in 1..n {
                let p = (v - 1) / 2;
                edges.push((p, v));
                if p > 0 {
                    edges.push(((p - 1) / 2, v));
                }
            }
        }
        GraphFamily::FullDag => {
            for i in 0..n {
                for j in i + 1..n {
                    edges.push((i, j));
                }
            }
        }
        GraphFamily::Random => {
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_bool(edge_prob) {
                        edges.push((i, j));
                    }
                }
            }
        }
    }
    Dag::from_edges(n, &edges)
}
