//! Core algorithms for active causal structure discovery over categorical
//! structural causal models.
//!
//! The crate provides the pure computational layer: directed graphs and
//! synthetic families ([`graph`]), ground-truth SCMs with tabular CPTs
//! ([`scm`]), learned conditional distributions with hand-rolled
//! reverse-mode gradients ([`condmodel`]), a continuous edge belief with a
//! two-phase acyclic sampler ([`graphbelief`]), score-based structural
//! gradient estimators for the two-stage discovery loop ([`enco`]),
//! intervention-target scoring strategies ([`targeting`]), evaluation
//! metrics ([`metrics`]), and the online acquisition loop itself
//! ([`online`]).
//!
//! Everything here is deterministic given a seed: randomness always enters
//! through an explicit generator, and [`rng::RngFactory`] derives named
//! substreams so that results do not depend on evaluation order. The crate
//! is `no_std`-compatible (with `alloc`); file formats, BIF parsing, and the
//! CLI live in the companion `causalprobe` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod condmodel;
pub mod enco;
pub mod graph;
pub mod math;
pub mod metrics;
pub mod graphbelief;
pub mod online;
pub mod optim;
pub mod rng;
pub mod scm;
pub mod targeting;

use alloc::string::String;
use core::fmt;

/// Error type shared by all core modules.
#[derive(Debug, Clone, PartialEq)]
#[non_exhaustive]
pub enum Error {
    /// A graph family name did not match any known family.
    UnknownFamily(String),
    /// An operation needs at least two nodes (or another stated minimum).
    TooFewNodes { n: usize, min: usize },
    /// Two structures that must agree in size or shape do not.
    DimensionMismatch(String),
    /// A graph that must be acyclic contains a directed cycle.
    CyclicGraph,
    /// An adjacency structure carries a self-loop.
    SelfLoop { node: usize },
    /// A node index is outside `0..n`.
    NodeOutOfRange { node: usize, n: usize },
    /// A CPT or probability table is malformed (row length, normalization,
    /// negative entries, wrong row count).
    InvalidCpt(String),
    /// A parameter value is outside its documented domain.
    InvalidParam(String),
    /// A dataset or batch list that must be non-empty is empty.
    EmptyData(String),
    /// An exact-enumeration routine was asked to enumerate past its
    /// documented size bound.
    EnumerationBound(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::UnknownFamily(name) => write!(f, "unknown graph family `{name}`"),
            Error::TooFewNodes { n, min } => {
                write!(f, "need at least {min} nodes, got {n}")
            }
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::CyclicGraph => write!(f, "graph contains a directed cycle"),
            Error::SelfLoop { node } => write!(f, "self-loop at node {node}"),
            Error::NodeOutOfRange { node, n } => {
                write!(f, "node {node} out of range for {n} nodes")
            }
            Error::InvalidCpt(msg) => write!(f, "invalid CPT: {msg}"),
            Error::InvalidParam(msg) => write!(f, "invalid parameter: {msg}"),
            Error::EmptyData(msg) => write!(f, "empty data: {msg}"),
            Error::EnumerationBound(msg) => write!(f, "enumeration bound exceeded: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
