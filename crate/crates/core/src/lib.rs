//! Core algorithms for studying how feature-graph structure governs a GNN's
//! ability to learn pairwise feature interactions.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, experiment
//! orchestration and the command line live in the `featgraph` crate.
//!
//! Modules, bottom-up:
//!
//! * [`dmie`]: disjoint multilinear interaction expressions and their
//!   correspondence with connectivity classes of feature graphs.
//! * [`fgraph`]: feature graphs, interaction labeling, hop distances,
//!   stratified sampling, sibling sets and removal lattices.
//! * [`synth`]: seeded synthetic datasets `sum x_a x_b + sum x_c + noise`.
//! * [`diffkit`]: a small tape-based reverse-mode engine with Adam.
//! * [`gnnmodel`]: the attention message-passing GNN, training, evaluation.
//! * [`mdlselect`]: two-part description lengths of graph-induced pairwise
//!   models and empirical checks of the sparse-graph inequalities.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diffkit;
pub mod dmie;
pub mod fgraph;
pub mod gnnmodel;
pub mod linalg;
pub mod mdlselect;
pub mod rng;
pub mod synth;

pub use dmie::{DmieExpression, FeaturePartition};
pub use fgraph::{Edge, FeatureGraph};
