//! Graph learning toolkit for adsorbate–catalyst systems.
//!
//! The pipeline runs from periodic radius graphs ([`graph`]) through tag-based
//! rewiring ([`rewire`]) and physics-aware atom embeddings ([`embed`]) into
//! invariant message-passing backbones with energy and force heads
//! ([`models`]), trained by the [`harness`] on data from [`data`].

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod elements;
pub mod embed;
pub mod geom;
pub mod graph;
pub mod harness;
pub mod losses;
pub mod matrix;
pub mod models;
pub mod rewire;
pub mod types;

pub use elements::ElementTable;
pub use graph::{build_radius_graph, GraphBuildConfig};
pub use matrix::Matrix;
pub use rewire::RewireStrategy;
pub use types::{make_batch, AtomicSystem, Batch, Edge, Graph};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/rewiring.md")]
    mod rewiring {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
