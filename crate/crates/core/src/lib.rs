//! Local graph clustering on node-attributed graphs.
//!
//! A seed node's cluster is recovered by running weighted flow diffusion on a
//! graph whose edges are reweighted by a Gaussian kernel over node attributes.
//! The diffusion only explores the neighborhood of its solution's support, so
//! the cost depends on the amount of source mass rather than the graph size.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiation.

pub mod attributes;
pub mod clustering;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use graph::NodeSet;
pub use scalar::Scalar;

pub type Graph = graph::Graph<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type AttributeMatrix = attributes::AttributeMatrix<f64>;
pub type AttributeMatrix32 = attributes::AttributeMatrix<f32>;
pub type EdgeWeightView<'a> = attributes::EdgeWeightView<'a, f64>;
pub type SourceSink = diffusion::SourceSink<f64>;
pub type DiffusionConfig = diffusion::DiffusionConfig<f64>;
pub type DiffusionState = diffusion::DiffusionState<f64>;
pub type ClusterResult = clustering::ClusterResult<f64>;
pub type Instance = synth::Instance<f64>;
