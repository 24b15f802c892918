//! Joint syntactic and semantic parsing at desk scale.
//!
//! The crate turns semantic graphs over dependency-parsed sentences into
//! linear action sequences, trains a transformer transducer to predict them
//! (optionally sharing its encoder with a biaffine dependency parser), and
//! scores the results. Everything is deterministic under a fixed seed:
//! training trajectories, checkpoints, and reports reproduce byte for byte.
//!
//! Module map:
//! - [`graph`]: trees, semantic graphs, arborescence conversion,
//!   linearization and its inverse.
//! - [`io`]: corpus readers/writers and the vocabulary.
//! - [`tensor`]: 2-D f64 autograd, the optimizer, parameter containers.
//! - [`model`]: the transformer encoder/decoder, biaffine scorer, pointer
//!   generator, losses, checkpoints.
//! - [`decoding`]: maximum spanning arborescence and greedy graph decoding.
//! - [`metrics`]: attachment scores, semantic triple matching, correlation
//!   and threshold analyses.
//! - [`training`]: the train/search loops and run manifests.

pub mod decoding;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
