//! Curriculum pre-trained heterogeneous subgraph Transformer for top-N
//! recommendation.

pub mod alias;
pub mod corpus;
pub mod curriculum;
pub mod digest;
pub mod error;
pub mod eval;
pub mod hin;
pub mod metapath;
pub mod model;
pub mod pipeline;
pub mod priority;
pub mod rng;
pub mod sampler;
pub mod subgraph;

pub use error::{Error, Result};
