//! Cross-lingual compositional embeddings learned from sentence-aligned
//! parallel text.
//!
//! Sentences are represented as the sum of their word vectors. Word vectors
//! for each language are trained jointly so that aligned sentences land close
//! together while randomly drawn non-aligned sentences stay at least a margin
//! further away. The resulting document vectors can be used to train a
//! classifier in one language and apply it in another.

pub mod classifier;
pub mod corpus;
pub mod error;
pub mod model;
pub mod objective;
pub mod seed;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
