//! Political identity analysis of short self-descriptions: corpus
//! preparation, seed lexicon construction, a seeded structural topic model,
//! content similarity analytics and survey-level statistics.

pub mod analytics;
pub mod corpus;
pub mod error;
pub mod groups;
pub mod lexicon;
pub mod stats;
pub mod stm;
pub mod synth;

pub use error::{Error, Result};
