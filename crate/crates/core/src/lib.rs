pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod random;
pub mod sampler;
pub mod simulate;

pub use corpus::{CorpusFormat, CorpusSplit, NestedCorpus, Page, Site, Vocabulary};
pub use error::{Error, Result};
pub use model::{ModelSpec, ModelState, PosteriorSummary, Variant};
