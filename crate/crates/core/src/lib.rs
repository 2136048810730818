//! Knowledge probing for masked language models.
//!
//! Facts are posed as cloze queries ("Rodmarton is a [MASK] .") and, to make
//! the information need explicit, primed with demonstrations of the same
//! relation drawn either at random or from the subjects nearest to the query
//! subject in embedding space. The crate covers the whole pipeline:
//!
//! * [`corpus`]: LAMA-style facts, templates and vocabularies;
//! * [`prompt`]: template rendering and prompt assembly;
//! * [`sampler`]: random and nearest-neighbour demonstration selection;
//! * [`scorer`]: the backend boundary, with a scripted offline model, an HTTP
//!   client and a response cache;
//! * [`eval`]: probe runs and P@k / MRR / target probability;
//! * [`twc`]: an object-placement game played with LM-derived priors;
//! * [`analogy`]: word-analogy evaluation with primed prompts;
//! * [`report`]: deterministic JSON and CSV output;
//! * [`cli`]: the `lmprobe` command line.

pub mod analogy;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod prompt;
pub mod report;
pub mod sampler;
pub mod scorer;
pub mod seed;
pub mod twc;

pub use error::{Error, Result};
