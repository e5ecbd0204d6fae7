//! Sequence-labeling engine for name tagging.
//!
//! The model is a Bi-LSTM-CRF tagger whose per-token representations are
//! augmented with attention over supporting sentences retrieved at two
//! scopes: other sentences of the same document, and sentences from
//! topically related documents found through LDA clustering. Gating
//! mechanisms regulate how much of the retrieved evidence flows into the
//! final prediction.

pub mod attention;
pub mod cli;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod model;
pub mod numeric;
pub mod retrieval;
pub mod train;

pub use error::{Error, Result};
