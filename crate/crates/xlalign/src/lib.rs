//! Cross-lingual word alignment from parallel corpora: a shared-encoder
//! BiLSTM encoder-decoder with per-language/direction decoders and an
//! InfoNCE-style contrastive sentence objective, evaluated by CSLS retrieval
//! and dictionary P@1.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod contrastive;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
