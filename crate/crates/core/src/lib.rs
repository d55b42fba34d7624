//! Compositional subword vocabularies.
//!
//! Every whole-word surface form is a base token plus a small set of
//! transformation vectors (morphological tags and first-letter
//! capitalization). The crate covers lexicon parsing, vocabulary analysis,
//! decomposition maps, offset extraction, composed input and output layers,
//! a small decoder-only language model with distillation, probing and
//! decoding benchmarks.

pub mod decomp;
pub mod lexicon;
pub mod toy;
pub mod vocab;
pub mod transforms;
pub mod compose;
pub mod toylm;
pub mod probe;
pub mod pipeline;
pub mod bench;
pub mod manifest;
pub mod cli;
