//! Joint extraction of (target, opinion span, sentiment) triplets with
//! position-aware tags and a factorized neural CRF.
//!
//! Layers, bottom up:
//!
//! - [`tagging`]: triplets, position-aware tags and the lossless codec.
//! - [`encoder`]: embeddings, BiLSTM, span representations, factor heads.
//! - [`crf`]: sequence scores, forward algorithm, Viterbi, NLL gradients.
//! - [`oracle`]: brute-force enumeration used to check the lattice code.
//! - [`training`] and [`checkpoint`]: Adam training and model files.
//! - [`eval`]: exact and partial scoring, length breakdowns, ensembles.
//! - [`io`]: corpus formats and dataset statistics.

pub mod checkpoint;
pub mod crf;
pub mod embeddings;
pub mod encoder;
pub mod eval;
pub mod io;
pub mod oracle;
pub mod selfcheck;
pub mod synth;
pub mod tagging;
pub mod tensor;
pub mod training;
