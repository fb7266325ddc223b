//! Feature-based meta-embeddings with adversarial alignment.
//!
//! Several embedding sources are projected into a common space and combined
//! by attention whose logits also see explicit word features (length,
//! frequency, shape). A discriminator trained through a gradient-reversal
//! node pushes the projected sources to be indistinguishable. Downstream
//! models are a BiLSTM-CRF tagger and a BiLSTM max-pool NLI classifier.

pub mod adversarial;
pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod embeddings;
mod error;
pub mod features;
pub mod harness;
pub mod meta;
pub mod models;
pub mod nn;

pub use error::{Error, Result};

/// Generator used for every random draw; ChaCha output is platform independent.
pub type RunRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> RunRng {
    use rand::SeedableRng;
    RunRng::seed_from_u64(seed)
}
