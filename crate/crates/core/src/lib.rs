//! Desk-scale laboratory for knowledge-based language-model fingerprinting.
//!
//! The pipeline embeds an ownership mark into a tiny autoregressive language
//! model by training it on a private corpus of kinship narratives, then
//! verifies ownership under black-box access by scoring the model's
//! continuations of those narratives against a control set. The crate also
//! carries the full attack battery (input perturbation, fine-tuning, model
//! merging) and the stealth probes used to compare the knowledge-based mark
//! against a conventional trigger-response backdoor.
//!
//! Everything is deterministic: corpora, checkpoints, reports, and whole
//! experiment directories regenerate bit-identically from their seeds.

pub mod attack;
pub mod corpus;
pub mod harness;
pub mod model;
pub mod stealth;
pub mod train;
pub mod verify;

mod util;

pub use util::sha256_hex;
