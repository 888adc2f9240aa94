//! Core of the adaptive video evaluator.
//!
//! Everything in this crate is pure computation over in-memory values: the
//! benchmark data model and splits, the model-backend contract with its cost
//! ledger, the judge agent and its majority vote, the semantic set-matching
//! scorer, the metric family, the prompt-optimization loop and the benchmark
//! harness. File formats, network backends and the command line live in the
//! `ave` crate.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backend;
pub mod dataset;
mod error;
pub mod harness;
pub mod judge;
pub mod matching;
pub mod metrics;
pub mod optimizer;
pub mod stub;
pub mod taxonomy;

pub use error::{Error, Result};

/// Stateless 64-bit mixer used to derive child seeds (per judge run, per
/// episode) from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> alloc::string::String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
