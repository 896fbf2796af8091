//! Named-stream seed splitting.
//!
//! Every random draw in the engine is keyed by a root seed plus a path of
//! labels (problem id, prefix digest, draw index, ...). Derivation goes through
//! SHA-256 so the streams are stable across platforms and toolchains, and so
//! that results do not depend on how work is split between threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// One component of a stream path.
#[derive(Debug, Clone, Copy)]
pub enum Label<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Label<'a> {
    fn from(value: &'a str) -> Self {
        Label::Str(value)
    }
}

impl<'a> From<&'a String> for Label<'a> {
    fn from(value: &'a String) -> Self {
        Label::Str(value.as_str())
    }
}

impl From<u64> for Label<'_> {
    fn from(value: u64) -> Self {
        Label::Int(value)
    }
}

impl From<usize> for Label<'_> {
    fn from(value: usize) -> Self {
        Label::Int(value as u64)
    }
}

/// Derives a 64-bit seed for the stream `root / labels[0] / labels[1] / ...`.
pub fn derive_seed(root: u64, labels: &[Label<'_>]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    for label in labels {
        // Tag + length prefix keeps ("ab", "c") distinct from ("a", "bc").
        match label {
            Label::Str(s) => {
                hasher.update([0u8]);
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
            Label::Int(i) => {
                hasher.update([1u8]);
                hasher.update(i.to_le_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// A seeded generator for the named stream.
pub fn stream_rng(root: u64, labels: &[Label<'_>]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, labels))
}

/// Hex digest of a list of step texts; used as a compact prefix key.
pub fn digest_steps<S: AsRef<str>>(steps: &[S]) -> String {
    let mut hasher = Sha256::new();
    for step in steps {
        let s = step.as_ref();
        hasher.update((s.len() as u64).to_le_bytes());
        hasher.update(s.as_bytes());
    }
    to_hex(&hasher.finalize()[..16])
}

/// Hex digest of a single text.
pub fn digest_text(text: &str) -> String {
    to_hex(&Sha256::digest(text.as_bytes())[..16])
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
