//! Labeled random substreams.
//!
//! Every stochastic step draws from its own ChaCha8 stream whose 32-byte seed
//! is `SHA-256(master_seed as u64 little-endian ‖ label as UTF-8)`. Labels are
//! slash-separated paths such as `"pairs/eval/video_03"`, so adding a stage or
//! a video never perturbs the streams of existing ones.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

pub fn substream(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(substream_seed(master, label))
}

pub fn substream_seed(master: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

/// A `u64` derived the same way, for APIs that take integer seeds.
pub fn derive_u64(master: u64, label: &str) -> u64 {
    let s = substream_seed(master, label);
    u64::from_le_bytes(s[..8].try_into().unwrap())
}
