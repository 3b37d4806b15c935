//! Keyed random streams.
//!
//! Every random draw in the pipeline comes from a ChaCha stream keyed by
//! `(seed, domain, query_id)` with the sample index selecting the stream
//! number, so results do not depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const SAMPLER_DOMAIN: &str = "pl-sample";
pub const ORACLE_DOMAIN: &str = "oracle";

pub fn stream_rng(seed: u64, domain: &str, query_id: &str, index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((domain.len() as u64).to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update((query_id.len() as u64).to_le_bytes());
    hasher.update(query_id.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
