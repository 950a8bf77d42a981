//! Deterministic, platform-independent random streams.
//!
//! A stream is ChaCha20 keyed by `SHA-256("idec-stream-v1" ‖ seed_le ‖ label)`.
//! ChaCha20 is a counter-mode generator, so a given (seed, label) produces
//! the same draws on every platform and every run. Uniform floats take the
//! top 53 bits of a `u64` draw.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

const STREAM_DOMAIN: &[u8] = b"idec-stream-v1";
const SEED_DOMAIN: &[u8] = b"idec-seed-v1";

#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha20Rng,
}

impl StreamRng {
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        // Rejection sampling keeps the draw exactly uniform.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }
}

pub fn make_rng(seed: u64, stream_label: &str) -> StreamRng {
    let mut h = Sha256::new();
    h.update(STREAM_DOMAIN);
    h.update(seed.to_le_bytes());
    h.update(stream_label.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    StreamRng {
        inner: ChaCha20Rng::from_seed(key),
    }
}

/// Derives a child seed from a base seed and a path of labels, e.g.
/// `derive_seed(s, &["cell", "8", "q17"])`.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(SEED_DOMAIN);
    h.update(base.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let out = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&out[..8]);
    u64::from_le_bytes(b)
}
