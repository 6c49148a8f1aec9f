use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Descriptor of a reproducible random sub-stream.
///
/// The generator for a stream is ChaCha20 keyed by
/// `SHA-256(seed_le ‖ 0x00 ‖ label ‖ 0x00 ‖ counter_le)`, so every
/// `(seed, label, counter)` triple maps to the same draws on every platform
/// regardless of the order in which streams are consumed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    label: String,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        RngStream { seed, label: label.into(), counter: 0 }
    }

    /// Derived stream whose label is `<parent>/<suffix>`.
    pub fn child(&self, suffix: impl AsRef<str>) -> Self {
        RngStream {
            seed: self.seed,
            label: format!("{}/{}", self.label, suffix.as_ref()),
            counter: self.counter,
        }
    }

    pub fn with_counter(&self, counter: u64) -> Self {
        RngStream { counter, ..self.clone() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update([0u8]);
        h.update(self.label.as_bytes());
        h.update([0u8]);
        h.update(self.counter.to_le_bytes());
        h.finalize().into()
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn generator(&self) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.key())
    }
}
