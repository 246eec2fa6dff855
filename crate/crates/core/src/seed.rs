//! Platform-stable seed derivation.

use sha2::{Digest, Sha256};

/// Folds labelled parts into a 64-bit seed. Each part is length-prefixed so
/// `("ab", "c")` and `("a", "bc")` differ.
#[derive(Debug, Clone, Default)]
pub struct SeedMixer(Sha256);

impl SeedMixer {
    pub fn new(domain: &str) -> Self {
        let mut m = Self(Sha256::new());
        m = m.bytes(domain.as_bytes());
        m
    }

    pub fn bytes(mut self, part: &[u8]) -> Self {
        self.0.update((part.len() as u64).to_le_bytes());
        self.0.update(part);
        self
    }

    pub fn str(self, part: &str) -> Self {
        self.bytes(part.as_bytes())
    }

    pub fn u64(self, part: u64) -> Self {
        self.bytes(&part.to_le_bytes())
    }

    pub fn finish(self) -> u64 {
        let digest = self.0.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
    }
}
