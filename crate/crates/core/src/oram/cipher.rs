//! Deterministic memory-encryption model.
//!
//! Real memory encryption is a tweakable block cipher keyed per machine; all
//! that matters to the adversary is that equal (address, plaintext) pairs
//! give equal ciphertexts. A keyed SHA-256 truncated to 128 bits stands in.

use sha2::{Digest, Sha256};

pub type Tag = u128;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CiphertextModel {
    key: [u8; 16],
}

impl CiphertextModel {
    pub fn new(key: [u8; 16]) -> CiphertextModel {
        CiphertextModel { key }
    }

    pub fn from_seed(seed: u64) -> CiphertextModel {
        let digest = Sha256::new().chain_update(b"cipher-key").chain_update(seed.to_le_bytes()).finalize();
        let mut key = [0u8; 16];
        key.copy_from_slice(&digest[..16]);
        CiphertextModel { key }
    }

    pub fn tag(&self, address: u64, plaintext: &[u8]) -> Tag {
        let digest = Sha256::new()
            .chain_update(self.key)
            .chain_update(address.to_le_bytes())
            .chain_update(plaintext)
            .finalize();
        let mut out = [0u8; 16];
        out.copy_from_slice(&digest[..16]);
        u128::from_le_bytes(out)
    }
}
