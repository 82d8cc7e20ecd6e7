//! Seed derivation. Every random decision in the crate draws from a stream
//! derived from (domain, seed, index), so builds and training runs are
//! reproducible and parallel work never shares a generator.

use rand_chacha::ChaCha8Rng;

/// Domain separators; one per independent source of randomness.
pub(crate) mod domain {
    pub const SAMPLE: u32 = 0x726f_7461;
    pub const VALIDATE: u32 = 0x7661_6c69;
    pub const PHANTOM: u32 = 0x7068_616e;
    pub const GLYPH: u32 = 0x676c_7966;
    pub const INIT: u32 = 0x696e_6974;
    pub const SHUFFLE: u32 = 0x7368_7566;
}

/// An independent ChaCha stream for one `(domain, seed, index)` triple.
pub(crate) fn derived_rng(domain: u32, seed: u64, index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut bytes = [0u8; 32];
    bytes[0..4].copy_from_slice(&domain.to_le_bytes());
    bytes[4..12].copy_from_slice(&seed.to_le_bytes());
    bytes[12..20].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}
