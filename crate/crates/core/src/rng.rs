use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for one independent stream under a session seed.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// 64-bit FNV-1a. Stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// RNG stream id for a labelled per-entity generator.
pub fn stream_for(label: &str, id: &str) -> u64 {
    fnv1a(format!("{label}/{id}").as_bytes())
}
