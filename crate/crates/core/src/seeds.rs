//! Stable derivation of per-item RNG seeds from a base seed.
//!
//! Every randomized stage draws from a ChaCha generator seeded through this
//! mixer, so a run is a pure function of its configured seed regardless of
//! iteration or thread order.

/// SplitMix64 finalizer; full-period bijection on u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for item `index` of stream `stream`.
pub fn derive(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ stream.wrapping_mul(0xA076_1D64_78BD_642F)).wrapping_add(index))
}

/// Well-known stream tags so call sites cannot collide by accident.
pub mod stream {
    pub const DATASET: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const WEIGHT_INIT: u64 = 3;
    pub const EPOCH_SHUFFLE: u64 = 4;
    pub const CAPTURE: u64 = 5;
    pub const SCHEDULE: u64 = 6;
    pub const LINK_TEXT: u64 = 7;
}
