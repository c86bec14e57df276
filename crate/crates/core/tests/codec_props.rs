//! Property tests for the frame codec.

mod common;

use proptest::prelude::*;

use s2c_core::bits::Bitstream;
use s2c_core::channel::{distort, ChannelParams};
use s2c_core::codec::{
    base_frame, decode_frame, encode_frame, segment_stream, reassemble_stream, CodecConfig,
    FrameKind, FramePayload,
};

fn kind_strategy() -> impl Strategy<Value = FrameKind> {
    prop_oneof![
        Just(FrameKind::DataQr1),
        Just(FrameKind::DataQr2),
        Just(FrameKind::Ascii),
        Just(FrameKind::Overhead),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// decode(encode(p)) == p for any payload within capacity.
    #[test]
    fn round_trip_is_exact(kind in kind_strategy(), raw in proptest::collection::vec(0u8..=1, 0..529)) {
        let cfg = CodecConfig::default();
        let capacity = cfg.capacity(kind);
        let bits = Bitstream::from_bits(raw[..raw.len().min(capacity)].to_vec()).unwrap();
        let len = bits.len();
        let payload = FramePayload::new(bits, kind);
        let img = encode_frame(&payload, &cfg).unwrap();
        let decoded = decode_frame(&img, kind, &cfg).unwrap();
        prop_assert_eq!(&decoded.bits.as_slice()[..len], payload.bits.as_slice());
        prop_assert!(decoded.bits.as_slice()[len..].iter().all(|&b| b == 0));
    }

    /// Segmentation plus reassembly is the identity once the recorded
    /// length trims the padding.
    #[test]
    fn segmentation_reassembles(raw in proptest::collection::vec(0u8..=1, 0..4000), capacity in 1usize..600) {
        let bits = Bitstream::from_bits(raw).unwrap();
        let payloads = segment_stream(&bits, capacity, FrameKind::DataQr1).unwrap();
        for p in payloads.iter().rev().skip(1) {
            prop_assert_eq!(p.bits.len(), capacity);
        }
        prop_assert_eq!(reassemble_stream(&payloads, bits.len()), bits);
    }

    /// Encoding is a pure function of (payload, cfg).
    #[test]
    fn encode_is_deterministic(kind in kind_strategy(), seed in any::<u64>()) {
        use rand::SeedableRng;
        let cfg = CodecConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let payload = FramePayload::new(Bitstream::random(cfg.capacity(kind), &mut rng), kind);
        prop_assert_eq!(encode_frame(&payload, &cfg).unwrap(), encode_frame(&payload, &cfg).unwrap());
    }
}

/// Blur at sigma 0.8 must not flip any payload cell over 100 seeded payloads.
#[test]
fn round_trip_survives_blur() {
    use rand::SeedableRng;
    let cfg = CodecConfig::default();
    let params = ChannelParams {
        noise_sigma: 0.0,
        blur_sigma_range: (0.8, 0.8),
        ..ChannelParams::identity()
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(404);
    for trial in 0..100u64 {
        let kind = FrameKind::ALL[trial as usize % 4];
        let payload = FramePayload::new(Bitstream::random(cfg.capacity(kind), &mut rng), kind);
        let img = encode_frame(&payload, &cfg).unwrap();
        let blurred = distort(&img, &params, trial);
        assert_eq!(decode_frame(&blurred, kind, &cfg).unwrap(), payload, "trial {trial}");
    }
}

/// QR-style and ASCII-style frames differ by at least the finder-pattern
/// mass, whatever the payloads.
#[test]
fn qr_and_ascii_frames_are_structurally_distinct() {
    use rand::SeedableRng;
    let cfg = CodecConfig::default();
    // Dark pixels of the three finder patterns: 33 dark cells each.
    let dark_finder_cells = 3 * 33;
    let finder_mass = (dark_finder_cells * cfg.cell_px() * cfg.cell_px()) as f64;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for _ in 0..25 {
        let qr = FramePayload::new(
            Bitstream::random(cfg.capacity(FrameKind::DataQr1), &mut rng),
            FrameKind::DataQr1,
        );
        let ascii = FramePayload::new(
            Bitstream::random(cfg.capacity(FrameKind::Ascii), &mut rng),
            FrameKind::Ascii,
        );
        let a = encode_frame(&qr, &cfg).unwrap();
        let b = encode_frame(&ascii, &cfg).unwrap();
        let l1 = a.l1_distance(&b);
        assert!(l1 >= finder_mass, "L1 {l1} below finder mass {finder_mass}");
    }
}

/// The four class exemplars are pairwise distinct images.
#[test]
fn base_frames_are_pairwise_distinct() {
    let cfg = CodecConfig::default();
    let frames: Vec<_> = FrameKind::ALL.iter().map(|&k| base_frame(k, &cfg)).collect();
    for i in 0..frames.len() {
        for j in i + 1..frames.len() {
            assert!(
                frames[i].l1_distance(&frames[j]) > 100.0,
                "{:?} and {:?} are near-identical",
                FrameKind::ALL[i],
                FrameKind::ALL[j]
            );
        }
    }
}
