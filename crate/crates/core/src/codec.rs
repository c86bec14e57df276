//! Cell-grid frame codec: bitstreams to displayable barcode frames and back.
//!
//! A frame is a square grid of `grid_cells x grid_cells` cells rendered at
//! `cell_px` pixels per cell. Payload bits map to cells with on-off keying:
//! bit 1 is a black cell, bit 0 a white cell. Two marking-area styles exist:
//!
//! * QR-style frames carry three concentric finder squares at the top-left,
//!   top-right and bottom-left corners, inside a white quiet zone.
//! * ASCII-style frames carry a solid one-cell black border and no finders.
//!
//! The codec is deliberately simple and deterministic: no error-correction
//! codewords and no masking, so `decode(encode(p)) == p` holds exactly on a
//! clean frame.

use thiserror::Error;

use crate::bits::Bitstream;
use crate::image::FrameImage;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("payload capacity must be positive")]
    ZeroCapacity,
    #[error("payload of {len} bits exceeds capacity {capacity}")]
    PayloadOverflow { len: usize, capacity: usize },
    #[error("image is {got_w}x{got_h}, config requires {want}x{want}")]
    DimensionMismatch { got_w: usize, got_h: usize, want: usize },
    #[error("invalid codec config: {reason}")]
    BadConfig { reason: String },
    #[error("text for data frames must be non-empty")]
    EmptyText,
    #[error(transparent)]
    Bits(#[from] crate::bits::BitsError),
}

/// The four frame classes a receiver must tell apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    /// First data-frame class (QR-style marking).
    DataQr1,
    /// Second data-frame class (QR-style marking).
    DataQr2,
    /// Plain bordered grid without finder patterns.
    Ascii,
    /// Periodic synchronization frame (QR-style marking, fixed codeword).
    Overhead,
}

impl FrameKind {
    pub const ALL: [FrameKind; 4] = [
        FrameKind::DataQr1,
        FrameKind::DataQr2,
        FrameKind::Ascii,
        FrameKind::Overhead,
    ];

    /// Stable lowercase name used in file paths and CSV columns.
    pub fn name(self) -> &'static str {
        match self {
            FrameKind::DataQr1 => "qr1",
            FrameKind::DataQr2 => "qr2",
            FrameKind::Ascii => "ascii",
            FrameKind::Overhead => "overhead",
        }
    }

    pub fn from_name(name: &str) -> Option<FrameKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Whether the frame uses QR-style geometry (finders + quiet zone).
    pub fn is_qr_style(self) -> bool {
        !matches!(self, FrameKind::Ascii)
    }
}

/// Geometry of a frame: pixel size, cell grid, finder and quiet-zone sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodecConfig {
    pub frame_px: usize,
    pub grid_cells: usize,
    pub finder_size: usize,
    pub quiet_zone: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { frame_px: 100, grid_cells: 25, finder_size: 7, quiet_zone: 1 }
    }
}

impl CodecConfig {
    pub fn new(
        frame_px: usize,
        grid_cells: usize,
        finder_size: usize,
        quiet_zone: usize,
    ) -> Result<Self, CodecError> {
        let cfg = Self { frame_px, grid_cells, finder_size, quiet_zone };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |reason: String| Err(CodecError::BadConfig { reason });
        if self.grid_cells == 0 || self.frame_px == 0 {
            return bad("frame_px and grid_cells must be positive".into());
        }
        if !self.frame_px.is_multiple_of(self.grid_cells) {
            return bad(format!(
                "frame_px {} not divisible by grid_cells {}",
                self.frame_px, self.grid_cells
            ));
        }
        if self.cell_px() < 3 {
            return bad(format!("cell_px {} too small to sample a center block", self.cell_px()));
        }
        if self.finder_size < 3 || self.finder_size.is_multiple_of(2) {
            return bad(format!("finder_size {} must be odd and >= 3", self.finder_size));
        }
        if self.quiet_zone == 0 {
            return bad("quiet_zone must be at least 1 cell".into());
        }
        // Finders must fit inside the quiet zone without touching each other.
        if 2 * (self.quiet_zone + self.finder_size) > self.grid_cells {
            return bad(format!(
                "finders of {} cells with quiet zone {} do not fit a {}-cell grid",
                self.finder_size, self.quiet_zone, self.grid_cells
            ));
        }
        if self.capacity(FrameKind::DataQr1) == 0 {
            return Err(CodecError::ZeroCapacity);
        }
        Ok(())
    }

    /// Pixels per cell side.
    pub fn cell_px(&self) -> usize {
        self.frame_px / self.grid_cells
    }

    /// Payload cells available for the given frame style.
    pub fn capacity(&self, kind: FrameKind) -> usize {
        let g = self.grid_cells;
        if kind.is_qr_style() {
            let inner = g - 2 * self.quiet_zone;
            inner * inner - 3 * self.finder_size * self.finder_size
        } else {
            (g - 2) * (g - 2)
        }
    }

    /// Role of every cell, row-major over the grid.
    pub fn cell_roles(&self, kind: FrameKind) -> Vec<CellRole> {
        let g = self.grid_cells;
        let mut roles = vec![CellRole::Payload; g * g];
        if kind.is_qr_style() {
            let q = self.quiet_zone;
            for r in 0..g {
                for c in 0..g {
                    if r < q || r >= g - q || c < q || c >= g - q {
                        roles[r * g + c] = CellRole::Quiet;
                    }
                }
            }
            let f = self.finder_size;
            for (r0, c0) in [(q, q), (q, g - q - f), (g - q - f, q)] {
                for dr in 0..f {
                    for dc in 0..f {
                        let dark = finder_cell_is_dark(f, dr, dc);
                        roles[(r0 + dr) * g + (c0 + dc)] =
                            if dark { CellRole::FinderDark } else { CellRole::FinderLight };
                    }
                }
            }
        } else {
            for r in 0..g {
                for c in 0..g {
                    if r == 0 || r == g - 1 || c == 0 || c == g - 1 {
                        roles[r * g + c] = CellRole::Border;
                    }
                }
            }
        }
        roles
    }

    /// Payload cell coordinates in the row-major order bits are laid out.
    pub fn payload_cells(&self, kind: FrameKind) -> Vec<(usize, usize)> {
        let g = self.grid_cells;
        self.cell_roles(kind)
            .iter()
            .enumerate()
            .filter(|(_, role)| **role == CellRole::Payload)
            .map(|(i, _)| (i / g, i % g))
            .collect()
    }
}

/// What a grid cell is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellRole {
    /// White margin cell around a QR-style frame.
    Quiet,
    /// Black border cell of an ASCII-style frame.
    Border,
    FinderDark,
    FinderLight,
    Payload,
}

/// Concentric dark/light finder square: dark outer ring, light ring, dark core.
fn finder_cell_is_dark(size: usize, r: usize, c: usize) -> bool {
    let center = (size - 1) / 2;
    let d = r.abs_diff(center).max(c.abs_diff(center));
    d == center || d + 2 <= center
}

/// Bits destined for one frame, at most `capacity` of them; zero-padded to
/// exactly fill the payload area when rendered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePayload {
    pub bits: Bitstream,
    pub kind: FrameKind,
}

impl FramePayload {
    pub fn new(bits: Bitstream, kind: FrameKind) -> Self {
        Self { bits, kind }
    }
}

/// Splits a bitstream into frame payloads of `capacity` bits each; the last
/// payload may be short (padding is applied at render time). Reassembly needs
/// the original length, which callers record out of band.
pub fn segment_stream(
    bits: &Bitstream,
    capacity: usize,
    kind: FrameKind,
) -> Result<Vec<FramePayload>, CodecError> {
    if capacity == 0 {
        return Err(CodecError::ZeroCapacity);
    }
    Ok(bits
        .as_slice()
        .chunks(capacity)
        .map(|chunk| FramePayload::new(chunk.iter().copied().collect(), kind))
        .collect())
}

/// Concatenates decoded payload bits and trims render padding back to the
/// recorded stream length.
pub fn reassemble_stream(payloads: &[FramePayload], stream_len: usize) -> Bitstream {
    let mut out = Bitstream::new();
    for p in payloads {
        out.extend_from(&p.bits);
    }
    out.truncate(stream_len);
    out
}

/// Renders a payload as a frame image: marking area plus payload cells in
/// row-major order, bit 1 black and bit 0 white.
pub fn encode_frame(payload: &FramePayload, cfg: &CodecConfig) -> Result<FrameImage, CodecError> {
    let capacity = cfg.capacity(payload.kind);
    if payload.bits.len() > capacity {
        return Err(CodecError::PayloadOverflow { len: payload.bits.len(), capacity });
    }
    let cell = cfg.cell_px();
    let mut img = FrameImage::white(cfg.frame_px, cfg.frame_px).expect("positive dimensions");
    let g = cfg.grid_cells;
    let roles = cfg.cell_roles(payload.kind);
    let bits = payload.bits.as_slice();
    let mut next_bit = 0usize;
    for r in 0..g {
        for c in 0..g {
            let dark = match roles[r * g + c] {
                CellRole::Quiet | CellRole::FinderLight => false,
                CellRole::Border | CellRole::FinderDark => true,
                CellRole::Payload => {
                    let bit = bits.get(next_bit).copied().unwrap_or(0);
                    next_bit += 1;
                    bit == 1
                }
            };
            if dark {
                img.fill_rect(c * cell, r * cell, cell, cell, 0.0);
            }
        }
    }
    Ok(img)
}

/// Reads payload bits back from an upright frame by averaging the central
/// `(cell_px - 2)^2` pixels of each payload cell and thresholding at 0.5
/// (dark means bit 1). Geometric registration is out of scope here; the sync
/// layer hands this function registered frames.
pub fn decode_frame(
    img: &FrameImage,
    kind: FrameKind,
    cfg: &CodecConfig,
) -> Result<FramePayload, CodecError> {
    if img.width() != cfg.frame_px || img.height() != cfg.frame_px {
        return Err(CodecError::DimensionMismatch {
            got_w: img.width(),
            got_h: img.height(),
            want: cfg.frame_px,
        });
    }
    let cell = cfg.cell_px();
    let inner = (cell - 2) as f32;
    let mut bits = Bitstream::new();
    for (r, c) in cfg.payload_cells(kind) {
        let mut sum = 0.0f32;
        for y in r * cell + 1..(r + 1) * cell - 1 {
            for x in c * cell + 1..(c + 1) * cell - 1 {
                sum += img.get(x, y);
            }
        }
        let mean = sum / (inner * inner);
        bits.push(u8::from(mean < 0.5));
    }
    Ok(FramePayload::new(bits, kind))
}

/// Fixed 100-character synchronization string, alternating 0xFF and 0x00
/// codes. Rendered as cells this gives solid 8-cell dark runs, a texture no
/// printable-text payload can produce (text codes always start with a 0
/// bit), so a classifier trained on it separates overhead frames from
/// arbitrary unseen data payloads.
pub fn sync_text() -> String {
    "\u{FF}\u{0}".repeat(50)
}

/// Base text rendered into the first data-frame class.
pub const QR1_TEXT: &str = "Short-range optical links turn any display into a data transmitter.";
/// Base text rendered into the second data-frame class.
pub const QR2_TEXT: &str = "A camera pointed at a screen reads whole frames of bits at once.";
/// Base text rendered into the ASCII frame class.
pub const ASCII_TEXT: &str = "Bordered plain-grid frames carry eight-bit character payloads.";

/// Raw sync codeword before fitting to a frame: 8 bits per sync-text char.
pub fn sync_codeword_bits() -> Bitstream {
    Bitstream::from_text(&sync_text()).expect("sync text is 8-bit clean")
}

/// Sync codeword truncated or zero-padded to the overhead-frame capacity.
pub fn sync_codeword(cfg: &CodecConfig) -> Bitstream {
    let capacity = cfg.capacity(FrameKind::Overhead);
    let mut bits = sync_codeword_bits();
    bits.truncate(capacity);
    while bits.len() < capacity {
        bits.push(0);
    }
    bits
}

/// The deterministic overhead frame: the sync codeword in QR-style marking.
pub fn make_overhead_frame(cfg: &CodecConfig) -> FrameImage {
    let payload = FramePayload::new(sync_codeword(cfg), FrameKind::Overhead);
    encode_frame(&payload, cfg).expect("sync codeword fits capacity by construction")
}

/// Text to frames: 8-bit codes, segmentation, then one image per payload.
pub fn frames_for_text(
    text: &str,
    kind: FrameKind,
    cfg: &CodecConfig,
) -> Result<Vec<FrameImage>, CodecError> {
    if text.is_empty() {
        return Err(CodecError::EmptyText);
    }
    let bits = Bitstream::from_text(text)?;
    segment_stream(&bits, cfg.capacity(kind), kind)?
        .iter()
        .map(|p| encode_frame(p, cfg))
        .collect()
}

/// Canonical exemplar frame for each class: the fixed class text (or sync
/// codeword) rendered into a single frame.
pub fn base_frame(kind: FrameKind, cfg: &CodecConfig) -> FrameImage {
    let text = match kind {
        FrameKind::DataQr1 => QR1_TEXT,
        FrameKind::DataQr2 => QR2_TEXT,
        FrameKind::Ascii => ASCII_TEXT,
        FrameKind::Overhead => return make_overhead_frame(cfg),
    };
    frames_for_text(text, kind, cfg)
        .expect("class texts are non-empty and 8-bit clean")
        .remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_capacity_arithmetic() {
        let cfg = CodecConfig::default();
        assert_eq!(cfg.cell_px(), 4);
        // (25 - 2)^2 - 3 * 7^2 payload cells inside the quiet zone.
        assert_eq!(cfg.capacity(FrameKind::DataQr1), 382);
        assert_eq!(cfg.capacity(FrameKind::Overhead), 382);
        assert_eq!(cfg.capacity(FrameKind::Ascii), 529);
    }

    #[test]
    fn cell_roles_partition_the_grid() {
        let cfg = CodecConfig::default();
        for kind in FrameKind::ALL {
            let roles = cfg.cell_roles(kind);
            assert_eq!(roles.len(), cfg.grid_cells * cfg.grid_cells);
            let payload = roles.iter().filter(|r| **r == CellRole::Payload).count();
            assert_eq!(payload, cfg.capacity(kind));
            if kind.is_qr_style() {
                let finder = roles
                    .iter()
                    .filter(|r| matches!(r, CellRole::FinderDark | CellRole::FinderLight))
                    .count();
                assert_eq!(finder, 3 * cfg.finder_size * cfg.finder_size);
            }
        }
    }

    #[test]
    fn segment_stream_splits_and_reassembles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bits = Bitstream::random(501, &mut rng);
        let payloads = segment_stream(&bits, 500, FrameKind::DataQr1).unwrap();
        assert_eq!(payloads.len(), 2);
        assert_eq!(payloads[0].bits.len(), 500);
        assert_eq!(payloads[1].bits.len(), 1);
        assert_eq!(reassemble_stream(&payloads, 501), bits);
    }

    #[test]
    fn segment_stream_paper_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bits = Bitstream::random(32_000, &mut rng);
        let payloads = segment_stream(&bits, 500, FrameKind::DataQr1).unwrap();
        assert_eq!(payloads.len(), 64);
        assert!(payloads.iter().all(|p| p.bits.len() == 500));
    }

    #[test]
    fn segment_stream_empty_and_zero_capacity() {
        let empty = Bitstream::new();
        assert!(segment_stream(&empty, 10, FrameKind::Ascii).unwrap().is_empty());
        assert!(matches!(
            segment_stream(&empty, 0, FrameKind::Ascii),
            Err(CodecError::ZeroCapacity)
        ));
    }

    #[test]
    fn all_zero_qr_payload_marks_only_finders() {
        let cfg = CodecConfig::default();
        let payload = FramePayload::new(Bitstream::new(), FrameKind::DataQr1);
        let img = encode_frame(&payload, &cfg).unwrap();
        let cell = cfg.cell_px();
        let g = cfg.grid_cells;
        let roles = cfg.cell_roles(FrameKind::DataQr1);
        for r in 0..g {
            for c in 0..g {
                let v = img.get(c * cell, r * cell);
                match roles[r * g + c] {
                    CellRole::FinderDark => assert_eq!(v, 0.0),
                    _ => assert_eq!(v, 1.0),
                }
            }
        }
    }

    #[test]
    fn all_zero_ascii_payload_marks_only_border() {
        let cfg = CodecConfig::default();
        let payload = FramePayload::new(Bitstream::new(), FrameKind::Ascii);
        let img = encode_frame(&payload, &cfg).unwrap();
        let cell = cfg.cell_px();
        let g = cfg.grid_cells;
        for r in 0..g {
            for c in 0..g {
                let border = r == 0 || r == g - 1 || c == 0 || c == g - 1;
                let v = img.get(c * cell + 1, r * cell + 1);
                assert_eq!(v, if border { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn round_trip_random_payloads() {
        let cfg = CodecConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for kind in FrameKind::ALL {
            for _ in 0..20 {
                let bits = Bitstream::random(cfg.capacity(kind), &mut rng);
                let payload = FramePayload::new(bits, kind);
                let img = encode_frame(&payload, &cfg).unwrap();
                let decoded = decode_frame(&img, kind, &cfg).unwrap();
                assert_eq!(decoded, payload);
            }
        }
    }

    #[test]
    fn short_payload_round_trip_pads_with_zeros() {
        let cfg = CodecConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bits = Bitstream::random(400, &mut rng);
        let payload = FramePayload::new(bits.clone(), FrameKind::Ascii);
        let img = encode_frame(&payload, &cfg).unwrap();
        let decoded = decode_frame(&img, FrameKind::Ascii, &cfg).unwrap();
        assert_eq!(decoded.bits.len(), cfg.capacity(FrameKind::Ascii));
        assert_eq!(&decoded.bits.as_slice()[..400], bits.as_slice());
        assert!(decoded.bits.as_slice()[400..].iter().all(|&b| b == 0));
    }

    #[test]
    fn all_white_ascii_interior_decodes_to_zeros() {
        let cfg = CodecConfig::default();
        let img = FrameImage::white(cfg.frame_px, cfg.frame_px).unwrap();
        let decoded = decode_frame(&img, FrameKind::Ascii, &cfg).unwrap();
        assert!(decoded.bits.as_slice().iter().all(|&b| b == 0));
    }

    #[test]
    fn payload_overflow_is_rejected() {
        let cfg = CodecConfig::default();
        let bits = Bitstream::from_bits(vec![0; 383]).unwrap();
        let err = encode_frame(&FramePayload::new(bits, FrameKind::DataQr1), &cfg);
        assert!(matches!(err, Err(CodecError::PayloadOverflow { len: 383, capacity: 382 })));
    }

    #[test]
    fn decode_rejects_wrong_dimensions() {
        let cfg = CodecConfig::default();
        let img = FrameImage::white(50, 50).unwrap();
        assert!(matches!(
            decode_frame(&img, FrameKind::Ascii, &cfg),
            Err(CodecError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn overhead_frame_is_deterministic_and_decodes_to_codeword() {
        let cfg = CodecConfig::default();
        let a = make_overhead_frame(&cfg);
        let b = make_overhead_frame(&cfg);
        assert_eq!(a, b);
        let decoded = decode_frame(&a, FrameKind::Overhead, &cfg).unwrap();
        assert_eq!(decoded.bits, sync_codeword(&cfg));
    }

    #[test]
    fn sync_codeword_is_800_bits_before_fitting() {
        assert_eq!(sync_text().chars().count(), 100);
        assert_eq!(sync_codeword_bits().len(), 800);
    }

    #[test]
    fn sync_codeword_runs_are_unreachable_by_text() {
        // Printable text cannot produce 8 consecutive 1 bits (every 8-bit
        // code starts with 0); the sync codeword is built from them.
        let bits = sync_codeword_bits();
        let longest_dark_run = bits
            .as_slice()
            .split(|&b| b == 0)
            .map(|run| run.len())
            .max()
            .unwrap();
        assert_eq!(longest_dark_run, 8);
        let text_bits = Bitstream::from_text(QR1_TEXT).unwrap();
        let longest_text_run = text_bits
            .as_slice()
            .split(|&b| b == 0)
            .map(|run| run.len())
            .max()
            .unwrap();
        assert!(longest_text_run < 8);
    }

    #[test]
    fn frames_for_text_counts() {
        let cfg = CodecConfig::default();
        // 4000 chars at 500 bits per frame would give 64 frames; with this
        // config the capacity is 382 bits.
        let text = "x".repeat(4000);
        let frames = frames_for_text(&text, FrameKind::DataQr1, &cfg).unwrap();
        assert_eq!(frames.len(), (4000usize * 8).div_ceil(382));
        let one = frames_for_text("x", FrameKind::DataQr1, &cfg).unwrap();
        assert_eq!(one.len(), 1);
        assert!(matches!(
            frames_for_text("", FrameKind::DataQr1, &cfg),
            Err(CodecError::EmptyText)
        ));
    }

    #[test]
    fn text_round_trip_through_frames() {
        let cfg = CodecConfig::default();
        let text = "The quick brown fox jumps over the lazy dog, twice over.";
        let frames = frames_for_text(text, FrameKind::Ascii, &cfg).unwrap();
        let decoded: Vec<FramePayload> = frames
            .iter()
            .map(|f| decode_frame(f, FrameKind::Ascii, &cfg).unwrap())
            .collect();
        let bits = reassemble_stream(&decoded, text.len() * 8);
        assert_eq!(bits.to_text().unwrap(), text);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(CodecConfig::new(100, 30, 7, 1).is_err()); // not divisible
        assert!(CodecConfig::new(50, 25, 7, 1).is_err()); // cell_px 2
        assert!(CodecConfig::new(100, 25, 8, 1).is_err()); // even finder
        assert!(CodecConfig::new(100, 25, 13, 1).is_err()); // finders collide
        assert!(CodecConfig::new(100, 25, 7, 0).is_err()); // no quiet zone
    }
}
