//! Ordered bit sequences and their 8-bit text encoding.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BitsError {
    #[error("bit value {value} is not 0 or 1")]
    NotABit { value: u8 },
    #[error("character {ch:?} (U+{code:04X}) does not fit in an 8-bit code")]
    UnencodableChar { ch: char, code: u32 },
    #[error("bit count {len} is not a multiple of 8")]
    NotByteAligned { len: usize },
}

/// An ordered sequence of bits, each stored as a 0/1 byte.
///
/// Text maps to bits as one 8-bit code per character (Latin-1 range),
/// most significant bit first, so `len = 8 * char_count`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bitstream {
    bits: Vec<u8>,
}

impl Bitstream {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps raw bits, validating every value is 0 or 1.
    pub fn from_bits(bits: Vec<u8>) -> Result<Self, BitsError> {
        if let Some(&value) = bits.iter().find(|&&b| b > 1) {
            return Err(BitsError::NotABit { value });
        }
        Ok(Self { bits })
    }

    /// Encodes text as consecutive 8-bit character codes, MSB first.
    pub fn from_text(text: &str) -> Result<Self, BitsError> {
        let mut bits = Vec::with_capacity(text.len() * 8);
        for ch in text.chars() {
            let code = ch as u32;
            if code > 0xFF {
                return Err(BitsError::UnencodableChar { ch, code });
            }
            for shift in (0..8).rev() {
                bits.push(((code >> shift) & 1) as u8);
            }
        }
        Ok(Self { bits })
    }

    /// Decodes back to text; requires a whole number of 8-bit codes.
    pub fn to_text(&self) -> Result<String, BitsError> {
        if !self.bits.len().is_multiple_of(8) {
            return Err(BitsError::NotByteAligned { len: self.bits.len() });
        }
        let mut out = String::with_capacity(self.bits.len() / 8);
        for chunk in self.bits.chunks_exact(8) {
            let code = chunk.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
            out.push(char::from_u32(code).expect("8-bit codes are valid chars"));
        }
        Ok(out)
    }

    /// Uniformly random bits from the given RNG.
    pub fn random<R: Rng>(len: usize, rng: &mut R) -> Self {
        Self { bits: (0..len).map(|_| rng.gen_range(0..=1u8)).collect() }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bits
    }

    pub fn push(&mut self, bit: u8) {
        debug_assert!(bit <= 1);
        self.bits.push(bit);
    }

    pub fn extend_from(&mut self, other: &Bitstream) {
        self.bits.extend_from_slice(&other.bits);
    }

    pub fn truncate(&mut self, len: usize) {
        self.bits.truncate(len);
    }

    /// Number of positions where the two streams disagree, counting any
    /// length difference as errors as well.
    pub fn hamming_distance(&self, other: &Bitstream) -> usize {
        let common = self.bits.len().min(other.bits.len());
        let diff = self.bits[..common]
            .iter()
            .zip(&other.bits[..common])
            .filter(|(a, b)| a != b)
            .count();
        diff + self.bits.len().abs_diff(other.bits.len())
    }
}

impl FromIterator<u8> for Bitstream {
    fn from_iter<T: IntoIterator<Item = u8>>(iter: T) -> Self {
        let bits: Vec<u8> = iter.into_iter().collect();
        debug_assert!(bits.iter().all(|&b| b <= 1));
        Self { bits }
    }
}
