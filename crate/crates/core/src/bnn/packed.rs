use crate::error::{Error, Result};

/// Channel-packed {-1,+1} tensor. Channel c of pixel (y, x) lives in bit
/// `c % 32` of word `(y * width + x) * words_per_pixel + c / 32`; logical -1 is
/// bit 0 and +1 is bit 1. Padding bits above `channels` are always 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PackedBitTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub words: Vec<u32>,
}

pub fn words_per_pixel(channels: usize) -> usize {
    channels.div_ceil(32)
}

/// Number of real channels held by word `word` of a pixel.
pub fn valid_bits(channels: usize, word: usize) -> u32 {
    (channels - word * 32).min(32) as u32
}

pub fn mask(valid: u32) -> u32 {
    if valid >= 32 {
        u32::MAX
    } else {
        (1u32 << valid) - 1
    }
}

impl PackedBitTensor {
    /// All pixels at logical -1.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, words: vec![0; words_per_pixel(channels) * height * width] }
    }

    pub fn words_per_pixel(&self) -> usize {
        words_per_pixel(self.channels)
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[u32] {
        let wpp = self.words_per_pixel();
        let start = (y * self.width + x) * wpp;
        &self.words[start..start + wpp]
    }

    pub fn bit(&self, c: usize, y: usize, x: usize) -> u8 {
        ((self.pixel(y, x)[c / 32] >> (c % 32)) & 1) as u8
    }

    /// Logical value in {-1, +1}.
    pub fn value(&self, c: usize, y: usize, x: usize) -> i32 {
        2 * self.bit(c, y, x) as i32 - 1
    }

    pub fn set_bit(&mut self, c: usize, y: usize, x: usize, bit: bool) {
        let wpp = self.words_per_pixel();
        let idx = (y * self.width + x) * wpp + c / 32;
        if bit {
            self.words[idx] |= 1 << (c % 32);
        } else {
            self.words[idx] &= !(1 << (c % 32));
        }
    }
}

/// Packs a channel-major `channels × height × width` matrix of 0/1 entries.
pub fn pack(bits: &[u8], channels: usize, height: usize, width: usize) -> Result<PackedBitTensor> {
    if bits.len() != channels * height * width {
        return Err(Error::Shape(format!(
            "{} bits for a {channels}x{height}x{width} tensor",
            bits.len()
        )));
    }
    let mut t = PackedBitTensor::zeros(channels, height, width);
    let wpp = t.words_per_pixel();
    for c in 0..channels {
        for y in 0..height {
            for x in 0..width {
                match bits[(c * height + y) * width + x] {
                    0 => {}
                    1 => t.words[(y * width + x) * wpp + c / 32] |= 1 << (c % 32),
                    v => return Err(Error::Parameter(format!("bit value {v} is not 0 or 1"))),
                }
            }
        }
    }
    Ok(t)
}

/// Inverse of [`pack`]: channel-major 0/1 entries.
pub fn unpack(t: &PackedBitTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.channels * t.height * t.width);
    for c in 0..t.channels {
        for y in 0..t.height {
            for x in 0..t.width {
                out.push(t.bit(c, y, x));
            }
        }
    }
    out
}

/// ±1 dot product of the low `valid_bits` bits: agreement counts +1,
/// disagreement -1. XNOR is computed as an inverted XOR.
#[inline]
pub fn xnor_dot(a: u32, b: u32, valid_bits: u32) -> i32 {
    let differ = ((a ^ b) & mask(valid_bits)).count_ones() as i32;
    valid_bits as i32 - 2 * differ
}
