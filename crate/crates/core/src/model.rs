//! The six-layer network family and its binary file format.
//!
//! Five binary convolutions (3×3 s2, 3×3 s1, 3×3 s2, 3×3 s1, 1×1 s1) whose
//! channel counts are the base vector `[1, 2, 2, 3, 3]` times a width
//! multiplier, followed by a 1×1 integer layer with one output per class.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "BKW1" | version u32 | n_layers u32 | input_h u32 | input_w u32 | n_classes u32
//! per binary layer:
//!   in u32 | out u32 | kernel_h u8 | kernel_w u8 | stride u8 | padding u8
//!   weight words u32 × (out·kh·kw·ceil(in/32))
//!   thresholds i32 × out | gamma signs i8 × out
//! head: in u32 | out u32 | weights i8 × (out·in) | biases i32 × out
//! CRC-32 of everything above, u32
//! ```

use std::fmt::Write as _;

use rand::Rng;

use crate::bnn::{valid_bits, words_per_pixel, BinaryConvLayer, IntegerConvLayer, Padding};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BKW1";
pub const FORMAT_VERSION: u32 = 1;

/// Channel multipliers of the five binary layers.
pub const BASE_VECTOR: [usize; 5] = [1, 2, 2, 3, 3];
/// (kernel, stride) of the five binary layers and the head.
pub const KERNEL_STRIDE: [(usize, usize); 6] = [(3, 2), (3, 1), (3, 2), (3, 1), (1, 1), (1, 1)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    pub output_dims: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelDescriptor {
    pub width_multiplier: usize,
    pub n_classes: usize,
    /// (frequency channels, time windows)
    pub input_dims: (usize, usize),
    /// Five binary layers then the integer head.
    pub layers: Vec<LayerSpec>,
}

/// Builds the layer table for `width` ∈ multiples of 32.
pub fn build_architecture(width: usize, n_classes: usize, input_dims: (usize, usize)) -> Result<ModelDescriptor> {
    if width < 32 || width % 32 != 0 {
        return Err(Error::Parameter(format!("width multiplier {width} must be a positive multiple of 32")));
    }
    if n_classes == 0 {
        return Err(Error::Parameter("need at least one class".into()));
    }
    let (mut h, mut w) = input_dims;
    let mut in_ch = 1;
    let mut layers = Vec::with_capacity(6);
    for (i, &(kernel, stride)) in KERNEL_STRIDE.iter().enumerate() {
        let out_ch = if i < 5 { BASE_VECTOR[i] * width } else { n_classes };
        let padding = if kernel > 1 { Padding::Same } else { Padding::None };
        let pad = padding.amount(kernel);
        let oh = crate::bnn::conv_output_len(h, kernel, stride, pad);
        let ow = crate::bnn::conv_output_len(w, kernel, stride, pad);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::Parameter(format!("input {input_dims:?} too small for layer {}", i + 1)));
        };
        layers.push(LayerSpec { in_channels: in_ch, out_channels: out_ch, kernel, stride, padding, output_dims: (oh, ow) });
        (h, w, in_ch) = (oh, ow, out_ch);
    }
    Ok(ModelDescriptor { width_multiplier: width, n_classes, input_dims, layers })
}

impl ModelDescriptor {
    pub fn channels(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.out_channels).collect()
    }

    pub fn mac_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| (l.kernel * l.kernel * l.in_channels * l.out_channels * l.output_dims.0 * l.output_dims.1) as u64)
            .sum()
    }

    /// (binary weight bits, head integer weights + biases)
    pub fn parameter_count(&self) -> (u64, u64) {
        let (binary, head) = self.layers.split_at(5);
        let bits = binary.iter().map(|l| (l.kernel * l.kernel * l.in_channels * l.out_channels) as u64).sum();
        let h = head[0];
        (bits, (h.in_channels * h.out_channels + h.out_channels) as u64)
    }

    /// Human-readable layer table.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "width x{}  classes {}  input {}x{}",
            self.width_multiplier, self.n_classes, self.input_dims.0, self.input_dims.1
        )
        .unwrap();
        writeln!(out, "{:<6} {:>7} {:>6} {:>5} {:>6} {:>9} {:>12}", "layer", "kernel", "stride", "in", "out", "output", "MACs").unwrap();
        for (i, l) in self.layers.iter().enumerate() {
            let macs = l.kernel * l.kernel * l.in_channels * l.out_channels * l.output_dims.0 * l.output_dims.1;
            writeln!(
                out,
                "{:<6} {:>7} {:>6} {:>5} {:>6} {:>9} {:>12}",
                i + 1,
                format!("{0}x{0}", l.kernel),
                l.stride,
                l.in_channels,
                l.out_channels,
                format!("{}x{}", l.output_dims.0, l.output_dims.1),
                macs
            )
            .unwrap();
        }
        writeln!(out, "total MACs {}", self.mac_count()).unwrap();
        out
    }
}

/// A loaded network: any number of binary layers followed by the integer head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BnnModel {
    pub input_height: usize,
    pub input_width: usize,
    pub layers: Vec<BinaryConvLayer>,
    pub head: IntegerConvLayer,
}

impl BnnModel {
    pub fn n_classes(&self) -> usize {
        self.head.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        let (mut h, mut w, mut c) = (self.input_height, self.input_width, 1);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.in_channels != c {
                return Err(Error::InvalidModel(format!("layer {} expects {} channels, previous gives {c}", i + 1, layer.in_channels)));
            }
            (h, w) = layer.output_dims(h, w).map_err(|e| Error::InvalidModel(e.to_string()))?;
            c = layer.out_channels;
        }
        self.head.validate()?;
        if self.head.in_channels != c {
            return Err(Error::InvalidModel(format!("head expects {} channels, previous gives {c}", self.head.in_channels)));
        }
        if h == 0 || w == 0 {
            return Err(Error::InvalidModel("empty output map".into()));
        }
        Ok(())
    }

    /// Reconstructs the descriptor when the model belongs to the standard family.
    pub fn descriptor(&self) -> Result<ModelDescriptor> {
        let width = self.layers.first().map(|l| l.out_channels).unwrap_or(0);
        let desc = build_architecture(width, self.n_classes(), (self.input_height, self.input_width))?;
        let matches = self.layers.len() == 5
            && self.layers.iter().zip(&desc.layers).all(|(l, s)| {
                l.in_channels == s.in_channels
                    && l.out_channels == s.out_channels
                    && l.kernel_h == s.kernel
                    && l.kernel_w == s.kernel
                    && l.stride == s.stride
                    && l.padding == s.padding
            });
        if !matches {
            return Err(Error::InvalidModel("model is not a member of the standard architecture family".into()));
        }
        Ok(desc)
    }

    /// Random weights and plausible thresholds for the given architecture.
    pub fn random<R: Rng>(desc: &ModelDescriptor, rng: &mut R) -> Self {
        let (binary, head) = desc.layers.split_at(5);
        let layers = binary.iter().map(|s| random_layer(s, rng)).collect();
        let h = head[0];
        let head = IntegerConvLayer {
            in_channels: h.in_channels,
            out_channels: h.out_channels,
            weights: (0..h.in_channels * h.out_channels).map(|_| rng.gen_range(-127..=127)).collect(),
            bias: (0..h.out_channels).map(|_| rng.gen_range(-64..=64)).collect(),
        };
        Self { input_height: desc.input_dims.0, input_width: desc.input_dims.1, layers, head }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.layers.len() as u32);
        put_u32(&mut out, self.input_height as u32);
        put_u32(&mut out, self.input_width as u32);
        put_u32(&mut out, self.n_classes() as u32);
        for l in &self.layers {
            put_u32(&mut out, l.in_channels as u32);
            put_u32(&mut out, l.out_channels as u32);
            out.extend_from_slice(&[l.kernel_h as u8, l.kernel_w as u8, l.stride as u8, l.padding.to_byte()]);
            for &w in &l.weights {
                put_u32(&mut out, w);
            }
            for &t in &l.thresholds {
                out.extend_from_slice(&t.to_le_bytes());
            }
            out.extend(l.gamma_signs.iter().map(|&s| s as u8));
        }
        put_u32(&mut out, self.head.in_channels as u32);
        put_u32(&mut out, self.head.out_channels as u32);
        out.extend(self.head.weights.iter().map(|&w| w as u8));
        for &b in &self.head.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Magic);
        }
        if bytes.len() < 12 {
            return Err(Error::Checksum);
        }
        let (payload, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(payload) != u32::from_le_bytes(trailer.try_into().unwrap()) {
            return Err(Error::Checksum);
        }
        let mut r = Reader { buf: payload, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version(version));
        }
        let n_layers = r.u32()? as usize;
        let input_height = r.u32()? as usize;
        let input_width = r.u32()? as usize;
        let n_classes = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let in_channels = r.u32()? as usize;
            let out_channels = r.u32()? as usize;
            let [kh, kw, stride, pad] = r.take(4)? else { unreachable!() };
            let (kernel_h, kernel_w, stride) = (*kh as usize, *kw as usize, *stride as usize);
            let padding = Padding::from_byte(*pad)?;
            let n_words = BinaryConvLayer::weight_words_len(in_channels, out_channels, kernel_h, kernel_w);
            let weights = (0..n_words).map(|_| r.u32()).collect::<Result<_>>()?;
            let thresholds = (0..out_channels).map(|_| r.i32()).collect::<Result<_>>()?;
            let gamma_signs = r.take(out_channels)?.iter().map(|&b| b as i8).collect();
            layers.push(BinaryConvLayer { in_channels, out_channels, kernel_h, kernel_w, stride, padding, weights, thresholds, gamma_signs });
        }
        let in_channels = r.u32()? as usize;
        let out_channels = r.u32()? as usize;
        let weights = r.take(in_channels * out_channels)?.iter().map(|&b| b as i8).collect();
        let bias = (0..out_channels).map(|_| r.i32()).collect::<Result<_>>()?;
        if r.pos != payload.len() {
            return Err(Error::InvalidModel(format!("{} trailing bytes", payload.len() - r.pos)));
        }
        if out_channels != n_classes {
            return Err(Error::InvalidModel(format!("header says {n_classes} classes, head has {out_channels}")));
        }
        let model = Self { input_height, input_width, layers, head: IntegerConvLayer { in_channels, out_channels, weights, bias } };
        model.validate()?;
        Ok(model)
    }
}

fn random_layer<R: Rng>(s: &LayerSpec, rng: &mut R) -> BinaryConvLayer {
    let wpp = words_per_pixel(s.in_channels);
    let last = crate::bnn::mask(valid_bits(s.in_channels, wpp - 1));
    let taps = s.out_channels * s.kernel * s.kernel;
    let mut weights: Vec<u32> = (0..taps * wpp).map(|_| rng.gen()).collect();
    for tap in weights.chunks_mut(wpp) {
        tap[wpp - 1] &= last;
    }
    // accumulators of random ±1 inputs spread roughly ±sqrt(bound)
    let bound = (s.kernel * s.kernel * s.in_channels) as f64;
    let spread = bound.sqrt().ceil() as i32;
    BinaryConvLayer {
        in_channels: s.in_channels,
        out_channels: s.out_channels,
        kernel_h: s.kernel,
        kernel_w: s.kernel,
        stride: s.stride,
        padding: s.padding,
        weights,
        thresholds: (0..s.out_channels).map(|_| rng.gen_range(-spread..=spread)).collect(),
        gamma_signs: (0..s.out_channels).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect(),
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::InvalidModel("model file ends early".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn channel_vectors() {
        assert_eq!(build_architecture(32, 12, (64, 100)).unwrap().channels(), vec![32, 64, 64, 96, 96, 12]);
        assert_eq!(build_architecture(64, 12, (64, 100)).unwrap().channels(), vec![64, 128, 128, 192, 192, 12]);
        assert_eq!(build_architecture(128, 12, (64, 100)).unwrap().channels(), vec![128, 256, 256, 384, 384, 12]);
    }

    #[test]
    fn spatial_dims() {
        let d = build_architecture(64, 12, (64, 100)).unwrap();
        let dims: Vec<_> = d.layers.iter().map(|l| l.output_dims).collect();
        assert_eq!(dims, vec![(32, 50), (32, 50), (16, 25), (16, 25), (16, 25), (16, 25)]);
    }

    #[test]
    fn rejects_bad_width() {
        for w in [0, 16, 48, 100] {
            assert!(matches!(build_architecture(w, 12, (64, 100)), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn parameter_count_by_hand() {
        let d = build_architecture(32, 12, (8, 100)).unwrap();
        let bits = 9 * 1 * 32 + 9 * 32 * 64 + 9 * 64 * 64 + 9 * 64 * 96 + 96 * 96;
        assert_eq!(d.parameter_count(), (bits as u64, 96 * 12 + 12));
    }

    #[test]
    fn width64_mac_count() {
        // layer by layer: 9·1·64·1600 + 9·64·128·1600 + 9·128·128·400 + 9·128·192·400 + 192·192·400 + 192·12·400
        let d = build_architecture(64, 12, (64, 100)).unwrap();
        assert_eq!(d.mac_count(), 921_600 + 117_964_800 + 58_982_400 + 88_473_600 + 14_745_600 + 921_600);
        assert_eq!(d.mac_count(), 282_009_600);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(crate::bnn::mac_count(&BnnModel::random(&d, &mut rng)).unwrap(), 282_009_600);
    }

    #[test]
    fn file_errors() {
        assert!(matches!(BnnModel::from_bytes(&[]), Err(Error::Magic)));
        assert!(matches!(BnnModel::from_bytes(b"XXXX1234"), Err(Error::Magic)));
        let d = build_architecture(32, 12, (8, 100)).unwrap();
        let model = BnnModel::random(&d, &mut ChaCha8Rng::seed_from_u64(3));
        let bytes = model.to_bytes();
        assert!(matches!(BnnModel::from_bytes(&bytes[..bytes.len() - 10]), Err(Error::Checksum)));
        assert!(matches!(BnnModel::from_bytes(&bytes[..6]), Err(Error::Checksum)));

        let mut corrupt = bytes.clone();
        corrupt[40] ^= 0x10;
        assert!(matches!(BnnModel::from_bytes(&corrupt), Err(Error::Checksum)));

        let mut future = bytes[..bytes.len() - 4].to_vec();
        future[4] = 9;
        let crc = crc32fast::hash(&future);
        future.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(BnnModel::from_bytes(&future), Err(Error::Version(9))));
    }

    #[test]
    fn round_trip_is_identical() {
        let d = build_architecture(32, 12, (8, 100)).unwrap();
        let model = BnnModel::random(&d, &mut ChaCha8Rng::seed_from_u64(11));
        let back = BnnModel::from_bytes(&model.to_bytes()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.descriptor().unwrap(), d);
    }

    #[test]
    fn header_layout() {
        let d = build_architecture(32, 12, (8, 100)).unwrap();
        let bytes = BnnModel::random(&d, &mut ChaCha8Rng::seed_from_u64(0)).to_bytes();
        assert_eq!(&bytes[..4], b"BKW1");
        let words: Vec<u32> = bytes[4..24].chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(words, vec![1, 5, 8, 100, 12]);
        // first layer: 1 -> 32, 3x3 s2 same
        assert_eq!(&bytes[24..36], &[1, 0, 0, 0, 32, 0, 0, 0, 3, 3, 2, 1]);
    }
}
