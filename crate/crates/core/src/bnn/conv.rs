use super::packed::{valid_bits, words_per_pixel, xnor_dot, PackedBitTensor};
use crate::error::{Error, Result};

/// Spatial padding. `Same` pads with logical -1 (bit 0), i.e. "no activity".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    None,
    Same,
}

impl Padding {
    pub fn amount(self, kernel: usize) -> usize {
        match self {
            Padding::None => 0,
            Padding::Same => (kernel - 1) / 2,
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Padding::None => 0,
            Padding::Same => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Padding::None),
            1 => Ok(Padding::Same),
            _ => Err(Error::InvalidModel(format!("unknown padding code {b}"))),
        }
    }
}

pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(kernel).map(|span| span / stride + 1)
}

/// Binary convolution followed by folded batchnorm + sign.
///
/// Weights are stored `[out][ky][kx][in_word]` in the same packing as
/// [`PackedBitTensor`]. `thresholds[k]` is the precomputed integer
/// `floor(beta'/gamma')` and `gamma_signs[k]` is `sgn(gamma')`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    pub weights: Vec<u32>,
    pub thresholds: Vec<i32>,
    pub gamma_signs: Vec<i8>,
}

impl BinaryConvLayer {
    pub fn weight_words_len(in_channels: usize, out_channels: usize, kernel_h: usize, kernel_w: usize) -> usize {
        out_channels * kernel_h * kernel_w * words_per_pixel(in_channels)
    }

    /// Builds a layer from channel-major `out × in × kh × kw` weight bits (1 = +1).
    #[allow(clippy::too_many_arguments)]
    pub fn from_bits(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
        weight_bits: &[u8],
        thresholds: Vec<i32>,
        gamma_signs: Vec<i8>,
    ) -> Result<Self> {
        if weight_bits.len() != out_channels * in_channels * kernel_h * kernel_w {
            return Err(Error::Shape("weight bit count does not match layer dims".into()));
        }
        let wpp = words_per_pixel(in_channels);
        let mut weights = vec![0u32; Self::weight_words_len(in_channels, out_channels, kernel_h, kernel_w)];
        for k in 0..out_channels {
            for c in 0..in_channels {
                for ky in 0..kernel_h {
                    for kx in 0..kernel_w {
                        let b = weight_bits[((k * in_channels + c) * kernel_h + ky) * kernel_w + kx];
                        if b > 1 {
                            return Err(Error::Parameter(format!("weight bit {b} is not 0 or 1")));
                        }
                        if b == 1 {
                            weights[((k * kernel_h + ky) * kernel_w + kx) * wpp + c / 32] |= 1 << (c % 32);
                        }
                    }
                }
            }
        }
        let layer = Self { in_channels, out_channels, kernel_h, kernel_w, stride, padding, weights, thresholds, gamma_signs };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err(Error::InvalidModel("layer dimensions must be positive".into()));
        }
        let want = Self::weight_words_len(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w);
        if self.weights.len() != want {
            return Err(Error::InvalidModel(format!("{} weight words, expected {want}", self.weights.len())));
        }
        if self.thresholds.len() != self.out_channels || self.gamma_signs.len() != self.out_channels {
            return Err(Error::InvalidModel("threshold/sign count must equal out_channels".into()));
        }
        if self.gamma_signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidModel("gamma signs must be +1 or -1".into()));
        }
        let bound = self.accumulator_bound();
        if self.thresholds.iter().any(|&t| t.abs() > bound) {
            return Err(Error::InvalidModel(format!("threshold outside accumulator range ±{bound}")));
        }
        let last = valid_bits(self.in_channels, self.words_per_tap() - 1);
        let pad_mask = super::packed::mask(last);
        if self.weights.chunks(self.words_per_tap()).any(|tap| tap[tap.len() - 1] & !pad_mask != 0) {
            return Err(Error::InvalidModel("weight padding bits must be zero".into()));
        }
        Ok(())
    }

    pub fn words_per_tap(&self) -> usize {
        words_per_pixel(self.in_channels)
    }

    /// Largest possible |accumulator|: `k_y * k_x * n_in`.
    pub fn accumulator_bound(&self) -> i32 {
        (self.kernel_h * self.kernel_w * self.in_channels) as i32
    }

    pub fn tap(&self, k: usize, ky: usize, kx: usize) -> &[u32] {
        let wpt = self.words_per_tap();
        let start = ((k * self.kernel_h + ky) * self.kernel_w + kx) * wpt;
        &self.weights[start..start + wpt]
    }

    /// Logical weight in {-1, +1}.
    pub fn weight(&self, k: usize, c: usize, ky: usize, kx: usize) -> i32 {
        2 * ((self.tap(k, ky, kx)[c / 32] >> (c % 32)) & 1) as i32 - 1
    }

    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let oh = conv_output_len(height, self.kernel_h, self.stride, self.padding.amount(self.kernel_h));
        let ow = conv_output_len(width, self.kernel_w, self.stride, self.padding.amount(self.kernel_w));
        match (oh, ow) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(Error::Shape(format!(
                "{height}x{width} input too small for a {}x{} kernel",
                self.kernel_h, self.kernel_w
            ))),
        }
    }

    pub fn mac_count(&self, height: usize, width: usize) -> Result<u64> {
        let (oh, ow) = self.output_dims(height, width)?;
        Ok((self.kernel_h * self.kernel_w * self.in_channels * self.out_channels * oh * ow) as u64)
    }
}

/// Integer feature map, layout `[channel][y][x]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegerMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<i32>,
}

impl IntegerMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0; channels * height * width] }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> i32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Accumulates `Σ (valid - 2·popcount(input XOR weight))` over all taps and
/// input words. Out-of-image taps read an all-zero word (logical -1).
pub fn binary_conv(x: &PackedBitTensor, layer: &BinaryConvLayer) -> Result<IntegerMap> {
    if x.channels != layer.in_channels {
        return Err(Error::Shape(format!(
            "layer expects {} input channels, got {}",
            layer.in_channels, x.channels
        )));
    }
    let (oh, ow) = layer.output_dims(x.height, x.width)?;
    let pad_y = layer.padding.amount(layer.kernel_h) as isize;
    let pad_x = layer.padding.amount(layer.kernel_w) as isize;
    let wpp = layer.words_per_tap();
    let valid: Vec<u32> = (0..wpp).map(|n| valid_bits(layer.in_channels, n)).collect();
    let zero_pixel = vec![0u32; wpp];

    let mut out = IntegerMap::zeros(layer.out_channels, oh, ow);
    for oy in 0..oh {
        for ox in 0..ow {
            for k in 0..layer.out_channels {
                let mut acc = 0i32;
                for ky in 0..layer.kernel_h {
                    let iy = (oy * layer.stride + ky) as isize - pad_y;
                    for kx in 0..layer.kernel_w {
                        let ix = (ox * layer.stride + kx) as isize - pad_x;
                        let px = if iy >= 0 && ix >= 0 && (iy as usize) < x.height && (ix as usize) < x.width {
                            x.pixel(iy as usize, ix as usize)
                        } else {
                            &zero_pixel[..]
                        };
                        let taps = layer.tap(k, ky, kx);
                        for n in 0..wpp {
                            acc += xnor_dot(px[n], taps[n], valid[n]);
                        }
                    }
                }
                out.data[(k * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Ok(out)
}

/// Folded batchnorm activation: 0 when `acc * gamma_sign >= threshold`, else 1.
#[inline]
pub fn bin_act(acc: i32, gamma_sign: i8, threshold: i32) -> u8 {
    if acc as i64 * gamma_sign as i64 >= threshold as i64 {
        0
    } else {
        1
    }
}

/// Applies [`bin_act`] per output channel and packs the result (bit 1 = +1).
pub fn threshold_activate(acc: &IntegerMap, thresholds: &[i32], gamma_signs: &[i8]) -> Result<PackedBitTensor> {
    if thresholds.len() != acc.channels || gamma_signs.len() != acc.channels {
        return Err(Error::Shape("threshold/sign count must equal accumulator channels".into()));
    }
    let mut out = PackedBitTensor::zeros(acc.channels, acc.height, acc.width);
    let wpp = out.words_per_pixel();
    for c in 0..acc.channels {
        for y in 0..acc.height {
            for x in 0..acc.width {
                if bin_act(acc.get(c, y, x), gamma_signs[c], thresholds[c]) == 1 {
                    out.words[(y * acc.width + x) * wpp + c / 32] |= 1 << (c % 32);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::packed::pack;

    fn uniform_layer(cin: usize, cout: usize, k: usize, stride: usize, padding: Padding, bit: u8) -> BinaryConvLayer {
        BinaryConvLayer::from_bits(
            cin,
            cout,
            k,
            k,
            stride,
            padding,
            &vec![bit; cin * cout * k * k],
            vec![0; cout],
            vec![1; cout],
        )
        .unwrap()
    }

    #[test]
    fn all_agree_gives_full_count() {
        let x = pack(&vec![1; 32 * 5 * 5], 32, 5, 5).unwrap();
        let acc = binary_conv(&x, &uniform_layer(32, 4, 3, 1, Padding::None, 1)).unwrap();
        assert_eq!((acc.height, acc.width), (3, 3));
        assert!(acc.data.iter().all(|&v| v == 288));
    }

    #[test]
    fn all_disagree_gives_negative_count() {
        let x = pack(&vec![0; 32 * 5 * 5], 32, 5, 5).unwrap();
        let acc = binary_conv(&x, &uniform_layer(32, 2, 3, 1, Padding::None, 1)).unwrap();
        assert!(acc.data.iter().all(|&v| v == -288));
    }

    #[test]
    fn same_padding_reads_minus_one() {
        // +1 input, +1 weights: corner output sees 4 real taps and 5 padded taps
        let x = pack(&vec![1; 3 * 3], 1, 3, 3).unwrap();
        let acc = binary_conv(&x, &uniform_layer(1, 1, 3, 1, Padding::Same, 1)).unwrap();
        assert_eq!(acc.get(0, 0, 0), 4 - 5);
        assert_eq!(acc.get(0, 1, 1), 9);
    }

    #[test]
    fn stride_two_same_dims() {
        let layer = uniform_layer(1, 1, 3, 2, Padding::Same, 1);
        assert_eq!(layer.output_dims(64, 100).unwrap(), (32, 50));
        assert_eq!(layer.output_dims(8, 100).unwrap(), (4, 50));
        assert_eq!(layer.output_dims(64, 98).unwrap(), (32, 49));
    }

    #[test]
    fn channel_mismatch() {
        let x = pack(&[1; 4], 1, 2, 2).unwrap();
        assert!(matches!(binary_conv(&x, &uniform_layer(2, 1, 1, 1, Padding::None, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn bin_act_literal_cases() {
        assert_eq!(bin_act(5, 1, 0), 0);
        assert_eq!(bin_act(-1, 1, 0), 1);
        assert_eq!(bin_act(5, -1, 0), 1);
        // tie goes to 0
        assert_eq!(bin_act(3, 1, 3), 0);
        assert_eq!(bin_act(-3, -1, 3), 0);
    }

    #[test]
    fn rejects_out_of_range_threshold() {
        let r = BinaryConvLayer::from_bits(1, 1, 1, 1, 1, Padding::None, &[1], vec![2], vec![1]);
        assert!(matches!(r, Err(Error::InvalidModel(_))));
    }
}
