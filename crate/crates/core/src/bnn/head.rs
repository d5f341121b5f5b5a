use super::conv::IntegerMap;
use super::packed::PackedBitTensor;
use crate::error::{Error, Result};

/// Final 1×1 integer convolution, one output channel per class.
/// `weights` is `[class][in_channel]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegerConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<i8>,
    pub bias: Vec<i32>,
}

impl IntegerConvLayer {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidModel("head dimensions must be positive".into()));
        }
        if self.weights.len() != self.in_channels * self.out_channels || self.bias.len() != self.out_channels {
            return Err(Error::InvalidModel("head weight/bias count does not match dims".into()));
        }
        Ok(())
    }
}

/// Per-class scores: spatial mean of the integer head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    /// Index of the largest score; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

fn pooled(layer: &IntegerConvLayer, positions: usize, mut value: impl FnMut(usize, usize) -> i64) -> Logits {
    let logits = (0..layer.out_channels)
        .map(|k| {
            let w = &layer.weights[k * layer.in_channels..(k + 1) * layer.in_channels];
            let mut total = 0i64;
            for p in 0..positions {
                let mut acc = layer.bias[k] as i64;
                for (c, &wc) in w.iter().enumerate() {
                    acc += wc as i64 * value(c, p);
                }
                total += acc;
            }
            total as f64 / positions as f64
        })
        .collect();
    Logits(logits)
}

/// Head over binary activations read as ±1.
pub fn integer_head(x: &PackedBitTensor, layer: &IntegerConvLayer) -> Result<Logits> {
    if x.channels != layer.in_channels {
        return Err(Error::Shape(format!("head expects {} channels, got {}", layer.in_channels, x.channels)));
    }
    let width = x.width;
    Ok(pooled(layer, x.height * x.width, |c, p| x.value(c, p / width, p % width) as i64))
}

/// Head over an integer feature map.
pub fn integer_head_map(x: &IntegerMap, layer: &IntegerConvLayer) -> Result<Logits> {
    if x.channels != layer.in_channels {
        return Err(Error::Shape(format!("head expects {} channels, got {}", layer.in_channels, x.channels)));
    }
    let positions = x.height * x.width;
    Ok(pooled(layer, positions, |c, p| x.data[c * positions + p] as i64))
}
