//! Bit-exact binary neural network inference.
//!
//! Activations and weights are {-1,+1} values stored one bit each (bit 0 is
//! -1), 32 channels per word. A binary layer computes its integer
//! accumulators with XOR + popcount, then thresholds them against the folded
//! batchnorm constants. The last layer is a 1×1 integer convolution followed by
//! global average pooling.

mod conv;
mod head;
mod packed;

pub use conv::{bin_act, binary_conv, conv_output_len, threshold_activate, BinaryConvLayer, IntegerMap, Padding};
pub use head::{integer_head, integer_head_map, IntegerConvLayer, Logits};
pub use packed::{mask, pack, unpack, valid_bits, words_per_pixel, xnor_dot, PackedBitTensor};

use crate::capture::BinarySpectrogram;
use crate::error::{Error, Result};
use crate::model::BnnModel;

/// The spectrogram as a single-channel image, frequency on the vertical axis.
pub fn input_tensor(spec: &BinarySpectrogram) -> Result<PackedBitTensor> {
    pack(&spec.bits, 1, spec.n_channels, spec.n_windows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub logits: Logits,
}

/// Per-layer intermediate values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub accumulators: Vec<IntegerMap>,
    pub activations: Vec<PackedBitTensor>,
    pub logits: Logits,
}

fn check_input(model: &BnnModel, spec: &BinarySpectrogram) -> Result<()> {
    if spec.n_channels != model.input_height || spec.n_windows != model.input_width {
        return Err(Error::Shape(format!(
            "model expects a {}x{} spectrogram, got {}x{}",
            model.input_height, model.input_width, spec.n_channels, spec.n_windows
        )));
    }
    Ok(())
}

pub fn forward_packed(model: &BnnModel, input: &PackedBitTensor) -> Result<Trace> {
    let mut accumulators = Vec::with_capacity(model.layers.len());
    let mut activations = Vec::with_capacity(model.layers.len());
    let mut x = input.clone();
    for layer in &model.layers {
        let acc = binary_conv(&x, layer)?;
        x = threshold_activate(&acc, &layer.thresholds, &layer.gamma_signs)?;
        accumulators.push(acc);
        activations.push(x.clone());
    }
    let logits = integer_head(&x, &model.head)?;
    Ok(Trace { accumulators, activations, logits })
}

pub fn forward_trace(model: &BnnModel, input: &BinarySpectrogram) -> Result<Trace> {
    check_input(model, input)?;
    forward_packed(model, &input_tensor(input)?)
}

/// Class with the highest logit (lowest index on ties) and the logits.
pub fn predict(model: &BnnModel, input: &BinarySpectrogram) -> Result<Prediction> {
    check_input(model, input)?;
    let mut x = input_tensor(input)?;
    for layer in &model.layers {
        let acc = binary_conv(&x, layer)?;
        x = threshold_activate(&acc, &layer.thresholds, &layer.gamma_signs)?;
    }
    let logits = integer_head(&x, &model.head)?;
    Ok(Prediction { class: logits.argmax(), logits })
}

/// Total multiply-accumulates for one inference: `Σ k_y·k_x·n_in·n_out·out_h·out_w`
/// over all layers including the head.
pub fn mac_count(model: &BnnModel) -> Result<u64> {
    let (mut h, mut w) = (model.input_height, model.input_width);
    let mut total = 0u64;
    for layer in &model.layers {
        total += layer.mac_count(h, w)?;
        (h, w) = layer.output_dims(h, w)?;
    }
    total += (model.head.in_channels * model.head.out_channels * h * w) as u64;
    Ok(total)
}
