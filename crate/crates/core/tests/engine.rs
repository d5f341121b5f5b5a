//! Packed inference against a plain ±1 integer reference.

use kws_core::bnn::{self, BinaryConvLayer, IntegerConvLayer, Padding};
use kws_core::capture::BinarySpectrogram;
use kws_core::model::BnnModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// A layer with its weights kept unpacked (`[out][in][ky][kx]`, values ±1).
struct RefLayer {
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    w: Vec<i32>,
    thr: Vec<i32>,
    sign: Vec<i8>,
}

fn random_ref_layer(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize, k: usize, stride: usize, same: bool) -> RefLayer {
    let n = in_ch * k * k;
    RefLayer {
        in_ch,
        out_ch,
        k,
        stride,
        pad: if same { k / 2 } else { 0 },
        w: (0..out_ch * n).map(|_| if rng.gen() { 1 } else { -1 }).collect(),
        thr: (0..out_ch).map(|_| rng.gen_range(-(n as i32)..=n as i32) / 3).collect(),
        sign: (0..out_ch).map(|_| if rng.gen() { 1 } else { -1 }).collect(),
    }
}

fn to_layer(r: &RefLayer) -> BinaryConvLayer {
    let bits: Vec<u8> = r.w.iter().map(|&v| (v > 0) as u8).collect();
    let padding = if r.pad > 0 { Padding::Same } else { Padding::None };
    BinaryConvLayer::from_bits(r.in_ch, r.out_ch, r.k, r.k, r.stride, padding, &bits, r.thr.clone(), r.sign.clone()).unwrap()
}

/// Input `[c][y][x]` of ±1; padding reads as -1.
fn ref_conv(x: &[i32], c: usize, h: usize, w: usize, l: &RefLayer) -> (Vec<i64>, usize, usize) {
    let oh = (h + 2 * l.pad - l.k) / l.stride + 1;
    let ow = (w + 2 * l.pad - l.k) / l.stride + 1;
    assert_eq!(c, l.in_ch);
    let mut out = vec![0i64; l.out_ch * oh * ow];
    for o in 0..l.out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0i64;
                for ci in 0..c {
                    for ky in 0..l.k {
                        for kx in 0..l.k {
                            let iy = (oy * l.stride + ky) as isize - l.pad as isize;
                            let ix = (ox * l.stride + kx) as isize - l.pad as isize;
                            let v = if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                -1
                            } else {
                                x[(ci * h + iy as usize) * w + ix as usize]
                            };
                            acc += (v * l.w[((o * c + ci) * l.k + ky) * l.k + kx]) as i64;
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (out, oh, ow)
}

fn ref_act(acc: &[i64], l: &RefLayer, plane: usize) -> Vec<i32> {
    acc.iter()
        .enumerate()
        .map(|(i, &a)| {
            let o = i / plane;
            // bit 0 (value -1) when acc·sign >= threshold
            if a * l.sign[o] as i64 >= l.thr[o] as i64 {
                -1
            } else {
                1
            }
        })
        .collect()
}

#[test]
fn packed_pipeline_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..12 {
        let h = rng.gen_range(4..=16);
        let w = rng.gen_range(4..=20);
        let n_layers = rng.gen_range(1..=3);
        let mut layers = Vec::new();
        let mut c = 1;
        for _ in 0..n_layers {
            let out = [8, 32, 33, 64, 96][rng.gen_range(0..5)];
            let k = if rng.gen_bool(0.7) { 3 } else { 1 };
            let stride = rng.gen_range(1..=2);
            layers.push(random_ref_layer(&mut rng, c, out, k, stride, k == 3));
            c = out;
        }
        let classes = rng.gen_range(2..=6);
        let head_w: Vec<i8> = (0..classes * c).map(|_| rng.gen_range(-127..=127)).collect();
        let head_b: Vec<i32> = (0..classes).map(|_| rng.gen_range(-500..=500)).collect();
        let model = BnnModel {
            input_height: h,
            input_width: w,
            layers: layers.iter().map(to_layer).collect(),
            head: IntegerConvLayer { in_channels: c, out_channels: classes, weights: head_w.clone(), bias: head_b.clone() },
        };
        model.validate().unwrap();

        let bits: Vec<u8> = (0..h * w).map(|_| rng.gen_range(0..2)).collect();
        let spec = BinarySpectrogram { n_channels: h, n_windows: w, window_ms: 10, bits: bits.clone() };
        let trace = bnn::forward_trace(&model, &spec).unwrap();

        let mut x: Vec<i32> = bits.iter().map(|&b| if b == 1 { 1 } else { -1 }).collect();
        let (mut ch, mut hh, mut ww) = (1, h, w);
        for (li, l) in layers.iter().enumerate() {
            let (acc, oh, ow) = ref_conv(&x, ch, hh, ww, l);
            let got = &trace.accumulators[li];
            assert_eq!((got.channels, got.height, got.width), (l.out_ch, oh, ow), "case {case} layer {li}");
            let bound = (l.in_ch * l.k * l.k) as i64;
            for (i, (&a, &g)) in acc.iter().zip(&got.data).enumerate() {
                assert_eq!(a, g as i64, "case {case} layer {li} idx {i}");
                assert!(a.abs() <= bound);
                if bound % 2 == 0 {
                    assert_eq!(a % 2, 0);
                }
            }
            x = ref_act(&acc, l, oh * ow);
            let packed = &trace.activations[li];
            for o in 0..l.out_ch {
                for y in 0..oh {
                    for xx in 0..ow {
                        assert_eq!(packed.value(o, y, xx), x[(o * oh + y) * ow + xx]);
                    }
                }
            }
            (ch, hh, ww) = (l.out_ch, oh, ow);
        }

        let positions = hh * ww;
        for k in 0..classes {
            let mut total = 0i64;
            for p in 0..positions {
                let mut s = head_b[k] as i64;
                for ci in 0..ch {
                    s += head_w[k * ch + ci] as i64 * x[ci * positions + p] as i64;
                }
                total += s;
            }
            let want = total as f64 / positions as f64;
            assert!((trace.logits.0[k] - want).abs() < 1e-9, "case {case} class {k}");
        }
        let pred = bnn::predict(&model, &spec).unwrap();
        assert_eq!(pred.logits, trace.logits);
    }
}

#[test]
fn parallel_batch_equals_sequential() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let desc = kws_core::model::build_architecture(32, 12, (8, 100)).unwrap();
    let model = BnnModel::random(&desc, &mut rng);
    let inputs: Vec<BinarySpectrogram> = (0..24)
        .map(|_| BinarySpectrogram { n_channels: 8, n_windows: 100, window_ms: 10, bits: (0..800).map(|_| rng.gen_range(0..2)).collect() })
        .collect();
    let seq: Vec<_> = inputs.iter().map(|s| bnn::predict(&model, s).unwrap()).collect();
    let par: Vec<_> = inputs.par_iter().map(|s| bnn::predict(&model, s).unwrap()).collect();
    assert_eq!(seq, par);
}

#[test]
fn standard_model_mac_count_matches_layer_table() {
    let desc = kws_core::model::build_architecture(64, 12, (64, 100)).unwrap();
    let model = BnnModel::random(&desc, &mut ChaCha8Rng::seed_from_u64(0));
    // per layer k²·in·out·oh·ow
    let by_hand: u64 = 9 * 64 * 32 * 50
        + 9 * 64 * 128 * 32 * 50
        + 9 * 128 * 128 * 16 * 25
        + 9 * 128 * 192 * 16 * 25
        + 192 * 192 * 16 * 25
        + 192 * 12 * 16 * 25;
    assert_eq!(bnn::mac_count(&model).unwrap(), by_hand);
    assert_eq!(desc.mac_count(), by_hand);
}
