//! A small fully convolutional network: stride-1, same-padded convolutions
//! with ReLU, a 1x1 classifier and a per-pixel softmax. Output resolution
//! equals input resolution.
//!
//! Activations are planar (`channels x H*W`). Convolutions are lowered to
//! matrix products with im2col and run through `matrixmultiply`.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};

use super::Prediction;
use crate::error::{Error, Result};
use crate::raster::Image;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Odd kernel size.
    pub kernel: usize,
    pub relu: bool,
}

impl ConvLayer {
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.out_ch
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

/// Layer list of a segmentation network. The last layer maps to the class
/// logits and is followed by a softmax.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch {
    pub layers: Vec<ConvLayer>,
}

impl Arch {
    /// Known presets:
    ///
    /// * `small`: three 3x3 conv layers with 16 channels and ReLU, then 1x1 to `C`.
    /// * `tiny`: two 3x3 conv layers with 8 channels and ReLU, then 1x1 to `C`.
    pub fn preset(name: &str, input_channels: usize, num_classes: usize) -> Result<Arch> {
        let (hidden, depth) = match name {
            "small" => (16, 3),
            "tiny" => (8, 2),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown architecture preset {other:?} (expected small or tiny)"
                )))
            }
        };
        if input_channels == 0 || num_classes == 0 {
            return Err(Error::InvalidArgument(
                "channels and classes must be positive".into(),
            ));
        }
        let mut layers = Vec::new();
        let mut in_ch = input_channels;
        for _ in 0..depth {
            layers.push(ConvLayer {
                in_ch,
                out_ch: hidden,
                kernel: 3,
                relu: true,
            });
            in_ch = hidden;
        }
        layers.push(ConvLayer {
            in_ch,
            out_ch: num_classes,
            kernel: 1,
            relu: false,
        });
        Ok(Arch { layers })
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_ch
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().out_ch
    }

    /// Weight `[out, in, k, k]` and bias `[out]` shape of every layer.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .flat_map(|l| [vec![l.out_ch, l.in_ch, l.kernel, l.kernel], vec![l.out_ch]])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_len).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("architecture has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel % 2 == 0 || l.in_ch == 0 || l.out_ch == 0 {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} is malformed: {l:?}"
                )));
            }
            if i > 0 && self.layers[i - 1].out_ch != l.in_ch {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} input does not match layer {}",
                    i - 1
                )));
            }
        }
        Ok(())
    }
}

/// `conv3x3:3>16:relu;conv3x3:16>16:relu;conv1x1:16>8;softmax`
impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.layers {
            write!(f, "conv{k}x{k}:{}>{}", l.in_ch, l.out_ch, k = l.kernel)?;
            if l.relu {
                f.write_str(":relu")?;
            }
            f.write_str(";")?;
        }
        f.write_str("softmax")
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("malformed architecture descriptor {s:?}"));
        let mut parts: Vec<&str> = s.trim().split(';').collect();
        if parts.pop() != Some("softmax") {
            return Err(bad());
        }
        let mut layers = Vec::new();
        for p in parts {
            let fields: Vec<&str> = p.split(':').collect();
            let (kind, io) = match fields.as_slice() {
                [kind, io] | [kind, io, "relu"] => (*kind, *io),
                _ => return Err(bad()),
            };
            let k = kind
                .strip_prefix("conv")
                .and_then(|r| r.split_once('x'))
                .filter(|(a, b)| a == b)
                .and_then(|(a, _)| a.parse().ok())
                .ok_or_else(bad)?;
            let (i, o) = io.split_once('>').ok_or_else(bad)?;
            layers.push(ConvLayer {
                in_ch: i.parse().map_err(|_| bad())?,
                out_ch: o.parse().map_err(|_| bad())?,
                kernel: k,
                relu: fields.len() == 3,
            });
        }
        let arch = Arch { layers };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegModel {
    pub arch: Arch,
    /// All layers' weights then biases, layer by layer.
    pub params: Vec<f64>,
}

impl SegModel {
    pub fn new(arch: Arch, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.num_params() {
            return Err(Error::Shape(format!(
                "architecture needs {} parameters, got {}",
                arch.num_params(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite model parameter".into()));
        }
        Ok(SegModel { arch, params })
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes()
    }
}

/// He-normal weights and zero biases, deterministic in `seed`.
pub fn init_model(
    preset: &str,
    input_channels: usize,
    num_classes: usize,
    seed: u64,
) -> Result<SegModel> {
    let arch = Arch::preset(preset, input_channels, num_classes)?;
    let mut rng = crate::seeded_rng(seed, 0);
    let mut params = Vec::with_capacity(arch.num_params());
    for l in &arch.layers {
        let std = (2.0 / l.patch_len() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        params.extend((0..l.weight_len()).map(|_| normal.sample(&mut rng)));
        params.extend(std::iter::repeat(0.0).take(l.out_ch));
    }
    SegModel::new(arch, params)
}

/// `c (m x n, row-major) = a (m x k) * b (k x n) + beta * c`, with arbitrary
/// strides on `a` and `b` so transposed views need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    let span =
        |rows: usize, cols: usize, (rs, cs): (usize, usize)| (rows - 1) * rs + (cols - 1) * cs + 1;
    assert!(m > 0 && k > 0 && n > 0);
    assert!(a.len() >= span(m, k, a_strides));
    assert!(b.len() >= span(k, n, b_strides));
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(input: &[f64], in_ch: usize, w: usize, h: usize, k: usize, col: &mut [f64]) {
    let hw = w * h;
    let pad = k / 2;
    for ci in 0..in_ch {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                for y in 0..h {
                    let row = &mut dst[y * w..(y + 1) * w];
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h || x_lo >= x_hi {
                        row.fill(0.0);
                        continue;
                    }
                    let src = &plane[(sy - pad) * w..(sy - pad + 1) * w];
                    row[..x_lo].fill(0.0);
                    row[x_hi..].fill(0.0);
                    row[x_lo..x_hi].copy_from_slice(&src[x_lo + kx - pad..x_hi + kx - pad]);
                }
            }
        }
    }
}

fn col2im(col: &[f64], in_ch: usize, w: usize, h: usize, k: usize, out: &mut [f64]) {
    let hw = w * h;
    let pad = k / 2;
    out.fill(0.0);
    for ci in 0..in_ch {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let dst = &mut plane[(sy - pad) * w + x_lo + kx - pad..][..x_hi - x_lo];
                    for (d, s) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
pub(crate) struct Trace {
    pub width: usize,
    pub height: usize,
    /// Input of each layer (the planar image for layer 0).
    inputs: Vec<Vec<f64>>,
    /// im2col buffers of layers with kernel > 1.
    cols: Vec<Option<Vec<f64>>>,
    /// Post-activation output of each layer; the last one holds the logits.
    outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.outputs.last().unwrap()
    }

    /// Which rectified units are active, over all ReLU layers.
    pub fn active_units(&self, model: &SegModel) -> Vec<bool> {
        model
            .arch
            .layers
            .iter()
            .zip(&self.outputs)
            .filter(|(l, _)| l.relu)
            .flat_map(|(_, out)| out.iter().map(|&v| v > 0.0))
            .collect()
    }
}

fn planar(img: &Image) -> Vec<f64> {
    let (hw, f) = (img.num_pixels(), img.channels());
    let mut out = vec![0.0; hw * f];
    for i in 0..hw {
        for (ch, &v) in img.pixel(i).iter().enumerate() {
            out[ch * hw + i] = v;
        }
    }
    out
}

pub(crate) fn forward_trace(model: &SegModel, img: &Image) -> Result<Trace> {
    if img.channels() != model.arch.input_channels() {
        return Err(Error::Shape(format!(
            "image has {} channels, model expects {}",
            img.channels(),
            model.arch.input_channels()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let hw = w * h;
    let mut trace = Trace {
        width: w,
        height: h,
        inputs: Vec::with_capacity(model.arch.layers.len()),
        cols: Vec::with_capacity(model.arch.layers.len()),
        outputs: Vec::with_capacity(model.arch.layers.len()),
    };
    let mut x = planar(img);
    let mut offset = 0;
    for layer in &model.arch.layers {
        let weights = &model.params[offset..offset + layer.weight_len()];
        let bias = &model.params[offset + layer.weight_len()..offset + layer.param_len()];
        offset += layer.param_len();

        let col = (layer.kernel > 1).then(|| {
            let mut col = vec![0.0; layer.patch_len() * hw];
            im2col(&x, layer.in_ch, w, h, layer.kernel, &mut col);
            col
        });
        let mut out = vec![0.0; layer.out_ch * hw];
        for (o, &b) in bias.iter().enumerate() {
            out[o * hw..(o + 1) * hw].fill(b);
        }
        let rhs = col.as_deref().unwrap_or(&x);
        gemm(
            layer.out_ch,
            layer.patch_len(),
            hw,
            weights,
            (layer.patch_len(), 1),
            rhs,
            (hw, 1),
            1.0,
            &mut out,
        );
        if layer.relu {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        trace.inputs.push(x);
        trace.cols.push(col);
        x = out.clone();
        trace.outputs.push(out);
    }
    Ok(trace)
}

/// Per-pixel softmax of planar logits, returned pixel-major.
pub(crate) fn softmax_planar(logits: &[f64], classes: usize, hw: usize) -> Vec<f64> {
    let mut probs = vec![0.0; hw * classes];
    for i in 0..hw {
        let mut max = f64::NEG_INFINITY;
        for c in 0..classes {
            max = max.max(logits[c * hw + i]);
        }
        let mut sum = 0.0;
        for c in 0..classes {
            let e = (logits[c * hw + i] - max).exp();
            probs[i * classes + c] = e;
            sum += e;
        }
        for c in 0..classes {
            probs[i * classes + c] /= sum;
        }
    }
    probs
}

/// Accumulates into `grad` the parameter gradient given `dlogits`
/// (planar, `C x H*W`) for the forward pass recorded in `trace`.
pub(crate) fn backward(model: &SegModel, trace: &Trace, mut dout: Vec<f64>, grad: &mut [f64]) {
    let hw = trace.width * trace.height;
    let mut offsets = Vec::with_capacity(model.arch.layers.len());
    let mut off = 0;
    for l in &model.arch.layers {
        offsets.push(off);
        off += l.param_len();
    }
    for (li, layer) in model.arch.layers.iter().enumerate().rev() {
        if layer.relu {
            for (d, &y) in dout.iter_mut().zip(&trace.outputs[li]) {
                if y <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let off = offsets[li];
        let (gw, gb) = grad[off..off + layer.param_len()].split_at_mut(layer.weight_len());
        let rhs = trace.cols[li].as_deref().unwrap_or(&trace.inputs[li]);
        // dW += dOut * col^T
        gemm(
            layer.out_ch,
            hw,
            layer.patch_len(),
            &dout,
            (hw, 1),
            rhs,
            (1, hw),
            1.0,
            gw,
        );
        for (o, g) in gb.iter_mut().enumerate() {
            *g += dout[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
        if li == 0 {
            break;
        }
        // dCol = W^T * dOut
        let weights = &model.params[off..off + layer.weight_len()];
        let mut dcol = vec![0.0; layer.patch_len() * hw];
        gemm(
            layer.patch_len(),
            layer.out_ch,
            hw,
            weights,
            (1, layer.patch_len()),
            &dout,
            (hw, 1),
            0.0,
            &mut dcol,
        );
        dout = if layer.kernel > 1 {
            let mut dx = vec![0.0; layer.in_ch * hw];
            col2im(
                &dcol,
                layer.in_ch,
                trace.width,
                trace.height,
                layer.kernel,
                &mut dx,
            );
            dx
        } else {
            dcol
        };
    }
}

/// Per-pixel class probabilities for `img`.
pub fn forward(model: &SegModel, img: &Image) -> Result<Prediction> {
    let trace = forward_trace(model, img)?;
    let c = model.num_classes();
    let probs = softmax_planar(trace.logits(), c, img.num_pixels());
    Ok(Prediction::from_parts(img.width(), img.height(), c, probs))
}
