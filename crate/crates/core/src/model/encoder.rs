//! Strided convolutional image encoder with 2-D sinusoidal positions.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Var, GATHER_ZERO};
use crate::image::ImageGrid;
use crate::nn::Linear;
use crate::tensor::Array;

use super::ModelError;

#[derive(Clone, Debug)]
struct ConvBlock {
    kernel: Linear,
    in_channels: usize,
}

/// Stack of 3x3 stride-2 convolutions followed by a per-position
/// projection to the model width. Each block halves the resolution, so the
/// effective patch size is `2^blocks`.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    blocks: Vec<ConvBlock>,
    projection: Linear,
}

impl ConvEncoder {
    pub fn new(store: &mut ParamStore, channels: &[usize], d_model: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut blocks = Vec::with_capacity(channels.len());
        let mut cin = 1;
        for (i, &cout) in channels.iter().enumerate() {
            blocks.push(ConvBlock {
                kernel: Linear::new(store, &format!("encoder.conv{i}"), 9 * cin, cout, rng),
                in_channels: cin,
            });
            cin = cout;
        }
        let projection = Linear::new(store, "encoder.projection", cin, d_model, rng);
        Self { blocks, projection }
    }

    pub fn patch_size(&self) -> usize {
        1 << self.blocks.len()
    }

    /// Returns `[M, d]` feature tokens, `M = (H / patch) * (W / patch)`.
    pub fn forward<'a>(&self, t: &'a Tape<'a>, image: &ImageGrid) -> Result<Var<'a>, ModelError> {
        let patch = self.patch_size();
        let (h, w) = (image.height(), image.width());
        if h == 0 || w == 0 || h % patch != 0 || w % patch != 0 {
            return Err(ModelError::ImageSize {
                height: h,
                width: w,
                patch,
            });
        }
        let mut x = t.constant(Array::new(vec![h * w, 1], image.values().to_vec()));
        let (mut ch, mut cw) = (h, w);
        for block in &self.blocks {
            let cols = x.gather(im2col_index(ch, cw, block.in_channels), vec![(ch / 2) * (cw / 2), 9 * block.in_channels]);
            x = block.kernel.forward(t, cols).relu();
            ch /= 2;
            cw /= 2;
        }
        let d = t.params().value(self.projection.weight).shape()[1];
        let tokens = self.projection.forward(t, x);
        Ok(tokens.add(t.constant(positional_encoding(ch, cw, d))))
    }
}

/// Gather indices turning a `[H*W, C]` channels-last map into the
/// `[(H/2)*(W/2), 9*C]` patch matrix of a 3x3, stride-2, pad-1 convolution.
fn im2col_index(h: usize, w: usize, c: usize) -> Vec<usize> {
    let (oh, ow) = (h / 2, w / 2);
    let mut index = Vec::with_capacity(oh * ow * 9 * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ky in 0..3 {
                for kx in 0..3 {
                    let iy = (2 * oy + ky) as isize - 1;
                    let ix = (2 * ox + kx) as isize - 1;
                    let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                    for ci in 0..c {
                        index.push(if inside {
                            (iy as usize * w + ix as usize) * c + ci
                        } else {
                            GATHER_ZERO
                        });
                    }
                }
            }
        }
    }
    index
}

/// Fixed `[gh * gw, d]` encoding: the first half of the channels encode the
/// row, the second half the column, each as interleaved sine/cosine blocks.
pub fn positional_encoding(gh: usize, gw: usize, d: usize) -> Array {
    assert!(d % 4 == 0, "model width {d} must be a multiple of 4");
    let q = d / 4;
    let mut data = vec![0.0; gh * gw * d];
    for y in 0..gh {
        for x in 0..gw {
            let row = &mut data[(y * gw + x) * d..(y * gw + x + 1) * d];
            for i in 0..q {
                let freq = 1.0 / 10000f64.powf(i as f64 / q as f64);
                row[i] = (y as f64 * freq).sin();
                row[q + i] = (y as f64 * freq).cos();
                row[2 * q + i] = (x as f64 * freq).sin();
                row[3 * q + i] = (x as f64 * freq).cos();
            }
        }
    }
    Array::new(vec![gh * gw, d], data)
}
