//! Dense C×H×W activations and the convolution kernels used by the
//! reconstruction block and the discriminator.

use num_complex::Complex64;

use crate::mri::ComplexImage;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(other.channels, other.height, other.width)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Real and imaginary parts as two channels.
    pub fn from_complex(img: &ComplexImage) -> Self {
        let (h, w) = img.shape();
        let n = h * w;
        let mut data = vec![0.0; 2 * n];
        for (i, z) in img.data().iter().enumerate() {
            data[i] = z.re;
            data[n + i] = z.im;
        }
        Tensor {
            channels: 2,
            height: h,
            width: w,
            data,
        }
    }

    pub fn to_complex(&self) -> ComplexImage {
        debug_assert_eq!(self.channels, 2);
        let n = self.height * self.width;
        let data = (0..n)
            .map(|i| Complex64::new(self.data[i], self.data[n + i]))
            .collect();
        ComplexImage::from_vec(self.height, self.width, data).expect("tensor shape")
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

/// Output extent of a zero-padded convolution with `pad = kernel / 2`.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize) -> usize {
    let pad = kernel / 2;
    (len + 2 * pad - kernel) / stride + 1
}

/// Range of output positions whose tap `k` lands inside `[0, len)`, and the
/// input index of the first one.
#[inline]
fn tap_range(out_len: usize, len: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    // input = o * stride + k - pad must be in [0, len)
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// `out[co] = b[co] + Σ_ci w[co,ci] ⋆ in[ci]` with zero padding `k/2`.
/// Weight layout is `[cout, cin, k, k]`.
pub fn conv2d_forward(input: &Tensor, weight: &[f64], bias: &[f64], cout: usize, kernel: usize, stride: usize) -> Tensor {
    let (cin, h, w) = input.shape();
    debug_assert_eq!(weight.len(), cout * cin * kernel * kernel);
    let pad = kernel / 2;
    let (oh, ow) = (conv_output_len(h, kernel, stride), conv_output_len(w, kernel, stride));
    let mut out = Tensor::zeros(cout, oh, ow);
    for co in 0..cout {
        let out_plane = out.plane_mut(co);
        out_plane.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let in_plane = input.plane(ci);
            for ky in 0..kernel {
                let (oy_lo, oy_hi) = tap_range(oh, h, ky, pad, stride);
                for kx in 0..kernel {
                    let wv = weight[((co * cin + ci) * kernel + ky) * kernel + kx];
                    let (ox_lo, ox_hi) = tap_range(ow, w, kx, pad, stride);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let ix0 = ox_lo * stride + kx - pad;
                        let out_row = &mut out_plane[oy * ow + ox_lo..oy * ow + ox_hi];
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        if stride == 1 {
                            for (o, i) in out_row.iter_mut().zip(&in_row[ix0..]) {
                                *o += wv * i;
                            }
                        } else {
                            for (o, i) in out_row.iter_mut().zip(in_row[ix0..].iter().step_by(stride)) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`]. Accumulates into `grad_weight` and
/// `grad_bias` and returns the input gradient.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    kernel: usize,
    stride: usize,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Tensor {
    let (cin, h, w) = input.shape();
    let (cout, oh, ow) = grad_out.shape();
    let pad = kernel / 2;
    let mut grad_in = Tensor::zeros_like(input);
    for co in 0..cout {
        let go_plane = grad_out.plane(co);
        grad_bias[co] += go_plane.iter().sum::<f64>();
        for ci in 0..cin {
            let in_plane = input.plane(ci);
            for ky in 0..kernel {
                let (oy_lo, oy_hi) = tap_range(oh, h, ky, pad, stride);
                for kx in 0..kernel {
                    let widx = ((co * cin + ci) * kernel + ky) * kernel + kx;
                    let wv = weight[widx];
                    let (ox_lo, ox_hi) = tap_range(ow, w, kx, pad, stride);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let mut gw = 0.0;
                    let gi_plane = grad_in.plane_mut(ci);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let ix0 = ox_lo * stride + kx - pad;
                        let go_row = &go_plane[oy * ow + ox_lo..oy * ow + ox_hi];
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        let gi_row = &mut gi_plane[iy * w..(iy + 1) * w];
                        if stride == 1 {
                            for ((g, i), gi) in go_row.iter().zip(&in_row[ix0..]).zip(&mut gi_row[ix0..]) {
                                gw += g * i;
                                *gi += wv * g;
                            }
                        } else {
                            for ((g, i), gi) in go_row
                                .iter()
                                .zip(in_row[ix0..].iter().step_by(stride))
                                .zip(gi_row[ix0..].iter_mut().step_by(stride))
                            {
                                gw += g * i;
                                *gi += wv * g;
                            }
                        }
                    }
                    grad_weight[widx] += gw;
                }
            }
        }
    }
    grad_in
}

pub fn leaky_relu(input: &Tensor, slope: f64) -> Tensor {
    let mut out = input.clone();
    out.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= slope
        }
    });
    out
}

/// Gradient through a leaky ReLU given the pre-activation input.
pub fn leaky_relu_backward(input: &Tensor, grad_out: &Tensor, slope: f64) -> Tensor {
    let mut g = grad_out.clone();
    g.data
        .iter_mut()
        .zip(&input.data)
        .for_each(|(g, &x)| {
            if x < 0.0 {
                *g *= slope
            } else if x == 0.0 {
                *g = 0.0
            }
        });
    g
}

/// Nearest-neighbour upsampling to an explicit target grid:
/// `out[y][x] = in[y / factor][x / factor]`.
pub fn upsample_nearest(input: &Tensor, factor: usize, height: usize, width: usize) -> Tensor {
    let mut out = Tensor::zeros(input.channels, height, width);
    for c in 0..input.channels {
        let src = input.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..height {
            let sy = (y / factor).min(input.height - 1);
            for x in 0..width {
                let sx = (x / factor).min(input.width - 1);
                dst[y * width + x] = src[sy * input.width + sx];
            }
        }
    }
    out
}

pub fn upsample_nearest_backward(grad_out: &Tensor, factor: usize, height: usize, width: usize) -> Tensor {
    let mut g = Tensor::zeros(grad_out.channels, height, width);
    for c in 0..grad_out.channels {
        let src = grad_out.plane(c);
        let dst = g.plane_mut(c);
        for y in 0..grad_out.height {
            let sy = (y / factor).min(height - 1);
            for x in 0..grad_out.width {
                let sx = (x / factor).min(width - 1);
                dst[sy * width + sx] += src[y * grad_out.width + x];
            }
        }
    }
    g
}
