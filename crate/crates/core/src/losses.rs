//! Training objectives on magnitude images.
//!
//! The fidelity objective is `1 - SSIM + λ·L1`; the adversarial objective
//! adds a least-squares generator term on foreground-masked images and
//! weights the fidelity part by `γ`. Every loss returns its value together
//! with the gradient with respect to the reconstruction magnitude.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mri::ComplexImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the L1 term.
    pub lambda: f64,
    /// Weight of the fidelity objective inside the adversarial objective.
    pub gamma: f64,
    pub ssim_window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1e-3,
            gamma: 0.1,
            ssim_window: 7,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.gamma > 0.0) {
            return Err(Error::Config("lambda must be non-negative and gamma positive".into()));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::Config(format!(
                "SSIM window {} must be odd and at least 3",
                self.ssim_window
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::Config("SSIM constants must be positive".into()));
        }
        Ok(())
    }
}

/// Binary object support.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForegroundMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl ForegroundMask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "foreground has {} pixels, expected {height}x{width}",
                values.len()
            )));
        }
        Ok(ForegroundMask {
            height,
            width,
            values,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        ForegroundMask {
            height,
            width,
            values: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn apply(&self, image: &[f64]) -> Vec<f64> {
        image
            .iter()
            .zip(&self.values)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect()
    }
}

/// A magnitude image.
#[derive(Clone, Debug, PartialEq)]
pub struct Magnitude {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Magnitude {
    pub fn of(img: &ComplexImage) -> Self {
        Magnitude {
            height: img.height(),
            width: img.width(),
            data: img.magnitude(),
        }
    }

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "magnitude image has {} pixels, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Magnitude {
            height,
            width,
            data,
        })
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    fn same_shape(&self, other: &Magnitude) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Dimension(format!(
                "images are {}x{} and {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Chain rule from a magnitude gradient to `∂L/∂re + i ∂L/∂im`. The
/// subgradient at a zero sample is taken as zero.
pub fn magnitude_backward(img: &ComplexImage, grad: &[f64]) -> ComplexImage {
    let data = img
        .data()
        .iter()
        .zip(grad)
        .map(|(z, &g)| {
            let r = z.norm();
            if r > 0.0 {
                *z * (g / r)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    ComplexImage::from_vec(img.height(), img.width(), data).expect("same shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Mean absolute difference.
pub fn l1_loss(rec: &Magnitude, reference: &Magnitude) -> Result<LossValue> {
    rec.same_shape(reference)?;
    let n = rec.data.len() as f64;
    let mut sum = 0.0;
    let grad = rec
        .data
        .iter()
        .zip(&reference.data)
        .map(|(&a, &b)| {
            let d = a - b;
            sum += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok(LossValue {
        value: sum / n,
        grad,
    })
}

/// Data range used for the SSIM constants: the reference maximum, or 1 for
/// an all-zero reference.
pub fn data_range(reference: &Magnitude) -> f64 {
    let m = reference.max();
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Per-window SSIM values over every fully contained `window×window` patch.
/// Entry `(i, j)` belongs to the window centred at `(i + r, j + r)` with
/// `r = window / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimMap {
    pub rows: usize,
    pub cols: usize,
    pub radius: usize,
    pub values: Vec<f64>,
    // d ssim_w / d(μx, E[x²], E[xy]) per window, for the gradient
    coeffs: Vec<[f64; 3]>,
}

impl SsimMap {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Window index whose centre is pixel `(row, col)`, if fully inside.
    pub fn window_at(&self, row: usize, col: usize) -> Option<usize> {
        let (r, c) = (row.checked_sub(self.radius)?, col.checked_sub(self.radius)?);
        (r < self.rows && c < self.cols).then_some(r * self.cols + c)
    }
}

fn box_sums(img: &[f64], height: usize, width: usize, win: usize) -> Vec<f64> {
    // summed-area table, row-major with a zero border
    let w1 = width + 1;
    let mut sat = vec![0.0f64; (height + 1) * w1];
    for r in 0..height {
        let mut row = 0.0;
        for c in 0..width {
            row += img[r * width + c];
            sat[(r + 1) * w1 + c + 1] = sat[r * w1 + c + 1] + row;
        }
    }
    let (rows, cols) = (height + 1 - win, width + 1 - win);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let s = sat[(r + win) * w1 + c + win] - sat[r * w1 + c + win] - sat[(r + win) * w1 + c] + sat[r * w1 + c];
            out.push(s);
        }
    }
    out
}

/// SSIM map with uniform windows and `C1 = (k1·L)²`, `C2 = (k2·L)²`,
/// `L` from [`data_range`] of the reference.
pub fn ssim_map(rec: &Magnitude, reference: &Magnitude, config: &LossConfig) -> Result<SsimMap> {
    rec.same_shape(reference)?;
    let win = config.ssim_window;
    let (h, w) = (rec.height, rec.width);
    if win > h || win > w {
        return Err(Error::Config(format!(
            "SSIM window {win} does not fit a {h}x{w} image"
        )));
    }
    let l = data_range(reference);
    let c1 = (config.k1 * l).powi(2);
    let c2 = (config.k2 * l).powi(2);
    let x = &rec.data;
    let y = &reference.data;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let n = (win * win) as f64;
    let sx = box_sums(x, h, w, win);
    let sy = box_sums(y, h, w, win);
    let sxx = box_sums(&xx, h, w, win);
    let syy = box_sums(&yy, h, w, win);
    let sxy = box_sums(&xy, h, w, win);

    let mut values = Vec::with_capacity(sx.len());
    let mut coeffs = Vec::with_capacity(sx.len());
    for i in 0..sx.len() {
        let (mx, my) = (sx[i] / n, sy[i] / n);
        let vx = sxx[i] / n - mx * mx;
        let vy = syy[i] / n - my * my;
        let cxy = sxy[i] / n - mx * my;
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * cxy + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = vx + vy + c2;
        let s = (a1 * a2) / (b1 * b2);
        values.push(s);

        // partials w.r.t. raw moments μx, E[x²], E[xy]
        let ds_da1 = a2 / (b1 * b2);
        let ds_da2 = a1 / (b1 * b2);
        let ds_db1 = -s / b1;
        let ds_db2 = -s / b2;
        let d_mu = ds_da1 * 2.0 * my + ds_da2 * (-2.0 * my) + ds_db1 * 2.0 * mx + ds_db2 * (-2.0 * mx);
        let d_exx = ds_db2;
        let d_exy = ds_da2 * 2.0;
        coeffs.push([d_mu, d_exx, d_exy]);
    }
    Ok(SsimMap {
        rows: h + 1 - win,
        cols: w + 1 - win,
        radius: win / 2,
        values,
        coeffs,
    })
}

/// Gradient of `Σ_w weight_w · ssim_w` with respect to the reconstruction.
fn ssim_map_backward(map: &SsimMap, weights: &[f64], rec: &Magnitude, reference: &Magnitude, win: usize) -> Vec<f64> {
    let (h, w) = (rec.height, rec.width);
    let n = (win * win) as f64;
    // per-window coefficient maps, spread back over their windows
    let mut a = vec![0.0; map.values.len()];
    let mut b = vec![0.0; map.values.len()];
    let mut c = vec![0.0; map.values.len()];
    for (i, (coef, &wt)) in map.coeffs.iter().zip(weights).enumerate() {
        a[i] = wt * coef[0] / n;
        b[i] = wt * coef[1] / n;
        c[i] = wt * coef[2] / n;
    }
    let spread = |m: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for r in 0..map.rows {
            for col in 0..map.cols {
                let v = m[r * map.cols + col];
                if v == 0.0 {
                    continue;
                }
                for dr in 0..win {
                    let row = &mut out[(r + dr) * w + col..(r + dr) * w + col + win];
                    row.iter_mut().for_each(|o| *o += v);
                }
            }
        }
        out
    };
    let (sa, sb, sc) = (spread(&a), spread(&b), spread(&c));
    (0..h * w)
        .map(|p| sa[p] + 2.0 * rec.data[p] * sb[p] + reference.data[p] * sc[p])
        .collect()
}

/// Mean SSIM over all windows, with its gradient.
pub fn ssim(rec: &Magnitude, reference: &Magnitude, config: &LossConfig) -> Result<LossValue> {
    let map = ssim_map(rec, reference, config)?;
    let weight = 1.0 / map.values.len() as f64;
    let weights = vec![weight; map.values.len()];
    let grad = ssim_map_backward(&map, &weights, rec, reference, config.ssim_window);
    Ok(LossValue {
        value: map.mean(),
        grad,
    })
}

/// `1 - SSIM + λ·L1`.
pub fn sn_loss(rec: &Magnitude, reference: &Magnitude, config: &LossConfig) -> Result<LossValue> {
    let s = ssim(rec, reference, config)?;
    let l1 = l1_loss(rec, reference)?;
    let grad = s
        .grad
        .iter()
        .zip(&l1.grad)
        .map(|(gs, gl)| -gs + config.lambda * gl)
        .collect();
    Ok(LossValue {
        value: 1.0 - s.value + config.lambda * l1.value,
        grad,
    })
}

/// `½[(d_real - 1)² + d_fake²]`.
pub fn lsgan_d_loss(d_real: f64, d_fake: f64) -> f64 {
    0.5 * ((d_real - 1.0).powi(2) + d_fake.powi(2))
}

/// `½(d_fake - 1)²`.
pub fn lsgan_g_loss(d_fake: f64) -> f64 {
    0.5 * (d_fake - 1.0).powi(2)
}

/// Result of the adversarial generator objective.
#[derive(Clone, Debug, PartialEq)]
pub struct GanLossValue {
    pub value: f64,
    pub fidelity: f64,
    pub adversarial: f64,
    pub grad: Vec<f64>,
    /// The foreground mask was empty, so both critic inputs were zero.
    pub degenerate_mask: bool,
}

/// Critic seen by the adversarial objective: a score for a single-channel
/// image and the gradient of that score with respect to the image.
pub trait Critic {
    fn score_with_grad(&self, image: &[f64], height: usize, width: usize) -> Result<(f64, Vec<f64>)>;
}

impl Critic for crate::network::Discriminator {
    fn score_with_grad(&self, image: &[f64], height: usize, width: usize) -> Result<(f64, Vec<f64>)> {
        let trace = self.trace(image, height, width)?;
        let score = trace.score();
        let (_, g) = crate::network::Discriminator::backward(trace, 1.0);
        Ok((score, g))
    }
}

/// `γ·L_SN(rec, ref) + ½(D(m ⊙ rec) - 1)²`.
pub fn sn_gan_loss(
    rec: &Magnitude,
    reference: &Magnitude,
    mask: &ForegroundMask,
    critic: &dyn Critic,
    config: &LossConfig,
) -> Result<GanLossValue> {
    if (mask.height, mask.width) != (rec.height, rec.width) {
        return Err(Error::Dimension("foreground mask does not match image".into()));
    }
    let fidelity = sn_loss(rec, reference, config)?;
    let masked = mask.apply(&rec.data);
    let (score, dgrad) = critic.score_with_grad(&masked, rec.height, rec.width)?;
    let upstream = score - 1.0;
    let adversarial = lsgan_g_loss(score);
    let grad = fidelity
        .grad
        .iter()
        .zip(&dgrad)
        .zip(mask.values())
        .map(|((gf, gd), &m)| config.gamma * gf + if m { upstream * gd } else { 0.0 })
        .collect();
    Ok(GanLossValue {
        value: config.gamma * fidelity.value + adversarial,
        fidelity: fidelity.value,
        adversarial,
        grad,
        degenerate_mask: mask.is_empty(),
    })
}
