//! Synthetic acquisitions: ellipse phantoms, Gaussian coil lobes and
//! variable-density Cartesian masks.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ForegroundMask;
use crate::mri::{forward_op, normalize_sensitivities, CoilArray, ComplexImage, MultiCoilKSpace, SamplingMask, SensitivityMaps};

/// A noiseless object and its support.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSlice {
    pub image: ComplexImage,
    pub foreground: ForegroundMask,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.a;
        let v = (-s * dx + c * dy) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Normalized pixel-centre coordinates in `[-1, 1]`.
fn coords(row: usize, col: usize, height: usize, width: usize) -> (f64, f64) {
    (
        2.0 * (col as f64 + 0.5) / width as f64 - 1.0,
        2.0 * (row as f64 + 0.5) / height as f64 - 1.0,
    )
}

pub fn generate_phantom(height: usize, width: usize, seed: u64) -> Result<PhantomSlice> {
    if height < 16 || width < 16 {
        return Err(Error::Config(format!("phantom grid {height}x{width} is smaller than 16x16")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outer = Ellipse {
        cx: rng.random_range(-0.05..0.05),
        cy: rng.random_range(-0.05..0.05),
        a: rng.random_range(0.6..0.8),
        b: rng.random_range(0.5..0.7),
        angle: rng.random_range(-0.4..0.4),
    };
    let base = rng.random_range(0.45..0.6);
    let count = rng.random_range(4..8);
    let mut inner = Vec::with_capacity(count);
    for _ in 0..count {
        let r = rng.random_range(0.0..0.5);
        let t = rng.random_range(0.0..2.0 * PI);
        let e = Ellipse {
            cx: outer.cx + r * outer.a * t.cos(),
            cy: outer.cy + r * outer.b * t.sin(),
            a: rng.random_range(0.06..0.3),
            b: rng.random_range(0.06..0.3),
            angle: rng.random_range(0.0..PI),
        };
        let delta = rng.random_range(-0.35..0.4);
        inner.push((e, delta));
    }
    // fine stripes inside one structure, for texture
    let stripe = (
        rng.random_range(0..count),
        rng.random_range(6.0..14.0) * PI,
        rng.random_range(0.0..PI),
    );
    let ramp = (rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(-PI..PI));

    let mut support = vec![false; height * width];
    let image = ComplexImage::from_fn(height, width, |row, col| {
        let (x, y) = coords(row, col, height, width);
        if !outer.contains(x, y) {
            return Complex64::new(0.0, 0.0);
        }
        support[row * width + col] = true;
        let mut m = base;
        for (i, (e, delta)) in inner.iter().enumerate() {
            if e.contains(x, y) {
                m += delta;
                if i == stripe.0 {
                    let (s, c) = stripe.2.sin_cos();
                    m += 0.08 * (stripe.1 * (c * x + s * y)).sin();
                }
            }
        }
        let m = m.clamp(0.05, 1.0);
        Complex64::from_polar(m, ramp.0 * x + ramp.1 * y + ramp.2)
    });
    Ok(PhantomSlice {
        image,
        foreground: ForegroundMask::new(height, width, support)?,
    })
}

/// Gaussian lobes centred on a circle through the grid border, normalized
/// on `support`. Coil `c` carries a constant phase `2πc/C`.
pub fn generate_sensitivities(coils: usize, height: usize, width: usize, support: &[bool]) -> Result<SensitivityMaps> {
    if coils == 0 {
        return Err(Error::Config("at least one coil is required".into()));
    }
    let sigma = 0.9;
    let mut planes = Vec::with_capacity(coils);
    for c in 0..coils {
        let theta = 2.0 * PI * c as f64 / coils as f64;
        let (px, py) = (theta.cos(), theta.sin());
        planes.push(ComplexImage::from_fn(height, width, |row, col| {
            let (x, y) = coords(row, col, height, width);
            let d2 = (x - px).powi(2) + (y - py).powi(2);
            Complex64::from_polar((-d2 / (2.0 * sigma * sigma)).exp(), theta)
        }));
    }
    normalize_sensitivities(&CoilArray::from_planes(planes)?, support)
}

/// Target acceleration and the fully sampled central band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub acceleration: f64,
    pub center_fraction: f64,
    pub seed: u64,
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.acceleration >= 1.0 && self.acceleration.is_finite()) {
            return Err(Error::Config(format!("acceleration {} must be at least 1", self.acceleration)));
        }
        if !(self.center_fraction > 0.0 && self.center_fraction < 1.0) {
            return Err(Error::Config(format!(
                "center fraction {} must lie in (0, 1)",
                self.center_fraction
            )));
        }
        if self.center_fraction > 1.0 / self.acceleration {
            return Err(Error::Config(format!(
                "center fraction {} exceeds the sampling budget 1/{}",
                self.center_fraction, self.acceleration
            )));
        }
        Ok(())
    }
}

/// Central columns `[start, start + n)` that are always sampled.
pub fn center_band(width: usize, center_fraction: f64) -> (usize, usize) {
    let n = ((center_fraction * width as f64).round() as usize).clamp(1, width);
    (width / 2 - n / 2, n)
}

/// Sampling probabilities of every column; `1` on the central band.
pub fn column_probabilities(width: usize, spec: &MaskSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.acceleration == 1.0 {
        return Ok(vec![1.0; width]);
    }
    let (start, n) = center_band(width, spec.center_fraction);
    let half = width as f64 / 2.0;
    let decay: Vec<Option<f64>> = (0..width)
        .map(|c| {
            if (start..start + n).contains(&c) {
                None
            } else {
                Some((1.0 - (c as f64 - half).abs() / half).max(0.0))
            }
        })
        .collect();
    let budget = width as f64 / spec.acceleration - n as f64;
    let expected = |p: f64| -> f64 {
        decay
            .iter()
            .flatten()
            .map(|&q| if q > 0.0 { q.powf(p) } else { 0.0 })
            .sum()
    };
    let p = if budget <= 0.0 {
        f64::INFINITY
    } else if expected(0.0) <= budget {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        while expected(hi) > budget {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if expected(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(decay
        .iter()
        .map(|d| match d {
            None => 1.0,
            Some(q) if *q > 0.0 && p.is_finite() => q.powf(p),
            Some(_) => 0.0,
        })
        .collect())
}

/// Column mask with a fully sampled centre and variable-density periphery;
/// the expected sampled fraction is `1/acceleration`.
pub fn generate_vd_mask(height: usize, width: usize, spec: &MaskSpec) -> Result<SamplingMask> {
    let probs = column_probabilities(width, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let columns = probs
        .iter()
        .map(|&p| {
            if p >= 1.0 {
                true
            } else {
                rng.random::<f64>() < p
            }
        })
        .collect();
    Ok(SamplingMask::from_columns(height, columns))
}

/// `y = M ⊙ (F(S_c x) + ε)` with complex Gaussian `ε` of per-component
/// standard deviation `noise_sigma`.
pub fn simulate_acquisition(
    image: &ComplexImage,
    maps: &SensitivityMaps,
    mask: &SamplingMask,
    noise_sigma: f64,
    seed: u64,
) -> Result<MultiCoilKSpace> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma {noise_sigma} must be non-negative")));
    }
    let mut y = forward_op(image, maps, mask)?;
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("valid sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in 0..y.coils() {
            let plane = y.plane_mut(c);
            for z in plane.iter_mut() {
                *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
            }
            mask.apply(plane);
        }
    }
    Ok(y)
}
