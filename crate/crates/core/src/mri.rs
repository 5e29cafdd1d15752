//! Parallel-MRI signal model.
//!
//! Images and k-space planes share one row-major complex layout. Rows are the
//! readout direction, columns are phase-encode lines. The 2D transform is the
//! centered orthonormal DFT: the zero frequency sits at index `(h/2, w/2)` and
//! both directions scale by `1/sqrt(h*w)`, so `fft2c` is unitary and
//! `ifft2c` is its exact adjoint.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};

/// H×W complex samples, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

/// A single k-space plane uses the image layout.
pub type KSpacePlane = ComplexImage;

impl ComplexImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        ComplexImage {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "image data has {} samples, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(ComplexImage {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        ComplexImage {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `⟨self, other⟩ = Σ conj(self)·other`.
    pub fn inner(&self, other: &ComplexImage) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|z| *z *= factor);
    }

    fn check_shape(&self, height: usize, width: usize, what: &str) -> Result<()> {
        if self.shape() != (height, width) {
            return Err(Error::Dimension(format!(
                "{what} is {}x{}, expected {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// C×H×W complex samples, one plane per coil. Holds either coil k-space or
/// coil images.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilArray {
    coils: usize,
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

pub type MultiCoilKSpace = CoilArray;

impl CoilArray {
    pub fn zeros(coils: usize, height: usize, width: usize) -> Self {
        CoilArray {
            coils,
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); coils * height * width],
        }
    }

    pub fn from_vec(coils: usize, height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if coils == 0 {
            return Err(Error::Dimension("coil count must be at least 1".into()));
        }
        if data.len() != coils * height * width {
            return Err(Error::Dimension(format!(
                "coil data has {} samples, expected {coils}x{height}x{width}",
                data.len()
            )));
        }
        Ok(CoilArray {
            coils,
            height,
            width,
            data,
        })
    }

    pub fn from_planes(planes: Vec<ComplexImage>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Dimension("coil count must be at least 1".into()))?;
        let (h, w) = first.shape();
        let coils = planes.len();
        let mut data = Vec::with_capacity(coils * h * w);
        for p in planes {
            p.check_shape(h, w, "coil plane")?;
            data.extend(p.data);
        }
        Ok(CoilArray {
            coils,
            height: h,
            width: w,
            data,
        })
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn plane(&self, coil: usize) -> &[Complex64] {
        let n = self.height * self.width;
        &self.data[coil * n..(coil + 1) * n]
    }

    pub fn plane_mut(&mut self, coil: usize) -> &mut [Complex64] {
        let n = self.height * self.width;
        &mut self.data[coil * n..(coil + 1) * n]
    }

    pub fn plane_image(&self, coil: usize) -> ComplexImage {
        ComplexImage {
            height: self.height,
            width: self.width,
            data: self.plane(coil).to_vec(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &CoilArray) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    fn check_grid(&self, height: usize, width: usize, coils: usize, what: &str) -> Result<()> {
        if (self.coils, self.height, self.width) != (coils, height, width) {
            return Err(Error::Dimension(format!(
                "{what} is {}x{}x{}, expected {coils}x{height}x{width}",
                self.coils, self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Coil sensitivity profiles normalized so that `Σ_c |S_c(p)|² = 1` on the
/// support and every coil is exactly zero off the support.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMaps {
    maps: CoilArray,
    support: Vec<bool>,
}

impl SensitivityMaps {
    pub fn coils(&self) -> usize {
        self.maps.coils
    }

    pub fn height(&self) -> usize {
        self.maps.height
    }

    pub fn width(&self) -> usize {
        self.maps.width
    }

    pub fn maps(&self) -> &CoilArray {
        &self.maps
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        self.maps.plane(c)
    }

    /// Rebuilds maps from stored values. Values must already satisfy the
    /// normalization invariant within `tol`.
    pub fn from_normalized(maps: CoilArray, support: Vec<bool>, tol: f64) -> Result<Self> {
        let n = maps.height * maps.width;
        if support.len() != n {
            return Err(Error::Dimension(format!(
                "support has {} pixels, expected {n}",
                support.len()
            )));
        }
        for (p, &inside) in support.iter().enumerate() {
            let energy: f64 = (0..maps.coils).map(|c| maps.data[c * n + p].norm_sqr()).sum();
            let ok = if inside {
                (energy - 1.0).abs() <= tol
            } else {
                energy == 0.0
            };
            if !ok {
                return Err(Error::Config(format!(
                    "sensitivity energy {energy} at pixel {p} violates normalization"
                )));
            }
        }
        Ok(SensitivityMaps { maps, support })
    }

    fn check(&self, height: usize, width: usize) -> Result<()> {
        if (self.height(), self.width()) != (height, width) {
            return Err(Error::Dimension(format!(
                "sensitivity maps are {}x{}, expected {height}x{width}",
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }
}

/// Cartesian line mask: a column is either fully acquired or skipped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingMask {
    height: usize,
    columns: Vec<bool>,
}

impl SamplingMask {
    pub fn from_columns(height: usize, columns: Vec<bool>) -> Self {
        SamplingMask { height, columns }
    }

    pub fn full(height: usize, width: usize) -> Self {
        SamplingMask {
            height,
            columns: vec![true; width],
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        SamplingMask {
            height,
            columns: vec![false; width],
        }
    }

    /// Parses a dense H×W 0/1 array, rejecting masks that vary along the
    /// readout direction.
    pub fn from_dense(height: usize, width: usize, values: &[f32]) -> Result<Self> {
        if values.len() != height * width || height == 0 {
            return Err(Error::Dimension(format!(
                "mask has {} values, expected {height}x{width}",
                values.len()
            )));
        }
        let mut columns = Vec::with_capacity(width);
        for c in 0..width {
            let v = values[c];
            if v != 0.0 && v != 1.0 {
                return Err(Error::Config(format!("mask value {v} is not binary")));
            }
            if (1..height).any(|r| values[r * width + c] != v) {
                return Err(Error::Config(format!(
                    "mask column {c} varies along the readout direction"
                )));
            }
            columns.push(v == 1.0);
        }
        Ok(SamplingMask { height, columns })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[bool] {
        &self.columns
    }

    pub fn is_sampled(&self, _row: usize, col: usize) -> bool {
        self.columns[col]
    }

    pub fn sampled_columns(&self) -> usize {
        self.columns.iter().filter(|&&s| s).count()
    }

    pub fn sampled_fraction(&self) -> f64 {
        self.sampled_columns() as f64 / self.columns.len() as f64
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.height * self.width());
        for _ in 0..self.height {
            out.extend(self.columns.iter().map(|&s| if s { 1.0f32 } else { 0.0 }));
        }
        out
    }

    fn check(&self, height: usize, width: usize) -> Result<()> {
        if (self.height, self.width()) != (height, width) {
            return Err(Error::Dimension(format!(
                "mask is {}x{}, expected {height}x{width}",
                self.height,
                self.width()
            )));
        }
        Ok(())
    }

    /// Zeroes unsampled entries of a plane in place.
    pub fn apply(&self, plane: &mut [Complex64]) {
        let w = self.width();
        for row in plane.chunks_exact_mut(w) {
            for (z, &keep) in row.iter_mut().zip(&self.columns) {
                if !keep {
                    *z = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    /// Zeroes sampled entries of a plane in place (applies `1 - M`).
    pub fn apply_complement(&self, plane: &mut [Complex64]) {
        let w = self.width();
        for row in plane.chunks_exact_mut(w) {
            for (z, &keep) in row.iter_mut().zip(&self.columns) {
                if keep {
                    *z = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
}

/// Measured data together with the operator that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Acquisition {
    pub kspace: MultiCoilKSpace,
    pub maps: SensitivityMaps,
    pub mask: SamplingMask,
}

impl Acquisition {
    pub fn new(kspace: MultiCoilKSpace, maps: SensitivityMaps, mask: SamplingMask) -> Result<Self> {
        kspace.check_grid(maps.height(), maps.width(), maps.coils(), "k-space")?;
        mask.check(maps.height(), maps.width())?;
        Ok(Acquisition { kspace, maps, mask })
    }

    pub fn height(&self) -> usize {
        self.maps.height()
    }

    pub fn width(&self) -> usize {
        self.maps.width()
    }

    pub fn zero_filled(&self) -> ComplexImage {
        adjoint_op(&self.kspace, &self.maps, &self.mask).expect("acquisition shapes validated")
    }

    /// Copy with k-space scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Acquisition {
        let mut out = self.clone();
        out.kspace.data.iter_mut().for_each(|z| *z *= factor);
        out
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn ifftshift_index(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// Unnormalized, uncentered in-place 2D transform over a row-major buffer.
fn fft2_raw(data: &mut [Complex64], height: usize, width: usize, direction: FftDirection) {
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(width, direction);
        let col_fft = planner.plan_fft(height, direction);
        let scratch_len = row_fft
            .get_inplace_scratch_len()
            .max(col_fft.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];

        for row in data.chunks_exact_mut(width) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); height];
        for c in 0..width {
            for r in 0..height {
                column[r] = data[r * width + c];
            }
            col_fft.process_with_scratch(&mut column, &mut scratch);
            for r in 0..height {
                data[r * width + c] = column[r];
            }
        }
    });
}

/// Centered orthonormal transform of a raw plane.
fn centered(input: &[Complex64], height: usize, width: usize, direction: FftDirection) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); height * width];
    // ifftshift on the way in
    for r in 0..height {
        let sr = ifftshift_index(r, height);
        for c in 0..width {
            buf[r * width + c] = input[sr * width + ifftshift_index(c, width)];
        }
    }
    fft2_raw(&mut buf, height, width, direction);
    let scale = 1.0 / ((height * width) as f64).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); height * width];
    // fftshift on the way out: out[(i + n/2) % n] = buf[i]
    for r in 0..height {
        let dr = ifftshift_index(r, height);
        for c in 0..width {
            out[dr * width + ifftshift_index(c, width)] = buf[r * width + c] * scale;
        }
    }
    out
}

fn fft_plane(plane: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    centered(plane, height, width, FftDirection::Forward)
}

fn ifft_plane(plane: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    // the shift pair inverts itself: fftshift⁻¹ = ifftshift
    centered(plane, height, width, FftDirection::Inverse)
}

/// Centered orthonormal 2D DFT.
pub fn fft2c(img: &ComplexImage) -> Result<KSpacePlane> {
    if img.height == 0 || img.width == 0 {
        return Err(Error::Dimension("transform needs a non-empty grid".into()));
    }
    if !img.is_finite() {
        return Err(Error::NumericDomain("fft2c input"));
    }
    Ok(ComplexImage {
        height: img.height,
        width: img.width,
        data: fft_plane(&img.data, img.height, img.width),
    })
}

/// Inverse of [`fft2c`].
pub fn ifft2c(k: &KSpacePlane) -> Result<ComplexImage> {
    if k.height == 0 || k.width == 0 {
        return Err(Error::Dimension("transform needs a non-empty grid".into()));
    }
    if !k.is_finite() {
        return Err(Error::NumericDomain("ifft2c input"));
    }
    Ok(ComplexImage {
        height: k.height,
        width: k.width,
        data: ifft_plane(&k.data, k.height, k.width),
    })
}

/// `y_c = M ⊙ F(S_c ⊙ x)` for every coil.
pub fn forward_op(x: &ComplexImage, maps: &SensitivityMaps, mask: &SamplingMask) -> Result<MultiCoilKSpace> {
    let (h, w) = x.shape();
    maps.check(h, w)?;
    mask.check(h, w)?;
    let coils = maps.coils();
    let mut out = CoilArray::zeros(coils, h, w);
    let mut coil_img = vec![Complex64::new(0.0, 0.0); h * w];
    for c in 0..coils {
        for ((dst, s), v) in coil_img.iter_mut().zip(maps.coil(c)).zip(&x.data) {
            *dst = s * v;
        }
        let mut k = fft_plane(&coil_img, h, w);
        mask.apply(&mut k);
        out.plane_mut(c).copy_from_slice(&k);
    }
    Ok(out)
}

/// `Σ_c conj(S_c) ⊙ F⁻¹(M ⊙ y_c)`: the zero-filled SENSE combination.
pub fn adjoint_op(y: &MultiCoilKSpace, maps: &SensitivityMaps, mask: &SamplingMask) -> Result<ComplexImage> {
    let (h, w) = (maps.height(), maps.width());
    y.check_grid(h, w, maps.coils(), "k-space")?;
    mask.check(h, w)?;
    let mut out = ComplexImage::zeros(h, w);
    let mut plane = vec![Complex64::new(0.0, 0.0); h * w];
    for c in 0..maps.coils() {
        plane.copy_from_slice(y.plane(c));
        mask.apply(&mut plane);
        let img = ifft_plane(&plane, h, w);
        for ((acc, s), v) in out.data.iter_mut().zip(maps.coil(c)).zip(&img) {
            *acc += s.conj() * v;
        }
    }
    Ok(out)
}

/// `Σ_c conj(S_c) ⊙ coil_c`, zero off the support.
pub fn sense_combine(coil_imgs: &CoilArray, maps: &SensitivityMaps) -> Result<ComplexImage> {
    let (h, w) = (maps.height(), maps.width());
    coil_imgs.check_grid(h, w, maps.coils(), "coil images")?;
    let mut out = ComplexImage::zeros(h, w);
    for c in 0..maps.coils() {
        for ((acc, s), v) in out.data.iter_mut().zip(maps.coil(c)).zip(coil_imgs.plane(c)) {
            *acc += s.conj() * v;
        }
    }
    Ok(out)
}

/// Coil images `S_c ⊙ x`.
pub fn coil_images(x: &ComplexImage, maps: &SensitivityMaps) -> Result<CoilArray> {
    let (h, w) = x.shape();
    maps.check(h, w)?;
    let mut out = CoilArray::zeros(maps.coils(), h, w);
    for c in 0..maps.coils() {
        for ((dst, s), v) in out.plane_mut(c).iter_mut().zip(maps.coil(c)).zip(&x.data) {
            *dst = s * v;
        }
    }
    Ok(out)
}

/// Scales raw coil profiles so their root-sum-of-squares is one on the
/// support, and zeroes everything outside it.
pub fn normalize_sensitivities(raw: &CoilArray, support: &[bool]) -> Result<SensitivityMaps> {
    let (h, w) = (raw.height, raw.width);
    if support.len() != h * w {
        return Err(Error::Dimension(format!(
            "support has {} pixels, expected {h}x{w}",
            support.len()
        )));
    }
    if raw.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NumericDomain("raw sensitivity profiles"));
    }
    let n = h * w;
    let mut maps = CoilArray::zeros(raw.coils, h, w);
    for (p, &inside) in support.iter().enumerate() {
        if !inside {
            continue;
        }
        let energy: f64 = (0..raw.coils).map(|c| raw.data[c * n + p].norm_sqr()).sum();
        if energy == 0.0 {
            return Err(Error::DegenerateSupport {
                row: p / w,
                col: p % w,
            });
        }
        let inv = 1.0 / energy.sqrt();
        for c in 0..raw.coils {
            maps.data[c * n + p] = raw.data[c * n + p] * inv;
        }
    }
    Ok(SensitivityMaps {
        maps,
        support: support.to_vec(),
    })
}
