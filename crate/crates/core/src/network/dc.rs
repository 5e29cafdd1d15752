//! Hard coil-wise data consistency.
//!
//! `dc(x) = Σ_c conj(S_c) F⁻¹((1-M) F(S_c x) + M y_c)`. As a function of `x`
//! this is `P x + Aᴴy` with `P = Σ_c conj(S_c) F⁻¹ (1-M) F S_c`, which is
//! complex-linear and self-adjoint, so the backward pass applies `P` to the
//! incoming gradient.

use num_complex::Complex64;

use crate::error::Result;
use crate::mri::{self, Acquisition, ComplexImage, CoilArray};

pub fn dc_layer(x: &ComplexImage, acq: &Acquisition) -> Result<ComplexImage> {
    let (h, w) = x.shape();
    let coils = acq.maps.coils();
    let mut k = mri::forward_op(x, &acq.maps, &mri::SamplingMask::full(h, w))?;
    for c in 0..coils {
        let measured = acq.kspace.plane(c);
        for (dst_row, src_row) in k.plane_mut(c).chunks_exact_mut(w).zip(measured.chunks_exact(w)) {
            for ((dst, src), &sampled) in dst_row.iter_mut().zip(src_row).zip(acq.mask.columns()) {
                if sampled {
                    *dst = *src;
                }
            }
        }
    }
    mri::adjoint_op(&k, &acq.maps, &mri::SamplingMask::full(h, w))
}

/// `P g`: the gradient of [`dc_layer`] with respect to its image input.
pub fn dc_backward(grad: &ComplexImage, acq: &Acquisition) -> ComplexImage {
    let (h, w) = grad.shape();
    let full = mri::SamplingMask::full(h, w);
    let mut k: CoilArray = mri::forward_op(grad, &acq.maps, &full).expect("acquisition shapes validated");
    for c in 0..acq.maps.coils() {
        acq.mask.apply_complement(k.plane_mut(c));
    }
    mri::adjoint_op(&k, &acq.maps, &full).expect("acquisition shapes validated")
}

/// Largest deviation between the re-measured sampled entries of `x` and
/// the acquired data, relative to the largest measured magnitude.
pub fn consistency_residual(x: &ComplexImage, acq: &Acquisition) -> Result<f64> {
    let remeasured = mri::forward_op(x, &acq.maps, &acq.mask)?;
    let scale = acq
        .kspace
        .data()
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let worst = remeasured
        .data()
        .iter()
        .zip(acq.kspace.data())
        .map(|(a, b): (&Complex64, &Complex64)| (a - b).norm())
        .fold(0.0f64, f64::max);
    Ok(worst / scale)
}
