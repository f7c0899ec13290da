//! Image-domain parallel imaging: sensitivity estimation from the ACS block
//! and CG-SENSE.

use std::f64::consts::PI;

use crate::encoding::{coil_images, Encoding};
use crate::error::{Error, Result};
use crate::linalg::conjugate_residual;
use crate::types::{CoilMaps, ComplexImage, KSpace, SamplingMask, C64, ZERO};

/// Default support threshold as a fraction of the maximum RSS.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// Relative normal-equation residual `‖E*E u − E*f‖ / ‖E*f‖` per iteration.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

/// Raised-cosine taper of length `n` that never reaches zero inside the block.
fn raised_cosine(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 * (1.0 - (2.0 * PI * (i + 1) as f64 / (n + 1) as f64).cos())).collect()
}

/// Low-resolution sensitivity estimate from the fully sampled central rows.
///
/// The ACS rows are tapered with a raised cosine along ky (over the ACS
/// extent) and along kx (over a centered band of matching relative width),
/// zero-padded to the full grid and inverse transformed. Each coil image is
/// divided by the RSS of all coils; pixels with
/// `RSS >= threshold * max(RSS)` form the support.
pub fn estimate_sensitivities(kspace: &KSpace, mask: &SamplingMask, threshold: f64) -> Result<CoilMaps> {
    let (nc, ny, nx) = kspace.dims();
    if (mask.ny(), mask.nx()) != (ny, nx) {
        return Err(Error::Shape(format!("mask {}x{} vs k-space {ny}x{nx}", mask.ny(), mask.nx())));
    }
    let acs = mask.acs_rows();
    if acs.is_empty() {
        return Err(Error::Calibration("no ACS rows to estimate sensitivities from".into()));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("support threshold {threshold} outside [0, 1]")));
    }
    let wy = raised_cosine(acs.len());
    let band = ((acs.len() * nx) as f64 / ny as f64).round().clamp(1.0, nx as f64) as usize;
    let x0 = nx / 2 - band / 2;
    let wx_band = raised_cosine(band);
    let mut wx = vec![0.0; nx];
    wx[x0..x0 + band].copy_from_slice(&wx_band);

    let mut low = KSpace::zeros(nc, ny, nx);
    for j in 0..nc {
        let src = kspace.coil(j);
        let dst = low.coil_mut(j);
        for (i, y) in acs.clone().enumerate() {
            for x in 0..nx {
                dst[y * nx + x] = src[y * nx + x] * (wy[i] * wx[x]);
            }
        }
    }
    let imgs = coil_images(&low);
    let n = ny * nx;
    let rss: Vec<f64> = (0..n).map(|p| imgs.iter().map(|c| c.data()[p].norm_sqr()).sum::<f64>().sqrt()).collect();
    let max = rss.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::Calibration("ACS data is all zero".into()));
    }
    let support: Vec<bool> = rss.iter().map(|&r| r > 0.0 && r >= threshold * max).collect();
    let mut data = vec![ZERO; nc * n];
    for (j, img) in imgs.iter().enumerate() {
        for p in 0..n {
            if support[p] {
                data[j * n + p] = img.data()[p] / rss[p];
            }
        }
    }
    CoilMaps::normalized(nc, ny, nx, data, support)
}

/// Krylov solve of the normal equations `E*E u = E*f` from `u = 0`.
///
/// Uses the conjugate-residual form of CG so the reported normal-equation
/// residual is non-increasing.
/// Iteration stops when the relative normal-equation residual drops below
/// `tol` or after `max_iter` iterations. A zero right-hand side returns the
/// zero image with a single zero residual.
pub fn cg_sense(
    kspace: &KSpace,
    sens: &CoilMaps,
    mask: &SamplingMask,
    tol: f64,
    max_iter: usize,
) -> Result<(ComplexImage, CgReport)> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::Config(format!("cg_sense needs tol > 0 and max_iter >= 1 (got {tol}, {max_iter})")));
    }
    let enc = Encoding::new(sens, mask)?;
    enc.check_kspace(kspace)?;
    let rhs = enc.adjoint(kspace.data());
    let out = conjugate_residual(|u| enc.normal(u), &rhs, vec![ZERO; rhs.len()], tol, max_iter, |_| {});
    let report = CgReport {
        iterations: out.residuals.len(),
        residual_history: out.residuals,
        converged: out.converged,
    };
    Ok((ComplexImage::from_vec_unchecked(sens.ny(), sens.nx(), out.x), report))
}

/// Zero-filled reconstruction `E* f` (sensitivity-weighted coil combination).
pub fn zero_filled(kspace: &KSpace, sens: &CoilMaps, mask: &SamplingMask) -> Result<ComplexImage> {
    let enc = Encoding::new(sens, mask)?;
    enc.check_kspace(kspace)?;
    Ok(ComplexImage::from_vec_unchecked(sens.ny(), sens.nx(), enc.adjoint(kspace.data())))
}

/// `½‖E u − f‖²`.
pub fn data_objective(enc: &Encoding<'_>, u: &[C64], f: &[C64]) -> f64 {
    let eu = enc.forward(u);
    let mask = enc.mask().entries();
    let n = enc.image_len();
    0.5 * eu
        .iter()
        .zip(f)
        .enumerate()
        .filter(|(i, _)| mask[i % n])
        .map(|(_, (a, b))| (a - b).norm_sqr())
        .sum::<f64>()
}
