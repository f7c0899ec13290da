//! Multi-coil encoding operator `E = F_Ω C_j` and its adjoint.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{fft2c_inplace, ifft2c_inplace};
use crate::types::{CoilMaps, ComplexImage, KSpace, SamplingMask, C64, ZERO};

/// Borrowed encoding operator for one acquisition geometry.
///
/// The slice-level methods are what the iterative solvers call; the free
/// functions below wrap them with shape checks.
#[derive(Clone, Copy)]
pub struct Encoding<'a> {
    sens: &'a CoilMaps,
    mask: &'a SamplingMask,
}

impl<'a> Encoding<'a> {
    pub fn new(sens: &'a CoilMaps, mask: &'a SamplingMask) -> Result<Self> {
        if (sens.ny(), sens.nx()) != (mask.ny(), mask.nx()) {
            return Err(Error::Shape(format!(
                "sensitivities {}x{} vs mask {}x{}",
                sens.ny(),
                sens.nx(),
                mask.ny(),
                mask.nx()
            )));
        }
        Ok(Self { sens, mask })
    }

    pub fn sens(&self) -> &'a CoilMaps {
        self.sens
    }

    pub fn mask(&self) -> &'a SamplingMask {
        self.mask
    }

    pub fn n_coils(&self) -> usize {
        self.sens.n_coils()
    }

    pub fn image_len(&self) -> usize {
        self.sens.ny() * self.sens.nx()
    }

    pub fn check_image(&self, img: &ComplexImage) -> Result<()> {
        if img.dims() != (self.sens.ny(), self.sens.nx()) {
            return Err(Error::Shape(format!(
                "image {:?} vs sensitivities {}x{}",
                img.dims(),
                self.sens.ny(),
                self.sens.nx()
            )));
        }
        Ok(())
    }

    pub fn check_kspace(&self, f: &KSpace) -> Result<()> {
        if f.dims() != self.sens.dims() {
            return Err(Error::Shape(format!("k-space {:?} vs sensitivities {:?}", f.dims(), self.sens.dims())));
        }
        Ok(())
    }

    /// `E u`, coil-major output.
    pub fn forward(&self, u: &[C64]) -> Vec<C64> {
        let (ny, nx) = (self.sens.ny(), self.sens.nx());
        let n = ny * nx;
        let mask = self.mask.entries();
        let mut out = vec![ZERO; self.n_coils() * n];
        out.par_chunks_mut(n).enumerate().for_each(|(j, buf)| {
            let c = self.sens.coil(j);
            for p in 0..n {
                buf[p] = c[p] * u[p];
            }
            fft2c_inplace(buf, ny, nx);
            for p in 0..n {
                if !mask[p] {
                    buf[p] = ZERO;
                }
            }
        });
        out
    }

    /// `E* f`; coil contributions are summed sequentially in coil order.
    pub fn adjoint(&self, f: &[C64]) -> Vec<C64> {
        let (ny, nx) = (self.sens.ny(), self.sens.nx());
        let n = ny * nx;
        let mask = self.mask.entries();
        let coil_images: Vec<Vec<C64>> = (0..self.n_coils())
            .into_par_iter()
            .map(|j| {
                let fj = &f[j * n..(j + 1) * n];
                let mut buf: Vec<C64> = fj.iter().zip(mask).map(|(&v, &m)| if m { v } else { ZERO }).collect();
                ifft2c_inplace(&mut buf, ny, nx);
                let c = self.sens.coil(j);
                buf.iter_mut().zip(c).for_each(|(b, cj)| *b *= cj.conj());
                buf
            })
            .collect();
        let mut out = vec![ZERO; n];
        for img in &coil_images {
            out.iter_mut().zip(img).for_each(|(o, v)| *o += v);
        }
        out
    }

    /// `E* E u`.
    pub fn normal(&self, u: &[C64]) -> Vec<C64> {
        self.adjoint(&self.forward(u))
    }
}

pub fn apply_encoding(u: &ComplexImage, sens: &CoilMaps, mask: &SamplingMask) -> Result<KSpace> {
    let enc = Encoding::new(sens, mask)?;
    enc.check_image(u)?;
    Ok(KSpace::from_vec_unchecked(sens.n_coils(), sens.ny(), sens.nx(), enc.forward(u.data())))
}

pub fn apply_adjoint(f: &KSpace, sens: &CoilMaps, mask: &SamplingMask) -> Result<ComplexImage> {
    let enc = Encoding::new(sens, mask)?;
    enc.check_kspace(f)?;
    Ok(ComplexImage::from_vec_unchecked(sens.ny(), sens.nx(), enc.adjoint(f.data())))
}

/// Inverse-transforms every coil of a k-space array (no masking).
pub fn coil_images(f: &KSpace) -> Vec<ComplexImage> {
    let (ny, nx) = (f.ny(), f.nx());
    (0..f.n_coils())
        .into_par_iter()
        .map(|j| {
            let mut buf = f.coil(j).to_vec();
            ifft2c_inplace(&mut buf, ny, nx);
            ComplexImage::from_vec_unchecked(ny, nx, buf)
        })
        .collect()
}

/// Root-sum-of-squares coil combination; the result is real and non-negative.
pub fn rss_combine(coil_images: &[ComplexImage]) -> Result<ComplexImage> {
    let first = coil_images
        .first()
        .ok_or_else(|| Error::InvalidData("no coil images to combine".into()))?;
    let (ny, nx) = first.dims();
    if coil_images.iter().any(|c| c.dims() != (ny, nx)) {
        return Err(Error::Shape("coil images differ in size".into()));
    }
    let mut ss = vec![0.0f64; ny * nx];
    for img in coil_images {
        ss.iter_mut().zip(img.data()).for_each(|(s, z)| *s += z.norm_sqr());
    }
    Ok(ComplexImage::from_vec_unchecked(ny, nx, ss.into_iter().map(|s| C64::new(s.sqrt(), 0.0)).collect()))
}

/// RSS image of a (filled or zero-filled) multi-coil k-space.
pub fn rss_of_kspace(f: &KSpace) -> ComplexImage {
    rss_combine(&coil_images(f)).expect("k-space has at least one coil")
}
