//! Centered, unitary 2D Fourier transforms.
//!
//! The DC sample sits at `(ny/2, nx/2)` (integer division) in k-space and the
//! image origin at the same index in image space. Both directions carry a
//! `1/sqrt(ny*nx)` factor so the transform is unitary and its inverse is
//! its adjoint.

use std::cell::RefCell;

use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::types::{ComplexImage, C64, ZERO};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transform_lines(buf: &mut [C64], len: usize, direction: FftDirection) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction));
    let mut scratch = vec![ZERO; fft.get_inplace_scratch_len()];
    fft.process_with_scratch(buf, &mut scratch);
}

fn transpose(src: &[C64], dst: &mut [C64], rows: usize, cols: usize) {
    const B: usize = 16;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

fn centered_inplace(buf: &mut [C64], ny: usize, nx: usize, direction: FftDirection) {
    debug_assert_eq!(buf.len(), ny * nx);
    let (cy, cx) = (ny / 2, nx / 2);
    // move the center index to position 0 along both axes
    buf.rotate_left(cy * nx);
    for row in buf.chunks_exact_mut(nx) {
        row.rotate_left(cx);
    }
    transform_lines(buf, nx, direction);
    let mut t = vec![ZERO; ny * nx];
    transpose(buf, &mut t, ny, nx);
    transform_lines(&mut t, ny, direction);
    transpose(&t, buf, nx, ny);
    buf.rotate_right(cy * nx);
    let scale = 1.0 / ((ny * nx) as f64).sqrt();
    for row in buf.chunks_exact_mut(nx) {
        row.rotate_right(cx);
        row.iter_mut().for_each(|z| *z *= scale);
    }
}

/// In-place forward centered unitary FFT of a row-major `ny x nx` buffer.
pub fn fft2c_inplace(buf: &mut [C64], ny: usize, nx: usize) {
    centered_inplace(buf, ny, nx, FftDirection::Forward);
}

/// In-place inverse centered unitary FFT of a row-major `ny x nx` buffer.
pub fn ifft2c_inplace(buf: &mut [C64], ny: usize, nx: usize) {
    centered_inplace(buf, ny, nx, FftDirection::Inverse);
}

fn checked(img: &ComplexImage) -> Result<()> {
    if img.ny() < 2 || img.nx() < 2 {
        return Err(Error::Shape(format!("FFT needs at least 2x2, got {}x{}", img.ny(), img.nx())));
    }
    if img.data().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidData("non-finite value in FFT input".into()));
    }
    Ok(())
}

pub fn fft2c(img: &ComplexImage) -> Result<ComplexImage> {
    checked(img)?;
    let mut data = img.data().to_vec();
    fft2c_inplace(&mut data, img.ny(), img.nx());
    Ok(ComplexImage::from_vec_unchecked(img.ny(), img.nx(), data))
}

pub fn ifft2c(img: &ComplexImage) -> Result<ComplexImage> {
    checked(img)?;
    let mut data = img.data().to_vec();
    ifft2c_inplace(&mut data, img.ny(), img.nx());
    Ok(ComplexImage::from_vec_unchecked(img.ny(), img.nx(), data))
}
