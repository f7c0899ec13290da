//! Image quality metrics on real (magnitude) images.

use crate::error::{Error, Result};
use crate::types::ComplexImage;

const WIN_RADIUS: usize = 5;
const WIN_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 300.0;

fn check(test: &[f64], reference: &[f64], ny: usize, nx: usize) -> Result<()> {
    if test.len() != ny * nx || reference.len() != ny * nx {
        return Err(Error::Shape(format!(
            "metric inputs have {} and {} values for {ny}x{nx}",
            test.len(),
            reference.len()
        )));
    }
    Ok(())
}

/// Normalized 1D Gaussian taps for the 11-tap SSIM window.
pub fn gaussian_taps() -> [f64; 2 * WIN_RADIUS + 1] {
    let mut g = [0.0; 2 * WIN_RADIUS + 1];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - WIN_RADIUS as f64;
        *v = (-d * d / (2.0 * WIN_SIGMA * WIN_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Half-sample symmetric reflection (`-1 -> 0`, `n -> n-1`).
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

fn gaussian_filter(img: &[f64], ny: usize, nx: usize) -> Vec<f64> {
    let g = gaussian_taps();
    let r = WIN_RADIUS as isize;
    let mut tmp = vec![0.0; ny * nx];
    for y in 0..ny {
        let row = &img[y * nx..(y + 1) * nx];
        for x in 0..nx {
            let mut acc = 0.0;
            for (k, w) in g.iter().enumerate() {
                acc += w * row[reflect(x as isize + k as isize - r, nx)];
            }
            tmp[y * nx + x] = acc;
        }
    }
    let mut out = vec![0.0; ny * nx];
    for y in 0..ny {
        for x in 0..nx {
            let mut acc = 0.0;
            for (k, w) in g.iter().enumerate() {
                acc += w * tmp[reflect(y as isize + k as isize - r, ny) * nx + x];
            }
            out[y * nx + x] = acc;
        }
    }
    out
}

/// Mean SSIM with dynamic range `max(reference)`.
pub fn ssim(test: &[f64], reference: &[f64], ny: usize, nx: usize) -> Result<f64> {
    check(test, reference, ny, nx)?;
    let range = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(range > 0.0) {
        return Err(Error::DegenerateReference);
    }
    ssim_with_range(test, reference, ny, nx, range)
}

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03) with an
/// explicit dynamic range.
pub fn ssim_with_range(test: &[f64], reference: &[f64], ny: usize, nx: usize, range: f64) -> Result<f64> {
    check(test, reference, ny, nx)?;
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let mu_x = gaussian_filter(test, ny, nx);
    let mu_y = gaussian_filter(reference, ny, nx);
    let xx: Vec<f64> = test.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = reference.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = test.iter().zip(reference).map(|(a, b)| a * b).collect();
    let e_xx = gaussian_filter(&xx, ny, nx);
    let e_yy = gaussian_filter(&yy, ny, nx);
    let e_xy = gaussian_filter(&xy, ny, nx);
    let mut total = 0.0;
    for p in 0..ny * nx {
        let (mx, my) = (mu_x[p], mu_y[p]);
        let sxx = e_xx[p] - mx * mx;
        let syy = e_yy[p] - my * my;
        let sxy = e_xy[p] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    }
    Ok(total / (ny * nx) as f64)
}

/// `‖test − ref‖² / ‖ref‖²`.
pub fn nmse(test: &[f64], reference: &[f64]) -> Result<f64> {
    if test.len() != reference.len() {
        return Err(Error::Shape("nmse inputs differ in length".into()));
    }
    let den: f64 = reference.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::DegenerateReference);
    }
    let num: f64 = test.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(num / den)
}

/// `10 log10(max(ref)^2 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(test: &[f64], reference: &[f64]) -> Result<f64> {
    if test.len() != reference.len() {
        return Err(Error::Shape("psnr inputs differ in length".into()));
    }
    let peak = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::DegenerateReference);
    }
    let mse: f64 = test.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / test.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Linear percentile-based intensity window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub low_pct: f64,
    pub high_pct: f64,
}

impl Window {
    /// Window used for all metric comparisons: reference min..max.
    pub const METRICS: Window = Window { low_pct: 0.0, high_pct: 100.0 };
    /// Display window for PNG export.
    pub const DISPLAY: Window = Window { low_pct: 1.0, high_pct: 99.0 };

    /// `(low, high)` intensity bounds at the configured percentiles.
    pub fn bounds(&self, values: &[f64]) -> (f64, f64) {
        (percentile(values, self.low_pct), percentile(values, self.high_pct))
    }
}

/// Linear-interpolated percentile (`pct` in `[0, 100]`).
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return 0.0;
    }
    let pos = (pct.clamp(0.0, 100.0) / 100.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn apply_window(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    values.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// One row of a method comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub ssim: f64,
    pub nmse: f64,
    pub psnr: f64,
    pub seconds: f64,
}

impl MetricReport {
    /// Compares magnitude images after mapping both through the same window,
    /// derived from the reference.
    pub fn compute(method: &str, test: &ComplexImage, reference: &ComplexImage, seconds: f64) -> Result<Self> {
        if test.dims() != reference.dims() {
            return Err(Error::Shape(format!("test {:?} vs reference {:?}", test.dims(), reference.dims())));
        }
        let (ny, nx) = reference.dims();
        let rm = reference.magnitude();
        let (lo, hi) = Window::METRICS.bounds(&rm);
        if !(hi > lo) {
            return Err(Error::DegenerateReference);
        }
        let r = apply_window(&rm, lo, hi);
        let t = apply_window(&test.magnitude(), lo, hi);
        Ok(Self {
            method: method.to_string(),
            ssim: ssim_with_range(&t, &r, ny, nx, 1.0)?,
            nmse: nmse(&t, &r)?,
            psnr: psnr(&t, &r)?,
            seconds,
        })
    }
}
