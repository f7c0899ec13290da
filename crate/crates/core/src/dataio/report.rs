use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{MetricReport, Window};

pub const CSV_HEADER: &str = "method,ssim,nmse,psnr,seconds";

/// Writes an 8-bit grayscale PNG of a real image.
///
/// Negative values are clipped to zero, then intensities are mapped linearly
/// between the window's low and high percentiles. If the window collapses the
/// image maximum is used as the upper bound; a constant image renders as
/// uniform mid-gray.
pub fn export_png(values: &[f64], ny: usize, nx: usize, path: impl AsRef<Path>, window: Window) -> Result<()> {
    if values.len() != ny * nx {
        return Err(Error::Shape(format!("{} values for a {ny}x{nx} PNG", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite value in PNG export".into()));
    }
    let clipped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let (lo, mut hi) = window.bounds(&clipped);
    if hi <= lo {
        hi = clipped.iter().cloned().fold(lo, f64::max);
    }
    let pixels: Vec<u8> = if hi <= lo {
        vec![128; ny * nx]
    } else {
        clipped
            .iter()
            .map(|v| (255.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8)
            .collect()
    };
    let img = image::GrayImage::from_raw(nx as u32, ny as u32, pixels)
        .ok_or_else(|| Error::Png("buffer size mismatch".into()))?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Png(e.to_string()))
}

/// `%g`-style formatting with six significant digits.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    // rounding can bump the exponent (e.g. 999999.5)
    let s = format!("{v:.5e}");
    let mant_exp: i32 = s.split('e').nth(1).and_then(|e| e.parse().ok()).unwrap_or(exp);
    if (-5..6).contains(&mant_exp) {
        let decimals = (5 - mant_exp).max(0) as usize;
        let f = format!("{v:.decimals$}");
        if f.contains('.') {
            f.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            f
        }
    } else {
        s
    }
}

pub fn write_metrics_csv(rows: &[MetricReport], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        if r.method.contains([',', '\n', '"']) {
            return Err(Error::InvalidData(format!("method label {:?} is not CSV-safe", r.method)));
        }
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method,
            format_sig6(r.ssim),
            format_sig6(r.nmse),
            format_sig6(r.psnr),
            format_sig6(r.seconds)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricReport>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format("metrics CSV header mismatch".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Format(format!("metrics row {l:?} has {} fields", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s:?}")));
            Ok(MetricReport {
                method: f[0].to_string(),
                ssim: num(f[1])?,
                nmse: num(f[2])?,
                psnr: num(f[3])?,
                seconds: num(f[4])?,
            })
        })
        .collect()
}
