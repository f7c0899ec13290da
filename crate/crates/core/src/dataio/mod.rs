//! Binary interchange formats.
//!
//! Every file starts with a 4-byte ASCII magic, a version byte (= 1) and
//! little-endian `u32` dimensions:
//!
//! | magic  | dims            | payload                                        |
//! |--------|-----------------|------------------------------------------------|
//! | `KSPC` | n_c, ny, nx     | complex f32 pairs, coil-major then row-major   |
//! | `SENS` | n_c, ny, nx     | complex f32 pairs, coil-major then row-major   |
//! | `IMGC` | ny, nx          | complex f32 pairs, row-major                   |
//! | `MASK` | ny, nx          | one byte per entry (0/1), then u32 acs_start, acs_len, acceleration |
//!
//! Complex values are interleaved `(re, im)` IEEE-754 binary32. Values are
//! held as f64 in memory and quantized to f32 on write.

pub mod blob;
mod report;

pub use report::{export_png, format_sig6, read_metrics_csv, write_metrics_csv, CSV_HEADER};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{CoilMaps, ComplexImage, KSpace, SamplingMask, C64};

pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    KSpace,
    Mask,
    Sensitivities,
    Image,
}

impl Kind {
    pub fn magic(self) -> &'static [u8; 4] {
        match self {
            Kind::KSpace => b"KSPC",
            Kind::Mask => b"MASK",
            Kind::Sensitivities => b"SENS",
            Kind::Image => b"IMGC",
        }
    }

    fn n_dims(self) -> usize {
        match self {
            Kind::KSpace | Kind::Sensitivities => 3,
            Kind::Mask | Kind::Image => 2,
        }
    }

    pub fn header_len(self) -> usize {
        5 + 4 * self.n_dims()
    }
}

fn write_header(out: &mut Vec<u8>, kind: Kind, dims: &[usize]) -> Result<()> {
    debug_assert_eq!(dims.len(), kind.n_dims());
    out.extend_from_slice(kind.magic());
    out.push(VERSION);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Validates magic, version and header length; returns the dimensions.
fn parse_header(bytes: &[u8], kind: Kind) -> Result<Vec<usize>> {
    if bytes.len() < 4 {
        return Err(Error::Truncation { expected: kind.header_len(), found: bytes.len() });
    }
    if &bytes[..4] != kind.magic() {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(kind.magic()),
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    if bytes.len() < 5 {
        return Err(Error::Truncation { expected: kind.header_len(), found: bytes.len() });
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    if bytes.len() < kind.header_len() {
        return Err(Error::Truncation { expected: kind.header_len(), found: bytes.len() });
    }
    Ok((0..kind.n_dims()).map(|i| read_u32(bytes, 5 + 4 * i) as usize).collect())
}

fn payload_len(dims: &[usize], bytes_per: usize) -> Result<usize> {
    dims.iter()
        .try_fold(bytes_per, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("dimensions {dims:?} overflow")))
}

fn check_len(bytes: &[u8], expected: usize) -> Result<()> {
    match bytes.len().cmp(&expected) {
        std::cmp::Ordering::Less => Err(Error::Truncation { expected, found: bytes.len() }),
        std::cmp::Ordering::Greater => Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        ))),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

fn push_complex(out: &mut Vec<u8>, data: &[C64]) {
    out.reserve(data.len() * 8);
    for z in data {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
}

fn parse_complex(bytes: &[u8]) -> Vec<C64> {
    bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
            let im = f32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
            C64::new(re as f64, im as f64)
        })
        .collect()
}

fn decode_complex(bytes: &[u8], kind: Kind) -> Result<(Vec<usize>, Vec<C64>)> {
    let dims = parse_header(bytes, kind)?;
    let h = kind.header_len();
    check_len(bytes, h + payload_len(&dims, 8)?)?;
    Ok((dims, parse_complex(&bytes[h..])))
}

pub fn encode_kspace(k: &KSpace) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_header(&mut out, Kind::KSpace, &[k.n_coils(), k.ny(), k.nx()])?;
    push_complex(&mut out, k.data());
    Ok(out)
}

pub fn decode_kspace(bytes: &[u8]) -> Result<KSpace> {
    let (d, data) = decode_complex(bytes, Kind::KSpace)?;
    KSpace::new(d[0], d[1], d[2], data)
}

pub fn encode_sensitivities(s: &CoilMaps) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_header(&mut out, Kind::Sensitivities, &[s.n_coils(), s.ny(), s.nx()])?;
    push_complex(&mut out, s.data());
    Ok(out)
}

/// The support is recovered as the set of pixels where any coil is non-zero.
pub fn decode_sensitivities(bytes: &[u8]) -> Result<CoilMaps> {
    let (d, data) = decode_complex(bytes, Kind::Sensitivities)?;
    let (nc, ny, nx) = (d[0], d[1], d[2]);
    let n = ny * nx;
    if nc == 0 {
        return Err(Error::Format("sensitivity file with zero coils".into()));
    }
    let support = (0..n).map(|p| (0..nc).any(|j| data[j * n + p] != C64::new(0.0, 0.0))).collect();
    CoilMaps::new(nc, ny, nx, data, support)
}

pub fn encode_image(img: &ComplexImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_header(&mut out, Kind::Image, &[img.ny(), img.nx()])?;
    push_complex(&mut out, img.data());
    Ok(out)
}

pub fn decode_image(bytes: &[u8]) -> Result<ComplexImage> {
    let (d, data) = decode_complex(bytes, Kind::Image)?;
    ComplexImage::new(d[0], d[1], data)
}

pub fn encode_mask(m: &SamplingMask) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_header(&mut out, Kind::Mask, &[m.ny(), m.nx()])?;
    out.extend(m.entries().iter().map(|&e| e as u8));
    let acs = m.acs_rows();
    for v in [acs.start, acs.len(), m.acceleration()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_mask(bytes: &[u8]) -> Result<SamplingMask> {
    let d = parse_header(bytes, Kind::Mask)?;
    let h = Kind::Mask.header_len();
    let n = payload_len(&d, 1)?;
    let total = n.checked_add(h + 12).ok_or_else(|| Error::Format("mask size overflow".into()))?;
    check_len(bytes, total)?;
    let entries = bytes[h..h + n]
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("mask byte {other} is not 0/1"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    let t = h + n;
    let (start, len, accel) = (read_u32(bytes, t) as usize, read_u32(bytes, t + 4) as usize, read_u32(bytes, t + 8) as usize);
    let end = start.checked_add(len).ok_or_else(|| Error::Format("ACS range overflow".into()))?;
    SamplingMask::new(d[0], d[1], entries, start..end, accel).map_err(|e| Error::Format(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn save_kspace(path: impl AsRef<Path>, k: &KSpace) -> Result<()> {
    write_file(path.as_ref(), &encode_kspace(k)?)
}

pub fn load_kspace(path: impl AsRef<Path>) -> Result<KSpace> {
    decode_kspace(&fs::read(path)?)
}

pub fn save_sensitivities(path: impl AsRef<Path>, s: &CoilMaps) -> Result<()> {
    write_file(path.as_ref(), &encode_sensitivities(s)?)
}

pub fn load_sensitivities(path: impl AsRef<Path>) -> Result<CoilMaps> {
    decode_sensitivities(&fs::read(path)?)
}

pub fn save_image(path: impl AsRef<Path>, img: &ComplexImage) -> Result<()> {
    write_file(path.as_ref(), &encode_image(img)?)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ComplexImage> {
    decode_image(&fs::read(path)?)
}

pub fn save_mask(path: impl AsRef<Path>, m: &SamplingMask) -> Result<()> {
    write_file(path.as_ref(), &encode_mask(m)?)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<SamplingMask> {
    decode_mask(&fs::read(path)?)
}
