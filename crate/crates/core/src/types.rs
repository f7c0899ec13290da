//! Array containers shared by every reconstruction method.
//!
//! All containers store complex values as `Complex64`, row-major, with
//! coil-major ordering for multi-coil data. Constructors validate shape and
//! finiteness so downstream code can index without re-checking.

use std::ops::Range;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

fn check_finite(data: &[C64]) -> Result<()> {
    if let Some(i) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidData(format!("non-finite value at index {i}")));
    }
    Ok(())
}

/// Complex inner product `Σ conj(a)·b`.
pub fn cdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Real part of the inner product, i.e. the inner product of the
/// real/imaginary embeddings.
pub fn rdot(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// A single 2D complex image.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    ny: usize,
    nx: usize,
    data: Vec<C64>,
}

impl ComplexImage {
    pub fn new(ny: usize, nx: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != ny * nx {
            return Err(Error::Shape(format!(
                "image data has {} values, expected {}x{}",
                data.len(),
                ny,
                nx
            )));
        }
        check_finite(&data)?;
        Ok(Self { ny, nx, data })
    }

    pub fn zeros(ny: usize, nx: usize) -> Self {
        Self { ny, nx, data: vec![ZERO; ny * nx] }
    }

    pub fn from_real(ny: usize, nx: usize, values: &[f64]) -> Result<Self> {
        Self::new(ny, nx, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    /// Internal constructor for values produced by our own arithmetic.
    pub(crate) fn from_vec_unchecked(ny: usize, nx: usize, data: Vec<C64>) -> Self {
        debug_assert_eq!(data.len(), ny * nx);
        Self { ny, nx, data }
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> C64 {
        self.data[y * self.nx + x]
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.data).sqrt()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn scale(&mut self, s: C64) {
        self.data.iter_mut().for_each(|z| *z *= s);
    }
}

/// Multi-coil k-space, coil-major then row-major, DC at `(ny/2, nx/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpace {
    n_coils: usize,
    ny: usize,
    nx: usize,
    data: Vec<C64>,
}

impl KSpace {
    pub fn new(n_coils: usize, ny: usize, nx: usize, data: Vec<C64>) -> Result<Self> {
        if n_coils == 0 {
            return Err(Error::InvalidData("k-space needs at least one coil".into()));
        }
        if data.len() != n_coils * ny * nx {
            return Err(Error::Shape(format!(
                "k-space data has {} values, expected {}x{}x{}",
                data.len(),
                n_coils,
                ny,
                nx
            )));
        }
        check_finite(&data)?;
        Ok(Self { n_coils, ny, nx, data })
    }

    pub fn zeros(n_coils: usize, ny: usize, nx: usize) -> Self {
        Self { n_coils, ny, nx, data: vec![ZERO; n_coils * ny * nx] }
    }

    pub(crate) fn from_vec_unchecked(n_coils: usize, ny: usize, nx: usize, data: Vec<C64>) -> Self {
        debug_assert_eq!(data.len(), n_coils * ny * nx);
        Self { n_coils, ny, nx, data }
    }

    pub fn n_coils(&self) -> usize {
        self.n_coils
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_coils, self.ny, self.nx)
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn coil(&self, j: usize) -> &[C64] {
        let n = self.ny * self.nx;
        &self.data[j * n..(j + 1) * n]
    }

    pub fn coil_mut(&mut self, j: usize) -> &mut [C64] {
        let n = self.ny * self.nx;
        &mut self.data[j * n..(j + 1) * n]
    }

    pub fn get(&self, j: usize, y: usize, x: usize) -> C64 {
        self.data[(j * self.ny + y) * self.nx + x]
    }

    /// Copy of the given ky rows for every coil.
    pub fn rows(&self, rows: Range<usize>) -> Result<KSpace> {
        if rows.end > self.ny || rows.is_empty() {
            return Err(Error::Shape(format!("row range {rows:?} outside 0..{}", self.ny)));
        }
        let h = rows.len();
        let mut out = Vec::with_capacity(self.n_coils * h * self.nx);
        for j in 0..self.n_coils {
            let c = self.coil(j);
            out.extend_from_slice(&c[rows.start * self.nx..rows.end * self.nx]);
        }
        Ok(KSpace::from_vec_unchecked(self.n_coils, h, self.nx, out))
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.data).sqrt()
    }
}

/// Binary Cartesian sampling pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingMask {
    ny: usize,
    nx: usize,
    entries: Vec<bool>,
    acs_rows: Range<usize>,
    acceleration: usize,
}

impl SamplingMask {
    pub fn new(
        ny: usize,
        nx: usize,
        entries: Vec<bool>,
        acs_rows: Range<usize>,
        acceleration: usize,
    ) -> Result<Self> {
        if entries.len() != ny * nx {
            return Err(Error::Shape(format!(
                "mask has {} entries, expected {}x{}",
                entries.len(),
                ny,
                nx
            )));
        }
        if !entries.iter().any(|&e| e) {
            return Err(Error::InvalidMask("mask samples nothing".into()));
        }
        if acceleration == 0 {
            return Err(Error::InvalidMask("acceleration must be positive".into()));
        }
        if !acs_rows.is_empty() {
            if acs_rows.end > ny {
                return Err(Error::InvalidMask(format!("ACS rows {acs_rows:?} exceed {ny}")));
            }
            if acs_rows.clone().any(|y| !entries[y * nx..(y + 1) * nx].iter().all(|&e| e)) {
                return Err(Error::InvalidMask("ACS rows must be fully sampled".into()));
            }
        }
        let acs_rows = if acs_rows.is_empty() { 0..0 } else { acs_rows };
        Ok(Self { ny, nx, entries, acs_rows, acceleration })
    }

    /// Mask that samples exactly the given ky rows.
    pub fn from_rows(
        ny: usize,
        nx: usize,
        rows: &[bool],
        acs_rows: Range<usize>,
        acceleration: usize,
    ) -> Result<Self> {
        if rows.len() != ny {
            return Err(Error::Shape(format!("{} row flags for {ny} rows", rows.len())));
        }
        let entries = rows.iter().flat_map(|&r| std::iter::repeat_n(r, nx)).collect();
        Self::new(ny, nx, entries, acs_rows, acceleration)
    }

    pub fn full(ny: usize, nx: usize) -> Self {
        Self { ny, nx, entries: vec![true; ny * nx], acs_rows: 0..0, acceleration: 1 }
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn entries(&self) -> &[bool] {
        &self.entries
    }

    pub fn acs_rows(&self) -> Range<usize> {
        self.acs_rows.clone()
    }

    pub fn acceleration(&self) -> usize {
        self.acceleration
    }

    pub fn is_sampled(&self, y: usize, x: usize) -> bool {
        self.entries[y * self.nx + x]
    }

    pub fn row_fully_sampled(&self, y: usize) -> bool {
        self.entries[y * self.nx..(y + 1) * self.nx].iter().all(|&e| e)
    }

    pub fn row_sampled(&self, y: usize) -> bool {
        self.entries[y * self.nx..(y + 1) * self.nx].iter().any(|&e| e)
    }

    pub fn count(&self) -> usize {
        self.entries.iter().filter(|&&e| e).count()
    }

    pub fn sampled_rows(&self) -> usize {
        (0..self.ny).filter(|&y| self.row_sampled(y)).count()
    }

    pub fn is_full(&self) -> bool {
        self.entries.iter().all(|&e| e)
    }
}

/// Per-coil complex sensitivity profiles with root-sum-of-squares equal to
/// one on the support and zero outside it.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilMaps {
    n_coils: usize,
    ny: usize,
    nx: usize,
    data: Vec<C64>,
    support: Vec<bool>,
}

/// Allowed deviation of the coil root-sum-of-squares from one.
pub const RSS_TOLERANCE: f64 = 1e-6;

impl CoilMaps {
    /// Validating constructor; the RSS-normalization invariant must already hold.
    pub fn new(
        n_coils: usize,
        ny: usize,
        nx: usize,
        data: Vec<C64>,
        support: Vec<bool>,
    ) -> Result<Self> {
        if n_coils == 0 {
            return Err(Error::InvalidData("sensitivity maps need at least one coil".into()));
        }
        if data.len() != n_coils * ny * nx || support.len() != ny * nx {
            return Err(Error::Shape("sensitivity data/support size mismatch".into()));
        }
        check_finite(&data)?;
        let n = ny * nx;
        for p in 0..n {
            let ss: f64 = (0..n_coils).map(|j| data[j * n + p].norm_sqr()).sum();
            if support[p] {
                if (ss.sqrt() - 1.0).abs() > RSS_TOLERANCE {
                    return Err(Error::InvalidData(format!(
                        "coil RSS {} at pixel {p} is not 1",
                        ss.sqrt()
                    )));
                }
            } else if ss != 0.0 {
                return Err(Error::InvalidData(format!("non-zero sensitivity outside support at pixel {p}")));
            }
        }
        Ok(Self { n_coils, ny, nx, data, support })
    }

    /// Normalizes raw coil profiles to unit RSS wherever the support flag is set
    /// and zeroes them elsewhere.
    pub fn normalized(n_coils: usize, ny: usize, nx: usize, mut data: Vec<C64>, mut support: Vec<bool>) -> Result<Self> {
        if data.len() != n_coils * ny * nx || support.len() != ny * nx {
            return Err(Error::Shape("sensitivity data/support size mismatch".into()));
        }
        let n = ny * nx;
        for p in 0..n {
            let rss: f64 = (0..n_coils).map(|j| data[j * n + p].norm_sqr()).sum::<f64>().sqrt();
            if support[p] && rss > 0.0 {
                (0..n_coils).for_each(|j| data[j * n + p] /= rss);
            } else {
                support[p] = false;
                (0..n_coils).for_each(|j| data[j * n + p] = ZERO);
            }
        }
        Self::new(n_coils, ny, nx, data, support)
    }

    /// Single coil with unit sensitivity everywhere.
    pub fn unit(ny: usize, nx: usize) -> Self {
        Self {
            n_coils: 1,
            ny,
            nx,
            data: vec![C64::new(1.0, 0.0); ny * nx],
            support: vec![true; ny * nx],
        }
    }

    pub fn n_coils(&self) -> usize {
        self.n_coils
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_coils, self.ny, self.nx)
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn coil(&self, j: usize) -> &[C64] {
        let n = self.ny * self.nx;
        &self.data[j * n..(j + 1) * n]
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }
}

/// i.i.d. complex Gaussian measurement noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidData(format!("noise sigma must be >= 0, got {sigma}")));
        }
        Ok(Self { sigma })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_bad_length_and_nan() {
        assert!(matches!(ComplexImage::new(2, 2, vec![ZERO; 3]), Err(Error::Shape(_))));
        let mut d = vec![ZERO; 4];
        d[2] = C64::new(f64::NAN, 0.0);
        assert!(matches!(ComplexImage::new(2, 2, d), Err(Error::InvalidData(_))));
    }

    #[test]
    fn mask_requires_full_acs_rows() {
        let rows = [true, false, true, false];
        assert!(SamplingMask::from_rows(4, 3, &rows, 0..1, 2).is_ok());
        assert!(matches!(
            SamplingMask::from_rows(4, 3, &rows, 0..2, 2),
            Err(Error::InvalidMask(_))
        ));
        assert!(matches!(
            SamplingMask::from_rows(4, 3, &[false; 4], 0..0, 2),
            Err(Error::InvalidMask(_))
        ));
    }

    #[test]
    fn coil_maps_enforce_rss() {
        let n = 4;
        let data = vec![C64::new(0.6, 0.0); n].into_iter().chain(vec![C64::new(0.0, 0.8); n]).collect();
        assert!(CoilMaps::new(2, 2, 2, data, vec![true; n]).is_ok());
        let bad = vec![C64::new(0.5, 0.0); 2 * n];
        assert!(CoilMaps::new(2, 2, 2, bad.clone(), vec![true; n]).is_err());
        let m = CoilMaps::normalized(2, 2, 2, bad, vec![true, true, false, true]).unwrap();
        assert_eq!(m.coil(0)[2], ZERO);
        assert!(!m.support()[2]);
    }

    #[test]
    fn noise_sigma_non_negative() {
        assert!(NoiseModel::new(-1.0).is_err());
        assert!(NoiseModel::new(f64::NAN).is_err());
        assert!(NoiseModel::new(0.0).is_ok());
    }
}
