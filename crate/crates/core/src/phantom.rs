//! Synthetic multi-coil acquisitions: ellipse phantoms, Gaussian coil
//! profiles, Cartesian sampling masks and complex Gaussian noise.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::encoding::apply_encoding;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::types::{CoilMaps, ComplexImage, KSpace, NoiseModel, SamplingMask, C64};

/// One additive ellipse in normalized coordinates (`[-1, 1]` spans 90% of
/// the grid).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    /// Rotation in degrees.
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub const fn new(intensity: f64, a: f64, b: f64, cx: f64, cy: f64, angle: f64) -> Self {
        Self { cx, cy, a, b, angle, intensity }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = (self.angle * PI / 180.0).sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Modified Shepp-Logan table (higher-contrast variant).
const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse::new(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    Ellipse::new(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    Ellipse::new(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    Ellipse::new(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    Ellipse::new(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    Ellipse::new(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    Ellipse::new(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    Ellipse::new(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    Ellipse::new(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    Ellipse::new(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub ny: usize,
    pub nx: usize,
    pub ellipses: Vec<Ellipse>,
    /// Relative geometric/intensity perturbation applied per ellipse; 0 renders
    /// the table exactly.
    pub jitter: f64,
    /// Peak radians of a smooth low-order phase map; 0 gives a real image.
    pub phase: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn shepp_logan(ny: usize, nx: usize) -> Self {
        Self { ny, nx, ellipses: SHEPP_LOGAN.to_vec(), jitter: 0.0, phase: 0.0, seed: 0 }
    }

    /// Shepp-Logan-like head with per-seed perturbations and a few extra
    /// random features; used to build training and test populations.
    pub fn random(ny: usize, nx: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Phantom);
        let mut ellipses = SHEPP_LOGAN.to_vec();
        let extra = rng.random_range(2..=5);
        for _ in 0..extra {
            let r = rng.random_range(0.0..0.45);
            let t = rng.random_range(0.0..2.0 * PI);
            ellipses.push(Ellipse {
                cx: r * t.cos(),
                cy: r * t.sin() * 1.2,
                a: rng.random_range(0.03..0.14),
                b: rng.random_range(0.03..0.14),
                angle: rng.random_range(0.0..180.0),
                intensity: rng.random_range(0.08..0.35),
            });
        }
        Self { ny, nx, ellipses, jitter: 0.08, phase: 0.0, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.ny < 2 || self.nx < 2 {
            return Err(Error::Config(format!("phantom grid {}x{} too small", self.ny, self.nx)));
        }
        if self.ellipses.is_empty() {
            return Err(Error::Config("phantom needs at least one ellipse".into()));
        }
        for e in &self.ellipses {
            let vals = [e.cx, e.cy, e.a, e.b, e.angle, e.intensity];
            if vals.iter().any(|v| !v.is_finite()) || e.a <= 0.0 || e.b <= 0.0 {
                return Err(Error::Config(format!("invalid ellipse {e:?}")));
            }
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite() && self.phase.is_finite()) {
            return Err(Error::Config("jitter must be >= 0 and phase finite".into()));
        }
        Ok(())
    }
}

/// Fraction of the half field of view covered by the normalized unit square;
/// leaves a background margin so periodic k-space blur does not fold the
/// object's edges onto each other.
const FOV_FILL: f64 = 0.9;

fn grid_coord(i: usize, n: usize) -> f64 {
    (i as f64 - (n / 2) as f64) / (n as f64 / 2.0)
}

fn phantom_coord(i: usize, n: usize) -> f64 {
    grid_coord(i, n) / FOV_FILL
}

/// Renders the phantom by pixel-center sampling; intensities are clamped to
/// `[0, 1]`.
pub fn make_phantom(spec: &PhantomSpec) -> Result<ComplexImage> {
    spec.validate()?;
    let ellipses: Vec<Ellipse> = if spec.jitter > 0.0 {
        // one fixed-size draw per ellipse, so appending ellipses never changes
        // the perturbation of earlier ones
        let mut rng = stream_rng(spec.seed, Stream::Phantom);
        let n = Normal::new(0.0, spec.jitter).expect("jitter validated");
        spec.ellipses
            .iter()
            .map(|e| {
                let d: [f64; 5] = std::array::from_fn(|_| n.sample(&mut rng));
                Ellipse {
                    cx: e.cx + 0.3 * d[0] * e.a,
                    cy: e.cy + 0.3 * d[1] * e.b,
                    a: e.a * (1.0 + 0.5 * d[2]).clamp(0.5, 1.5),
                    b: e.b * (1.0 + 0.5 * d[3]).clamp(0.5, 1.5),
                    angle: e.angle + 20.0 * d[4],
                    intensity: e.intensity,
                }
            })
            .collect()
    } else {
        spec.ellipses.clone()
    };
    let (ny, nx) = (spec.ny, spec.nx);
    let mut data = Vec::with_capacity(ny * nx);
    for iy in 0..ny {
        let y = phantom_coord(iy, ny);
        for ix in 0..nx {
            let x = phantom_coord(ix, nx);
            let v: f64 = ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum();
            let v = v.clamp(0.0, 1.0);
            let z = if spec.phase != 0.0 {
                C64::from_polar(v, spec.phase * (0.6 * x + 0.4 * y + 0.3 * x * y))
            } else {
                C64::new(v, 0.0)
            };
            data.push(z);
        }
    }
    ComplexImage::new(ny, nx, data)
}

/// Receive-array geometry: Gaussian magnitude bumps centered on a ring around
/// the field of view, each with a first-order phase `p0 + px*x + py*y`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSpec {
    pub n_coils: usize,
    /// Coil centers as `(y, x)` in pixel units.
    pub centers: Vec<(f64, f64)>,
    /// Gaussian falloff width in pixels.
    pub width: f64,
    /// Phase coefficients `[p0, px, py]` per coil (normalized coordinates).
    pub phase: Vec<[f64; 3]>,
}

impl CoilSpec {
    /// `n_coils` elements evenly spaced on a ring at 1.2x the half field of view.
    pub fn ring(n_coils: usize, ny: usize, nx: usize) -> Self {
        let (cy, cx) = ((ny / 2) as f64, (nx / 2) as f64);
        let mut centers = Vec::with_capacity(n_coils);
        let mut phase = Vec::with_capacity(n_coils);
        for j in 0..n_coils {
            let t = 2.0 * PI * j as f64 / n_coils as f64;
            centers.push((cy + 1.2 * ny as f64 / 2.0 * t.sin(), cx + 1.2 * nx as f64 / 2.0 * t.cos()));
            phase.push([t, 0.4 * t.cos(), 0.4 * t.sin()]);
        }
        Self { n_coils, centers, width: 0.45 * ny.max(nx) as f64, phase }
    }
}

/// Renders and RSS-normalizes coil profiles over the whole grid.
pub fn make_coil_sensitivities(spec: &CoilSpec, ny: usize, nx: usize) -> Result<CoilMaps> {
    if spec.n_coils == 0 || spec.centers.len() != spec.n_coils || spec.phase.len() != spec.n_coils {
        return Err(Error::Config("coil spec needs n_coils >= 1 with matching centers/phases".into()));
    }
    if !(spec.width > 0.0) {
        return Err(Error::Config("coil width must be positive".into()));
    }
    let n = ny * nx;
    let mut data = Vec::with_capacity(spec.n_coils * n);
    let w2 = 2.0 * spec.width * spec.width;
    for j in 0..spec.n_coils {
        let (py, px) = spec.centers[j];
        let [p0, a, b] = spec.phase[j];
        for iy in 0..ny {
            for ix in 0..nx {
                let d2 = (iy as f64 - py).powi(2) + (ix as f64 - px).powi(2);
                let mag = (-d2 / w2).exp();
                let ph = p0 + a * grid_coord(ix, nx) + b * grid_coord(iy, ny);
                data.push(C64::from_polar(mag, ph));
            }
        }
    }
    CoilMaps::normalized(spec.n_coils, ny, nx, data, vec![true; n])
}

fn acs_range(ny: usize, acs_lines: usize) -> std::ops::Range<usize> {
    let start = ny / 2 - acs_lines / 2;
    start..start + acs_lines
}

/// Every `r`-th ky row (starting at row 0) plus a centered block of
/// `acs_lines` fully sampled rows.
pub fn make_uniform_mask(ny: usize, nx: usize, r: usize, acs_lines: usize) -> Result<SamplingMask> {
    if r == 0 || r > ny {
        return Err(Error::InvalidMask(format!("acceleration {r} invalid for {ny} rows")));
    }
    if acs_lines > ny {
        return Err(Error::InvalidMask(format!("{acs_lines} ACS lines exceed {ny} rows")));
    }
    let acs = acs_range(ny, acs_lines);
    let rows: Vec<bool> = (0..ny).map(|y| y % r == 0 || acs.contains(&y)).collect();
    SamplingMask::from_rows(ny, nx, &rows, acs, r)
}

/// Independent Bernoulli(`density`) selection of each non-ACS row. If the
/// draw selects nothing the center row is kept so the mask is never empty.
pub fn make_random_mask(ny: usize, nx: usize, density: f64, acs_lines: usize, seed: u64) -> Result<SamplingMask> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidMask(format!("density {density} outside (0, 1]")));
    }
    if acs_lines > ny {
        return Err(Error::InvalidMask(format!("{acs_lines} ACS lines exceed {ny} rows")));
    }
    let acs = acs_range(ny, acs_lines);
    let mut rng = stream_rng(seed, Stream::Mask);
    let mut rows: Vec<bool> = (0..ny)
        .map(|y| {
            let u: f64 = rng.random();
            acs.contains(&y) || u < density
        })
        .collect();
    if !rows.iter().any(|&r| r) {
        rows[ny / 2] = true;
    }
    let sampled = rows.iter().filter(|&&r| r).count();
    let nominal = ((ny as f64 / sampled as f64).round() as usize).max(1);
    SamplingMask::from_rows(ny, nx, &rows, acs, nominal)
}

/// `E u` plus complex Gaussian noise on acquired entries. Real and imaginary
/// parts each have standard deviation `sigma/sqrt(2)`, so the complex noise
/// has `E|n|^2 = sigma^2`. Draws are taken coil by coil in storage order.
pub fn simulate_acquisition(
    img: &ComplexImage,
    sens: &CoilMaps,
    mask: &SamplingMask,
    noise: NoiseModel,
    seed: u64,
) -> Result<KSpace> {
    let mut k = apply_encoding(img, sens, mask)?;
    if noise.sigma > 0.0 {
        let mut rng = stream_rng(seed, Stream::Noise);
        let normal = Normal::new(0.0, noise.sigma / 2f64.sqrt()).expect("sigma validated");
        let n = mask.ny() * mask.nx();
        let entries = mask.entries();
        for (i, z) in k.data_mut().iter_mut().enumerate() {
            if entries[i % n] {
                *z += C64::new(normal.sample(&mut rng), normal.sample(&mut rng));
            }
        }
    }
    Ok(k)
}
