use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{ridge_solve, Tikhonov};
use crate::types::{KSpace, SamplingMask, C64, ZERO};

/// Complex GRAPPA weights `g_{j,m}(b_x, b_y, c)`.
///
/// The missing row `ky − m` (`m = 1..R−1`) of coil `j` is estimated from
/// the acquired rows `ky + R·b_y`, `b_y ∈ [−B_y, B_y]`, at readout offsets
/// `b_x ∈ [−B_x, B_x]`, across all coils `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrappaKernelSet {
    r: usize,
    bx: usize,
    by: usize,
    n_coils: usize,
    /// Row-major `n_targets × n_taps`; target `(m − 1)·n_c + j`, tap
    /// `((b_y + B_y)·(2B_x + 1) + b_x + B_x)·n_c + c`.
    weights: Vec<C64>,
}

impl GrappaKernelSet {
    /// Builds a kernel set from explicit weights (layout as documented on the
    /// struct).
    pub fn new(r: usize, bx: usize, by: usize, n_coils: usize, weights: Vec<C64>) -> Result<Self> {
        if r < 2 {
            return Err(Error::InvalidAcceleration(r));
        }
        let k = Self { r, bx, by, n_coils, weights: Vec::new() };
        if weights.len() != k.n_targets() * k.n_taps() || n_coils == 0 {
            return Err(Error::Shape(format!(
                "{} weights for {} targets x {} taps",
                weights.len(),
                k.n_targets(),
                k.n_taps()
            )));
        }
        if weights.iter().any(|w| !w.re.is_finite() || !w.im.is_finite()) {
            return Err(Error::InvalidData("non-finite GRAPPA weight".into()));
        }
        Ok(Self { weights, ..k })
    }

    pub fn acceleration(&self) -> usize {
        self.r
    }

    pub fn half_extents(&self) -> (usize, usize) {
        (self.bx, self.by)
    }

    pub fn n_coils(&self) -> usize {
        self.n_coils
    }

    pub fn n_targets(&self) -> usize {
        self.n_coils * (self.r - 1)
    }

    pub fn n_taps(&self) -> usize {
        (2 * self.bx + 1) * (2 * self.by + 1) * self.n_coils
    }

    pub fn weights(&self) -> &[C64] {
        &self.weights
    }

    pub fn tap_index(&self, bx: isize, by: isize, c: usize) -> usize {
        let (hx, hy) = (self.bx as isize, self.by as isize);
        debug_assert!(bx.abs() <= hx && by.abs() <= hy && c < self.n_coils);
        (((by + hy) * (2 * hx + 1) + bx + hx) as usize) * self.n_coils + c
    }

    /// Weight of tap `(b_x, b_y, c)` for target coil `j`, offset `m`.
    pub fn weight(&self, j: usize, m: usize, bx: isize, by: isize, c: usize) -> C64 {
        let t = (m - 1) * self.n_coils + j;
        self.weights[t * self.n_taps() + self.tap_index(bx, by, c)]
    }

    pub(crate) fn target_weights(&self, j: usize, m: usize) -> &[C64] {
        let t = (m - 1) * self.n_coils + j;
        &self.weights[t * self.n_taps()..(t + 1) * self.n_taps()]
    }
}

/// Source taps around anchor row `a` and column `x`, zero outside the grid.
pub(crate) fn gather_sources(
    k: &[C64],
    (nc, ny, nx): (usize, usize, usize),
    a: isize,
    x: isize,
    (r, bx, by): (usize, usize, usize),
    out: &mut [C64],
) {
    let mut t = 0;
    for b in -(by as isize)..=by as isize {
        let y = a + r as isize * b;
        for dx in -(bx as isize)..=bx as isize {
            let xx = x + dx;
            let inside = y >= 0 && (y as usize) < ny && xx >= 0 && (xx as usize) < nx;
            for c in 0..nc {
                out[t] = if inside { k[(c * ny + y as usize) * nx + xx as usize] } else { ZERO };
                t += 1;
            }
        }
    }
}

/// Least-squares fit of all `(j, m)` kernels on the ACS block.
///
/// Every anchor row `a` whose sources `a ± R·B_y` and targets `a − m` fall
/// inside the block, at every readout position whose taps fit, contributes
/// one calibration row. All kernels share the same source matrix.
pub fn grappa_calibrate(acs: &KSpace, r: usize, bx: usize, by: usize, tikhonov: Tikhonov) -> Result<GrappaKernelSet> {
    if r < 2 {
        return Err(Error::InvalidAcceleration(r));
    }
    tikhonov.validate()?;
    let (nc, ny, nx) = acs.dims();
    let shape = GrappaKernelSet { r, bx, by, n_coils: nc, weights: Vec::new() };
    let cols = shape.n_taps();
    let span = r * by;
    let a_lo = span.max(r - 1);
    let anchors = if ny > span && ny - span > a_lo { ny - span - a_lo } else { 0 };
    let xs = nx.saturating_sub(2 * bx);
    let rows = anchors * xs;
    if rows < cols {
        return Err(Error::InsufficientCalibration { rows, cols });
    }
    let data = acs.data();
    let mut a_mat = DMatrix::<C64>::zeros(rows, cols);
    let mut b_mat = DMatrix::<C64>::zeros(rows, shape.n_targets());
    let mut src = vec![ZERO; cols];
    let mut row = 0;
    for a in a_lo..a_lo + anchors {
        for x in bx..bx + xs {
            gather_sources(data, (nc, ny, nx), a as isize, x as isize, (r, bx, by), &mut src);
            for (t, s) in src.iter().enumerate() {
                a_mat[(row, t)] = *s;
            }
            for m in 1..r {
                for j in 0..nc {
                    b_mat[(row, (m - 1) * nc + j)] = data[(j * ny + a - m) * nx + x];
                }
            }
            row += 1;
        }
    }
    let g = ridge_solve(&a_mat, &b_mat, tikhonov)?;
    let mut weights = vec![ZERO; shape.n_targets() * cols];
    for t in 0..shape.n_targets() {
        for i in 0..cols {
            weights[t * cols + i] = g[(i, t)];
        }
    }
    GrappaKernelSet::new(r, bx, by, nc, weights)
}

/// Smallest row offset `o` such that every row `≡ o (mod R)` is fully
/// sampled.
pub fn lattice_offset(mask: &SamplingMask, r: usize) -> Result<usize> {
    let ny = mask.ny();
    (0..r.min(ny))
        .find(|&o| (o..ny).step_by(r).all(|y| mask.row_fully_sampled(y)))
        .ok_or_else(|| Error::Config(format!("mask has no fully sampled row lattice with spacing {r}")))
}

/// Fills every unsampled entry with the kernel rule. Sampled entries are
/// copied unchanged.
pub fn grappa_reconstruct(kspace: &KSpace, kernels: &GrappaKernelSet, mask: &SamplingMask) -> Result<KSpace> {
    let (nc, ny, nx) = kspace.dims();
    if (mask.ny(), mask.nx()) != (ny, nx) {
        return Err(Error::Shape(format!("mask {}x{} vs k-space {ny}x{nx}", mask.ny(), mask.nx())));
    }
    if kernels.n_coils != nc {
        return Err(Error::Shape(format!("kernels for {} coils, k-space has {nc}", kernels.n_coils)));
    }
    let r = kernels.r;
    if mask.acceleration() != r {
        return Err(Error::Config(format!("mask acceleration {} but kernels calibrated for R={r}", mask.acceleration())));
    }
    let o = lattice_offset(mask, r)?;
    let data = kspace.data();
    let filled: Vec<(usize, Vec<C64>)> = (0..ny)
        .into_par_iter()
        .filter_map(|y| {
            let m = (o + r - y % r) % r;
            if m == 0 || mask.row_fully_sampled(y) {
                return None;
            }
            let a = (y + m) as isize;
            let mut src = vec![ZERO; kernels.n_taps()];
            let mut vals = vec![ZERO; nc * nx];
            for x in 0..nx {
                if mask.is_sampled(y, x) {
                    continue;
                }
                gather_sources(data, (nc, ny, nx), a, x as isize, (r, kernels.bx, kernels.by), &mut src);
                for j in 0..nc {
                    let w = kernels.target_weights(j, m);
                    vals[j * nx + x] = w.iter().zip(&src).map(|(wi, si)| wi * si).sum();
                }
            }
            Some((y, vals))
        })
        .collect();
    let mut out = kspace.clone();
    let od = out.data_mut();
    for (y, vals) in filled {
        for j in 0..nc {
            for x in 0..nx {
                if !mask.is_sampled(y, x) {
                    od[(j * ny + y) * nx + x] = vals[j * nx + x];
                }
            }
        }
    }
    Ok(out)
}
