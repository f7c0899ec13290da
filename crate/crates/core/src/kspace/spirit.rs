use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, ridge_solve, Tikhonov};
use crate::types::{norm_sqr, KSpace, SamplingMask, C64, ZERO};

/// Calibration ridge used when none is given. Stronger than the GRAPPA
/// default: the full-neighborhood fit is heavily over-parameterized and an
/// almost exact fit on the ACS generalizes poorly to the periphery.
pub const SPIRIT_DEFAULT_TIKHONOV: Tikhonov = Tikhonov::Relative(1e-3);

/// Relative CG residual at which SPIRiT iterations stop early.
const SPIRIT_CG_TOL: f64 = 1e-12;

/// Self-consistency kernel: each coil's k-space value as a combination of
/// its full multi-coil neighborhood, own center tap excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct SpiritKernel {
    bx: usize,
    by: usize,
    n_coils: usize,
    /// Row-major `n_coils × n_taps`, tap `((d_y + B_y)·(2B_x + 1) + d_x + B_x)·n_c + c`.
    weights: Vec<C64>,
    residual: f64,
    target_energy: f64,
}

impl SpiritKernel {
    pub fn half_extents(&self) -> (usize, usize) {
        (self.bx, self.by)
    }

    pub fn n_coils(&self) -> usize {
        self.n_coils
    }

    pub fn n_taps(&self) -> usize {
        (2 * self.bx + 1) * (2 * self.by + 1) * self.n_coils
    }

    pub fn weights(&self) -> &[C64] {
        &self.weights
    }

    pub fn weight(&self, j: usize, dx: isize, dy: isize, c: usize) -> C64 {
        self.weights[j * self.n_taps() + self.tap(dx, dy, c)]
    }

    fn tap(&self, dx: isize, dy: isize, c: usize) -> usize {
        let (hx, hy) = (self.bx as isize, self.by as isize);
        (((dy + hy) * (2 * hx + 1) + dx + hx) as usize) * self.n_coils + c
    }

    /// Least-squares calibration residual `Σ_j ‖b_j − A_j g_j‖²`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Residual divided by the energy of the calibration targets.
    pub fn relative_residual(&self) -> f64 {
        if self.target_energy > 0.0 {
            self.residual / self.target_energy
        } else {
            0.0
        }
    }

    /// `G κ` on a full multi-coil grid, zero-padded at the edges.
    pub fn apply(&self, k: &[C64], ny: usize, nx: usize) -> Vec<C64> {
        let nc = self.n_coils;
        let n = ny * nx;
        let (hx, hy) = (self.bx as isize, self.by as isize);
        let mut out = vec![ZERO; nc * n];
        out.par_chunks_mut(n).enumerate().for_each(|(j, dst)| {
            for dy in -hy..=hy {
                for dx in -hx..=hx {
                    for c in 0..nc {
                        let w = self.weight(j, dx, dy, c);
                        if w == ZERO {
                            continue;
                        }
                        shift_accumulate(dst, &k[c * n..(c + 1) * n], ny, nx, dy, dx, w);
                    }
                }
            }
        });
        out
    }

    /// `Gᴴ z`.
    pub fn apply_adjoint(&self, z: &[C64], ny: usize, nx: usize) -> Vec<C64> {
        let nc = self.n_coils;
        let n = ny * nx;
        let (hx, hy) = (self.bx as isize, self.by as isize);
        let mut out = vec![ZERO; nc * n];
        out.par_chunks_mut(n).enumerate().for_each(|(c, dst)| {
            for dy in -hy..=hy {
                for dx in -hx..=hx {
                    for j in 0..nc {
                        let w = self.weight(j, dx, dy, c);
                        if w == ZERO {
                            continue;
                        }
                        shift_accumulate(dst, &z[j * n..(j + 1) * n], ny, nx, -dy, -dx, w.conj());
                    }
                }
            }
        });
        out
    }
}

/// `dst(y, x) += w · src(y + dy, x + dx)` wherever the source is on the grid.
fn shift_accumulate(dst: &mut [C64], src: &[C64], ny: usize, nx: usize, dy: isize, dx: isize, w: C64) {
    let (ny_i, nx_i) = (ny as isize, nx as isize);
    let y0 = (-dy).max(0);
    let y1 = (ny_i - dy).min(ny_i);
    let x0 = (-dx).max(0);
    let x1 = (nx_i - dx).min(nx_i);
    if y0 >= y1 || x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let d = (y * nx_i) as usize;
        let s = ((y + dy) * nx_i) as usize;
        for x in x0..x1 {
            dst[d + x as usize] += w * src[(s as isize + x + dx) as usize];
        }
    }
}

/// Fits every coil's kernel over all windows that lie fully inside the ACS
/// block.
pub fn spirit_calibrate(acs: &KSpace, bx: usize, by: usize, tikhonov: Tikhonov) -> Result<SpiritKernel> {
    tikhonov.validate()?;
    let (nc, ny, nx) = acs.dims();
    let mut kern = SpiritKernel { bx, by, n_coils: nc, weights: Vec::new(), residual: 0.0, target_energy: 0.0 };
    let taps = kern.n_taps();
    let cols = taps - 1;
    let wy = ny.saturating_sub(2 * by);
    let wx = nx.saturating_sub(2 * bx);
    let rows = wy * wx;
    if rows < cols {
        return Err(Error::InsufficientCalibration { rows, cols });
    }
    let data = acs.data();
    let mut a_full = DMatrix::<C64>::zeros(rows, taps);
    let mut row = 0;
    for y in by..by + wy {
        for x in bx..bx + wx {
            let mut t = 0;
            for dy in -(by as isize)..=by as isize {
                for dx in -(bx as isize)..=bx as isize {
                    let (yy, xx) = ((y as isize + dy) as usize, (x as isize + dx) as usize);
                    for c in 0..nc {
                        a_full[(row, t)] = data[(c * ny + yy) * nx + xx];
                        t += 1;
                    }
                }
            }
            row += 1;
        }
    }
    let solved: Vec<Result<(Vec<C64>, f64, f64)>> = (0..nc)
        .into_par_iter()
        .map(|j| {
            let center = kern.tap(0, 0, j);
            let b = a_full.columns(center, 1).into_owned();
            let a = a_full.clone().remove_column(center);
            let g = ridge_solve(&a, &b, tikhonov)?;
            let resid = &b - &a * &g;
            let mut w = Vec::with_capacity(taps);
            w.extend(g.iter().take(center).copied());
            w.push(ZERO);
            w.extend(g.iter().skip(center).copied());
            Ok((w, resid.norm_squared(), b.norm_squared()))
        })
        .collect();
    let mut weights = Vec::with_capacity(nc * taps);
    for s in solved {
        let (w, r, e) = s?;
        weights.extend(w);
        kern.residual += r;
        kern.target_energy += e;
    }
    if weights.iter().any(|w| !w.re.is_finite() || !w.im.is_finite()) {
        return Err(Error::Calibration("non-finite SPIRiT weights".into()));
    }
    kern.weights = weights;
    Ok(kern)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpiritReport {
    pub iterations: usize,
    /// Objective at the start and after every CG iteration.
    pub objective: Vec<f64>,
    pub converged: bool,
}

fn masked(mask: &SamplingMask, v: &[C64]) -> Vec<C64> {
    let e = mask.entries();
    let n = e.len();
    v.iter().enumerate().map(|(i, z)| if e[i % n] { *z } else { ZERO }).collect()
}

/// `‖(G − I)κ‖² + β‖κ_Ω − f_Ω‖²`.
pub fn spirit_objective(kernel: &SpiritKernel, mask: &SamplingMask, kspace: &KSpace, kappa: &[C64], beta: f64) -> f64 {
    let (ny, nx) = (mask.ny(), mask.nx());
    let g = kernel.apply(kappa, ny, nx);
    let self_term: f64 = g.iter().zip(kappa).map(|(a, b)| (a - b).norm_sqr()).sum();
    let diff: Vec<C64> = kappa.iter().zip(kspace.data()).map(|(a, b)| a - b).collect();
    self_term + beta * norm_sqr(&masked(mask, &diff))
}

/// Minimizes the SPIRiT objective by CG on its normal equations
/// `((G − I)ᴴ(G − I) + βM) κ = βM f`, starting from the zero-filled data.
pub fn spirit_reconstruct(
    kspace: &KSpace,
    mask: &SamplingMask,
    kernel: &SpiritKernel,
    beta: f64,
    n_iter: usize,
) -> Result<(KSpace, SpiritReport)> {
    let (nc, ny, nx) = kspace.dims();
    if (mask.ny(), mask.nx()) != (ny, nx) || kernel.n_coils != nc {
        return Err(Error::Shape(format!(
            "k-space {nc}x{ny}x{nx}, mask {}x{}, kernel for {} coils",
            mask.ny(),
            mask.nx(),
            kernel.n_coils
        )));
    }
    if !(beta > 0.0 && beta.is_finite()) || n_iter == 0 {
        return Err(Error::Config(format!("spirit needs beta > 0 and n_iter >= 1 (got {beta}, {n_iter})")));
    }
    let f = masked(mask, kspace.data());
    let rhs: Vec<C64> = f.iter().map(|z| z * beta).collect();
    let normal = |k: &[C64]| -> Vec<C64> {
        let g = kernel.apply(k, ny, nx);
        let d: Vec<C64> = g.iter().zip(k).map(|(a, b)| a - b).collect();
        let gd = kernel.apply_adjoint(&d, ny, nx);
        let mk = masked(mask, k);
        gd.iter().zip(&d).zip(&mk).map(|((a, b), m)| a - b + m * beta).collect()
    };
    let mut objective = vec![spirit_objective(kernel, mask, kspace, &f, beta)];
    let out = conjugate_gradient(normal, &rhs, f.clone(), SPIRIT_CG_TOL, n_iter, |k| {
        objective.push(spirit_objective(kernel, mask, kspace, k, beta))
    });
    let report = SpiritReport { iterations: objective.len() - 1, objective, converged: out.converged };
    Ok((KSpace::new(nc, ny, nx, out.x)?, report))
}
