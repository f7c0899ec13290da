//! Variational reconstruction `½‖Eu − f‖² + R(u)` with total variation or
//! second-order total generalized variation, solved by first-order
//! primal-dual (Chambolle-Pock) iterations.

use crate::encoding::Encoding;
use crate::error::{Error, Result};
use crate::types::{ComplexImage, KSpace, SamplingMask, CoilMaps, C64, ZERO};

/// `‖K‖²` bound for `K = [E; ∇]` (`‖E‖ ≤ 1`, `‖∇‖² ≤ 8`).
pub const TV_NORM_SQ: f64 = 9.0;
/// `‖K‖²` bound for the TGV saddle operator acting on `(u, w)`.
pub const TGV_NORM_SQ: f64 = 17.0;

/// Forward-difference gradient, Neumann boundary: the last row (column)
/// difference is zero. Returns `(∂x u, ∂y u)`.
pub fn grad(u: &[C64], ny: usize, nx: usize) -> (Vec<C64>, Vec<C64>) {
    debug_assert_eq!(u.len(), ny * nx);
    let mut gx = vec![ZERO; ny * nx];
    let mut gy = vec![ZERO; ny * nx];
    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            if x + 1 < nx {
                gx[i] = u[i + 1] - u[i];
            }
            if y + 1 < ny {
                gy[i] = u[i + nx] - u[i];
            }
        }
    }
    (gx, gy)
}

/// Negative adjoint of [`grad`]: `⟨∇u, p⟩ = −⟨u, div p⟩`.
pub fn div(px: &[C64], py: &[C64], ny: usize, nx: usize) -> Vec<C64> {
    let mut out = vec![ZERO; ny * nx];
    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            let mut v = ZERO;
            if x + 1 < nx {
                v += px[i];
            }
            if x > 0 {
                v -= px[i - 1];
            }
            if y + 1 < ny {
                v += py[i];
            }
            if y > 0 {
                v -= py[i - nx];
            }
            out[i] = v;
        }
    }
    out
}

/// Image-level wrapper around [`grad`].
pub fn grad_image(img: &ComplexImage) -> Result<(Vec<C64>, Vec<C64>)> {
    let (ny, nx) = img.dims();
    if ny < 2 || nx < 2 {
        return Err(Error::Shape(format!("gradient needs at least 2x2, got {ny}x{nx}")));
    }
    Ok(grad(img.data(), ny, nx))
}

// Backward differences defined as the negative adjoints of the forward ones,
// so the symmetrized derivative has an exact adjoint built from `grad`.
fn bwd_x(w: &[C64], ny: usize, nx: usize) -> Vec<C64> {
    div(w, &vec![ZERO; w.len()], ny, nx)
}

fn bwd_y(w: &[C64], ny: usize, nx: usize) -> Vec<C64> {
    div(&vec![ZERO; w.len()], w, ny, nx)
}

/// Symmetrized derivative `ε(w)` stored as `(xx, yy, √2·xy)` so the plain
/// Euclidean norm equals the Frobenius norm of the symmetric tensor.
fn sym_grad(w1: &[C64], w2: &[C64], ny: usize, nx: usize) -> [Vec<C64>; 3] {
    let xx = bwd_x(w1, ny, nx);
    let yy = bwd_y(w2, ny, nx);
    let a = bwd_y(w1, ny, nx);
    let b = bwd_x(w2, ny, nx);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let xy = a.iter().zip(&b).map(|(p, q)| (p + q) * s).collect();
    [xx, yy, xy]
}

/// Adjoint of [`sym_grad`].
fn sym_grad_adj(r: &[Vec<C64>; 3], ny: usize, nx: usize) -> (Vec<C64>, Vec<C64>) {
    // bwd_* = −(fwd_*)ᵀ, hence bwd_*ᵀ = −fwd_*
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (gx_xx, _) = grad(&r[0], ny, nx);
    let (_, gy_yy) = grad(&r[1], ny, nx);
    let (gx_xy, gy_xy) = grad(&r[2], ny, nx);
    let w1 = gx_xx.iter().zip(&gy_xy).map(|(a, b)| -(a + b * s)).collect();
    let w2 = gy_yy.iter().zip(&gx_xy).map(|(a, b)| -(a + b * s)).collect();
    (w1, w2)
}

/// Regularizer selection for [`PdConfig`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Penalty {
    /// `λ‖∇u‖₂,₁`
    Tv,
    /// `α₁‖∇u − w‖₂,₁ + α₀‖ε(w)‖₂,₁`
    Tgv { alpha0: f64, alpha1: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdConfig {
    pub lambda: f64,
    pub n_iter: usize,
    pub tau: f64,
    pub sigma: f64,
    pub penalty: Penalty,
}

impl PdConfig {
    /// TV with the default steps `τ = σ = 1/3`.
    pub fn tv(lambda: f64, n_iter: usize) -> Self {
        let s = 1.0 / TV_NORM_SQ.sqrt();
        Self { lambda, n_iter, tau: s, sigma: s, penalty: Penalty::Tv }
    }

    /// TGV² with `(α₀, α₁) = (2λ, λ)` and `τ = σ = 1/√17`.
    pub fn tgv(lambda: f64, n_iter: usize) -> Self {
        Self::tgv_with(lambda, n_iter, 2.0 * lambda, lambda)
    }

    pub fn tgv_with(lambda: f64, n_iter: usize, alpha0: f64, alpha1: f64) -> Self {
        let s = 1.0 / TGV_NORM_SQ.sqrt();
        Self { lambda, n_iter, tau: s, sigma: s, penalty: Penalty::Tgv { alpha0, alpha1 } }
    }

    fn norm_sq(&self) -> f64 {
        match self.penalty {
            Penalty::Tv => TV_NORM_SQ,
            Penalty::Tgv { .. } => TGV_NORM_SQ,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.lambda) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.n_iter == 0 {
            return Err(Error::Config("n_iter must be >= 1".into()));
        }
        if !pos(self.tau) || !pos(self.sigma) {
            return Err(Error::Config(format!("step sizes must be > 0 (tau={}, sigma={})", self.tau, self.sigma)));
        }
        let prod = self.tau * self.sigma * self.norm_sq();
        if prod > 1.0 + 1e-12 {
            return Err(Error::Config(format!("tau*sigma*L^2 = {prod} exceeds 1")));
        }
        if let Penalty::Tgv { alpha0, alpha1 } = self.penalty {
            if !pos(alpha0) || !pos(alpha1) {
                return Err(Error::Config(format!("TGV weights must be > 0 (alpha0={alpha0}, alpha1={alpha1})")));
            }
        }
        Ok(())
    }
}

/// Projects each pointwise vector `(a₀[i], a₁[i], ..)` onto the ball of radius `r`.
fn project_ball(fields: &mut [&mut Vec<C64>], r: f64) {
    let n = fields[0].len();
    for i in 0..n {
        let m: f64 = fields.iter().map(|f| f[i].norm_sqr()).sum::<f64>().sqrt();
        if m > r {
            let s = r / m;
            for f in fields.iter_mut() {
                f[i] *= s;
            }
        }
    }
}

fn l21(fields: &[&[C64]]) -> f64 {
    (0..fields[0].len())
        .map(|i| fields.iter().map(|f| f[i].norm_sqr()).sum::<f64>().sqrt())
        .sum()
}

/// `‖∇u‖₂,₁` with the isotropic coupling over real/imaginary parts.
pub fn tv_seminorm(img: &ComplexImage) -> f64 {
    let (gx, gy) = grad(img.data(), img.ny(), img.nx());
    l21(&[&gx, &gy])
}

fn data_term(enc: &Encoding<'_>, u: &[C64], f: &[C64]) -> f64 {
    crate::sense::data_objective(enc, u, f)
}

/// `½‖Eu − f‖² + λ‖∇u‖₂,₁`.
pub fn tv_objective(enc: &Encoding<'_>, u: &[C64], f: &[C64], lambda: f64) -> f64 {
    let (ny, nx) = (enc.sens().ny(), enc.sens().nx());
    let (gx, gy) = grad(u, ny, nx);
    data_term(enc, u, f) + lambda * l21(&[&gx, &gy])
}

/// `½‖Eu − f‖² + α₁‖∇u − w‖₂,₁ + α₀‖ε(w)‖₂,₁` at a given auxiliary field `w`.
pub fn tgv_objective(enc: &Encoding<'_>, u: &[C64], w: (&[C64], &[C64]), f: &[C64], alpha0: f64, alpha1: f64) -> f64 {
    let (ny, nx) = (enc.sens().ny(), enc.sens().nx());
    let (gx, gy) = grad(u, ny, nx);
    let dx: Vec<C64> = gx.iter().zip(w.0).map(|(a, b)| a - b).collect();
    let dy: Vec<C64> = gy.iter().zip(w.1).map(|(a, b)| a - b).collect();
    let e = sym_grad(w.0, w.1, ny, nx);
    data_term(enc, u, f) + alpha1 * l21(&[&dx, &dy]) + alpha0 * l21(&[&e[0], &e[1], &e[2]])
}

/// Primal objective samples collected by the `*_with_history` variants.
#[derive(Clone, Debug, PartialEq)]
pub struct PdHistory {
    /// `(iteration, objective)`; iteration 0 is the starting point.
    pub objective: Vec<(usize, f64)>,
}

fn check_inputs<'a>(kspace: &KSpace, sens: &'a CoilMaps, mask: &'a SamplingMask, cfg: &PdConfig) -> Result<Encoding<'a>> {
    cfg.validate()?;
    let enc = Encoding::new(sens, mask)?;
    enc.check_kspace(kspace)?;
    if sens.ny() < 2 || sens.nx() < 2 {
        return Err(Error::Shape("regularized reconstruction needs at least 2x2".into()));
    }
    Ok(enc)
}

/// TV-regularized reconstruction from `u = 0`.
pub fn tv_recon(kspace: &KSpace, sens: &CoilMaps, mask: &SamplingMask, cfg: &PdConfig) -> Result<ComplexImage> {
    Ok(tv_recon_with_history(kspace, sens, mask, &PdConfig { penalty: Penalty::Tv, ..*cfg }, 0)?.0)
}

/// As [`tv_recon`], additionally evaluating the primal objective every
/// `every` iterations (never when `every == 0`).
pub fn tv_recon_with_history(
    kspace: &KSpace,
    sens: &CoilMaps,
    mask: &SamplingMask,
    cfg: &PdConfig,
    every: usize,
) -> Result<(ComplexImage, PdHistory)> {
    if cfg.penalty != Penalty::Tv {
        return Err(Error::Config("tv_recon called with a TGV penalty".into()));
    }
    let enc = check_inputs(kspace, sens, mask, cfg)?;
    let (ny, nx) = (sens.ny(), sens.nx());
    let n = ny * nx;
    let f = kspace.data();
    let (tau, sigma, lambda) = (cfg.tau, cfg.sigma, cfg.lambda);

    let mut u = vec![ZERO; n];
    let mut ubar = u.clone();
    let mut q = vec![ZERO; f.len()];
    let mut px = vec![ZERO; n];
    let mut py = vec![ZERO; n];
    let mut hist = PdHistory { objective: Vec::new() };
    if every > 0 {
        hist.objective.push((0, tv_objective(&enc, &u, f, lambda)));
    }
    for it in 1..=cfg.n_iter {
        // dual ascent; prox of the conjugate of ½‖· − f‖²
        let eu = enc.forward(&ubar);
        for i in 0..q.len() {
            q[i] = (q[i] + (eu[i] - f[i]) * sigma) / (1.0 + sigma);
        }
        let (gx, gy) = grad(&ubar, ny, nx);
        for i in 0..n {
            px[i] += gx[i] * sigma;
            py[i] += gy[i] * sigma;
        }
        project_ball(&mut [&mut px, &mut py], lambda);

        let eq = enc.adjoint(&q);
        let dv = div(&px, &py, ny, nx);
        for i in 0..n {
            let old = u[i];
            u[i] -= (eq[i] - dv[i]) * tau;
            ubar[i] = u[i] * 2.0 - old;
        }
        if every > 0 && it % every == 0 {
            hist.objective.push((it, tv_objective(&enc, &u, f, lambda)));
        }
    }
    Ok((ComplexImage::from_vec_unchecked(ny, nx, u), hist))
}

/// TGV²-regularized reconstruction from `u = 0, w = 0`.
pub fn tgv2_recon(kspace: &KSpace, sens: &CoilMaps, mask: &SamplingMask, cfg: &PdConfig) -> Result<ComplexImage> {
    Ok(tgv2_recon_with_history(kspace, sens, mask, cfg, 0)?.0)
}

pub fn tgv2_recon_with_history(
    kspace: &KSpace,
    sens: &CoilMaps,
    mask: &SamplingMask,
    cfg: &PdConfig,
    every: usize,
) -> Result<(ComplexImage, PdHistory)> {
    let Penalty::Tgv { alpha0, alpha1 } = cfg.penalty else {
        return Err(Error::Config("tgv2_recon needs a TGV penalty".into()));
    };
    let enc = check_inputs(kspace, sens, mask, cfg)?;
    let (ny, nx) = (sens.ny(), sens.nx());
    let n = ny * nx;
    let f = kspace.data();
    let (tau, sigma) = (cfg.tau, cfg.sigma);

    let mut u = vec![ZERO; n];
    let mut ubar = u.clone();
    let (mut w1, mut w2) = (vec![ZERO; n], vec![ZERO; n]);
    let (mut w1bar, mut w2bar) = (w1.clone(), w2.clone());
    let mut q = vec![ZERO; f.len()];
    let (mut px, mut py) = (vec![ZERO; n], vec![ZERO; n]);
    let mut r = [vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]];
    let mut hist = PdHistory { objective: Vec::new() };
    let obj = |u: &[C64], w1: &[C64], w2: &[C64]| tgv_objective(&enc, u, (w1, w2), f, alpha0, alpha1);
    if every > 0 {
        hist.objective.push((0, obj(&u, &w1, &w2)));
    }
    for it in 1..=cfg.n_iter {
        let eu = enc.forward(&ubar);
        for i in 0..q.len() {
            q[i] = (q[i] + (eu[i] - f[i]) * sigma) / (1.0 + sigma);
        }
        let (gx, gy) = grad(&ubar, ny, nx);
        for i in 0..n {
            px[i] += (gx[i] - w1bar[i]) * sigma;
            py[i] += (gy[i] - w2bar[i]) * sigma;
        }
        project_ball(&mut [&mut px, &mut py], alpha1);
        let e = sym_grad(&w1bar, &w2bar, ny, nx);
        for (rk, ek) in r.iter_mut().zip(&e) {
            for i in 0..n {
                rk[i] += ek[i] * sigma;
            }
        }
        {
            let [r0, r1, r2] = &mut r;
            project_ball(&mut [r0, r1, r2], alpha0);
        }

        let eq = enc.adjoint(&q);
        let dv = div(&px, &py, ny, nx);
        let (ea1, ea2) = sym_grad_adj(&r, ny, nx);
        for i in 0..n {
            let old = u[i];
            u[i] -= (eq[i] - dv[i]) * tau;
            ubar[i] = u[i] * 2.0 - old;
            let (o1, o2) = (w1[i], w2[i]);
            w1[i] -= (ea1[i] - px[i]) * tau;
            w2[i] -= (ea2[i] - py[i]) * tau;
            w1bar[i] = w1[i] * 2.0 - o1;
            w2bar[i] = w2[i] * 2.0 - o2;
        }
        if every > 0 && it % every == 0 {
            hist.objective.push((it, obj(&u, &w1, &w2)));
        }
    }
    Ok((ComplexImage::from_vec_unchecked(ny, nx, u), hist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::*;
    use crate::sense::cg_sense;
    use crate::types::{cdot, NoiseModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn grad_div_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (ny, nx) in [(2, 2), (5, 7), (16, 9)] {
            let u = rand_vec(&mut rng, ny * nx);
            let px = rand_vec(&mut rng, ny * nx);
            let py = rand_vec(&mut rng, ny * nx);
            let (gx, gy) = grad(&u, ny, nx);
            let lhs = cdot(&gx, &px) + cdot(&gy, &py);
            let rhs = -cdot(&u, &div(&px, &py, ny, nx));
            assert!((lhs - rhs).norm() / lhs.norm() < 1e-12);
        }
    }

    #[test]
    fn sym_grad_adjoint_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (ny, nx) = (6, 11);
        let n = ny * nx;
        let (w1, w2) = (rand_vec(&mut rng, n), rand_vec(&mut rng, n));
        let r = [rand_vec(&mut rng, n), rand_vec(&mut rng, n), rand_vec(&mut rng, n)];
        let e = sym_grad(&w1, &w2, ny, nx);
        let (a1, a2) = sym_grad_adj(&r, ny, nx);
        let lhs = cdot(&e[0], &r[0]) + cdot(&e[1], &r[1]) + cdot(&e[2], &r[2]);
        let rhs = cdot(&w1, &a1) + cdot(&w2, &a2);
        assert!((lhs - rhs).norm() / lhs.norm() < 1e-12);

        // power iteration on εᵀε stays below the bound of 8
        let (mut v1, mut v2) = (w1, w2);
        let mut est = 0.0;
        for _ in 0..200 {
            let e = sym_grad(&v1, &v2, ny, nx);
            let (b1, b2) = sym_grad_adj(&e, ny, nx);
            est = (crate::types::norm_sqr(&b1) + crate::types::norm_sqr(&b2)).sqrt();
            v1 = b1.iter().map(|z| z / est).collect();
            v2 = b2.iter().map(|z| z / est).collect();
        }
        assert!(est <= 8.0, "{est}");
    }

    #[test]
    fn grad_examples() {
        let (ny, nx) = (4, 5);
        let c = vec![C64::new(2.0, -1.0); ny * nx];
        let (gx, gy) = grad(&c, ny, nx);
        assert!(gx.iter().chain(&gy).all(|z| *z == ZERO));
        let ramp: Vec<C64> = (0..ny * nx).map(|i| C64::new((i % nx) as f64, 0.0)).collect();
        let (gx, _) = grad(&ramp, ny, nx);
        for y in 0..ny {
            for x in 0..nx {
                let want = if x + 1 < nx { 1.0 } else { 0.0 };
                assert_eq!(gx[y * nx + x], C64::new(want, 0.0));
            }
        }
        assert!(grad_image(&ComplexImage::zeros(1, 4)).is_err());
    }

    fn setup(n: usize, nc: usize, r: usize, acs: usize, sigma: f64) -> (ComplexImage, CoilMaps, SamplingMask, KSpace) {
        let img = make_phantom(&PhantomSpec::shepp_logan(n, n)).unwrap();
        let sens = make_coil_sensitivities(&CoilSpec::ring(nc, n, n), n, n).unwrap();
        let mask = make_uniform_mask(n, n, r, acs).unwrap();
        let k = simulate_acquisition(&img, &sens, &mask, NoiseModel::new(sigma).unwrap(), 1).unwrap();
        (img, sens, mask, k)
    }

    fn nmse(a: &ComplexImage, b: &ComplexImage) -> f64 {
        let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm_sqr()).sum();
        num / b.norm().powi(2)
    }

    #[test]
    fn config_validation() {
        assert!(PdConfig::tv(0.1, 10).validate().is_ok());
        assert!(PdConfig::tgv(0.1, 10).validate().is_ok());
        assert!(matches!(PdConfig { tau: 0.5, ..PdConfig::tv(0.1, 10) }.validate(), Err(Error::Config(_))));
        assert!(matches!(PdConfig { tau: 1.0 / 3.0, ..PdConfig::tgv(0.1, 10) }.validate(), Err(Error::Config(_))));
        assert!(PdConfig::tv(0.0, 10).validate().is_err());
        assert!(PdConfig::tv(0.1, 0).validate().is_err());
        let (_, sens, mask, k) = setup(16, 2, 2, 4, 0.0);
        assert!(tv_recon(&k, &sens, &mask, &PdConfig { sigma: 1.0, ..PdConfig::tv(0.1, 10) }).is_err());
    }

    #[test]
    fn vanishing_lambda_full_sampling_matches_adjoint() {
        let (_, sens, mask, k) = setup(32, 4, 1, 0, 0.01);
        let (ls, _) = cg_sense(&k, &sens, &mask, 1e-12, 50).unwrap();
        let u = tv_recon(&k, &sens, &mask, &PdConfig::tv(1e-12, 300)).unwrap();
        assert!(nmse(&u, &ls) < 1e-6, "{}", nmse(&u, &ls));
    }

    #[test]
    fn zero_data_gives_zero() {
        let (_, sens, mask, _) = setup(16, 2, 2, 4, 0.0);
        let k = KSpace::zeros(2, 16, 16);
        let u = tv_recon(&k, &sens, &mask, &PdConfig::tv(0.01, 20)).unwrap();
        assert!(u.data().iter().all(|z| *z == ZERO));
        let u = tgv2_recon(&k, &sens, &mask, &PdConfig::tgv(0.01, 20)).unwrap();
        assert!(u.data().iter().all(|z| *z == ZERO));
    }

    #[test]
    fn objective_samples_non_increasing() {
        let (_, sens, mask, k) = setup(48, 4, 3, 8, 0.01);
        let (_, h) = tv_recon_with_history(&k, &sens, &mask, &PdConfig::tv(0.01, 500), 50).unwrap();
        assert!(h.objective.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-8), "{:?}", h.objective);
        let (_, h) = tgv2_recon_with_history(&k, &sens, &mask, &PdConfig::tgv(0.01, 500), 50).unwrap();
        assert!(h.objective.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-8), "{:?}", h.objective);
    }

    #[test]
    fn tv_beats_cg_sense_on_noisy_undersampled_phantom() {
        let (img, sens, mask, k) = setup(64, 8, 4, 8, 0.02);
        let (cg, _) = cg_sense(&k, &sens, &mask, 1e-6, 30).unwrap();
        let tv = tv_recon(&k, &sens, &mask, &PdConfig::tv(0.01, 400)).unwrap();
        let ref_mag = img.magnitude();
        let s_cg = crate::metrics::ssim(&cg.magnitude(), &ref_mag, 64, 64).unwrap();
        let s_tv = crate::metrics::ssim(&tv.magnitude(), &ref_mag, 64, 64).unwrap();
        assert!(s_tv > s_cg, "tv {s_tv} cg {s_cg}");
    }

    #[test]
    fn tgv_large_alpha0_approaches_tv() {
        let (_, sens, mask, k) = setup(32, 4, 2, 4, 0.01);
        let lam = 0.01;
        let tv = tv_recon(&k, &sens, &mask, &PdConfig::tv(lam, 600)).unwrap();
        let tgv = tgv2_recon(&k, &sens, &mask, &PdConfig::tgv_with(lam, 600, 1e6, lam)).unwrap();
        assert!(nmse(&tgv, &tv) < 1e-3, "{}", nmse(&tgv, &tv));
    }

    #[test]
    fn tgv_reduces_staircasing_on_ramp() {
        let n = 32;
        let vals: Vec<f64> = (0..n * n).map(|i| 0.2 + 0.6 * ((i % n) + i / n) as f64 / (2 * n) as f64).collect();
        let img = ComplexImage::from_real(n, n, &vals).unwrap();
        let sens = make_coil_sensitivities(&CoilSpec::ring(4, n, n), n, n).unwrap();
        let mask = make_uniform_mask(n, n, 2, 4).unwrap();
        let k = simulate_acquisition(&img, &sens, &mask, NoiseModel::new(0.02).unwrap(), 2).unwrap();
        let lam = 0.02;
        let tv = tv_recon(&k, &sens, &mask, &PdConfig::tv(lam, 500)).unwrap();
        let tgv = tgv2_recon(&k, &sens, &mask, &PdConfig::tgv(lam, 500)).unwrap();
        assert!(nmse(&tgv, &img) <= nmse(&tv, &img), "tgv {} tv {}", nmse(&tgv, &img), nmse(&tv, &img));
    }

    #[test]
    fn tv_seminorm_non_increasing_in_lambda() {
        let (_, sens, mask, k) = setup(32, 4, 2, 4, 0.02);
        let tvs: Vec<f64> = [1e-3, 1e-2, 1e-1, 1.0]
            .iter()
            .map(|&l| tv_seminorm(&tv_recon(&k, &sens, &mask, &PdConfig::tv(l, 400)).unwrap()))
            .collect();
        assert!(tvs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6)), "{tvs:?}");
    }

    #[test]
    fn global_phase_equivariance() {
        let (_, sens, mask, k) = setup(32, 4, 2, 4, 0.01);
        let ph = C64::from_polar(1.0, -1.1);
        let mut k2 = k.clone();
        k2.data_mut().iter_mut().for_each(|z| *z *= ph);
        let cfg = PdConfig::tv(0.01, 100);
        let mut a = tv_recon(&k, &sens, &mask, &cfg).unwrap();
        let b = tv_recon(&k2, &sens, &mask, &cfg).unwrap();
        a.scale(ph);
        assert!(nmse(&a, &b) < 1e-20);
    }
}
