//! Unrolled gradient-descent network with a Fields-of-Experts regularizer.
//!
//! Each stage performs
//! `u ← u − α (Σ_i K_iᵀ φ_i(K_i u) + λ E*(E u − f))`,
//! where `K_i` maps the real/imaginary channel pair of the image to one
//! real feature map and `φ_i` is a Gaussian radial-basis mixture. The
//! network runs on data scaled so that `max |E* f| = 1` and rescales its
//! output. Gradients of a loss on the output are computed exactly by a
//! hand-written reverse pass.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataio::blob::{BlobReader, BlobWriter};
use crate::encoding::Encoding;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng::{stream_rng, Stream};
use crate::types::{rdot, CoilMaps, ComplexImage, KSpace, SamplingMask, C64, ZERO};

pub const DEFAULT_STAGES: usize = 5;
pub const DEFAULT_FILTERS: usize = 8;
pub const DEFAULT_TAPS: usize = 7;
pub const DEFAULT_RBF_CENTERS: usize = 31;
pub const DEFAULT_RBF_RANGE: f64 = 1.0;
pub const INIT_ALPHA: f64 = 0.1;
pub const INIT_LAMBDA: f64 = 1.0;
/// Initial activations approximate `φ(z) = INIT_SLOPE·z` (a quadratic
/// potential) on the center range.
pub const INIT_SLOPE: f64 = 0.1;
const MIN_ALPHA: f64 = 1e-8;

/// Fixed, shared Gaussian basis: `N_w` centers evenly spaced on `[−v, v]`,
/// width equal to the spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Rbf {
    v: f64,
    n: usize,
}

impl Rbf {
    pub fn new(n_centers: usize, v: f64) -> Result<Self> {
        if n_centers < 2 || !(v > 0.0) || !v.is_finite() {
            return Err(Error::Config(format!("rbf needs >= 2 centers and range > 0 (got {n_centers}, {v})")));
        }
        Ok(Self { v, n: n_centers })
    }

    pub fn n_centers(&self) -> usize {
        self.n
    }

    pub fn range(&self) -> f64 {
        self.v
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.v / (self.n - 1) as f64
    }

    pub fn sigma(&self) -> f64 {
        self.spacing()
    }

    pub fn center(&self, k: usize) -> f64 {
        -self.v + k as f64 * self.spacing()
    }

    /// All basis values at `x`. Uses the uniform-grid recurrence
    /// `e_{k+1} = e_k · exp(t − k − ½)` outward from the nearest center, so
    /// only three exponentials are evaluated per point.
    pub fn basis(&self, x: f64, out: &mut [f64]) {
        let t = (x + self.v) / self.spacing();
        let k0 = t.round().clamp(0.0, (self.n - 1) as f64) as usize;
        let d = t - k0 as f64;
        out[k0] = (-0.5 * d * d).exp();
        let mut m = (d - 0.5).exp();
        for k in k0 + 1..self.n {
            out[k] = out[k - 1] * m;
            m *= std::f64::consts::E.recip();
        }
        let mut m = (-d - 0.5).exp();
        for k in (0..k0).rev() {
            out[k] = out[k + 1] * m;
            m *= std::f64::consts::E.recip();
        }
    }

    /// `(φ(x), φ'(x))` for weights `w`.
    pub fn eval(&self, w: &[f64], x: f64, scratch: &mut [f64]) -> (f64, f64) {
        self.basis(x, scratch);
        let (mut s0, mut s1) = (0.0, 0.0);
        let (mut c, h) = (-self.v, self.spacing());
        for (&wk, &e) in w.iter().zip(scratch.iter()) {
            s0 += wk * e;
            s1 += wk * e * c;
            c += h;
        }
        (s0, (s1 - x * s0) / (self.sigma() * self.sigma()))
    }
}

/// Values, derivatives and weight gradient of a radial-basis activation.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfEval {
    pub value: Vec<f64>,
    pub derivative: Vec<f64>,
    /// `∂ Σ_p φ(x_p) / ∂w_k`, the basis summed over all points.
    pub weight_grad: Vec<f64>,
}

pub fn rbf_activation(rbf: &Rbf, w: &[f64], x: &[f64]) -> Result<RbfEval> {
    if w.len() != rbf.n_centers() {
        return Err(Error::Shape(format!("{} weights for {} centers", w.len(), rbf.n_centers())));
    }
    let mut scratch = vec![0.0; rbf.n];
    let mut value = Vec::with_capacity(x.len());
    let mut derivative = Vec::with_capacity(x.len());
    let mut weight_grad = vec![0.0; rbf.n];
    for &xi in x {
        let (v, d) = rbf.eval(w, xi, &mut scratch);
        value.push(v);
        derivative.push(d);
        weight_grad.iter_mut().zip(&scratch).for_each(|(g, e)| *g += e);
    }
    Ok(RbfEval { value, derivative, weight_grad })
}

/// Weights of one real/imag → real filter, `[channel][dy][dx]` with the
/// channel 0 acting on real parts.
#[derive(Clone, Debug, PartialEq)]
pub struct Filter {
    pub taps_y: usize,
    pub taps_x: usize,
    pub w: Vec<f64>,
}

impl Filter {
    pub fn zeros(taps_y: usize, taps_x: usize) -> Self {
        Self { taps_y, taps_x, w: vec![0.0; 2 * taps_y * taps_x] }
    }

    fn idx(&self, ch: usize, dy: usize, dx: usize) -> usize {
        (ch * self.taps_y + dy) * self.taps_x + dx
    }

    /// Subtracts each channel's mean, so the filter annihilates constant
    /// images.
    pub fn project_zero_mean(&mut self) {
        let n = self.taps_y * self.taps_x;
        for ch in self.w.chunks_mut(n) {
            let mean = ch.iter().sum::<f64>() / n as f64;
            ch.iter_mut().for_each(|v| *v -= mean);
        }
    }

    /// Zero-padded `(K u)(y, x) = Σ k[c, dy, dx] u_c(y + dy − hy, x + dx − hx)`.
    pub fn apply(&self, u: &[C64], ny: usize, nx: usize) -> Vec<f64> {
        let mut out = vec![0.0; ny * nx];
        self.for_each_tap(ny, nx, |dy, dx, oy, ox, ys, xs| {
            let (kr, ki) = (self.w[self.idx(0, dy, dx)], self.w[self.idx(1, dy, dx)]);
            for y in ys {
                let (d, s) = row_pair(y, oy, ox, &xs, nx);
                for (o, v) in out[d].iter_mut().zip(&u[s]) {
                    *o += kr * v.re + ki * v.im;
                }
            }
        });
        out
    }

    /// `Kᵀ q`: correlation with the 180°-rotated filter, one complex output.
    pub fn adjoint(&self, q: &[f64], ny: usize, nx: usize) -> Vec<C64> {
        let mut out = vec![ZERO; ny * nx];
        self.for_each_tap(ny, nx, |dy, dx, oy, ox, ys, xs| {
            let (kr, ki) = (self.w[self.idx(0, dy, dx)], self.w[self.idx(1, dy, dx)]);
            for y in ys {
                let (d, s) = row_pair(y, oy, ox, &xs, nx);
                for (o, v) in out[s].iter_mut().zip(&q[d]) {
                    o.re += kr * v;
                    o.im += ki * v;
                }
            }
        });
        out
    }

    /// `∂⟨q, K u⟩/∂k`, accumulated into `g`.
    fn weight_grad(&self, q: &[f64], u: &[C64], ny: usize, nx: usize, g: &mut [f64]) {
        self.for_each_tap(ny, nx, |dy, dx, oy, ox, ys, xs| {
            let (mut gr, mut gi) = (0.0, 0.0);
            for y in ys {
                let (d, s) = row_pair(y, oy, ox, &xs, nx);
                for (a, v) in q[d].iter().zip(&u[s]) {
                    gr += a * v.re;
                    gi += a * v.im;
                }
            }
            g[self.idx(0, dy, dx)] += gr;
            g[self.idx(1, dy, dx)] += gi;
        });
    }

    /// Calls `f(dy, dx, oy, ox, rows, cols)` per tap with the output rows and
    /// columns whose shifted source lies inside the grid.
    fn for_each_tap<F>(&self, ny: usize, nx: usize, mut f: F)
    where
        F: FnMut(usize, usize, isize, isize, std::ops::Range<usize>, std::ops::Range<usize>),
    {
        let (hy, hx) = ((self.taps_y / 2) as isize, (self.taps_x / 2) as isize);
        for dy in 0..self.taps_y {
            let oy = dy as isize - hy;
            let ys = (-oy).max(0) as usize..(ny as isize - oy.max(0)).max(0) as usize;
            for dx in 0..self.taps_x {
                let ox = dx as isize - hx;
                let xs = (-ox).max(0) as usize..(nx as isize - ox.max(0)).max(0) as usize;
                f(dy, dx, oy, ox, ys.clone(), xs);
            }
        }
    }
}

/// Output-row and shifted-source-row index ranges for one tap.
fn row_pair(y: usize, oy: isize, ox: isize, xs: &std::ops::Range<usize>, nx: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let d = y * nx + xs.start..y * nx + xs.end;
    let s0 = ((y as isize + oy) * nx as isize + xs.start as isize + ox) as usize;
    (d, s0..s0 + xs.len())
}

/// Filters and activation weights of one regularizer.
#[derive(Clone, Debug, PartialEq)]
pub struct FoeParams {
    pub filters: Vec<Filter>,
    /// One weight vector per filter, `N_w` long.
    pub weights: Vec<Vec<f64>>,
}

impl FoeParams {
    pub fn n_filters(&self) -> usize {
        self.filters.len()
    }

    fn validate(&self, rbf: &Rbf) -> Result<()> {
        if self.filters.is_empty() || self.filters.len() != self.weights.len() {
            return Err(Error::Config(format!(
                "{} filters with {} activation weight sets",
                self.filters.len(),
                self.weights.len()
            )));
        }
        for f in &self.filters {
            if f.taps_y % 2 == 0 || f.taps_x % 2 == 0 || f.w.len() != 2 * f.taps_y * f.taps_x {
                return Err(Error::Config(format!("filter {}x{} must have odd sizes", f.taps_y, f.taps_x)));
            }
        }
        if self.weights.iter().any(|w| w.len() != rbf.n_centers()) {
            return Err(Error::Config("activation weights do not match the basis size".into()));
        }
        let finite = self.filters.iter().flat_map(|f| &f.w).chain(self.weights.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("non-finite regularizer parameter".into()));
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        Self {
            filters: self.filters.iter().map(|f| Filter::zeros(f.taps_y, f.taps_x)).collect(),
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
        }
    }
}

/// `Σ_i K_iᵀ φ_i(K_i u)`, the gradient of `Σ_i ⟨ρ_i(K_i u), 1⟩`.
pub fn foe_gradient(u: &ComplexImage, params: &FoeParams, rbf: &Rbf) -> Result<ComplexImage> {
    params.validate(rbf)?;
    let (ny, nx) = u.dims();
    if params.filters.iter().any(|f| f.taps_y > ny || f.taps_x > nx) {
        return Err(Error::Shape(format!("filters do not fit a {ny}x{nx} image")));
    }
    let (g, _) = foe_terms(u.data(), params, rbf, ny, nx);
    Ok(ComplexImage::from_vec_unchecked(ny, nx, g))
}

/// Regularizer gradient plus each filter response `K_i u`.
fn foe_terms(u: &[C64], params: &FoeParams, rbf: &Rbf, ny: usize, nx: usize) -> (Vec<C64>, Vec<Vec<f64>>) {
    let parts: Vec<(Vec<C64>, Vec<f64>)> = params
        .filters
        .par_iter()
        .zip(&params.weights)
        .map(|(f, w)| {
            let z = f.apply(u, ny, nx);
            let mut scratch = vec![0.0; rbf.n_centers()];
            let phi: Vec<f64> = z.iter().map(|&zi| rbf.eval(w, zi, &mut scratch).0).collect();
            (f.adjoint(&phi, ny, nx), z)
        })
        .collect();
    let mut g = vec![ZERO; ny * nx];
    let mut zs = Vec::with_capacity(parts.len());
    for (gi, z) in parts {
        g.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
        zs.push(z);
    }
    (g, zs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnrolledConfig {
    pub stages: usize,
    pub n_filters: usize,
    pub taps: usize,
    pub n_rbf: usize,
    pub rbf_range: f64,
    pub weight_sharing: bool,
}

impl Default for UnrolledConfig {
    fn default() -> Self {
        Self {
            stages: DEFAULT_STAGES,
            n_filters: DEFAULT_FILTERS,
            taps: DEFAULT_TAPS,
            n_rbf: DEFAULT_RBF_CENTERS,
            rbf_range: DEFAULT_RBF_RANGE,
            weight_sharing: false,
        }
    }
}

/// Per-stage parameters. With weight sharing a single entry is used by
/// every stage (regularizer, step size and data weight alike).
#[derive(Clone, Debug, PartialEq)]
pub struct UnrolledParams {
    pub stages: usize,
    pub weight_sharing: bool,
    pub rbf: Rbf,
    pub foe: Vec<FoeParams>,
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl UnrolledParams {
    /// Zero-mean Gaussian filters scaled to unit norm per channel,
    /// activations `≈ INIT_SLOPE·z`, `α = 0.1`, `λ = 1`.
    pub fn init(cfg: &UnrolledConfig, seed: u64) -> Result<Self> {
        if cfg.n_filters == 0 || cfg.taps == 0 || cfg.taps % 2 == 0 {
            return Err(Error::Config(format!(
                "need at least one filter and an odd filter size (got {}, {})",
                cfg.n_filters, cfg.taps
            )));
        }
        let rbf = Rbf::new(cfg.n_rbf, cfg.rbf_range)?;
        let sets = if cfg.weight_sharing { 1 } else { cfg.stages };
        let mut rng = stream_rng(seed, Stream::Init);
        let slope = INIT_SLOPE / (2.0 * std::f64::consts::PI).sqrt();
        let act: Vec<f64> = (0..rbf.n_centers()).map(|k| slope * rbf.center(k)).collect();
        let mut foe = Vec::with_capacity(sets);
        for _ in 0..sets {
            let mut filters = Vec::with_capacity(cfg.n_filters);
            for _ in 0..cfg.n_filters {
                let mut f = Filter::zeros(cfg.taps, cfg.taps);
                f.w.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
                f.project_zero_mean();
                let n = cfg.taps * cfg.taps;
                for ch in f.w.chunks_mut(n) {
                    let norm = ch.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        ch.iter_mut().for_each(|v| *v /= norm);
                    }
                }
                filters.push(f);
            }
            foe.push(FoeParams { filters, weights: vec![act.clone(); cfg.n_filters] });
        }
        let p = Self {
            stages: cfg.stages,
            weight_sharing: cfg.weight_sharing,
            rbf,
            foe,
            alpha: vec![INIT_ALPHA; sets],
            lambda: vec![INIT_LAMBDA; sets],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_sets(&self) -> usize {
        if self.weight_sharing {
            1
        } else {
            self.stages
        }
    }

    fn set(&self, t: usize) -> usize {
        if self.weight_sharing {
            0
        } else {
            t
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sets = self.n_sets();
        if self.foe.len() != sets || self.alpha.len() != sets || self.lambda.len() != sets {
            return Err(Error::Config(format!(
                "expected {sets} parameter sets, got {} / {} / {}",
                self.foe.len(),
                self.alpha.len(),
                self.lambda.len()
            )));
        }
        for f in &self.foe {
            f.validate(&self.rbf)?;
        }
        if self.alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) || self.lambda.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config("step sizes must be > 0 and data weights >= 0".into()));
        }
        Ok(())
    }

    /// Same structure with every value zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            foe: self.foe.iter().map(FoeParams::zeros_like).collect(),
            alpha: vec![0.0; self.alpha.len()],
            lambda: vec![0.0; self.lambda.len()],
            ..self.clone()
        }
    }

    /// Per set: filter taps, activation weights, `α`, `λ`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (s, foe) in self.foe.iter().enumerate() {
            foe.filters.iter().for_each(|f| v.extend_from_slice(&f.w));
            foe.weights.iter().for_each(|w| v.extend_from_slice(w));
            v.push(self.alpha[s]);
            v.push(self.lambda[s]);
        }
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let mut it = v.iter().copied();
        for s in 0..self.foe.len() {
            for f in &mut self.foe[s].filters {
                f.w.iter_mut().for_each(|x| *x = it.next().expect("flat length"));
            }
            for w in &mut self.foe[s].weights {
                w.iter_mut().for_each(|x| *x = it.next().expect("flat length"));
            }
            self.alpha[s] = it.next().expect("flat length");
            self.lambda[s] = it.next().expect("flat length");
        }
        debug_assert!(it.next().is_none());
    }

    /// Zero-mean filters, `α ≥ 1e-8`, `λ ≥ 0`.
    pub fn project(&mut self) {
        self.foe.iter_mut().flat_map(|f| &mut f.filters).for_each(Filter::project_zero_mean);
        self.alpha.iter_mut().for_each(|a| *a = a.max(MIN_ALPHA));
        self.lambda.iter_mut().for_each(|l| *l = l.max(0.0));
    }

    fn check_fits(&self, ny: usize, nx: usize) -> Result<()> {
        let fits = self.foe.iter().flat_map(|f| &f.filters).all(|f| f.taps_y <= ny && f.taps_x <= nx);
        if !fits {
            return Err(Error::Shape(format!("filters do not fit a {ny}x{nx} image")));
        }
        Ok(())
    }
}

/// Intermediates of one forward pass, owned so the reverse pass needs
/// nothing else.
#[derive(Clone, Debug)]
pub struct StageCache {
    sens: CoilMaps,
    mask: SamplingMask,
    /// `max |E* f|`; the network runs on data divided by it.
    pub scale: f64,
    /// Normalized `E* f`.
    u0: Vec<C64>,
    /// Normalized iterates `u⁰ … u^T`.
    pub iterates: Vec<Vec<C64>>,
    /// Filter responses `K_i u^{t−1}` per stage.
    responses: Vec<Vec<Vec<f64>>>,
    /// Regularizer gradient per stage.
    reg: Vec<Vec<C64>>,
    /// Data-consistency gradient `E*(E u^{t−1} − f)` per stage.
    dc: Vec<Vec<C64>>,
    shape: (usize, bool, Vec<usize>),
}

fn structure(p: &UnrolledParams) -> (usize, bool, Vec<usize>) {
    let mut s: Vec<usize> = p.foe.iter().flat_map(|f| f.filters.iter().flat_map(|k| [k.taps_y, k.taps_x])).collect();
    s.push(p.rbf.n_centers());
    (p.stages, p.weight_sharing, s)
}

pub fn unrolled_forward(
    kspace: &KSpace,
    sens: &CoilMaps,
    mask: &SamplingMask,
    params: &UnrolledParams,
) -> Result<(ComplexImage, StageCache)> {
    params.validate()?;
    let enc = Encoding::new(sens, mask)?;
    enc.check_kspace(kspace)?;
    let (ny, nx) = (sens.ny(), sens.nx());
    params.check_fits(ny, nx)?;
    let mut u0 = enc.adjoint(kspace.data());
    let max = u0.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = if max > 0.0 { max } else { 1.0 };
    u0.iter_mut().for_each(|z| *z /= scale);

    let mut cache = StageCache {
        sens: sens.clone(),
        mask: mask.clone(),
        scale,
        u0: u0.clone(),
        iterates: vec![u0.clone()],
        responses: Vec::with_capacity(params.stages),
        reg: Vec::with_capacity(params.stages),
        dc: Vec::with_capacity(params.stages),
        shape: structure(params),
    };
    let mut u = u0;
    for t in 0..params.stages {
        let s = params.set(t);
        let (g, z) = foe_terms(&u, &params.foe[s], &params.rbf, ny, nx);
        let mut dc = enc.normal(&u);
        dc.iter_mut().zip(&cache.u0).for_each(|(a, b)| *a -= b);
        let (a, l) = (params.alpha[s], params.lambda[s]);
        for ((ui, gi), di) in u.iter_mut().zip(&g).zip(&dc) {
            *ui -= a * (gi + l * di);
        }
        cache.responses.push(z);
        cache.reg.push(g);
        cache.dc.push(dc);
        cache.iterates.push(u.clone());
    }
    let out: Vec<C64> = u.iter().map(|z| z * scale).collect();
    Ok((ComplexImage::from_vec_unchecked(ny, nx, out), cache))
}

/// Reverse pass. `d_out` is `∂L/∂re + i·∂L/∂im` of the (un-normalized)
/// output image. Returns parameter gradients in the shape of `params`.
pub fn unrolled_backward(cache: &StageCache, params: &UnrolledParams, d_out: &ComplexImage) -> Result<UnrolledParams> {
    if structure(params) != cache.shape || cache.iterates.len() != params.stages + 1 {
        return Err(Error::State("cache was produced by a different network".into()));
    }
    let (ny, nx) = (cache.sens.ny(), cache.sens.nx());
    if d_out.dims() != (ny, nx) {
        return Err(Error::Shape(format!("output gradient {:?} vs image {ny}x{nx}", d_out.dims())));
    }
    let enc = Encoding::new(&cache.sens, &cache.mask)?;
    let mut grads = params.zeros_like();
    let mut ub: Vec<C64> = d_out.data().iter().map(|z| z * cache.scale).collect();
    for t in (0..params.stages).rev() {
        let s = params.set(t);
        let (a, l) = (params.alpha[s], params.lambda[s]);
        let u_prev = &cache.iterates[t];
        let (reg, dc) = (&cache.reg[t], &cache.dc[t]);
        grads.alpha[s] -= rdot(&ub, reg) + l * rdot(&ub, dc);
        grads.lambda[s] -= a * rdot(&ub, dc);

        // Per filter: q = K ū, then weight, filter and input contributions.
        let foe = &params.foe[s];
        let parts: Vec<(Vec<f64>, Vec<f64>, Vec<C64>)> = foe
            .filters
            .par_iter()
            .zip(&foe.weights)
            .zip(&cache.responses[t])
            .map(|((f, w), z)| {
                let q = f.apply(&ub, ny, nx);
                let mut scratch = vec![0.0; params.rbf.n_centers()];
                let mut gw = vec![0.0; w.len()];
                let mut phi = vec![0.0; z.len()];
                let mut qd = vec![0.0; z.len()];
                for p in 0..z.len() {
                    let (v, d) = params.rbf.eval(w, z[p], &mut scratch);
                    phi[p] = v;
                    qd[p] = q[p] * d;
                    gw.iter_mut().zip(&scratch).for_each(|(g, e)| *g += q[p] * e);
                }
                // ⟨ū, Kᵀφ(K u)⟩ = ⟨K ū, φ(K u)⟩ depends on k through both K's.
                let mut gk = vec![0.0; f.w.len()];
                f.weight_grad(&phi, &ub, ny, nx, &mut gk);
                f.weight_grad(&qd, u_prev, ny, nx, &mut gk);
                (gw, gk, f.adjoint(&qd, ny, nx))
            })
            .collect();
        let mut jt = vec![ZERO; ny * nx];
        for (i, (gw, gk, back)) in parts.into_iter().enumerate() {
            grads.foe[s].weights[i].iter_mut().zip(&gw).for_each(|(g, v)| *g -= a * v);
            grads.foe[s].filters[i].w.iter_mut().zip(&gk).for_each(|(g, v)| *g -= a * v);
            jt.iter_mut().zip(&back).for_each(|(x, y)| *x += y);
        }
        let nb = enc.normal(&ub);
        for ((u, j), n) in ub.iter_mut().zip(&jt).zip(&nb) {
            *u -= a * (j + l * n);
        }
    }
    Ok(grads)
}

/// One supervised example.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub kspace: KSpace,
    pub sens: CoilMaps,
    pub mask: SamplingMask,
    pub reference: ComplexImage,
}

impl TrainingSample {
    /// Retrospective undersampling of fully sampled data. The reference is
    /// the sensitivity-weighted combination `E* f_full`.
    pub fn from_full(full: &KSpace, sens: &CoilMaps, mask: &SamplingMask) -> Result<Self> {
        let all = SamplingMask::full(mask.ny(), mask.nx());
        let enc_full = Encoding::new(sens, &all)?;
        enc_full.check_kspace(full)?;
        let reference = ComplexImage::from_vec_unchecked(sens.ny(), sens.nx(), enc_full.adjoint(full.data()));
        let n = mask.ny() * mask.nx();
        let mut k = full.clone();
        k.data_mut().iter_mut().enumerate().for_each(|(i, z)| {
            if !mask.entries()[i % n] {
                *z = ZERO;
            }
        });
        Ok(Self { kspace: k, sens: sens.clone(), mask: mask.clone(), reference })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Samples per update; `0` or anything ≥ the dataset size is full batch.
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, lr: 1e-3, batch: 0, seed: 0 }
    }
}

/// Loss and gradient over a batch, `(1/2S) Σ ‖u^T_s − u_ref,s‖²` with `S`
/// the batch size. Samples run concurrently and are accumulated in order.
pub fn batch_loss_and_grad(samples: &[&TrainingSample], params: &UnrolledParams) -> Result<(f64, Vec<f64>)> {
    let per: Vec<Result<(f64, Vec<f64>)>> = samples
        .par_iter()
        .map(|s| {
            let (out, cache) = unrolled_forward(&s.kspace, &s.sens, &s.mask, params)?;
            let diff: Vec<C64> = out.data().iter().zip(s.reference.data()).map(|(a, b)| a - b).collect();
            let loss = 0.5 * diff.iter().map(|z| z.norm_sqr()).sum::<f64>();
            let g = unrolled_backward(&cache, params, &ComplexImage::from_vec_unchecked(out.ny(), out.nx(), diff))?;
            Ok((loss, g.to_flat()))
        })
        .collect();
    let inv = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.to_flat().len()];
    for r in per {
        let (l, g) = r?;
        loss += l * inv;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b * inv);
    }
    Ok((loss, grad))
}

/// Adam on the mean-squared error with the zero-mean filter projection
/// after every step. Returns the trained parameters and the mean training
/// loss of each epoch (evaluated before that epoch's updates are applied
/// to each batch).
pub fn train(dataset: &[TrainingSample], init: &UnrolledParams, cfg: &TrainConfig) -> Result<(UnrolledParams, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if !(cfg.lr >= 0.0) || !cfg.lr.is_finite() {
        return Err(Error::Config(format!("learning rate must be >= 0 (got {})", cfg.lr)));
    }
    init.validate()?;
    let mut params = init.clone();
    let mut flat = params.to_flat();
    let mut opt = Adam::new(flat.len(), cfg.lr);
    let batch = if cfg.batch == 0 || cfg.batch >= dataset.len() { dataset.len() } else { cfg.batch };
    let mut rng = stream_rng(cfg.seed, Stream::Init);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if batch < dataset.len() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let samples: Vec<&TrainingSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss, grad) = batch_loss_and_grad(&samples, &params)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            epoch_loss += loss * chunk.len() as f64 / dataset.len() as f64;
            if cfg.lr > 0.0 {
                opt.step(&mut flat, &grad);
                params.set_flat(&flat);
                params.project();
                flat = params.to_flat();
            }
        }
        curve.push(epoch_loss);
    }
    Ok((params, curve))
}

/// Convenience: forward pass without the cache.
pub fn unrolled_reconstruct(kspace: &KSpace, sens: &CoilMaps, mask: &SamplingMask, params: &UnrolledParams) -> Result<ComplexImage> {
    Ok(unrolled_forward(kspace, sens, mask, params)?.0)
}

const UNRL_MAGIC: &[u8; 4] = b"UNRL";
const UNRL_VERSION: u8 = 1;

/// `UNRL`, version, `T`, sharing flag, sets, `N_k`, filter size, `N_w`,
/// basis range, then the flat parameter vector.
pub fn encode_params(p: &UnrolledParams) -> Result<Vec<u8>> {
    p.validate()?;
    if p.foe.is_empty() {
        return Err(Error::Config("a network without stages has nothing to save".into()));
    }
    let f0 = &p.foe[0].filters[0];
    if p.foe.iter().flat_map(|f| &f.filters).any(|f| (f.taps_y, f.taps_x) != (f0.taps_y, f0.taps_x))
        || p.foe.iter().any(|f| f.n_filters() != p.foe[0].n_filters())
    {
        return Err(Error::Config("model files need one filter size and count for all stages".into()));
    }
    let mut w = BlobWriter::new(UNRL_MAGIC, UNRL_VERSION);
    w.u32(p.stages)?;
    w.u8(p.weight_sharing as u8);
    w.u32(p.foe[0].n_filters())?;
    w.u32(f0.taps_y)?;
    w.u32(f0.taps_x)?;
    w.u32(p.rbf.n_centers())?;
    w.f64(p.rbf.range());
    w.f64s(&p.to_flat())?;
    Ok(w.finish())
}

pub fn decode_params(bytes: &[u8]) -> Result<UnrolledParams> {
    let mut rd = BlobReader::new(bytes, UNRL_MAGIC, UNRL_VERSION)?;
    let stages = rd.u32()?;
    let weight_sharing = match rd.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Format(format!("bad sharing flag {b}"))),
    };
    let (nk, ty, tx, nw) = (rd.u32()?, rd.u32()?, rd.u32()?, rd.u32()?);
    let range = rd.f64()?;
    let flat = rd.f64s()?;
    rd.finish()?;
    let bad = |what: &str| Error::Format(format!("invalid model: {what}"));
    if stages > 4096 || nk == 0 || nk > 4096 || ty % 2 == 0 || tx % 2 == 0 || ty > 255 || tx > 255 || nw > 4096 {
        return Err(bad("implausible hyperparameters"));
    }
    let rbf = Rbf::new(nw, range).map_err(|e| bad(&e.to_string()))?;
    let sets = if weight_sharing { 1 } else { stages };
    if sets == 0 {
        return Err(bad("no parameter sets"));
    }
    let per_set = nk * (2 * ty * tx + nw) + 2;
    if flat.len() != sets * per_set {
        return Err(bad("weight count does not match the hyperparameters"));
    }
    let foe = FoeParams { filters: vec![Filter::zeros(ty, tx); nk], weights: vec![vec![0.0; nw]; nk] };
    let mut p = UnrolledParams {
        stages,
        weight_sharing,
        rbf,
        foe: vec![foe; sets],
        alpha: vec![0.0; sets],
        lambda: vec![0.0; sets],
    };
    p.set_flat(&flat);
    p.validate().map_err(|e| bad(&e.to_string()))?;
    Ok(p)
}

pub fn save_params(path: impl AsRef<Path>, p: &UnrolledParams) -> Result<()> {
    std::fs::write(path, encode_params(p)?)?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<UnrolledParams> {
    decode_params(&std::fs::read(path)?)
}
