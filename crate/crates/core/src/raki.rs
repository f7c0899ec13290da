//! Scan-specific CNN interpolation of missing k-space rows (RAKI), and the
//! residual variant (rRAKI) that adds a CNN correction to GRAPPA.
//!
//! k-space is split into `2·n_c` real channels, interleaved per coil as
//! `(re, im)`. The network sees the acquired row lattice only and runs
//! valid convolutions, so one output position summarizes a window of
//! `ry` lattice rows by `rx` readout samples. The output at a window is
//! attributed to the lattice row `ry/2` and column `rx/2` inside it (the
//! anchor `a`), and channel `((m − 1)·n_c + j)·2 + {0, 1}` predicts coil
//! `j` at row `a − m`, exactly the rows a GRAPPA kernel with the same
//! footprint would fill.

use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::dataio::blob::{BlobReader, BlobWriter};
use crate::error::{Error, Result};
use crate::kspace::grappa::gather_sources;
use crate::kspace::{grappa_calibrate, grappa_reconstruct, lattice_offset, GrappaKernelSet, Tikhonov, DEFAULT_BX, DEFAULT_BY};
use crate::nn::{Activation, ConvNet, ConvSpec, Tensor};
use crate::optim::Adam;
use crate::rng::{stream_rng, Stream};
use crate::types::{KSpace, SamplingMask, C64, ZERO};

/// Fewest anchor positions the ACS must provide for training.
pub const MIN_TRAINING_TARGETS: usize = 64;
pub const DEFAULT_EPOCHS: usize = 500;
pub const DEFAULT_LR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct RakiArch {
    pub layers: Vec<ConvSpec>,
}

impl RakiArch {
    /// Three layers: `(5×2, 2n_c→32, relu)`, `(1×1, 32→8, relu)`,
    /// `(3×2, 8→2n_c(R−1), identity)`, written as `taps_x × taps_y`.
    pub fn default_for(n_coils: usize, r: usize) -> Self {
        let c = 2 * n_coils;
        Self {
            layers: vec![
                ConvSpec { taps_x: 5, taps_y: 2, cin: c, cout: 32, act: Activation::Relu },
                ConvSpec { taps_x: 1, taps_y: 1, cin: 32, cout: 8, act: Activation::Relu },
                ConvSpec { taps_x: 3, taps_y: 2, cin: 8, cout: c * (r.max(2) - 1), act: Activation::Identity },
            ],
        }
    }

    /// One identity layer with the footprint of a GRAPPA kernel of
    /// half-extents `(bx, by)`.
    pub fn linear(n_coils: usize, r: usize, bx: usize, by: usize) -> Self {
        Self {
            layers: vec![ConvSpec {
                taps_x: 2 * bx + 1,
                taps_y: 2 * by + 1,
                cin: 2 * n_coils,
                cout: 2 * n_coils * (r.max(2) - 1),
                act: Activation::Identity,
            }],
        }
    }

    pub fn validate(&self, n_coils: usize, r: usize) -> Result<ConvNet> {
        if r < 2 {
            return Err(Error::InvalidAcceleration(r));
        }
        let net = ConvNet::new(self.layers.clone())?;
        let (first, last) = (&self.layers[0], self.layers.last().unwrap());
        if first.cin != 2 * n_coils {
            return Err(Error::Config(format!("first layer takes {} channels, data has 2*{n_coils}", first.cin)));
        }
        if last.cout != 2 * n_coils * (r - 1) {
            return Err(Error::Config(format!(
                "last layer gives {} channels, need 2*{n_coils}*({r}-1) = {}",
                last.cout,
                2 * n_coils * (r - 1)
            )));
        }
        if last.act != Activation::Identity {
            return Err(Error::Config("last layer must use the identity activation".into()));
        }
        Ok(net)
    }

    /// `(rx, ry)` in readout samples and lattice rows.
    pub fn receptive_field(&self) -> (usize, usize) {
        let rx = self.layers.iter().map(|l| l.taps_x - 1).sum::<usize>() + 1;
        let ry = self.layers.iter().map(|l| l.taps_y - 1).sum::<usize>() + 1;
        (rx, ry)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RakiModel {
    pub arch: RakiArch,
    pub r: usize,
    pub n_coils: usize,
    /// All layer weights, flattened as in [`ConvNet`].
    pub params: Vec<f64>,
    /// Data are multiplied by this before entering the network.
    pub scale: f64,
    /// Training MSE (normalized units) before each epoch's update.
    pub loss: Vec<f64>,
}

/// Interleaved real channels of lattice rows `y0, y0 + step, ..`, with zero
/// padding for rows outside `[0, ny)` and `pad_l`/`pad_r` zero columns.
fn lattice_tensor(k: &KSpace, y0: isize, step: usize, rows: usize, pad_l: usize, pad_r: usize, scale: f64) -> Tensor {
    let (nc, ny, nx) = k.dims();
    let w = nx + pad_l + pad_r;
    let mut t = Tensor::zeros(2 * nc, rows, w);
    for i in 0..rows {
        let y = y0 + (i * step) as isize;
        if y < 0 || y as usize >= ny {
            continue;
        }
        for c in 0..nc {
            let src = &k.coil(c)[y as usize * nx..(y as usize + 1) * nx];
            for (x, z) in src.iter().enumerate() {
                t.data[((2 * c) * rows + i) * w + pad_l + x] = z.re * scale;
                t.data[((2 * c + 1) * rows + i) * w + pad_l + x] = z.im * scale;
            }
        }
    }
    t
}

struct TrainingSet {
    inputs: Vec<Tensor>,
    targets: Vec<Tensor>,
    /// Per output position, 1 where every target row lies inside the ACS.
    valid: Vec<Vec<f64>>,
    count: usize,
}

/// Windows on every row phase of the ACS block; targets optionally have the
/// GRAPPA prediction subtracted.
fn training_set(acs: &KSpace, r: usize, arch: &RakiArch, scale: f64, linear: Option<&GrappaKernelSet>) -> TrainingSet {
    let (nc, ny, nx) = acs.dims();
    let (rx, ry) = arch.receptive_field();
    let (ax, ay) = (rx / 2, ry / 2);
    let mut set = TrainingSet { inputs: Vec::new(), targets: Vec::new(), valid: Vec::new(), count: 0 };
    let mut src = linear.map(|g| vec![ZERO; g.n_taps()]).unwrap_or_default();
    for p in 0..r.min(ny) {
        let rows = (ny - p).div_ceil(r);
        if rows < ry || nx < rx {
            continue;
        }
        let (ho, wo) = (rows + 1 - ry, nx + 1 - rx);
        let input = lattice_tensor(acs, p as isize, r, rows, 0, 0, scale);
        let mut target = Tensor::zeros(2 * nc * (r - 1), ho, wo);
        let mut valid = vec![0.0; ho * wo];
        for ko in 0..ho {
            let a = p + r * (ko + ay);
            if a < r - 1 {
                continue;
            }
            for xo in 0..wo {
                valid[ko * wo + xo] = 1.0;
                set.count += 1;
                let x = xo + ax;
                if let Some(g) = linear {
                    let (bx, by) = g.half_extents();
                    gather_sources(acs.data(), (nc, ny, nx), a as isize, x as isize, (r, bx, by), &mut src);
                }
                for m in 1..r {
                    for j in 0..nc {
                        let mut v = acs.get(j, a - m, x);
                        if let Some(g) = linear {
                            v -= g.target_weights(j, m).iter().zip(&src).map(|(w, s)| w * s).sum::<C64>();
                        }
                        let ch = ((m - 1) * nc + j) * 2;
                        target.data[(ch * ho + ko) * wo + xo] = v.re * scale;
                        target.data[((ch + 1) * ho + ko) * wo + xo] = v.im * scale;
                    }
                }
            }
        }
        set.inputs.push(input);
        set.targets.push(target);
        set.valid.push(valid);
    }
    set
}

fn init_params(net: &ConvNet, seed: u64, zero_last: bool) -> Vec<f64> {
    let mut rng = stream_rng(seed, Stream::Init);
    let mut params = Vec::with_capacity(net.n_params());
    let n_layers = net.layers().len();
    for (i, l) in net.layers().iter().enumerate() {
        let fan_in = (l.cin * l.taps_x * l.taps_y) as f64;
        let gain = if l.act == Activation::Relu { 2.0 } else { 1.0 };
        let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("positive std");
        for _ in 0..l.n_weights() {
            let v = normal.sample(&mut rng);
            params.push(if zero_last && i + 1 == n_layers { 0.0 } else { v });
        }
    }
    params
}

fn acs_scale(acs: &KSpace) -> f64 {
    let max = acs.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max > 0.0 {
        1.0 / max
    } else {
        1.0
    }
}

fn check_lr(epochs: usize, lr: f64) -> Result<()> {
    if epochs == 0 || !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("training needs epochs >= 1 and lr > 0 (got {epochs}, {lr})")));
    }
    Ok(())
}

fn fit(
    acs: &KSpace,
    r: usize,
    arch: &RakiArch,
    epochs: usize,
    lr: f64,
    seed: u64,
    linear: Option<&GrappaKernelSet>,
) -> Result<RakiModel> {
    check_lr(epochs, lr)?;
    let nc = acs.n_coils();
    let net = arch.validate(nc, r)?;
    let scale = acs_scale(acs);
    let set = training_set(acs, r, arch, scale, linear);
    if set.count < MIN_TRAINING_TARGETS {
        return Err(Error::InsufficientCalibration { rows: set.count, cols: MIN_TRAINING_TARGETS });
    }
    let n_out = 2 * nc * (r - 1);
    let norm = 1.0 / (set.count * n_out) as f64;
    // a zero last layer starts the residual branch at exactly zero output
    let mut params = init_params(&net, seed, linear.is_some());
    let mut opt = Adam::new(params.len(), lr);
    let mut loss_curve = Vec::with_capacity(epochs);
    let mut grads = vec![0.0; params.len()];
    for epoch in 0..epochs {
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for ((input, target), valid) in set.inputs.iter().zip(&set.targets).zip(&set.valid) {
            let acts = net.forward_cached(&params, input);
            let out = acts.last().unwrap();
            let plane = out.h * out.w;
            let mut d = Tensor::zeros(out.c, out.h, out.w);
            for (i, (o, t)) in out.data.iter().zip(&target.data).enumerate() {
                let e = (o - t) * valid[i % plane];
                loss += e * e;
                d.data[i] = 2.0 * norm * e;
            }
            net.backward(&params, &acts, d, &mut grads);
        }
        loss *= norm;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        loss_curve.push(loss);
        opt.step(&mut params, &grads);
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::TrainingDiverged { epoch: epochs });
    }
    Ok(RakiModel { arch: arch.clone(), r, n_coils: nc, params, scale, loss: loss_curve })
}

/// Trains the interpolation CNN on the ACS block with full-batch Adam.
pub fn raki_train(acs: &KSpace, r: usize, arch: &RakiArch, epochs: usize, lr: f64, seed: u64) -> Result<RakiModel> {
    fit(acs, r, arch, epochs, lr, seed, None)
}

/// GRAPPA kernels (default geometry and ridge) plus a CNN trained on what
/// they fail to explain in the ACS.
pub fn rraki_train(
    acs: &KSpace,
    r: usize,
    arch: &RakiArch,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(GrappaKernelSet, RakiModel)> {
    check_lr(epochs, lr)?;
    arch.validate(acs.n_coils(), r)?;
    let g = grappa_calibrate(acs, r, DEFAULT_BX, DEFAULT_BY, Tikhonov::default())?;
    let model = fit(acs, r, arch, epochs, lr, seed, Some(&g))?;
    Ok((g, model))
}

fn check_recon(kspace: &KSpace, mask: &SamplingMask, r: usize, n_coils: usize) -> Result<usize> {
    let (nc, ny, nx) = kspace.dims();
    if (mask.ny(), mask.nx()) != (ny, nx) || nc != n_coils {
        return Err(Error::Shape(format!("k-space {nc}x{ny}x{nx}, mask {}x{}, model for {n_coils} coils", mask.ny(), mask.nx())));
    }
    if mask.acceleration() != r {
        return Err(Error::Config(format!("mask acceleration {} but model trained for R={r}", mask.acceleration())));
    }
    lattice_offset(mask, r)
}

/// CNN predictions at every unsampled entry; zero elsewhere.
fn cnn_predictions(kspace: &KSpace, mask: &SamplingMask, model: &RakiModel) -> Result<KSpace> {
    let r = model.r;
    let o = check_recon(kspace, mask, r, model.n_coils)?;
    let net = model.arch.validate(model.n_coils, r)?;
    if model.params.len() != net.n_params() {
        return Err(Error::State(format!("model has {} weights, architecture needs {}", model.params.len(), net.n_params())));
    }
    let (nc, ny, nx) = kspace.dims();
    let (rx, ry) = model.arch.receptive_field();
    let (ax, ay) = (rx / 2, ry / 2);
    // anchors o + R·k for k = 0..=kmax cover every row below them
    let kmax = (ny - 1 + r - 1 - o) / r;
    let rows = kmax + ry;
    let input = lattice_tensor(kspace, o as isize - (r * ay) as isize, r, rows, ax, rx - 1 - ax, model.scale);
    let out = net.forward(&model.params, &input);
    debug_assert_eq!((out.h, out.w), (kmax + 1, nx));
    let mut pred = KSpace::zeros(nc, ny, nx);
    let plane = out.h * out.w;
    for k in 0..=kmax {
        let a = o + r * k;
        for m in 1..r {
            let Some(y) = a.checked_sub(m).filter(|&y| y < ny) else { continue };
            for x in 0..nx {
                if mask.is_sampled(y, x) {
                    continue;
                }
                for j in 0..nc {
                    let ch = ((m - 1) * nc + j) * 2;
                    let re = out.data[ch * plane + k * out.w + x];
                    let im = out.data[(ch + 1) * plane + k * out.w + x];
                    pred.data_mut()[(j * ny + y) * nx + x] = C64::new(re, im) / model.scale;
                }
            }
        }
    }
    Ok(pred)
}

/// Missing entries from the CNN; sampled entries copied unchanged.
pub fn raki_reconstruct(kspace: &KSpace, model: &RakiModel, mask: &SamplingMask) -> Result<KSpace> {
    let pred = cnn_predictions(kspace, mask, model)?;
    let mut out = kspace.clone();
    let n = mask.ny() * mask.nx();
    let e = mask.entries();
    for (i, (z, p)) in out.data_mut().iter_mut().zip(pred.data()).enumerate() {
        if !e[i % n] {
            *z = *p;
        }
    }
    Ok(out)
}

/// `(linear, residual)` parts of an rRAKI reconstruction: the GRAPPA result
/// and the CNN correction (zero on sampled entries).
pub fn rraki_components(
    kspace: &KSpace,
    components: &(GrappaKernelSet, RakiModel),
    mask: &SamplingMask,
) -> Result<(KSpace, KSpace)> {
    let (g, model) = components;
    if g.acceleration() != model.r {
        return Err(Error::State(format!("GRAPPA R={} but CNN R={}", g.acceleration(), model.r)));
    }
    let linear = grappa_reconstruct(kspace, g, mask)?;
    let residual = cnn_predictions(kspace, mask, model)?;
    Ok((linear, residual))
}

/// GRAPPA reconstruction plus the learned residual at unsampled entries.
pub fn rraki_reconstruct(kspace: &KSpace, components: &(GrappaKernelSet, RakiModel), mask: &SamplingMask) -> Result<KSpace> {
    let (mut linear, residual) = rraki_components(kspace, components, mask)?;
    for (z, d) in linear.data_mut().iter_mut().zip(residual.data()) {
        *z += d;
    }
    Ok(linear)
}

const RAKI_MAGIC: &[u8; 4] = b"RAKI";
const RAKI_VERSION: u8 = 1;

/// `RAKI`, version, `R`, `n_c`, layer table, scale, weights, loss curve.
pub fn encode_model(model: &RakiModel) -> Result<Vec<u8>> {
    let mut w = BlobWriter::new(RAKI_MAGIC, RAKI_VERSION);
    w.u32(model.r)?;
    w.u32(model.n_coils)?;
    w.u32(model.arch.layers.len())?;
    for l in &model.arch.layers {
        w.u32(l.taps_x)?;
        w.u32(l.taps_y)?;
        w.u32(l.cin)?;
        w.u32(l.cout)?;
        w.u8(match l.act {
            Activation::Relu => 0,
            Activation::Identity => 1,
        });
    }
    w.f64(model.scale);
    w.f64s(&model.params)?;
    w.f64s(&model.loss)?;
    Ok(w.finish())
}

pub fn decode_model(bytes: &[u8]) -> Result<RakiModel> {
    let mut rd = BlobReader::new(bytes, RAKI_MAGIC, RAKI_VERSION)?;
    let r = rd.u32()?;
    let n_coils = rd.u32()?;
    let n_layers = rd.u32()?;
    if n_layers > 64 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let (taps_x, taps_y, cin, cout) = (rd.u32()?, rd.u32()?, rd.u32()?, rd.u32()?);
        let act = match rd.u8()? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            b => return Err(Error::Format(format!("unknown activation code {b}"))),
        };
        layers.push(ConvSpec { taps_x, taps_y, cin, cout, act });
    }
    let scale = rd.f64()?;
    let params = rd.f64s()?;
    let loss = rd.f64s()?;
    rd.finish()?;
    let arch = RakiArch { layers };
    let net = arch.validate(n_coils, r).map_err(|e| Error::Format(format!("invalid architecture: {e}")))?;
    if params.len() != net.n_params() || !scale.is_finite() || params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Format("weights do not match the architecture or are not finite".into()));
    }
    Ok(RakiModel { arch, r, n_coils, params, scale, loss })
}

pub fn save_model(path: impl AsRef<Path>, model: &RakiModel) -> Result<()> {
    std::fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<RakiModel> {
    decode_model(&std::fs::read(path)?)
}
