use std::path::{Path, PathBuf};
use std::time::Instant;

use parimg::cs::{tgv2_recon, tv_recon, PdConfig};
use parimg::dataio::{self, export_png, read_metrics_csv, write_metrics_csv};
use parimg::kspace::{grappa_calibrate, grappa_reconstruct, spirit_calibrate, spirit_reconstruct, Tikhonov};
use parimg::metrics::{MetricReport, Window};
use parimg::phantom::{make_coil_sensitivities, make_phantom, make_random_mask, make_uniform_mask, simulate_acquisition, CoilSpec, PhantomSpec};
use parimg::raki::{self, RakiArch};
use parimg::sense::{cg_sense, estimate_sensitivities, zero_filled, DEFAULT_SUPPORT_THRESHOLD};
use parimg::unrolled::{self, TrainConfig, TrainingSample, UnrolledConfig, UnrolledParams};
use parimg::{rss_of_kspace, CoilMaps, ComplexImage, KSpace, NoiseModel, SamplingMask};

use crate::config::Config;
use crate::CliError;

pub const METHODS: [&str; 9] = ["zerofill", "cgsense", "tv", "tgv", "grappa", "spirit", "raki", "rraki", "unrolled"];

const KSPACE: &str = "kspace.kspc";
const KSPACE_FULL: &str = "kspace_full.kspc";
const MASK: &str = "mask.mask";
const SENS: &str = "sens.sens";
const TRUTH: &str = "truth.imgc";

fn create_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
}

fn require(p: &Path) -> Result<&Path, CliError> {
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::MissingFile(p.display().to_string()))
    }
}

fn positive(v: f64) -> bool {
    v > 0.0
}

fn non_negative(v: f64) -> bool {
    v >= 0.0
}

pub fn simulate(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let seed: u64 = cfg.get("experiment", "seed")?;
    let slices = cfg.count("experiment", "slices", 1)?;
    let n = cfg.count("phantom", "size", 8)?;
    let kind = cfg.choice("phantom", "kind", &["random", "shepp_logan"])?;
    let phase = cfg.real("phantom", "phase", |_| true, "finite")?;
    let nc = cfg.count("coils", "count", 1)?;
    let width = cfg.real("coils", "width", positive, "> 0")?;
    let mask_kind = cfg.choice("mask", "kind", &["uniform", "random"])?;
    let r = cfg.count("mask", "acceleration", 1)?;
    let acs = cfg.count("mask", "acs", 0)?;
    let density = cfg.real("mask", "density", |v| v > 0.0 && v <= 1.0, "in (0, 1]")?;
    let sigma = cfg.real("noise", "sigma", non_negative, ">= 0")?;
    if acs > n {
        return Err(CliError::BadConfig(format!("[mask] acs = {acs} exceeds the {n}-row grid")));
    }

    let mut coils = CoilSpec::ring(nc, n, n);
    coils.width = width * n as f64;
    let sens = make_coil_sensitivities(&coils, n, n)?;
    let mask = match mask_kind {
        "uniform" => make_uniform_mask(n, n, r, acs)?,
        _ => make_random_mask(n, n, density, acs, seed)?,
    };
    let full = SamplingMask::full(n, n);
    create_dir(out)?;
    for s in 0..slices {
        let slice_seed = seed.wrapping_add(s as u64);
        let mut spec = match kind {
            "random" => PhantomSpec::random(n, n, slice_seed),
            _ => PhantomSpec::shepp_logan(n, n),
        };
        spec.phase = phase;
        let img = make_phantom(&spec)?;
        let kfull = simulate_acquisition(&img, &sens, &full, NoiseModel::new(sigma)?, slice_seed)?;
        let k = undersample(&kfull, &mask);
        let dir = if slices == 1 { out.to_path_buf() } else { out.join(format!("slice_{s:03}")) };
        create_dir(&dir)?;
        dataio::save_kspace(dir.join(KSPACE), &k)?;
        dataio::save_kspace(dir.join(KSPACE_FULL), &kfull)?;
        dataio::save_mask(dir.join(MASK), &mask)?;
        dataio::save_sensitivities(dir.join(SENS), &sens)?;
        dataio::save_image(dir.join(TRUTH), &img)?;
        export_png(&img.magnitude(), n, n, dir.join("truth.png"), Window::DISPLAY)?;
    }
    cfg.write(&out.join("simulate.resolved.ini"))
}

fn undersample(full: &KSpace, mask: &SamplingMask) -> KSpace {
    let n = mask.ny() * mask.nx();
    let mut k = full.clone();
    for (i, z) in k.data_mut().iter_mut().enumerate() {
        if !mask.entries()[i % n] {
            *z = parimg::C64::new(0.0, 0.0);
        }
    }
    k
}

fn tikhonov(cfg: &Config, key: &str) -> Result<Tikhonov, CliError> {
    Ok(Tikhonov::Relative(cfg.real("recon", key, non_negative, ">= 0")?))
}

fn sensitivities(cfg: &Config, data: &Path, k: &KSpace, mask: &SamplingMask) -> Result<CoilMaps, CliError> {
    match cfg.choice("recon", "sensitivities", &["true", "estimated"])? {
        "true" => Ok(dataio::load_sensitivities(require(&data.join(SENS))?)?),
        _ => Ok(estimate_sensitivities(k, mask, DEFAULT_SUPPORT_THRESHOLD)?),
    }
}

fn acs_block(k: &KSpace, mask: &SamplingMask) -> Result<KSpace, CliError> {
    if mask.acs_rows().is_empty() {
        return Err(CliError::Mismatch("this method needs calibration (ACS) rows in the mask".into()));
    }
    Ok(k.rows(mask.acs_rows())?)
}

fn raki_hyper(cfg: &Config) -> Result<(usize, f64, u64), CliError> {
    Ok((cfg.count("raki", "epochs", 1)?, cfg.real("raki", "lr", positive, "> 0")?, cfg.get("raki", "seed")?))
}

pub fn recon(method: &str, data: &Path, out: &Path, model: Option<&Path>, cfg: &Config) -> Result<(), CliError> {
    if !METHODS.contains(&method) {
        return Err(CliError::Mismatch(format!("unknown method {method:?}; expected one of {METHODS:?}")));
    }
    if model.is_some() && !matches!(method, "raki" | "unrolled") {
        return Err(CliError::Mismatch(format!("method {method} does not take a model")));
    }
    if method == "unrolled" && model.is_none() {
        return Err(CliError::Mismatch("method unrolled needs --model (see `parimg train unrolled`)".into()));
    }
    if let Some(m) = model {
        require(m)?;
    }
    let k = dataio::load_kspace(require(&data.join(KSPACE))?)?;
    let mask = dataio::load_mask(require(&data.join(MASK))?)?;
    let (ny, nx) = (mask.ny(), mask.nx());
    let r = mask.acceleration();
    let start = Instant::now();
    let img: ComplexImage = match method {
        "zerofill" => zero_filled(&k, &sensitivities(cfg, data, &k, &mask)?, &mask)?,
        "cgsense" => {
            let tol = cfg.real("recon", "cg_tol", positive, "> 0")?;
            let iters = cfg.count("recon", "cg_max_iter", 1)?;
            cg_sense(&k, &sensitivities(cfg, data, &k, &mask)?, &mask, tol, iters)?.0
        }
        "tv" => {
            let pd = PdConfig::tv(cfg.real("recon", "tv_lambda", non_negative, ">= 0")?, cfg.count("recon", "tv_iter", 1)?);
            tv_recon(&k, &sensitivities(cfg, data, &k, &mask)?, &mask, &pd)?
        }
        "tgv" => {
            let pd = PdConfig::tgv(cfg.real("recon", "tgv_lambda", non_negative, ">= 0")?, cfg.count("recon", "tgv_iter", 1)?);
            tgv2_recon(&k, &sensitivities(cfg, data, &k, &mask)?, &mask, &pd)?
        }
        "grappa" => {
            let (bx, by) = (cfg.count("recon", "grappa_bx", 0)?, cfg.count("recon", "grappa_by", 0)?);
            let g = grappa_calibrate(&acs_block(&k, &mask)?, r, bx, by, tikhonov(cfg, "grappa_tikhonov")?)?;
            rss_of_kspace(&grappa_reconstruct(&k, &g, &mask)?)
        }
        "spirit" => {
            let (bx, by) = (cfg.count("recon", "grappa_bx", 0)?, cfg.count("recon", "grappa_by", 0)?);
            let beta = cfg.real("recon", "spirit_beta", positive, "> 0")?;
            let kern = spirit_calibrate(&acs_block(&k, &mask)?, bx, by, tikhonov(cfg, "spirit_tikhonov")?)?;
            rss_of_kspace(&spirit_reconstruct(&k, &mask, &kern, beta, cfg.count("recon", "spirit_iter", 1)?)?.0)
        }
        "raki" => {
            let m = match model {
                Some(p) => raki::load_model(p)?,
                None => {
                    let (epochs, lr, seed) = raki_hyper(cfg)?;
                    raki::raki_train(&acs_block(&k, &mask)?, r, &RakiArch::default_for(k.n_coils(), r), epochs, lr, seed)?
                }
            };
            rss_of_kspace(&raki::raki_reconstruct(&k, &m, &mask)?)
        }
        "rraki" => {
            let (epochs, lr, seed) = raki_hyper(cfg)?;
            let comps = raki::rraki_train(&acs_block(&k, &mask)?, r, &RakiArch::default_for(k.n_coils(), r), epochs, lr, seed)?;
            rss_of_kspace(&raki::rraki_reconstruct(&k, &comps, &mask)?)
        }
        _ => {
            let p = unrolled::load_params(model.expect("checked above"))?;
            unrolled::unrolled_reconstruct(&k, &sensitivities(cfg, data, &k, &mask)?, &mask, &p)?
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    create_dir(out)?;
    dataio::save_image(out.join(format!("{method}.imgc")), &img)?;
    export_png(&img.magnitude(), ny, nx, out.join(format!("{method}.png")), Window::DISPLAY)?;
    let truth = data.join(TRUTH);
    if truth.is_file() {
        let reference = dataio::load_image(&truth)?;
        let row = MetricReport::compute(method, &img, &reference, seconds)?;
        write_metrics_csv(&[row], out.join(format!("{method}.csv")))?;
    }
    cfg.write(&out.join(format!("recon_{method}.resolved.ini")))
}

/// Slice directories of a dataset, or the directory itself if it holds a
/// single acquisition.
fn slice_dirs(data: &Path) -> Result<Vec<PathBuf>, CliError> {
    if data.join(KSPACE_FULL).is_file() {
        return Ok(vec![data.to_path_buf()]);
    }
    let entries = std::fs::read_dir(data).map_err(|_| CliError::MissingFile(data.display().to_string()))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(KSPACE_FULL).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::MissingFile(data.join(KSPACE_FULL).display().to_string()));
    }
    Ok(dirs)
}

fn write_loss_csv(path: &Path, loss: &[f64]) -> Result<(), CliError> {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in loss.iter().enumerate() {
        s.push_str(&format!("{},{}\n", i + 1, dataio::format_sig6(*l)));
    }
    std::fs::write(path, s).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn train(kind: &str, data: &Path, out: &Path, cfg: &Config) -> Result<(), CliError> {
    match kind {
        "unrolled" => {
            let ucfg = UnrolledConfig {
                stages: cfg.count("unrolled", "stages", 1)?,
                n_filters: cfg.count("unrolled", "filters", 1)?,
                taps: cfg.count("unrolled", "taps", 1)?,
                n_rbf: cfg.count("unrolled", "rbf_centers", 2)?,
                weight_sharing: cfg.get("unrolled", "weight_sharing")?,
                ..Default::default()
            };
            let tcfg = TrainConfig {
                epochs: cfg.count("unrolled", "epochs", 1)?,
                lr: cfg.real("unrolled", "lr", non_negative, ">= 0")?,
                batch: cfg.count("unrolled", "batch", 0)?,
                seed: cfg.get("unrolled", "seed")?,
            };
            let mut samples = Vec::new();
            for dir in slice_dirs(data)? {
                let full = dataio::load_kspace(require(&dir.join(KSPACE_FULL))?)?;
                let sens = dataio::load_sensitivities(require(&dir.join(SENS))?)?;
                let mask = dataio::load_mask(require(&dir.join(MASK))?)?;
                samples.push(TrainingSample::from_full(&full, &sens, &mask)?);
            }
            let init = UnrolledParams::init(&ucfg, tcfg.seed).map_err(|e| CliError::BadConfig(e.to_string()))?;
            let (params, loss) = unrolled::train(&samples, &init, &tcfg)?;
            create_dir(out)?;
            unrolled::save_params(out.join("model.unrl"), &params)?;
            write_loss_csv(&out.join("loss.csv"), &loss)?;
        }
        "raki" => {
            let k = dataio::load_kspace(require(&data.join(KSPACE))?)?;
            let mask = dataio::load_mask(require(&data.join(MASK))?)?;
            let r = mask.acceleration();
            let (epochs, lr, seed) = raki_hyper(cfg)?;
            let model = raki::raki_train(&acs_block(&k, &mask)?, r, &RakiArch::default_for(k.n_coils(), r), epochs, lr, seed)?;
            create_dir(out)?;
            raki::save_model(out.join("model.raki"), &model)?;
            write_loss_csv(&out.join("loss.csv"), &model.loss)?;
        }
        other => return Err(CliError::Mismatch(format!("cannot train {other:?}; expected unrolled or raki"))),
    }
    cfg.write(&out.join(format!("train_{kind}.resolved.ini")))
}

/// Rows in file-name order; timings come from the per-method CSV written by
/// `recon`, when present.
pub fn eval(recon_dir: &Path, reference: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let reference_img = dataio::load_image(require(reference)?)?;
    let entries = std::fs::read_dir(recon_dir).map_err(|_| CliError::MissingFile(recon_dir.display().to_string()))?;
    let ref_canon = reference.canonicalize().ok();
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "imgc"))
        .filter(|p| p.file_name().is_some_and(|n| n != TRUTH))
        .filter(|p| p.canonicalize().ok() != ref_canon)
        .collect();
    files.sort();
    let mut rows = Vec::with_capacity(files.len());
    for f in files {
        let method = f.file_stem().and_then(|s| s.to_str()).unwrap_or("unknown").to_string();
        let img = dataio::load_image(&f)?;
        let seconds = read_metrics_csv(recon_dir.join(format!("{method}.csv")))
            .ok()
            .and_then(|r| r.first().map(|m| m.seconds))
            .unwrap_or(0.0);
        rows.push(MetricReport::compute(&method, &img, &reference_img, seconds)?);
    }
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| recon_dir.join("metrics.csv"));
    write_metrics_csv(&rows, &path)?;
    for r in &rows {
        println!("{:<10} ssim {:.4}  nmse {:.4e}  psnr {:.2} dB", r.method, r.ssim, r.nmse, r.psnr);
    }
    Ok(())
}
