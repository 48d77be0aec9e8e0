use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ldvae::data::{
    abundance_csv, add_noise_with, generate_cube_with, generate_pure_cube, measured_snr_db,
    parse_spectral_library, read_cube, synthetic_library, write_cube, write_pgm, EndmemberSet,
    HsiCube,
};
use ldvae::model::{read_checkpoint, write_checkpoint};
use ldvae::training::evaluate_with;
use ldvae::{ExecMode, LdvaeModel};
use serde::Serialize;

use crate::config::{parse_size, RunConfig, Snr};

const DEFAULT_SYNTH_ENDMEMBERS: usize = 4;
const DEFAULT_SYNTH_BANDS: usize = 50;

#[derive(Serialize)]
struct SynthManifest<'a> {
    seed: u64,
    height: usize,
    width: usize,
    bands: usize,
    endmembers: &'a [String],
    library: Option<String>,
    prior: Vec<f64>,
    pure: bool,
    snr_db: Snr,
    measured_snr_db: Option<f64>,
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_library(path: &Path) -> Result<EndmemberSet> {
    parse_spectral_library(path).with_context(|| format!("reading library {}", path.display()))
}

fn load_cube(path: &Path) -> Result<HsiCube> {
    read_cube(path).with_context(|| format!("reading cube {}", path.display()))
}

fn load_model(path: &Path) -> Result<LdvaeModel> {
    read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn latent_names(model: &LdvaeModel) -> Vec<String> {
    match &model.metadata.endmember_names {
        Some(n) if n.len() == model.n_endmembers() => n.clone(),
        _ => (1..=model.n_endmembers())
            .map(|j| format!("endmember_{j}"))
            .collect(),
    }
}

fn check_bands(model: &LdvaeModel, cube: &HsiCube) -> Result<()> {
    if model.n_bands() != cube.bands() {
        bail!(ldvae::Error::Shape(format!(
            "cube has {} bands but the checkpoint expects {}",
            cube.bands(),
            model.n_bands()
        )));
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, exec: ExecMode) -> Result<()> {
    let library_path = match &cfg.library {
        Some(_) => Some(cfg.require_input("library", &cfg.library)?),
        None => None,
    };
    let out = cfg.output_dir()?;
    let seed = cfg.seed.unwrap_or(0);
    let (height, width) = parse_size(cfg.size.as_deref().unwrap_or("32x32"))?;
    let snr = cfg.snr_db.unwrap_or(Snr(f64::INFINITY));
    let pure = cfg.pure.unwrap_or(false);

    let library = match &library_path {
        Some(p) => load_library(p)?,
        None => synthetic_library(
            cfg.synthetic_endmembers.unwrap_or(DEFAULT_SYNTH_ENDMEMBERS),
            cfg.bands.unwrap_or(DEFAULT_SYNTH_BANDS),
            seed,
        )?,
    };
    let n = library.len();
    let prior = match cfg.prior.as_deref() {
        None => vec![1.0; n],
        Some([v]) => vec![*v; n],
        Some(p) if p.len() == n => p.to_vec(),
        Some(p) => bail!(ldvae::Error::Config(format!(
            "prior has {} values for {n} endmembers",
            p.len()
        ))),
    };

    let clean = if pure {
        generate_pure_cube(&library, height, width, seed)?
    } else {
        generate_cube_with(&library, height, width, &prior, seed, exec)?
    };
    let cube = add_noise_with(&clean, snr.0, seed, exec)?;
    let measured = snr
        .0
        .is_finite()
        .then(|| measured_snr_db(&clean, &cube))
        .transpose()?;

    write_cube(&cube, out.join("cube.hsi"))?;
    let truth = cube
        .ground_truth()
        .expect("generated cubes carry ground truth");
    for j in 0..n {
        let map: Vec<f64> = truth.iter().skip(j).step_by(n).copied().collect();
        write_pgm(
            out.join(format!("ground_truth_{}.pgm", j + 1)),
            width,
            height,
            &map,
        )?;
    }
    write(
        &out,
        "ground_truth.csv",
        abundance_csv(width, library.names(), truth)?,
    )?;
    write(&out, "library.csv", library.to_csv())?;
    let manifest = SynthManifest {
        seed,
        height,
        width,
        bands: library.bands(),
        endmembers: library.names(),
        library: library_path.map(|p| p.display().to_string()),
        prior: if pure { Vec::new() } else { prior },
        pure,
        snr_db: snr,
        measured_snr_db: measured,
    };
    write(
        &out,
        "manifest.json",
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    eprintln!(
        "wrote {height}x{width} cube with {n} endmembers to {}",
        out.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, exec: ExecMode) -> Result<()> {
    let cube_path = cfg.require_input("cube", &cfg.cube)?;
    let out = cfg.output_dir()?;
    let mut config = cfg.train_config();
    config.exec = exec;
    config.validate()?;
    let cube = load_cube(&cube_path)?;
    let (model, mut report) = ldvae::train(&cube, &config)?;
    let ckpt = out.join("model.ckpt");
    write_checkpoint(&model, &ckpt)?;
    report.checkpoint_path = Some(ckpt.clone());
    write(&out, "training_log.csv", report.log_csv())?;
    if let (Some(first), Some(last)) = (report.epochs.first(), report.epochs.last()) {
        eprintln!(
            "trained {} epochs in {:.1}s; mean loss {:.6} -> {:.6}",
            report.epochs.len(),
            report.wall_clock_seconds,
            first.total,
            last.total
        );
    }
    eprintln!("checkpoint written to {}", ckpt.display());
    Ok(())
}

pub fn unmix(cfg: &RunConfig, exec: ExecMode) -> Result<()> {
    let ckpt = cfg.require_input("checkpoint", &cfg.checkpoint)?;
    let cube_path = cfg.require_input("cube", &cfg.cube)?;
    let out = cfg.output_dir()?;
    let model = load_model(&ckpt)?;
    let cube = load_cube(&cube_path)?;
    check_bands(&model, &cube)?;
    let estimates = estimate(&model, &cube, exec)?;
    let n = model.n_endmembers();
    for j in 0..n {
        let map: Vec<f64> = estimates.iter().skip(j).step_by(n).copied().collect();
        write_pgm(
            out.join(format!("abundance_{}.pgm", j + 1)),
            cube.width(),
            cube.height(),
            &map,
        )?;
    }
    write(
        &out,
        "abundances.csv",
        abundance_csv(cube.width(), &latent_names(&model), &estimates)?,
    )?;
    eprintln!("wrote {n} abundance maps to {}", out.display());
    Ok(())
}

fn estimate(model: &LdvaeModel, cube: &HsiCube, exec: ExecMode) -> Result<Vec<f64>> {
    let report = evaluate_with(model, cube, None, exec)?;
    Ok(report
        .estimates
        .expect("evaluation keeps estimates")
        .into_vec())
}

pub fn extract(cfg: &RunConfig) -> Result<()> {
    let ckpt = cfg.require_input("checkpoint", &cfg.checkpoint)?;
    let out = cfg.output_dir()?;
    let model = load_model(&ckpt)?;
    let endmembers = model.extract_endmembers()?;
    write(&out, "endmembers.csv", endmembers.to_csv())?;
    eprintln!(
        "wrote {} endmember spectra to {}",
        endmembers.len(),
        out.display()
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig, exec: ExecMode) -> Result<()> {
    let ckpt = cfg.require_input("checkpoint", &cfg.checkpoint)?;
    let cube_path = cfg.require_input("cube", &cfg.cube)?;
    let library_path = match &cfg.library {
        Some(_) => Some(cfg.require_input("library", &cfg.library)?),
        None => None,
    };
    let out = cfg.output_dir()?;
    let model = load_model(&ckpt)?;
    let cube = load_cube(&cube_path)?;
    check_bands(&model, &cube)?;
    let library = library_path.as_deref().map(load_library).transpose()?;
    let report = evaluate_with(&model, &cube, library.as_ref(), exec)?;

    write(&out, "summary.csv", report.summary_csv())?;
    write(&out, "per_pixel.csv", report.per_pixel_csv(cube.width()))?;
    if let Some(csv) = report.endmember_csv() {
        write(&out, "endmember_sad.csv", csv)?;
    }
    match report.rmse_csv() {
        Some(csv) => write(&out, "abundance_rmse.csv", csv)?,
        None => eprintln!("warning: cube has no ground truth; abundance RMSE omitted"),
    }
    write(
        &out,
        "report.json",
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    eprintln!(
        "reconstruction SAD mean {:.6}, MSE mean {:.6}",
        report.reconstruction_sad.mean, report.reconstruction_mse.mean
    );
    if let Some(e) = &report.endmembers {
        eprintln!("endmember SAD mean {:.6}", e.mean_sad);
    }
    if let Some(a) = &report.abundances {
        eprintln!("abundance RMSE {:.6}", a.overall_rmse);
    }
    Ok(())
}

pub fn reconstruct(cfg: &RunConfig, exec: ExecMode) -> Result<()> {
    let ckpt = cfg.require_input("checkpoint", &cfg.checkpoint)?;
    let cube_path = cfg.require_input("cube", &cfg.cube)?;
    let out = cfg.output_dir()?;
    let model = load_model(&ckpt)?;
    let cube = load_cube(&cube_path)?;
    check_bands(&model, &cube)?;
    let recon = model.reconstruct_batch(&cube.to_tensor())?;

    let mut csv = String::from("pixel,row,col");
    match &model.metadata.wavelengths {
        Some(w) => w.iter().for_each(|v| write!(csv, ",{v}").unwrap()),
        None => (1..=model.n_bands()).for_each(|b| write!(csv, ",band_{b}").unwrap()),
    }
    csv.push('\n');
    for (i, row) in recon.iter_rows().enumerate() {
        write!(csv, "{i},{},{}", i / cube.width(), i % cube.width()).unwrap();
        row.iter().for_each(|v| write!(csv, ",{v}").unwrap());
        csv.push('\n');
    }
    write(&out, "reconstruction.csv", csv)?;
    let report = evaluate_with(&model, &cube, None, exec)?;
    write(&out, "summary.csv", report.summary_csv())?;
    eprintln!(
        "reconstruction SAD mean {:.6}, MSE mean {:.6}",
        report.reconstruction_sad.mean, report.reconstruction_mse.mean
    );
    Ok(())
}
