//! Synthetic cubes from the linear mixing model, and SNR-referenced noise.

use rand_distr::{Distribution, Gamma, Normal};

use crate::data::{EndmemberSet, HsiCube};
use crate::error::{Error, Result};
use crate::exec::{map_range, ExecMode};
use crate::rng::{KeyedRng, Stream};

/// A `height × width` cube whose pixel `i` is `Σ_j a_ij e_j` with
/// `a_i ~ Dirichlet(prior)` drawn exactly via normalised Gamma variates.
///
/// `prior` has one concentration per library endmember. A one-endmember
/// library is allowed: every abundance is then 1.
pub fn generate_cube(
    library: &EndmemberSet,
    height: usize,
    width: usize,
    prior: &[f64],
    seed: u64,
) -> Result<HsiCube> {
    generate_cube_with(library, height, width, prior, seed, ExecMode::Parallel)
}

pub fn generate_cube_with(
    library: &EndmemberSet,
    height: usize,
    width: usize,
    prior: &[f64],
    seed: u64,
    exec: ExecMode,
) -> Result<HsiCube> {
    let n = library.len();
    if prior.len() != n {
        return Err(Error::shape(format!(
            "prior has {} components for {n} endmembers",
            prior.len()
        )));
    }
    if prior.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::domain("prior concentrations must be positive"));
    }
    let gammas = prior
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|e| Error::domain(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let rng = KeyedRng::new(seed, Stream::Generate);
    let abundances = map_range(exec, height * width, |i| {
        let mut stream = rng.stream(&[i as u64]);
        let mut draws: Vec<f64> = gammas.iter().map(|g| g.sample(&mut stream)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            draws.iter_mut().for_each(|d| *d /= total);
        } else {
            // Every Gamma variate underflowed (tiny concentrations): fall back
            // to a vertex chosen by the same stream.
            let j = (rng.uniform(&[i as u64, 1]) * n as f64) as usize;
            draws = one_hot(n, j.min(n - 1));
        }
        draws
    });
    mix(library, height, width, abundances.concat(), exec)
}

/// A cube of pure pixels: each pixel is one library endmember chosen
/// uniformly at random, with a one-hot ground truth.
pub fn generate_pure_cube(
    library: &EndmemberSet,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<HsiCube> {
    let n = library.len();
    let rng = KeyedRng::new(seed, Stream::Generate).child(0x7075_7265);
    let abundances: Vec<f64> = (0..height * width)
        .flat_map(|i| {
            let j = ((rng.uniform(&[i as u64]) * n as f64) as usize).min(n - 1);
            one_hot(n, j)
        })
        .collect();
    mix(library, height, width, abundances, ExecMode::Sequential)
}

fn one_hot(n: usize, j: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[j] = 1.0;
    v
}

fn mix(
    library: &EndmemberSet,
    height: usize,
    width: usize,
    abundances: Vec<f64>,
    exec: ExecMode,
) -> Result<HsiCube> {
    let n = library.len();
    let k = library.bands();
    let spectra = library.spectra();
    let pixels: Vec<f32> = map_range(exec, height * width, |i| {
        let a = &abundances[i * n..(i + 1) * n];
        (0..k)
            .map(|b| {
                a.iter()
                    .zip(spectra)
                    .map(|(aj, e)| aj * e.values()[b])
                    .sum::<f64>() as f32
            })
            .collect::<Vec<f32>>()
    })
    .concat();
    let mut cube = HsiCube::new(height, width, k, pixels)?
        .with_ground_truth(abundances, n)?
        .with_names(library.names().to_vec())?;
    if let Some(w) = library.wavelengths() {
        cube = cube.with_wavelengths(w.to_vec())?;
    }
    Ok(cube)
}

fn signal_power(cube: &HsiCube) -> f64 {
    let px = cube.pixels();
    px.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / px.len().max(1) as f64
}

/// Adds i.i.d. zero-mean Gaussian noise of variance
/// `mean(x²) / 10^(snr_db/10)`, the mean taken over the whole cube. An
/// infinite `snr_db` returns an unchanged copy. Ground truth is untouched.
pub fn add_noise(cube: &HsiCube, snr_db: f64, seed: u64) -> Result<HsiCube> {
    add_noise_with(cube, snr_db, seed, ExecMode::Parallel)
}

pub fn add_noise_with(cube: &HsiCube, snr_db: f64, seed: u64, exec: ExecMode) -> Result<HsiCube> {
    if snr_db == f64::INFINITY {
        return Ok(cube.clone());
    }
    if !(snr_db > 0.0 && snr_db.is_finite()) {
        return Err(Error::domain(format!(
            "SNR must be positive or infinite, got {snr_db}"
        )));
    }
    let sigma = (signal_power(cube) / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::domain(e.to_string()))?;
    let rng = KeyedRng::new(seed, Stream::Noise);
    let k = cube.bands();
    let pixels = map_range(exec, cube.pixel_count(), |i| {
        let mut stream = rng.stream(&[i as u64]);
        cube.pixel(i)
            .iter()
            .map(|&v| (f64::from(v) + normal.sample(&mut stream)) as f32)
            .collect::<Vec<f32>>()
    })
    .concat();
    debug_assert_eq!(pixels.len(), cube.pixel_count() * k);
    Ok(cube.with_pixels(pixels))
}

/// `10·log₁₀(signal power / residual power)` of `noisy` against `clean`.
pub fn measured_snr_db(clean: &HsiCube, noisy: &HsiCube) -> Result<f64> {
    if clean.pixels().len() != noisy.pixels().len() {
        return Err(Error::shape("cubes differ in size"));
    }
    let residual: f64 = clean
        .pixels()
        .iter()
        .zip(noisy.pixels())
        .map(|(&a, &b)| (f64::from(b) - f64::from(a)).powi(2))
        .sum::<f64>()
        / clean.pixels().len().max(1) as f64;
    Ok(10.0 * (signal_power(clean) / residual).log10())
}

/// Divides every reflectance by the cube-wide maximum. Returns the scaled
/// cube and the divisor.
pub fn normalize_cube(cube: &HsiCube) -> Result<(HsiCube, f64)> {
    let max = cube
        .pixels()
        .iter()
        .fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    if !(max > 0.0) {
        return Err(Error::Data(format!(
            "cannot normalise a cube whose maximum is {max}"
        )));
    }
    let scale = f64::from(max);
    let pixels = cube
        .pixels()
        .iter()
        .map(|&v| (f64::from(v) / scale) as f32)
        .collect();
    Ok((cube.with_pixels(pixels), scale))
}
