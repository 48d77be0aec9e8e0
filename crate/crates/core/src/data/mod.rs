//! Spectra, spectral libraries, hyperspectral cubes and the synthetic cube
//! generator.

mod cube;
mod export;
mod library;
mod synth;

pub use cube::{read_cube, write_cube, HsiCube};
pub use export::{abundance_csv, pgm_bytes, write_abundance_csv, write_pgm};
pub use library::{
    parse_spectral_library, parse_spectral_library_str, synthetic_library, EndmemberSet,
};
pub use synth::{
    add_noise, add_noise_with, generate_cube, generate_cube_with, generate_pure_cube,
    measured_snr_db, normalize_cube,
};

use crate::error::{Error, Result};

/// A reflectance spectrum over `K ≥ 2` bands.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
    wavelengths: Option<Vec<f64>>,
}

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::validate(&values)?;
        Ok(Self {
            values,
            wavelengths: None,
        })
    }

    pub fn with_wavelengths(values: Vec<f64>, wavelengths: Vec<f64>) -> Result<Self> {
        Self::validate(&values)?;
        if wavelengths.len() != values.len() {
            return Err(Error::shape(format!(
                "{} wavelengths for {} bands",
                wavelengths.len(),
                values.len()
            )));
        }
        Ok(Self {
            values,
            wavelengths: Some(wavelengths),
        })
    }

    fn validate(values: &[f64]) -> Result<()> {
        if values.len() < 2 {
            return Err(Error::Data(format!(
                "a spectrum needs at least 2 bands, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("spectrum contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn bands(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for Spectrum {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}
