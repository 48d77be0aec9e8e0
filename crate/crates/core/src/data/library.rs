use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Spectrum;
use crate::error::{Error, Result};
use crate::rng::{KeyedRng, Stream};
use crate::tensor::Tensor2;

const HEADER_KEY: &str = "wavelength_nm";

/// Named endmember spectra sharing one band grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberSet {
    names: Vec<String>,
    spectra: Vec<Spectrum>,
}

impl EndmemberSet {
    pub fn new(names: Vec<String>, spectra: Vec<Spectrum>) -> Result<Self> {
        if names.len() != spectra.len() {
            return Err(Error::shape(format!(
                "{} names for {} spectra",
                names.len(),
                spectra.len()
            )));
        }
        if spectra.is_empty() {
            return Err(Error::Data(
                "an endmember set needs at least one spectrum".into(),
            ));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Data(format!("duplicate endmember name {n:?}")));
            }
        }
        let k = spectra[0].bands();
        if let Some(s) = spectra.iter().find(|s| s.bands() != k) {
            return Err(Error::shape(format!(
                "endmember spectra disagree on band count: {k} vs {}",
                s.bands()
            )));
        }
        Ok(Self { names, spectra })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn spectra(&self) -> &[Spectrum] {
        &self.spectra
    }

    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    pub fn bands(&self) -> usize {
        self.spectra[0].bands()
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.spectra[0].wavelengths()
    }

    /// `n × K` matrix, one endmember per row.
    pub fn to_tensor(&self) -> Tensor2 {
        Tensor2::from_rows(&self.spectra).expect("endmember spectra share K")
    }

    /// The set in library CSV form. Without wavelengths, 1-based band
    /// indices fill the first column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HEADER_KEY);
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for b in 0..self.bands() {
            match self.wavelengths() {
                Some(w) => write!(out, "{}", w[b]).unwrap(),
                None => write!(out, "{}", b + 1).unwrap(),
            }
            for s in &self.spectra {
                write!(out, ",{}", s.values()[b]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub fn parse_spectral_library(path: impl AsRef<Path>) -> Result<EndmemberSet> {
    let text = fs::read_to_string(path)?;
    parse_spectral_library_str(&text)
}

/// Parses the library CSV format: a `wavelength_nm,<name>,...` header, one
/// row per wavelength, `#` comments.
///
/// Empty, `nan`, or negative (sentinel) cells are treated as missing and
/// filled by linear interpolation along wavelength from the record's valid
/// bands. Beyond a record's first or last valid band the nearest valid value
/// is held.
pub fn parse_spectral_library_str(text: &str) -> Result<EndmemberSet> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "library is empty".into(),
    })?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if !fields[0].eq_ignore_ascii_case(HEADER_KEY) {
        return Err(Error::Parse {
            line: header_line,
            message: format!(
                "header must start with `{HEADER_KEY}`, found {:?}",
                fields[0]
            ),
        });
    }
    let names: Vec<String> = fields[1..].iter().map(|s| s.to_string()).collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(Error::Parse {
            line: header_line,
            message: "header needs at least one non-empty endmember name".into(),
        });
    }

    let mut wavelengths: Vec<f64> = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for (line, row) in lines {
        let cells: Vec<&str> = row.split(',').map(str::trim).collect();
        if cells.len() != names.len() + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", names.len() + 1, cells.len()),
            });
        }
        let wl: f64 = cells[0].parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad wavelength {:?}", cells[0]),
        })?;
        if !wl.is_finite() || wavelengths.last().is_some_and(|&prev| wl <= prev) {
            return Err(Error::Parse {
                line,
                message: format!("wavelength {wl} is not strictly increasing"),
            });
        }
        wavelengths.push(wl);
        for (col, cell) in columns.iter_mut().zip(&cells[1..]) {
            let value = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                None
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad reflectance {cell:?}"),
                })?;
                (v.is_finite() && v >= 0.0).then_some(v)
            };
            col.push(value);
        }
    }

    let spectra = columns
        .iter()
        .zip(&names)
        .map(|(col, name)| {
            let values = fill_missing(&wavelengths, col).ok_or_else(|| {
                Error::Data(format!("endmember {name:?} has fewer than 2 valid bands"))
            })?;
            Spectrum::with_wavelengths(values, wavelengths.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    EndmemberSet::new(names, spectra)
}

fn fill_missing(grid: &[f64], values: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(f64, f64)> = grid
        .iter()
        .zip(values)
        .filter_map(|(&w, v)| v.map(|v| (w, v)))
        .collect();
    if known.len() < 2 {
        return None;
    }
    Some(
        grid.iter()
            .zip(values)
            .map(|(&w, v)| v.unwrap_or_else(|| interpolate(&known, w)))
            .collect(),
    )
}

/// Piecewise-linear interpolation through sorted `(x, y)` knots, clamped to
/// the end values.
pub(crate) fn interpolate(knots: &[(f64, f64)], x: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let hi = knots.partition_point(|&(kx, _)| kx < x);
    let (x0, y0) = knots[hi - 1];
    let (x1, y1) = knots[hi];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Smooth synthetic reflectance spectra on a 400–2500 nm grid: a sloped
/// continuum plus a few Gaussian absorption and reflectance features per
/// material. Deterministic in `seed`.
pub fn synthetic_library(n: usize, bands: usize, seed: u64) -> Result<EndmemberSet> {
    if bands < 2 {
        return Err(Error::Data(format!("need at least 2 bands, got {bands}")));
    }
    let rng = KeyedRng::new(seed, Stream::Generate).child(u64::MAX);
    let wavelengths: Vec<f64> = (0..bands)
        .map(|b| 400.0 + 2100.0 * b as f64 / (bands - 1) as f64)
        .collect();
    let mut names = Vec::with_capacity(n);
    let mut spectra = Vec::with_capacity(n);
    for j in 0..n {
        let u = |c: u64| rng.uniform(&[j as u64, c]);
        let base = 0.3 + 0.4 * u(0);
        let slope = 0.5 * (u(1) - 0.5);
        let features: Vec<(f64, f64, f64)> = (0..4)
            .map(|f| {
                let c = 2 + 3 * f as u64;
                let center = 450.0 + 2000.0 * u(c);
                let width = 80.0 + 250.0 * u(c + 1);
                let depth = (0.15 + 0.3 * u(c + 2)) * if f % 2 == 0 { -1.0 } else { 1.0 };
                (center, width, depth)
            })
            .collect();
        let values = wavelengths
            .iter()
            .map(|&w| {
                let t = (w - 400.0) / 2100.0;
                let mut v = base + slope * (t - 0.5);
                for &(c, s, d) in &features {
                    v += d * (-(w - c).powi(2) / (2.0 * s * s)).exp();
                }
                v.clamp(0.02, 0.98)
            })
            .collect();
        names.push(format!("material_{}", j + 1));
        spectra.push(Spectrum::with_wavelengths(values, wavelengths.clone())?);
    }
    EndmemberSet::new(names, spectra)
}
