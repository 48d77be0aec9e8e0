//! In-memory cube and its binary file format.
//!
//! Layout: the 8-byte magic `HSICUBE1`, a little-endian `u64` header length,
//! the JSON header, `height·width·bands` little-endian `f32` reflectances in
//! band-interleaved-by-pixel order, then (if `has_ground_truth`)
//! `height·width·endmembers` little-endian `f64` abundances, pixel-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::SIMPLEX_TOL;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

pub const CUBE_MAGIC: &[u8; 8] = b"HSICUBE1";

#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    pixels: Vec<f32>,
    ground_truth: Option<Vec<f64>>,
    endmember_names: Option<Vec<String>>,
    wavelengths: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CubeHeader {
    height: usize,
    width: usize,
    bands: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
    has_ground_truth: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    endmembers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wavelengths: Option<Vec<f64>>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, pixels: Vec<f32>) -> Result<Self> {
        let expected = checked_volume(height, width, bands)?;
        if pixels.len() != expected {
            return Err(Error::shape(format!(
                "{} reflectance values for a {height}x{width}x{bands} cube",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("cube contains non-finite reflectance".into()));
        }
        Ok(Self {
            height,
            width,
            bands,
            pixels,
            ground_truth: None,
            endmember_names: None,
            wavelengths: None,
        })
    }

    /// Attaches per-pixel abundances (`pixels × n`, pixel-major). Every row
    /// must satisfy the simplex constraints.
    pub fn with_ground_truth(mut self, abundances: Vec<f64>, n: usize) -> Result<Self> {
        if n == 0 || abundances.len() != self.pixel_count() * n {
            return Err(Error::shape(format!(
                "{} abundances for {} pixels of {n} endmembers",
                abundances.len(),
                self.pixel_count()
            )));
        }
        for (i, row) in abundances.chunks_exact(n).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&a| !(a >= 0.0)) || (total - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Data(format!(
                    "pixel {i} abundances {row:?} violate the simplex constraints"
                )));
            }
        }
        if let Some(names) = &self.endmember_names {
            if names.len() != n {
                return Err(Error::shape(format!(
                    "{} names for {n} endmembers",
                    names.len()
                )));
            }
        }
        self.ground_truth = Some(abundances);
        Ok(self)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if let Some(n) = self.endmember_count() {
            if names.len() != n {
                return Err(Error::shape(format!(
                    "{} names for {n} endmembers",
                    names.len()
                )));
            }
        }
        self.endmember_names = Some(names);
        Ok(self)
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != self.bands {
            return Err(Error::shape(format!(
                "{} wavelengths for {} bands",
                wavelengths.len(),
                self.bands
            )));
        }
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, i: usize) -> &[f32] {
        &self.pixels[i * self.bands..(i + 1) * self.bands]
    }

    pub fn pixel_f64(&self, i: usize) -> Vec<f64> {
        self.pixel(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// All pixels as an `N × K` matrix.
    pub fn to_tensor(&self) -> Tensor2 {
        let data = self.pixels.iter().map(|&v| f64::from(v)).collect();
        Tensor2::from_vec(self.pixel_count(), self.bands, data).expect("cube volume")
    }

    pub fn ground_truth(&self) -> Option<&[f64]> {
        self.ground_truth.as_deref()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.ground_truth.is_some()
    }

    pub fn endmember_count(&self) -> Option<usize> {
        self.ground_truth
            .as_ref()
            .map(|gt| gt.len() / self.pixel_count().max(1))
    }

    pub fn abundances(&self, i: usize) -> Option<&[f64]> {
        let n = self.endmember_count()?;
        self.ground_truth.as_ref().map(|gt| &gt[i * n..(i + 1) * n])
    }

    /// Ground truth as an `N × n` matrix.
    pub fn ground_truth_tensor(&self) -> Option<Tensor2> {
        let n = self.endmember_count()?;
        let gt = self.ground_truth.clone()?;
        Tensor2::from_vec(self.pixel_count(), n, gt).ok()
    }

    pub fn endmember_names(&self) -> Option<&[String]> {
        self.endmember_names.as_deref()
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    /// Same metadata and ground truth, new reflectances.
    pub(crate) fn with_pixels(&self, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Self {
            pixels,
            ..self.clone()
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CubeHeader {
            height: self.height,
            width: self.width,
            bands: self.bands,
            names: self.endmember_names.clone(),
            has_ground_truth: self.ground_truth.is_some(),
            endmembers: self.endmember_count(),
            wavelengths: self.wavelengths.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let gt_len = self.ground_truth.as_ref().map_or(0, |g| g.len() * 8);
        let mut out = Vec::with_capacity(16 + json.len() + self.pixels.len() * 4 + gt_len);
        out.extend_from_slice(CUBE_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.pixels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(gt) = &self.ground_truth {
            for v in gt {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CUBE_MAGIC {
            return Err(Error::Format("not an HSICUBE1 file (bad magic)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|l| l.checked_add(16))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Format("truncated cube header".into()))?;
        let header: CubeHeader = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::Format(format!("bad cube header: {e}")))?;

        let volume = checked_volume(header.height, header.width, header.bands)?;
        let pixel_bytes = volume
            .checked_mul(4)
            .ok_or_else(|| Error::Format("cube dimensions overflow".into()))?;
        let n = match (header.has_ground_truth, header.endmembers, &header.names) {
            (false, _, _) => 0,
            (true, Some(n), _) => n,
            (true, None, Some(names)) => names.len(),
            (true, None, None) => {
                return Err(Error::Format(
                    "ground truth present but endmember count unknown".into(),
                ))
            }
        };
        let gt_bytes = (header.height * header.width)
            .checked_mul(n)
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| Error::Format("ground-truth dimensions overflow".into()))?;
        let expected = pixel_bytes
            .checked_add(gt_bytes)
            .ok_or_else(|| Error::Format("cube dimensions overflow".into()))?;
        let payload = &bytes[header_end..];
        if payload.len() < expected {
            return Err(Error::Format(format!(
                "truncated payload: header implies {expected} bytes, found {}",
                payload.len()
            )));
        }
        if payload.len() > expected {
            return Err(Error::Format(format!(
                "{} unexpected trailing bytes",
                payload.len() - expected
            )));
        }

        let pixels = payload[..pixel_bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut cube = HsiCube::new(header.height, header.width, header.bands, pixels)?;
        if header.has_ground_truth {
            let gt = payload[pixel_bytes..]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cube = cube.with_ground_truth(gt, n)?;
        }
        if let Some(names) = header.names {
            cube = cube.with_names(names)?;
        }
        if let Some(w) = header.wavelengths {
            cube = cube.with_wavelengths(w)?;
        }
        Ok(cube)
    }
}

fn checked_volume(height: usize, width: usize, bands: usize) -> Result<usize> {
    height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(bands))
        .ok_or_else(|| Error::Format(format!("cube dimensions {height}x{width}x{bands} overflow")))
}

pub fn write_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, cube.to_bytes())?;
    Ok(())
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    HsiCube::from_bytes(&fs::read(path)?)
}
