//! JSON run configuration. Every key is optional; command-line flags win.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ldvae::{KlVariant, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Training, mirroring `TrainConfig`.
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub omega: Option<f64>,
    pub seed: Option<u64>,
    pub prior_alpha: Option<f64>,
    pub encoder_dims: Option<Vec<usize>>,
    pub decoder_dims: Option<Vec<usize>>,
    pub mc_samples: Option<usize>,
    pub shuffle: Option<bool>,
    pub kl_variant: Option<KlVariant>,
    pub n_endmembers: Option<usize>,
    pub class_weights: Option<Vec<f64>>,

    // Synthesis.
    pub size: Option<String>,
    pub snr_db: Option<Snr>,
    pub prior: Option<Vec<f64>>,
    pub pure: Option<bool>,
    pub synthetic_endmembers: Option<usize>,
    pub bands: Option<usize>,

    // Paths.
    pub library: Option<PathBuf>,
    pub cube: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Signal-to-noise ratio in dB; `inf` means noiseless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snr(pub f64);

impl std::str::FromStr for Snr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Snr(f64::INFINITY));
        }
        let v: f64 = t
            .parse()
            .map_err(|_| format!("bad SNR {s:?}: expected a number or `inf`"))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(format!("SNR must be positive, got {v}"));
        }
        Ok(Snr(v))
    }
}

impl Serialize for Snr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => v.to_string().parse(),
            Raw::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fields set in `flags` replace those here.
    pub fn overlay(mut self, flags: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if flags.$f.is_some() { self.$f = flags.$f; } )* };
        }
        take!(
            epochs,
            batch_size,
            learning_rate,
            omega,
            seed,
            prior_alpha,
            encoder_dims,
            decoder_dims,
            mc_samples,
            shuffle,
            kl_variant,
            n_endmembers,
            class_weights,
            size,
            snr_db,
            prior,
            pure,
            synthetic_endmembers,
            bands,
            library,
            cube,
            checkpoint,
            out
        );
        self
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            omega: self.omega.unwrap_or(d.omega),
            seed: self.seed.unwrap_or(d.seed),
            prior_alpha: self.prior_alpha.unwrap_or(d.prior_alpha),
            encoder_dims: self.encoder_dims.clone().unwrap_or(d.encoder_dims),
            decoder_dims: self.decoder_dims.clone().unwrap_or(d.decoder_dims),
            mc_samples: self.mc_samples.unwrap_or(d.mc_samples),
            shuffle: self.shuffle.unwrap_or(d.shuffle),
            kl_variant: self.kl_variant.unwrap_or(d.kl_variant),
            n_endmembers: self.n_endmembers.or(d.n_endmembers),
            class_weights: self.class_weights.clone().or(d.class_weights),
            exec: d.exec,
        }
    }

    pub fn require_input(&self, what: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        let Some(p) = value else {
            bail!("missing --{what}");
        };
        if !p.is_file() {
            bail!("{what} {} does not exist or is not a file", p.display());
        }
        Ok(p.clone())
    }

    /// The output directory, created if needed.
    pub fn output_dir(&self) -> Result<PathBuf> {
        let Some(dir) = &self.out else {
            bail!("missing --out");
        };
        if dir.exists() && !dir.is_dir() {
            bail!("output {} exists and is not a directory", dir.display());
        }
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(dir.clone())
    }
}

/// `HxW`, e.g. `32x32`.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("size {s:?} is not HxW"))?;
    let h: usize = h
        .trim()
        .parse()
        .with_context(|| format!("bad height in {s:?}"))?;
    let w: usize = w
        .trim()
        .parse()
        .with_context(|| format!("bad width in {s:?}"))?;
    if h == 0 || w == 0 {
        bail!("size {s:?} has a zero dimension");
    }
    Ok((h, w))
}
