//! Seeded mini-batch training with Adam.
//!
//! Every random choice (initial weights, shuffling, sampler uniforms) is a
//! keyed function of the seed and its position, so the trained model is
//! bit-identical for any thread count. Within a batch, rows are split into
//! fixed chunks of [`CHUNK_ROWS`]; each chunk gets its own tape and the chunk
//! gradients are summed in chunk order.

mod evaluate;

pub use evaluate::{evaluate, evaluate_with, AbundanceReport, EndmemberReport, EvaluationReport};

use std::path::PathBuf;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::HsiCube;
use crate::distributions::{DirichletParams, KlVariant};
use crate::error::{Error, Result};
use crate::exec::{map_slice, ExecMode};
use crate::model::{Architecture, Dense, LdvaeModel, LossBreakdown};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{KeyedRng, Stream};
use crate::tensor::{LayerSpec, Tensor2};

/// Rows per gradient chunk. Fixed so chunking never depends on threads.
pub const CHUNK_ROWS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub omega: f64,
    pub seed: u64,
    pub prior_alpha: f64,
    pub encoder_dims: Vec<usize>,
    pub decoder_dims: Vec<usize>,
    pub mc_samples: usize,
    pub shuffle: bool,
    pub kl_variant: KlVariant,
    /// Latent size when the cube carries no ground truth.
    pub n_endmembers: Option<usize>,
    /// Per-class resampling weights. When set, every epoch draws the
    /// training rows with replacement, each row weighted by the entry of its
    /// dominant ground-truth class.
    pub class_weights: Option<Vec<f64>>,
    #[serde(skip)]
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            omega: 1.0,
            seed: 0,
            prior_alpha: 1.0,
            encoder_dims: vec![512, 256],
            decoder_dims: vec![256, 512],
            mc_samples: 1,
            shuffle: true,
            kl_variant: KlVariant::Paper,
            n_endmembers: None,
            class_weights: None,
            exec: ExecMode::Sequential,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.prior_alpha > 0.0 && self.prior_alpha.is_finite()) {
            return fail(format!("prior_alpha must be > 0, got {}", self.prior_alpha));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return fail(format!("omega must be >= 0, got {}", self.omega));
        }
        if self.mc_samples == 0 {
            return fail("mc_samples must be >= 1".into());
        }
        if self
            .encoder_dims
            .iter()
            .chain(&self.decoder_dims)
            .any(|&d| d == 0)
        {
            return fail("hidden dimensions must be >= 1".into());
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || !w.iter().any(|&v| v > 0.0) {
                return fail("class_weights must be finite, non-negative, not all zero".into());
            }
        }
        if self.n_endmembers.is_some_and(|n| n < 2) {
            return fail("n_endmembers must be >= 2".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Flattened training pixels with optional abundance labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub x: Tensor2,
    pub z: Option<Tensor2>,
}

impl TrainingSet {
    pub fn from_cube(cube: &HsiCube) -> Self {
        Self {
            x: cube.to_tensor(),
            z: cube.ground_truth_tensor(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::shape(format!(
                "index {bad} out of {} rows",
                self.len()
            )));
        }
        Ok(Self {
            x: self.x.select_rows(indices),
            z: self.z.as_ref().map(|z| z.select_rows(indices)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss terms per epoch.
    pub epochs: Vec<LossBreakdown>,
    pub wall_clock_seconds: f64,
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainReport {
    /// `epoch,nll,kl,abundance_mse,total`, epochs numbered from 1.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,nll,kl,abundance_mse,total\n");
        for (e, l) in self.epochs.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e + 1,
                l.negative_log_likelihood,
                l.kl,
                l.abundance_mse,
                l.total
            ));
        }
        s
    }
}

/// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases. Layer
/// `l`, entry `i` is drawn from its own keyed counter.
pub fn init_parameters(specs: &[LayerSpec], seed: u64) -> Result<Vec<Dense>> {
    let rng = KeyedRng::new(seed, Stream::Init);
    specs
        .iter()
        .enumerate()
        .map(|(l, &spec)| {
            let limit = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
            let layer_rng = rng.child(l as u64);
            let data = (0..spec.input_dim * spec.output_dim)
                .map(|i| (2.0 * layer_rng.uniform(&[i as u64]) - 1.0) * limit)
                .collect();
            let weights = Tensor2::from_vec(spec.input_dim, spec.output_dim, data)?;
            Dense::new(spec, weights, Tensor2::zeros(1, spec.output_dim))
        })
        .collect()
}

/// A freshly initialised model. Encoder and decoder layers are numbered
/// consecutively for keying.
pub fn init_model(
    arch: &Architecture,
    prior: DirichletParams,
    omega: f64,
    kl_variant: KlVariant,
    seed: u64,
) -> Result<LdvaeModel> {
    let enc = arch.encoder_specs()?;
    let dec = arch.decoder_specs()?;
    let n_enc = enc.len();
    let mut layers = init_parameters(&[enc, dec].concat(), seed)?;
    let decoder = layers.split_off(n_enc);
    LdvaeModel::from_layers(layers, decoder, prior, omega, kl_variant)
}

/// `(train, held_out)` pixel indices: a seeded permutation of `0..n`, the
/// first `round(fraction·n)` going to training. Both lists are sorted.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::domain(format!(
            "split fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut KeyedRng::new(seed, Stream::Split).stream(&[n as u64]));
    let cut = (fraction * n as f64).round() as usize;
    let mut train = idx[..cut].to_vec();
    let mut held = idx[cut..].to_vec();
    train.sort_unstable();
    held.sort_unstable();
    Ok((train, held))
}

/// Trains on every pixel of `cube`. Names and wavelengths are copied into
/// the model metadata.
pub fn train(cube: &HsiCube, config: &TrainConfig) -> Result<(LdvaeModel, TrainReport)> {
    let (mut model, report) = train_set(&TrainingSet::from_cube(cube), config)?;
    model.metadata.endmember_names = cube.endmember_names().map(<[String]>::to_vec);
    model.metadata.wavelengths = cube.wavelengths().map(<[f64]>::to_vec);
    Ok((model, report))
}

pub fn train_set(set: &TrainingSet, config: &TrainConfig) -> Result<(LdvaeModel, TrainReport)> {
    config.validate()?;
    if set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let n = match (&set.z, config.n_endmembers) {
        (Some(z), Some(n)) if z.cols() != n => {
            return Err(Error::Config(format!(
                "n_endmembers = {n} but labels have {} components",
                z.cols()
            )))
        }
        (Some(z), _) => z.cols(),
        (None, Some(n)) => n,
        (None, None) => {
            return Err(Error::Config(
                "unlabelled training data needs n_endmembers".into(),
            ))
        }
    };
    if set.z.is_none() && config.omega > 0.0 {
        return Err(Error::Config(
            "training data has no abundance labels; set omega to 0".into(),
        ));
    }
    if n < 2 {
        return Err(Error::Config("at least 2 endmembers are required".into()));
    }
    let class_weights = match &config.class_weights {
        None => None,
        Some(w) => {
            let z = set
                .z
                .as_ref()
                .ok_or_else(|| Error::Config("class_weights need abundance labels".into()))?;
            if w.len() != n {
                return Err(Error::Config(format!(
                    "{} class weights for {n} endmembers",
                    w.len()
                )));
            }
            let row_weights: Vec<f64> = z
                .iter_rows()
                .map(|r| w[crate::distributions::argmax(r)])
                .collect();
            Some(WeightedIndex::new(&row_weights).map_err(|e| {
                Error::Config(format!("class weights select no training rows: {e}"))
            })?)
        }
    };

    let arch = Architecture {
        n_bands: set.x.cols(),
        n_endmembers: n,
        encoder_hidden: config.encoder_dims.clone(),
        decoder_hidden: config.decoder_dims.clone(),
    };
    let prior = DirichletParams::symmetric(n, config.prior_alpha)?;
    let mut model = init_model(&arch, prior, config.omega, config.kl_variant, config.seed)?;
    model.metadata.seed = Some(config.seed);
    let mut adam = AdamState::new(config.adam(), model.parameters());

    let start = Instant::now();
    let uniform_rng = KeyedRng::new(config.seed, Stream::Uniform);
    let shuffle_rng = KeyedRng::new(config.seed, Stream::Shuffle);
    let rows = set.len();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let order: Vec<usize> = match &class_weights {
            Some(dist) => {
                let mut s = shuffle_rng.stream(&[epoch as u64, 1]);
                (0..rows).map(|_| dist.sample(&mut s)).collect()
            }
            None => {
                let mut idx: Vec<usize> = (0..rows).collect();
                if config.shuffle {
                    idx.shuffle(&mut shuffle_rng.stream(&[epoch as u64]));
                }
                idx
            }
        };
        let mut epoch_sum = LossBreakdown::default();
        for (batch, batch_idx) in order.chunks(config.batch_size).enumerate() {
            let weight = 1.0 / batch_idx.len() as f64;
            let chunks: Vec<&[usize]> = batch_idx.chunks(CHUNK_ROWS).collect();
            let results = map_slice(config.exec, &chunks, |chunk| {
                let x = set.x.select_rows(chunk);
                let z = set.z.as_ref().map(|z| z.select_rows(chunk));
                let uniforms = (0..config.mc_samples)
                    .map(|s| {
                        let data = chunk
                            .iter()
                            .flat_map(|&p| {
                                (0..n).map(move |k| {
                                    uniform_rng.uniform(&[
                                        epoch as u64,
                                        batch as u64,
                                        p as u64,
                                        s as u64,
                                        k as u64,
                                    ])
                                })
                            })
                            .collect();
                        Tensor2::from_vec(chunk.len(), n, data)
                    })
                    .collect::<Result<Vec<_>>>()?;
                model.batch_gradients(&x, &uniforms, z.as_ref(), weight)
            });
            let mut sums = LossBreakdown::default();
            let mut grads: Option<Vec<Tensor2>> = None;
            for r in results {
                let (l, g) = r.map_err(|e| divergence_or(e, epoch, batch))?;
                sums.accumulate(&l);
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.add_assign(b)?;
                        }
                    }
                }
            }
            let grads = grads.expect("non-empty batch");
            if !sums.is_finite() || !grads.iter().all(Tensor2::is_finite) {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    batch: batch + 1,
                    detail: format!("non-finite loss or gradient (total = {})", sums.total),
                });
            }
            adam.update(&mut model.parameters_mut(), &grads)?;
            epoch_sum.accumulate(&sums);
        }
        epochs.push(epoch_sum.scaled(1.0 / rows as f64));
    }

    Ok((
        model,
        TrainReport {
            epochs,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            checkpoint_path: None,
        },
    ))
}

/// Numeric failures inside a step are reported as divergence at that step.
fn divergence_or(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Domain(d) | Error::DegenerateSample(d) => Error::Divergence {
            epoch: epoch + 1,
            batch: batch + 1,
            detail: d,
        },
        other => other,
    }
}
