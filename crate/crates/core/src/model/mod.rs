//! The latent Dirichlet variational autoencoder.
//!
//! Encoder: spectrum → concentration `α̂` (positive final activation plus a
//! small floor). A reparameterised Dirichlet draw `ẑ` feeds the decoder,
//! which outputs the mean and log-variance of a diagonal Gaussian over the
//! bands. Training minimises
//! `−log p(x | ẑ) + KL(α̂ ‖ α_prior) + ω·MSE(z_true, ẑ)`.
//!
//! Inference is deterministic: abundances are the Dirichlet mean
//! `α̂ / Σα̂`, and endmembers are the decoder means at one-hot abundances.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{EndmemberSet, Spectrum};
use crate::distributions::{
    self, clamped_log_var, diag_gaussian_log_likelihood, dirichlet_kl, sample_dirichlet,
    AbundanceVector, DiagGaussian, DirichletParams, KlVariant,
};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Activation, LayerSpec, Tensor2};

/// Added to the encoder's positive output so `α̂ ≥ ALPHA_FLOOR`.
pub const ALPHA_FLOOR: f64 = 1e-6;
/// Simplex tolerance accepted by [`LdvaeModel::decode`].
pub const DECODE_SIMPLEX_TOL: f64 = 1e-4;

/// A fully connected layer with its parameters. Weights are
/// `input_dim × output_dim`, bias is `1 × output_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub spec: LayerSpec,
    pub weights: Tensor2,
    pub bias: Tensor2,
}

impl Dense {
    pub fn new(spec: LayerSpec, weights: Tensor2, bias: Tensor2) -> Result<Self> {
        weights.expect_shape((spec.input_dim, spec.output_dim), "layer weights")?;
        bias.expect_shape((1, spec.output_dim), "layer bias")?;
        Ok(Self {
            spec,
            weights,
            bias,
        })
    }

    /// Forward pass without recording.
    pub fn forward(&self, input: &Tensor2) -> Result<Tensor2> {
        let mut out = matmul(input, &self.weights)?;
        let act = self.spec.activation;
        let b = self.bias.data();
        for r in 0..out.rows() {
            for (o, bj) in out.row_slice_mut(r).iter_mut().zip(b) {
                *o = act.apply(*o + bj);
            }
        }
        Ok(out)
    }
}

fn forward_chain(layers: &[Dense], input: &Tensor2) -> Result<Tensor2> {
    let mut h = layers[0].forward(input)?;
    for layer in &layers[1..] {
        h = layer.forward(&h)?;
    }
    Ok(h)
}

/// Layer sizes of the two networks; hidden dims only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_bands: usize,
    pub n_endmembers: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
}

impl Architecture {
    pub fn encoder_specs(&self) -> Result<Vec<LayerSpec>> {
        let mut dims = vec![self.n_bands];
        dims.extend(&self.encoder_hidden);
        dims.push(self.n_endmembers);
        crate::tensor::chain(&dims, Activation::Relu, Activation::Softplus)
    }

    pub fn decoder_specs(&self) -> Result<Vec<LayerSpec>> {
        let mut dims = vec![self.n_endmembers];
        dims.extend(&self.decoder_hidden);
        dims.push(2 * self.n_bands);
        crate::tensor::chain(&dims, Activation::Relu, Activation::Identity)
    }
}

/// Descriptive fields carried into checkpoints and exports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endmember_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelengths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Loss terms. Within one breakdown, `total = negative_log_likelihood + kl
/// + ω·abundance_mse`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub negative_log_likelihood: f64,
    pub kl: f64,
    /// Before weighting by ω.
    pub abundance_mse: f64,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.negative_log_likelihood += other.negative_log_likelihood;
        self.kl += other.kl;
        self.abundance_mse += other.abundance_mse;
    }

    pub fn scaled(&self, factor: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.total * factor,
            negative_log_likelihood: self.negative_log_likelihood * factor,
            kl: self.kl * factor,
            abundance_mse: self.abundance_mse * factor,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.negative_log_likelihood.is_finite()
            && self.kl.is_finite()
            && self.abundance_mse.is_finite()
    }

    /// Residual of the sum invariant for a given ω.
    pub fn sum_residual(&self, omega: f64) -> f64 {
        (self.total - (self.negative_log_likelihood + self.kl + omega * self.abundance_mse)).abs()
    }
}

/// Result of one differentiable forward pass on a single spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub alpha: DirichletParams,
    pub z: AbundanceVector,
    pub decoded: DiagGaussian,
}

/// Tape handles for a batch loss. Each is a `rows × 1` column.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub alpha: Var,
    pub nll: Var,
    pub kl: Var,
    pub abundance_mse: Option<Var>,
    pub total: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdvaeModel {
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
    n_endmembers: usize,
    n_bands: usize,
    prior: DirichletParams,
    omega: f64,
    kl_variant: KlVariant,
    pub metadata: ModelMetadata,
}

impl LdvaeModel {
    pub fn from_layers(
        encoder: Vec<Dense>,
        decoder: Vec<Dense>,
        prior: DirichletParams,
        omega: f64,
        kl_variant: KlVariant,
    ) -> Result<Self> {
        let (Some(enc_first), Some(enc_last)) = (encoder.first(), encoder.last()) else {
            return Err(Error::shape("encoder has no layers"));
        };
        let (Some(dec_first), Some(dec_last)) = (decoder.first(), decoder.last()) else {
            return Err(Error::shape("decoder has no layers"));
        };
        let n_bands = enc_first.spec.input_dim;
        let n_endmembers = enc_last.spec.output_dim;
        for net in [&encoder, &decoder] {
            for w in net.windows(2) {
                if w[0].spec.output_dim != w[1].spec.input_dim {
                    return Err(Error::shape(format!(
                        "layer output {} feeds input {}",
                        w[0].spec.output_dim, w[1].spec.input_dim
                    )));
                }
            }
        }
        if !enc_last.spec.activation.is_positive() {
            return Err(Error::shape(
                "encoder output activation must be strictly positive (softplus or exp)",
            ));
        }
        if dec_first.spec.input_dim != n_endmembers {
            return Err(Error::shape(format!(
                "decoder input {} != {n_endmembers} endmembers",
                dec_first.spec.input_dim
            )));
        }
        if dec_last.spec.output_dim != 2 * n_bands {
            return Err(Error::shape(format!(
                "decoder output {} != 2 x {n_bands} bands",
                dec_last.spec.output_dim
            )));
        }
        if prior.len() != n_endmembers {
            return Err(Error::shape(format!(
                "prior has {} components for {n_endmembers} endmembers",
                prior.len()
            )));
        }
        if !(omega >= 0.0 && omega.is_finite()) {
            return Err(Error::Config(format!(
                "omega must be finite and >= 0, got {omega}"
            )));
        }
        Ok(Self {
            encoder,
            decoder,
            n_endmembers,
            n_bands,
            prior,
            omega,
            kl_variant,
            metadata: ModelMetadata::default(),
        })
    }

    pub fn n_endmembers(&self) -> usize {
        self.n_endmembers
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn prior(&self) -> &DirichletParams {
        &self.prior
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn kl_variant(&self) -> KlVariant {
        self.kl_variant
    }

    pub fn encoder(&self) -> &[Dense] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[Dense] {
        &self.decoder
    }

    /// Encoder then decoder parameters, weights before bias per layer.
    pub fn parameters(&self) -> Vec<&Tensor2> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor2> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    fn check_bands(&self, k: usize) -> Result<()> {
        if k != self.n_bands {
            return Err(Error::shape(format!(
                "spectrum has {k} bands, model expects {}",
                self.n_bands
            )));
        }
        Ok(())
    }

    // -----------------------------------------------------------------------
    // Deterministic evaluation
    // -----------------------------------------------------------------------

    /// `α̂` for every row of `x` (`N × K` → `N × n`).
    pub fn encode_batch(&self, x: &Tensor2) -> Result<Tensor2> {
        self.check_bands(x.cols())?;
        Ok(forward_chain(&self.encoder, x)?.map(|a| a + ALPHA_FLOOR))
    }

    /// Raw decoder output (`N × 2K`: means then unclamped log-variances).
    pub fn decode_batch(&self, z: &Tensor2) -> Result<Tensor2> {
        if z.cols() != self.n_endmembers {
            return Err(Error::shape(format!(
                "abundances have {} components, model has {}",
                z.cols(),
                self.n_endmembers
            )));
        }
        forward_chain(&self.decoder, z)
    }

    /// Dirichlet means `α̂ / Σα̂` for every row.
    pub fn estimate_batch(&self, x: &Tensor2) -> Result<Tensor2> {
        let mut alpha = self.encode_batch(x)?;
        for r in 0..alpha.rows() {
            let row = alpha.row_slice_mut(r);
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|a| *a /= total);
        }
        Ok(alpha)
    }

    /// Deterministic reconstructions `μ(estimate(x))` for every row.
    pub fn reconstruct_batch(&self, x: &Tensor2) -> Result<Tensor2> {
        let decoded = self.decode_batch(&self.estimate_batch(x)?)?;
        let k = self.n_bands;
        let rows: Vec<&[f64]> = decoded.iter_rows().map(|r| &r[..k]).collect();
        Tensor2::from_rows(&rows)
    }

    pub fn encode(&self, x: &[f64]) -> Result<DirichletParams> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("spectrum contains non-finite values"));
        }
        let alpha = self.encode_batch(&Tensor2::row(x))?;
        DirichletParams::new(alpha.into_vec())
    }

    pub fn decode(&self, z: &[f64]) -> Result<DiagGaussian> {
        AbundanceVector::with_tolerance(z.to_vec(), DECODE_SIMPLEX_TOL)?;
        let out = self.decode_batch(&Tensor2::row(z))?.into_vec();
        let (mu, log_var) = out.split_at(self.n_bands);
        DiagGaussian::new(mu.to_vec(), log_var.to_vec())
    }

    pub fn estimate_abundances(&self, x: &[f64]) -> Result<AbundanceVector> {
        Ok(self.encode(x)?.mean())
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Spectrum> {
        let z = self.estimate_abundances(x)?;
        let mu = self.decode(z.as_slice())?.mu;
        match &self.metadata.wavelengths {
            Some(w) => Spectrum::with_wavelengths(mu, w.clone()),
            None => Spectrum::new(mu),
        }
    }

    /// Decoder means at each one-hot abundance vector.
    pub fn extract_endmembers(&self) -> Result<EndmemberSet> {
        let names = match &self.metadata.endmember_names {
            Some(n) if n.len() == self.n_endmembers => n.clone(),
            _ => (1..=self.n_endmembers)
                .map(|j| format!("endmember_{j}"))
                .collect(),
        };
        let spectra = (0..self.n_endmembers)
            .map(|j| {
                let mu = self
                    .decode(AbundanceVector::one_hot(self.n_endmembers, j).as_slice())?
                    .mu;
                match &self.metadata.wavelengths {
                    Some(w) => Spectrum::with_wavelengths(mu, w.clone()),
                    None => Spectrum::new(mu),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        EndmemberSet::new(names, spectra)
    }

    /// One sampled pass: encode, draw `ẑ` with the given uniforms, decode.
    pub fn forward(&self, x: &[f64], uniforms: &[f64]) -> Result<ForwardOutput> {
        if uniforms.len() != self.n_endmembers {
            return Err(Error::shape(format!(
                "{} uniforms for {} endmembers",
                uniforms.len(),
                self.n_endmembers
            )));
        }
        let alpha = self.encode(x)?;
        let z = sample_dirichlet(&alpha, uniforms)?;
        let decoded = self.decode(z.as_slice())?;
        Ok(ForwardOutput { alpha, z, decoded })
    }

    /// Loss terms for one spectrum from a completed forward pass.
    pub fn loss(
        &self,
        x: &[f64],
        outputs: &ForwardOutput,
        z_true: Option<&AbundanceVector>,
    ) -> Result<LossBreakdown> {
        self.check_bands(x.len())?;
        let nll = -diag_gaussian_log_likelihood(x, &outputs.decoded)?;
        let kl = dirichlet_kl(&outputs.alpha, &self.prior, self.kl_variant)?;
        let mse = match z_true {
            None => 0.0,
            Some(t) => {
                if t.len() != self.n_endmembers {
                    return Err(Error::shape(format!(
                        "true abundances have {} components, model has {}",
                        t.len(),
                        self.n_endmembers
                    )));
                }
                crate::metrics::spectrum_mse(t.as_slice(), outputs.z.as_slice())?
            }
        };
        Ok(LossBreakdown {
            total: nll + kl + self.omega * mse,
            negative_log_likelihood: nll,
            kl,
            abundance_mse: mse,
        })
    }

    // -----------------------------------------------------------------------
    // Differentiable batch loss
    // -----------------------------------------------------------------------

    /// Registers every parameter on `tape`, in [`parameters`](Self::parameters)
    /// order.
    fn register<'a>(&'a self, tape: &mut Tape<'a>) -> (Vec<(Var, Var)>, Vec<(Var, Var)>) {
        let mut reg = |layers: &'a [Dense]| -> Vec<(Var, Var)> {
            layers
                .iter()
                .map(|l| (tape.param(&l.weights), tape.param(&l.bias)))
                .collect()
        };
        let enc = reg(&self.encoder);
        let dec = reg(&self.decoder);
        (enc, dec)
    }

    fn record_chain(
        tape: &mut Tape<'_>,
        layers: &[Dense],
        vars: &[(Var, Var)],
        input: Var,
    ) -> Result<Var> {
        let mut h = input;
        for (layer, &(w, b)) in layers.iter().zip(vars) {
            let a = tape.affine(h, w, b)?;
            h = tape.activation(a, layer.spec.activation);
        }
        Ok(h)
    }

    /// Records the loss for a batch `x` (`rows × K`). `uniforms` holds one
    /// `rows × n` matrix per Monte-Carlo sample; terms depending on the
    /// sample are averaged over samples. Per row:
    /// `total = nll + kl + ω·mse`.
    pub fn record_loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: &Tensor2,
        uniforms: &[Tensor2],
        z_true: Option<&Tensor2>,
    ) -> Result<LossVars> {
        self.check_bands(x.cols())?;
        if uniforms.is_empty() {
            return Err(Error::Config(
                "at least one Monte-Carlo sample is required".into(),
            ));
        }
        if let Some(t) = z_true {
            t.expect_shape((x.rows(), self.n_endmembers), "true abundances")?;
        }
        let (enc, dec) = self.register(tape);
        let xv = tape.input(x.clone());
        let pos = Self::record_chain(tape, &self.encoder, &enc, xv)?;
        let alpha = tape.add_scalar(pos, ALPHA_FLOOR);
        let kl = distributions::record_kl(tape, alpha, &self.prior, self.kl_variant)?;

        let inv_s = 1.0 / uniforms.len() as f64;
        let mut nll_acc: Option<Var> = None;
        let mut mse_acc: Option<Var> = None;
        for u in uniforms {
            let z = distributions::record_sample(tape, alpha, u)?;
            let decoded = Self::record_chain(tape, &self.decoder, &dec, z)?;
            let nll = distributions::record_gaussian_nll(tape, decoded, x)?;
            nll_acc = Some(match nll_acc {
                None => nll,
                Some(acc) => tape.add(acc, nll)?,
            });
            if let Some(t) = z_true {
                let mse = distributions::record_squared_error(tape, z, t)?;
                mse_acc = Some(match mse_acc {
                    None => mse,
                    Some(acc) => tape.add(acc, mse)?,
                });
            }
        }
        let mut nll = nll_acc.expect("at least one sample");
        let mut abundance_mse = mse_acc;
        if uniforms.len() > 1 {
            nll = tape.scale(nll, inv_s);
            abundance_mse = abundance_mse.map(|m| tape.scale(m, inv_s));
        }
        let mut total = tape.add(nll, kl)?;
        if let Some(m) = abundance_mse {
            if self.omega != 0.0 {
                let weighted = tape.scale(m, self.omega);
                total = tape.add(total, weighted)?;
            }
        }
        Ok(LossVars {
            alpha,
            nll,
            kl,
            abundance_mse,
            total,
        })
    }

    /// Summed loss terms over the batch rows, and the gradient of
    /// `weight · Σ_rows total` for every parameter.
    pub fn batch_gradients(
        &self,
        x: &Tensor2,
        uniforms: &[Tensor2],
        z_true: Option<&Tensor2>,
        weight: f64,
    ) -> Result<(LossBreakdown, Vec<Tensor2>)> {
        let mut tape = Tape::new();
        let vars = self.record_loss(&mut tape, x, uniforms, z_true)?;
        let sums = LossBreakdown {
            total: tape.value(vars.total).sum(),
            negative_log_likelihood: tape.value(vars.nll).sum(),
            kl: tape.value(vars.kl).sum(),
            abundance_mse: vars.abundance_mse.map_or(0.0, |m| tape.value(m).sum()),
        };
        let out = tape.sum(vars.total);
        let grads = tape.backward(out, &Tensor2::filled(1, 1, weight))?;
        Ok((sums, grads.into_params()))
    }

    /// Summed loss terms over the batch rows, without gradients.
    pub fn batch_loss(
        &self,
        x: &Tensor2,
        uniforms: &[Tensor2],
        z_true: Option<&Tensor2>,
    ) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let vars = self.record_loss(&mut tape, x, uniforms, z_true)?;
        Ok(LossBreakdown {
            total: tape.value(vars.total).sum(),
            negative_log_likelihood: tape.value(vars.nll).sum(),
            kl: tape.value(vars.kl).sum(),
            abundance_mse: vars.abundance_mse.map_or(0.0, |m| tape.value(m).sum()),
        })
    }
}

/// Clamped log-variances from a raw decoder row.
pub fn gaussian_from_decoded(row: &[f64], n_bands: usize) -> DiagGaussian {
    DiagGaussian {
        mu: row[..n_bands].to_vec(),
        log_var: row[n_bands..].iter().map(|&v| clamped_log_var(v)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::init_model;

    fn tiny(omega: f64) -> LdvaeModel {
        let arch = Architecture {
            n_bands: 5,
            n_endmembers: 3,
            encoder_hidden: vec![6],
            decoder_hidden: vec![4],
        };
        init_model(
            &arch,
            DirichletParams::symmetric(3, 1.0).unwrap(),
            omega,
            KlVariant::Paper,
            1,
        )
        .unwrap()
    }

    const X: [f64; 5] = [0.2, 0.5, 0.3, 0.9, 0.4];

    #[test]
    fn encode_is_positive_and_deterministic() {
        let m = tiny(1.0);
        let a = m.encode(&X).unwrap();
        assert!(a.alpha().iter().all(|&v| v > 0.0));
        assert_eq!(a, m.encode(&X).unwrap());
        assert!(m.encode(&[0.1; 4]).is_err());
        let batch = m
            .encode_batch(&Tensor2::from_rows(&[X, X]).unwrap())
            .unwrap();
        assert_eq!(batch.row_slice(0), batch.row_slice(1));
    }

    #[test]
    fn alpha_floor_survives_extreme_preactivations() {
        let mut m = tiny(1.0);
        for factor in [-1e6, -1e3, 1e3] {
            let mut mm = m.clone();
            let last = mm.encoder.last_mut().unwrap();
            last.weights.scale_in_place(factor);
            last.bias = last.bias.map(|_| factor);
            let a = mm.encode(&X).unwrap();
            assert!(
                a.alpha().iter().all(|&v| v >= ALPHA_FLOOR && v.is_finite()),
                "{a:?}"
            );
        }
        m.encoder.last_mut().unwrap().weights.scale_in_place(0.0);
        assert!(m.encode(&X).is_ok());
    }

    #[test]
    fn decode_contract() {
        let m = tiny(1.0);
        let g = m.decode(&[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(g.dim(), 5);
        assert!(g.log_var.iter().all(|&v| (-12.0..=6.0).contains(&v)));
        assert_eq!(g, m.decode(&[0.2, 0.3, 0.5]).unwrap());
        assert!(matches!(m.decode(&[0.2, 0.3, 0.6]), Err(Error::Domain(_))));
    }

    #[test]
    fn forward_and_loss() {
        let m = tiny(1.0);
        let u = [0.3, 0.6, 0.8];
        let out = m.forward(&X, &u).unwrap();
        let s: f64 = out.z.as_slice().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(out, m.forward(&X, &u).unwrap());

        let loss = m.loss(&X, &out, None).unwrap();
        assert_eq!(loss.abundance_mse, 0.0);
        assert!(loss.sum_residual(1.0) < 1e-10);
        let same = m.loss(&X, &out, Some(&out.z)).unwrap();
        assert_eq!(same.abundance_mse, 0.0);
        assert!(m
            .loss(&X, &out, Some(&AbundanceVector::one_hot(2, 0)))
            .is_err());
    }

    #[test]
    fn kl_vanishes_when_alpha_matches_prior() {
        let m = tiny(1.0);
        let out = m.forward(&X, &[0.5; 3]).unwrap();
        let mut m2 = m.clone();
        m2.prior = out.alpha.clone();
        assert!(m2.loss(&X, &out, None).unwrap().kl.abs() < 1e-10);
    }

    #[test]
    fn zero_omega_ignores_labels() {
        let m = tiny(0.0);
        let out = m.forward(&X, &[0.2, 0.4, 0.9]).unwrap();
        let a = m.loss(&X, &out, None).unwrap();
        let b = m
            .loss(&X, &out, Some(&AbundanceVector::one_hot(3, 1)))
            .unwrap();
        assert_eq!(a.total, b.total);
        assert!(b.abundance_mse > 0.0);
    }

    #[test]
    fn tape_loss_matches_value_route() {
        let m = tiny(0.7);
        let rows = [X, [0.6, 0.1, 0.2, 0.3, 0.8]];
        let u = [[0.3, 0.6, 0.8], [0.9, 0.1, 0.5]];
        let truth = [[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]];
        let sums = m
            .batch_loss(
                &Tensor2::from_rows(&rows).unwrap(),
                &[Tensor2::from_rows(&u).unwrap()],
                Some(&Tensor2::from_rows(&truth).unwrap()),
            )
            .unwrap();
        let mut want = LossBreakdown::default();
        for i in 0..2 {
            let out = m.forward(&rows[i], &u[i]).unwrap();
            let t = AbundanceVector::new(truth[i].to_vec()).unwrap();
            want.accumulate(&m.loss(&rows[i], &out, Some(&t)).unwrap());
        }
        assert!((sums.total - want.total).abs() < 1e-10);
        assert!((sums.kl - want.kl).abs() < 1e-10);
        assert!((sums.abundance_mse - want.abundance_mse).abs() < 1e-12);
    }

    #[test]
    fn inference_outputs() {
        let m = tiny(1.0);
        let z = m.estimate_abundances(&X).unwrap();
        assert!((z.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let r = m.reconstruct(&X).unwrap();
        assert_eq!(r.bands(), 5);
        assert_eq!(r, m.reconstruct(&X).unwrap());
        let e = m.extract_endmembers().unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e.bands(), 5);
        assert_eq!(e, m.extract_endmembers().unwrap());
    }

    #[test]
    fn dirichlet_mean_estimate() {
        // Force α̂ = (2,2,2,2): zero weights, bias = softplus⁻¹(2 − floor).
        let arch = Architecture {
            n_bands: 3,
            n_endmembers: 4,
            encoder_hidden: vec![],
            decoder_hidden: vec![],
        };
        let mut m = init_model(
            &arch,
            DirichletParams::symmetric(4, 1.0).unwrap(),
            1.0,
            KlVariant::Paper,
            0,
        )
        .unwrap();
        let target = 2.0 - ALPHA_FLOOR;
        let pre = (target.exp() - 1.0).ln();
        let layer = &mut m.encoder[0];
        layer.weights.scale_in_place(0.0);
        layer.bias = Tensor2::filled(1, 4, pre);
        let a = m.encode(&[0.3, 0.1, 0.9]).unwrap();
        assert!(a.alpha().iter().all(|v| (v - 2.0).abs() < 1e-12));
        let z = m.estimate_abundances(&[0.3, 0.1, 0.9]).unwrap();
        assert!(z.as_slice().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn invariants_enforced() {
        let m = tiny(1.0);
        let bad_prior = DirichletParams::symmetric(4, 1.0).unwrap();
        assert!(LdvaeModel::from_layers(
            m.encoder.clone(),
            m.decoder.clone(),
            bad_prior,
            1.0,
            KlVariant::Paper
        )
        .is_err());
        let mut enc = m.encoder.clone();
        enc.last_mut().unwrap().spec.activation = Activation::Identity;
        assert!(LdvaeModel::from_layers(
            enc,
            m.decoder.clone(),
            m.prior.clone(),
            1.0,
            KlVariant::Paper
        )
        .is_err());
        assert!(LdvaeModel::from_layers(
            m.encoder.clone(),
            m.encoder.clone(),
            m.prior.clone(),
            1.0,
            KlVariant::Paper
        )
        .is_err());
    }
}
