//! Dirichlet latent machinery and the diagonal Gaussian spectra model.
//!
//! Samples use the small-concentration approximation of the inverse Gamma
//! CDF, `G⁻¹(u; α, β) ≈ (u·α·Γ(α))^{1/α} / β`, evaluated in log space with
//! `β = 1` per coordinate and normalised over coordinates to land on the
//! simplex. Each scalar function here has a tape-recording counterpart
//! (`record_*`) that evaluates a whole batch of rows and supplies analytic
//! gradients to [`Tape::backward`].

use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::special::{ln_gamma, psi, psi1};
use crate::tensor::Tensor2;

/// Uniform draws are clamped to `[UNIFORM_CLAMP, 1 - UNIFORM_CLAMP]`.
pub const UNIFORM_CLAMP: f64 = 1e-6;
pub const LOG_VAR_MIN: f64 = -12.0;
pub const LOG_VAR_MAX: f64 = 6.0;
/// Tolerance of the abundance sum-to-one check.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Concentration vector of a Dirichlet distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::domain(format!(
                "Dirichlet needs at least 2 components, got {}",
                alpha.len()
            )));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::domain(format!(
                "concentration must be positive and finite, got {a}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn symmetric(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `α / Σα`.
    pub fn mean(&self) -> AbundanceVector {
        let total: f64 = self.alpha.iter().sum();
        AbundanceVector {
            z: self.alpha.iter().map(|a| a / total).collect(),
        }
    }
}

impl TryFrom<Vec<f64>> for DirichletParams {
    type Error = Error;

    fn try_from(alpha: Vec<f64>) -> Result<Self> {
        Self::new(alpha)
    }
}

impl From<DirichletParams> for Vec<f64> {
    fn from(p: DirichletParams) -> Self {
        p.alpha
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceVector {
    z: Vec<f64>,
}

impl AbundanceVector {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(z, SIMPLEX_TOL)
    }

    pub fn with_tolerance(z: Vec<f64>, tol: f64) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::domain("empty abundance vector"));
        }
        if let Some(v) = z.iter().find(|v| !(**v >= -tol && v.is_finite())) {
            return Err(Error::domain(format!("abundance {v} is negative")));
        }
        let total: f64 = z.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::domain(format!("abundances sum to {total}, not 1")));
        }
        Ok(Self { z })
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut z = vec![0.0; n];
        z[index] = 1.0;
        Self { z }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.z
    }

    /// Index of the largest abundance.
    pub fn dominant(&self) -> usize {
        argmax(&self.z)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Independent Gaussian per band, mean and (clamped) log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    /// Clamps `log_var` into `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mu.len() != log_var.len() {
            return Err(Error::shape(format!(
                "mean has {} bands, log-variance {}",
                mu.len(),
                log_var.len()
            )));
        }
        let log_var = log_var.into_iter().map(clamp_log_var).collect();
        Ok(Self { mu, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[inline]
fn clamp_log_var(v: f64) -> f64 {
    v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
}

/// Which Dirichlet KL expression enters the loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlVariant {
    /// `Σ lnΓ(α) − Σ lnΓ(α̂) + Σ (α̂ − α) ψ(α̂)`.
    #[default]
    Paper,
    /// As `Paper`, with `ψ(α̂)` replaced by `ln α̂ − 1/(2α̂)`.
    Stirling,
    /// The complete Dirichlet KL including the total-concentration terms.
    Full,
}

/// Log of the inverse-CDF approximation with `β = 1`.
#[inline]
fn log_gamma_quantile(u: f64, alpha: f64) -> f64 {
    (u.ln() + alpha.ln() + ln_gamma(alpha)) / alpha
}

/// `d/dα` of [`log_gamma_quantile`].
#[inline]
fn log_gamma_quantile_grad(log_g: f64, alpha: f64) -> f64 {
    (1.0 / alpha + psi(alpha) - log_g) / alpha
}

/// `(u·α·Γ(α))^{1/α} / β`, computed as `exp[(ln u + ln α + lnΓ(α))/α − ln β]`.
pub fn inverse_gamma_cdf_approx(u: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::domain(format!("u must lie in (0, 1), got {u}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::domain(format!(
            "alpha and beta must be positive, got alpha={alpha}, beta={beta}"
        )));
    }
    Ok((log_gamma_quantile(u, alpha) - beta.ln()).exp())
}

#[inline]
fn clamp_uniform(u: f64) -> f64 {
    u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
}

/// Normalises log-space Gamma draws onto the simplex in place.
fn softmax_in_place(logits: &mut [f64]) -> Result<()> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || logits.iter().any(|l| l.is_nan()) {
        return Err(Error::DegenerateSample(format!(
            "non-finite log-quantile in {logits:?}"
        )));
    }
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
    Ok(())
}

/// Reparameterised Dirichlet draw `z_k = g_k / Σ_j g_j` with
/// `g_k = inverse_gamma_cdf_approx(u_k, α_k, 1)`.
///
/// The ratio is formed from log-quantiles, so coordinates whose `g_k` would
/// underflow still produce a valid simplex point.
pub fn sample_dirichlet(params: &DirichletParams, uniforms: &[f64]) -> Result<AbundanceVector> {
    if uniforms.len() != params.len() {
        return Err(Error::shape(format!(
            "{} uniforms for {} components",
            uniforms.len(),
            params.len()
        )));
    }
    let mut z: Vec<f64> = params
        .alpha()
        .iter()
        .zip(uniforms)
        .map(|(&a, &u)| log_gamma_quantile(clamp_uniform(u), a))
        .collect();
    softmax_in_place(&mut z)?;
    Ok(AbundanceVector { z })
}

fn check_pair(a: &DirichletParams, b: &DirichletParams) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "Dirichlet lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn kl_row(alpha_hat: &[f64], prior: &[f64], variant: KlVariant) -> f64 {
    let mut kl = 0.0;
    match variant {
        KlVariant::Paper | KlVariant::Stirling => {
            for (&ah, &a) in alpha_hat.iter().zip(prior) {
                let slope = match variant {
                    KlVariant::Paper => psi(ah),
                    _ => ah.ln() - 0.5 / ah,
                };
                kl += ln_gamma(a) - ln_gamma(ah) + (ah - a) * slope;
            }
        }
        KlVariant::Full => {
            let s_hat: f64 = alpha_hat.iter().sum();
            let s: f64 = prior.iter().sum();
            let psi_s_hat = psi(s_hat);
            kl = ln_gamma(s_hat) - ln_gamma(s);
            for (&ah, &a) in alpha_hat.iter().zip(prior) {
                kl += ln_gamma(a) - ln_gamma(ah) + (ah - a) * (psi(ah) - psi_s_hat);
            }
        }
    }
    kl
}

fn kl_row_grad(alpha_hat: &[f64], prior: &[f64], variant: KlVariant, out: &mut [f64]) {
    match variant {
        KlVariant::Paper => {
            for ((o, &ah), &a) in out.iter_mut().zip(alpha_hat).zip(prior) {
                *o = (ah - a) * psi1(ah);
            }
        }
        KlVariant::Stirling => {
            for ((o, &ah), &a) in out.iter_mut().zip(alpha_hat).zip(prior) {
                *o = -psi(ah) + ah.ln() - 0.5 / ah + (ah - a) * (1.0 / ah + 0.5 / (ah * ah));
            }
        }
        KlVariant::Full => {
            let s_hat: f64 = alpha_hat.iter().sum();
            let excess: f64 = alpha_hat.iter().zip(prior).map(|(ah, a)| ah - a).sum();
            let coupling = psi1(s_hat) * excess;
            for ((o, &ah), &a) in out.iter_mut().zip(alpha_hat).zip(prior) {
                *o = (ah - a) * psi1(ah) - coupling;
            }
        }
    }
}

/// `Σ lnΓ(α_k) − Σ lnΓ(α̂_k) + Σ (α̂_k − α_k)·ψ(α̂_k)`.
pub fn dirichlet_kl_paper(
    alpha_hat: &DirichletParams,
    alpha_prior: &DirichletParams,
) -> Result<f64> {
    dirichlet_kl(alpha_hat, alpha_prior, KlVariant::Paper)
}

/// `KL(Dir(α̂) ‖ Dir(α))` including the `lnΓ(Σα̂)`, `lnΓ(Σα)` and `ψ(Σα̂)`
/// terms.
pub fn dirichlet_kl_full(
    alpha_hat: &DirichletParams,
    alpha_prior: &DirichletParams,
) -> Result<f64> {
    dirichlet_kl(alpha_hat, alpha_prior, KlVariant::Full)
}

pub fn dirichlet_kl(
    alpha_hat: &DirichletParams,
    alpha_prior: &DirichletParams,
    variant: KlVariant,
) -> Result<f64> {
    check_pair(alpha_hat, alpha_prior)?;
    Ok(kl_row(alpha_hat.alpha(), alpha_prior.alpha(), variant))
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `Σ_k [−½ ln 2π − ½ log_var_k − (x_k − μ_k)² / (2·exp(log_var_k))]`.
pub fn diag_gaussian_log_likelihood(x: &[f64], g: &DiagGaussian) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::shape(format!(
            "spectrum has {} bands, Gaussian {}",
            x.len(),
            g.dim()
        )));
    }
    Ok(x.iter()
        .zip(&g.mu)
        .zip(&g.log_var)
        .map(|((&xk, &mk), &lv)| {
            let d = xk - mk;
            -HALF_LN_2PI - 0.5 * lv - d * d / (2.0 * lv.exp())
        })
        .sum())
}

// ---------------------------------------------------------------------------
// Tape ops
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct DirichletSampleOp {
    /// `d ln g / dα` per entry.
    dlog_g: Tensor2,
}

impl CustomOp for DirichletSampleOp {
    fn name(&self) -> &'static str {
        "dirichlet_sample"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor2],
        z: &Tensor2,
        grad: &Tensor2,
    ) -> Result<Vec<Option<Tensor2>>> {
        let mut dalpha = Tensor2::zeros(z.rows(), z.cols());
        for r in 0..z.rows() {
            let zr = z.row_slice(r);
            let gr = grad.row_slice(r);
            let inner: f64 = zr.iter().zip(gr).map(|(a, b)| a * b).sum();
            let dl = self.dlog_g.row_slice(r);
            for (k, d) in dalpha.row_slice_mut(r).iter_mut().enumerate() {
                *d = zr[k] * (gr[k] - inner) * dl[k];
            }
        }
        Ok(vec![Some(dalpha)])
    }
}

/// Row-wise reparameterised Dirichlet draws for a batch of concentrations.
pub fn record_sample(tape: &mut Tape<'_>, alpha: Var, uniforms: &Tensor2) -> Result<Var> {
    let a = tape.value(alpha);
    a.expect_shape(uniforms.shape(), "uniform draws")?;
    let mut z = Tensor2::zeros(a.rows(), a.cols());
    let mut dlog_g = Tensor2::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        let zr = z.row_slice_mut(r);
        let dr = dlog_g.row_slice_mut(r);
        for (k, (&ak, &u)) in a.row_slice(r).iter().zip(uniforms.row_slice(r)).enumerate() {
            let lg = log_gamma_quantile(clamp_uniform(u), ak);
            zr[k] = lg;
            dr[k] = log_gamma_quantile_grad(lg, ak);
        }
        softmax_in_place(zr)?;
    }
    Ok(tape.custom(vec![alpha], z, Box::new(DirichletSampleOp { dlog_g })))
}

#[derive(Debug)]
struct DirichletKlOp {
    prior: Vec<f64>,
    variant: KlVariant,
}

impl CustomOp for DirichletKlOp {
    fn name(&self) -> &'static str {
        "dirichlet_kl"
    }

    fn backward(
        &self,
        inputs: &[&Tensor2],
        _output: &Tensor2,
        grad: &Tensor2,
    ) -> Result<Vec<Option<Tensor2>>> {
        let a = inputs[0];
        let mut d = Tensor2::zeros(a.rows(), a.cols());
        for r in 0..a.rows() {
            let dr = d.row_slice_mut(r);
            kl_row_grad(a.row_slice(r), &self.prior, self.variant, dr);
            let g = grad.get(r, 0);
            for v in dr.iter_mut() {
                *v *= g;
            }
        }
        Ok(vec![Some(d)])
    }
}

/// Per-row KL of `Dir(α̂_row)` against `prior`, as a `rows × 1` column.
pub fn record_kl(
    tape: &mut Tape<'_>,
    alpha_hat: Var,
    prior: &DirichletParams,
    variant: KlVariant,
) -> Result<Var> {
    let a = tape.value(alpha_hat);
    if a.cols() != prior.len() {
        return Err(Error::shape(format!(
            "concentrations have {} columns, prior {}",
            a.cols(),
            prior.len()
        )));
    }
    let values: Vec<f64> = a
        .iter_rows()
        .map(|row| kl_row(row, prior.alpha(), variant))
        .collect();
    let out = Tensor2::from_vec(a.rows(), 1, values)?;
    let op = DirichletKlOp {
        prior: prior.alpha().to_vec(),
        variant,
    };
    Ok(tape.custom(vec![alpha_hat], out, Box::new(op)))
}

#[derive(Debug)]
struct GaussianNllOp {
    target: Tensor2,
}

impl CustomOp for GaussianNllOp {
    fn name(&self) -> &'static str {
        "gaussian_nll"
    }

    fn backward(
        &self,
        inputs: &[&Tensor2],
        _output: &Tensor2,
        grad: &Tensor2,
    ) -> Result<Vec<Option<Tensor2>>> {
        let decoded = inputs[0];
        let k = self.target.cols();
        let mut d = Tensor2::zeros(decoded.rows(), decoded.cols());
        for r in 0..decoded.rows() {
            let g = grad.get(r, 0);
            let row = decoded.row_slice(r);
            let x = self.target.row_slice(r);
            let dr = d.row_slice_mut(r);
            for b in 0..k {
                let raw = row[k + b];
                let lv = clamp_log_var(raw);
                let inv_var = (-lv).exp();
                let diff = x[b] - row[b];
                dr[b] = -g * diff * inv_var;
                dr[k + b] = if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw) {
                    g * (0.5 - 0.5 * diff * diff * inv_var)
                } else {
                    0.0
                };
            }
        }
        Ok(vec![Some(d)])
    }
}

/// Per-row negative log-likelihood of `target` under the Gaussian whose mean
/// and raw log-variance are the two halves of each `decoded` row.
pub fn record_gaussian_nll(tape: &mut Tape<'_>, decoded: Var, target: &Tensor2) -> Result<Var> {
    let dec = tape.value(decoded);
    let k = target.cols();
    dec.expect_shape((target.rows(), 2 * k), "decoder output")?;
    let values: Vec<f64> = (0..dec.rows())
        .map(|r| {
            let row = dec.row_slice(r);
            target
                .row_slice(r)
                .iter()
                .enumerate()
                .map(|(b, &xb)| {
                    let lv = clamp_log_var(row[k + b]);
                    let diff = xb - row[b];
                    HALF_LN_2PI + 0.5 * lv + 0.5 * diff * diff * (-lv).exp()
                })
                .sum()
        })
        .collect();
    let out = Tensor2::from_vec(dec.rows(), 1, values)?;
    Ok(tape.custom(
        vec![decoded],
        out,
        Box::new(GaussianNllOp {
            target: target.clone(),
        }),
    ))
}

#[derive(Debug)]
struct SquaredErrorOp {
    target: Tensor2,
}

impl CustomOp for SquaredErrorOp {
    fn name(&self) -> &'static str {
        "mean_squared_error"
    }

    fn backward(
        &self,
        inputs: &[&Tensor2],
        _output: &Tensor2,
        grad: &Tensor2,
    ) -> Result<Vec<Option<Tensor2>>> {
        let z = inputs[0];
        let scale = 2.0 / z.cols() as f64;
        let mut d = Tensor2::zeros(z.rows(), z.cols());
        for r in 0..z.rows() {
            let g = grad.get(r, 0) * scale;
            for ((o, &zi), &ti) in d
                .row_slice_mut(r)
                .iter_mut()
                .zip(z.row_slice(r))
                .zip(self.target.row_slice(r))
            {
                *o = g * (zi - ti);
            }
        }
        Ok(vec![Some(d)])
    }
}

/// Per-row mean squared difference between `input` and the constant
/// `target`, as a `rows × 1` column.
pub fn record_squared_error(tape: &mut Tape<'_>, input: Var, target: &Tensor2) -> Result<Var> {
    let z = tape.value(input);
    z.expect_shape(target.shape(), "abundance target")?;
    let n = z.cols() as f64;
    let values: Vec<f64> = z
        .iter_rows()
        .zip(target.iter_rows())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
        .collect();
    let out = Tensor2::from_vec(z.rows(), 1, values)?;
    Ok(tape.custom(
        vec![input],
        out,
        Box::new(SquaredErrorOp {
            target: target.clone(),
        }),
    ))
}

/// Value of `log_var` actually used, given a raw decoder output.
pub fn clamped_log_var(raw: f64) -> f64 {
    clamp_log_var(raw)
}
