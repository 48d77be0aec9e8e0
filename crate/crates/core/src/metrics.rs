//! Spectral angle, abundance and reconstruction errors, endmember matching
//! and summary statistics.

use serde::{Deserialize, Serialize};

use crate::data::EndmemberSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Spectral angle distance in radians: `arccos(⟨a,b⟩ / (‖a‖‖b‖))`, with the
/// cosine clamped to `[-1, 1]`.
pub fn sad(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "spectra have {} and {} bands",
            a.len(),
            b.len()
        )));
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::domain("spectral angle of a zero vector"));
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0).acos())
}

fn check_rows<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "{} rows vs {} rows",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::domain("no rows to compare"));
    }
    let d = a[0].as_ref().len();
    for (x, y) in a.iter().zip(b) {
        if x.as_ref().len() != d || y.as_ref().len() != d {
            return Err(Error::shape("rows differ in length"));
        }
    }
    Ok(d)
}

fn squared_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Root mean squared abundance error over every pixel and component.
pub fn rmse<A: AsRef<[f64]>, B: AsRef<[f64]>>(z_true: &[A], z_est: &[B]) -> Result<f64> {
    let d = check_rows(z_true, z_est)?;
    let total: f64 = z_true
        .iter()
        .zip(z_est)
        .map(|(a, b)| squared_diff(a.as_ref(), b.as_ref()))
        .sum();
    Ok((total / (z_true.len() * d) as f64).sqrt())
}

/// RMSE of each component separately, averaged over pixels.
pub fn rmse_per_class<A: AsRef<[f64]>, B: AsRef<[f64]>>(
    z_true: &[A],
    z_est: &[B],
) -> Result<Vec<f64>> {
    let d = check_rows(z_true, z_est)?;
    let mut acc = vec![0.0; d];
    for (a, b) in z_true.iter().zip(z_est) {
        for ((s, x), y) in acc.iter_mut().zip(a.as_ref()).zip(b.as_ref()) {
            *s += (x - y) * (x - y);
        }
    }
    Ok(acc
        .into_iter()
        .map(|s| (s / z_true.len() as f64).sqrt())
        .collect())
}

/// Mean over pixels of the per-band mean squared difference.
pub fn mse<A: AsRef<[f64]>, B: AsRef<[f64]>>(x: &[A], x_hat: &[B]) -> Result<f64> {
    let d = check_rows(x, x_hat)?;
    let total: f64 = x
        .iter()
        .zip(x_hat)
        .map(|(a, b)| squared_diff(a.as_ref(), b.as_ref()) / d as f64)
        .sum();
    Ok(total / x.len() as f64)
}

/// Per-pixel MSE between two equal-length spectra.
pub fn spectrum_mse(a: &[f64], b: &[f64]) -> Result<f64> {
    mse(&[a], &[b])
}

/// Optimal one-to-one pairing of extracted and reference endmembers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `permutation[i]` is the reference index paired with extracted `i`.
    pub permutation: Vec<usize>,
    pub per_pair_sad: Vec<f64>,
}

impl MatchResult {
    pub fn total_sad(&self) -> f64 {
        self.per_pair_sad.iter().sum()
    }

    pub fn mean_sad(&self) -> f64 {
        self.total_sad() / self.per_pair_sad.len() as f64
    }
}

/// Up to this many endmembers, every permutation is enumerated.
const BRUTE_FORCE_MAX: usize = 8;

pub fn match_endmembers(extracted: &EndmemberSet, reference: &EndmemberSet) -> Result<MatchResult> {
    match_spectra(extracted.spectra(), reference.spectra())
}

/// Bijection minimising total SAD between `extracted` and `reference`.
pub fn match_spectra<A: AsRef<[f64]>, B: AsRef<[f64]>>(
    extracted: &[A],
    reference: &[B],
) -> Result<MatchResult> {
    let n = extracted.len();
    if n != reference.len() {
        return Err(Error::shape(format!(
            "{n} extracted endmembers vs {} references",
            reference.len()
        )));
    }
    if n == 0 {
        return Err(Error::domain("no endmembers to match"));
    }
    let mut cost = Tensor2::zeros(n, n);
    for (i, e) in extracted.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            cost.set(i, j, sad(e.as_ref(), r.as_ref())?);
        }
    }
    let permutation = optimal_assignment(&cost)?;
    let per_pair_sad = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.get(i, j))
        .collect();
    Ok(MatchResult {
        permutation,
        per_pair_sad,
    })
}

/// Minimum-cost assignment of rows to columns of a square cost matrix.
pub fn optimal_assignment(cost: &Tensor2) -> Result<Vec<usize>> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::shape("assignment needs a square cost matrix"));
    }
    if n <= BRUTE_FORCE_MAX {
        Ok(brute_force_assignment(cost))
    } else {
        Ok(hungarian(cost))
    }
}

fn assignment_cost(cost: &Tensor2, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum()
}

/// Lexicographic enumeration; ties keep the earliest permutation, so the
/// identity wins among equal-cost candidates.
fn brute_force_assignment(cost: &Tensor2) -> Vec<usize> {
    let n = cost.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = assignment_cost(cost, &perm);
    while next_permutation(&mut perm) {
        let c = assignment_cost(cost, &perm);
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&perm);
        }
    }
    best
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Shortest-augmenting-path Hungarian algorithm with row/column potentials,
/// O(n³).
fn hungarian(cost: &Tensor2) -> Vec<usize> {
    let n = cost.rows();
    let inf = f64::INFINITY;
    // 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of_col[j] - 1] = j - 1;
    }
    assignment
}

/// Table-style descriptive statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for one value.
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Result<MetricSummary> {
    if values.is_empty() {
        return Err(Error::domain("cannot summarise an empty sequence"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("cannot summarise NaN values"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    Ok(MetricSummary {
        mean,
        std,
        min: sorted[0],
        q25: q(0.25),
        q50: q(0.5),
        q75: q(0.75),
        max: sorted[n - 1],
    })
}
