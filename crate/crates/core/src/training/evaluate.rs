//! Reconstruction, endmember and abundance metrics for a trained model.

use serde::{Deserialize, Serialize};

use crate::data::{EndmemberSet, HsiCube};
use crate::distributions::argmax;
use crate::error::{Error, Result};
use crate::exec::{map_range, ExecMode};
use crate::metrics::{
    match_endmembers, rmse, rmse_per_class, sad, spectrum_mse, summarize, MetricSummary,
};
use crate::model::LdvaeModel;
use crate::tensor::Tensor2;

/// Pixels per inference block.
const EVAL_BLOCK: usize = 256;
/// A ground-truth pixel counts as pure above this abundance.
const PURE_THRESHOLD: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndmemberReport {
    /// Reference names in library order.
    pub names: Vec<String>,
    /// Latent index matched to each reference endmember.
    pub matched_latent: Vec<usize>,
    pub sad: Vec<f64>,
    pub mean_sad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbundanceReport {
    pub names: Vec<String>,
    pub per_class_rmse: Vec<f64>,
    /// Mean of the per-class values.
    pub average_rmse: f64,
    /// Over every pixel and component.
    pub overall_rmse: f64,
    /// Fraction of pixels whose largest estimate is the largest true
    /// abundance.
    pub dominant_accuracy: f64,
    /// As `dominant_accuracy`, restricted to pure pixels; `None` if the cube
    /// has none.
    pub pure_pixel_accuracy: Option<f64>,
    /// Overall RMSE after reordering latents by the endmember matching;
    /// present when a library was supplied. Meaningful for models whose
    /// latent order is not tied to the labels (ω = 0).
    pub matched_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub pixel_count: usize,
    pub reconstruction_sad: MetricSummary,
    pub reconstruction_mse: MetricSummary,
    pub endmembers: Option<EndmemberReport>,
    pub abundances: Option<AbundanceReport>,
    #[serde(skip)]
    pub per_pixel_sad: Vec<f64>,
    #[serde(skip)]
    pub per_pixel_mse: Vec<f64>,
    /// `N × n` abundance estimates.
    #[serde(skip)]
    pub estimates: Option<Tensor2>,
}

pub fn evaluate(
    model: &LdvaeModel,
    cube: &HsiCube,
    library: Option<&EndmemberSet>,
) -> Result<EvaluationReport> {
    evaluate_with(model, cube, library, ExecMode::Sequential)
}

pub fn evaluate_with(
    model: &LdvaeModel,
    cube: &HsiCube,
    library: Option<&EndmemberSet>,
    exec: ExecMode,
) -> Result<EvaluationReport> {
    if cube.bands() != model.n_bands() {
        return Err(Error::shape(format!(
            "cube has {} bands, model expects {}",
            cube.bands(),
            model.n_bands()
        )));
    }
    let n_pix = cube.pixel_count();
    if n_pix == 0 {
        return Err(Error::Data("cube has no pixels".into()));
    }
    let all = cube.to_tensor();
    let blocks = n_pix.div_ceil(EVAL_BLOCK);
    let per_block = map_range(exec, blocks, |b| -> Result<_> {
        let lo = b * EVAL_BLOCK;
        let hi = (lo + EVAL_BLOCK).min(n_pix);
        let idx: Vec<usize> = (lo..hi).collect();
        let x = all.select_rows(&idx);
        let est = model.estimate_batch(&x)?;
        let decoded = model.decode_batch(&est)?;
        let k = model.n_bands();
        let mut sads = Vec::with_capacity(idx.len());
        let mut mses = Vec::with_capacity(idx.len());
        for (r, xr) in x.iter_rows().enumerate() {
            let mu = &decoded.row_slice(r)[..k];
            sads.push(sad(xr, mu)?);
            mses.push(spectrum_mse(xr, mu)?);
        }
        Ok((est, sads, mses))
    });
    let mut per_pixel_sad = Vec::with_capacity(n_pix);
    let mut per_pixel_mse = Vec::with_capacity(n_pix);
    let mut est_rows: Vec<f64> = Vec::with_capacity(n_pix * model.n_endmembers());
    for block in per_block {
        let (est, s, m) = block?;
        est_rows.extend_from_slice(est.data());
        per_pixel_sad.extend(s);
        per_pixel_mse.extend(m);
    }
    let estimates = Tensor2::from_vec(n_pix, model.n_endmembers(), est_rows)?;

    let endmembers = match library {
        None => None,
        Some(lib) => {
            let extracted = model.extract_endmembers()?;
            // Reference-major so rows follow library order.
            let m = match_endmembers(lib, &extracted)?;
            Some(EndmemberReport {
                names: lib.names().to_vec(),
                matched_latent: m.permutation.clone(),
                mean_sad: m.mean_sad(),
                sad: m.per_pair_sad,
            })
        }
    };

    let abundances = match cube.ground_truth_tensor() {
        Some(truth) if truth.cols() == model.n_endmembers() => {
            let t: Vec<&[f64]> = truth.iter_rows().collect();
            let e: Vec<&[f64]> = estimates.iter_rows().collect();
            let per_class = rmse_per_class(&t, &e)?;
            let (mut hits, mut pure, mut pure_hits) = (0usize, 0usize, 0usize);
            for (tr, er) in t.iter().zip(&e) {
                let j = argmax(tr);
                let hit = argmax(er) == j;
                hits += usize::from(hit);
                if tr[j] >= PURE_THRESHOLD {
                    pure += 1;
                    pure_hits += usize::from(hit);
                }
            }
            let names = cube
                .endmember_names()
                .map(<[String]>::to_vec)
                .unwrap_or_else(|| {
                    (1..=truth.cols())
                        .map(|j| format!("endmember_{j}"))
                        .collect()
                });
            let matched_rmse = match &endmembers {
                Some(em) if em.matched_latent.len() == truth.cols() => {
                    let reordered: Vec<Vec<f64>> = e
                        .iter()
                        .map(|row| em.matched_latent.iter().map(|&l| row[l]).collect())
                        .collect();
                    Some(rmse(&t, &reordered)?)
                }
                _ => None,
            };
            Some(AbundanceReport {
                names,
                matched_rmse,
                average_rmse: per_class.iter().sum::<f64>() / per_class.len() as f64,
                overall_rmse: rmse(&t, &e)?,
                per_class_rmse: per_class,
                dominant_accuracy: hits as f64 / n_pix as f64,
                pure_pixel_accuracy: (pure > 0).then(|| pure_hits as f64 / pure as f64),
            })
        }
        Some(truth) => {
            return Err(Error::shape(format!(
                "ground truth has {} endmembers, model has {}",
                truth.cols(),
                model.n_endmembers()
            )))
        }
        None => None,
    };

    Ok(EvaluationReport {
        pixel_count: n_pix,
        reconstruction_sad: summarize(&per_pixel_sad)?,
        reconstruction_mse: summarize(&per_pixel_mse)?,
        endmembers,
        abundances,
        per_pixel_sad,
        per_pixel_mse,
        estimates: Some(estimates),
    })
}

impl EvaluationReport {
    /// `metric,mean,std,min,q25,median,q75,max` for reconstruction SAD and
    /// MSE.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("metric,mean,std,min,q25,median,q75,max\n");
        for (name, m) in [
            ("reconstruction_sad", &self.reconstruction_sad),
            ("reconstruction_mse", &self.reconstruction_mse),
        ] {
            s.push_str(&format!(
                "{name},{},{},{},{},{},{},{}\n",
                m.mean, m.std, m.min, m.q25, m.q50, m.q75, m.max
            ));
        }
        s
    }

    /// `endmember,latent,sad` plus a `mean` row.
    pub fn endmember_csv(&self) -> Option<String> {
        let e = self.endmembers.as_ref()?;
        let mut s = String::from("endmember,latent,sad\n");
        for ((name, latent), v) in e.names.iter().zip(&e.matched_latent).zip(&e.sad) {
            s.push_str(&format!("{name},{latent},{v}\n"));
        }
        s.push_str(&format!("mean,,{}\n", e.mean_sad));
        Some(s)
    }

    /// `endmember,rmse` plus `average` and `overall` rows.
    pub fn rmse_csv(&self) -> Option<String> {
        let a = self.abundances.as_ref()?;
        let mut s = String::from("endmember,rmse\n");
        for (name, v) in a.names.iter().zip(&a.per_class_rmse) {
            s.push_str(&format!("{name},{v}\n"));
        }
        s.push_str(&format!(
            "average,{}\noverall,{}\n",
            a.average_rmse, a.overall_rmse
        ));
        Some(s)
    }

    /// `pixel,row,col,sad,mse`.
    pub fn per_pixel_csv(&self, width: usize) -> String {
        let mut s = String::from("pixel,row,col,sad,mse\n");
        for (i, (a, m)) in self
            .per_pixel_sad
            .iter()
            .zip(&self.per_pixel_mse)
            .enumerate()
        {
            s.push_str(&format!("{i},{},{},{a},{m}\n", i / width, i % width));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_cube, synthetic_library};
    use crate::distributions::{DirichletParams, KlVariant};
    use crate::model::Architecture;
    use crate::training::init_model;

    fn model(k: usize, n: usize) -> LdvaeModel {
        let arch = Architecture {
            n_bands: k,
            n_endmembers: n,
            encoder_hidden: vec![6],
            decoder_hidden: vec![6],
        };
        init_model(
            &arch,
            DirichletParams::symmetric(n, 1.0).unwrap(),
            1.0,
            KlVariant::Paper,
            9,
        )
        .unwrap()
    }

    #[test]
    fn report_shapes_and_exports() {
        let lib = synthetic_library(3, 8, 1).unwrap();
        let cube = generate_cube(&lib, 5, 4, &[1.0; 3], 1).unwrap();
        let m = model(8, 3);
        let r = evaluate(&m, &cube, Some(&lib)).unwrap();
        assert_eq!(r.pixel_count, 20);
        assert_eq!(r.per_pixel_sad.len(), 20);
        assert_eq!(r.endmembers.as_ref().unwrap().sad.len(), 3);
        assert_eq!(r.abundances.as_ref().unwrap().per_class_rmse.len(), 3);
        assert_eq!(r.summary_csv().lines().count(), 3);
        assert_eq!(r.endmember_csv().unwrap().lines().count(), 5);
        assert_eq!(r.rmse_csv().unwrap().lines().count(), 6);
        assert_eq!(r.per_pixel_csv(4).lines().count(), 21);
        let par = evaluate_with(&m, &cube, Some(&lib), ExecMode::Parallel).unwrap();
        assert_eq!(par, r);
    }

    #[test]
    fn missing_ground_truth_omits_rmse() {
        let cube = HsiCube::new(2, 2, 8, vec![0.3; 32]).unwrap();
        let r = evaluate(&model(8, 3), &cube, None).unwrap();
        assert!(r.abundances.is_none());
        assert!(r.endmembers.is_none());
        assert!(r.rmse_csv().is_none());
    }

    #[test]
    fn band_mismatch() {
        let cube = HsiCube::new(2, 2, 7, vec![0.3; 28]).unwrap();
        assert!(matches!(
            evaluate(&model(8, 3), &cube, None),
            Err(Error::Shape(_))
        ));
    }
}
