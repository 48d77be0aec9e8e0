//! Binary checkpoint: `LDVAE001`, a little-endian `u64` header length, a
//! JSON header, then every parameter as little-endian `f64` in
//! [`LdvaeModel::parameters`] order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dense, LdvaeModel, ModelMetadata};
use crate::distributions::{DirichletParams, KlVariant};
use crate::error::{Error, Result};
use crate::tensor::{LayerSpec, Tensor2};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LDVAE001";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    encoder: Vec<LayerSpec>,
    decoder: Vec<LayerSpec>,
    n_endmembers: usize,
    n_bands: usize,
    prior: DirichletParams,
    omega: f64,
    kl_variant: KlVariant,
    parameter_count: usize,
    metadata: ModelMetadata,
}

impl LdvaeModel {
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            encoder: self.encoder.iter().map(|l| l.spec).collect(),
            decoder: self.decoder.iter().map(|l| l.spec).collect(),
            n_endmembers: self.n_endmembers,
            n_bands: self.n_bands,
            prior: self.prior.clone(),
            omega: self.omega,
            kl_variant: self.kl_variant,
            parameter_count: self.parameter_count(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * header.parameter_count);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.parameters() {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not an LDVAE checkpoint (bad magic)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|l| l.checked_add(16))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Format("checkpoint header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;

        let specs = header.encoder.iter().chain(&header.decoder);
        let expected: usize = specs.clone().map(|s| s.parameter_count()).sum();
        if expected != header.parameter_count {
            return Err(Error::Format(format!(
                "header declares {} parameters, layers need {expected}",
                header.parameter_count
            )));
        }
        let payload = &bytes[header_end..];
        if payload.len() != expected * 8 {
            return Err(Error::Format(format!(
                "parameter payload is {} bytes, expected {}",
                payload.len(),
                expected * 8
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |rows: usize, cols: usize| -> Result<Tensor2> {
            Tensor2::from_vec(rows, cols, values.by_ref().take(rows * cols).collect())
        };
        let mut build = |specs: &[LayerSpec]| -> Result<Vec<Dense>> {
            specs
                .iter()
                .map(|&s| {
                    let w = take(s.input_dim, s.output_dim)?;
                    let b = take(1, s.output_dim)?;
                    Dense::new(s, w, b)
                })
                .collect()
        };
        let encoder = build(&header.encoder)?;
        let decoder = build(&header.decoder)?;
        let mut model = LdvaeModel::from_layers(
            encoder,
            decoder,
            header.prior,
            header.omega,
            header.kl_variant,
        )?;
        if model.n_bands != header.n_bands || model.n_endmembers != header.n_endmembers {
            return Err(Error::Format(
                "header dimensions disagree with layer specs".into(),
            ));
        }
        model.metadata = header.metadata;
        Ok(model)
    }
}

pub fn write_checkpoint(model: &LdvaeModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model.to_checkpoint_bytes()?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<LdvaeModel> {
    LdvaeModel::from_checkpoint_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::training::init_model;

    fn model() -> LdvaeModel {
        let arch = Architecture {
            n_bands: 4,
            n_endmembers: 2,
            encoder_hidden: vec![3],
            decoder_hidden: vec![5],
        };
        let mut m = init_model(
            &arch,
            DirichletParams::new(vec![0.7, 1.3]).unwrap(),
            0.25,
            KlVariant::Full,
            3,
        )
        .unwrap();
        m.metadata.wavelengths = Some(vec![400.0, 500.1, 600.0, 700.3]);
        m.metadata.endmember_names = Some(vec!["a".into(), "b".into()]);
        m.metadata.seed = Some(3);
        // Awkward values to exercise bit-exactness.
        m.parameters_mut()[0].data_mut()[0] = 0.1 + 0.2;
        m.parameters_mut()[1].data_mut()[0] = -1e-308;
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = m.to_checkpoint_bytes().unwrap();
        let back = LdvaeModel::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_checkpoint_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = model().to_checkpoint_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            LdvaeModel::from_checkpoint_bytes(&bad),
            Err(Error::Format(_))
        ));
        assert!(LdvaeModel::from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(LdvaeModel::from_checkpoint_bytes(&extra).is_err());
        let mut huge = bytes.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(LdvaeModel::from_checkpoint_bytes(&huge).is_err());
        assert!(LdvaeModel::from_checkpoint_bytes(b"LDVAE0").is_err());
    }
}
