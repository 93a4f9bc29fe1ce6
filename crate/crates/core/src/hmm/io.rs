//! Model container: magic `HMSEMDL`, u32 version, u32 header length, a JSON
//! header, then float32 parameter blocks (little-endian) for every phone
//! model in header order.
//!
//! Each block is the occupancy followed, per state, by spectral mean and
//! variance, pitch mean and variance, voiced weight, duration mean and
//! duration variance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    DurationGaussian, Gaussian, HmmError, HmmState, ModelKind, ModelMetadata, PhoneHmm, PitchGaussian, VoiceModel,
    STATES_PER_PHONE,
};

pub const MODEL_MAGIC: &[u8; 7] = b"HMSEMDL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    meta: ModelMetadata,
    spectral_dim: usize,
    backoff: Vec<String>,
    models: Vec<String>,
}

fn push(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn encode_hmm(out: &mut Vec<u8>, hmm: &PhoneHmm) {
    push(out, hmm.occupancy);
    for s in &hmm.states {
        for &v in s.spectral.mean.iter().chain(&s.spectral.var).chain(&s.pitch.gaussian.mean).chain(&s.pitch.gaussian.var)
        {
            push(out, v);
        }
        push(out, s.pitch.voiced_weight);
        push(out, s.duration.mean);
        push(out, s.duration.var);
    }
}

pub fn encode_model(model: &VoiceModel) -> Result<Vec<u8>, HmmError> {
    let header = Header {
        kind: model.kind,
        meta: model.meta.clone(),
        spectral_dim: model.spectral_dim(),
        backoff: model.backoff.keys().cloned().collect(),
        models: model.models.keys().cloned().collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| HmmError::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for hmm in model.all_models() {
        encode_hmm(&mut out, hmm);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], HmmError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| HmmError::Format("truncated model file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, HmmError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f(&mut self) -> Result<f64, HmmError> {
        let b = self.take(4)?;
        Ok(f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
    }

    fn vec(&mut self, n: usize) -> Result<Vec<f64>, HmmError> {
        (0..n).map(|_| self.f()).collect()
    }

    fn hmm(&mut self, dim: usize) -> Result<PhoneHmm, HmmError> {
        let occupancy = self.f()?;
        let states = (0..STATES_PER_PHONE)
            .map(|_| {
                let spectral = Gaussian::new(self.vec(dim)?, self.vec(dim)?);
                let gaussian = Gaussian::new(self.vec(3)?, self.vec(3)?);
                let voiced_weight = self.f()?;
                let duration = DurationGaussian { mean: self.f()?, var: self.f()? };
                Ok(HmmState { spectral, pitch: PitchGaussian { gaussian, voiced_weight }, duration })
            })
            .collect::<Result<Vec<_>, HmmError>>()?;
        Ok(PhoneHmm { states, occupancy })
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<VoiceModel, HmmError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
        return Err(HmmError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(HmmError::Format(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| HmmError::Format(e.to_string()))?;
    if header.spectral_dim != 3 * (header.meta.order + 1) {
        return Err(HmmError::Format("spectral width disagrees with cepstral order".into()));
    }
    let dim = header.spectral_dim;
    let backoff = header.backoff.into_iter().map(|k| Ok((k, r.hmm(dim)?))).collect::<Result<_, HmmError>>()?;
    let models = header.models.into_iter().map(|k| Ok((k, r.hmm(dim)?))).collect::<Result<_, HmmError>>()?;
    if r.pos != bytes.len() {
        return Err(HmmError::Format("trailing bytes after parameter blocks".into()));
    }
    Ok(VoiceModel { models, backoff, meta: header.meta, kind: header.kind })
}

pub fn write_model(model: &VoiceModel, path: impl AsRef<Path>) -> Result<(), HmmError> {
    std::fs::write(path, encode_model(model)?).map_err(|e| HmmError::Format(e.to_string()))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<VoiceModel, HmmError> {
    decode_model(&std::fs::read(path).map_err(|e| HmmError::Format(e.to_string()))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{flat_start, Observation, TrainConfig, Utterance};
    use crate::labels::{PhoneLabel, PhoneSet};

    fn model() -> VoiceModel {
        let corpus = vec![Utterance {
            obs: (0..12)
                .map(|t| Observation {
                    spectral: vec![0.1 * t as f64, 1.0 / 3.0, -2.0, 0.0, 1e-7, 5.0],
                    pitch: (t % 3 != 0).then_some([4.7, 0.01, -0.02]),
                })
                .collect(),
            labels: vec![PhoneLabel::untimed("aa"), PhoneLabel::untimed("m")],
        }];
        let cfg = TrainConfig { order: 1, ..TrainConfig::default() };
        let mut m = flat_start(&corpus, &PhoneSet::new(["aa", "m"]), &cfg).unwrap();
        m.meta.training_log = vec![-1234.567_891_234, -1000.1];
        m.meta.gv_target = Some(vec![0.1, 1.0 / 7.0]);
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode_model(&m).unwrap();
        assert_eq!(&bytes[..7], b"HMSEMDL");
        let back = decode_model(&bytes).unwrap();
        let again = encode_model(&back).unwrap();
        assert_eq!(bytes, again);
        assert_eq!(decode_model(&again).unwrap(), back);
        assert_eq!(back.meta, m.meta);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode_model(&model()).unwrap();
        assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_model(&long).is_err());
    }
}
