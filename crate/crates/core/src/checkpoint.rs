//! Binary checkpoint files.
//!
//! Layout: the 8-byte magic `RESMCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, the JSON header, then the parameters,
//! the AdamW first moments and the AdamW second moments as little-endian `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AdamW, ResModel, ToyModelConfig, ToyResModel, Vocabulary};

pub const MAGIC: &[u8; 8] = b"RESMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config_fingerprint: u64,
    pub model: ToyModelConfig,
    pub vocabulary: Vocabulary,
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps attempted so far (flagged steps included).
    pub step: u64,
    pub best_oiou: Option<f64>,
    pub optimizer: OptimizerState,
    pub num_parameters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub parameters: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl Checkpoint {
    pub fn capture(
        model: &ToyResModel,
        optimizer: &AdamW,
        config_fingerprint: u64,
        epoch: usize,
        step: u64,
        best_oiou: Option<f64>,
    ) -> Self {
        Self {
            header: CheckpointHeader {
                config_fingerprint,
                model: model.config().clone(),
                vocabulary: model.vocabulary().clone(),
                epoch,
                step,
                best_oiou,
                optimizer: OptimizerState {
                    beta1: optimizer.beta1,
                    beta2: optimizer.beta2,
                    eps: optimizer.eps,
                    weight_decay: optimizer.weight_decay,
                    steps: optimizer.t,
                },
                num_parameters: model.num_parameters(),
            },
            parameters: model.parameters().to_vec(),
            adam_m: optimizer.m.clone(),
            adam_v: optimizer.v.clone(),
        }
    }

    pub fn model(&self) -> Result<ToyResModel> {
        ToyResModel::from_parameters(
            self.header.model.clone(),
            self.header.vocabulary.clone(),
            self.parameters.clone(),
        )
    }

    pub fn optimizer(&self) -> AdamW {
        let o = &self.header.optimizer;
        AdamW {
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            m: self.adam_m.clone(),
            v: self.adam_v.clone(),
            t: o.steps,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let n = self.header.num_parameters;
        let mut out = Vec::with_capacity(20 + header.len() + 24 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for block in [&self.parameters, &self.adam_m, &self.adam_v] {
            for v in block.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| "truncated magic")?;
        if &magic != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b).map_err(|_| "truncated version")?;
        let version = u32::from_le_bytes(u32b);
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b).map_err(|_| "truncated header length")?;
        let len = usize::try_from(u64::from_le_bytes(u64b)).map_err(|_| "header length overflow")?;
        if r.len() < len {
            return Err("truncated header".into());
        }
        let header: CheckpointHeader = serde_json::from_slice(&r[..len]).map_err(|e| e.to_string())?;
        r = &r[len..];
        let n = header.num_parameters;
        if r.len() != 24 * n {
            return Err(format!(
                "expected {} bytes of tensors for {n} parameters, found {}",
                24 * n,
                r.len()
            ));
        }
        let mut blocks = r.chunks_exact(8 * n.max(1)).map(|chunk| {
            chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect::<Vec<f64>>()
        });
        let (parameters, adam_m, adam_v) = if n == 0 {
            (Vec::new(), Vec::new(), Vec::new())
        } else {
            (
                blocks.next().expect("three blocks"),
                blocks.next().expect("three blocks"),
                blocks.next().expect("three blocks"),
            )
        };
        Ok(Self {
            header,
            parameters,
            adam_m,
            adam_v,
        })
    }

    /// Writes through a temporary sibling so an interrupted save never leaves a torn file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|message| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use crate::types::Expression;

    #[test]
    fn bytes_roundtrip_bit_exactly() {
        let vocab = Vocabulary::build(&[Expression::new("red circle").unwrap()]);
        let cfg = ToyModelConfig {
            stem_channels: 2,
            channels: 3,
            ..Default::default()
        };
        let model = ToyResModel::new(cfg, vocab, SeedTree::new(9)).unwrap();
        let mut opt = AdamW::new(model.num_parameters(), 0.01);
        opt.m
            .iter_mut()
            .enumerate()
            .for_each(|(i, m)| *m = (i as f64).sin() * 1e-300);
        opt.v
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i as f64).cos().abs());
        opt.t = 17;
        let ckpt = Checkpoint::capture(&model, &opt, 42, 3, 99, Some(0.5));
        let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ckpt);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.parameters), bits(model.parameters()));
        assert_eq!(back.optimizer(), opt);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        assert!(Checkpoint::from_bytes(&bytes).unwrap_err().contains("version"));
    }
}
