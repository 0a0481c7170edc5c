//! Versioned binary checkpoints.
//!
//! Layout, all little-endian: magic `VCKP`, version u16, model config as
//! length-prefixed JSON, global step u64, parameter count u32, then per
//! parameter: name (u32 length + UTF-8), rank u32, dims (u32 each), f32
//! payload. A trailing flag byte marks an optional optimizer block: optimizer
//! step u64 plus first/second moment payloads aligned with the parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::optim::Adam;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VCKP";
pub const CHECKPOINT_VERSION: u16 = 1;

pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

pub struct Checkpoint {
    pub config: ModelConfig,
    /// Global training step (paired-batch updates) at save time.
    pub step: u64,
    pub params: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub optimizer: Option<OptimizerState>,
}

pub fn save(path: &Path, model: &Model, step: u64, optimizer: Option<&Adam>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    let config_json = serde_json::to_vec(&model.config)
        .map_err(|e| Error::Contract(format!("config serialization failed: {}", e)))?;
    w.write_all(&(config_json.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&config_json).map_err(io_err)?;
    w.write_all(&step.to_le_bytes()).map_err(io_err)?;

    let params = model.named_params();
    w.write_all(&(params.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, t) in params {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        let shape = t.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes()).map_err(io_err)?;
        for d in &shape {
            w.write_all(&(*d as u32).to_le_bytes()).map_err(io_err)?;
        }
        for v in t.to_vec() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }

    match optimizer {
        Some(opt) if opt.m.len() == params.len() => {
            w.write_all(&[1u8]).map_err(io_err)?;
            w.write_all(&opt.step.to_le_bytes()).map_err(io_err)?;
            for buf in opt.m.iter().chain(opt.v.iter()) {
                for v in buf {
                    w.write_all(&v.to_le_bytes()).map_err(io_err)?;
                }
            }
        }
        _ => w.write_all(&[0u8]).map_err(io_err)?,
    }
    w.flush().map_err(io_err)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let trunc = |what: &str| Error::Truncated {
        path: path.display().to_string(),
        detail: format!("short read in {}", what),
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| trunc("magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            expected: "VCKP",
        });
    }
    let version = read_u16(&mut r).map_err(|_| trunc("version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.display().to_string(),
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let config_len = read_u32(&mut r).map_err(|_| trunc("config length"))? as usize;
    let mut config_json = vec![0u8; config_len];
    r.read_exact(&mut config_json).map_err(|_| trunc("config"))?;
    let config: ModelConfig = serde_json::from_slice(&config_json).map_err(|e| Error::Truncated {
        path: path.display().to_string(),
        detail: format!("config block is not valid JSON: {}", e),
    })?;
    let step = read_u64(&mut r).map_err(|_| trunc("step"))?;

    let count = read_u32(&mut r).map_err(|_| trunc("param count"))? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r).map_err(|_| trunc("param name length"))? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| trunc("param name"))?;
        let name = String::from_utf8(name).map_err(|_| Error::Truncated {
            path: path.display().to_string(),
            detail: "param name is not UTF-8".into(),
        })?;
        let rank = read_u32(&mut r).map_err(|_| trunc("param rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r).map_err(|_| trunc("param dims"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = read_f32s(&mut r, numel).map_err(|_| trunc(&format!("param '{}'", name)))?;
        params.push((name, shape, data));
    }

    let mut flag = [0u8; 1];
    r.read_exact(&mut flag).map_err(|_| trunc("optimizer flag"))?;
    let optimizer = if flag[0] == 1 {
        let opt_step = read_u64(&mut r).map_err(|_| trunc("optimizer step"))?;
        let mut m = Vec::with_capacity(count);
        for (name, _, data) in &params {
            m.push(read_f32s(&mut r, data.len()).map_err(|_| trunc(&format!("m of '{}'", name)))?);
        }
        let mut v = Vec::with_capacity(count);
        for (name, _, data) in &params {
            v.push(read_f32s(&mut r, data.len()).map_err(|_| trunc(&format!("v of '{}'", name)))?);
        }
        Some(OptimizerState { step: opt_step, m, v })
    } else {
        None
    };

    Ok(Checkpoint {
        config,
        step,
        params,
        optimizer,
    })
}

impl Checkpoint {
    /// Rebuild a model with this checkpoint's config and weights. Names and
    /// shapes must match the freshly constructed registry exactly.
    pub fn build_model(&self) -> Result<Model> {
        let model = Model::new(self.config.clone(), 0)?;
        let registry = model.named_params();
        if registry.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "checkpoint has {} params, model expects {}",
                self.params.len(),
                registry.len()
            )));
        }
        for ((reg_name, tensor), (name, shape, data)) in registry.iter().zip(&self.params) {
            if reg_name != name {
                return Err(Error::Contract(format!(
                    "checkpoint param '{}' does not match model param '{}'",
                    name, reg_name
                )));
            }
            if &tensor.shape() != shape {
                return Err(Error::DimMismatch {
                    expected: tensor.numel(),
                    found: data.len(),
                });
            }
            tensor.set_data(data);
        }
        Ok(model)
    }

    /// Restore an optimizer aligned with `build_model`'s parameter order.
    pub fn build_optimizer(&self, config: crate::tensor::optim::AdamConfig) -> Option<Adam> {
        let state = self.optimizer.as_ref()?;
        let mut adam = Adam::new(config);
        adam.step = state.step;
        adam.m = state.m.clone();
        adam.v = state.v.clone();
        Some(adam)
    }
}

fn read_u16(r: &mut impl Read) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BertConfig, Phase};
    use crate::tensor::optim::AdamConfig;
    use crate::tensor::Tensor;

    fn tiny_model(seed: u64) -> Model {
        Model::new(
            ModelConfig {
                feature_dim: 6,
                bert: BertConfig {
                    layers: 1,
                    heads: 2,
                    seq_len: 3,
                    ..Default::default()
                },
                ..Default::default()
            },
            seed,
        )
        .unwrap()
    }

    fn forward_fingerprint(model: &Model) -> (Vec<u32>, u32) {
        let snippets = Tensor::constant(
            (0..18).map(|i| (i as f32 - 9.0) / 9.0).collect(),
            vec![3, 6],
        )
        .unwrap();
        let pooling = Tensor::constant(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![3, 3],
        )
        .unwrap();
        let out = model.forward(&snippets, &pooling, &mut Phase::Eval).unwrap();
        (
            out.scores.to_vec().iter().map(|v| v.to_bits()).collect(),
            out.p_video.value().to_bits(),
        )
    }

    #[test]
    fn save_load_forward_is_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vckp");
        let model = tiny_model(42);
        let before = forward_fingerprint(&model);
        save(&path, &model, 17, None).unwrap();

        let ckpt = load(&path).unwrap();
        assert_eq!(ckpt.step, 17);
        assert!(ckpt.optimizer.is_none());
        let restored = ckpt.build_model().unwrap();
        assert_eq!(forward_fingerprint(&restored), before);
    }

    #[test]
    fn optimizer_state_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vckp");
        let model = tiny_model(1);

        let mut opt = Adam::new(AdamConfig::default());
        let tensors = model.param_tensors();
        let out = forward_fingerprint(&model);
        let _ = out;
        // Produce nontrivial moments with one real step.
        model.zero_grads();
        let snippets = Tensor::constant((0..18).map(|i| i as f32 / 18.0).collect(), vec![3, 6]).unwrap();
        let pooling = Tensor::constant(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![3, 3]).unwrap();
        let o = model.forward(&snippets, &pooling, &mut Phase::Eval).unwrap();
        o.scores.sum().backward().unwrap();
        opt.step(&tensors, None);

        save(&path, &model, 5, Some(&opt)).unwrap();
        let ckpt = load(&path).unwrap();
        let state = ckpt.optimizer.as_ref().unwrap();
        assert_eq!(state.step, 1);
        assert_eq!(state.m.len(), model.named_params().len());
        for (a, b) in state.m.iter().zip(&opt.m) {
            assert_eq!(a, b);
        }
        let restored = ckpt.build_optimizer(AdamConfig::default()).unwrap();
        assert_eq!(restored.step, 1);
        assert_eq!(restored.v, opt.v);
    }

    #[test]
    fn corrupted_files_raise_specific_errors() {
        let dir = tempfile::tempdir().unwrap();

        let bad_magic = dir.path().join("bad.vckp");
        std::fs::write(&bad_magic, b"XXXX").unwrap();
        assert!(matches!(load(&bad_magic), Err(Error::BadMagic { .. })));

        let path = dir.path().join("m.vckp");
        save(&path, &tiny_model(0), 0, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let short = dir.path().join("short.vckp");
        std::fs::write(&short, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load(&short), Err(Error::Truncated { .. })));

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 99;
        let wv = dir.path().join("wv.vckp");
        std::fs::write(&wv, &wrong_version).unwrap();
        assert!(matches!(load(&wv), Err(Error::VersionMismatch { found: 99, .. })));
    }

    #[test]
    fn config_travels_with_the_weights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vckp");
        let model = tiny_model(3);
        save(&path, &model, 0, None).unwrap();
        let ckpt = load(&path).unwrap();
        assert_eq!(ckpt.config.feature_dim, 6);
        assert_eq!(ckpt.config.bert.seq_len, 3);
        assert_eq!(ckpt.config.bert.heads, 2);
    }
}
