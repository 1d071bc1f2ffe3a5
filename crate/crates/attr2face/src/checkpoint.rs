//! Versioned checkpoint bundles.
//!
//! Layout (little-endian): magic `A2FCKPT\0`, `u32` format version, `u64`
//! metadata length, metadata as JSON, `u32` tensor count, then per tensor
//! `u32` name length, UTF-8 name, `u8` dtype (1 = f64), `u32` rank, `u64`
//! per dimension and the values. Files are written to a temporary path and
//! renamed into place.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use attr2face_core::config::TrainConfig;
use attr2face_core::optim::Adam;
use attr2face_core::params::ParamStore;
use attr2face_core::predictor::{AttributePredictor, PREDICTOR_VERSION};
use attr2face_core::train::{Trainer, SKETCH_G};
use attr2face_core::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::config_hash;
use crate::error::{format_err, io_err, Error, Result};

pub const MAGIC: &[u8; 8] = b"A2FCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
const OPT_M: &str = "opt.m.";
const OPT_V: &str = "opt.v.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleKind {
    Pipeline,
    Predictor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub kind: BundleKind,
    pub seed: u64,
    pub step: u64,
    pub config_hash: String,
    /// Hash of the sketch-generator parameters, linking a face-stage run to
    /// the sketch stage it was trained on.
    pub stage1_hash: String,
    pub config: Option<TrainConfig>,
    /// Adam step counters per network prefix.
    pub optimizer_steps: BTreeMap<String, u64>,
    pub predictor_version: Option<String>,
    pub predictor_resolution: Option<usize>,
}

/// Metadata plus named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub meta: Metadata,
    pub tensors: Vec<(String, Tensor)>,
}

impl Bundle {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Config(e.to_string()))?;
        let mut w = Vec::new();
        let io = (|| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
            w.write_u64::<LittleEndian>(meta.len() as u64)?;
            w.write_all(&meta)?;
            w.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
            for (name, t) in &self.tensors {
                w.write_u32::<LittleEndian>(name.len() as u32)?;
                w.write_all(name.as_bytes())?;
                w.write_u8(DTYPE_F64)?;
                w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
                for &d in t.shape() {
                    w.write_u64::<LittleEndian>(d as u64)?;
                }
                for &v in t.data() {
                    w.write_f64::<LittleEndian>(v)?;
                }
            }
            Ok(())
        })();
        io.map_err(io_err("<memory>"))?;
        Ok(w)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| format_err(path, m);
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let trunc = |_| format_err(path, "truncated checkpoint");
        let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.read_u64::<LittleEndian>().map_err(trunc)? as usize;
        if meta_len > bytes.len() {
            return Err(bad("metadata length exceeds file size".into()));
        }
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta).map_err(trunc)?;
        let meta: Metadata = serde_json::from_slice(&meta).map_err(|e| bad(format!("metadata: {e}")))?;
        let count = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
            let mut name = vec![0u8; len.min(bytes.len())];
            r.read_exact(&mut name).map_err(trunc)?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8".into()))?;
            let dtype = r.read_u8().map_err(trunc)?;
            if dtype != DTYPE_F64 {
                return Err(bad(format!("tensor {name}: unsupported dtype {dtype}")));
            }
            let rank = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.read_u64::<LittleEndian>().map_err(trunc)? as usize);
            }
            let n: usize = shape.iter().product();
            if n.saturating_mul(8) > bytes.len() {
                return Err(bad(format!("tensor {name} exceeds file size")));
            }
            let mut data = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut data).map_err(trunc)?;
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes after the last tensor".into()));
        }
        Ok(Self { meta, tensors })
    }

    /// Atomic write: temporary file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(&bytes).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(path, &bytes)
    }
}

/// SHA-256 of a file, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash of every parameter whose name starts with `prefix`, in store order.
pub fn params_hash(store: &ParamStore, prefix: &str) -> String {
    let mut h = Sha256::new();
    for (name, t) in store.iter().filter(|(n, _)| n.starts_with(prefix)) {
        h.update(name.as_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn store_tensors(store: &ParamStore) -> Vec<(String, Tensor)> {
    store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

fn optimizer_tensors(store: &ParamStore, adam: &Adam, out: &mut Vec<(String, Tensor)>) {
    for (i, &id) in adam.params.iter().enumerate() {
        let name = store.name(id);
        out.push((format!("{OPT_M}{name}"), adam.m[i].clone()));
        out.push((format!("{OPT_V}{name}"), adam.v[i].clone()));
    }
}

/// Parameters, buffers, optimizer state and step of a trainer.
pub fn trainer_bundle(trainer: &Trainer) -> Bundle {
    let store = &trainer.pipeline.store;
    let mut tensors = store_tensors(store);
    let mut steps = BTreeMap::new();
    for (prefix, adam) in trainer.optimizers.iter() {
        optimizer_tensors(store, adam, &mut tensors);
        steps.insert(prefix.to_string(), adam.t);
    }
    Bundle {
        meta: Metadata {
            kind: BundleKind::Pipeline,
            seed: trainer.config.seed,
            step: trainer.step,
            config_hash: config_hash(&trainer.config),
            stage1_hash: params_hash(store, &format!("{SKETCH_G}.")),
            config: Some(trainer.config.clone()),
            optimizer_steps: steps,
            predictor_version: None,
            predictor_resolution: None,
        },
        tensors,
    }
}

fn require_pipeline(path: &Path, b: &Bundle) -> Result<TrainConfig> {
    if b.meta.kind != BundleKind::Pipeline {
        return Err(format_err(path, "not a pipeline checkpoint"));
    }
    b.meta.config.clone().ok_or_else(|| format_err(path, "checkpoint lacks its configuration"))
}

/// Rebuilds a trainer, including optimizer state, from a bundle.
pub fn trainer_from_bundle(path: &Path, b: &Bundle) -> Result<Trainer> {
    let config = require_pipeline(path, b)?;
    if config_hash(&config) != b.meta.config_hash {
        return Err(format_err(path, "stored configuration does not match its hash"));
    }
    let mut trainer = Trainer::new(config)?;
    trainer.pipeline.store.load_from(|n| b.get(n))?;
    let store = &trainer.pipeline.store;
    for (prefix, adam) in trainer.optimizers.iter_mut() {
        for (i, &id) in adam.params.iter().enumerate() {
            let name = store.name(id);
            let m = b.get(&format!("{OPT_M}{name}")).ok_or_else(|| format_err(path, format!("missing optimizer state for {name}")))?;
            let v = b.get(&format!("{OPT_V}{name}")).ok_or_else(|| format_err(path, format!("missing optimizer state for {name}")))?;
            if m.shape() != adam.m[i].shape() || v.shape() != adam.v[i].shape() {
                return Err(format_err(path, format!("optimizer state shape mismatch for {name}")));
            }
            adam.m[i] = m.clone();
            adam.v[i] = v.clone();
        }
        adam.t = *b.meta.optimizer_steps.get(prefix).ok_or_else(|| format_err(path, format!("missing step count for {prefix}")))?;
    }
    trainer.step = b.meta.step;
    Ok(trainer)
}

pub fn save_trainer(trainer: &Trainer, path: &Path) -> Result<()> {
    trainer_bundle(trainer).save(path)
}

pub fn load_trainer(path: &Path) -> Result<Trainer> {
    trainer_from_bundle(path, &Bundle::load(path)?)
}

/// Copies the sketch-generator parameters and buffers of a checkpoint into
/// `trainer` (used to start a face-stage run from a trained sketch stage).
pub fn load_sketch_stage(trainer: &mut Trainer, path: &Path) -> Result<String> {
    let b = Bundle::load(path)?;
    let cfg = require_pipeline(path, &b)?;
    if cfg.model() != trainer.config.model() {
        return Err(format_err(path, "sketch-stage checkpoint has a different model configuration"));
    }
    let prefix = format!("{SKETCH_G}.");
    let store = &mut trainer.pipeline.store;
    for id in store.with_prefix(&prefix) {
        let name = store.name(id).to_string();
        let t = b.get(&name).ok_or_else(|| format_err(path, format!("missing tensor {name}")))?;
        store.set(id, t.clone())?;
    }
    Ok(params_hash(store, &prefix))
}

pub fn save_predictor(p: &AttributePredictor, seed: u64, path: &Path) -> Result<()> {
    Bundle {
        meta: Metadata {
            kind: BundleKind::Predictor,
            seed,
            step: 0,
            config_hash: String::new(),
            stage1_hash: String::new(),
            config: None,
            optimizer_steps: BTreeMap::new(),
            predictor_version: Some(PREDICTOR_VERSION.to_string()),
            predictor_resolution: Some(p.resolution()),
        },
        tensors: store_tensors(&p.store),
    }
    .save(path)
}

pub fn load_predictor(path: &Path) -> Result<AttributePredictor> {
    let b = Bundle::load(path)?;
    if b.meta.kind != BundleKind::Predictor {
        return Err(format_err(path, "not a predictor checkpoint"));
    }
    if b.meta.predictor_version.as_deref() != Some(PREDICTOR_VERSION) {
        return Err(format_err(path, format!("predictor version {:?} is not {PREDICTOR_VERSION}", b.meta.predictor_version)));
    }
    let r = b.meta.predictor_resolution.ok_or_else(|| format_err(path, "missing predictor resolution"))?;
    let mut p = AttributePredictor::new(r, b.meta.seed)?;
    p.store.load_from(|n| b.get(n))?;
    Ok(p)
}
