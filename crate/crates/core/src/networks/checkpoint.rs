//! Single-file parameter archives.
//!
//! Layout: the magic `MPGANAR1`, a little-endian `u64` header length, a
//! JSON header (metadata plus the name and shape of each tensor), then the
//! tensors' `f64` values in little-endian order, concatenated in header
//! order. Names are hierarchical: `generator/res.0.conv1.weight`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::config::RunConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MPGANAR1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Writes named groups of parameters plus free-form metadata.
pub fn write_archive(path: &Path, meta: serde_json::Value, groups: &BTreeMap<String, &ParamStore>) -> Result<()> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    for (group, store) in groups {
        for name in store.names() {
            let data = store.data(name).expect("name comes from the store");
            entries.push(TensorEntry {
                name: format!("{group}/{name}"),
                shape: store.shape_of(name).expect("name comes from the store").to_vec(),
            });
            blob.reserve(data.len() * 8);
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = serde_json::to_vec(&Header { meta, tensors: entries })?;
    let tmp = path.with_extension("partial");
    let write = || -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(MAGIC)?;
        f.write_all(&(header.len() as u64).to_le_bytes())?;
        f.write_all(&header)?;
        f.write_all(&blob)?;
        f.flush()?;
        drop(f);
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads an archive back into its metadata and parameter groups.
pub fn read_archive(path: &Path) -> Result<(serde_json::Value, BTreeMap<String, ParamStore>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::CheckpointVersion(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a parameter archive"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut offset = 16 + hlen;
    let mut groups: BTreeMap<String, ParamStore> = BTreeMap::new();
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let raw = bytes
            .get(offset..offset + n * 8)
            .ok_or_else(|| bad("truncated tensor data"))?;
        offset += n * 8;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let (group, name) = entry
            .name
            .split_once('/')
            .ok_or_else(|| bad("tensor name without group"))?;
        let t = ArrayD::from_shape_vec(IxDyn(&entry.shape), data).map_err(|_| bad("tensor shape"))?;
        groups.entry(group.to_string()).or_default().insert(name, t);
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((header.meta, groups))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config: RunConfig,
    pub epoch: usize,
    pub global_step: u64,
    pub g_steps: u64,
    /// Serialized training RNG (seed and stream position).
    pub rng: Option<RngState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: Vec<u8>,
    /// Word position, as a decimal string (it is a u128).
    pub word_pos: String,
}

/// Generator, discriminator and optimizer state with the run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub generator: ParamStore,
    pub discriminator: ParamStore,
    /// Optimizer moments keyed `g.m`, `g.v`, `d.m`, `d.v`; may be empty.
    pub optimizer: BTreeMap<String, ParamStore>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut groups: BTreeMap<String, &ParamStore> = BTreeMap::new();
        groups.insert("generator".into(), &self.generator);
        groups.insert("discriminator".into(), &self.discriminator);
        for (k, v) in &self.optimizer {
            groups.insert(format!("opt.{k}"), v);
        }
        write_archive(path, serde_json::to_value(&self.meta)?, &groups)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, mut groups) = read_archive(path)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                meta.version
            )));
        }
        let generator = groups.remove("generator").unwrap_or_default();
        let discriminator = groups.remove("discriminator").unwrap_or_default();
        let optimizer = groups
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix("opt.").map(|k| (k.to_string(), v)))
            .collect();
        Ok(Self {
            meta,
            generator,
            discriminator,
            optimizer,
        })
    }

    /// Loads and checks that the stored architecture matches `cfg`.
    pub fn load_compatible(path: &Path, cfg: &RunConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        let c = &ck.meta.config;
        let fields = [
            ("num_domains", c.num_domains, cfg.num_domains),
            ("g_base_width", c.g_base_width, cfg.g_base_width),
            ("g_res_blocks", c.g_res_blocks, cfg.g_res_blocks),
            ("g_edge_kernel", c.g_edge_kernel, cfg.g_edge_kernel),
            ("d_base_width", c.d_base_width, cfg.d_base_width),
            ("d_layers", c.discriminator_layers(), cfg.discriminator_layers()),
        ];
        for (name, stored, wanted) in fields {
            if stored != wanted {
                return Err(Error::CheckpointVersion(format!(
                    "checkpoint has {name} = {stored}, configuration expects {wanted}"
                )));
            }
        }
        Ok(ck)
    }
}
