//! Shared plumbing: output locations, config resolution, loading.

use std::path::{Path, PathBuf};

use multipath_core::data::DatasetManifest;
use multipath_core::networks::{Checkpoint, Generator, GeneratorSpec};
use multipath_core::{Error, Result, RunConfig};
use serde_json::{json, Value};

use crate::ConfigArgs;

/// What a command produced, printed as one JSON line on success.
#[derive(Debug)]
pub struct Summary {
    pub command: &'static str,
    pub artifacts: Vec<PathBuf>,
    pub details: Value,
}

impl Summary {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            artifacts: Vec::new(),
            details: json!({}),
        }
    }

    /// Fails unless every declared artifact exists and files are non-empty.
    pub fn validated(self) -> Result<Self> {
        for a in &self.artifacts {
            let ok = std::fs::metadata(a).map(|m| m.is_dir() || m.len() > 0).unwrap_or(false);
            if !ok {
                return Err(Error::Input(format!("declared output {} was not written", a.display())));
            }
        }
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        json!({
            "command": self.command,
            "artifacts": self.artifacts,
            "details": self.details,
        })
        .to_string()
    }
}

/// `explicit`, or `<root>/<command>`.
pub fn output_dir(explicit: Option<PathBuf>, root: &Path, command: &str) -> Result<PathBuf> {
    let dir = explicit.unwrap_or_else(|| root.join(command));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Output file: `explicit`, or `<root>/<command>/<default_name>`.
pub fn output_file(explicit: Option<PathBuf>, root: &Path, command: &str, default_name: &str) -> Result<PathBuf> {
    let path = explicit.unwrap_or_else(|| root.join(command).join(default_name));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(path)
}

/// Loads a manifest; patch paths inside it are relative to its folder.
pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let manifest = DatasetManifest::load(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, root))
}

pub fn domain_names(manifest: &DatasetManifest) -> Vec<String> {
    manifest.domain_names().into_iter().map(str::to_string).collect()
}

/// Defaults, then the config file, then `--set` overrides. The data shape
/// (domain count, patch size) always comes from the manifest.
pub fn resolve_config(args: &ConfigArgs, manifest: Option<&DatasetManifest>) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(m) = manifest {
        if cfg.num_domains != m.num_domains || cfg.patch_size != m.patch_size {
            log::info!(
                "using the manifest's {} domains and {} px patches",
                m.num_domains,
                m.patch_size
            );
        }
        cfg.num_domains = m.num_domains;
        cfg.patch_size = m.patch_size;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_generator(checkpoint: &Path) -> Result<(Generator, RunConfig)> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = ck.meta.config.clone();
    let generator = Generator::from_params(GeneratorSpec::from_config(&cfg), ck.generator)?;
    Ok((generator, cfg))
}

/// Resolves a domain given by name or index.
pub fn domain_index(spec: &str, names: &[String]) -> Result<usize> {
    if let Some(i) = names.iter().position(|n| n == spec) {
        return Ok(i);
    }
    match spec.parse::<usize>() {
        Ok(i) if i < names.len() => Ok(i),
        _ => Err(Error::Input(format!(
            "unknown domain `{spec}`; expected one of {}",
            names.join(", ")
        ))),
    }
}
