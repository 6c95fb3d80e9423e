//! Per-patch feature vectors for external projection tools (t-SNE, UMAP).

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array4;

use crate::autograd::{no_grad, Var};
use crate::data::PatchSet;
use crate::error::{Error, Result};
use crate::networks::{FeatureExtractor, Generator};

/// Which network layer a vector is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    /// The frozen feature extractor's tapped layer.
    Extractor,
    /// The generator's residual bottleneck, conditioned on the patch's own
    /// domain.
    Bottleneck,
}

impl FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extractor" => Ok(Self::Extractor),
            "bottleneck" => Ok(Self::Bottleneck),
            other => Err(Error::Config(format!("unknown embedding source `{other}`"))),
        }
    }
}

pub enum Embedder<'a> {
    Extractor(&'a FeatureExtractor),
    Bottleneck(&'a Generator),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub id: String,
    pub domain: String,
    pub vector: Vec<f64>,
}

/// Spatially mean-pooled activations, one vector per patch of `set`.
pub fn embed_patches(
    embedder: &Embedder<'_>,
    set: &PatchSet,
    domain_names: &[String],
    batch_size: usize,
) -> Result<Vec<Embedding>> {
    let mut out = Vec::with_capacity(set.len());
    let ids: Vec<usize> = (0..set.len()).collect();
    for chunk in ids.chunks(batch_size.max(1)) {
        let (images, labels): (Array4<f64>, _) = set.batch(chunk);
        let x = Var::constant(images.into_dyn());
        let features = no_grad(|| match embedder {
            Embedder::Extractor(e) => e.extract(&x),
            Embedder::Bottleneck(g) => {
                let p = g.params().bind(false);
                g.encode(&p, &x, &labels)
            }
        })?;
        let pooled = features.mean_axes(&[2, 3]);
        let v = pooled.value();
        let width = v.shape()[1];
        for (k, &i) in chunk.iter().enumerate() {
            let domain = set.label(i).index();
            out.push(Embedding {
                id: set.id(i).to_string(),
                domain: domain_names.get(domain).cloned().unwrap_or_else(|| domain.to_string()),
                vector: (0..width).map(|c| v[[k, c, 0, 0]]).collect(),
            });
        }
    }
    Ok(out)
}

/// Tab-separated: `id`, `domain`, then `f0 .. f{d-1}`.
pub fn embeddings_to_tsv(rows: &[Embedding]) -> String {
    let dim = rows.first().map_or(0, |r| r.vector.len());
    let mut out = String::from("id\tdomain");
    for c in 0..dim {
        let _ = write!(out, "\tf{c}");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.id);
        out.push('\t');
        out.push_str(&r.domain);
        for v in &r.vector {
            let _ = write!(out, "\t{v:.8}");
        }
        out.push('\n');
    }
    out
}

pub fn save_embeddings(path: &Path, rows: &[Embedding]) -> Result<()> {
    std::fs::write(path, embeddings_to_tsv(rows)).map_err(|e| Error::io(path, e))
}
