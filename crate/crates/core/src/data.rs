//! Patch tiling, dataset manifests and the synthetic multi-domain corpus.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::RgbImage;
use nalgebra::Matrix3;
use ndarray::{Array2, Array3, Array4, ArrayView3, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{convert_value, DomainLabel, ImageTensor, RangeTag};

/// File name of the manifest inside a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.json";

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "tif", "tiff"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One patch of one source image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub source_image_id: String,
    pub row: usize,
    pub col: usize,
    /// Location relative to the dataset directory.
    pub path: String,
    pub domain: usize,
    pub split: Split,
    /// Seed of the underlying synthetic structure, when synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub name: String,
    pub train_count: usize,
    pub test_count: usize,
    pub records: Vec<PatchRecord>,
}

/// Per-domain patch inventories with their train/test assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_domains: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub provenance: String,
    pub domains: Vec<DomainEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.domains.len() != self.num_domains {
            return Err(Error::Manifest(format!(
                "{} domain entries for num_domains = {}",
                self.domains.len(),
                self.num_domains
            )));
        }
        for (d, entry) in self.domains.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for r in &entry.records {
                if r.domain != d || r.domain >= self.num_domains {
                    return Err(Error::Manifest(format!(
                        "record {} listed under domain {d} has domain {}",
                        r.path, r.domain
                    )));
                }
                if !seen.insert((&r.source_image_id, r.row, r.col)) {
                    return Err(Error::Manifest(format!(
                        "patch ({}, {}) of {} appears twice in domain `{}`",
                        r.row, r.col, r.source_image_id, entry.name
                    )));
                }
            }
            let count = |s: Split| entry.records.iter().filter(|r| r.split == s).count();
            if count(Split::Train) != entry.train_count || count(Split::Test) != entry.test_count {
                return Err(Error::Manifest(format!(
                    "split counts of domain `{}` are stale",
                    entry.name
                )));
            }
        }
        Ok(())
    }

    pub fn domain_names(&self) -> Vec<&str> {
        self.domains.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.name == name)
    }

    pub fn records(&self, domain: usize, split: Split) -> impl Iterator<Item = &PatchRecord> {
        self.domains[domain].records.iter().filter(move |r| r.split == split)
    }

    pub fn all_records(&self, split: Split) -> impl Iterator<Item = &PatchRecord> {
        self.domains
            .iter()
            .flat_map(|d| d.records.iter())
            .filter(move |r| r.split == split)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest always serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }
}

/// A `patch_size` square cut from a larger image.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub image: RgbImage,
}

/// Non-overlapping `patch_size` tiles in row-major order. Partial edge
/// tiles are dropped.
pub fn tile_image(image: &RgbImage, patch_size: usize) -> Vec<Tile> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if patch_size == 0 || w < patch_size || h < patch_size {
        log::warn!("{w}x{h} image is smaller than the {patch_size}px patch size; no tiles");
        return Vec::new();
    }
    let ps = patch_size as u32;
    let mut out = Vec::with_capacity((h / patch_size) * (w / patch_size));
    for row in 0..h / patch_size {
        for col in 0..w / patch_size {
            let view = image::imageops::crop_imm(image, col as u32 * ps, row as u32 * ps, ps, ps);
            out.push(Tile {
                row,
                col,
                image: view.to_image(),
            });
        }
    }
    out
}

/// Mean HSV saturation in [0, 1].
pub fn mean_saturation(image: &RgbImage) -> f64 {
    let n = (image.width() * image.height()).max(1) as f64;
    image
        .pixels()
        .map(|p| {
            let max = *p.0.iter().max().unwrap() as f64;
            let min = *p.0.iter().min().unwrap() as f64;
            if max == 0.0 {
                0.0
            } else {
                (max - min) / max
            }
        })
        .sum::<f64>()
        / n
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path).map(|i| i.to_rgb8()).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn save_rgb(image: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// (3, H, W) array in [-1, 1] from 8-bit pixels.
pub fn image_to_array(image: &RgbImage) -> Array3<f64> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        convert_value(
            image.get_pixel(x as u32, y as u32).0[c] as f64,
            RangeTag::Byte,
            RangeTag::UnitSigned,
        )
    })
}

/// 8-bit image from a (3, H, W) array in `range`, rounding to nearest.
pub fn array_to_image(a: ArrayView3<'_, f64>, range: RangeTag) -> RgbImage {
    let (_, h, w) = a.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| convert_value(a[[c, y as usize, x as usize]], range, RangeTag::Byte) as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Byte-range batch of equally sized images.
pub fn images_to_tensor(images: &[&RgbImage]) -> Result<ImageTensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Input("no images to stack".into()))?;
    let (w, h) = (first.width() as usize, first.height() as usize);
    let mut data = Array4::zeros((images.len(), 3, h, w));
    for (i, img) in images.iter().enumerate() {
        if (img.width() as usize, img.height() as usize) != (w, h) {
            return Err(Error::shape(&[h, w], &[img.height() as usize, img.width() as usize]));
        }
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[i, c, y as usize, x as usize]] = p.0[c] as f64;
            }
        }
    }
    ImageTensor::new(data, RangeTag::Byte)
}

/// Train and test patch counts drawn per domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

/// Candidate patches of one domain before sampling.
#[derive(Debug, Clone)]
pub struct DomainCandidates {
    pub name: String,
    pub records: Vec<PatchRecord>,
}

/// Draws `counts.train + counts.test` patches per domain without
/// replacement; the first `train` become the training split.
pub fn build_manifest(
    candidates: Vec<DomainCandidates>,
    patch_size: usize,
    counts: SplitCounts,
    seed: u64,
    provenance: &str,
) -> Result<DatasetManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let want = counts.train + counts.test;
    let mut domains = Vec::with_capacity(candidates.len());
    for (d, cand) in candidates.into_iter().enumerate() {
        if cand.records.is_empty() {
            return Err(Error::Manifest(format!("domain `{}` has no patches", cand.name)));
        }
        if cand.records.len() < want {
            return Err(Error::InsufficientPatches {
                domain: cand.name,
                available: cand.records.len(),
                requested: want,
            });
        }
        let picked = index::sample(&mut rng, cand.records.len(), want);
        let records = picked
            .iter()
            .enumerate()
            .map(|(k, i)| PatchRecord {
                domain: d,
                split: if k < counts.train { Split::Train } else { Split::Test },
                ..cand.records[i].clone()
            })
            .collect();
        domains.push(DomainEntry {
            name: cand.name,
            train_count: counts.train,
            test_count: counts.test,
            records,
        });
    }
    let m = DatasetManifest {
        num_domains: domains.len(),
        patch_size,
        seed,
        provenance: provenance.to_string(),
        domains,
    };
    m.validate()?;
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub patch_size: usize,
    pub counts: SplitCounts,
    pub seed: u64,
    /// Drop tiles whose mean saturation falls below this value.
    pub min_saturation: Option<f64>,
}

/// Tiles every image of each domain directory into `out_dir/<domain>/`,
/// then samples the manifest, which is written to `out_dir`.
pub fn ingest(domain_dirs: &[PathBuf], out_dir: &Path, opts: &IngestOptions) -> Result<DatasetManifest> {
    let mut candidates = Vec::new();
    for dir in domain_dirs {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Input(format!("cannot name domain from {}", dir.display())))?
            .to_string();
        let files = list_images(dir)?;
        if files.is_empty() {
            return Err(Error::Manifest(format!(
                "domain directory {} has no images",
                dir.display()
            )));
        }
        let mut records = Vec::new();
        for file in files {
            let source = file.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
            for tile in tile_image(&load_rgb(&file)?, opts.patch_size) {
                if opts.min_saturation.is_some_and(|t| mean_saturation(&tile.image) < t) {
                    continue;
                }
                let rel = format!("{name}/{source}_{}_{}.png", tile.row, tile.col);
                save_rgb(&tile.image, &out_dir.join(&rel))?;
                records.push(PatchRecord {
                    source_image_id: source.clone(),
                    row: tile.row,
                    col: tile.col,
                    path: rel,
                    domain: 0,
                    split: Split::Train,
                    structure_seed: None,
                });
            }
        }
        log::info!("domain `{name}`: {} candidate patches", records.len());
        candidates.push(DomainCandidates { name, records });
    }
    let provenance = format!(
        "tiled from {}",
        domain_dirs
            .iter()
            .map(|d| d.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    let m = build_manifest(candidates, opts.patch_size, opts.counts, opts.seed, &provenance)?;
    m.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(m)
}

/// In-memory images in [-1, 1] with their domains.
#[derive(Debug, Clone, Default)]
pub struct PatchSet {
    images: Vec<Array3<f64>>,
    labels: Vec<DomainLabel>,
    ids: Vec<String>,
}

impl PatchSet {
    pub fn new(images: Vec<Array3<f64>>, labels: Vec<DomainLabel>, ids: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() || images.len() != ids.len() {
            return Err(Error::Input("images, labels and ids differ in length".into()));
        }
        if let Some(first) = images.first() {
            if let Some(bad) = images.iter().find(|i| i.dim() != first.dim()) {
                return Err(Error::shape(first.shape(), bad.shape()));
            }
        }
        Ok(Self { images, labels, ids })
    }

    /// Loads one split of a manifest whose patch paths are relative to `root`.
    pub fn from_manifest(manifest: &DatasetManifest, root: &Path, split: Split) -> Result<Self> {
        let mut set = Self::default();
        for r in manifest.all_records(split) {
            set.images.push(image_to_array(&load_rgb(&root.join(&r.path))?));
            set.labels.push(DomainLabel::new(r.domain, manifest.num_domains)?);
            set.ids.push(r.path.clone());
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Array3<f64> {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> DomainLabel {
        self.labels[i]
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn labels(&self) -> &[DomainLabel] {
        &self.labels
    }

    /// Indices of the samples from `domain`.
    pub fn of_domain(&self, domain: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i].index() == domain).collect()
    }

    /// Stacks the selected samples into a (N, 3, H, W) batch.
    pub fn batch(&self, ids: &[usize]) -> (Array4<f64>, Vec<DomainLabel>) {
        let views: Vec<ArrayView3<'_, f64>> = ids.iter().map(|&i| self.images[i].view()).collect();
        let images = ndarray::stack(Axis(0), &views).expect("patches share one shape");
        (images, ids.iter().map(|&i| self.labels[i]).collect())
    }

    /// Errors unless every domain below `k` has at least one sample.
    pub fn check_domains(&self, k: usize) -> Result<()> {
        if let Some(bad) = self.labels.iter().find(|l| l.num_domains() != k) {
            return Err(Error::Manifest(format!(
                "sample labelled for {} domains in a {k}-domain run",
                bad.num_domains()
            )));
        }
        for d in 0..k {
            if !self.labels.iter().any(|l| l.index() == d) {
                return Err(Error::Manifest(format!("domain {d} has no training patches")));
            }
        }
        Ok(())
    }
}

/// Restyling of one synthetic domain:
/// `y = tint + M·x^gamma`, channel-wise gamma on RGB in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomainSpec {
    pub name: String,
    pub mix: [[f64; 3]; 3],
    pub gamma: [f64; 3],
    pub tint: [f64; 3],
}

impl SyntheticDomainSpec {
    pub const PRESET_COUNT: usize = 4;

    /// Built-in domains. Domain 0 leaves textures unchanged; domain 3 is
    /// kept out of training as the unseen domain.
    /// Every preset maps [0, 1] into [0, 1] with gamma <= 1, so half a byte
    /// level of storage error comes back through the inverse as under one level.
    pub fn preset(index: usize) -> Result<Self> {
        let (name, mix, gamma, tint) = match index {
            0 => (
                "plain",
                [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                [1.0, 1.0, 1.0],
                [0.0, 0.0, 0.0],
            ),
            1 => (
                "cool",
                [[0.80, 0.06, 0.02], [0.04, 0.86, 0.06], [0.02, 0.06, 0.90]],
                [0.85, 1.0, 0.92],
                [0.0, 0.04, 0.02],
            ),
            2 => (
                "warm",
                [[0.92, 0.06, 0.0], [0.03, 0.80, 0.04], [0.05, 0.0, 0.80]],
                [0.9, 0.82, 1.0],
                [0.02, 0.0, 0.06],
            ),
            3 => (
                "faded",
                [[0.74, 0.08, 0.05], [0.07, 0.76, 0.05], [0.05, 0.07, 0.74]],
                [0.95, 0.95, 1.0],
                [0.1, 0.1, 0.12],
            ),
            _ => {
                return Err(Error::Config(format!(
                    "no synthetic domain preset {index} (have {})",
                    Self::PRESET_COUNT
                )))
            }
        };
        Ok(Self {
            name: name.to_string(),
            mix,
            gamma,
            tint,
        })
    }

    fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.mix[r][c])
    }

    /// 2-norm condition number of the mixing matrix.
    pub fn condition_number(&self) -> f64 {
        let sv = self.matrix().singular_values();
        sv.max() / sv.min()
    }

    /// Restyles a (3, H, W) image with values in [0, 1].
    pub fn apply(&self, x: &Array3<f64>) -> Array3<f64> {
        let mut out = Array3::zeros(x.dim());
        let (_, h, w) = x.dim();
        for yy in 0..h {
            for xx in 0..w {
                let g: [f64; 3] = std::array::from_fn(|c| x[[c, yy, xx]].max(0.0).powf(self.gamma[c]));
                for r in 0..3 {
                    out[[r, yy, xx]] = self.tint[r] + (0..3).map(|c| self.mix[r][c] * g[c]).sum::<f64>();
                }
            }
        }
        out
    }

    /// Undoes [`apply`](Self::apply).
    pub fn invert(&self, y: &Array3<f64>) -> Result<Array3<f64>> {
        let inv = self
            .matrix()
            .try_inverse()
            .ok_or_else(|| Error::Config(format!("mixing matrix of `{}` is singular", self.name)))?;
        let mut out = Array3::zeros(y.dim());
        let (_, h, w) = y.dim();
        for yy in 0..h {
            for xx in 0..w {
                for r in 0..3 {
                    let z: f64 = (0..3).map(|c| inv[(r, c)] * (y[[c, yy, xx]] - self.tint[c])).sum();
                    out[[r, yy, xx]] = z.max(0.0).powf(1.0 / self.gamma[r]);
                }
            }
        }
        Ok(out)
    }
}

/// Shape parameters of the synthetic textures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub min_blobs: usize,
    pub max_blobs: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Side of the coarse noise grid that is upsampled into the background.
    pub noise_cells: usize,
}

impl Default for TextureParams {
    fn default() -> Self {
        Self {
            min_blobs: 8,
            max_blobs: 20,
            min_radius: 3.0,
            max_radius: 12.0,
            noise_cells: 4,
        }
    }
}

const BACKGROUND: [f64; 3] = [0.86, 0.62, 0.76];
const NUCLEUS: [f64; 3] = [0.34, 0.18, 0.52];
const TEXTURE_RANGE: (f64, f64) = (0.1, 0.9);

/// Smooth background with elliptical blobs, (3, size, size) in [0.1, 0.9].
pub fn synthetic_texture(size: usize, structure_seed: u64, params: &TextureParams) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(structure_seed);
    let cells = params.noise_cells.max(1);
    let grid = Array2::from_shape_fn((cells + 1, cells + 1), |_| rng.random_range(-1.0..1.0));
    let jitter: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.03..0.03));
    let scale = cells as f64 / size as f64;
    let mut img = Array3::zeros((3, size, size));
    for y in 0..size {
        for x in 0..size {
            let (gy, gx) = (y as f64 * scale, x as f64 * scale);
            let (iy, ix) = (gy.floor() as usize, gx.floor() as usize);
            let (fy, fx) = (gy - iy as f64, gx - ix as f64);
            let n = grid[[iy, ix]] * (1.0 - fy) * (1.0 - fx)
                + grid[[iy, ix + 1]] * (1.0 - fy) * fx
                + grid[[iy + 1, ix]] * fy * (1.0 - fx)
                + grid[[iy + 1, ix + 1]] * fy * fx;
            for c in 0..3 {
                img[[c, y, x]] = BACKGROUND[c] + jitter[c] + 0.06 * n;
            }
        }
    }
    let blobs = rng.random_range(params.min_blobs..=params.max_blobs);
    for _ in 0..blobs {
        let cy = rng.random_range(0.0..size as f64);
        let cx = rng.random_range(0.0..size as f64);
        let a = rng.random_range(params.min_radius..=params.max_radius);
        let b = rng.random_range(params.min_radius..=params.max_radius);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let shade = rng.random_range(-0.06..0.06);
        let (sin, cos) = theta.sin_cos();
        let reach = a.max(b) + 1.0;
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(size);
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as usize).min(size);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let u = (dx * cos + dy * sin) / a;
                let v = (-dx * sin + dy * cos) / b;
                let r = (u * u + v * v).sqrt();
                // approximate distance to the rim, in pixels, for a soft edge
                let alpha = ((1.0 - r) * a.min(b) + 0.5).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    let core = 1.0 - 0.25 * (1.0 - r).clamp(0.0, 1.0);
                    for c in 0..3 {
                        let target = (NUCLEUS[c] + shade) * core;
                        img[[c, y, x]] = (1.0 - alpha) * img[[c, y, x]] + alpha * target;
                    }
                }
            }
        }
    }
    img.mapv_inplace(|v| v.clamp(TEXTURE_RANGE.0, TEXTURE_RANGE.1));
    img
}

/// One synthetic patch: texture `structure_seed` restyled by `spec`.
pub fn synthetic_patch(
    spec: &SyntheticDomainSpec,
    structure_seed: u64,
    size: usize,
    params: &TextureParams,
) -> RgbImage {
    let styled = spec.apply(&synthetic_texture(size, structure_seed, params));
    array_to_image(styled.view(), RangeTag::Unit)
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub num_domains: usize,
    pub per_domain: usize,
    /// How many of each domain's patches go to the test split.
    pub test_per_domain: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub texture: TextureParams,
}

impl SynthOptions {
    pub fn new(num_domains: usize, per_domain: usize, test_per_domain: usize, patch_size: usize, seed: u64) -> Self {
        Self {
            num_domains,
            per_domain,
            test_per_domain,
            patch_size,
            seed,
            texture: TextureParams::default(),
        }
    }
}

/// A synthetic dataset held in memory, one image per manifest record.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub manifest: DatasetManifest,
    pub specs: Vec<SyntheticDomainSpec>,
    /// Images in manifest record order, per domain.
    pub images: Vec<Vec<RgbImage>>,
    pub texture: TextureParams,
}

/// Structure seeds are consecutive from a seed-derived base, so no two
/// patches of a corpus (in any domain) share one.
fn structure_base(seed: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7e57).random::<u64>() >> 8
}

/// Builds `num_domains` restyled domains from disjoint texture seeds.
pub fn generate_synthetic_corpus(opts: &SynthOptions) -> Result<SyntheticCorpus> {
    if opts.num_domains < 2 {
        return Err(Error::Config(format!(
            "num_domains must be >= 2, got {}",
            opts.num_domains
        )));
    }
    if opts.test_per_domain > opts.per_domain {
        return Err(Error::Config("test_per_domain exceeds per_domain".into()));
    }
    let specs = (0..opts.num_domains)
        .map(SyntheticDomainSpec::preset)
        .collect::<Result<Vec<_>>>()?;
    let base = structure_base(opts.seed);
    let mut domains = Vec::new();
    let mut images = Vec::new();
    for (d, spec) in specs.iter().enumerate() {
        let (records, imgs) = synthetic_domain(spec, d, base + (d * opts.per_domain) as u64, opts)?;
        images.push(imgs);
        domains.push(DomainEntry {
            name: spec.name.clone(),
            train_count: opts.per_domain - opts.test_per_domain,
            test_count: opts.test_per_domain,
            records,
        });
    }
    let manifest = DatasetManifest {
        num_domains: opts.num_domains,
        patch_size: opts.patch_size,
        seed: opts.seed,
        provenance: "synthetic".into(),
        domains,
    };
    manifest.validate()?;
    Ok(SyntheticCorpus {
        manifest,
        specs,
        images,
        texture: opts.texture.clone(),
    })
}

impl SyntheticCorpus {
    /// Rebuilds the corpus a synthetic manifest was generated from, so its
    /// pixel-aligned cross-domain targets are available again. `None` for
    /// manifests of real data.
    pub fn regenerate(manifest: &DatasetManifest) -> Result<Option<SyntheticCorpus>> {
        if manifest.provenance != "synthetic" {
            return Ok(None);
        }
        let first = manifest
            .domains
            .first()
            .ok_or_else(|| Error::Manifest("manifest has no domains".into()))?;
        let opts = SynthOptions::new(
            manifest.num_domains,
            first.records.len(),
            first.test_count,
            manifest.patch_size,
            manifest.seed,
        );
        let corpus = generate_synthetic_corpus(&opts)?;
        if corpus.manifest != *manifest {
            return Err(Error::Manifest(
                "synthetic manifest does not match the corpus its parameters generate".into(),
            ));
        }
        Ok(Some(corpus))
    }
}

fn synthetic_domain(
    spec: &SyntheticDomainSpec,
    domain: usize,
    first_seed: u64,
    opts: &SynthOptions,
) -> Result<(Vec<PatchRecord>, Vec<RgbImage>)> {
    let train = opts.per_domain - opts.test_per_domain;
    let mut records = Vec::with_capacity(opts.per_domain);
    let mut imgs = Vec::with_capacity(opts.per_domain);
    for i in 0..opts.per_domain {
        let seed = first_seed + i as u64;
        let source = format!("{}_{i:05}", spec.name);
        records.push(PatchRecord {
            path: format!("{}/{source}_0_0.png", spec.name),
            source_image_id: source,
            row: 0,
            col: 0,
            domain,
            split: if i < train { Split::Train } else { Split::Test },
            structure_seed: Some(seed),
        });
        imgs.push(synthetic_patch(spec, seed, opts.patch_size, &opts.texture));
    }
    Ok((records, imgs))
}

impl SyntheticCorpus {
    /// Writes every patch plus the manifest under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (entry, imgs) in self.manifest.domains.iter().zip(&self.images) {
            for (r, img) in entry.records.iter().zip(imgs) {
                save_rgb(img, &dir.join(&r.path))?;
            }
        }
        self.manifest.save(&dir.join(MANIFEST_FILE))
    }

    pub fn patch_set(&self, split: Split) -> Result<PatchSet> {
        let mut set = PatchSet::default();
        for (entry, imgs) in self.manifest.domains.iter().zip(&self.images) {
            for (r, img) in entry.records.iter().zip(imgs) {
                if r.split == split {
                    set.images.push(image_to_array(img));
                    set.labels.push(DomainLabel::new(r.domain, self.manifest.num_domains)?);
                    set.ids.push(r.path.clone());
                }
            }
        }
        Ok(set)
    }

    /// The same structure rendered in another domain; the pixel-aligned
    /// target for a translation of `record`.
    pub fn paired_target(&self, record: &PatchRecord, domain: usize) -> Option<RgbImage> {
        let seed = record.structure_seed?;
        let spec = self.specs.get(domain)?;
        Some(synthetic_patch(spec, seed, self.manifest.patch_size, &self.texture))
    }

    /// Patches of a further preset domain whose structure seeds follow
    /// every seed used by the corpus.
    pub fn unseen_domain(&self, preset: usize, count: usize) -> Result<UnseenSet> {
        let spec = SyntheticDomainSpec::preset(preset)?;
        let per = self.manifest.domains.iter().map(|d| d.records.len()).max().unwrap_or(0);
        let first = structure_base(self.manifest.seed) + (self.manifest.num_domains * per) as u64;
        let opts = SynthOptions {
            num_domains: self.manifest.num_domains,
            per_domain: count,
            test_per_domain: count,
            patch_size: self.manifest.patch_size,
            seed: self.manifest.seed,
            texture: self.texture.clone(),
        };
        let (records, images) = synthetic_domain(&spec, self.manifest.num_domains, first, &opts)?;
        Ok(UnseenSet {
            name: spec.name,
            ids: records.into_iter().map(|r| r.path).collect(),
            images,
        })
    }
}

/// Patches of a domain the networks never saw, for forward translation only.
#[derive(Debug, Clone)]
pub struct UnseenSet {
    pub name: String,
    pub ids: Vec<String>,
    pub images: Vec<RgbImage>,
}

impl UnseenSet {
    pub fn arrays(&self) -> Vec<Array3<f64>> {
        self.images.iter().map(image_to_array).collect()
    }
}

/// Tiles every image in `extra_domain_dir` at the manifest's patch size.
pub fn holdout_unseen_domain(manifest: &DatasetManifest, extra_domain_dir: &Path) -> Result<UnseenSet> {
    let name = extra_domain_dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("unseen")
        .to_string();
    let mut set = UnseenSet {
        name,
        ids: Vec::new(),
        images: Vec::new(),
    };
    for file in list_images(extra_domain_dir)? {
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        for t in tile_image(&load_rgb(&file)?, manifest.patch_size) {
            set.ids.push(format!("{stem}_{}_{}", t.row, t.col));
            set.images.push(t.image);
        }
    }
    Ok(set)
}
