//! Frozen feature extractors for the perceptual distance.
//!
//! Parameters are bound as graph constants, so gradients flow through the
//! input image but never into the extractor.

use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{read_archive, write_archive};
use super::{conv_layer, instance_norm, normal_tensor, Bound, ParamStore};
use crate::autograd::{max_pool2d, ConvGeometry, Var};
use crate::config::{ExtractorKind, RunConfig};
use crate::error::{Error, Result};

/// One layer of the random convolutional extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomConvSpec {
    pub layers: Vec<RandomConvLayer>,
    pub seed: u64,
}

impl RandomConvSpec {
    /// Three 3x3 layers, the last two with stride two.
    pub fn with_width(width: usize, seed: u64) -> Self {
        let l = |out_channels, stride| RandomConvLayer {
            out_channels,
            kernel: 3,
            stride,
        };
        Self {
            layers: vec![l(width, 1), l(width, 2), l(width * 2, 2)],
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractorSpec {
    pub kind: ExtractorKind,
    pub random: RandomConvSpec,
    pub weights: Option<PathBuf>,
}

impl FeatureExtractorSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            kind: cfg.extractor,
            random: RandomConvSpec::with_width(cfg.extractor_width, cfg.extractor_seed),
            weights: (!cfg.extractor_weights.is_empty()).then(|| PathBuf::from(&cfg.extractor_weights)),
        }
    }
}

pub enum FeatureExtractor {
    RandomConv {
        spec: RandomConvSpec,
        params: ParamStore,
        bound: Bound,
    },
    ResNet34(ResNet34),
}

impl FeatureExtractor {
    pub fn build(spec: &FeatureExtractorSpec) -> Result<Self> {
        match spec.kind {
            ExtractorKind::FixedRandomConvnet => Ok(Self::random(spec.random.clone())),
            ExtractorKind::PretrainedResidual34 => {
                let path = spec
                    .weights
                    .as_ref()
                    .ok_or_else(|| Error::Config("pretrained_residual_34 requires extractor_weights".into()))?;
                Ok(Self::ResNet34(ResNet34::load(path)?))
            }
        }
    }

    /// Random convolutional stack with He-normal weights drawn from `spec.seed`.
    pub fn random(spec: RandomConvSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = ParamStore::new();
        let mut cin = 3;
        for (i, l) in spec.layers.iter().enumerate() {
            let fan_in = (cin * l.kernel * l.kernel) as f64;
            params.insert(
                format!("layer.{i}.weight"),
                normal_tensor(
                    &[l.out_channels, cin, l.kernel, l.kernel],
                    (2.0 / fan_in).sqrt(),
                    &mut rng,
                ),
            );
            cin = l.out_channels;
        }
        Self::random_with_params(spec, params).expect("freshly built parameters match")
    }

    /// Random-extractor architecture with caller-supplied kernels.
    pub fn random_with_params(spec: RandomConvSpec, params: ParamStore) -> Result<Self> {
        let mut cin = 3;
        for (i, l) in spec.layers.iter().enumerate() {
            let name = format!("layer.{i}.weight");
            let want = [l.out_channels, cin, l.kernel, l.kernel];
            if params.shape_of(&name) != Some(&want[..]) {
                return Err(Error::Config(format!(
                    "extractor parameter `{name}` must have shape {want:?}"
                )));
            }
            cin = l.out_channels;
        }
        let bound = params.bind(false);
        Ok(Self::RandomConv { spec, params, bound })
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Self::RandomConv { params, .. } => params,
            Self::ResNet34(r) => &r.params,
        }
    }

    /// Checksum of the frozen parameters.
    pub fn checksum(&self) -> u64 {
        self.params().checksum()
    }

    /// Activations of the last convolutional layer for `x` in [-1, 1].
    pub fn extract(&self, x: &Var) -> Result<Var> {
        if x.shape().len() != 4 || x.shape()[1] != 3 {
            return Err(Error::Input(format!(
                "extractor expects (N, 3, H, W), got {:?}",
                x.shape()
            )));
        }
        match self {
            Self::RandomConv { spec, bound, .. } => {
                // Per-image channel standardization: random kernels would
                // otherwise respond mostly to global colour, not structure.
                let mut h = instance_norm(x, bound, None);
                let last = spec.layers.len().saturating_sub(1);
                for (i, l) in spec.layers.iter().enumerate() {
                    h = conv_layer(
                        bound,
                        &format!("layer.{i}"),
                        &h,
                        ConvGeometry::new(l.stride, l.kernel / 2),
                    );
                    if i < last {
                        h = h.relu();
                    }
                }
                Ok(h)
            }
            Self::ResNet34(r) => Ok(r.forward(x)),
        }
    }
}

const RESNET34_BLOCKS: [usize; 4] = [3, 4, 6, 3];
const RESNET_WIDTHS: [usize; 4] = [64, 128, 256, 512];
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
const BN_EPS: f64 = 1e-5;
const ARCHIVE_GROUP: &str = "resnet34";

/// 34-layer residual network in inference mode, tapped after its last
/// residual stage. Parameter names follow the torchvision layout
/// (`conv1.weight`, `bn1.running_mean`, `layer1.0.conv1.weight`, ...).
pub struct ResNet34 {
    params: ParamStore,
    bound: Bound,
}

impl ResNet34 {
    fn expected_layout() -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let bn = |out: &mut Vec<(String, Vec<usize>)>, name: &str, c: usize| {
            for f in ["weight", "bias", "running_mean", "running_var"] {
                out.push((format!("{name}.{f}"), vec![c]));
            }
        };
        out.push(("conv1.weight".into(), vec![64, 3, 7, 7]));
        bn(&mut out, "bn1", 64);
        let mut cin = 64;
        for (stage, (&blocks, &width)) in RESNET34_BLOCKS.iter().zip(&RESNET_WIDTHS).enumerate() {
            for b in 0..blocks {
                let name = format!("layer{}.{b}", stage + 1);
                out.push((format!("{name}.conv1.weight"), vec![width, cin, 3, 3]));
                bn(&mut out, &format!("{name}.bn1"), width);
                out.push((format!("{name}.conv2.weight"), vec![width, width, 3, 3]));
                bn(&mut out, &format!("{name}.bn2"), width);
                if b == 0 && stage > 0 {
                    out.push((format!("{name}.downsample.0.weight"), vec![width, cin, 1, 1]));
                    bn(&mut out, &format!("{name}.downsample.1"), width);
                }
                cin = width;
            }
        }
        out
    }

    pub fn from_params(params: ParamStore) -> Result<Self> {
        for (name, shape) in Self::expected_layout() {
            match params.shape_of(&name) {
                Some(s) if s == shape.as_slice() => {}
                _ => {
                    return Err(Error::Config(format!(
                        "residual extractor weights lack `{name}` with shape {shape:?}"
                    )))
                }
            }
        }
        let bound = params.bind(false);
        Ok(Self { params, bound })
    }

    /// Reads the `resnet34` group of a parameter archive.
    pub fn load(path: &Path) -> Result<Self> {
        let (_, mut groups) = read_archive(path)?;
        let params = groups
            .remove(ARCHIVE_GROUP)
            .ok_or_else(|| Error::Config(format!("{} has no `{ARCHIVE_GROUP}` tensor group", path.display())))?;
        Self::from_params(params)
    }

    /// Writes the weights in the layout [`ResNet34::load`] reads.
    pub fn save(&self, path: &Path) -> Result<()> {
        let groups = [(ARCHIVE_GROUP.to_string(), &self.params)].into_iter().collect();
        write_archive(path, serde_json::json!({ "kind": "resnet34" }), &groups)
    }

    /// Randomly initialized weights with identity batch statistics.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in Self::expected_layout() {
            let is_bn = name.contains(".bn") || name.starts_with("bn") || name.contains("downsample.1");
            let t = if is_bn && (name.ends_with(".weight") || name.ends_with("running_var")) {
                ArrayD::ones(IxDyn(&shape))
            } else if shape.len() == 4 {
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                normal_tensor(&shape, (2.0 / fan_in).sqrt(), &mut rng)
            } else {
                ArrayD::zeros(IxDyn(&shape))
            };
            params.insert(name, t);
        }
        Self::from_params(params).expect("layout is complete")
    }

    fn batch_norm(&self, x: &Var, name: &str) -> Var {
        let g = self.bound.get(&format!("{name}.weight")).value();
        let b = self.bound.get(&format!("{name}.bias")).value();
        let m = self.bound.get(&format!("{name}.running_mean")).value();
        let v = self.bound.get(&format!("{name}.running_var")).value();
        let c = g.len();
        let scale: Vec<f64> = (0..c).map(|i| g[i] / (v[i] + BN_EPS).sqrt()).collect();
        let shift: Vec<f64> = (0..c).map(|i| b[i] - m[i] * scale[i]).collect();
        let shape = IxDyn(&[1, c, 1, 1]);
        let scale = Var::constant(ArrayD::from_shape_vec(shape.clone(), scale).expect("bn scale"));
        let shift = Var::constant(ArrayD::from_shape_vec(shape, shift).expect("bn shift"));
        x.mul(&scale).add(&shift)
    }

    fn conv(&self, x: &Var, name: &str, stride: usize, pad: usize) -> Var {
        conv_layer(&self.bound, name, x, ConvGeometry::new(stride, pad))
    }

    fn forward(&self, x: &Var) -> Var {
        // [-1, 1] -> ImageNet-normalized input
        let mean = Var::constant(ArrayD::from_shape_vec(IxDyn(&[1, 3, 1, 1]), IMAGENET_MEAN.to_vec()).expect("mean"));
        let inv_std = Var::constant(
            ArrayD::from_shape_vec(IxDyn(&[1, 3, 1, 1]), IMAGENET_STD.iter().map(|s| 1.0 / s).collect()).expect("std"),
        );
        let x = x.add_scalar(1.0).scale(0.5).sub(&mean).mul(&inv_std);
        let mut h = self.batch_norm(&self.conv(&x, "conv1", 2, 3), "bn1").relu();
        h = max_pool2d(&h, 3, 2, 1);
        for (stage, &blocks) in RESNET34_BLOCKS.iter().enumerate() {
            for b in 0..blocks {
                let name = format!("layer{}.{b}", stage + 1);
                let stride = if b == 0 && stage > 0 { 2 } else { 1 };
                let r = self.conv(&h, &format!("{name}.conv1"), stride, 1);
                let r = self.batch_norm(&r, &format!("{name}.bn1")).relu();
                let r = self.conv(&r, &format!("{name}.conv2"), 1, 1);
                let r = self.batch_norm(&r, &format!("{name}.bn2"));
                let skip = if b == 0 && stage > 0 {
                    let s = self.conv(&h, &format!("{name}.downsample.0"), stride, 0);
                    self.batch_norm(&s, &format!("{name}.downsample.1"))
                } else {
                    h.clone()
                };
                h = r.add(&skip).relu();
            }
        }
        h
    }
}
