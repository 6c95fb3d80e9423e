//! Conditional generator, two-headed patch discriminator and frozen
//! feature extractor.

pub mod checkpoint;
mod discriminator;
mod extractor;
mod generator;

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{self, conv2d, ConvGeometry, Tensor, Var};

pub use checkpoint::{Checkpoint, CheckpointMeta, RngState, CHECKPOINT_VERSION};
pub use discriminator::{Discriminator, DiscriminatorOutput, DiscriminatorSpec};
pub use extractor::{FeatureExtractor, FeatureExtractorSpec, RandomConvSpec, ResNet34};
pub use generator::{Generator, GeneratorSpec};

/// Standard deviation of the zero-mean normal used for convolution weights.
pub const INIT_STD: f64 = 0.02;
/// Instance-norm stabilizer.
pub const NORM_EPS: f64 = 1e-5;

/// Named parameter arrays of one network.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: BTreeMap<String, StoredTensor>,
}

/// Serialized form of a tensor: shape plus row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl StoredTensor {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.iter().copied().collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.data.clone()).expect("stored tensor data matches its shape")
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), StoredTensor::from_tensor(&value));
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        self.tensors.get(name).map(StoredTensor::to_tensor)
    }

    pub fn shape_of(&self, name: &str) -> Option<&[usize]> {
        self.tensors.get(name).map(|t| t.shape.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// Mutable access to the flat data of one parameter.
    pub fn data_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.tensors.get_mut(name).map(|t| t.data.as_mut_slice())
    }

    pub fn data(&self, name: &str) -> Option<&[f64]> {
        self.tensors.get(name).map(|t| t.data.as_slice())
    }

    /// FNV-1a digest over names, shapes and exact bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in &self.tensors {
            eat(name.as_bytes());
            for &d in &t.shape {
                eat(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Graph leaves for every parameter. Trainable bindings receive
    /// gradients; frozen ones are constants.
    pub fn bind(&self, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    Var::leaf(t.to_tensor())
                } else {
                    Var::constant(t.to_tensor())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters of a network attached to a computation graph.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> &Var {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    /// Gradient of `loss` with respect to every bound parameter.
    pub fn grads(&self, loss: &Var) -> BTreeMap<String, Tensor> {
        let names: Vec<&String> = self.vars.keys().collect();
        let vars: Vec<&Var> = self.vars.values().collect();
        let grads = autograd::grad(loss, &vars, false);
        names
            .into_iter()
            .zip(grads)
            .map(|(n, g)| (n.clone(), g.value().clone()))
            .collect()
    }
}

pub(crate) fn normal_tensor(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    ArrayD::from_shape_fn(IxDyn(shape), |_| dist.sample(rng))
}

pub(crate) fn init_conv(store: &mut ParamStore, name: &str, shape: [usize; 4], bias: bool, rng: &mut impl Rng) {
    store.insert(format!("{name}.weight"), normal_tensor(&shape, INIT_STD, rng));
    if bias {
        store.insert(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[shape[0]])));
    }
}

pub(crate) fn init_norm(store: &mut ParamStore, name: &str, channels: usize) {
    store.insert(format!("{name}.scale"), ArrayD::ones(IxDyn(&[channels])));
    store.insert(format!("{name}.shift"), ArrayD::zeros(IxDyn(&[channels])));
}

/// Convolution with the layer's weight and optional bias.
pub(crate) fn conv_layer(p: &Bound, name: &str, x: &Var, geo: ConvGeometry) -> Var {
    let y = conv2d(x, p.get(&format!("{name}.weight")), geo);
    match p.try_get(&format!("{name}.bias")) {
        Some(b) => {
            let c = b.shape()[0];
            y.add(&b.reshape(&[1, c, 1, 1]))
        }
        None => y,
    }
}

/// Per-sample, per-channel normalization of an (N, C, H, W) tensor, with
/// the affine transform `name.scale` / `name.shift` when `name` is given.
pub(crate) fn instance_norm(x: &Var, p: &Bound, name: Option<&str>) -> Var {
    let mean = x.mean_axes(&[2, 3]);
    let centered = x.sub(&mean);
    let var = centered.square().mean_axes(&[2, 3]);
    let y = centered.mul(&var.add_scalar(NORM_EPS).powf(-0.5));
    match name {
        Some(name) => {
            let c = x.shape()[1];
            let scale = p.get(&format!("{name}.scale")).reshape(&[1, c, 1, 1]);
            let shift = p.get(&format!("{name}.shift")).reshape(&[1, c, 1, 1]);
            y.mul(&scale).add(&shift)
        }
        None => y,
    }
}
