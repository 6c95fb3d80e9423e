use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generator::check_same_layout;
use super::{conv_layer, init_conv, Bound, ParamStore};
use crate::autograd::{no_grad, ConvGeometry, Var};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::types::{ImageTensor, RangeTag};

/// Unnormalized patch critic with an auxiliary domain classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub base_width: usize,
    pub num_layers: usize,
    pub leaky_slope: f64,
    pub num_domains: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            base_width: 64,
            num_layers: 6,
            leaky_slope: 0.01,
            num_domains: 3,
        }
    }
}

impl DiscriminatorSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            base_width: cfg.d_base_width,
            num_layers: cfg.discriminator_layers(),
            leaky_slope: 0.01,
            num_domains: cfg.num_domains,
        }
    }

    pub fn deepest_width(&self) -> usize {
        self.base_width << (self.num_layers - 1)
    }
}

/// Both heads of one forward pass.
pub struct DiscriminatorOutput {
    /// Critic scores, (N, 1, H / 2^L, W / 2^L).
    pub source: Var,
    /// Unnormalized domain logits, (N, K).
    pub logits: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    params: ParamStore,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, rng: &mut impl Rng) -> Self {
        let mut p = ParamStore::new();
        let mut cin = 3;
        let mut width = spec.base_width;
        for i in 0..spec.num_layers {
            init_conv(&mut p, &format!("main.{i}"), [width, cin, 4, 4], true, rng);
            cin = width;
            width *= 2;
        }
        init_conv(&mut p, "source", [1, cin, 3, 3], false, rng);
        init_conv(&mut p, "domain", [spec.num_domains, cin, 3, 3], false, rng);
        Self { spec, params: p }
    }

    pub fn from_params(spec: DiscriminatorSpec, params: ParamStore) -> Result<Self> {
        let reference = Self::new(spec.clone(), &mut ChaCha8Rng::seed_from_u64(0));
        check_same_layout(&reference.params, &params, "discriminator")?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Deepest feature map, (N, C, H / 2^L, W / 2^L).
    pub fn features(&self, p: &Bound, x: &Var) -> Result<Var> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Input(format!("discriminator expects (N, 3, H, W), got {s:?}")));
        }
        let factor = 1usize << self.spec.num_layers;
        if !s[2].is_multiple_of(factor) || !s[3].is_multiple_of(factor) {
            return Err(Error::Input(format!(
                "spatial dims {}x{} must be divisible by {factor} for a {}-layer discriminator",
                s[2], s[3], self.spec.num_layers
            )));
        }
        let mut h = x.clone();
        for i in 0..self.spec.num_layers {
            h = conv_layer(p, &format!("main.{i}"), &h, ConvGeometry::new(2, 1)).leaky_relu(self.spec.leaky_slope);
        }
        Ok(h)
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Result<DiscriminatorOutput> {
        let h = self.features(p, x)?;
        let source = conv_layer(p, "source", &h, ConvGeometry::new(1, 1));
        let k = self.spec.num_domains;
        let logits = conv_layer(p, "domain", &h, ConvGeometry::new(1, 1))
            .mean_axes(&[2, 3])
            .reshape(&[x.shape()[0], k]);
        Ok(DiscriminatorOutput { source, logits })
    }

    /// Inference-only domain logits, (N, K).
    pub fn classify(&self, x: &ImageTensor) -> Result<Array2<f64>> {
        let x = x.convert_range(RangeTag::UnitSigned);
        let out = no_grad(|| {
            let p = self.params.bind(false);
            self.forward(&p, &Var::constant(x.data().clone().into_dyn()))
        })?;
        Ok(out
            .logits
            .value()
            .clone()
            .into_dimensionality()
            .expect("logits are 2-D"))
    }
}
