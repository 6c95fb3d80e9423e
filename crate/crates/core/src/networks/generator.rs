use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{conv_layer, init_conv, init_norm, instance_norm, Bound, ParamStore};
use crate::autograd::{concat_channels, conv2d_input_grad, no_grad, ConvGeometry, Var};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::types::{label_planes, DomainLabel, ImageTensor, RangeTag};

/// Residual encoder-decoder conditioned on a target domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub base_width: usize,
    pub num_res_blocks: usize,
    pub downsample_steps: usize,
    /// Kernel of the first and the last convolution.
    pub edge_kernel: usize,
    pub num_domains: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            base_width: 64,
            num_res_blocks: 6,
            downsample_steps: 2,
            edge_kernel: 7,
            num_domains: 3,
        }
    }
}

impl GeneratorSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            base_width: cfg.g_base_width,
            num_res_blocks: cfg.g_res_blocks,
            downsample_steps: 2,
            edge_kernel: cfg.g_edge_kernel,
            num_domains: cfg.num_domains,
        }
    }

    fn bottleneck_width(&self) -> usize {
        self.base_width << self.downsample_steps
    }
}

const IMAGE_CHANNELS: usize = 3;
const DOWN_KERNEL: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    spec: GeneratorSpec,
    params: ParamStore,
}

impl Generator {
    pub fn new(spec: GeneratorSpec, rng: &mut impl Rng) -> Self {
        let mut p = ParamStore::new();
        let w = spec.base_width;
        let k = spec.edge_kernel;
        init_conv(
            &mut p,
            "stem.conv",
            [w, IMAGE_CHANNELS + spec.num_domains, k, k],
            false,
            rng,
        );
        init_norm(&mut p, "stem.norm", w);
        let mut width = w;
        for i in 0..spec.downsample_steps {
            let name = format!("down.{i}");
            init_conv(
                &mut p,
                &format!("{name}.conv"),
                [width * 2, width, DOWN_KERNEL, DOWN_KERNEL],
                false,
                rng,
            );
            init_norm(&mut p, &format!("{name}.norm"), width * 2);
            width *= 2;
        }
        for i in 0..spec.num_res_blocks {
            let name = format!("res.{i}");
            init_conv(&mut p, &format!("{name}.conv1"), [width, width, 3, 3], false, rng);
            init_norm(&mut p, &format!("{name}.norm1"), width);
            init_conv(&mut p, &format!("{name}.conv2"), [width, width, 3, 3], false, rng);
        }
        for i in 0..spec.downsample_steps {
            let name = format!("up.{i}");
            // transposed-convolution weights are laid out (in, out, k, k)
            init_conv(
                &mut p,
                &format!("{name}.conv"),
                [width, width / 2, DOWN_KERNEL, DOWN_KERNEL],
                false,
                rng,
            );
            init_norm(&mut p, &format!("{name}.norm"), width / 2);
            width /= 2;
        }
        init_conv(&mut p, "head.conv", [IMAGE_CHANNELS, width, k, k], false, rng);
        Self { spec, params: p }
    }

    /// Rebuilds a generator from stored parameters, checking every shape.
    pub fn from_params(spec: GeneratorSpec, params: ParamStore) -> Result<Self> {
        let reference = Self::new(spec.clone(), &mut ChaCha8Rng::seed_from_u64(0));
        check_same_layout(&reference.params, &params, "generator")?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `G(x, y_trg)` on a graph. `x` is (N, 3, H, W) in [-1, 1].
    pub fn forward(&self, p: &Bound, x: &Var, labels: &[DomainLabel]) -> Result<Var> {
        let hcur = self.encode(p, x, labels)?;
        Ok(self.decode(p, &hcur))
    }

    /// Bottleneck activations: the output of the last residual block,
    /// (N, bottleneck_width, H / 2^d, W / 2^d).
    pub fn encode(&self, p: &Bound, x: &Var, labels: &[DomainLabel]) -> Result<Var> {
        let s = x.shape();
        if s.len() != 4 || s[1] != IMAGE_CHANNELS {
            return Err(Error::Input(format!("generator expects (N, 3, H, W) input, got {s:?}")));
        }
        let (n, h, w) = (s[0], s[2], s[3]);
        let factor = 1 << self.spec.downsample_steps;
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::Input(format!(
                "spatial dims {h}x{w} must be divisible by {factor}"
            )));
        }
        if labels.len() != n {
            return Err(Error::Input(format!(
                "{} labels supplied for a batch of {n}",
                labels.len()
            )));
        }
        if labels.iter().any(|l| l.num_domains() != self.spec.num_domains) {
            return Err(Error::Input(format!(
                "labels must cover {} domains",
                self.spec.num_domains
            )));
        }
        let planes = Var::constant(label_planes(labels, h, w)?.into_dyn());
        let mut hcur = concat_channels(&[x.clone(), planes]);

        let pad = self.spec.edge_kernel / 2;
        hcur = conv_layer(p, "stem.conv", &hcur, ConvGeometry::new(1, pad));
        hcur = instance_norm(&hcur, p, Some("stem.norm")).relu();
        for i in 0..self.spec.downsample_steps {
            hcur = conv_layer(p, &format!("down.{i}.conv"), &hcur, ConvGeometry::new(2, 1));
            hcur = instance_norm(&hcur, p, Some(&format!("down.{i}.norm"))).relu();
        }
        for i in 0..self.spec.num_res_blocks {
            let r = conv_layer(p, &format!("res.{i}.conv1"), &hcur, ConvGeometry::new(1, 1));
            let r = instance_norm(&r, p, Some(&format!("res.{i}.norm1"))).relu();
            let r = conv_layer(p, &format!("res.{i}.conv2"), &r, ConvGeometry::new(1, 1));
            let r = instance_norm(&r, p, None);
            hcur = hcur.add(&r);
        }
        Ok(hcur)
    }

    fn decode(&self, p: &Bound, bottleneck: &Var) -> Var {
        let mut hcur = bottleneck.clone();
        let pad = self.spec.edge_kernel / 2;
        for i in 0..self.spec.downsample_steps {
            let (hh, ww) = (hcur.shape()[2] * 2, hcur.shape()[3] * 2);
            let wgt = p.get(&format!("up.{i}.conv.weight"));
            hcur = conv2d_input_grad(&hcur, wgt, ConvGeometry::new(2, 1), (hh, ww));
            hcur = instance_norm(&hcur, p, Some(&format!("up.{i}.norm"))).relu();
        }
        conv_layer(p, "head.conv", &hcur, ConvGeometry::new(1, pad)).tanh()
    }

    /// Inference-only translation of a batch into the given domains.
    pub fn translate(&self, x: &ImageTensor, labels: &[DomainLabel]) -> Result<ImageTensor> {
        let x = x.convert_range(RangeTag::UnitSigned);
        let out = no_grad(|| {
            let p = self.params.bind(false);
            self.forward(&p, &Var::constant(x.data().clone().into_dyn()), labels)
        })?;
        let data: Array4<f64> = out
            .value()
            .clone()
            .into_dimensionality()
            .expect("generator output is 4-D");
        ImageTensor::new(data, RangeTag::UnitSigned)
    }

    pub fn bottleneck_width(&self) -> usize {
        self.spec.bottleneck_width()
    }
}

pub(crate) fn check_same_layout(reference: &ParamStore, actual: &ParamStore, what: &str) -> Result<()> {
    for name in reference.names() {
        let want = reference.shape_of(name).unwrap_or_default();
        match actual.shape_of(name) {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(Error::CheckpointVersion(format!(
                    "{what} parameter `{name}` has shape {got:?}, expected {want:?}"
                )))
            }
            None => {
                return Err(Error::CheckpointVersion(format!(
                    "{what} parameter `{name}` is missing"
                )))
            }
        }
    }
    if actual.len() != reference.len() {
        return Err(Error::CheckpointVersion(format!(
            "{what} has {} parameters, expected {}",
            actual.len(),
            reference.len()
        )));
    }
    Ok(())
}
