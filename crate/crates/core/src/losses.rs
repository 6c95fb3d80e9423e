//! Loss terms and the two training objectives.
//!
//! The critic objective is `-adv_critic + λ_gp·gp + λ_C·cls_real` and the
//! generator objective is `adv_gen + λ_C·cls_fake + λ_Cyc·cyc + λ_P·perc`,
//! where terms switched off in [`LossToggles`] contribute nothing.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{self, Var};
use crate::config::{LossToggles, RunConfig};
use crate::error::{Error, Result};
use crate::types::DomainLabel;

/// Added under the square root of the gradient norm so a vanishing
/// gradient has a finite derivative.
const NORM_FLOOR: f64 = 1e-16;

/// `(adv_critic, adv_gen)` from critic score maps of real and fake batches.
///
/// `adv_critic = mean(d_real) - mean(d_fake)`, `adv_gen = -mean(d_fake)`.
/// The real-score term is constant in the generator and is left out of
/// `adv_gen`.
pub fn adversarial_terms(d_real: &Var, d_fake: &Var) -> (Var, Var) {
    let real = d_real.mean();
    let fake = d_fake.mean();
    (real.sub(&fake), fake.neg())
}

/// Points on the segments between paired real and fake samples.
pub struct InterpolatedSample {
    pub x_hat: Var,
    pub eps: Vec<f64>,
}

/// `eps·x_real + (1 - eps)·x_fake` with one `eps` per sample, as a fresh
/// leaf so the critic's input gradient can be taken at it.
pub fn interpolate(x_real: &Var, x_fake: &Var, eps: &[f64]) -> Result<InterpolatedSample> {
    if x_real.shape() != x_fake.shape() {
        return Err(Error::shape(x_real.shape(), x_fake.shape()));
    }
    let n = x_real.shape()[0];
    if eps.len() != n {
        return Err(Error::Input(format!(
            "{} mixing coefficients for {n} samples",
            eps.len()
        )));
    }
    let mut shape = vec![1; x_real.shape().len()];
    shape[0] = n;
    let e = ArrayD::from_shape_vec(IxDyn(&shape), eps.to_vec()).expect("eps shape");
    let one_minus = e.mapv(|v| 1.0 - v);
    let x_hat = x_real.value() * &e + x_fake.value() * &one_minus;
    Ok(InterpolatedSample {
        x_hat: Var::leaf(x_hat),
        eps: eps.to_vec(),
    })
}

pub fn sample_mixing(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// `mean_n (‖∇ D_S(x̂_n)‖₂ - 1)²` where the norm runs over all input
/// elements of a sample and `D_S(x̂_n)` is the sum of its score map.
///
/// The result stays differentiable with respect to the critic's parameters.
pub fn gradient_penalty<F>(critic: F, x_real: &Var, x_fake: &Var, eps: &[f64]) -> Result<Var>
where
    F: Fn(&Var) -> Result<Var>,
{
    let sample = interpolate(x_real, x_fake, eps)?;
    penalty_at(critic, &sample.x_hat)
}

/// Gradient penalty at given interpolates (which must be a graph leaf).
pub fn penalty_at<F>(critic: F, x_hat: &Var) -> Result<Var>
where
    F: Fn(&Var) -> Result<Var>,
{
    let scores = critic(x_hat)?;
    let g = autograd::grad(&scores.sum(), &[x_hat], true).remove(0);
    let axes: Vec<usize> = (1..g.shape().len()).collect();
    let norm = g.square().sum_axes(&axes).add_scalar(NORM_FLOOR).sqrt();
    Ok(norm.add_scalar(-1.0).square().mean())
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn domain_classification(logits: &Var, labels: &[DomainLabel]) -> Result<Var> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Input(format!(
            "logits of shape {s:?} do not match {} labels",
            labels.len()
        )));
    }
    let k = s[1];
    let mut onehot = ArrayD::zeros(IxDyn(&[s[0], k]));
    for (i, l) in labels.iter().enumerate() {
        if l.index() >= k {
            return Err(Error::Input(format!("label {} out of range for {k} logits", l.index())));
        }
        onehot[[i, l.index()]] = 1.0;
    }
    let ll = logits.log_softmax().mul(&Var::constant(onehot)).sum();
    Ok(ll.scale(-1.0 / s[0] as f64))
}

/// Classification of real images into their source domains.
pub fn domain_classification_real(logits: &Var, y_org: &[DomainLabel]) -> Result<Var> {
    domain_classification(logits, y_org)
}

/// Classification of translated images into their target domains. The
/// caller binds the critic's parameters as constants so only the
/// generator receives this gradient.
pub fn domain_classification_fake(logits_of_fake: &Var, y_trg: &[DomainLabel]) -> Result<Var> {
    domain_classification(logits_of_fake, y_trg)
}

/// Mean absolute difference between an image and its reconstruction.
pub fn cycle_reconstruction(x: &Var, x_rec: &Var) -> Result<Var> {
    if x.shape() != x_rec.shape() {
        return Err(Error::shape(x.shape(), x_rec.shape()));
    }
    Ok(x.sub(x_rec).abs().mean())
}

/// Weighted sum over channels of the per-channel mean squared difference
/// between two (N, C, H, W) feature maps. `None` weights every channel by
/// `1 / C`, which makes the result the global mean squared difference.
pub fn perceptual_distance(feat_x: &Var, feat_y: &Var, weights: Option<&[f64]>) -> Result<Var> {
    if feat_x.shape() != feat_y.shape() {
        return Err(Error::shape(feat_x.shape(), feat_y.shape()));
    }
    let s = feat_x.shape();
    if s.len() != 4 {
        return Err(Error::Input(format!("feature maps must be 4-D, got {s:?}")));
    }
    let c = s[1];
    let w = match weights {
        Some(w) if w.len() != c => {
            return Err(Error::Input(format!("{} weights for {c} feature maps", w.len())));
        }
        Some(w) => w.to_vec(),
        None => vec![1.0 / c as f64; c],
    };
    let per_channel = feat_x.sub(feat_y).square().mean_axes(&[0, 2, 3]);
    let w = Var::constant(ArrayD::from_shape_vec(IxDyn(&[1, c, 1, 1]), w).expect("weights shape"));
    Ok(per_channel.mul(&w).sum())
}

/// Arithmetic needed to compose objectives, shared by plain numbers and
/// graph values so both follow one formula.
pub trait LossTerm: Clone {
    fn zero() -> Self;
    fn plus(&self, other: &Self) -> Self;
    fn times(&self, c: f64) -> Self;
}

impl LossTerm for f64 {
    fn zero() -> Self {
        0.0
    }
    fn plus(&self, other: &Self) -> Self {
        self + other
    }
    fn times(&self, c: f64) -> Self {
        self * c
    }
}

impl LossTerm for Var {
    fn zero() -> Self {
        Var::scalar(0.0)
    }
    fn plus(&self, other: &Self) -> Self {
        self.add(other)
    }
    fn times(&self, c: f64) -> Self {
        self.scale(c)
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorParts<T> {
    pub adv_critic: T,
    pub gp: T,
    pub cls_real: T,
}

#[derive(Debug, Clone)]
pub struct GeneratorParts<T> {
    pub adv_gen: T,
    pub cls_fake: T,
    pub cyc: T,
    pub perc: T,
}

/// `-(adv_critic - λ_gp·gp) + λ_C·cls_real`.
pub fn discriminator_objective<T: LossTerm>(parts: &DiscriminatorParts<T>, cfg: &RunConfig) -> T {
    let adv = parts.adv_critic.plus(&parts.gp.times(-cfg.lambda_gp));
    let mut total = adv.times(-1.0);
    if cfg.toggles.cls {
        total = total.plus(&parts.cls_real.times(cfg.lambda_cls));
    }
    total
}

/// `adv_gen + λ_C·cls_fake + λ_Cyc·cyc + λ_P·perc`, honoring the toggles.
pub fn generator_objective<T: LossTerm>(parts: &GeneratorParts<T>, cfg: &RunConfig) -> T {
    let LossToggles { cls, cyc, perc, .. } = cfg.toggles;
    let mut total = parts.adv_gen.clone();
    for (on, term, weight) in [
        (cls, &parts.cls_fake, cfg.lambda_cls),
        (cyc, &parts.cyc, cfg.lambda_cyc),
        (perc, &parts.perc, cfg.lambda_perc),
    ] {
        if on {
            total = total.plus(&term.times(weight));
        }
    }
    total
}

/// Scalar loss values of one step with both composite objectives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub adv_d: f64,
    pub adv_g: f64,
    pub gp: f64,
    pub cls_real: f64,
    pub cls_fake: f64,
    pub cyc: f64,
    pub perc: f64,
    pub total_d: f64,
    pub total_g: f64,
}

impl LossBundle {
    /// Fills in both totals from the components.
    pub fn compose(mut self, cfg: &RunConfig) -> Self {
        self.total_d = discriminator_objective(
            &DiscriminatorParts {
                adv_critic: self.adv_d,
                gp: self.gp,
                cls_real: self.cls_real,
            },
            cfg,
        );
        self.total_g = generator_objective(
            &GeneratorParts {
                adv_gen: self.adv_g,
                cls_fake: self.cls_fake,
                cyc: self.cyc,
                perc: self.perc,
            },
            cfg,
        );
        self
    }

    /// Full adversarial value including the penalty term.
    pub fn adversarial_full(&self, cfg: &RunConfig) -> f64 {
        self.adv_d - cfg.lambda_gp * self.gp
    }

    /// Name and value of every field.
    pub fn fields(&self) -> [(&'static str, f64); 9] {
        [
            ("adv_d", self.adv_d),
            ("adv_g", self.adv_g),
            ("gp", self.gp),
            ("cls_real", self.cls_real),
            ("cls_fake", self.cls_fake),
            ("cyc", self.cyc),
            ("perc", self.perc),
            ("total_d", self.total_d),
            ("total_g", self.total_g),
        ]
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.fields().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }
}
