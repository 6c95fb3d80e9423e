//! Alternating critic/generator optimization.
//!
//! Every `critic_ratio` critic updates are followed by one generator
//! update, each on a fresh batch. An epoch is one shuffled pass over the
//! union of all domains' training patches; the cadence carries across
//! epoch boundaries.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{no_grad, Tensor, Var};
use crate::config::{LabelSampling, RunConfig};
use crate::data::PatchSet;
use crate::error::{Error, Result};
use crate::losses::{self, DiscriminatorParts, GeneratorParts, LossBundle};
use crate::networks::checkpoint::{CheckpointMeta, RngState, CHECKPOINT_VERSION};
use crate::networks::{
    Bound, Checkpoint, Discriminator, DiscriminatorSpec, FeatureExtractor, FeatureExtractorSpec, Generator,
    GeneratorSpec, ParamStore,
};
use crate::types::DomainLabel;

/// File name of the rolling checkpoint inside a run directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
/// File name of the line-delimited step log inside a run directory.
pub const STEP_LOG_FILE: &str = "steps.jsonl";

const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64) -> Self {
        let mut m = ParamStore::new();
        for name in params.names() {
            let shape = params.shape_of(name).expect("name comes from the store");
            m.insert(name, Tensor::zeros(shape));
        }
        Self {
            beta1,
            beta2,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.data_mut(name).expect("gradient for a known parameter");
            let m = self.m.data_mut(name).expect("moment for a known parameter");
            let v = self.v.data_mut(name).expect("moment for a known parameter");
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.iter()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Target labels for a batch whose source labels are `org`.
pub fn sample_target_labels(
    org: &[DomainLabel],
    num_domains: usize,
    mode: LabelSampling,
    rng: &mut impl Rng,
) -> Result<Vec<DomainLabel>> {
    if num_domains < 2 {
        return Err(Error::Config(format!("num_domains must be >= 2, got {num_domains}")));
    }
    match mode {
        LabelSampling::Uniform => org
            .iter()
            .map(|_| DomainLabel::new(rng.random_range(0..num_domains), num_domains))
            .collect(),
        LabelSampling::Permute => {
            let mut out = org.to_vec();
            out.shuffle(rng);
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    D,
    G,
}

/// One line of the step log.
///
/// A critic record carries fresh critic terms and the generator terms of
/// the most recent generator step (zero before the first one); a
/// generator record the reverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub kind: StepKind,
    /// Critic updates so far, including this one.
    pub global_step: u64,
    pub g_steps: u64,
    pub epoch: usize,
    pub batch_index: usize,
    #[serde(flatten)]
    pub losses: LossBundle,
    /// `adv_d - λ_gp·gp`, the full adversarial value.
    pub adv_full: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub wall_time_s: f64,
}

impl StepLog {
    /// Equality ignoring wall-clock time.
    pub fn same_values(&self, other: &StepLog) -> bool {
        StepLog {
            wall_time_s: 0.0,
            ..self.clone()
        } == StepLog {
            wall_time_s: 0.0,
            ..other.clone()
        }
    }
}

/// Images in [-1, 1] with their source domains.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Array4<f64>,
    pub labels: Vec<DomainLabel>,
    /// Position of this batch within its epoch.
    pub index: usize,
}

/// Mutable optimization state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub global_step: u64,
    pub g_steps: u64,
    pub current_lr_g: f64,
    pub current_lr_d: f64,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    /// Critic updates since the last generator update.
    pub fn critic_steps_pending(&self, critic_ratio: usize) -> u64 {
        self.global_step - self.g_steps * critic_ratio as u64
    }
}

/// Networks plus optimization state for one run.
pub struct Trainer {
    pub cfg: RunConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub extractor: FeatureExtractor,
    pub state: TrainState,
    last: LossBundle,
    started: Instant,
}

impl Trainer {
    /// Fresh networks initialized from `cfg.seed`.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let extractor = FeatureExtractor::build(&FeatureExtractorSpec::from_config(&cfg))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let generator = Generator::new(GeneratorSpec::from_config(&cfg), &mut rng);
        let discriminator = Discriminator::new(DiscriminatorSpec::from_config(&cfg), &mut rng);
        let state = TrainState {
            epoch: 0,
            global_step: 0,
            g_steps: 0,
            current_lr_g: cfg.lr_at_epoch(0),
            current_lr_d: cfg.lr_at_epoch(0),
            adam_g: Adam::new(generator.params(), cfg.adam_beta1, cfg.adam_beta2),
            adam_d: Adam::new(discriminator.params(), cfg.adam_beta1, cfg.adam_beta2),
            rng,
        };
        Ok(Self::assemble(cfg, generator, discriminator, extractor, state))
    }

    /// Restores a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let cfg = ck.meta.config.clone();
        cfg.validate()?;
        let extractor = FeatureExtractor::build(&FeatureExtractorSpec::from_config(&cfg))?;
        let generator = Generator::from_params(GeneratorSpec::from_config(&cfg), ck.generator)?;
        let discriminator = Discriminator::from_params(DiscriminatorSpec::from_config(&cfg), ck.discriminator)?;
        let rng = match &ck.meta.rng {
            Some(s) => restore_rng(s)?,
            None => ChaCha8Rng::seed_from_u64(cfg.seed),
        };
        let mut opt = ck.optimizer;
        let mut adam = |prefix: &str, params: &ParamStore, t: u64| -> Adam {
            let mut a = Adam::new(params, cfg.adam_beta1, cfg.adam_beta2);
            if let (Some(m), Some(v)) = (opt.remove(&format!("{prefix}.m")), opt.remove(&format!("{prefix}.v"))) {
                a.m = m;
                a.v = v;
                a.t = t;
            }
            a
        };
        let adam_g = adam("g", generator.params(), ck.meta.g_steps);
        let adam_d = adam("d", discriminator.params(), ck.meta.global_step);
        let epoch = ck.meta.epoch;
        let state = TrainState {
            epoch,
            global_step: ck.meta.global_step,
            g_steps: ck.meta.g_steps,
            current_lr_g: cfg.lr_at_epoch(epoch),
            current_lr_d: cfg.lr_at_epoch(epoch),
            adam_g,
            adam_d,
            rng,
        };
        Ok(Self::assemble(cfg, generator, discriminator, extractor, state))
    }

    fn assemble(
        cfg: RunConfig,
        generator: Generator,
        discriminator: Discriminator,
        extractor: FeatureExtractor,
        state: TrainState,
    ) -> Self {
        Self {
            cfg,
            generator,
            discriminator,
            extractor,
            state,
            last: LossBundle::default(),
            started: Instant::now(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let s = &self.state;
        let optimizer = [
            ("g.m", &s.adam_g.m),
            ("g.v", &s.adam_g.v),
            ("d.m", &s.adam_d.m),
            ("d.v", &s.adam_d.v),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect();
        Checkpoint {
            meta: CheckpointMeta {
                version: CHECKPOINT_VERSION,
                config: self.cfg.clone(),
                epoch: s.epoch,
                global_step: s.global_step,
                g_steps: s.g_steps,
                rng: Some(RngState {
                    seed: s.rng.get_seed().to_vec(),
                    word_pos: s.rng.get_word_pos().to_string(),
                }),
            },
            generator: self.generator.params().clone(),
            discriminator: self.discriminator.params().clone(),
            optimizer,
        }
    }

    /// Moves to `epoch` and applies the step-decay schedule.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.state.epoch = epoch;
        self.state.current_lr_g = self.cfg.lr_at_epoch(epoch);
        self.state.current_lr_d = self.cfg.lr_at_epoch(epoch);
    }

    /// Whether the next batch belongs to the generator.
    pub fn generator_turn(&self) -> bool {
        self.state.critic_steps_pending(self.cfg.critic_ratio) >= self.cfg.critic_ratio as u64
    }

    /// Random batch order for one epoch over `data`.
    pub fn epoch_batches(&mut self, data: &PatchSet) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.state.rng);
        let bs = self.cfg.batch_size.min(order.len()).max(1);
        order.chunks_exact(bs).map(<[usize]>::to_vec).collect()
    }

    fn targets(&mut self, org: &[DomainLabel]) -> Result<Vec<DomainLabel>> {
        sample_target_labels(org, self.cfg.num_domains, self.cfg.label_sampling, &mut self.state.rng)
    }

    /// One critic update.
    pub fn train_step_d(&mut self, batch: &Batch) -> Result<StepLog> {
        let cfg = self.cfg.clone();
        let y_trg = self.targets(&batch.labels)?;
        let n = batch.labels.len();
        let eps = losses::sample_mixing(n, &mut self.state.rng);
        let x = Var::constant(batch.images.clone().into_dyn());
        let fake = no_grad(|| {
            let gp = self.generator.params().bind(false);
            self.generator.forward(&gp, &x, &y_trg)
        })?;

        let d = &self.discriminator;
        let p = d.params().bind(true);
        let real_out = d.forward(&p, &x)?;
        let fake_out = d.forward(&p, &fake)?;
        let (adv_critic, _) = losses::adversarial_terms(&real_out.source, &fake_out.source);
        let cls_real = losses::domain_classification_real(&real_out.logits, &batch.labels)?;
        let gp = losses::gradient_penalty(|v| Ok(d.forward(&p, v)?.source), &x, &fake, &eps)?;
        let parts = DiscriminatorParts {
            adv_critic,
            gp,
            cls_real,
        };
        let total = losses::discriminator_objective(&parts, &cfg);

        let bundle = LossBundle {
            adv_d: parts.adv_critic.item(),
            gp: parts.gp.item(),
            cls_real: parts.cls_real.item(),
            ..self.last
        }
        .compose(&cfg);
        self.check_finite(&bundle, batch)?;
        debug_assert!((bundle.total_d - total.item()).abs() <= 1e-9 * (1.0 + total.item().abs()));

        let grads = p.grads(&total);
        let lr = self.state.current_lr_d;
        self.state.adam_d.step(self.discriminator.params_mut(), &grads, lr);
        self.state.global_step += 1;
        self.last = bundle;
        Ok(self.record(StepKind::D, batch.index))
    }

    /// Every generator loss term for translating `x` (labelled `org`) to
    /// `y_trg`, built on the generator parameters bound in `p`. Terms
    /// switched off in the config are constant zeros.
    pub fn generator_parts(
        &self,
        p: &Bound,
        x: &Var,
        org: &[DomainLabel],
        y_trg: &[DomainLabel],
    ) -> Result<GeneratorParts<Var>> {
        let toggles = self.cfg.toggles;
        let g = &self.generator;
        let fake = g.forward(p, x, y_trg)?;
        let out = {
            let dp = self.discriminator.params().bind(false);
            self.discriminator.forward(&dp, &fake)?
        };
        let adv_gen = out.source.mean().neg();
        let cls_fake = losses::domain_classification_fake(&out.logits, y_trg)?;
        let cyc = if toggles.cyc {
            let rec = g.forward(p, &fake, org)?;
            losses::cycle_reconstruction(x, &rec)?
        } else {
            Var::scalar(0.0)
        };
        let perc = if toggles.perc {
            let fx = no_grad(|| self.extractor.extract(x))?;
            let fy = self.extractor.extract(&fake)?;
            losses::perceptual_distance(&fx, &fy, None)?
        } else {
            Var::scalar(0.0)
        };
        Ok(GeneratorParts {
            adv_gen,
            cls_fake,
            cyc,
            perc,
        })
    }

    /// One generator update.
    pub fn train_step_g(&mut self, batch: &Batch) -> Result<StepLog> {
        let cfg = self.cfg.clone();
        let y_trg = self.targets(&batch.labels)?;
        let x = Var::constant(batch.images.clone().into_dyn());
        let p = self.generator.params().bind(true);
        let parts = self.generator_parts(&p, &x, &batch.labels, &y_trg)?;
        let total = losses::generator_objective(&parts, &cfg);

        let bundle = LossBundle {
            adv_g: parts.adv_gen.item(),
            cls_fake: parts.cls_fake.item(),
            cyc: parts.cyc.item(),
            perc: parts.perc.item(),
            ..self.last
        }
        .compose(&cfg);
        self.check_finite(&bundle, batch)?;

        let grads = p.grads(&total);
        let lr = self.state.current_lr_g;
        self.state.adam_g.step(self.generator.params_mut(), &grads, lr);
        self.state.g_steps += 1;
        self.last = bundle;
        Ok(self.record(StepKind::G, batch.index))
    }

    fn check_finite(&self, bundle: &LossBundle, batch: &Batch) -> Result<()> {
        match bundle.first_non_finite() {
            None => Ok(()),
            Some(term) => {
                log::error!(
                    "non-finite {term} at step {} (epoch {}, batch {}); labels {:?}; losses {bundle:?}",
                    self.state.global_step,
                    self.state.epoch,
                    batch.index,
                    batch.labels.iter().map(|l| l.index()).collect::<Vec<_>>()
                );
                Err(Error::NonFinite {
                    term: term.to_string(),
                    step: self.state.global_step,
                    batch_index: batch.index,
                })
            }
        }
    }

    fn record(&self, kind: StepKind, batch_index: usize) -> StepLog {
        StepLog {
            kind,
            global_step: self.state.global_step,
            g_steps: self.state.g_steps,
            epoch: self.state.epoch,
            batch_index,
            losses: self.last,
            adv_full: self.last.adversarial_full(&self.cfg),
            lr_g: self.state.current_lr_g,
            lr_d: self.state.current_lr_d,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        }
    }

    /// Runs one epoch over `data`, passing each record to `sink`.
    pub fn run_epoch(&mut self, data: &PatchSet, mut sink: impl FnMut(&StepLog) -> Result<()>) -> Result<()> {
        for (index, ids) in self.epoch_batches(data).into_iter().enumerate() {
            let (images, labels) = data.batch(&ids);
            let batch = Batch { images, labels, index };
            let log = if self.generator_turn() {
                self.train_step_g(&batch)?
            } else {
                self.train_step_d(&batch)?
            };
            sink(&log)?;
        }
        Ok(())
    }
}

fn restore_rng(s: &RngState) -> Result<ChaCha8Rng> {
    let seed: [u8; 32] = s
        .seed
        .as_slice()
        .try_into()
        .map_err(|_| Error::CheckpointVersion("rng seed must be 32 bytes".into()))?;
    let pos: u128 = s
        .word_pos
        .parse()
        .map_err(|_| Error::CheckpointVersion(format!("bad rng position `{}`", s.word_pos)))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(pos);
    Ok(rng)
}

/// Result of [`run_training`].
pub struct TrainOutcome {
    pub trainer: Trainer,
    /// Records produced by this invocation (not those of resumed epochs).
    pub logs: Vec<StepLog>,
    pub checkpoint_path: Option<PathBuf>,
}

/// Where [`run_training`] writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub dir: Option<PathBuf>,
    /// Continue from the checkpoint in `dir` when one exists.
    pub resume: bool,
}

/// Trains for `cfg.epochs` epochs on `data`, checkpointing after each.
pub fn run_training(cfg: &RunConfig, data: &PatchSet, out: &RunOutput) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.check_domains(cfg.num_domains)?;
    let ck_path = out.dir.as_ref().map(|d| d.join(CHECKPOINT_FILE));
    let mut trainer = match &ck_path {
        Some(p) if out.resume && p.exists() => {
            let ck = Checkpoint::load_compatible(p, cfg)?;
            log::info!("resuming from {} at epoch {}", p.display(), ck.meta.epoch);
            let mut t = Trainer::from_checkpoint(ck)?;
            t.cfg.epochs = cfg.epochs;
            t
        }
        _ => Trainer::new(cfg.clone())?,
    };
    let mut log_file = match &out.dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            cfg.save(&d.join("config.toml"))?;
            Some(open_log(&d.join(STEP_LOG_FILE), trainer.state.epoch > 0)?)
        }
        None => None,
    };
    let save = |t: &Trainer| -> Result<()> {
        if let Some(p) = &ck_path {
            t.checkpoint().save(p)?;
        }
        Ok(())
    };
    if trainer.state.epoch == 0 {
        save(&trainer)?;
    }
    let mut logs = Vec::new();
    while trainer.state.epoch < cfg.epochs {
        let epoch = trainer.state.epoch;
        trainer.set_epoch(epoch);
        trainer.run_epoch(data, |rec| {
            if let (Some(f), Some(d)) = (log_file.as_mut(), out.dir.as_ref()) {
                let line = serde_json::to_string(rec)?;
                writeln!(f, "{line}").map_err(|e| Error::io(d.join(STEP_LOG_FILE), e))?;
            }
            logs.push(rec.clone());
            Ok(())
        })?;
        trainer.set_epoch(epoch + 1);
        if let (Some(f), Some(d)) = (log_file.as_mut(), out.dir.as_ref()) {
            f.flush().map_err(|e| Error::io(d.join(STEP_LOG_FILE), e))?;
        }
        save(&trainer)?;
        log::info!(
            "epoch {} done: {} critic / {} generator steps",
            epoch + 1,
            trainer.state.global_step,
            trainer.state.g_steps
        );
    }
    Ok(TrainOutcome {
        trainer,
        logs,
        checkpoint_path: ck_path,
    })
}

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}
