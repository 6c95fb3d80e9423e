//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod oracles;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use image::RgbImage;
use multipath_core::ablation::{cls_fake_trend, score_translations, SourceGroup, TranslationScore};
use multipath_core::autograd::Var;
use multipath_core::data::{
    array_to_image, generate_synthetic_corpus, synthetic_texture, tile_image, PatchSet, Split, SynthOptions,
    SyntheticCorpus, SyntheticDomainSpec, TextureParams,
};
use multipath_core::losses::{
    discriminator_objective, generator_objective, penalty_at, DiscriminatorParts, GeneratorParts, LossBundle,
};
use multipath_core::metrics::{self, DomainClassifier, FitOptions};
use multipath_core::training::{run_training, Batch, RunOutput, StepLog, TrainOutcome, Trainer};
use multipath_core::{DomainLabel, LossToggles, RangeTag, Result, RunConfig};
use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DOMAINS: usize = 3;
const PATCH: usize = 64;
const PER_DOMAIN: usize = 300;
const TEST_PER_DOMAIN: usize = 60;
const UNSEEN_PRESET: usize = 3;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

/// Tiny networks and a shortened schedule that fit the smoke budget.
fn desk_config(seed: u64, toggles: LossToggles) -> RunConfig {
    RunConfig {
        num_domains: DOMAINS,
        patch_size: PATCH,
        batch_size: 8,
        base_lr: 2e-4,
        epochs: 34,
        lr_decay_interval_epochs: 1000,
        g_base_width: 8,
        g_res_blocks: 2,
        g_edge_kernel: 3,
        d_base_width: 8,
        extractor_width: 8,
        seed,
        toggles,
        ..RunConfig::default()
    }
}

const ADV: LossToggles = LossToggles::new(false, false, false);
const ADV_CYC: LossToggles = LossToggles::new(true, false, false);
const ADV_CYC_P: LossToggles = LossToggles::new(true, false, true);
const FULL: LossToggles = LossToggles::FULL;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

// ---------------------------------------------------------------- 1

fn to_bytes(a: &Array3<f64>) -> Array3<f64> {
    a.mapv(|v| (v * 255.0).round().clamp(0.0, 255.0))
}

/// Ten or more byte-range image pairs of varied content and size.
fn metric_fixtures() -> Vec<(Array3<f64>, Array3<f64>)> {
    let params = TextureParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pairs = Vec::new();
    for (i, &size) in [64usize, 64, 48, 40, 96, 64].iter().enumerate() {
        let tex = synthetic_texture(size, 100 + i as u64, &params);
        let styled = SyntheticDomainSpec::preset(1 + i % 3).unwrap().apply(&tex);
        pairs.push((to_bytes(&tex), to_bytes(&styled)));
    }
    for (h, w) in [(64usize, 64usize), (50, 70), (33, 45), (80, 64), (64, 100)] {
        let a = Array3::from_shape_fn((3, h, w), |_| rng.random_range(0.0..255.0f64).round());
        let b = a.mapv(|v| (v + rng.random_range(-40.0..40.0f64)).round().clamp(0.0, 255.0));
        pairs.push((a, b));
    }
    pairs
}

fn criterion_1() -> Result<Outcome> {
    let fixtures = metric_fixtures();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for (a, b) in &fixtures {
        let (oa, ob) = (oracles::from_array(a), oracles::from_array(b));
        let checks = [
            ("psnr", metrics::psnr(a.view(), b.view())?, oracles::psnr(&oa, &ob)),
            ("ssim", metrics::ssim(a.view(), b.view())?, oracles::ssim(&oa, &ob)),
            (
                "ms_ssim",
                metrics::ms_ssim(a.view(), b.view())?,
                oracles::ms_ssim(&oa, &ob),
            ),
            (
                "haarpsi",
                metrics::haarpsi(a.view(), b.view())?,
                oracles::haarpsi(&oa, &ob),
            ),
        ];
        for (name, got, want) in checks {
            let e = worst.entry(name).or_insert(0.0);
            *e = e.max((got - want).abs());
        }
    }
    let oracle_ok = worst.values().all(|&e| e <= 1e-6);

    let a = &fixtures[0].0;
    let identity = [
        metrics::psnr(a.view(), a.view())? == f64::INFINITY,
        (metrics::ssim(a.view(), a.view())? - 1.0).abs() <= 1e-6,
        (metrics::ms_ssim(a.view(), a.view())? - 1.0).abs() <= 1e-6,
        (metrics::haarpsi(a.view(), a.view())? - 1.0).abs() <= 1e-6,
    ];
    let identity_ok = identity.iter().all(|&ok| ok);

    let base = Array3::from_elem((3, 32, 32), 100.0);
    let p10 = metrics::psnr(base.view(), base.mapv(|v| v + 10.0).view())?;
    let p255 = metrics::psnr(
        Array3::zeros((3, 8, 8)).view(),
        Array3::from_elem((3, 8, 8), 255.0).view(),
    )?;
    let closed_ok = (p10 - 10.0 * (255.0f64 * 255.0 / 100.0).log10()).abs() <= 1e-6
        && (p10 - 28.13).abs() < 5e-3
        && p255.abs() <= 1e-6;

    let detail = format!(
        "{} pairs, max |err| {}; identity {:?}; psnr(Δ=10) {p10:.6}, psnr(Δ=255) {p255:.1e}",
        fixtures.len(),
        worst
            .iter()
            .map(|(k, v)| format!("{k} {v:.1e}"))
            .collect::<Vec<_>>()
            .join(", "),
        identity
    );
    Ok(Outcome::new(
        fixtures.len() >= 10 && oracle_ok && identity_ok && closed_ok,
        detail,
    ))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Array4::from_shape_fn((4, 3, 5, 5), |_| rng.random_range(-1.0..1.0));
    let mut got = Vec::new();
    let mut ok = true;
    for (norm, expected) in [(0.0, 1.0), (1.0, 0.0), (3.0, 4.0)] {
        let w = Array4::from_shape_fn((1, 3, 5, 5), |_| rng.random_range(-1.0..1.0));
        let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let w = Var::constant(w.mapv(|v| v * norm / n).into_dyn());
        let x_hat = Var::leaf(x.clone().into_dyn());
        let gp = penalty_at(|v: &Var| Ok(v.mul(&w).sum_axes(&[1, 2, 3])), &x_hat)?.item();
        ok &= (gp - expected).abs() <= 1e-6;
        got.push(format!("‖w‖={norm} → {gp:.9}"));
    }
    Ok(Outcome::new(ok, got.join(", ")))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Result<Outcome> {
    // Width-1 generator: every affine/conv parameter is checked. The
    // objective is piecewise smooth (ReLU, L1, max-pool), and a central
    // difference is only meaningful where no kink lies within the step, so
    // the fixture uses an i.i.d. noise input (no flat regions whose L1
    // residuals cross zero together) and a He-scaled evaluation point.
    let cfg = RunConfig {
        num_domains: 3,
        patch_size: 16,
        batch_size: 1,
        g_base_width: 1,
        g_res_blocks: 1,
        g_edge_kernel: 3,
        d_base_width: 4,
        extractor_width: 4,
        seed: 1,
        ..RunConfig::default()
    };
    let mut trainer = Trainer::new(cfg.clone())?;
    let store = trainer.generator.params_mut();
    for name in store.names().map(str::to_string).collect::<Vec<_>>() {
        if name.ends_with(".weight") {
            let fan_in: usize = store.shape_of(&name).expect("parameter exists")[1..].iter().product();
            let scale = (2.0 / fan_in as f64).sqrt() / 0.02;
            store
                .data_mut(&name)
                .expect("parameter exists")
                .iter_mut()
                .for_each(|w| *w *= scale);
        }
    }
    let n_params = trainer.generator.params().num_scalars();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let images = Array4::from_shape_fn((1, 3, 16, 16), |_| rng.random_range(-1.0..1.0));
    let org = vec![DomainLabel::new(0, 3)?];
    let trg = vec![DomainLabel::new(1, 3)?];
    let x = Var::constant(images.into_dyn());

    let objective = |store: &multipath_core::networks::ParamStore, trainable: bool| -> Result<(Var, _)> {
        let bound = store.bind(trainable);
        let parts = trainer.generator_parts(&bound, &x, &org, &trg)?;
        Ok((generator_objective(&parts, &cfg), bound))
    };
    let (total, bound) = objective(trainer.generator.params(), true)?;
    let analytic = bound.grads(&total);

    let base = trainer.generator.params().clone();
    let h = 1e-4;
    let (mut checked, mut worst) = (0usize, (0.0f64, String::new()));
    for name in base.names() {
        for i in 0..base.data(name).map_or(0, <[f64]>::len) {
            let eval = |delta: f64| -> Result<f64> {
                let mut p = base.clone();
                p.data_mut(name).expect("parameter exists")[i] += delta;
                Ok(objective(&p, false)?.0.item())
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let a = analytic[name].as_slice().expect("contiguous")[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}]"));
            }
            checked += 1;
        }
    }
    Ok(Outcome::new(
        n_params <= 1000 && checked >= 50 && worst.0 < 1e-3,
        format!(
            "{n_params} generator parameters, {checked} checked, max relative error {:.2e} at {}",
            worst.0, worst.1
        ),
    ))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Result<Outcome> {
    let cfg = RunConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for toggles in LossToggles::ablation_rows() {
        let cfg = RunConfig { toggles, ..cfg.clone() };
        let on = |b: bool| if b { 1.0 } else { 0.0 };
        for _ in 0..100 {
            let mut v = || rng.random_range(-5.0..5.0f64);
            let (adv_d, gp, cls_real) = (v(), v().abs(), v().abs());
            let (adv_g, cls_fake, cyc, perc) = (v(), v().abs(), v().abs(), v().abs());
            let want_d = -adv_d + 10.0 * gp + on(toggles.cls) * 1.0 * cls_real;
            let want_g = adv_g
                + on(toggles.cls) * 1.0 * cls_fake
                + on(toggles.cyc) * 10.0 * cyc
                + on(toggles.perc) * 0.75 * perc;

            let got_d = discriminator_objective(
                &DiscriminatorParts {
                    adv_critic: adv_d,
                    gp,
                    cls_real,
                },
                &cfg,
            );
            let got_g = generator_objective(
                &GeneratorParts {
                    adv_gen: adv_g,
                    cls_fake,
                    cyc,
                    perc,
                },
                &cfg,
            );
            let graph_d = discriminator_objective(
                &DiscriminatorParts {
                    adv_critic: Var::scalar(adv_d),
                    gp: Var::scalar(gp),
                    cls_real: Var::scalar(cls_real),
                },
                &cfg,
            )
            .item();
            let graph_g = generator_objective(
                &GeneratorParts {
                    adv_gen: Var::scalar(adv_g),
                    cls_fake: Var::scalar(cls_fake),
                    cyc: Var::scalar(cyc),
                    perc: Var::scalar(perc),
                },
                &cfg,
            )
            .item();
            let bundle = LossBundle {
                adv_d,
                adv_g,
                gp,
                cls_real,
                cls_fake,
                cyc,
                perc,
                total_d: 0.0,
                total_g: 0.0,
            }
            .compose(&cfg);
            worst = worst.max(max_abs(&[
                got_d - want_d,
                got_g - want_g,
                graph_d - want_d,
                graph_g - want_g,
                bundle.total_d - want_d,
                bundle.total_g - want_g,
            ]));
            cases += 1;
        }
    }
    Ok(Outcome::new(
        worst <= 1e-9,
        format!("{cases} cases over 6 configurations, max |err| {worst:.1e}"),
    ))
}

// ---------------------------------------------------------------- 5

fn small_config() -> RunConfig {
    RunConfig {
        num_domains: 3,
        patch_size: 16,
        batch_size: 2,
        g_base_width: 4,
        g_res_blocks: 1,
        g_edge_kernel: 3,
        d_base_width: 4,
        extractor_width: 4,
        epochs: 1,
        seed: 5,
        ..RunConfig::default()
    }
}

fn small_data(per_domain: usize) -> Result<PatchSet> {
    generate_synthetic_corpus(&SynthOptions::new(3, per_domain, 0, 16, 5))?.patch_set(Split::Train)
}

fn criterion_5() -> Result<Outcome> {
    let data = small_data(40)?;
    let mut t = Trainer::new(small_config())?;
    let c0 = t.extractor.checksum();
    let (mut d_steps, mut g_steps, mut violations) = (0, 0, 0);
    'outer: loop {
        for (index, ids) in t.epoch_batches(&data).into_iter().enumerate() {
            if d_steps + g_steps == 50 {
                break 'outer;
            }
            let (images, labels) = data.batch(&ids);
            let batch = Batch { images, labels, index };
            let g_before = t.generator.params().checksum();
            let d_before = t.discriminator.params().checksum();
            if t.generator_turn() {
                t.train_step_g(&batch)?;
                g_steps += 1;
                violations += usize::from(t.discriminator.params().checksum() != d_before);
                violations += usize::from(t.generator.params().checksum() == g_before);
            } else {
                t.train_step_d(&batch)?;
                d_steps += 1;
                violations += usize::from(t.generator.params().checksum() != g_before);
                violations += usize::from(t.discriminator.params().checksum() == d_before);
            }
            violations += usize::from(t.extractor.checksum() != c0);
        }
    }
    Ok(Outcome::new(
        violations == 0 && d_steps > 0 && g_steps > 0,
        format!("{d_steps} critic + {g_steps} generator steps, {violations} violations"),
    ))
}

// ------------------------------------------------------- shared runs

struct Desk {
    corpus: SyntheticCorpus,
    train: PatchSet,
    names: Vec<String>,
    test_groups: Vec<SourceGroup>,
    classifier: DomainClassifier,
    classifier_test_accuracy: f64,
    runs: BTreeMap<(u64, String), (TrainOutcome, TranslationScore, Duration)>,
}

impl Desk {
    fn new() -> Result<Self> {
        let corpus = generate_synthetic_corpus(&SynthOptions::new(DOMAINS, PER_DOMAIN, TEST_PER_DOMAIN, PATCH, 0))?;
        let train = corpus.patch_set(Split::Train)?;
        let test = corpus.patch_set(Split::Test)?;
        let names: Vec<String> = corpus.manifest.domain_names().iter().map(|s| s.to_string()).collect();
        let images = |s: &PatchSet| (0..s.len()).map(|i| s.image(i).clone()).collect::<Vec<_>>();
        let labels = |s: &PatchSet| s.labels().iter().map(|l| l.index()).collect::<Vec<_>>();
        let classifier = DomainClassifier::fit(&images(&train), &labels(&train), DOMAINS, FitOptions::default())?;
        let classifier_test_accuracy = classifier.accuracy(&images(&test), &labels(&test));
        let test_groups = SourceGroup::from_patch_set(&test, &names);
        Ok(Self {
            corpus,
            train,
            names,
            test_groups,
            classifier,
            classifier_test_accuracy,
            runs: BTreeMap::new(),
        })
    }

    fn run(&mut self, seed: u64, toggles: LossToggles) -> Result<&(TrainOutcome, TranslationScore, Duration)> {
        let key = (seed, toggles.label());
        if !self.runs.contains_key(&key) {
            let started = Instant::now();
            let out = run_training(&desk_config(seed, toggles), &self.train, &RunOutput::default())?;
            let took = started.elapsed();
            let score = score_translations(
                &out.trainer.generator,
                &self.test_groups,
                &self.names,
                Some(&self.classifier),
                16,
            )?;
            eprintln!(
                "  trained {} seed {seed}: {} G steps in {:.0}s, ssim {:.4}, haarpsi {:.4}, classifier {:.3}",
                key.1,
                out.trainer.state.g_steps,
                took.as_secs_f64(),
                score.report.means().ssim,
                score.report.means().haarpsi,
                score.classifier_accuracy.unwrap_or(f64::NAN)
            );
            self.runs.insert(key.clone(), (out, score, took));
        }
        Ok(&self.runs[&key])
    }
}

fn logs_finite(logs: &[StepLog]) -> bool {
    logs.iter()
        .all(|l| l.losses.first_non_finite().is_none() && l.adv_full.is_finite())
}

// ---------------------------------------------------------------- 6

fn criterion_6(desk: &mut Desk) -> Result<Outcome> {
    let adv_ssim = desk.run(0, ADV)?.1.report.means().ssim;
    let (full, score, took) = desk.run(0, FULL)?;
    let g_steps = full.trainer.state.g_steps;
    let finite = logs_finite(&full.logs);
    let (first, last) = cls_fake_trend(&full.logs, 50).unwrap_or((f64::NAN, f64::NAN));
    let ssim = score.report.means().ssim;
    let pass = g_steps >= 500
        && *took < Duration::from_secs(30 * 60)
        && finite
        && last <= 0.5 * first
        && ssim >= 0.5
        && ssim > adv_ssim;
    Ok(Outcome::new(
        pass,
        format!(
            "{g_steps} G steps in {:.0}s; finite {finite}; cls_fake {first:.4} → {last:.4}; ssim full {ssim:.4} vs adv-only {adv_ssim:.4}",
            took.as_secs_f64()
        ),
    ))
}

// ---------------------------------------------------------------- 7

fn criterion_7(desk: &mut Desk) -> Result<Outcome> {
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in ABLATION_SEEDS {
        let mut m = BTreeMap::new();
        for toggles in [ADV, ADV_CYC, ADV_CYC_P, FULL] {
            let score = &desk.run(seed, toggles)?.1;
            let means = score.report.means();
            m.insert(
                toggles.label(),
                (means.ssim, means.haarpsi, score.classifier_accuracy.unwrap_or(0.0)),
            );
        }
        let p = m[&ADV_CYC_P.label()];
        let others = [m[&ADV.label()], m[&ADV_CYC.label()]];
        let perceptual_best = others.iter().all(|o| p.0 > o.0 && p.1 > o.1);
        let full_acc = m[&FULL.label()].2;
        let cls_helps = full_acc > p.2;
        wins += usize::from(perceptual_best && cls_helps);
        detail.push(format!(
            "seed {seed}: ssim/haarpsi adv {:.3}/{:.3} adv+cyc {:.3}/{:.3} adv+cyc+p {:.3}/{:.3}, acc full {:.3} vs adv+cyc+p {:.3}",
            others[0].0, others[0].1, others[1].0, others[1].1, p.0, p.1, full_acc, p.2
        ));
    }
    Ok(Outcome::new(
        wins >= 2,
        format!("{wins}/3 seeds ordered; {}", detail.join("; ")),
    ))
}

// ---------------------------------------------------------------- 8

fn criterion_8(desk: &mut Desk) -> Result<Outcome> {
    let unseen = desk.corpus.unseen_domain(UNSEEN_PRESET, TEST_PER_DOMAIN)?;
    let group = SourceGroup {
        name: unseen.name.clone(),
        domain: None,
        ids: unseen.ids.clone(),
        inputs: unseen.arrays(),
        targets: None,
    };
    let names = desk.names.clone();
    let classifier = desk.classifier.clone();
    let real_accuracy = desk.classifier_test_accuracy;
    let generator = &desk.run(0, FULL)?.0.trainer.generator;
    let score = score_translations(generator, &[group], &names, Some(&classifier), 16)?;
    let acc = score.classifier_accuracy.unwrap_or(0.0);
    let ssim = score.report.means().ssim;
    Ok(Outcome::new(
        acc >= 0.8 && ssim >= 0.4,
        format!(
            "{} translations from `{}`: classifier accuracy {acc:.3} (on real test patches {real_accuracy:.3}), ssim {ssim:.4}",
            score.report.rows.len(),
            unseen.name
        ),
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Result<Outcome> {
    let data = small_data(8)?;
    let cfg = RunConfig {
        epochs: 2,
        ..small_config()
    };
    let a = run_training(&cfg, &data, &RunOutput::default())?;
    let b = run_training(&cfg, &data, &RunOutput::default())?;
    let steps_ok = a.logs.len() >= 10 && a.logs[..10].iter().zip(&b.logs[..10]).all(|(x, y)| x.same_values(y));

    let dir = tempfile::tempdir().map_err(|e| multipath_core::Error::io(std::env::temp_dir(), e))?;
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let corpus = generate_synthetic_corpus(&SynthOptions::new(3, 12, 4, 32, 9))?;
        let root = dir.path().join(name);
        corpus.write(&root)?;
        let path = root.join(multipath_core::data::MANIFEST_FILE);
        files.push(std::fs::read(&path).map_err(|e| multipath_core::Error::io(&path, e))?);
    }
    let manifests_ok = files[0] == files[1];
    Ok(Outcome::new(
        steps_ok && manifests_ok,
        format!(
            "first 10 of {} step records identical: {steps_ok}; manifest files identical: {manifests_ok}",
            a.logs.len()
        ),
    ))
}

// --------------------------------------------------------------- 10

fn criterion_10() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut tiling_ok = true;
    for _ in 0..20 {
        let (w, h, ps) = (
            rng.random_range(1..600u32),
            rng.random_range(1..600u32),
            rng.random_range(16..200usize),
        );
        let tiles = tile_image(&RgbImage::new(w, h), ps);
        tiling_ok &= tiles.len() == (w as usize / ps) * (h as usize / ps);
    }

    let corpus = generate_synthetic_corpus(&SynthOptions::new(3, 40, 10, 32, 10))?;
    let mut disjoint_ok = true;
    for d in 0..3 {
        let train: BTreeSet<_> = corpus.manifest.records(d, Split::Train).map(|r| &r.path).collect();
        let test: BTreeSet<_> = corpus.manifest.records(d, Split::Test).map(|r| &r.path).collect();
        disjoint_ok &= train.is_disjoint(&test) && train.len() == 30 && test.len() == 10;
    }

    let params = TextureParams::default();
    let mut worst_levels = 0.0f64;
    for preset in 0..SyntheticDomainSpec::PRESET_COUNT {
        let spec = SyntheticDomainSpec::preset(preset)?;
        for seed in 0..5 {
            let tex = synthetic_texture(64, 1000 + seed, &params);
            let stored = array_to_image(spec.apply(&tex).view(), RangeTag::Unit);
            let back = spec.invert(&multipath_core::data::image_to_array(&stored).mapv(|v| (v + 1.0) / 2.0))?;
            let err = tex
                .iter()
                .zip(back.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_levels = worst_levels.max(err * 255.0);
        }
    }
    let invert_ok = worst_levels <= 1.0;
    Ok(Outcome::new(
        tiling_ok && disjoint_ok && invert_ok,
        format!(
            "tiling counts {tiling_ok}; splits disjoint {disjoint_ok}; worst round trip {worst_levels:.3} quantization steps"
        ),
    ))
}

fn main() {
    // numeric arguments select criteria; no selection runs all of them
    let only: BTreeSet<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: u8| only.is_empty() || only.contains(&id);
    let started = Instant::now();
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut record = |id: u8, name: &'static str, run: &mut dyn FnMut() -> Result<Outcome>| {
        if !wanted(id) {
            return;
        }
        let outcome = run().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        println!(
            "criterion {id:>2} {} {name}: {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
        results.push((id, name, outcome));
    };
    record(1, "metric oracles", &mut criterion_1);
    record(2, "gradient penalty analytics", &mut criterion_2);
    record(3, "finite differences", &mut criterion_3);
    record(4, "objective composition", &mut criterion_4);
    record(5, "update isolation", &mut criterion_5);
    if [6, 7, 8].into_iter().any(wanted) {
        match Desk::new() {
            Ok(mut desk) => {
                record(6, "smoke training", &mut || criterion_6(&mut desk));
                record(7, "ablation ordering", &mut || criterion_7(&mut desk));
                record(8, "unseen domain", &mut || criterion_8(&mut desk));
            }
            Err(e) => {
                for (id, name) in [(6, "smoke training"), (7, "ablation ordering"), (8, "unseen domain")] {
                    let msg = format!("desk setup failed: {e}");
                    record(id, name, &mut || Err(multipath_core::Error::Input(msg.clone())));
                }
            }
        }
    }
    record(9, "determinism", &mut criterion_9);
    record(10, "data pipeline", &mut criterion_10);

    let failed = results.iter().filter(|(_, _, o)| !o.pass).count();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
