use std::path::{Path, PathBuf};

use image::RgbImage;
use multipath_core::ablation::{run_ablation, AblationEval, SourceGroup};
use multipath_core::data::{
    array_to_image, generate_synthetic_corpus, image_to_array, ingest as ingest_patches, list_images, load_rgb,
    save_rgb, IngestOptions, PatchSet, Split, SplitCounts, SynthOptions, SyntheticCorpus, MANIFEST_FILE,
};
use multipath_core::embed::{embed_patches, save_embeddings, Embedder, EmbeddingSource};
use multipath_core::metrics::{evaluate_pair_set, DomainClassifier, FitOptions, MetricReport, PairSet};
use multipath_core::networks::{Checkpoint, FeatureExtractor, FeatureExtractorSpec, Generator, GeneratorSpec};
use multipath_core::training::{run_training, RunOutput, CHECKPOINT_FILE, STEP_LOG_FILE};
use multipath_core::{DomainLabel, Error, ImageTensor, LossToggles, RangeTag, Result};
use ndarray::Array3;
use serde_json::json;

use crate::grid::side_by_side;
use crate::setup::{
    domain_index, domain_names, load_generator, load_manifest, output_dir, output_file, resolve_config, Summary,
};
use crate::{AblateArgs, EmbedArgs, EvaluateArgs, IngestArgs, SynthArgs, TrainArgs, TranslateArgs};

/// Translation batch size for every command that runs the generator.
const EVAL_BATCH: usize = 16;

const CONFIG_FILE: &str = "config.toml";

pub fn ingest(a: IngestArgs, root: &Path) -> Result<Summary> {
    let out = output_dir(a.out, root, "ingest")?;
    let opts = IngestOptions {
        patch_size: a.patch_size,
        counts: SplitCounts {
            train: a.train,
            test: a.test,
        },
        seed: a.seed,
        min_saturation: a.min_saturation,
    };
    let manifest = ingest_patches(&a.domain_dirs, &out, &opts)?;
    let mut counts = serde_json::Map::new();
    for d in &manifest.domains {
        println!("{}\ttrain {}\ttest {}", d.name, d.train_count, d.test_count);
        counts.insert(d.name.clone(), json!({"train": d.train_count, "test": d.test_count}));
    }
    let mut s = Summary::new("ingest");
    s.artifacts.push(out.join(MANIFEST_FILE));
    s.details = json!({ "domains": counts, "patch_size": manifest.patch_size });
    Ok(s)
}

pub fn synth(a: SynthArgs, root: &Path) -> Result<Summary> {
    let out = output_dir(a.out, root, "synth")?;
    let corpus = generate_synthetic_corpus(&SynthOptions::new(
        a.domains,
        a.per_domain,
        a.test_per_domain,
        a.patch_size,
        a.seed,
    ))?;
    corpus.write(&out)?;
    let mut s = Summary::new("synth");
    s.artifacts.push(out.join(MANIFEST_FILE));
    let mut details = json!({ "domains": domain_names(&corpus.manifest) });
    if a.unseen > 0 {
        let preset = corpus.manifest.num_domains;
        let unseen = corpus.unseen_domain(preset, a.unseen)?;
        let dir = out.join("unseen").join(&unseen.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (id, img) in unseen.ids.iter().zip(&unseen.images) {
            save_rgb(img, &dir.join(file_name(id)))?;
        }
        details["unseen"] = json!({ "name": unseen.name, "dir": dir, "count": unseen.images.len() });
        s.artifacts.push(dir);
    }
    s.details = details;
    Ok(s)
}

pub fn train(a: TrainArgs, root: &Path) -> Result<Summary> {
    let (manifest, data_root) = load_manifest(&a.manifest)?;
    let cfg = resolve_config(&a.config, Some(&manifest))?;
    let out = output_dir(a.out, root, "train")?;
    let data = PatchSet::from_manifest(&manifest, &data_root, Split::Train)?;
    let run = run_training(
        &cfg,
        &data,
        &RunOutput {
            dir: Some(out.clone()),
            resume: a.resume,
        },
    )?;
    let state = &run.trainer.state;
    let mut s = Summary::new("train");
    s.artifacts.extend([out.join(CHECKPOINT_FILE), out.join(CONFIG_FILE)]);
    if !run.logs.is_empty() {
        s.artifacts.push(out.join(STEP_LOG_FILE));
    }
    s.details = json!({
        "epochs": state.epoch,
        "global_step": state.global_step,
        "g_steps": state.g_steps,
        "last": run.logs.last().map(|l| l.losses),
    });
    Ok(s)
}

/// Final path component of a patch id such as `cool/img_0_1.png`.
fn file_name(id: &str) -> String {
    Path::new(id)
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or(id)
        .to_string()
}

fn stem(id: &str) -> String {
    Path::new(id)
        .file_stem()
        .and_then(|n| n.to_str())
        .unwrap_or(id)
        .to_string()
}

/// Translates `inputs` (each (3, H, W) in [-1, 1]) into `target`.
fn translate_all(generator: &Generator, inputs: &[Array3<f64>], target: DomainLabel) -> Result<Vec<RgbImage>> {
    let mut out = Vec::with_capacity(inputs.len());
    // inputs may differ in size, so only equal-shaped neighbours share a batch
    let mut start = 0;
    while start < inputs.len() {
        let dim = inputs[start].dim();
        let mut end = start + 1;
        while end < inputs.len() && end - start < EVAL_BATCH && inputs[end].dim() == dim {
            end += 1;
        }
        let views: Vec<_> = inputs[start..end].iter().map(|a| a.view()).collect();
        let x = ImageTensor::stack(&views, RangeTag::UnitSigned)?;
        let y = generator.translate(&x, &vec![target; end - start])?;
        out.extend((0..end - start).map(|k| array_to_image(y.sample(k), RangeTag::UnitSigned)));
        start = end;
    }
    Ok(out)
}

pub fn translate(a: TranslateArgs, root: &Path) -> Result<Summary> {
    let (generator, cfg) = load_generator(&a.checkpoint)?;
    let manifest = a.manifest.as_deref().map(load_manifest).transpose()?;
    let names: Vec<String> = match &manifest {
        Some((m, _)) => domain_names(m),
        None => (0..cfg.num_domains).map(|d| format!("domain{d}")).collect(),
    };
    if names.len() != cfg.num_domains {
        return Err(Error::Input(format!(
            "manifest has {} domains but the checkpoint was trained on {}",
            names.len(),
            cfg.num_domains
        )));
    }

    let (ids, inputs): (Vec<String>, Vec<Array3<f64>>) = match (&a.input_dir, &manifest) {
        (Some(dir), _) => {
            let files = list_images(dir)?;
            let mut ids = Vec::new();
            let mut inputs = Vec::new();
            for f in files {
                ids.push(f.file_name().and_then(|n| n.to_str()).unwrap_or("image").to_string());
                inputs.push(image_to_array(&load_rgb(&f)?));
            }
            (ids, inputs)
        }
        (None, Some((m, data_root))) => {
            let split = a.split.map_or(Split::Test, Split::from);
            let set = PatchSet::from_manifest(m, data_root, split)?;
            (0..set.len())
                .map(|i| (set.id(i).to_string(), set.image(i).clone()))
                .unzip()
        }
        (None, None) => return Err(Error::Input("translate needs --input-dir or --manifest".into())),
    };
    if inputs.is_empty() {
        return Err(Error::Input("no images to translate".into()));
    }

    let targets: Vec<usize> = if a.target.is_empty() {
        (0..names.len()).collect()
    } else {
        a.target
            .iter()
            .map(|t| domain_index(t, &names))
            .collect::<Result<_>>()?
    };

    let out = output_dir(a.out, root, "translate")?;
    let mut s = Summary::new("translate");
    let mut per_target = Vec::new();
    for &t in &targets {
        let label = DomainLabel::new(t, names.len())?;
        let images = translate_all(&generator, &inputs, label)?;
        let dir = out.join(&names[t]);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (id, img) in ids.iter().zip(&images) {
            let path = dir.join(format!("{}.png", stem(id)));
            save_rgb(img, &path)?;
            s.artifacts.push(path);
        }
        per_target.push(images);
    }
    if a.grid {
        let dir = out.join("grid");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, id) in ids.iter().enumerate() {
            let input = array_to_image(inputs[i].view(), RangeTag::UnitSigned);
            let mut panels = vec![&input];
            panels.extend(per_target.iter().map(|imgs| &imgs[i]));
            let path = dir.join(format!("{}.png", stem(id)));
            save_rgb(&side_by_side(&panels), &path)?;
            s.artifacts.push(path);
        }
    }
    cfg.save(&out.join(CONFIG_FILE))?;
    s.artifacts.push(out.join(CONFIG_FILE));
    s.details = json!({
        "inputs": ids.len(),
        "targets": targets.iter().map(|&t| &names[t]).collect::<Vec<_>>(),
        "grid": a.grid,
    });
    Ok(s)
}

/// Per-domain groups of a split, with paired targets for synthetic data.
fn source_groups(
    manifest: &multipath_core::data::DatasetManifest,
    data_root: &Path,
    split: Split,
) -> Result<Vec<SourceGroup>> {
    let set = PatchSet::from_manifest(manifest, data_root, split)?;
    let groups = SourceGroup::from_patch_set(&set, &domain_names(manifest));
    match SyntheticCorpus::regenerate(manifest)? {
        Some(corpus) => groups.into_iter().map(|g| g.with_synthetic_targets(&corpus)).collect(),
        None => Ok(groups),
    }
}

pub fn evaluate(a: EvaluateArgs, root: &Path) -> Result<Summary> {
    let (generator, cfg) = load_generator(&a.checkpoint)?;
    let (manifest, data_root) = load_manifest(&a.manifest)?;
    let names = domain_names(&manifest);
    if names.len() != cfg.num_domains {
        return Err(Error::Input(format!(
            "manifest has {} domains but the checkpoint was trained on {}",
            names.len(),
            cfg.num_domains
        )));
    }
    let pairs: Vec<(usize, usize)> = if a.pairs.is_empty() {
        (0..names.len())
            .flat_map(|s| (0..names.len()).filter(move |&t| t != s).map(move |t| (s, t)))
            .collect()
    } else {
        a.pairs
            .iter()
            .map(|p| {
                let (src, dst) = p
                    .split_once(':')
                    .ok_or_else(|| Error::Input(format!("pair `{p}` is not source:target")))?;
                Ok((domain_index(src, &names)?, domain_index(dst, &names)?))
            })
            .collect::<Result<_>>()?
    };

    let groups = source_groups(&manifest, &data_root, a.split.into())?;
    let mut report = MetricReport::default();
    for (src, dst) in &pairs {
        let g = &groups[*src];
        let set = PairSet {
            source_name: &g.name,
            target_name: &names[*dst],
            target: DomainLabel::new(*dst, names.len())?,
            ids: &g.ids,
            inputs: &g.inputs,
            targets: g.targets.as_ref().map(|t| t[*dst].as_slice()),
        };
        report.extend(evaluate_pair_set(&generator, &set, EVAL_BATCH)?);
    }

    let path = output_file(a.out, root, "evaluate", "report.tsv")?;
    report.save(&path)?;
    let config_path = path.with_file_name(CONFIG_FILE);
    cfg.save(&config_path)?;
    let means = report.means();
    let mut s = Summary::new("evaluate");
    s.artifacts.extend([path, config_path]);
    s.details = json!({ "rows": report.rows.len(), "mean": means });
    Ok(s)
}

fn parse_rows(labels: &[String]) -> Result<Vec<LossToggles>> {
    let all = LossToggles::ablation_rows();
    if labels.is_empty() {
        return Ok(all.to_vec());
    }
    labels
        .iter()
        .map(|l| {
            all.iter().copied().find(|t| t.label() == *l).ok_or_else(|| {
                let known: Vec<String> = all.iter().map(LossToggles::label).collect();
                Error::Input(format!(
                    "unknown ablation row `{l}`; expected one of {}",
                    known.join(", ")
                ))
            })
        })
        .collect()
}

pub fn ablate(a: AblateArgs, root: &Path) -> Result<Summary> {
    let (manifest, data_root) = load_manifest(&a.manifest)?;
    let base = resolve_config(&a.config, Some(&manifest))?;
    let rows = parse_rows(&a.rows)?;
    let out = output_dir(a.out, root, "ablate")?;
    let names = domain_names(&manifest);

    let train = PatchSet::from_manifest(&manifest, &data_root, Split::Train)?;
    let images: Vec<Array3<f64>> = (0..train.len()).map(|i| train.image(i).clone()).collect();
    let labels: Vec<usize> = train.labels().iter().map(|l| l.index()).collect();
    let classifier = DomainClassifier::fit(&images, &labels, names.len(), FitOptions::default())?;
    let groups = source_groups(&manifest, &data_root, Split::Test)?;

    base.save(&out.join(CONFIG_FILE))?;
    let eval = AblationEval {
        groups: &groups,
        target_names: &names,
        classifier: Some(&classifier),
        batch_size: EVAL_BATCH,
    };
    let table = run_ablation(&base, &rows, &train, &eval, Some(&out))?;
    print!("{}", table.to_tsv());

    let mut s = Summary::new("ablate");
    s.artifacts.extend([out.join("ablation.tsv"), out.join(CONFIG_FILE)]);
    for r in &table.rows {
        s.artifacts.push(out.join(&r.label).join(CHECKPOINT_FILE));
        s.artifacts.push(out.join(&r.label).join("metrics.tsv"));
    }
    s.details = json!({ "rows": table.rows });
    Ok(s)
}

pub fn embed(a: EmbedArgs, root: &Path) -> Result<Summary> {
    let (manifest, data_root) = load_manifest(&a.manifest)?;
    let source: EmbeddingSource = a.source.parse()?;
    let checkpoint = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let cfg = match &checkpoint {
        Some(ck) => ck.meta.config.clone(),
        None => resolve_config(&a.config, Some(&manifest))?,
    };
    let set = PatchSet::from_manifest(&manifest, &data_root, a.split.into())?;
    let names = domain_names(&manifest);

    let rows = match source {
        EmbeddingSource::Extractor => {
            let extractor = FeatureExtractor::build(&FeatureExtractorSpec::from_config(&cfg))?;
            embed_patches(&Embedder::Extractor(&extractor), &set, &names, EVAL_BATCH)?
        }
        EmbeddingSource::Bottleneck => {
            let ck = checkpoint.ok_or_else(|| Error::Input("bottleneck embeddings need --checkpoint".into()))?;
            let generator = Generator::from_params(GeneratorSpec::from_config(&cfg), ck.generator)?;
            embed_patches(&Embedder::Bottleneck(&generator), &set, &names, EVAL_BATCH)?
        }
    };
    let path: PathBuf = output_file(a.out, root, "embed", "embeddings.tsv")?;
    save_embeddings(&path, &rows)?;
    let mut s = Summary::new("embed");
    s.artifacts.push(path);
    s.details = json!({
        "patches": rows.len(),
        "dimension": rows.first().map_or(0, |r| r.vector.len()),
    });
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_rows_by_label() {
        assert_eq!(parse_rows(&[]).unwrap().len(), 6);
        let rows = parse_rows(&["adv+cyc+c+p".into(), "adv".into()]).unwrap();
        assert_eq!(rows, vec![LossToggles::FULL, LossToggles::new(false, false, false)]);
        assert!(parse_rows(&["adv+x".into()]).is_err());
    }

    #[test]
    fn patch_ids_to_file_names() {
        assert_eq!(file_name("cool/a_0_1.png"), "a_0_1.png");
        assert_eq!(stem("cool/a_0_1.png"), "a_0_1");
    }
}
