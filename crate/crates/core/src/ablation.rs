//! Loss-ablation protocol: one independent seeded training per toggle
//! row, each scored on the same held-out translations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::config::{LossToggles, RunConfig};
use crate::data::{image_to_array, PatchRecord, PatchSet, Split, SyntheticCorpus};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pair_set_with, DomainClassifier, MetricMeans, MetricReport, PairSet};
use crate::networks::Generator;
use crate::training::{run_training, RunOutput, StepKind, StepLog};
use crate::types::DomainLabel;

/// Images from one source domain. `domain` is `None` for a domain the
/// generator never saw; such images are translated into every trained
/// domain instead of every other one.
#[derive(Debug, Clone)]
pub struct SourceGroup {
    pub name: String,
    pub domain: Option<usize>,
    pub ids: Vec<String>,
    /// (3, H, W) in [-1, 1].
    pub inputs: Vec<Array3<f64>>,
    /// Pixel-aligned renderings of each input in every domain, indexed
    /// `[domain][input]`, when the data is synthetic.
    pub targets: Option<Vec<Vec<Array3<f64>>>>,
}

impl SourceGroup {
    /// One group per domain of `set`, named by `names`.
    pub fn from_patch_set(set: &PatchSet, names: &[String]) -> Vec<SourceGroup> {
        names
            .iter()
            .enumerate()
            .map(|(d, name)| {
                let idx = set.of_domain(d);
                SourceGroup {
                    name: name.clone(),
                    domain: Some(d),
                    ids: idx.iter().map(|&i| set.id(i).to_string()).collect(),
                    inputs: idx.iter().map(|&i| set.image(i).clone()).collect(),
                    targets: None,
                }
            })
            .collect()
    }

    /// Attaches the corpus' paired renderings of every input, matching
    /// inputs to records by patch id.
    pub fn with_synthetic_targets(mut self, corpus: &SyntheticCorpus) -> Result<Self> {
        let records: BTreeMap<&str, &PatchRecord> = corpus
            .manifest
            .all_records(Split::Train)
            .chain(corpus.manifest.all_records(Split::Test))
            .map(|r| (r.path.as_str(), r))
            .collect();
        let mut targets = vec![Vec::with_capacity(self.ids.len()); corpus.manifest.num_domains];
        for id in &self.ids {
            let record = records
                .get(id.as_str())
                .ok_or_else(|| Error::Manifest(format!("patch `{id}` is not in the synthetic manifest")))?;
            for (d, out) in targets.iter_mut().enumerate() {
                let img = corpus
                    .paired_target(record, d)
                    .ok_or_else(|| Error::Manifest(format!("patch `{id}` has no structure seed")))?;
                out.push(image_to_array(&img));
            }
        }
        self.targets = Some(targets);
        Ok(self)
    }
}

/// Metrics of a batch of translations plus how often a domain classifier
/// recognised the requested target.
#[derive(Debug, Clone)]
pub struct TranslationScore {
    pub report: MetricReport,
    pub classifier_accuracy: Option<f64>,
}

/// Translates each group into each eligible target among `target_names`
/// and scores every translation against its input.
pub fn score_translations(
    generator: &Generator,
    groups: &[SourceGroup],
    target_names: &[String],
    classifier: Option<&DomainClassifier>,
    batch_size: usize,
) -> Result<TranslationScore> {
    let k = target_names.len();
    let mut report = MetricReport::default();
    let (mut hits, mut total) = (0usize, 0usize);
    for group in groups {
        for (t, target_name) in target_names.iter().enumerate() {
            if group.domain == Some(t) {
                continue;
            }
            let set = PairSet {
                source_name: &group.name,
                target_name,
                target: DomainLabel::new(t, k)?,
                ids: &group.ids,
                inputs: &group.inputs,
                targets: group.targets.as_ref().map(|all| all[t].as_slice()),
            };
            report.extend(evaluate_pair_set_with(generator, &set, batch_size, |_, y| {
                if let Some(c) = classifier {
                    hits += usize::from(c.predict(y) == t);
                    total += 1;
                }
            })?);
        }
    }
    let classifier_accuracy = classifier.map(|_| hits as f64 / total.max(1) as f64);
    Ok(TranslationScore {
        report,
        classifier_accuracy,
    })
}

/// Mean generator-side classification loss on fakes over the first and
/// last `window` generator steps.
pub fn cls_fake_trend(logs: &[StepLog], window: usize) -> Option<(f64, f64)> {
    let g: Vec<f64> = logs
        .iter()
        .filter(|l| l.kind == StepKind::G)
        .map(|l| l.losses.cls_fake)
        .collect();
    if window == 0 || g.len() < window {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&g[..window]), mean(&g[g.len() - window..])))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub toggles: LossToggles,
    pub seed: u64,
    pub g_steps: u64,
    pub means: MetricMeans,
    pub classifier_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, toggles: LossToggles, seed: u64) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.toggles == toggles && r.seed == seed)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("config\tseed\tg_steps\tpsnr\tssim\tms_ssim\thaarpsi\tclassifier_acc\n");
        for r in &self.rows {
            let acc = r.classifier_accuracy.map_or_else(|| "NA".into(), |a| format!("{a:.4}"));
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.4}\t{:.6}\t{:.6}\t{:.6}\t{acc}",
                r.label, r.seed, r.g_steps, r.means.psnr, r.means.ssim, r.means.ms_ssim, r.means.haarpsi
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// What to evaluate each ablation run on.
pub struct AblationEval<'a> {
    pub groups: &'a [SourceGroup],
    pub target_names: &'a [String],
    pub classifier: Option<&'a DomainClassifier>,
    pub batch_size: usize,
}

/// Trains `base` once per toggle row (same seed, fresh initialization)
/// and scores each. With `out_dir`, every run keeps its own
/// sub-directory named after its row label.
pub fn run_ablation(
    base: &RunConfig,
    rows: &[LossToggles],
    train: &PatchSet,
    eval: &AblationEval<'_>,
    out_dir: Option<&Path>,
) -> Result<AblationTable> {
    let mut table = AblationTable::default();
    for &toggles in rows {
        let cfg = RunConfig {
            toggles,
            ..base.clone()
        };
        let label = toggles.label();
        log::info!("ablation row {label} (seed {})", cfg.seed);
        let output = RunOutput {
            dir: out_dir.map(|d| d.join(&label)),
            resume: false,
        };
        let run = run_training(&cfg, train, &output)?;
        let score = score_translations(
            &run.trainer.generator,
            eval.groups,
            eval.target_names,
            eval.classifier,
            eval.batch_size,
        )?;
        if let Some(dir) = &output.dir {
            score.report.save(&dir.join("metrics.tsv"))?;
        }
        table.rows.push(AblationRow {
            label,
            toggles,
            seed: cfg.seed,
            g_steps: run.trainer.state.g_steps,
            means: score.report.means(),
            classifier_accuracy: score.classifier_accuracy,
        });
    }
    if let Some(dir) = out_dir {
        table.save(&dir.join("ablation.tsv"))?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_corpus, Split, SynthOptions};
    use crate::training::tests::tiny_config;

    #[test]
    fn unseen_groups_visit_every_target() {
        let corpus = generate_synthetic_corpus(&SynthOptions::new(3, 4, 2, 16, 0)).unwrap();
        let test = corpus.patch_set(Split::Test).unwrap();
        let names = corpus.manifest.domain_names();
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let g = crate::training::Trainer::new(tiny_config()).unwrap().generator;
        let seen = score_translations(&g, &SourceGroup::from_patch_set(&test, &names), &names, None, 4).unwrap();
        assert_eq!(seen.report.rows.len(), 6 * 2);
        assert!(seen.classifier_accuracy.is_none());
        let unseen = SourceGroup {
            name: "x".into(),
            domain: None,
            ids: vec!["a".into(), "b".into()],
            inputs: vec![test.image(0).clone(), test.image(1).clone()],
            targets: None,
        };
        let s = score_translations(&g, &[unseen], &names, None, 4).unwrap();
        assert_eq!(s.report.rows.len(), 6);
        assert!(s.report.rows.iter().all(|r| r.mcd.is_none()));

        let paired: Vec<SourceGroup> = SourceGroup::from_patch_set(&test, &names)
            .into_iter()
            .map(|g| g.with_synthetic_targets(&corpus).unwrap())
            .collect();
        assert_eq!(
            paired[1].targets.as_ref().unwrap()[1][0],
            *test.image(paired[1].ids.len())
        );
        let s = score_translations(&g, &paired, &names, None, 4).unwrap();
        assert!(s.report.rows.iter().all(|r| r.mcd.is_some()));
    }

    #[test]
    fn ablation_writes_one_row_per_config() {
        let corpus = generate_synthetic_corpus(&SynthOptions::new(3, 6, 2, 16, 0)).unwrap();
        let train = corpus.patch_set(Split::Train).unwrap();
        let test = corpus.patch_set(Split::Test).unwrap();
        let names: Vec<String> = corpus.manifest.domain_names().iter().map(|s| s.to_string()).collect();
        let groups = SourceGroup::from_patch_set(&test, &names);
        let eval = AblationEval {
            groups: &groups,
            target_names: &names,
            classifier: None,
            batch_size: 4,
        };
        let dir = tempfile::tempdir().unwrap();
        let rows = [LossToggles::new(false, false, false), LossToggles::FULL];
        let table = run_ablation(&tiny_config(), &rows, &train, &eval, Some(dir.path())).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.row(LossToggles::FULL, tiny_config().seed).is_some());
        assert!(dir.path().join("adv+cyc+c+p/metrics.tsv").exists());
        let tsv = std::fs::read_to_string(dir.path().join("ablation.tsv")).unwrap();
        assert_eq!(tsv.lines().count(), 3);
    }

    #[test]
    fn trend_needs_enough_steps() {
        assert!(cls_fake_trend(&[], 50).is_none());
    }
}
