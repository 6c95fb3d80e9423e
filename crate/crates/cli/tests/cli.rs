use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &[&str] = &[
    "--set",
    "epochs=3",
    "--set",
    "batch_size=4",
    "--set",
    "g_base_width=2",
    "--set",
    "g_res_blocks=1",
    "--set",
    "g_edge_kernel=3",
    "--set",
    "d_base_width=4",
    "--set",
    "extractor_width=4",
];

fn multipath(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multipath"))
        .args(args)
        .env("MULTIPATH_OUT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

/// Runs a command that must succeed and returns its JSON summary.
fn ok(root: &Path, args: &[&str]) -> Value {
    let out = multipath(root, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    let last = stdout.lines().last().expect("summary line");
    serde_json::from_str(last).expect("summary is JSON")
}

fn artifacts(summary: &Value) -> Vec<PathBuf> {
    summary["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| PathBuf::from(a.as_str().unwrap()))
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(root: &Path, out: &Path) -> Value {
    ok(
        root,
        &[
            "synth",
            "--domains",
            "2",
            "--per-domain",
            "6",
            "--test-per-domain",
            "2",
            "--patch-size",
            "16",
            "--unseen",
            "2",
            "--out",
            s(out),
        ],
    )
}

fn train(root: &Path, manifest: &Path, out: &Path) -> Value {
    let mut args = vec!["train", "--manifest", s(manifest), "--out", s(out)];
    args.extend_from_slice(TINY);
    ok(root, &args)
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    let summary = synth(root, &data);
    assert_eq!(summary["command"], "synth");
    let names: Vec<String> = summary["details"]["domains"]
        .as_array()
        .unwrap()
        .iter()
        .map(|n| n.as_str().unwrap().to_string())
        .collect();
    assert_eq!(names.len(), 2);
    let manifest = data.join("manifest.json");
    let unseen_dir = PathBuf::from(summary["details"]["unseen"]["dir"].as_str().unwrap());
    assert_eq!(std::fs::read_dir(&unseen_dir).unwrap().count(), 2);

    let run = root.join("run");
    let trained = train(root, &manifest, &run);
    assert_eq!(trained["details"]["epochs"], 3);
    for a in artifacts(&trained) {
        assert!(a.exists(), "{}", a.display());
    }
    let checkpoint = run.join("checkpoint.bin");
    let config = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(config.contains("g_base_width = 2"), "{config}");

    let translated = root.join("translated");
    let t = ok(
        root,
        &[
            "translate",
            "--checkpoint",
            s(&checkpoint),
            "--manifest",
            s(&manifest),
            "--grid",
            "--out",
            s(&translated),
        ],
    );
    assert_eq!(t["details"]["inputs"], 4);
    for name in &names {
        assert_eq!(std::fs::read_dir(translated.join(name)).unwrap().count(), 4);
    }
    let grid_file = std::fs::read_dir(translated.join("grid"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let grid = image::open(grid_file).unwrap();
    assert_eq!((grid.width(), grid.height()), (3 * 16 + 2 * 2, 16));

    let foreign = root.join("foreign");
    let t = ok(
        root,
        &[
            "translate",
            "--checkpoint",
            s(&checkpoint),
            "--input-dir",
            s(&unseen_dir),
            "--manifest",
            s(&manifest),
            "--target",
            &names[1],
            "--out",
            s(&foreign),
        ],
    );
    assert_eq!(t["details"]["targets"], serde_json::json!([names[1]]));
    assert_eq!(std::fs::read_dir(foreign.join(&names[1])).unwrap().count(), 2);

    let report = root.join("eval/report.tsv");
    let e = ok(
        root,
        &[
            "evaluate",
            "--checkpoint",
            s(&checkpoint),
            "--manifest",
            s(&manifest),
            "--out",
            s(&report),
        ],
    );
    // 2 test patches per domain, 2 ordered pairs
    assert_eq!(e["details"]["rows"], 4);
    let text = std::fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|l| !l.starts_with("mean\t")).count(), 4);
    assert!(rows.last().unwrap().starts_with("mean\tall\t"));
    assert!(root.join("eval/config.toml").exists());

    let single = root.join("eval/one.tsv");
    let pair = format!("{}:{}", names[0], names[1]);
    let e = ok(
        root,
        &[
            "evaluate",
            "--checkpoint",
            s(&checkpoint),
            "--manifest",
            s(&manifest),
            "--pair",
            &pair,
            "--out",
            s(&single),
        ],
    );
    assert_eq!(e["details"]["rows"], 2);

    for (source, extra) in [("extractor", None), ("bottleneck", Some(&checkpoint))] {
        let path = root.join(format!("{source}.tsv"));
        let mut args = vec![
            "embed",
            "--manifest",
            s(&manifest),
            "--source",
            source,
            "--out",
            s(&path),
        ];
        if let Some(c) = extra {
            args.extend(["--checkpoint", s(c)]);
        }
        args.extend_from_slice(TINY);
        let e = ok(root, &args);
        assert_eq!(e["details"]["patches"], 8);
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("id\tdomain\tf0"), "{header}");
        let width = e["details"]["dimension"].as_u64().unwrap() as usize;
        assert!(text.lines().skip(1).all(|l| l.split('\t').count() == width + 2));
    }
}

#[test]
fn default_output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("outputs");
    let summary = ok(
        &root,
        &[
            "synth",
            "--domains",
            "2",
            "--per-domain",
            "3",
            "--test-per-domain",
            "1",
            "--patch-size",
            "16",
        ],
    );
    let manifest = root.join("synth/manifest.json");
    assert!(manifest.exists());
    assert_eq!(artifacts(&summary), vec![manifest]);
}

#[test]
fn repeated_runs_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    synth(root, &root.join("a"));
    synth(root, &root.join("b"));
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(root.join("a/manifest.json")), read(root.join("b/manifest.json")));

    let manifest = root.join("a/manifest.json");
    train(root, &manifest, &root.join("r1"));
    train(root, &manifest, &root.join("r2"));
    // identical apart from the wall-clock field
    let logs = |p: PathBuf| -> Vec<Value> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_time_s");
                v
            })
            .collect()
    };
    let first = logs(root.join("r1/steps.jsonl"));
    assert!(first.iter().any(|l| l["kind"] == "g"));
    assert_eq!(first, logs(root.join("r2/steps.jsonl")));
    assert_eq!(
        read(root.join("r1/checkpoint.bin")),
        read(root.join("r2/checkpoint.bin"))
    );
}

#[test]
fn ablation_metrics_match_evaluation_of_the_same_run() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    synth(root, &data);
    let manifest = data.join("manifest.json");
    let out = root.join("ablate");
    let mut args = vec![
        "ablate",
        "--manifest",
        s(&manifest),
        "--rows",
        "adv+cyc+c+p",
        "--out",
        s(&out),
    ];
    args.extend_from_slice(TINY);
    let a = ok(root, &args);
    assert_eq!(a["details"]["rows"].as_array().unwrap().len(), 1);
    let table = std::fs::read_to_string(out.join("ablation.tsv")).unwrap();
    assert_eq!(table.lines().count(), 2);

    // the standalone training with the same config reproduces the row's run
    let run = root.join("run");
    train(root, &manifest, &run);
    let report = root.join("report.tsv");
    ok(
        root,
        &[
            "evaluate",
            "--checkpoint",
            s(&run.join("checkpoint.bin")),
            "--manifest",
            s(&manifest),
            "--out",
            s(&report),
        ],
    );
    assert_eq!(
        std::fs::read_to_string(out.join("adv+cyc+c+p/metrics.tsv")).unwrap(),
        std::fs::read_to_string(report).unwrap()
    );
}

#[test]
fn bad_input_fails_without_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    synth(root, &data);
    let manifest = data.join("manifest.json");
    let cases: [&[&str]; 3] = [
        &["train", "--manifest", s(&manifest), "--set", "no_such_key=1"],
        &["evaluate", "--checkpoint", "missing.bin", "--manifest", s(&manifest)],
        &["ablate", "--manifest", s(&manifest), "--rows", "adv+nothing"],
    ];
    for args in cases {
        let out = multipath(root, args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(
            out.stdout.is_empty(),
            "{args:?} printed {}",
            String::from_utf8_lossy(&out.stdout)
        );
        assert!(!out.stderr.is_empty());
    }
}
