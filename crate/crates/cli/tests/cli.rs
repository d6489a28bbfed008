use segqc::volume::load_sqv;
use segqc::ErrorMap;
use std::path::Path;
use std::process::{Command, Output};

fn config(n_good: usize, n_bad: usize, extra: &str) -> String {
    format!(
        r#"{{
  "seed": 3,
  "phantom": {{
    "n_good": {n_good},
    "n_bad": {n_bad},
    "spec": {{
      "dims": [24, 24, 24],
      "radii": {{ "csf": [9.75, 10.5, 9.0], "gm": [8.625, 9.375, 7.875], "wm": [5.625, 6.375, 4.875] }}{extra}
    }}
  }},
  "classifier": {{ "train": {{ "epochs": 1, "batch_size": 2 }} }},
  "eval": {{ "k": 2 }}
}}"#
    )
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segqc")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup(cfg: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();
    dir
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&run(dir.path(), &["phantom", "--colour", "red"])), 1);
    assert_eq!(code(&run(dir.path(), &["--jobs", "0", "phantom"])), 1);
    assert_eq!(code(&run(dir.path(), &["export-slices", "--input", "x.sqv", "--view", "oblique"])), 1);
    let o = run(dir.path(), &["errormap", "--mri", "a.sqv"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn phantom_writes_manifest_and_volumes() {
    let dir = setup(&config(2, 2, ""));
    let o = run(dir.path(), &["--config", "c.json", "--out", "out", "phantom"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ph = dir.path().join("out/phantom");
    assert!(ph.join("manifest.json").is_file());
    assert!(ph.join("config.resolved.json").is_file());
    let sqv =
        std::fs::read_dir(&ph).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "sqv").count();
    assert_eq!(sqv, 16);
    assert_eq!(load_sqv(ph.join("s0000_mri.sqv")).unwrap().dims(), (24, 24, 24));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = setup(&config(1, 0, ""));
    for (seed, out) in [("1", "a"), ("2", "b"), ("1", "c")] {
        let o = run(dir.path(), &["--config", "c.json", "--seed", seed, "--out", out, "phantom"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let mri = |out: &str| std::fs::read(dir.path().join(out).join("phantom/s0000_mri.sqv")).unwrap();
    assert_ne!(mri("a"), mri("b"));
    assert_eq!(mri("a"), mri("c"));
    let resolved: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("b/phantom/config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 2);
}

#[test]
fn perfect_segmentation_gives_an_empty_map() {
    let dir = setup(&config(1, 0, r#", "noise_sigma": 0.0, "bias_amplitude": 0.0"#));
    assert_eq!(code(&run(dir.path(), &["--config", "c.json", "--out", "out", "phantom"])), 0);
    let raw = dir.path().join("raw.json");
    std::fs::write(&raw, config(1, 0, "").replace(r#""seed": 3,"#, r#""seed": 3, "errormap": {"raw": true},"#))
        .unwrap();
    let o = run(
        dir.path(),
        &[
            "--config",
            "raw.json",
            "--out",
            "out",
            "errormap",
            "--mri",
            "out/phantom/s0000_mri.sqv",
            "--seg",
            "out/phantom/s0000_seg_good.sqv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let map = ErrorMap::load(dir.path().join("out/errormap/s0000_seg_good_error.sqv")).unwrap();
    assert!(map.map.max() < 1e-6);
    assert_eq!(map.provenance.reconstructor, "oracle");
    assert!(map.provenance.postprocess.is_none());
}

#[test]
fn config_and_data_errors_exit_with_2() {
    let dir = setup(r#"{"phantom": {"n_good": 1, "colour": 2}}"#);
    let o = run(dir.path(), &["--config", "c.json", "phantom"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("c.json") && stderr(&o).contains("colour"), "{}", stderr(&o));

    std::fs::write(dir.path().join("k.json"), r#"{"eval": {"k": 1}}"#).unwrap();
    let o = run(dir.path(), &["--config", "k.json", "phantom"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("eval.k"), "{}", stderr(&o));

    let o = run(dir.path(), &["--config", "missing.json", "phantom"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.json"));

    let o = run(dir.path(), &["--out", "nowhere", "train-qc"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("manifest.json"), "{}", stderr(&o));

    std::fs::write(dir.path().join("junk.sqv"), b"SQV1 but not really").unwrap();
    let o = run(dir.path(), &["export-slices", "--input", "junk.sqv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("junk.sqv"), "{}", stderr(&o));
}

#[test]
fn dimension_mismatch_is_a_data_error() {
    let dir = setup(&config(1, 0, ""));
    assert_eq!(code(&run(dir.path(), &["--config", "c.json", "--out", "small", "phantom"])), 0);
    let big = config(1, 0, "").replace("[24, 24, 24]", "[26, 26, 26]");
    std::fs::write(dir.path().join("big.json"), big).unwrap();
    assert_eq!(code(&run(dir.path(), &["--config", "big.json", "--out", "big", "phantom"])), 0);
    let o = run(
        dir.path(),
        &[
            "--out",
            "out",
            "errormap",
            "--mri",
            "small/phantom/s0000_mri.sqv",
            "--seg",
            "big/phantom/s0000_seg_good.sqv",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("big/phantom/s0000_seg_good.sqv"), "{}", stderr(&o));
}

fn snapshot(dir: &Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    v.sort();
    v
}

#[test]
fn staged_pipeline_with_classify_modes() {
    let dir = setup(&config(3, 3, ""));
    let p = dir.path();
    let base = ["--config", "c.json", "--out", "out"];
    let with = |extra: &[&str]| -> Vec<String> { base.iter().chain(extra).map(|s| s.to_string()).collect() };
    let go = |extra: &[&str]| {
        let args = with(extra);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = run(p, &args);
        assert_eq!(code(&o), 0, "{extra:?}: {}", stderr(&o));
        o
    };
    go(&["phantom"]);
    let before = snapshot(&p.join("out/phantom"));
    go(&["train-recon"]);
    go(&["errormap"]);
    assert_eq!(snapshot(&p.join("out/phantom")), before, "inputs must not change");
    assert!(p.join("out/recon/recon.json").is_file());
    go(&["train-qc"]);
    for f in ["qcnet.weights", "qcnet.json", "history.json", "config.resolved.json"] {
        assert!(p.join("out/qc").join(f).is_file(), "{f}");
    }

    let o = go(&["classify", "--threshold", "0.0"]);
    let lines = String::from_utf8(o.stdout).unwrap();
    assert_eq!(lines.lines().count(), 6);
    assert!(lines.lines().all(|l| l.ends_with("bad")));
    let preds: Vec<segqc::Prediction> =
        serde_json::from_slice(&std::fs::read(p.join("out/qc/predictions.json")).unwrap()).unwrap();
    assert!(preds.iter().all(|q| q.threshold == 0.0 && q.label == 1 && q.probability > 0.0 && q.probability < 1.0));

    let from_map =
        go(&["classify", "--mri", "out/phantom/s0004_mri.sqv", "--errormap", "out/errormap/s0004_error.sqv"]);
    let from_seg = go(&["classify", "--mri", "out/phantom/s0004_mri.sqv", "--seg", "out/phantom/s0004_seg_bad.sqv"]);
    let prob = |o: &Output| String::from_utf8_lossy(&o.stdout).split('\t').nth(1).unwrap().to_string();
    assert_eq!(prob(&from_map), prob(&from_seg));

    let o = run(p, &with(&["classify", "--threshold", "2"]).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 1);

    go(&["evaluate", "--threshold", "0.3"]);
    let csv = std::fs::read_to_string(p.join("out/eval/cv.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "fold,auc,accuracy,precision,recall");
    assert_eq!(csv.lines().count(), 3);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(p.join("out/eval/cv.json")).unwrap()).unwrap();
    assert_eq!(summary["threshold"], 0.3);
    assert_eq!(summary["k"], 2);

    go(&["export-slices", "--input", "out/phantom/s0000_seg_good.sqv", "--view", "coronal", "--indices", "0,12"]);
    let pgm = std::fs::read(p.join("out/slices/s0000_seg_good_coronal_012.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n24 24\n255\n"));
    assert_eq!(pgm.len(), 13 + 24 * 24);
    // the centre slice crosses white matter, code 3 of 3
    assert!(pgm[13..].contains(&255));
}
