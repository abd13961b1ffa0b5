use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use irisward::irispipe::{write_image8, GrayImage};
use ndarray::Array2;

const BIN: &str = env!("CARGO_BIN_EXE_irisward");

const TINY: &str = "\
# four identities, quick bank
dataset.identities = 4
dataset.probes_per_identity = 2
dataset.rows = 32
dataset.cols = 128
denoiser_corpus.identities = 4
denoiser_corpus.probes_per_identity = 1
calibration_corpus.identities = 3
bank.width_scale = 0.125
bank.train.epochs = 2
bank.long_bands = 1
bank.long_epochs = 3
attacks = igsm
attacks.0.max_iters = 30
defense_probes_per_identity = 1
k_grid = 3, 5
n_grid = 1, 2
";

fn run(cwd: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(cwd).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn error_line(o: &Output) -> String {
    stderr(o).lines().filter(|l| l.starts_with("irisward:")).collect::<Vec<_>>().join("\n")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.cfg");
    fs::write(&p, TINY).unwrap();
    p
}

fn report_files(out: &Path) -> Vec<(String, Vec<u8>)> {
    let reports = out.join("reports");
    let mut files = Vec::new();
    for e in fs::read_dir(&reports).unwrap() {
        let d = e.unwrap().path();
        if d.is_dir() {
            for f in fs::read_dir(&d).unwrap() {
                let f = f.unwrap().path();
                files.push((f.strip_prefix(&reports).unwrap().display().to_string(), fs::read(&f).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn version_and_help() {
    let tmp = tempfile::tempdir().unwrap();
    let v = run(tmp.path(), &["--version"]);
    assert!(v.status.success());
    let text = String::from_utf8_lossy(&v.stdout);
    for part in ["dataset 1", "network 1", "bank 1", "attack corpus 1", "report 1"] {
        assert!(text.contains(part), "{text}");
    }
    for cmd in [
        "synth",
        "decompose",
        "train-denoisers",
        "calibrate",
        "train-surrogate",
        "attack",
        "defend",
        "evaluate",
        "gradcheck",
    ] {
        let h = run(tmp.path(), &[cmd, "--help"]);
        assert!(h.status.success(), "{cmd}");
        assert!(!h.stdout.is_empty());
    }
}

#[test]
fn decompose_writes_sixteen_bands() {
    let tmp = tempfile::tempdir().unwrap();
    let px = Array2::from_shape_fn((64, 512), |(r, c)| 0.5 + 0.4 * (r as f64 / 3.0).sin() * (c as f64 / 5.0).cos());
    let img = GrayImage::new(px).unwrap();
    write_image8(&tmp.path().join("x.pgm"), &img).unwrap();
    let o = run(tmp.path(), &["decompose", "--in", "x.pgm", "--level", "2", "--wavelet", "haar", "--out", "dir"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bands = tmp.path().join("dir/bands");
    for i in 1..=16 {
        assert!(bands.join(format!("band_{i:02}.pgm")).is_file());
    }
    let sidecar = fs::read_to_string(bands.join("scale.txt")).unwrap();
    assert_eq!(sidecar.lines().filter(|l| !l.starts_with('#')).count(), 16);
}

#[test]
fn user_errors_are_single_lines_with_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "seed = 1\nbank.widht_scale = 2\n").unwrap();
    let o = run(tmp.path(), &["synth", "--config", "bad.cfg", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
    let line = error_line(&o);
    assert_eq!(line.lines().count(), 1);
    assert!(line.contains("line 2: bank.widht_scale: unknown key"), "{line}");

    let o = run(tmp.path(), &["defend", "--strategy", "2", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(error_line(&o).contains("missing artifact for stage `dataset`"), "{}", stderr(&o));

    let o = run(tmp.path(), &["synth"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(tmp.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o).lines().count(), 1);
}

#[test]
fn gradcheck_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["gradcheck", "--net", "surrogate-small"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(json["max_rel_error"].as_f64().unwrap() <= 1e-4);
    let o = run(tmp.path(), &["gradcheck", "--net", "denoiser-small", "--tolerance", "1e-300"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(fs::read_dir(tmp.path()).unwrap().next().is_none());
}

#[test]
fn evaluate_is_reproducible_and_stays_in_out() {
    let tmp = tempfile::tempdir().unwrap();
    tiny_config(tmp.path());
    let a = run(tmp.path(), &["evaluate", "--config", "tiny.cfg", "--seed", "7", "--out", "a"]);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = run(tmp.path(), &["evaluate", "--config", "tiny.cfg", "--seed", "7", "--out", "b", "--jobs", "1"]);
    assert!(b.status.success(), "{}", stderr(&b));
    let ra = report_files(&tmp.path().join("a"));
    assert_eq!(ra.len(), 3);
    assert_eq!(ra, report_files(&tmp.path().join("b")));
    assert!(stderr(&a).contains("resolved plan:"));
    let resolved = fs::read_to_string(tmp.path().join("a/evaluate.config.json")).unwrap();
    assert!(resolved.contains("\"seed\": 7"));

    let mut top: Vec<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    top.sort();
    assert_eq!(top, vec!["a", "b", "tiny.cfg"]);

    let other = run(tmp.path(), &["evaluate", "--config", "tiny.cfg", "--seed", "8", "--out", "a"]);
    assert!(other.status.success());
    assert_eq!(report_files(&tmp.path().join("a")).len(), 2 * ra.len());

    // Stages run one by one land in the same places.
    for args in [
        vec!["synth"],
        vec!["train-denoisers"],
        vec!["attack", "--kind", "igsm"],
        vec!["defend", "--strategy", "3", "--n", "2"],
        vec!["defend", "--strategy", "1", "--k", "3", "--n", "2", "--attack", "none"],
    ] {
        let mut full = args.clone();
        full.extend(["--config", "tiny.cfg", "--seed", "7", "--out", "c"]);
        let o = run(tmp.path(), &full);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let name = PathBuf::from(dataset_dir(&tmp.path().join("c")));
    assert!(tmp.path().join("a/dataset").join(name.file_name().unwrap()).is_dir());
    assert!(tmp.path().join("c/attacks/igsm").is_dir());
    let defend: Vec<PathBuf> = fs::read_dir(tmp.path().join("c/defend")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(defend.len(), 2);
    for d in defend {
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
        let log: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("detections.json")).unwrap()).unwrap();
        let t = &summary["tally"];
        let total: u64 = ["benign_pass", "benign_fail", "adversarial_detected", "adversarial_missed"]
            .iter()
            .map(|k| t[*k].as_u64().unwrap())
            .sum();
        assert_eq!(total as usize, log.as_array().unwrap().len());
    }

    let o = run(
        tmp.path(),
        &["calibrate", "--bank", &bank_dir(&tmp.path().join("c")), "--images", &dataset_dir(&tmp.path().join("c")), "--out", "c"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("c/calibrated/calibration.json").is_file());
}

fn only_subdir(dir: &Path) -> String {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    v.sort();
    v[0].display().to_string()
}

fn bank_dir(out: &Path) -> String {
    let mut v: Vec<PathBuf> = fs::read_dir(out.join("models"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("denoisers-"))
        .collect();
    v.sort();
    v[0].display().to_string()
}

fn dataset_dir(out: &Path) -> String {
    only_subdir(&out.join("dataset"))
}
