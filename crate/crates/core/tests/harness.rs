use std::fs;
use std::path::Path;

use irisward::attack::{AttackConfig, AttackKind};
use irisward::denoise::BankConfig;
use irisward::error::Error;
use irisward::harness::{run_plan, CorpusSize, ExperimentPlan, Harness, ReportFormat, CSV_HEADER};
use irisward::irispipe::SynthSpec;
use irisward::tensornet::TrainConfig;

fn tiny_plan() -> ExperimentPlan {
    ExperimentPlan {
        dataset: SynthSpec {
            identities: 5,
            probes_per_identity: 2,
            rows: 32,
            cols: 128,
            ..SynthSpec::default()
        },
        denoiser_corpus: CorpusSize {
            identities: 4,
            probes_per_identity: 1,
        },
        calibration_corpus: CorpusSize {
            identities: 3,
            probes_per_identity: 1,
        },
        bank: BankConfig {
            width_scale: 0.125,
            train: TrainConfig {
                epochs: 2,
                ..BankConfig::default().train
            },
            long_bands: vec![1],
            long_epochs: 3,
            ..BankConfig::default()
        },
        attacks: vec![AttackConfig {
            kind: AttackKind::Igsm,
            max_iters: 30,
            ..AttackConfig::default()
        }],
        defense_probes_per_identity: 1,
        k_grid: vec![3, 5],
        n_grid: vec![1, 2],
        seed: 5,
        ..ExperimentPlan::default()
    }
}

/// Every file under `dir` with its bytes, by relative path.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(".runtime.json") {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical_and_resume() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let plan = tiny_plan();
    let ra = run_plan(&plan, a.path()).unwrap();
    let rb = run_plan(&plan, b.path()).unwrap();
    assert_eq!(ra, rb);
    let snap = snapshot(a.path());
    assert_eq!(snap, snapshot(b.path()));
    assert!(snap.iter().any(|(p, _)| p.ends_with(".wshd")));

    // A finished run does no work the second time.
    let mut h = Harness::new(&plan, a.path()).unwrap();
    h.run().unwrap();
    assert!(h.runtime().stages.is_empty());

    // Only the report stage reruns after its directory is removed.
    fs::remove_dir_all(h.report_dir().unwrap()).unwrap();
    let mut h = Harness::new(&plan, a.path()).unwrap();
    assert_eq!(h.run().unwrap(), ra);
    assert_eq!(h.runtime().stages.keys().collect::<Vec<_>>(), vec!["defend"]);
    assert_eq!(snapshot(a.path()), snap);

    // A different master seed lands in different directories.
    let other = Harness::new(&ExperimentPlan { seed: 6, ..plan }, a.path()).unwrap();
    assert_ne!(other.dataset_dir().unwrap(), h.dataset_dir().unwrap());
    assert_ne!(other.bank_dir().unwrap(), h.bank_dir().unwrap());
}

#[test]
fn missing_stages_are_reported() {
    let out = tempfile::tempdir().unwrap();
    let mut h = Harness::new(&tiny_plan(), out.path()).unwrap();
    assert!(matches!(h.load_report(), Err(Error::MissingArtifact { .. })));
    assert!(matches!(h.load_bank(), Err(Error::MissingArtifact { .. })));
    assert!(matches!(h.ensure_report(), Err(Error::MissingArtifact { .. })));
    h.ensure_dataset().unwrap();
    let e = h.ensure_report().unwrap_err();
    assert!(e.to_string().contains("train-denoisers"), "{e}");
}

#[test]
fn report_accounting() {
    let out = tempfile::tempdir().unwrap();
    let plan = tiny_plan();
    let report = run_plan(&plan, out.path()).unwrap();
    let (nk, nn) = (plan.k_grid.len(), plan.n_grid.len());
    assert_eq!(report.cells.len(), 2 * (nk * nn + 2 * nn));
    assert_eq!(report.benign_inputs, 5);
    assert_eq!(report.benign_alpha_mean.len(), 16);
    assert!(report.benign_denoised_psnr.is_finite());

    let summary = &report.attacks[0];
    assert_eq!(summary.probes, 10);
    assert!(summary.in_sweep <= summary.successful);
    for c in &report.cells {
        let t = c.tally;
        match c.attack.as_str() {
            "none" => assert_eq!((t.benign(), t.adversarial()), (5, 0)),
            "igsm" => assert_eq!((t.benign(), t.adversarial()), (summary.in_sweep, summary.in_sweep)),
            other => panic!("unexpected attack {other}"),
        }
        assert!((0.0..=100.0).contains(&c.success_rate));
    }

    let dir = Harness::new(&plan, out.path()).unwrap().report_dir().unwrap();
    let csv = fs::read_to_string(dir.join(ReportFormat::Csv.file_name())).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), report.cells.len());
    let s1_igsm = rows.iter().filter(|r| r.starts_with("1,igsm,")).count();
    assert_eq!(s1_igsm, nk * nn);
    for f in ReportFormat::ALL {
        assert!(dir.join(f.file_name()).is_file());
    }
}

#[test]
fn invalid_plans_are_rejected() {
    let mut p = tiny_plan();
    p.attacks.push(p.attacks[0].clone());
    assert!(matches!(Harness::new(&p, Path::new("unused")), Err(Error::Config(_))));
    let p = ExperimentPlan {
        n_grid: vec![20],
        ..tiny_plan()
    };
    assert!(Harness::new(&p, Path::new("unused")).is_err());
    let p = ExperimentPlan {
        defense_probes_per_identity: 3,
        ..tiny_plan()
    };
    assert!(Harness::new(&p, Path::new("unused")).is_err());
}
