//! End-to-end experiment: synthetic corpus, denoiser bank, attack corpora,
//! defense sweeps and reports. Every stage lives in a directory named by the
//! hash of everything it depends on, so reruns resume from whatever is
//! already on disk.

mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{read_corpus, run_attack, write_corpus, AttackConfig, AttackKind, GaborSurface, SurfaceKind, SurrogateSurface, CORPUS_VERSION};
use crate::defense::{
    eligible_bands, input_seed, strategy1_sweep, DefenseConfig, DetectionResult, EligiblePreset, Recognizer, Strategy,
    SuspectAnalysis, Tally, Truth,
};
use crate::denoise::{psnr, train_bank, BankConfig, DenoiserBank, BANK_VERSION, CALIBRATION_FILE};
use crate::error::{Error, Result};
use crate::irispipe::{
    read_dataset, synth_dataset, train_surrogate, write_dataset, Dataset, GaborBank, GaborParams, GrayImage, IrisRecord,
    SurrogateConfig, SynthSpec, DATASET_VERSION,
};
use crate::provenance::config_hash;
use crate::rng::derive_seed;
use crate::tensornet::{load_model, save_model, NetworkModel, TrainReport};

pub use report::{emit_report, read_report, reference, to_csv, to_markdown, AttackSummary, Cell, EvaluationReport, ReportFormat, CSV_HEADER, REPORT_VERSION};

/// Size of an auxiliary benign corpus drawn from the same generator. The
/// denoisers train on every image of theirs; calibration uses probes only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSize {
    pub identities: usize,
    pub probes_per_identity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    /// Gallery/probe corpus. Its seed is replaced by one derived from `seed`.
    pub dataset: SynthSpec,
    pub gabor: GaborParams,
    /// Benign images the denoisers learn from (disjoint identities).
    pub denoiser_corpus: CorpusSize,
    /// Benign images that fix the average denoiser errors.
    pub calibration_corpus: CorpusSize,
    pub bank: BankConfig,
    /// Needed only when an attack uses the trained surrogate.
    pub surrogate: SurrogateConfig,
    pub attacks: Vec<AttackConfig>,
    /// Leading probes of every identity that enter the defense sweeps; the
    /// attack stage covers all probes.
    pub defense_probes_per_identity: usize,
    pub k_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub random_eligible: Vec<usize>,
    pub suspect_eligible: Vec<usize>,
    pub match_threshold: Option<f64>,
    pub seed: u64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        let attack = |kind, epsilon| AttackConfig {
            kind,
            epsilon,
            ..AttackConfig::default()
        };
        ExperimentPlan {
            dataset: SynthSpec::default(),
            gabor: GaborParams::default(),
            denoiser_corpus: CorpusSize {
                identities: 320,
                probes_per_identity: 3,
            },
            calibration_corpus: CorpusSize {
                identities: 20,
                probes_per_identity: 2,
            },
            bank: BankConfig::default(),
            surrogate: SurrogateConfig::default(),
            attacks: vec![
                attack(AttackKind::Fgsm, Some(0.1)),
                attack(AttackKind::Igsm, Some(0.1)),
                attack(AttackKind::Deepfool, Some(0.1)),
            ],
            defense_probes_per_identity: 8,
            k_grid: vec![3, 5, 7, 10, 15, 20, 30],
            n_grid: (1..=7).collect(),
            random_eligible: eligible_bands(2, EligiblePreset::ExcludeLowpassTree),
            suspect_eligible: eligible_bands(2, EligiblePreset::ExcludeBandOne),
            match_threshold: Some(0.32),
            seed: 0,
        }
    }
}

/// Sub-seed tags; changing one re-keys only the stages that use it.
const TAG_DATASET: u64 = 1;
const TAG_DENOISER_CORPUS: u64 = 2;
const TAG_CALIBRATION: u64 = 3;
const TAG_BANK: u64 = 4;
const TAG_ATTACK: u64 = 5;
const TAG_DEFENSE: u64 = 6;
const TAG_SURROGATE: u64 = 7;

impl ExperimentPlan {
    /// Copy with every nested seed derived from the master seed.
    pub fn resolved(&self) -> Self {
        let mut p = self.clone();
        let s = self.seed;
        p.dataset.seed = derive_seed(s, &[TAG_DATASET]);
        p.bank.master_seed = derive_seed(s, &[TAG_BANK]);
        p.bank.train.seed = derive_seed(s, &[TAG_BANK, 0]);
        p.surrogate.init_seed = derive_seed(s, &[TAG_SURROGATE]);
        p.surrogate.train.seed = derive_seed(s, &[TAG_SURROGATE, 0]);
        for (i, a) in p.attacks.iter_mut().enumerate() {
            a.seed = derive_seed(s, &[TAG_ATTACK, i as u64]);
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.gabor.validate()?;
        for a in &self.attacks {
            a.validate()?;
        }
        let mut kinds: Vec<_> = self.attacks.iter().map(|a| a.kind).collect();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != self.attacks.len() {
            return Err(Error::Config("each attack kind may appear once per plan".into()));
        }
        for (name, c) in [("denoiser", &self.denoiser_corpus), ("calibration", &self.calibration_corpus)] {
            if c.identities < 2 || c.probes_per_identity < 1 {
                return Err(Error::Config(format!("{name} corpus needs >= 2 identities with >= 1 probe")));
            }
        }
        if self.defense_probes_per_identity == 0 || self.defense_probes_per_identity > self.dataset.probes_per_identity {
            return Err(Error::Config(format!(
                "defense_probes_per_identity must lie in 1..={}",
                self.dataset.probes_per_identity
            )));
        }
        if self.k_grid.is_empty() != self.n_grid.is_empty() && !self.k_grid.is_empty() {
            return Err(Error::Config("a K grid needs an N grid".into()));
        }
        for (strategy, eligible) in [
            (Strategy::RandomMasking, &self.random_eligible),
            (Strategy::SuspectRemoval, &self.suspect_eligible),
        ] {
            for &n in &self.n_grid {
                for &k in self.k_grid.iter().chain(std::iter::once(&1)) {
                    self.defense(strategy, eligible.clone(), k, n).validate()?;
                }
            }
        }
        Ok(())
    }

    /// Defense settings of one grid cell, with the plan's eligible set for
    /// `strategy`.
    pub fn defense_config(&self, strategy: Strategy, k: usize, n: usize) -> DefenseConfig {
        let eligible = match strategy {
            Strategy::RandomMasking => self.random_eligible.clone(),
            _ => self.suspect_eligible.clone(),
        };
        self.defense(strategy, eligible, k, n)
    }

    fn defense(&self, strategy: Strategy, eligible: Vec<usize>, k: usize, n: usize) -> DefenseConfig {
        DefenseConfig {
            strategy,
            k,
            n,
            eligible,
            level: self.bank.level,
            wavelet: self.bank.wavelet.clone(),
            seed: derive_seed(self.seed, &[TAG_DEFENSE]),
            match_threshold: self.match_threshold,
        }
    }

    fn aux_spec(&self, size: &CorpusSize, tag: u64) -> SynthSpec {
        SynthSpec {
            identities: size.identities,
            probes_per_identity: size.probes_per_identity,
            seed: derive_seed(self.seed, &[tag]),
            ..self.dataset.clone()
        }
    }
}

/// Wall-clock seconds per stage; kept out of the report so reports compare
/// byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeLog {
    pub stages: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
struct StageKeys<'a, T: Serialize> {
    version: u16,
    stage: &'a str,
    inputs: T,
}

fn stage_hash<T: Serialize>(version: u16, stage: &str, inputs: T) -> Result<String> {
    config_hash(&StageKeys { version, stage, inputs })
}

/// Write into `<dir>.partial`, then rename, so a stage directory either
/// holds a finished artifact or does not exist.
fn build_dir(dir: &Path, build: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let partial = dir.with_extension("partial");
    if partial.exists() {
        fs::remove_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
    }
    fs::create_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
    build(&partial)?;
    if let Some(parent) = dir.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::rename(&partial, dir).map_err(|e| Error::io(dir, e))
}

fn missing(stage: &str, path: PathBuf) -> Error {
    Error::MissingArtifact {
        stage: stage.into(),
        path,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

/// One adversarial probe paired with its benign original.
#[derive(Debug, Clone)]
pub struct AttackPair {
    pub benign: IrisRecord,
    pub adversarial: IrisRecord,
    pub success: bool,
    pub final_hd: f64,
}

/// Attack corpus as loaded back from disk.
#[derive(Debug, Clone)]
pub struct AttackSet {
    pub config: AttackConfig,
    pub hash: String,
    pub pairs: Vec<AttackPair>,
}

impl AttackSet {
    pub fn success_rate(&self) -> f64 {
        100.0 * self.pairs.iter().filter(|p| p.success).count() as f64 / self.pairs.len().max(1) as f64
    }
}

/// Stage runner bound to one plan and one output directory.
pub struct Harness {
    plan: ExperimentPlan,
    out: PathBuf,
    runtime: RuntimeLog,
}

impl Harness {
    pub fn new(plan: &ExperimentPlan, out: &Path) -> Result<Self> {
        plan.validate()?;
        Ok(Harness {
            plan: plan.resolved(),
            out: out.to_path_buf(),
            runtime: RuntimeLog::default(),
        })
    }

    pub fn plan(&self) -> &ExperimentPlan {
        &self.plan
    }

    pub fn runtime(&self) -> &RuntimeLog {
        &self.runtime
    }

    fn timed<T>(&mut self, stage: String, f: impl FnOnce(&Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let v = f(self)?;
        self.runtime.stages.insert(stage, t.elapsed().as_secs_f64());
        Ok(v)
    }

    pub fn gabor(&self) -> Result<GaborBank> {
        GaborBank::new(self.plan.gabor.clone(), self.plan.dataset.rows, self.plan.dataset.cols)
    }

    pub fn dataset_hash(&self) -> Result<String> {
        stage_hash(DATASET_VERSION, "dataset", &self.plan.dataset)
    }

    pub fn dataset_dir(&self) -> Result<PathBuf> {
        Ok(self.out.join("dataset").join(self.dataset_hash()?))
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let dir = self.dataset_dir()?;
        if !dir.is_dir() {
            return Err(missing("dataset", dir));
        }
        read_dataset(&dir)
    }

    pub fn ensure_dataset(&mut self) -> Result<Dataset> {
        let dir = self.dataset_dir()?;
        if !dir.is_dir() {
            log::info!("dataset: generating {}", dir.display());
            self.timed("dataset".into(), |h| {
                let ds = synth_dataset(&h.plan.dataset)?;
                build_dir(&dir, |d| write_dataset(d, &ds))
            })?;
        }
        self.load_dataset()
    }

    fn bank_inputs(&self) -> (SynthSpec, SynthSpec, &BankConfig) {
        (
            self.plan.aux_spec(&self.plan.denoiser_corpus, TAG_DENOISER_CORPUS),
            self.plan.aux_spec(&self.plan.calibration_corpus, TAG_CALIBRATION),
            &self.plan.bank,
        )
    }

    pub fn bank_dir(&self) -> Result<PathBuf> {
        let h = stage_hash(BANK_VERSION, "denoisers", self.bank_inputs())?;
        Ok(self.out.join("models").join(format!("denoisers-{h}")))
    }

    pub fn load_bank(&self) -> Result<DenoiserBank> {
        let dir = self.bank_dir()?;
        if !dir.join(CALIBRATION_FILE).is_file() {
            return Err(missing("train-denoisers", dir));
        }
        DenoiserBank::load(&dir)
    }

    pub fn ensure_bank(&mut self) -> Result<DenoiserBank> {
        let dir = self.bank_dir()?;
        if !dir.is_dir() {
            log::info!("denoisers: training {}", dir.display());
            self.timed("train-denoisers".into(), |h| {
                let (train_spec, cal_spec, cfg) = h.bank_inputs();
                let train = images(&synth_dataset(&train_spec)?.records);
                let (mut bank, reports) = train_bank(&train, cfg)?;
                let cal = synth_dataset(&cal_spec)?;
                bank.calibrate(&images(&cal.probes().cloned().collect::<Vec<_>>()))?;
                build_dir(&dir, |d| {
                    bank.save(d)?;
                    write_json(&d.join("train_report.json"), &reports)
                })
            })?;
        }
        self.load_bank()
    }

    pub fn surrogate_dir(&self) -> Result<PathBuf> {
        let train_spec = self.plan.aux_spec(&self.plan.denoiser_corpus, TAG_DENOISER_CORPUS);
        let h = stage_hash(crate::tensornet::FORMAT_VERSION, "surrogate", (&train_spec, &self.plan.gabor, &self.plan.surrogate))?;
        Ok(self.out.join("models").join(format!("surrogate-{h}")))
    }

    pub fn ensure_surrogate(&mut self) -> Result<NetworkModel> {
        let dir = self.surrogate_dir()?;
        let path = dir.join("surrogate.wshd");
        if !dir.is_dir() {
            log::info!("surrogate: training {}", dir.display());
            self.timed("train-surrogate".into(), |h| {
                let train_spec = h.plan.aux_spec(&h.plan.denoiser_corpus, TAG_DENOISER_CORPUS);
                let records = synth_dataset(&train_spec)?.records;
                let (model, report): (NetworkModel, TrainReport) = train_surrogate(&records, &h.gabor()?, &h.plan.surrogate)?;
                build_dir(&dir, |d| {
                    save_model(&model, &d.join("surrogate.wshd"))?;
                    write_json(&d.join("train_report.json"), &report)
                })
            })?;
        }
        load_model(&path)
    }

    fn attack_hash(&self, cfg: &AttackConfig) -> Result<String> {
        let surrogate = match cfg.surface {
            SurfaceKind::TrainedSurrogate => Some(self.surrogate_dir()?),
            SurfaceKind::SmoothGabor => None,
        };
        let surrogate = surrogate.and_then(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()));
        stage_hash(CORPUS_VERSION, "attack", (self.dataset_hash()?, &self.plan.gabor, cfg, surrogate))
    }

    pub fn attack_dir(&self, cfg: &AttackConfig) -> Result<PathBuf> {
        Ok(self.out.join("attacks").join(cfg.kind.name()).join(self.attack_hash(cfg)?))
    }

    pub fn load_attack(&self, cfg: &AttackConfig, dataset: &Dataset) -> Result<AttackSet> {
        let dir = self.attack_dir(cfg)?;
        if !dir.is_dir() {
            return Err(missing(&format!("attack {}", cfg.kind.name()), dir));
        }
        let (manifest, adv) = read_corpus(&dir)?;
        let by_id: BTreeMap<(u32, u32), &IrisRecord> = dataset.probes().map(|r| ((r.identity, r.index), r)).collect();
        let pairs = manifest
            .entries
            .iter()
            .zip(adv)
            .map(|(e, a)| {
                let benign = by_id
                    .get(&(e.identity, e.index))
                    .ok_or_else(|| Error::Format(format!("{}: probe {}_{} not in dataset", dir.display(), e.identity, e.index)))?;
                Ok(AttackPair {
                    benign: (*benign).clone(),
                    adversarial: a,
                    success: e.success,
                    final_hd: e.final_hd,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AttackSet {
            config: manifest.config,
            hash: self.attack_hash(cfg)?,
            pairs,
        })
    }

    pub fn ensure_attack(&mut self, cfg: &AttackConfig, dataset: &Dataset) -> Result<AttackSet> {
        let dir = self.attack_dir(cfg)?;
        if !dir.is_dir() {
            let surrogate = match cfg.surface {
                SurfaceKind::TrainedSurrogate => Some(self.ensure_surrogate()?),
                SurfaceKind::SmoothGabor => None,
            };
            log::info!("attack {}: generating {}", cfg.kind.name(), dir.display());
            self.timed(format!("attack-{}", cfg.kind.name()), |h| {
                let gabor = h.gabor()?;
                let probes: Vec<&IrisRecord> = dataset.probes().collect();
                let results = probes
                    .par_iter()
                    .map(|rec| match &surrogate {
                        Some(model) => run_attack(&SurrogateSurface::new(model, &gabor, rec)?, &rec.image, cfg),
                        None => run_attack(&GaborSurface::new(&gabor, rec, cfg.beta)?, &rec.image, cfg),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let pairs: Vec<_> = probes.iter().copied().zip(results.iter()).collect();
                build_dir(&dir, |d| write_corpus(d, cfg, &pairs))
            })?;
        }
        self.load_attack(cfg, dataset)
    }

    /// Hash of the report stage: every upstream hash plus the sweep settings.
    pub fn report_hash(&self) -> Result<String> {
        let attacks = self.plan.attacks.iter().map(|a| self.attack_hash(a)).collect::<Result<Vec<_>>>()?;
        let bank = self.bank_dir()?;
        let p = &self.plan;
        stage_hash(
            REPORT_VERSION,
            "report",
            (
                self.dataset_hash()?,
                bank.file_name().map(|f| f.to_string_lossy().into_owned()),
                attacks,
                &p.gabor,
                (p.defense_probes_per_identity, &p.k_grid, &p.n_grid),
                (&p.random_eligible, &p.suspect_eligible, p.match_threshold, p.seed),
            ),
        )
    }

    pub fn report_dir(&self) -> Result<PathBuf> {
        Ok(self.out.join("reports").join(self.report_hash()?))
    }

    pub fn load_report(&self) -> Result<EvaluationReport> {
        let dir = self.report_dir()?;
        if !dir.is_dir() {
            return Err(missing("report", dir));
        }
        read_report(&dir)
    }

    /// Run the defense sweeps over cached artifacts and write the report.
    pub fn ensure_report(&mut self) -> Result<EvaluationReport> {
        let dir = self.report_dir()?;
        if !dir.is_dir() {
            let dataset = self.load_dataset()?;
            let bank = self.load_bank()?;
            let attacks = self
                .plan
                .attacks
                .clone()
                .iter()
                .map(|a| self.load_attack(a, &dataset))
                .collect::<Result<Vec<_>>>()?;
            log::info!("report: sweeping defenses into {}", dir.display());
            let report = self.timed("defend".into(), |h| h.evaluate(&dataset, &bank, &attacks))?;
            build_dir(&dir, |d| emit_report(&report, d, &ReportFormat::ALL))?;
        }
        self.load_report()
    }

    fn evaluate(&self, dataset: &Dataset, bank: &DenoiserBank, attacks: &[AttackSet]) -> Result<EvaluationReport> {
        let p = &self.plan;
        let recognizer = Recognizer::from_records(self.gabor()?, dataset.gallery(), p.match_threshold)?;
        let in_sweep = |r: &IrisRecord| r.index as usize <= p.defense_probes_per_identity;
        let benign: Vec<&IrisRecord> = dataset.probes().filter(|r| in_sweep(r)).collect();
        let sweep = Sweep {
            plan: p,
            recognizer: &recognizer,
            bank,
        };
        let benign_out = benign
            .par_iter()
            .map(|r| sweep.run(r.image.pixels(), r))
            .collect::<Result<Vec<_>>>()?;
        let benign_alpha = mean_alpha(&benign_out);
        let psnr = benign_out.iter().map(|o| o.psnr).sum::<f64>() / benign_out.len().max(1) as f64;
        let benign_by_id: BTreeMap<(u32, u32), &SweepOutcome> =
            benign.iter().zip(&benign_out).map(|(r, o)| ((r.identity, r.index), o)).collect();

        let none: Vec<(Truth, &SweepOutcome)> = benign_out.iter().map(|o| (Truth::Benign, o)).collect();
        let mut cells = tally_cells(p, "none", &none);
        let mut summaries = Vec::new();
        for set in attacks {
            let used: Vec<&AttackPair> = set.pairs.iter().filter(|x| in_sweep(&x.benign) && x.success).collect();
            let adv_out = used
                .par_iter()
                .map(|x| sweep.run(x.adversarial.image.pixels(), &x.benign))
                .collect::<Result<Vec<_>>>()?;
            // Paired design: each successful attack enters with its own benign probe.
            let mut mix: Vec<(Truth, &SweepOutcome)> = Vec::with_capacity(2 * used.len());
            for (x, o) in used.iter().zip(&adv_out) {
                mix.push((Truth::Benign, benign_by_id[&(x.benign.identity, x.benign.index)]));
                mix.push((Truth::Adversarial, o));
            }
            summaries.push(AttackSummary::new(set, p.defense_probes_per_identity));
            cells.extend(tally_cells(p, set.config.kind.name(), &mix));
        }
        let order = |name: &str| p.attacks.iter().position(|a| a.kind.name() == name).map_or(0, |i| i + 1);
        cells.sort_by_key(|c| (c.strategy, order(&c.attack), c.k, c.n));
        Ok(EvaluationReport {
            format_version: REPORT_VERSION,
            plan: p.clone(),
            report_hash: self.report_hash()?,
            dataset_hash: self.dataset_hash()?,
            bank_dir: self.bank_dir()?.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            attacks: summaries,
            benign_inputs: benign.len(),
            benign_alpha_mean: benign_alpha,
            benign_denoised_psnr: psnr,
            cells,
        })
    }

    /// Every stage in order, resuming from finished artifacts.
    pub fn run(&mut self) -> Result<EvaluationReport> {
        let dataset = self.ensure_dataset()?;
        self.ensure_bank()?;
        for a in self.plan.attacks.clone() {
            self.ensure_attack(&a, &dataset)?;
        }
        let report = self.ensure_report()?;
        if !self.runtime.stages.is_empty() {
            write_json(&self.report_dir()?.with_extension("runtime.json"), &self.runtime)?;
        }
        Ok(report)
    }
}

/// Run `plan` under `out`, reusing any stage already on disk.
pub fn run_plan(plan: &ExperimentPlan, out: &Path) -> Result<EvaluationReport> {
    Harness::new(plan, out)?.run()
}

fn images(records: &[IrisRecord]) -> Vec<GrayImage> {
    records.iter().map(|r| r.image.clone()).collect()
}

struct Sweep<'a> {
    plan: &'a ExperimentPlan,
    recognizer: &'a Recognizer,
    bank: &'a DenoiserBank,
}

/// Verdicts of one input for every grid cell.
struct SweepOutcome {
    random: Vec<((usize, usize), DetectionResult)>,
    suspect: Vec<(usize, DetectionResult)>,
    denoised: Vec<(usize, DetectionResult)>,
    alpha: Vec<f64>,
    psnr: f64,
}

impl Sweep<'_> {
    /// Defend `image`; seeds come from the underlying probe so the benign and
    /// attacked versions of a probe see the same random subsets.
    fn run(&self, image: &Array2<f64>, probe: &IrisRecord) -> Result<SweepOutcome> {
        let p = self.plan;
        let random = if p.k_grid.is_empty() {
            Vec::new()
        } else {
            let base = p.defense(Strategy::RandomMasking, p.random_eligible.clone(), 1, 1);
            let cfg = DefenseConfig {
                seed: input_seed(&base, probe),
                ..base
            };
            strategy1_sweep(image, &probe.mask, self.recognizer, &cfg, &p.k_grid, &p.n_grid)?
        };
        let analysis = SuspectAnalysis::new(image, &probe.mask, self.recognizer, self.bank, true)?;
        let mut suspect = Vec::with_capacity(p.n_grid.len());
        let mut denoised = Vec::with_capacity(p.n_grid.len());
        for &n in &p.n_grid {
            let e = &p.suspect_eligible;
            suspect.push((n, analysis.detect(Strategy::SuspectRemoval, n, e, &probe.mask, self.recognizer)?));
            denoised.push((n, analysis.detect(Strategy::DenoisedRemoval, n, e, &probe.mask, self.recognizer)?));
        }
        Ok(SweepOutcome {
            random,
            suspect,
            denoised,
            alpha: analysis.scores().alpha.clone(),
            psnr: psnr(image, &analysis.denoised_image()?),
        })
    }
}

fn mean_alpha(outcomes: &[SweepOutcome]) -> Vec<f64> {
    let bands = outcomes.first().map_or(0, |o| o.alpha.len());
    let mut mean = vec![0.0; bands];
    for o in outcomes {
        for (m, a) in mean.iter_mut().zip(&o.alpha) {
            *m += a / outcomes.len() as f64;
        }
    }
    mean
}

fn tally_cells(plan: &ExperimentPlan, attack: &str, mix: &[(Truth, &SweepOutcome)]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for (i, &k) in plan.k_grid.iter().enumerate() {
        for (j, &n) in plan.n_grid.iter().enumerate() {
            // strategy1_sweep lists N-major, K-minor.
            let at = j * plan.k_grid.len() + i;
            let t = Tally::from_results(mix.iter().map(|(truth, o)| (*truth, &o.random[at].1)));
            cells.push(Cell::new(Strategy::RandomMasking, attack, Some(k), n, t));
        }
    }
    for (strategy, pick) in [
        (Strategy::SuspectRemoval, (|o: &SweepOutcome| &o.suspect) as fn(&SweepOutcome) -> &Vec<(usize, DetectionResult)>),
        (Strategy::DenoisedRemoval, |o: &SweepOutcome| &o.denoised),
    ] {
        for (j, &n) in plan.n_grid.iter().enumerate() {
            let t = Tally::from_results(mix.iter().map(|(truth, o)| (*truth, &pick(o)[j].1)));
            cells.push(Cell::new(strategy, attack, None, n, t));
        }
    }
    cells
}
