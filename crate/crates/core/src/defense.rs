//! Detection of adversarial iris images by removing wavelet sub-bands and
//! checking whether the assigned identity survives.
//!
//! Strategy 1 zeroes random subsets of mid/high bands `K` times and takes a
//! majority vote. Strategy 2 zeroes the `N` bands whose denoiser error ratio
//! is largest. Strategy 3 does the same and also swaps every remaining band
//! for its denoised version.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoise::{select_suspects, DenoiserBank, SubbandScores};
use crate::error::{Error, Result};
use crate::irispipe::{classify, code_from_responses, identify, GaborBank, IrisCode, IrisRecord};
use crate::provenance::config_hash;
use crate::rng::{derive_seed, stream};
use crate::wavelet::{
    apply_mask, band_frequency_bins, uniform_decompose, uniform_reconstruct, SubbandMask, SubbandSet, WaveletFilters,
};

/// Identity assigned by the recognizer; `None` means no gallery entry matched.
pub type ClassLabel = Option<u32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    RandomMasking,
    SuspectRemoval,
    DenoisedRemoval,
}

impl Strategy {
    pub fn number(self) -> u8 {
        match self {
            Strategy::RandomMasking => 1,
            Strategy::SuspectRemoval => 2,
            Strategy::DenoisedRemoval => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Strategy::RandomMasking),
            2 => Ok(Strategy::SuspectRemoval),
            3 => Ok(Strategy::DenoisedRemoval),
            _ => Err(Error::Argument(format!("strategy must be 1, 2 or 3 (got {n})"))),
        }
    }
}

/// Named choices of bands that may be zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EligiblePreset {
    All,
    /// Everything except the descendants of the first-level low-pass band.
    ExcludeLowpassTree,
    /// Everything except the `4^(L-1)` bands of lowest frequency magnitude.
    ExcludeLowestFrequencies,
    /// Everything except band 1.
    ExcludeBandOne,
}

impl EligiblePreset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(EligiblePreset::All),
            "exclude_lowpass_tree" => Ok(EligiblePreset::ExcludeLowpassTree),
            "exclude_lowest_frequencies" => Ok(EligiblePreset::ExcludeLowestFrequencies),
            "exclude_band_one" => Ok(EligiblePreset::ExcludeBandOne),
            other => Err(Error::Argument(format!("unknown eligible preset `{other}`"))),
        }
    }
}

/// 1-based eligible band indices, ascending.
pub fn eligible_bands(level: usize, preset: EligiblePreset) -> Vec<usize> {
    let len = 1usize << (2 * level);
    let quarter = len / 4;
    match preset {
        EligiblePreset::All => (1..=len).collect(),
        EligiblePreset::ExcludeBandOne => (2..=len).collect(),
        EligiblePreset::ExcludeLowpassTree => (quarter + 1..=len).collect(),
        EligiblePreset::ExcludeLowestFrequencies => {
            let bins = band_frequency_bins(level);
            let mut order: Vec<usize> = (1..=len).collect();
            order.sort_by_key(|&i| {
                let (h, v) = bins[i - 1];
                (h.max(v), h + v, i)
            });
            let mut kept = order.split_off(quarter);
            kept.sort_unstable();
            kept
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseConfig {
    pub strategy: Strategy,
    /// Reconstructions per input (strategy 1).
    pub k: usize,
    /// Bands zeroed (strategies 2 and 3) or the most zeroed per
    /// reconstruction (strategy 1).
    pub n: usize,
    pub eligible: Vec<usize>,
    pub level: usize,
    pub wavelet: String,
    pub seed: u64,
    /// Open-set acceptance threshold on the Hamming distance; `None` assigns
    /// the nearest gallery identity unconditionally.
    pub match_threshold: Option<f64>,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig::for_strategy(Strategy::SuspectRemoval)
    }
}

impl DefenseConfig {
    /// Defaults for a strategy, with its default eligible set.
    pub fn for_strategy(strategy: Strategy) -> Self {
        let preset = match strategy {
            Strategy::RandomMasking => EligiblePreset::ExcludeLowpassTree,
            _ => EligiblePreset::All,
        };
        DefenseConfig {
            strategy,
            k: 15,
            n: 5,
            eligible: eligible_bands(2, preset),
            level: 2,
            wavelet: "haar".into(),
            seed: 0,
            match_threshold: Some(0.32),
        }
    }

    pub fn band_count(&self) -> usize {
        1 << (2 * self.level)
    }

    pub fn validate(&self) -> Result<()> {
        if self.level == 0 {
            return Err(Error::Argument("decomposition level must be >= 1".into()));
        }
        let len = self.band_count();
        let mut seen = vec![false; len];
        for &i in &self.eligible {
            if i == 0 || i > len {
                return Err(Error::Argument(format!("eligible band {i} outside 1..={len}")));
            }
            if std::mem::replace(&mut seen[i - 1], true) {
                return Err(Error::Argument(format!("eligible band {i} listed twice")));
            }
        }
        if self.n > self.eligible.len() {
            return Err(Error::Argument(format!("N = {} exceeds {} eligible bands", self.n, self.eligible.len())));
        }
        if self.strategy == Strategy::RandomMasking && (self.k == 0 || self.n == 0) {
            return Err(Error::Argument("strategy 1 needs K >= 1 and N >= 1".into()));
        }
        if let Some(t) = self.match_threshold {
            if !(t > 0.0 && t <= 0.5) {
                return Err(Error::Argument("match_threshold must lie in (0, 0.5]".into()));
            }
        }
        WaveletFilters::by_name(&self.wavelet)?;
        Ok(())
    }
}

/// Iris-code matcher shared by every strategy and by the benign path.
#[derive(Debug, Clone)]
pub struct Recognizer {
    gabor: GaborBank,
    gallery: Vec<(u32, IrisCode)>,
    threshold: Option<f64>,
}

impl Recognizer {
    pub fn new(gabor: GaborBank, gallery: Vec<(u32, IrisCode)>, threshold: Option<f64>) -> Result<Self> {
        if gallery.is_empty() {
            return Err(Error::Argument("empty gallery".into()));
        }
        Ok(Recognizer {
            gabor,
            gallery,
            threshold,
        })
    }

    /// Encode gallery records with `gabor`.
    pub fn from_records<'a>(
        gabor: GaborBank,
        records: impl IntoIterator<Item = &'a IrisRecord>,
        threshold: Option<f64>,
    ) -> Result<Self> {
        let gallery = records
            .into_iter()
            .map(|r| Ok((r.identity, crate::irispipe::encode_hard(r, &gabor)?)))
            .collect::<Result<Vec<_>>>()?;
        Recognizer::new(gabor, gallery, threshold)
    }

    pub fn gabor(&self) -> &GaborBank {
        &self.gabor
    }

    pub fn gallery(&self) -> &[(u32, IrisCode)] {
        &self.gallery
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn with_threshold(&self, threshold: Option<f64>) -> Self {
        Recognizer {
            threshold,
            ..self.clone()
        }
    }

    pub fn encode(&self, image: &Array2<f64>, mask: &Array2<bool>) -> Result<IrisCode> {
        code_from_responses(&self.gabor.responses(image.view())?, mask)
    }

    /// Assigned label and the best Hamming distance.
    pub fn recognize(&self, image: &Array2<f64>, mask: &Array2<bool>) -> Result<(ClassLabel, f64)> {
        let code = self.encode(image, mask)?;
        match self.threshold {
            Some(t) => identify(&code, &self.gallery, t),
            None => classify(&code, &self.gallery).map(|(c, d)| (Some(c), d)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Benign,
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub verdict: Verdict,
    pub c0: ClassLabel,
    pub cr: ClassLabel,
    /// Strategy 1 vote counts keyed by [`label_key`].
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub votes: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<SubbandScores>,
    /// Zeroed bands of each reconstruction.
    pub zeroed: Vec<Vec<usize>>,
}

pub fn label_key(label: ClassLabel) -> String {
    label.map_or_else(|| "unknown".into(), |c| c.to_string())
}

/// One zeroing pattern for strategy 1: a size drawn uniformly from `1..=n`,
/// then that many distinct eligible bands, ascending.
pub fn draw_subset(rng: &mut impl Rng, n: usize, eligible: &[usize]) -> Vec<usize> {
    let size = rng.gen_range(1..=n);
    let mut picked: Vec<usize> = sample(rng, eligible.len(), size).into_iter().map(|i| eligible[i]).collect();
    picked.sort_unstable();
    picked
}

/// The unique most frequent label, or `None` on a tie.
fn modal(labels: &[ClassLabel]) -> (Option<ClassLabel>, BTreeMap<String, usize>) {
    let mut counts: BTreeMap<ClassLabel, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let mut winners = counts.iter().filter(|(_, &c)| c == top).map(|(&l, _)| l);
    let first = winners.next();
    let unique = if winners.next().is_some() { None } else { first };
    (unique, counts.into_iter().map(|(l, c)| (label_key(l), c)).collect())
}

fn masked_reconstruction(set: &SubbandSet, zeroed: &[usize], filters: &WaveletFilters) -> Result<Array2<f64>> {
    let mask = SubbandMask::zeroing(set.len(), zeroed)?;
    uniform_reconstruct(&apply_mask(set, &mask)?, filters)
}

/// Strategy 1 labels of reconstructions `0..k_max` at a given `n`.
fn random_masking_votes(
    set: &SubbandSet,
    mask: &Array2<bool>,
    recognizer: &Recognizer,
    cfg: &DefenseConfig,
    k_max: usize,
) -> Result<Vec<(Vec<usize>, ClassLabel)>> {
    let filters = WaveletFilters::by_name(&cfg.wavelet)?;
    (0..k_max)
        .into_par_iter()
        .map(|k| {
            let zeroed = draw_subset(&mut stream(cfg.seed, &[k as u64]), cfg.n, &cfg.eligible);
            let x = masked_reconstruction(set, &zeroed, &filters)?;
            Ok((zeroed, recognizer.recognize(&x, mask)?.0))
        })
        .collect()
}

fn vote(c0: ClassLabel, draws: &[(Vec<usize>, ClassLabel)]) -> DetectionResult {
    let labels: Vec<ClassLabel> = draws.iter().map(|d| d.1).collect();
    let (winner, votes) = modal(&labels);
    let verdict = if winner == Some(c0) { Verdict::Benign } else { Verdict::Adversarial };
    DetectionResult {
        verdict,
        c0,
        cr: winner.flatten(),
        votes,
        alpha: None,
        zeroed: draws.iter().map(|d| d.0.clone()).collect(),
    }
}

fn check_strategy(cfg: &DefenseConfig, want: Strategy) -> Result<()> {
    cfg.validate()?;
    if cfg.strategy != want {
        return Err(Error::Argument(format!(
            "config is for strategy {}, not {}",
            cfg.strategy.number(),
            want.number()
        )));
    }
    Ok(())
}

/// Random-masking majority vote. A tied vote counts as adversarial.
pub fn strategy1_detect(
    image: &Array2<f64>,
    mask: &Array2<bool>,
    recognizer: &Recognizer,
    cfg: &DefenseConfig,
) -> Result<DetectionResult> {
    check_strategy(cfg, Strategy::RandomMasking)?;
    let filters = WaveletFilters::by_name(&cfg.wavelet)?;
    let set = uniform_decompose(image.view(), cfg.level, &filters)?;
    let c0 = recognizer.recognize(image, mask)?.0;
    let draws = random_masking_votes(&set, mask, recognizer, cfg, cfg.k)?;
    Ok(vote(c0, &draws))
}

/// Strategy 1 over a `K x N` grid. Reconstruction `k` depends only on
/// `(seed, k, N)`, so each entry equals a separate [`strategy1_detect`] call.
pub fn strategy1_sweep(
    image: &Array2<f64>,
    mask: &Array2<bool>,
    recognizer: &Recognizer,
    cfg: &DefenseConfig,
    ks: &[usize],
    ns: &[usize],
) -> Result<Vec<((usize, usize), DetectionResult)>> {
    let filters = WaveletFilters::by_name(&cfg.wavelet)?;
    let set = uniform_decompose(image.view(), cfg.level, &filters)?;
    let c0 = recognizer.recognize(image, mask)?.0;
    let k_max = ks.iter().copied().max().unwrap_or(0);
    let mut out = Vec::with_capacity(ks.len() * ns.len());
    for &n in ns {
        let at_n = DefenseConfig {
            n,
            k: k_max.max(1),
            ..cfg.clone()
        };
        check_strategy(&at_n, Strategy::RandomMasking)?;
        let draws = random_masking_votes(&set, mask, recognizer, &at_n, k_max)?;
        for &k in ks {
            if k == 0 {
                return Err(Error::Argument("strategy 1 needs K >= 1".into()));
            }
            out.push(((k, n), vote(c0, &draws[..k])));
        }
    }
    Ok(out)
}

/// Decomposition, scores and (for strategy 3) denoised bands of one input,
/// shared across every `N` of a sweep.
pub struct SuspectAnalysis {
    set: SubbandSet,
    scores: SubbandScores,
    denoised: Option<SubbandSet>,
    c0: ClassLabel,
    filters: WaveletFilters,
}

impl SuspectAnalysis {
    pub fn new(
        image: &Array2<f64>,
        mask: &Array2<bool>,
        recognizer: &Recognizer,
        bank: &DenoiserBank,
        with_denoised: bool,
    ) -> Result<Self> {
        let filters = bank.filters()?;
        let set = uniform_decompose(image.view(), bank.level, &filters)?;
        let scores = bank.score(&set)?;
        let denoised = if with_denoised { Some(bank.denoise_all(&set)?) } else { None };
        Ok(SuspectAnalysis {
            set,
            scores,
            denoised,
            c0: recognizer.recognize(image, mask)?.0,
            filters,
        })
    }

    pub fn scores(&self) -> &SubbandScores {
        &self.scores
    }

    /// Reconstruction from the denoised bands alone.
    pub fn denoised_image(&self) -> Result<Array2<f64>> {
        let set = self
            .denoised
            .as_ref()
            .ok_or_else(|| Error::State("analysis was built without denoised bands".into()))?;
        uniform_reconstruct(set, &self.filters)
    }

    pub fn c0(&self) -> ClassLabel {
        self.c0
    }

    pub fn detect(
        &self,
        strategy: Strategy,
        n: usize,
        eligible: &[usize],
        mask: &Array2<bool>,
        recognizer: &Recognizer,
    ) -> Result<DetectionResult> {
        let suspects = select_suspects(&self.scores, n, eligible)?;
        let base = match strategy {
            Strategy::SuspectRemoval => &self.set,
            Strategy::DenoisedRemoval => self
                .denoised
                .as_ref()
                .ok_or_else(|| Error::State("analysis was built without denoised bands".into()))?,
            Strategy::RandomMasking => {
                return Err(Error::Argument("suspect analysis serves strategies 2 and 3".into()))
            }
        };
        let x = uniform_reconstruct(&apply_mask(base, &suspects)?, &self.filters)?;
        let cr = recognizer.recognize(&x, mask)?.0;
        Ok(DetectionResult {
            verdict: if cr == self.c0 { Verdict::Benign } else { Verdict::Adversarial },
            c0: self.c0,
            cr,
            votes: BTreeMap::new(),
            alpha: Some(self.scores.clone()),
            zeroed: vec![suspects.zeroed()],
        })
    }
}

fn check_bank(cfg: &DefenseConfig, bank: &DenoiserBank) -> Result<()> {
    if bank.level != cfg.level || bank.wavelet != cfg.wavelet {
        return Err(Error::Argument(format!(
            "bank uses level {} / {}, config asks for level {} / {}",
            bank.level, bank.wavelet, cfg.level, cfg.wavelet
        )));
    }
    if !bank.is_calibrated() {
        return Err(Error::State("denoiser bank is not calibrated".into()));
    }
    Ok(())
}

/// Zero the `N` bands with the largest error ratio, keep the rest.
pub fn strategy2_detect(
    image: &Array2<f64>,
    mask: &Array2<bool>,
    recognizer: &Recognizer,
    bank: &DenoiserBank,
    cfg: &DefenseConfig,
) -> Result<DetectionResult> {
    check_strategy(cfg, Strategy::SuspectRemoval)?;
    check_bank(cfg, bank)?;
    SuspectAnalysis::new(image, mask, recognizer, bank, false)?.detect(
        Strategy::SuspectRemoval,
        cfg.n,
        &cfg.eligible,
        mask,
        recognizer,
    )
}

/// Zero the `N` bands with the largest error ratio, denoise the rest.
pub fn strategy3_detect(
    image: &Array2<f64>,
    mask: &Array2<bool>,
    recognizer: &Recognizer,
    bank: &DenoiserBank,
    cfg: &DefenseConfig,
) -> Result<DetectionResult> {
    check_strategy(cfg, Strategy::DenoisedRemoval)?;
    check_bank(cfg, bank)?;
    SuspectAnalysis::new(image, mask, recognizer, bank, true)?.detect(
        Strategy::DenoisedRemoval,
        cfg.n,
        &cfg.eligible,
        mask,
        recognizer,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Benign,
    Adversarial,
}

#[derive(Debug, Clone)]
pub struct LabeledInput {
    pub record: IrisRecord,
    pub truth: Truth,
}

impl LabeledInput {
    pub fn id(&self) -> String {
        let tag = match self.truth {
            Truth::Benign => "benign",
            Truth::Adversarial => "adv",
        };
        format!("{}_{tag}", self.record.id())
    }
}

/// Seed of one input: the same underlying probe gets the same draws whether
/// it is presented benign or attacked.
pub fn input_seed(cfg: &DefenseConfig, record: &IrisRecord) -> u64 {
    derive_seed(cfg.seed, &[u64::from(record.identity), u64::from(record.index)])
}

/// Run the configured strategy over every input, in input order.
pub fn defend_batch(
    inputs: &[LabeledInput],
    recognizer: &Recognizer,
    bank: Option<&DenoiserBank>,
    cfg: &DefenseConfig,
) -> Result<Vec<DetectionResult>> {
    cfg.validate()?;
    let need_bank = || bank.ok_or_else(|| Error::State(format!("strategy {} needs a denoiser bank", cfg.strategy.number())));
    if cfg.strategy != Strategy::RandomMasking {
        check_bank(cfg, need_bank()?)?;
    }
    inputs
        .par_iter()
        .map(|inp| {
            let rec = &inp.record;
            let c = DefenseConfig {
                seed: input_seed(cfg, rec),
                ..cfg.clone()
            };
            let image = rec.image.pixels();
            match cfg.strategy {
                Strategy::RandomMasking => strategy1_detect(image, &rec.mask, recognizer, &c),
                Strategy::SuspectRemoval => strategy2_detect(image, &rec.mask, recognizer, need_bank()?, &c),
                Strategy::DenoisedRemoval => strategy3_detect(image, &rec.mask, recognizer, need_bank()?, &c),
            }
        })
        .collect()
}

/// Verdict counts per ground-truth class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub benign_pass: usize,
    pub benign_fail: usize,
    pub adversarial_detected: usize,
    pub adversarial_missed: usize,
}

impl Tally {
    pub fn from_results<'a>(pairs: impl IntoIterator<Item = (Truth, &'a DetectionResult)>) -> Self {
        let mut t = Tally::default();
        for (truth, r) in pairs {
            match (truth, r.verdict) {
                (Truth::Benign, Verdict::Benign) => t.benign_pass += 1,
                (Truth::Benign, Verdict::Adversarial) => t.benign_fail += 1,
                (Truth::Adversarial, Verdict::Adversarial) => t.adversarial_detected += 1,
                (Truth::Adversarial, Verdict::Benign) => t.adversarial_missed += 1,
            }
        }
        t
    }

    pub fn benign(&self) -> usize {
        self.benign_pass + self.benign_fail
    }

    pub fn adversarial(&self) -> usize {
        self.adversarial_detected + self.adversarial_missed
    }

    pub fn total(&self) -> usize {
        self.benign() + self.adversarial()
    }

    /// Percentage of correct verdicts over both classes.
    pub fn success_rate(&self) -> f64 {
        percent(self.benign_pass + self.adversarial_detected, self.total())
    }

    pub fn benign_pass_rate(&self) -> f64 {
        percent(self.benign_pass, self.benign())
    }

    pub fn detection_rate(&self) -> f64 {
        percent(self.adversarial_detected, self.adversarial())
    }
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLogEntry {
    pub input: String,
    pub truth: Truth,
    pub verdict: Verdict,
    pub c0: ClassLabel,
    pub cr: ClassLabel,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub votes: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    pub zeroed: Vec<Vec<usize>>,
    pub config_hash: String,
}

pub fn detection_log(inputs: &[LabeledInput], results: &[DetectionResult], cfg: &DefenseConfig) -> Result<Vec<DetectionLogEntry>> {
    if inputs.len() != results.len() {
        return Err(Error::dim(format!("{} inputs but {} results", inputs.len(), results.len())));
    }
    let hash = config_hash(cfg)?;
    Ok(inputs
        .iter()
        .zip(results)
        .map(|(i, r)| DetectionLogEntry {
            input: i.id(),
            truth: i.truth,
            verdict: r.verdict,
            c0: r.c0,
            cr: r.cr,
            votes: r.votes.clone(),
            alpha: r.alpha.as_ref().map(|a| a.alpha.clone()),
            zeroed: r.zeroed.clone(),
            config_hash: hash.clone(),
        })
        .collect())
}

pub fn write_detection_log(path: &Path, entries: &[DetectionLogEntry]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(entries)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        assert_eq!(eligible_bands(2, EligiblePreset::ExcludeLowpassTree), (5..=16).collect::<Vec<_>>());
        assert_eq!(eligible_bands(2, EligiblePreset::ExcludeLowestFrequencies), (5..=16).collect::<Vec<_>>());
        assert_eq!(eligible_bands(2, EligiblePreset::All).len(), 16);
        assert_eq!(eligible_bands(1, EligiblePreset::ExcludeLowpassTree), vec![2, 3, 4]);
    }

    #[test]
    fn modal_vote_and_ties() {
        let d = |l: ClassLabel| (vec![5], l);
        let r = vote(Some(1), &[d(Some(1)), d(Some(1)), d(Some(2))]);
        assert_eq!(r.verdict, Verdict::Benign);
        assert_eq!(r.votes["1"], 2);
        let r = vote(Some(1), &[d(Some(1)), d(Some(2))]);
        assert_eq!(r.verdict, Verdict::Adversarial);
        assert_eq!(r.cr, None);
        let r = vote(None, &[d(None), d(None), d(Some(3))]);
        assert_eq!(r.verdict, Verdict::Benign);
        assert_eq!(r.votes["unknown"], 2);
    }

    #[test]
    fn subsets_stay_in_range() {
        let elig: Vec<usize> = (5..=16).collect();
        let mut rng = stream(3, &[]);
        for _ in 0..500 {
            let s = draw_subset(&mut rng, 4, &elig);
            assert!((1..=4).contains(&s.len()));
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.iter().all(|i| elig.contains(i)));
        }
    }

    #[test]
    fn config_validation() {
        let mut c = DefenseConfig::for_strategy(Strategy::RandomMasking);
        assert!(c.validate().is_ok());
        c.n = 13;
        assert!(c.validate().is_err());
        c.n = 0;
        assert!(c.validate().is_err());
        let mut c = DefenseConfig::default();
        c.n = 0;
        assert!(c.validate().is_ok());
        c.eligible = vec![3, 3];
        assert!(c.validate().is_err());
    }
}
