//! One denoising autoencoder per wavelet sub-band, their calibrated average
//! reconstruction errors and the per-example alpha ratios.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Array4, Axis};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irispipe::GrayImage;
use crate::rng::{derive_seed, stream};
use crate::tensornet::{denoiser_architecture, load_model, save_model, train, NetworkModel, TrainConfig, TrainReport};
use crate::wavelet::{uniform_decompose, SubbandMask, SubbandSet, WaveletFilters};

/// Floor on calibrated average errors.
pub const D_AVG_FLOOR: f64 = 1e-8;
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const BANK_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankConfig {
    pub level: usize,
    pub wavelet: String,
    pub width_scale: f64,
    /// Input noise sigma as a fraction of the band's standard deviation.
    pub noise_ratio: f64,
    /// Train clean-to-clean (plain reconstruction) instead of noisy-to-clean.
    pub plain_reconstruction: bool,
    pub train: TrainConfig,
    /// Bands (1-based) trained for `long_epochs` instead of `train.epochs`.
    pub long_bands: Vec<usize>,
    pub long_epochs: usize,
    pub master_seed: u64,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            level: 2,
            wavelet: "haar".into(),
            width_scale: 0.5,
            noise_ratio: 0.05,
            plain_reconstruction: false,
            train: TrainConfig {
                learning_rate: 3e-3,
                batch_size: 4,
                epochs: 10,
                ..TrainConfig::default()
            },
            long_bands: vec![1, 2, 3],
            long_epochs: 25,
            master_seed: 0,
        }
    }
}

/// Per-example errors and their ratios to the calibrated averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubbandScores {
    pub d: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DenoiserBank {
    pub level: usize,
    pub wavelet: String,
    pub master_seed: u64,
    models: Vec<NetworkModel>,
    d_avg: Option<Vec<f64>>,
    calibration_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CalibrationFile {
    format_version: u16,
    level: usize,
    wavelet: String,
    master_seed: u64,
    d_avg: Option<Vec<f64>>,
    calibration_count: usize,
}

fn meta_f64(model: &NetworkModel, key: &str) -> Result<f64> {
    model
        .metadata
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("denoiser model lacks `{key}` metadata")))
}

/// `(n, 1, h, w)` stack of band `index` (1-based) over the given sets.
fn band_stack(sets: &[SubbandSet], index: usize) -> Array4<f64> {
    let (h, w) = sets[0].band_shape();
    let mut t = Array4::zeros((sets.len(), 1, h, w));
    for (k, set) in sets.iter().enumerate() {
        t.slice_mut(s![k, 0, .., ..]).assign(set.band(index));
    }
    t
}

pub fn decompose_all(images: &[GrayImage], level: usize, filters: &WaveletFilters) -> Result<Vec<SubbandSet>> {
    images
        .iter()
        .map(|im| uniform_decompose(im.pixels().view(), level, filters))
        .collect()
}

/// Train one autoencoder per sub-band on benign images.
pub fn train_bank(images: &[GrayImage], cfg: &BankConfig) -> Result<(DenoiserBank, Vec<TrainReport>)> {
    if images.is_empty() {
        return Err(Error::Argument("empty denoiser training set".into()));
    }
    cfg.train.validate()?;
    let filters = WaveletFilters::by_name(&cfg.wavelet)?;
    let sets = decompose_all(images, cfg.level, &filters)?;
    let nb = sets[0].len();
    if cfg.long_bands.iter().any(|&b| b == 0 || b > nb) || (!cfg.long_bands.is_empty() && cfg.long_epochs == 0) {
        return Err(Error::Argument(format!("long_bands must lie in 1..={nb} with long_epochs > 0")));
    }
    let trained: Vec<(NetworkModel, TrainReport)> = (1..=nb)
        .into_par_iter()
        .map(|i| train_band(&sets, i, cfg))
        .collect::<Result<_>>()?;
    let (models, reports) = trained.into_iter().unzip();
    Ok((
        DenoiserBank {
            level: cfg.level,
            wavelet: cfg.wavelet.clone(),
            master_seed: cfg.master_seed,
            models,
            d_avg: None,
            calibration_count: 0,
        },
        reports,
    ))
}

/// Train the autoencoder of band `index` (1-based) on decomposed images.
pub fn train_band(sets: &[SubbandSet], index: usize, cfg: &BankConfig) -> Result<(NetworkModel, TrainReport)> {
    if sets.is_empty() || index == 0 || index > sets[0].len() {
        return Err(Error::Argument(format!("cannot train band {index}")));
    }
    let clean = band_stack(sets, index);
    let mean = clean.mean().unwrap_or(0.0);
    let var = clean.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / clean.len() as f64;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let target = clean.mapv(|v| (v - mean) / std);
    // In normalized units the band std is 1, so the ratio is the sigma.
    let input = if cfg.plain_reconstruction || cfg.noise_ratio <= 0.0 {
        target.clone()
    } else {
        let mut rng = stream(cfg.master_seed, &[2, index as u64]);
        let normal = Normal::new(0.0, cfg.noise_ratio).map_err(|e| Error::Argument(e.to_string()))?;
        target.mapv(|v| v + normal.sample(&mut rng))
    };
    let seed = derive_seed(cfg.master_seed, &[1, index as u64]);
    let mut model = NetworkModel::new(denoiser_architecture(sets[0].band_shape(), cfg.width_scale), seed)?;
    let epochs = if cfg.long_bands.contains(&index) { cfg.long_epochs } else { cfg.train.epochs };
    let tc = TrainConfig {
        seed,
        epochs,
        ..cfg.train.clone()
    };
    let report = train(&mut model, &input, &target, &tc).map_err(|e| tag(e, index))?;
    model.metadata.insert("band".into(), index.to_string());
    model.metadata.insert("band_mean".into(), format!("{mean:e}"));
    model.metadata.insert("band_std".into(), format!("{std:e}"));
    model.metadata.insert("init_seed".into(), seed.to_string());
    Ok((model, report))
}

/// Peak signal-to-noise ratio in dB for images with peak value 1.
pub fn psnr(reference: &Array2<f64>, test: &Array2<f64>) -> f64 {
    let mse = reference.iter().zip(test).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / reference.len().max(1) as f64;
    -10.0 * mse.max(1e-20).log10()
}

fn tag(e: Error, band: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("sub-band {band}: {m}")),
        Error::Dimension(m) => Error::Dimension(format!("sub-band {band}: {m}")),
        other => other,
    }
}

impl DenoiserBank {
    pub fn from_parts(level: usize, wavelet: &str, master_seed: u64, models: Vec<NetworkModel>) -> Result<Self> {
        if models.len() != 1 << (2 * level) {
            return Err(Error::dim(format!("{} models for level {level}", models.len())));
        }
        for m in &models {
            meta_f64(m, "band_mean")?;
            meta_f64(m, "band_std")?;
        }
        Ok(DenoiserBank {
            level,
            wavelet: wavelet.into(),
            master_seed,
            models,
            d_avg: None,
            calibration_count: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[NetworkModel] {
        &self.models
    }

    pub fn into_models(self) -> Vec<NetworkModel> {
        self.models
    }

    pub fn filters(&self) -> Result<WaveletFilters> {
        WaveletFilters::by_name(&self.wavelet)
    }

    pub fn d_avg(&self) -> Option<&[f64]> {
        self.d_avg.as_deref()
    }

    pub fn calibration_count(&self) -> usize {
        self.calibration_count
    }

    pub fn is_calibrated(&self) -> bool {
        self.d_avg.is_some()
    }

    /// Replace the calibration directly (floored at [`D_AVG_FLOOR`]).
    pub fn set_calibration(&mut self, d_avg: Vec<f64>, count: usize) -> Result<()> {
        if d_avg.len() != self.len() {
            return Err(Error::dim("calibration length differs from bank size"));
        }
        self.d_avg = Some(d_avg.into_iter().map(|v| v.max(D_AVG_FLOOR)).collect());
        self.calibration_count = count;
        Ok(())
    }

    fn check(&self, set: &SubbandSet) -> Result<()> {
        if set.level() != self.level {
            return Err(Error::dim(format!("sub-band set level {} vs bank level {}", set.level(), self.level)));
        }
        let [_, h, w] = self.models[0].input_shape();
        if set.band_shape() != (h, w) {
            return Err(Error::dim(format!("band shape {:?} vs denoiser input {:?}", set.band_shape(), (h, w))));
        }
        Ok(())
    }

    /// Autoencoder reconstruction of band `index` (1-based) for a stack of
    /// bands `(n, 1, h, w)` in original units.
    fn reconstruct_stack(&self, index: usize, bands: &Array4<f64>) -> Result<Array4<f64>> {
        let m = &self.models[index - 1];
        let mean = meta_f64(m, "band_mean")?;
        let std = meta_f64(m, "band_std")?;
        let y = m.infer(&bands.mapv(|v| (v - mean) / std))?;
        Ok(y.mapv(|v| v * std + mean))
    }

    /// Per-band errors `||AE_i(X_i) - X_i||_2` for each set.
    pub fn errors(&self, sets: &[SubbandSet]) -> Result<Vec<Vec<f64>>> {
        if sets.is_empty() {
            return Ok(Vec::new());
        }
        for s in sets {
            self.check(s)?;
        }
        let per_band: Vec<Vec<f64>> = (1..=self.len())
            .into_par_iter()
            .map(|i| {
                let x = band_stack(sets, i);
                let y = self.reconstruct_stack(i, &x)?;
                Ok((0..sets.len())
                    .map(|k| {
                        let d = &y.index_axis(Axis(0), k) - &x.index_axis(Axis(0), k);
                        d.iter().map(|v| v * v).sum::<f64>().sqrt()
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok((0..sets.len()).map(|k| per_band.iter().map(|b| b[k]).collect()).collect())
    }

    /// Average per-band error over benign validation images.
    pub fn calibrate(&mut self, validation: &[GrayImage]) -> Result<()> {
        if validation.is_empty() {
            return Err(Error::Argument("empty calibration set".into()));
        }
        let sets = decompose_all(validation, self.level, &self.filters()?)?;
        self.calibrate_sets(&sets)
    }

    pub fn calibrate_sets(&mut self, sets: &[SubbandSet]) -> Result<()> {
        if sets.is_empty() {
            return Err(Error::Argument("empty calibration set".into()));
        }
        let errs = self.errors(sets)?;
        let n = errs.len() as f64;
        let d_avg = (0..self.len()).map(|i| errs.iter().map(|e| e[i]).sum::<f64>() / n).collect();
        self.set_calibration(d_avg, errs.len())
    }

    pub fn score(&self, set: &SubbandSet) -> Result<SubbandScores> {
        let d_avg = self
            .d_avg
            .as_ref()
            .ok_or_else(|| Error::State("denoiser bank is not calibrated".into()))?;
        let d = self.errors(std::slice::from_ref(set))?.remove(0);
        let alpha = d.iter().zip(d_avg).map(|(d, a)| d / a).collect();
        Ok(SubbandScores { d, alpha })
    }

    /// Every band replaced by its autoencoder reconstruction.
    pub fn denoise_all(&self, set: &SubbandSet) -> Result<SubbandSet> {
        self.check(set)?;
        let sets = std::slice::from_ref(set);
        let bands = (1..=self.len())
            .map(|i| {
                let y = self.reconstruct_stack(i, &band_stack(sets, i))?;
                Ok(y.slice(s![0, 0, .., ..]).to_owned())
            })
            .collect::<Result<Vec<Array2<f64>>>>()?;
        SubbandSet::new(set.level(), bands, set.source_shape())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, m) in self.models.iter().enumerate() {
            save_model(m, &dir.join(format!("band_{:02}.wshd", i + 1)))?;
        }
        self.save_calibration(dir)
    }

    pub fn save_calibration(&self, dir: &Path) -> Result<()> {
        let cal = CalibrationFile {
            format_version: BANK_VERSION,
            level: self.level,
            wavelet: self.wavelet.clone(),
            master_seed: self.master_seed,
            d_avg: self.d_avg.clone(),
            calibration_count: self.calibration_count,
        };
        let path = dir.join(CALIBRATION_FILE);
        fs::write(&path, serde_json::to_string_pretty(&cal)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CALIBRATION_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let cal: CalibrationFile = serde_json::from_str(&text)?;
        if cal.format_version != BANK_VERSION {
            return Err(Error::Format(format!(
                "{}: bank format version {} (expected {BANK_VERSION})",
                path.display(),
                cal.format_version
            )));
        }
        let models = (1..=1usize << (2 * cal.level))
            .map(|i| load_model(&dir.join(format!("band_{i:02}.wshd"))))
            .collect::<Result<Vec<_>>>()?;
        let mut bank = DenoiserBank::from_parts(cal.level, &cal.wavelet, cal.master_seed, models)?;
        if let Some(d) = cal.d_avg {
            bank.set_calibration(d, cal.calibration_count)?;
        }
        Ok(bank)
    }
}

/// Zero the `n` eligible bands with the largest alpha (ties: lower index
/// first). `eligible` holds 1-based band indices.
pub fn select_suspects(scores: &SubbandScores, n: usize, eligible: &[usize]) -> Result<SubbandMask> {
    let len = scores.alpha.len();
    if n > eligible.len() {
        return Err(Error::Argument(format!("N = {n} exceeds {} eligible bands", eligible.len())));
    }
    if let Some(&bad) = eligible.iter().find(|&&i| i == 0 || i > len) {
        return Err(Error::Argument(format!("eligible band {bad} outside 1..={len}")));
    }
    let mut order: Vec<usize> = eligible.to_vec();
    order.sort_unstable();
    order.dedup();
    order.sort_by(|&a, &b| scores.alpha[b - 1].total_cmp(&scores.alpha[a - 1]).then(a.cmp(&b)));
    SubbandMask::zeroing(len, &order[..n])
}
