//! Seeded synthetic normalized-iris corpus.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::Fft2;
use super::image::{GrayImage, IrisRecord, Role};
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub identities: usize,
    /// Probes per identity, in addition to the single gallery image.
    pub probes_per_identity: usize,
    pub rows: usize,
    pub cols: usize,
    /// Number of oriented sinusoids in each base texture.
    pub components: usize,
    pub min_wavelength: f64,
    pub max_wavelength: f64,
    /// Weight of the smoothed-noise layer relative to the sinusoids.
    pub noise_weight: f64,
    /// Gaussian blur sigma (pixels) of the noise layer.
    pub noise_blur: f64,
    /// Additive Gaussian noise on probes, in pixel units.
    pub probe_noise: f64,
    /// Largest circular row/column shift of a probe, in pixels (fractional
    /// shifts are applied in the frequency domain).
    pub max_shift: f64,
    /// Upper bound on the occluded fraction of each mask.
    pub max_occlusion: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            identities: 40,
            probes_per_identity: 8,
            rows: 64,
            cols: 512,
            components: 24,
            min_wavelength: 6.0,
            max_wavelength: 48.0,
            noise_weight: 1.0,
            noise_blur: 1.5,
            probe_noise: 0.02,
            max_shift: 0.5,
            max_occlusion: 0.08,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.identities < 2 || self.probes_per_identity < 1 {
            return Err(Error::Argument("synthetic corpus needs >= 2 identities and >= 1 probe each".into()));
        }
        if self.rows % 4 != 0 || self.cols % 4 != 0 || self.rows < 8 || self.cols < 8 {
            return Err(Error::dim(format!("image {}x{} must be >= 8 and divisible by 4", self.rows, self.cols)));
        }
        if !(self.min_wavelength >= 2.0 && self.max_wavelength >= self.min_wavelength) {
            return Err(Error::Argument("wavelength range must satisfy 2 <= min <= max".into()));
        }
        if !(0.0..=2.0).contains(&self.max_shift) {
            return Err(Error::Argument("max_shift must lie in [0, 2]".into()));
        }
        if !(0.0..=0.1).contains(&self.max_occlusion) || self.probe_noise < 0.0 {
            return Err(Error::Argument("max_occlusion must lie in [0, 0.1]; probe_noise >= 0".into()));
        }
        Ok(())
    }
}

/// Generated corpus, gallery record first for each identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SynthSpec,
    pub records: Vec<IrisRecord>,
}

impl Dataset {
    pub fn gallery(&self) -> impl Iterator<Item = &IrisRecord> {
        self.records.iter().filter(|r| r.role == Role::Gallery)
    }

    pub fn probes(&self) -> impl Iterator<Item = &IrisRecord> {
        self.records.iter().filter(|r| r.role == Role::Probe)
    }
}

fn base_texture(spec: &SynthSpec, fft: &Fft2, rng: &mut impl Rng) -> Array2<f64> {
    let (rows, cols) = (spec.rows, spec.cols);
    let mut tex = Array2::<f64>::zeros((rows, cols));
    let (lo, hi) = (spec.min_wavelength.ln(), spec.max_wavelength.ln());
    for _ in 0..spec.components {
        let lambda = rng.gen_range(lo..=hi).exp();
        let theta = rng.gen_range(0.0..PI);
        // Integer cycle counts keep the texture periodic on the grid.
        let u = (rows as f64 / lambda * theta.sin()).round();
        let v = (cols as f64 / lambda * theta.cos()).round();
        let amp = rng.gen_range(0.5..1.0);
        let phase = rng.gen_range(0.0..2.0 * PI);
        tex.indexed_iter_mut().for_each(|((r, c), t)| {
            *t += amp * (2.0 * PI * (u * r as f64 / rows as f64 + v * c as f64 / cols as f64) + phase).sin();
        });
    }
    standardize(&mut tex);
    if spec.noise_weight > 0.0 {
        let mut noise = smoothed_noise(rows, cols, spec.noise_blur, fft, rng);
        standardize(&mut noise);
        tex.zip_mut_with(&noise, |t, n| *t += spec.noise_weight * n);
    }
    let (min, max) = tex.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (max - min).max(1e-12);
    tex.mapv(|v| (v - min) / span)
}

fn standardize(a: &mut Array2<f64>) {
    let mean = a.mean().unwrap_or(0.0);
    let sd = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    a.mapv_inplace(|v| (v - mean) / sd);
}

fn smoothed_noise(rows: usize, cols: usize, blur: f64, fft: &Fft2, rng: &mut impl Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut buf: Vec<Complex64> = (0..rows * cols).map(|_| Complex64::new(normal.sample(rng), 0.0)).collect();
    if blur > 0.0 {
        fft.forward(&mut buf);
        for (k, v) in buf.iter_mut().enumerate() {
            let (i, j) = (k / cols, k % cols);
            let fy = i.min(rows - i) as f64 / rows as f64;
            let fx = j.min(cols - j) as f64 / cols as f64;
            *v *= (-2.0 * PI * PI * blur * blur * (fx * fx + fy * fy)).exp();
        }
        fft.inverse(&mut buf);
    }
    Array2::from_shape_vec((rows, cols), buf.iter().map(|c| c.re).collect()).expect("shape")
}

/// Circular shift by a possibly fractional offset: phase ramp on the spectrum.
fn shift(spectrum: &[Complex64], rows: usize, cols: usize, dr: f64, dc: f64, fft: &Fft2) -> Array2<f64> {
    let mut buf = spectrum.to_vec();
    let signed = |k: usize, n: usize| if 2 * k > n { k as f64 - n as f64 } else { k as f64 };
    for (k, v) in buf.iter_mut().enumerate() {
        let (i, j) = (k / cols, k % cols);
        let (fi, fj) = (signed(i, rows), signed(j, cols));
        let ph = -2.0 * PI * (fi * dr / rows as f64 + fj * dc / cols as f64);
        *v *= Complex64::from_polar(1.0, ph);
    }
    fft.inverse(&mut buf);
    // The real part absorbs the asymmetric phase at the Nyquist bins.
    Array2::from_shape_vec((rows, cols), buf.iter().map(|c| c.re).collect()).expect("shape")
}

fn occlusion_mask(spec: &SynthSpec, rng: &mut impl Rng) -> Array2<bool> {
    let (rows, cols) = (spec.rows, spec.cols);
    let mut mask = Array2::from_elem((rows, cols), true);
    let budget = (spec.max_occlusion * (rows * cols) as f64) as usize;
    let mut used = 0;
    for _ in 0..rng.gen_range(1..=2) {
        let width = rng.gen_range(cols / 16..=cols / 6).max(1);
        let depth = rng.gen_range(rows / 16..=rows / 5).max(1);
        if used + width * depth > budget {
            continue;
        }
        let start = rng.gen_range(0..cols);
        // Eyelid-like occlusions enter from the outer boundary (top rows).
        for c in start..start + width {
            for r in 0..depth {
                if mask[[r, c % cols]] {
                    mask[[r, c % cols]] = false;
                    used += 1;
                }
            }
        }
    }
    mask
}

/// Build the corpus. Record 0 of each identity is the gallery image (the
/// unshifted, noise-free base); records 1..=m are probes.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let fft = Fft2::new(spec.rows, spec.cols);
    let mut records = Vec::with_capacity(spec.identities * (spec.probes_per_identity + 1));
    for id in 0..spec.identities {
        let base = base_texture(spec, &fft, &mut stream(spec.seed, &[0, id as u64]));
        let mut base_spec: Vec<Complex64> = base.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut base_spec);
        for index in 0..=spec.probes_per_identity {
            let mut rng = stream(spec.seed, &[1, id as u64, index as u64]);
            let mask = occlusion_mask(spec, &mut rng);
            let image = if index == 0 {
                base.clone()
            } else {
                let s = spec.max_shift;
                let dr = if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 };
                let dc = if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 };
                let mut shifted = shift(&base_spec, spec.rows, spec.cols, dr, dc, &fft);
                if spec.probe_noise > 0.0 {
                    let normal = Normal::new(0.0, spec.probe_noise).expect("noise sigma");
                    shifted.mapv_inplace(|v| v + normal.sample(&mut rng));
                }
                shifted
            };
            // 8-bit grid so the graymap round trip is lossless.
            let image = GrayImage::clamped(image).quantized(255);
            let role = if index == 0 { Role::Gallery } else { Role::Probe };
            records.push(IrisRecord::new(image, mask, id as u32, index as u32, role)?);
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        records,
    })
}
