//! Gradient attacks on iris codes: FGSM, iterative FGSM and a single-boundary
//! DeepFool, all driven by a differentiable Hamming proxy and judged by the
//! hard encoder.

mod corpus;
mod surface;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irispipe::GrayImage;

pub use corpus::{read_corpus, write_corpus, AdversarialEntry, CorpusManifest, CORPUS_VERSION};
pub use surface::{soft_hd_from_template, surrogate_input, AttackSurface, Evaluation, GaborSurface, SurrogateSurface};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Igsm,
    Deepfool,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Igsm => "igsm",
            AttackKind::Deepfool => "deepfool",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackKind::Fgsm),
            "igsm" => Ok(AttackKind::Igsm),
            "deepfool" => Ok(AttackKind::Deepfool),
            other => Err(Error::Argument(format!("unknown attack kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    SmoothGabor,
    TrainedSurrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L-infinity budget in pixel units; `None` leaves the perturbation
    /// bounded only by the [0, 1] pixel range.
    pub epsilon: Option<f64>,
    pub step: f64,
    pub max_iters: usize,
    pub hd_threshold: f64,
    pub surface: SurfaceKind,
    pub overshoot: f64,
    /// Sharpness of the smooth encoder.
    pub beta: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::Igsm,
            epsilon: Some(0.1),
            step: 0.005,
            max_iters: 200,
            hd_threshold: 0.32,
            surface: SurfaceKind::SmoothGabor,
            overshoot: 0.02,
            beta: 20.0,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hd_threshold > 0.0 && self.hd_threshold < 0.5) {
            return Err(Error::Argument("hd_threshold must lie in (0, 0.5)".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0) {
                return Err(Error::Argument("epsilon must be >= 0".into()));
            }
        }
        match self.kind {
            AttackKind::Fgsm if self.epsilon.is_none() => {
                Err(Error::Argument("fgsm needs a finite epsilon".into()))
            }
            AttackKind::Igsm => {
                if !(self.step > 0.0) || self.max_iters == 0 {
                    return Err(Error::Argument("igsm needs step > 0 and max_iters > 0".into()));
                }
                if self.epsilon.is_some_and(|e| self.step > e) {
                    return Err(Error::Argument("igsm step must not exceed epsilon".into()));
                }
                Ok(())
            }
            AttackKind::Deepfool if self.max_iters == 0 => {
                Err(Error::Argument("deepfool needs max_iters > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub image: GrayImage,
    pub iterations: usize,
    pub final_hd: f64,
    pub success: bool,
    pub linf: f64,
    pub l2: f64,
    /// DeepFool decision values per iteration.
    pub trace: Vec<f64>,
    /// Why the attack stopped early, when it did.
    pub failure: Option<String>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clip into the epsilon ball around `origin` and into [0, 1].
fn project(x: &mut Array2<f64>, origin: &Array2<f64>, epsilon: Option<f64>) {
    Zip::from(x).and(origin).for_each(|v, &o| {
        if let Some(e) = epsilon {
            *v = v.clamp(o - e, o + e);
        }
        *v = v.clamp(0.0, 1.0);
    });
}

fn finish(
    origin: &Array2<f64>,
    x: Array2<f64>,
    iterations: usize,
    hd: f64,
    cfg: &AttackConfig,
    trace: Vec<f64>,
    failure: Option<String>,
) -> AttackResult {
    let diff = &x - origin;
    let linf = diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let l2 = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    AttackResult {
        image: GrayImage::clamped(x),
        iterations,
        final_hd: hd,
        success: hd > cfg.hd_threshold,
        linf,
        l2,
        trace,
        failure,
    }
}

/// One signed-gradient step of size epsilon.
pub fn fgsm(surface: &dyn AttackSurface, image: &GrayImage, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let eps = cfg.epsilon.ok_or_else(|| Error::Argument("fgsm needs a finite epsilon".into()))?;
    let x0 = image.pixels();
    let (_, g) = surface.soft_hd(x0)?;
    let mut x = x0 + &g.mapv(|v| eps * sign(v));
    project(&mut x, x0, Some(eps));
    let hd = surface.hard_hd(&x)?;
    Ok(finish(x0, x, 1, hd, cfg, Vec::new(), None))
}

/// Iterated signed-gradient steps, projected onto the epsilon ball, until the
/// hard distance exceeds the threshold or the iteration budget runs out.
pub fn igsm(surface: &dyn AttackSurface, image: &GrayImage, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let x0 = image.pixels();
    let mut x = x0.clone();
    let mut iters = 0;
    loop {
        let e = surface.evaluate(&x)?;
        if e.hard > cfg.hd_threshold || iters == cfg.max_iters {
            return Ok(finish(x0, x, iters, e.hard, cfg, Vec::new(), None));
        }
        x.zip_mut_with(&e.grad, |v, &g| *v += cfg.step * sign(g));
        project(&mut x, x0, cfg.epsilon);
        iters += 1;
    }
}

/// Linearized minimal steps toward `soft_hd = hd_threshold`. When the soft
/// proxy is already past the boundary but the hard code is not, the target is
/// raised by 0.01 per such iteration. Each step is at most as long (in L2)
/// as one signed step of size `step`.
pub fn deepfool(surface: &dyn AttackSurface, image: &GrayImage, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let x0 = image.pixels();
    let mut x = x0.clone();
    let mut iters = 0;
    let mut margin = 0.0;
    let mut trace = Vec::new();
    loop {
        let e = surface.evaluate(&x)?;
        if e.hard > cfg.hd_threshold || iters == cfg.max_iters {
            return Ok(finish(x0, x, iters, e.hard, cfg, trace, None));
        }
        let mut f = cfg.hd_threshold + margin - e.soft;
        while f <= 0.0 {
            margin += 0.01;
            f = cfg.hd_threshold + margin - e.soft;
        }
        trace.push(f);
        // grad f = -grad soft.
        let norm2: f64 = e.grad.iter().map(|g| g * g).sum();
        if norm2.sqrt() < 1e-12 {
            let msg = format!("vanishing gradient at iteration {iters}");
            return Ok(finish(x0, x, iters, e.hard, cfg, trace, Some(msg)));
        }
        // Trust region: no longer than one signed step of size `step`.
        let cap = cfg.step * (x.len() as f64).sqrt() / norm2.sqrt();
        let k = ((1.0 + cfg.overshoot) * f / norm2).min(cap);
        x.zip_mut_with(&e.grad, |v, &g| *v += k * g);
        project(&mut x, x0, cfg.epsilon);
        iters += 1;
    }
}

pub fn run_attack(surface: &dyn AttackSurface, image: &GrayImage, cfg: &AttackConfig) -> Result<AttackResult> {
    match cfg.kind {
        AttackKind::Fgsm => fgsm(surface, image, cfg),
        AttackKind::Igsm => igsm(surface, image, cfg),
        AttackKind::Deepfool => deepfool(surface, image, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irispipe::{synth_dataset, GaborBank, GaborParams, SynthSpec};

    fn setup() -> (crate::irispipe::Dataset, GaborBank) {
        let spec = SynthSpec {
            identities: 2,
            probes_per_identity: 2,
            rows: 16,
            cols: 64,
            ..SynthSpec::default()
        };
        let bank = GaborBank::new(GaborParams::default(), 16, 64).unwrap();
        (synth_dataset(&spec).unwrap(), bank)
    }

    #[test]
    fn zero_epsilon_fgsm_is_identity() {
        let (ds, bank) = setup();
        let rec = &ds.records[1];
        let s = GaborSurface::new(&bank, rec, 20.0).unwrap();
        let cfg = AttackConfig {
            kind: AttackKind::Fgsm,
            epsilon: Some(0.0),
            ..AttackConfig::default()
        };
        let r = fgsm(&s, &rec.image, &cfg).unwrap();
        assert_eq!(&r.image, &rec.image);
        assert!(!r.success);
        assert_eq!(r.final_hd, 0.0);
    }

    #[test]
    fn fgsm_moves_every_unclipped_pixel_by_epsilon() {
        let (ds, bank) = setup();
        let rec = &ds.records[1];
        let s = GaborSurface::new(&bank, rec, 20.0).unwrap();
        let cfg = AttackConfig {
            kind: AttackKind::Fgsm,
            epsilon: Some(0.05),
            ..AttackConfig::default()
        };
        let r = fgsm(&s, &rec.image, &cfg).unwrap();
        let (_, g) = s.soft_hd(rec.image.pixels()).unwrap();
        for ((&a, &b), &g) in r.image.pixels().iter().zip(rec.image.pixels()).zip(&g) {
            let target = b + 0.05 * sign(g);
            if (0.0..=1.0).contains(&target) && g != 0.0 {
                assert!(((a - b).abs() - 0.05).abs() < 1e-15);
            }
            assert!((a - b).abs() <= 0.05 + 1e-15);
        }
    }

    #[test]
    fn igsm_respects_ball_and_stop_rule() {
        let (ds, bank) = setup();
        let rec = &ds.records[2];
        let s = GaborSurface::new(&bank, rec, 20.0).unwrap();
        let cfg = AttackConfig {
            epsilon: Some(0.1),
            ..AttackConfig::default()
        };
        let r = igsm(&s, &rec.image, &cfg).unwrap();
        assert!(r.linf <= 0.1 + 1e-12);
        assert_eq!(r.success, r.final_hd > 0.32);
        assert_eq!(r.final_hd, s.hard_hd(r.image.pixels()).unwrap());
    }

    #[test]
    fn config_validation() {
        let bad = AttackConfig {
            step: 0.2,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttackConfig {
            hd_threshold: 0.5,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
        let unbounded = AttackConfig {
            epsilon: None,
            ..AttackConfig::default()
        };
        assert!(unbounded.validate().is_ok());
        assert_eq!(AttackKind::parse("deepfool").unwrap(), AttackKind::Deepfool);
        assert!(AttackKind::parse("jsma").is_err());
    }
}
