use ndarray::{s, Array2, Array3, Array4};

use crate::error::{Error, Result};
use crate::irispipe::{code_from_responses, encode_hard, hamming, GaborBank, IrisCode, IrisRecord};
use crate::tensornet::NetworkModel;

/// Differentiable Hamming proxy, its image gradient and the exact Hamming
/// distance of the hard code, all relative to one benign code.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub soft: f64,
    pub grad: Array2<f64>,
    pub hard: f64,
}

pub trait AttackSurface: Sync {
    /// Soft Hamming proxy and its gradient w.r.t. the image.
    fn soft_hd(&self, image: &Array2<f64>) -> Result<(f64, Array2<f64>)>;

    /// Hamming distance between the hard code of `image` and the benign code.
    fn hard_hd(&self, image: &Array2<f64>) -> Result<f64>;

    fn evaluate(&self, image: &Array2<f64>) -> Result<Evaluation> {
        let (soft, grad) = self.soft_hd(image)?;
        Ok(Evaluation {
            soft,
            grad,
            hard: self.hard_hd(image)?,
        })
    }
}

/// Benign bits in +-1 form, zero where invalid.
fn signed_target(code: &IrisCode) -> (Array3<f64>, usize) {
    let (p, r, c) = code.shape();
    let t = Array3::from_shape_fn((p, r, c), |(i, j, k)| {
        if !code.is_valid(i, j, k) {
            0.0
        } else if code.bit(i, j, k) {
            1.0
        } else {
            -1.0
        }
    });
    (t, code.valid_count())
}

/// `mean over valid bits of (1 - t s) / 2` and its gradient w.r.t. `s`.
pub fn soft_hd_from_template(template: &Array3<f64>, target: &Array3<f64>, count: usize) -> (f64, Array3<f64>) {
    let n = count.max(1) as f64;
    let mut loss = 0.0;
    for (&s, &t) in template.iter().zip(target.iter()) {
        if t != 0.0 {
            loss += (1.0 - t * s) / 2.0;
        }
    }
    (loss / n, target.mapv(|t| -t / (2.0 * n)))
}

/// Analytic smooth Gabor encoder `tanh(beta * response)`.
pub struct GaborSurface<'a> {
    bank: &'a GaborBank,
    beta: f64,
    mask: Array2<bool>,
    benign: IrisCode,
    target: Array3<f64>,
    count: usize,
}

impl<'a> GaborSurface<'a> {
    pub fn new(bank: &'a GaborBank, record: &IrisRecord, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Argument("beta must be > 0".into()));
        }
        let benign = encode_hard(record, bank)?;
        let (target, count) = signed_target(&benign);
        Ok(GaborSurface {
            bank,
            beta,
            mask: record.mask.clone(),
            benign,
            target,
            count,
        })
    }

    pub fn benign_code(&self) -> &IrisCode {
        &self.benign
    }
}

impl AttackSurface for GaborSurface<'_> {
    fn soft_hd(&self, image: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let e = self.evaluate(image)?;
        Ok((e.soft, e.grad))
    }

    fn hard_hd(&self, image: &Array2<f64>) -> Result<f64> {
        let r = self.bank.responses(image.view())?;
        hamming(&code_from_responses(&r, &self.mask)?, &self.benign)
    }

    fn evaluate(&self, image: &Array2<f64>) -> Result<Evaluation> {
        let r = self.bank.responses(image.view())?;
        let hard = hamming(&code_from_responses(&r, &self.mask)?, &self.benign)?;
        let s = r.mapv(|v| (self.beta * v).tanh());
        let (soft, mut g) = soft_hd_from_template(&s, &self.target, self.count);
        g.zip_mut_with(&s, |g, &s| *g *= self.beta * (1.0 - s * s));
        let grad = self.bank.responses_vjp(&g)?;
        Ok(Evaluation { soft, grad, hard })
    }
}

/// Trained network surrogate fed with the image and its mask; the hard
/// distance still comes from the reference encoder.
pub struct SurrogateSurface<'a> {
    model: &'a NetworkModel,
    bank: &'a GaborBank,
    mask: Array2<bool>,
    benign: IrisCode,
    target: Array3<f64>,
    count: usize,
}

impl<'a> SurrogateSurface<'a> {
    pub fn new(model: &'a NetworkModel, bank: &'a GaborBank, record: &IrisRecord) -> Result<Self> {
        let (rows, cols) = record.image.shape();
        let planes = bank.planes();
        if model.input_shape() != [2, rows, cols] || model.output_shape() != [planes, rows, cols] {
            return Err(Error::dim(format!(
                "surrogate maps {:?} -> {:?}, record needs [2, {rows}, {cols}] -> [{planes}, {rows}, {cols}]",
                model.input_shape(),
                model.output_shape()
            )));
        }
        let benign = encode_hard(record, bank)?;
        let (target, count) = signed_target(&benign);
        Ok(SurrogateSurface {
            model,
            bank,
            mask: record.mask.clone(),
            benign,
            target,
            count,
        })
    }
}

/// Surrogate input: image and mask stacked as two channels.
pub fn surrogate_input(image: &Array2<f64>, mask: &Array2<bool>) -> Array4<f64> {
    let (rows, cols) = image.dim();
    let mut x = Array4::zeros((1, 2, rows, cols));
    x.slice_mut(s![0, 0, .., ..]).assign(image);
    x.slice_mut(s![0, 1, .., ..]).assign(&mask.mapv(|m| if m { 1.0 } else { 0.0 }));
    x
}

impl AttackSurface for SurrogateSurface<'_> {
    fn soft_hd(&self, image: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let x = surrogate_input(image, &self.mask);
        let (soft, _, dx) = self.model.input_gradient(&x, |y| {
            let s = y.index_axis(ndarray::Axis(0), 0).to_owned();
            let (l, g) = soft_hd_from_template(&s, &self.target, self.count);
            (l, g.insert_axis(ndarray::Axis(0)))
        })?;
        Ok((soft, dx.slice(s![0, 0, .., ..]).to_owned()))
    }

    fn hard_hd(&self, image: &Array2<f64>) -> Result<f64> {
        let r = self.bank.responses(image.view())?;
        hamming(&code_from_responses(&r, &self.mask)?, &self.benign)
    }
}
