//! Network surrogate of the hard encoder, trained on (image, mask) pairs.

use ndarray::{s, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::code::{encode_hard, IrisCode};
use super::gabor::GaborBank;
use super::image::IrisRecord;
use crate::error::{Error, Result};
use crate::tensornet::{surrogate_architecture, train, NetworkModel, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub width_scale: f64,
    pub train: TrainConfig,
    /// Seed of the weight initialization; shuffling uses `train.seed`.
    pub init_seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            width_scale: 0.125,
            train: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 8,
                epochs: 10,
                ..TrainConfig::default()
            },
            init_seed: 0,
        }
    }
}

fn inputs(records: &[IrisRecord]) -> Array4<f64> {
    let (rows, cols) = records[0].image.shape();
    let mut x = Array4::zeros((records.len(), 2, rows, cols));
    for (i, r) in records.iter().enumerate() {
        x.slice_mut(s![i, 0, .., ..]).assign(r.image.pixels());
        x.slice_mut(s![i, 1, .., ..]).assign(&r.mask.mapv(|m| m as u8 as f64));
    }
    x
}

/// Hard codes as +-1 targets (bit 1 maps to +1).
fn targets(codes: &[IrisCode]) -> Array4<f64> {
    let (p, r, c) = codes[0].shape();
    Array4::from_shape_fn((codes.len(), p, r, c), |(n, i, j, k)| if codes[n].bit(i, j, k) { 1.0 } else { -1.0 })
}

fn check_shapes(records: &[IrisRecord], bank: &GaborBank) -> Result<()> {
    let first = records.first().ok_or_else(|| Error::Argument("empty surrogate training set".into()))?;
    let shape = first.image.shape();
    if shape != bank.shape() || records.iter().any(|r| r.image.shape() != shape) {
        return Err(Error::dim(format!("surrogate records must all be {:?}", bank.shape())));
    }
    if shape.0 % 32 != 0 || shape.1 % 32 != 0 {
        return Err(Error::dim(format!("surrogate needs dims divisible by 32, got {shape:?}")));
    }
    Ok(())
}

/// Untrained surrogate for records of `shape` under `bank`.
pub fn init_surrogate(bank: &GaborBank, config: &SurrogateConfig) -> Result<NetworkModel> {
    NetworkModel::new(surrogate_architecture(bank.shape(), config.width_scale, bank.planes()), config.init_seed)
}

/// Fit the surrogate so that its tanh output reproduces the hard code.
pub fn train_surrogate(records: &[IrisRecord], bank: &GaborBank, config: &SurrogateConfig) -> Result<(NetworkModel, TrainReport)> {
    check_shapes(records, bank)?;
    let codes = records.iter().map(|r| encode_hard(r, bank)).collect::<Result<Vec<_>>>()?;
    let mut model = init_surrogate(bank, config)?;
    let report = train(&mut model, &inputs(records), &targets(&codes), &config.train)?;
    model.metadata.insert("role".into(), "surrogate".into());
    Ok((model, report))
}

/// Fraction of valid bits where the thresholded surrogate output matches
/// the hard code.
pub fn surrogate_agreement(model: &NetworkModel, records: &[IrisRecord], bank: &GaborBank) -> Result<f64> {
    check_shapes(records, bank)?;
    let (mut agree, mut total) = (0usize, 0usize);
    for chunk in records.chunks(16) {
        let y = model.infer(&inputs(chunk))?;
        for (rec, out) in chunk.iter().zip(y.axis_iter(Axis(0))) {
            let code = encode_hard(rec, bank)?;
            for ((p, r, c), &v) in out.indexed_iter() {
                if code.is_valid(p, r, c) {
                    total += 1;
                    agree += usize::from((v >= 0.0) == code.bit(p, r, c));
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::UndefinedDistance);
    }
    Ok(agree as f64 / total as f64)
}
