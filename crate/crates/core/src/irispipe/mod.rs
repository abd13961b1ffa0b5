//! Iris codes: Gabor encoding, masked Hamming matching, gallery
//! identification and a synthetic corpus generator.

mod code;
mod fft;
mod gabor;
mod image;
mod store;
mod surrogate;
mod synth;

pub use code::{classify, code_from_responses, encode_hard, hamming, identify, IrisCode};
pub use gabor::{encode_soft, GaborBank, GaborFilter, GaborParams, Responses, SoftTemplate, ZERO_TOL};
pub use image::{GrayImage, IrisRecord, Role};
pub use surrogate::{init_surrogate, surrogate_agreement, train_surrogate, SurrogateConfig};
pub use synth::{synth_dataset, Dataset, SynthSpec};
pub use store::{read_dataset, read_image, read_manifest, read_mask, write_dataset, write_image8, write_mask, Manifest, RecordEntry, DATASET_VERSION};
