use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized iris image with pixels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pixels: Array2<f64>,
}

impl GrayImage {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::dim("empty image"));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(GrayImage { pixels })
    }

    /// Clamp every pixel into [0, 1] (NaN becomes 0).
    pub fn clamped(mut pixels: Array2<f64>) -> Self {
        pixels.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        GrayImage { pixels }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        GrayImage {
            pixels: Array2::zeros((rows, cols)),
        }
    }

    pub fn rows(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn cols(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    /// Round every pixel to the nearest multiple of `1/levels`.
    pub fn quantized(&self, levels: u32) -> Self {
        let l = levels as f64;
        GrayImage {
            pixels: self.pixels.mapv(|v| (v * l).round() / l),
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn to_u16(&self) -> Vec<u16> {
        self.pixels.iter().map(|v| (v * 65535.0).round() as u16).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Gallery,
    Probe,
}

/// An image with its validity mask (true = usable iris pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct IrisRecord {
    pub image: GrayImage,
    pub mask: Array2<bool>,
    pub identity: u32,
    pub index: u32,
    pub role: Role,
}

impl IrisRecord {
    pub fn new(image: GrayImage, mask: Array2<bool>, identity: u32, index: u32, role: Role) -> Result<Self> {
        if mask.dim() != image.shape() {
            return Err(Error::dim(format!(
                "mask shape {:?} differs from image shape {:?}",
                mask.dim(),
                image.shape()
            )));
        }
        Ok(IrisRecord {
            image,
            mask,
            identity,
            index,
            role,
        })
    }

    /// File stem `<identity>_<index>`.
    pub fn id(&self) -> String {
        format!("{}_{}", self.identity, self.index)
    }

    /// Same record with a different image.
    pub fn with_image(&self, image: GrayImage) -> Self {
        IrisRecord {
            image,
            ..self.clone()
        }
    }

    pub fn mask_coverage(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_is_checked() {
        assert!(GrayImage::new(Array2::from_elem((2, 2), 1.5)).is_err());
        assert!(GrayImage::new(Array2::from_elem((2, 2), 0.5)).is_ok());
        let c = GrayImage::clamped(Array2::from_shape_vec((1, 3), vec![-1.0, 0.3, f64::NAN]).unwrap());
        assert_eq!(c.pixels().as_slice().unwrap(), &[0.0, 0.3, 0.0]);
    }

    #[test]
    fn mask_shape_must_match() {
        let img = GrayImage::zeros(4, 4);
        assert!(IrisRecord::new(img, Array2::from_elem((4, 2), true), 0, 0, Role::Probe).is_err());
    }
}
