//! On-disk corpus: 8-bit graymaps plus a JSON manifest.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::image::{GrayImage, IrisRecord, Role};
use super::synth::{Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::pgm::{read_pgm, write_pgm8};

pub const MANIFEST: &str = "manifest.json";
pub const DATASET_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub identity: u32,
    pub index: u32,
    pub role: Role,
    pub image: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u16,
    pub spec: SynthSpec,
    pub records: Vec<RecordEntry>,
}

pub fn write_image8(path: &Path, image: &GrayImage) -> Result<()> {
    write_pgm8(path, image.cols(), image.rows(), &image.to_u8())
}

pub fn write_mask(path: &Path, mask: &Array2<bool>) -> Result<()> {
    let (rows, cols) = mask.dim();
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_pgm8(path, cols, rows, &bytes)
}

/// Read a graymap as an image scaled by its maxval.
pub fn read_image(path: &Path) -> Result<GrayImage> {
    let g = read_pgm(path)?;
    let max = g.maxval as f64;
    let px = Array2::from_shape_vec((g.height, g.width), g.samples.iter().map(|&s| s as f64 / max).collect())
        .map_err(|e| Error::Format(e.to_string()))?;
    GrayImage::new(px)
}

pub fn read_mask(path: &Path) -> Result<Array2<bool>> {
    let g = read_pgm(path)?;
    let half = g.maxval / 2;
    Array2::from_shape_vec((g.height, g.width), g.samples.iter().map(|&s| s > half).collect())
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(ds.records.len());
    for r in &ds.records {
        let image = format!("{}_img.pgm", r.id());
        let mask = format!("{}_mask.pgm", r.id());
        write_image8(&dir.join(&image), &r.image)?;
        write_mask(&dir.join(&mask), &r.mask)?;
        records.push(RecordEntry {
            identity: r.identity,
            index: r.index,
            role: r.role,
            image,
            mask,
        });
    }
    let manifest = Manifest {
        format_version: DATASET_VERSION,
        spec: ds.spec.clone(),
        records,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format_version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "{}: dataset format version {} (expected {DATASET_VERSION})",
            path.display(),
            m.format_version
        )));
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    let records = m
        .records
        .iter()
        .map(|e| {
            let image = read_image(&dir.join(&e.image))?;
            let mask = read_mask(&dir.join(&e.mask))?;
            IrisRecord::new(image, mask, e.identity, e.index, e.role)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { spec: m.spec, records })
}
