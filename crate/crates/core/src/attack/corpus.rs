//! Adversarial corpus on disk: a 16-bit graymap per image for viewing, an
//! exact little-endian f64 copy, the mask, and a JSON manifest.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AttackConfig, AttackResult};
use crate::error::{Error, Result};
use crate::irispipe::{read_mask, write_mask, GrayImage, IrisRecord, Role};
use crate::pgm::write_pgm16;

pub const CORPUS_VERSION: u16 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialEntry {
    pub identity: u32,
    pub index: u32,
    pub image: String,
    pub raw: String,
    pub mask: String,
    pub iterations: usize,
    pub final_hd: f64,
    pub success: bool,
    pub linf: f64,
    pub l2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u16,
    pub config: AttackConfig,
    pub entries: Vec<AdversarialEntry>,
}

fn write_raw(path: &Path, image: &GrayImage) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + 8 * image.rows() * image.cols());
    bytes.extend_from_slice(&(image.rows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(image.cols() as u64).to_le_bytes());
    for v in image.pixels().iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_raw(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::Format(format!("{}: malformed raw image", path.display()));
    if bytes.len() < 16 {
        return Err(bad());
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 16 + 8 * rows * cols {
        return Err(bad());
    }
    let px = bytes[16..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    GrayImage::new(Array2::from_shape_vec((rows, cols), px).map_err(|_| bad())?)
}

/// Write `(benign record, attack result)` pairs.
pub fn write_corpus(dir: &Path, config: &AttackConfig, results: &[(&IrisRecord, &AttackResult)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(results.len());
    for (rec, res) in results {
        let stem = rec.id();
        let image = format!("{stem}_adv.pgm");
        let raw = format!("{stem}_adv.f64");
        let mask = format!("{stem}_mask.pgm");
        write_pgm16(&dir.join(&image), res.image.cols(), res.image.rows(), &res.image.to_u16())?;
        write_raw(&dir.join(&raw), &res.image)?;
        write_mask(&dir.join(&mask), &rec.mask)?;
        entries.push(AdversarialEntry {
            identity: rec.identity,
            index: rec.index,
            image,
            raw,
            mask,
            iterations: res.iterations,
            final_hd: res.final_hd,
            success: res.success,
            linf: res.linf,
            l2: res.l2,
            failure: res.failure.clone(),
        });
    }
    let manifest = CorpusManifest {
        format_version: CORPUS_VERSION,
        config: config.clone(),
        entries,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

/// Read a corpus back; adversarial images come from the exact f64 copies.
pub fn read_corpus(dir: &Path) -> Result<(CorpusManifest, Vec<IrisRecord>)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CorpusManifest = serde_json::from_str(&text)?;
    if m.format_version != CORPUS_VERSION {
        return Err(Error::Format(format!(
            "{}: corpus format version {} (expected {CORPUS_VERSION})",
            path.display(),
            m.format_version
        )));
    }
    let records = m
        .entries
        .iter()
        .map(|e| {
            let image = read_raw(&dir.join(&e.raw))?;
            let mask = read_mask(&dir.join(&e.mask))?;
            IrisRecord::new(image, mask, e.identity, e.index, Role::Probe)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_round_trip() {
        let img = GrayImage::new(Array2::from_shape_fn((4, 8), |(r, c)| (r * 8 + c) as f64 / 31.0 * 0.999_999_7)).unwrap();
        let rec = IrisRecord::new(img.clone(), Array2::from_elem((4, 8), true), 3, 2, Role::Probe).unwrap();
        let res = AttackResult {
            image: img.clone(),
            iterations: 4,
            final_hd: 0.4,
            success: true,
            linf: 0.01,
            l2: 0.1,
            trace: vec![],
            failure: None,
        };
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &AttackConfig::default(), &[(&rec, &res)]).unwrap();
        let (m, recs) = read_corpus(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(recs[0].image, img);
        assert_eq!(recs[0].id(), "3_2");
    }
}
