//! Binary iris codes, masked Hamming matching and gallery identification.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};

use super::gabor::{GaborBank, Responses, ZERO_TOL};
use super::image::IrisRecord;
use crate::error::{Error, Result};

/// `planes x rows x cols` bits with a validity mask, packed into u64 words in
/// plane-major, row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrisCode {
    planes: usize,
    rows: usize,
    cols: usize,
    bits: Vec<u64>,
    valid: Vec<u64>,
}

fn words(n: usize) -> usize {
    n.div_ceil(64)
}

impl IrisCode {
    pub fn from_fn(planes: usize, rows: usize, cols: usize, mut f: impl FnMut(usize, usize, usize) -> (bool, bool)) -> Self {
        let n = planes * rows * cols;
        let mut bits = vec![0u64; words(n)];
        let mut valid = vec![0u64; words(n)];
        let mut k = 0;
        for p in 0..planes {
            for r in 0..rows {
                for c in 0..cols {
                    let (b, v) = f(p, r, c);
                    if b {
                        bits[k / 64] |= 1 << (k % 64);
                    }
                    if v {
                        valid[k / 64] |= 1 << (k % 64);
                    }
                    k += 1;
                }
            }
        }
        IrisCode {
            planes,
            rows,
            cols,
            bits,
            valid,
        }
    }

    pub fn from_arrays(bits: &Array3<bool>, valid: &Array3<bool>) -> Result<Self> {
        if bits.dim() != valid.dim() {
            return Err(Error::dim("bits and validity mask differ in shape"));
        }
        let (p, r, c) = bits.dim();
        Ok(Self::from_fn(p, r, c, |i, j, k| (bits[[i, j, k]], valid[[i, j, k]])))
    }

    /// `(planes, rows, cols)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.planes, self.rows, self.cols)
    }

    /// Planes stacked vertically: `(planes * rows, cols)`.
    pub fn flat_shape(&self) -> (usize, usize) {
        (self.planes * self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.planes * self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn flat(&self, p: usize, r: usize, c: usize) -> usize {
        (p * self.rows + r) * self.cols + c
    }

    pub fn bit(&self, p: usize, r: usize, c: usize) -> bool {
        let k = self.flat(p, r, c);
        self.bits[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn is_valid(&self, p: usize, r: usize, c: usize) -> bool {
        let k = self.flat(p, r, c);
        self.valid[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Same validity, every bit flipped.
    pub fn complement(&self) -> Self {
        let n = self.len();
        let mut bits: Vec<u64> = self.bits.iter().map(|w| !w).collect();
        if n % 64 != 0 {
            if let Some(last) = bits.last_mut() {
                *last &= (1u64 << (n % 64)) - 1;
            }
        }
        IrisCode { bits, ..self.clone() }
    }

    /// Bits as a `(planes * rows) x cols` 0/1 matrix.
    pub fn to_matrix(&self) -> Array2<u8> {
        let (fr, fc) = self.flat_shape();
        Array2::from_shape_fn((fr, fc), |(i, j)| self.bit(i / self.rows, i % self.rows, j) as u8)
    }

    /// Dump: `u16 planes, u16 rows, u32 cols` (little-endian), then the bit
    /// plane and the validity plane, each packed LSB-first into
    /// `ceil(n / 8)` bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.planes > u16::MAX as usize || self.rows > u16::MAX as usize || self.cols > u32::MAX as usize {
            return Err(Error::Format("iris code too large for dump header".into()));
        }
        let nb = self.len().div_ceil(8);
        let mut out = Vec::with_capacity(8 + 2 * nb);
        out.extend_from_slice(&(self.planes as u16).to_le_bytes());
        out.extend_from_slice(&(self.rows as u16).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for plane in [&self.bits, &self.valid] {
            let bytes: Vec<u8> = plane.iter().flat_map(|w| w.to_le_bytes()).take(nb).collect();
            out.extend_from_slice(&bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format("iris code dump shorter than its header".into()));
        }
        let planes = u16::from_le_bytes([bytes[0], bytes[1]]) as usize;
        let rows = u16::from_le_bytes([bytes[2], bytes[3]]) as usize;
        let cols = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
        let n = planes * rows * cols;
        let nb = n.div_ceil(8);
        if bytes.len() != 8 + 2 * nb {
            return Err(Error::Format(format!(
                "iris code dump has {} bytes, header implies {}",
                bytes.len(),
                8 + 2 * nb
            )));
        }
        let unpack = |chunk: &[u8]| -> Vec<u64> {
            let mut w = vec![0u64; words(n)];
            for (i, &b) in chunk.iter().enumerate() {
                w[i / 8] |= (b as u64) << (8 * (i % 8));
            }
            w
        };
        let bits = unpack(&bytes[8..8 + nb]);
        let valid = unpack(&bytes[8 + nb..]);
        if n % 64 != 0 {
            let tail = !((1u64 << (n % 64)) - 1);
            if bits.last().is_some_and(|w| w & tail != 0) || valid.last().is_some_and(|w| w & tail != 0) {
                return Err(Error::Format("iris code dump has bits set past its end".into()));
            }
        }
        Ok(IrisCode {
            planes,
            rows,
            cols,
            bits,
            valid,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Binarize responses (`bit = response >= 0`) with the image mask replicated
/// across planes.
pub fn code_from_responses(responses: &Responses, mask: &Array2<bool>) -> Result<IrisCode> {
    let (p, r, c) = responses.dim();
    if mask.dim() != (r, c) {
        return Err(Error::dim(format!("mask {:?} vs responses {:?}", mask.dim(), (r, c))));
    }
    Ok(IrisCode::from_fn(p, r, c, |i, j, k| (responses[[i, j, k]] >= -ZERO_TOL, mask[[j, k]])))
}

pub fn encode_hard(rec: &IrisRecord, bank: &GaborBank) -> Result<IrisCode> {
    let r = bank.responses(rec.image.pixels().view())?;
    code_from_responses(&r, &rec.mask)
}

/// Fraction of mutually valid positions where the bits differ.
pub fn hamming(a: &IrisCode, b: &IrisCode) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("code shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    let mut diff = 0u64;
    let mut both = 0u64;
    for i in 0..a.bits.len() {
        let v = a.valid[i] & b.valid[i];
        both += v.count_ones() as u64;
        diff += ((a.bits[i] ^ b.bits[i]) & v).count_ones() as u64;
    }
    if both == 0 {
        return Err(Error::UndefinedDistance);
    }
    Ok(diff as f64 / both as f64)
}

/// Closest gallery identity; equal distances resolve to the lowest label.
/// Entries with no overlapping valid bits are skipped.
pub fn classify(probe: &IrisCode, gallery: &[(u32, IrisCode)]) -> Result<(u32, f64)> {
    if gallery.is_empty() {
        return Err(Error::Argument("empty gallery".into()));
    }
    let mut best: Option<(u32, f64)> = None;
    for (id, code) in gallery {
        let hd = match hamming(probe, code) {
            Ok(hd) => hd,
            Err(Error::UndefinedDistance) => continue,
            Err(e) => return Err(e),
        };
        best = match best {
            Some((bid, bhd)) if bhd < hd || (bhd == hd && bid < *id) => Some((bid, bhd)),
            _ => Some((*id, hd)),
        };
    }
    best.ok_or(Error::UndefinedDistance)
}

/// Open-set decision: the closest identity, or `None` when even the best
/// distance exceeds `threshold`.
pub fn identify(probe: &IrisCode, gallery: &[(u32, IrisCode)], threshold: f64) -> Result<(Option<u32>, f64)> {
    let (id, hd) = classify(probe, gallery)?;
    Ok(((hd <= threshold).then_some(id), hd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_code(seed: u64, p: usize, r: usize, c: usize) -> IrisCode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        IrisCode::from_fn(p, r, c, |_, _, _| (rng.gen(), true))
    }

    #[test]
    fn hamming_basics() {
        let a = random_code(1, 2, 3, 5);
        assert_eq!(hamming(&a, &a).unwrap(), 0.0);
        assert_eq!(hamming(&a, &a.complement()).unwrap(), 1.0);
        let b = random_code(2, 2, 3, 5);
        assert_eq!(hamming(&a, &b).unwrap(), hamming(&b, &a).unwrap());
    }

    #[test]
    fn independent_codes_near_half() {
        let a = random_code(3, 1, 100, 100);
        let b = random_code(4, 1, 100, 100);
        assert!((hamming(&a, &b).unwrap() - 0.5).abs() < 0.02);
    }

    #[test]
    fn no_overlap_is_undefined() {
        let a = IrisCode::from_fn(1, 2, 2, |_, _, _| (true, false));
        let b = IrisCode::from_fn(1, 2, 2, |_, _, _| (false, true));
        assert!(matches!(hamming(&a, &b), Err(Error::UndefinedDistance)));
    }

    #[test]
    fn masked_positions_are_ignored() {
        let a = IrisCode::from_fn(1, 1, 4, |_, _, c| (c < 2, true));
        let b = IrisCode::from_fn(1, 1, 4, |_, _, c| (false, c != 0));
        // Valid overlap is columns 1..4; they differ at column 1 only.
        assert!((hamming(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn classify_rules() {
        let a = random_code(5, 1, 8, 8);
        let b = random_code(6, 1, 8, 8);
        let g = vec![(3, b.clone()), (7, a.clone())];
        assert_eq!(classify(&a, &g).unwrap(), (7, 0.0));
        let tie = vec![(9, a.clone()), (2, a.clone())];
        assert_eq!(classify(&a, &tie).unwrap().0, 2);
        assert!(matches!(classify(&a, &[]), Err(Error::Argument(_))));
        assert_eq!(identify(&a, &g, 0.32).unwrap().0, Some(7));
        assert_eq!(identify(&a, &[(3, b)], 0.32).unwrap().0, None);
    }

    #[test]
    fn dump_round_trip() {
        let a = random_code(7, 3, 5, 7);
        let bytes = a.to_bytes().unwrap();
        assert_eq!(bytes.len(), 8 + 2 * (105usize).div_ceil(8));
        assert_eq!(IrisCode::from_bytes(&bytes).unwrap(), a);
        assert!(IrisCode::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        *bad.last_mut().unwrap() = 0xff;
        assert!(IrisCode::from_bytes(&bad).is_err());
    }
}
