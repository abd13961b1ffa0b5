//! Uniform (full-tree) two-dimensional wavelet analysis and synthesis.
//!
//! Every band is split again at every level, so an `L`-level decomposition
//! yields `4^L` sub-bands of identical shape. Children of the (1-based) band
//! `i` occupy indices `4i-3 ..= 4i` in the order `gg, hg, gh, hh`, where the
//! first letter is the horizontal (column-axis) filter and the second the
//! vertical (row-axis) filter.
//!
//! Filtering is circular. Analysis output `m` is the convolution with the
//! filter evaluated at sample `2m + len - 1`, i.e. it reads input samples
//! `2m ..= 2m + len - 1`. Synthesis upsamples (coefficient `m` lands on
//! sample `2m`) and convolves causally with the synthesis filter. With this
//! alignment an orthonormal bank inverts exactly when the synthesis filters
//! are the time reverses of the analysis filters.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm;

/// Analysis (`g`, `h`) and synthesis (`g1`, `h1`) filter pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletFilters {
    pub name: String,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub g1: Vec<f64>,
    pub h1: Vec<f64>,
}

impl WaveletFilters {
    /// Orthonormal Haar.
    pub fn haar() -> Self {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        WaveletFilters {
            name: "haar".into(),
            g: vec![a, a],
            h: vec![a, -a],
            g1: vec![a, a],
            h1: vec![-a, a],
        }
    }

    /// Orthonormal Daubechies filter with two vanishing moments (4 taps).
    pub fn db2() -> Self {
        let s3 = 3f64.sqrt();
        let d = 4.0 * std::f64::consts::SQRT_2;
        let g = vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d];
        let n = g.len();
        let h: Vec<f64> = (0..n)
            .map(|k| if k % 2 == 0 { g[n - 1 - k] } else { -g[n - 1 - k] })
            .collect();
        let g1 = g.iter().rev().copied().collect();
        let h1 = h.iter().rev().copied().collect();
        WaveletFilters {
            name: "db2".into(),
            g,
            h,
            g1,
            h1,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "haar" => Ok(Self::haar()),
            "db2" => Ok(Self::db2()),
            other => Err(Error::Argument(format!("unknown wavelet `{other}`"))),
        }
    }
}

/// The `4^L` sub-bands of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    level: usize,
    bands: Vec<Array2<f64>>,
    source_shape: (usize, usize),
}

impl SubbandSet {
    pub fn new(level: usize, bands: Vec<Array2<f64>>, source_shape: (usize, usize)) -> Result<Self> {
        if level == 0 {
            return Err(Error::Argument("decomposition level must be >= 1".into()));
        }
        let expected = 4usize.pow(level as u32);
        if bands.len() != expected {
            return Err(Error::dim(format!(
                "expected {expected} bands for level {level}, got {}",
                bands.len()
            )));
        }
        let scale = 1usize << level;
        let shape = (source_shape.0 / scale, source_shape.1 / scale);
        if source_shape.0 % scale != 0 || source_shape.1 % scale != 0 {
            return Err(Error::dim(format!(
                "source shape {source_shape:?} not divisible by 2^{level}"
            )));
        }
        if let Some(b) = bands.iter().find(|b| b.dim() != shape) {
            return Err(Error::dim(format!(
                "band shape {:?} differs from expected {shape:?}",
                b.dim()
            )));
        }
        Ok(SubbandSet {
            level,
            bands,
            source_shape,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn source_shape(&self) -> (usize, usize) {
        self.source_shape
    }

    pub fn band_shape(&self) -> (usize, usize) {
        self.bands[0].dim()
    }

    /// Band by 1-based index.
    pub fn band(&self, index: usize) -> &Array2<f64> {
        &self.bands[index - 1]
    }

    pub fn band_mut(&mut self, index: usize) -> &mut Array2<f64> {
        &mut self.bands[index - 1]
    }

    /// All bands in index order (position 0 holds band 1).
    pub fn bands(&self) -> &[Array2<f64>] {
        &self.bands
    }

    pub fn into_bands(self) -> Vec<Array2<f64>> {
        self.bands
    }

    /// Squared L2 norm summed over all bands.
    pub fn energy(&self) -> f64 {
        self.bands.iter().map(|b| b.iter().map(|v| v * v).sum::<f64>()).sum()
    }

    /// Write each band as a 16-bit graymap plus a `scale.txt` sidecar holding
    /// the affine map back to coefficient values.
    pub fn dump_pgm_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut sidecar = String::from("# band min max (value = min + (max - min) * level / 65535)\n");
        for (i, band) in self.bands.iter().enumerate() {
            let lo = band.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = band.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            let levels: Vec<u16> = band
                .iter()
                .map(|&v| (((v - lo) / span) * 65535.0).round().clamp(0.0, 65535.0) as u16)
                .collect();
            let path = dir.join(format!("band_{:02}.pgm", i + 1));
            pgm::write_pgm16(&path, band.ncols(), band.nrows(), &levels)?;
            sidecar.push_str(&format!("{} {:e} {:e}\n", i + 1, lo, hi));
        }
        let side = dir.join("scale.txt");
        fs::write(&side, sidecar).map_err(|e| Error::io(side, e))
    }
}

/// A per-band keep/zero selector; `false` zeroes the band before synthesis.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubbandMask {
    bits: Vec<bool>,
}

impl SubbandMask {
    pub fn all_ones(len: usize) -> Self {
        SubbandMask { bits: vec![true; len] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        SubbandMask { bits }
    }

    /// Mask of `len` bands with the given 1-based indices zeroed.
    pub fn zeroing(len: usize, zeroed: &[usize]) -> Result<Self> {
        let mut bits = vec![true; len];
        for &i in zeroed {
            if i == 0 || i > len {
                return Err(Error::Argument(format!("band index {i} outside 1..={len}")));
            }
            bits[i - 1] = false;
        }
        Ok(SubbandMask { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// 1-based indices of zeroed bands, ascending.
    pub fn zeroed(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &keep)| !keep)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// Horizontal and vertical frequency bins of every band (1-based order),
/// each in `0..2^level` with bin `k` covering `[k, k + 1) * pi / 2^level`.
/// A high-pass split reverses the spectrum of its output, so below an odd
/// bin the low-pass child takes the upper half.
pub fn band_frequency_bins(level: usize) -> Vec<(usize, usize)> {
    let mut bins = vec![(0usize, 0usize)];
    for _ in 0..level {
        let split = |b: usize, high: bool| 2 * b + usize::from(high != (b % 2 == 1));
        bins = bins
            .iter()
            .flat_map(|&(h, v)| {
                [(false, false), (true, false), (false, true), (true, true)]
                    .map(|(hh, vh)| (split(h, hh), split(v, vh)))
            })
            .collect();
    }
    bins
}

/// Circular analysis along one lane: `out[m] = sum_k f[k] x[2m + len - 1 - k]`.
fn analyze_lane(x: &[f64], f: &[f64], out: &mut [f64]) {
    let n = x.len();
    let taps = f.len();
    for (m, o) in out.iter_mut().enumerate() {
        let base = 2 * m + taps - 1;
        let mut acc = 0.0;
        for (k, &fk) in f.iter().enumerate() {
            acc += fk * x[(base + n - k % n) % n];
        }
        *o = acc;
    }
}

/// Circular synthesis along one lane, accumulating into `out`:
/// `out[2m + j] += c[m] f1[j]`.
fn synthesize_lane(c: &[f64], f1: &[f64], out: &mut [f64]) {
    let n = out.len();
    for (m, &cm) in c.iter().enumerate() {
        if cm == 0.0 {
            continue;
        }
        for (j, &fj) in f1.iter().enumerate() {
            out[(2 * m + j) % n] += cm * fj;
        }
    }
}

/// Filter + downsample every lane along `axis`.
fn analyze_axis(x: ArrayView2<f64>, f: &[f64], axis: Axis) -> Array2<f64> {
    let (r, c) = x.dim();
    let mut out = match axis {
        Axis(0) => Array2::zeros((r / 2, c)),
        _ => Array2::zeros((r, c / 2)),
    };
    let mut src = vec![0.0; x.len_of(axis)];
    let mut dst = vec![0.0; x.len_of(axis) / 2];
    for (lane_in, mut lane_out) in x.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        for (s, v) in src.iter_mut().zip(lane_in.iter()) {
            *s = *v;
        }
        analyze_lane(&src, f, &mut dst);
        for (o, v) in lane_out.iter_mut().zip(dst.iter()) {
            *o = *v;
        }
    }
    out
}

/// Upsample + filter every lane along `axis`, accumulating into `out`.
fn synthesize_axis(c: ArrayView2<f64>, f1: &[f64], axis: Axis, out: &mut Array2<f64>) {
    let mut src = vec![0.0; c.len_of(axis)];
    let mut dst = vec![0.0; out.len_of(axis)];
    for (lane_in, mut lane_out) in c.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        for (s, v) in src.iter_mut().zip(lane_in.iter()) {
            *s = *v;
        }
        dst.iter_mut().for_each(|d| *d = 0.0);
        synthesize_lane(&src, f1, &mut dst);
        for (o, v) in lane_out.iter_mut().zip(dst.iter()) {
            *o += *v;
        }
    }
}

/// One analysis level: returns the children `[gg, hg, gh, hh]`.
pub fn analysis_step(parent: ArrayView2<f64>, filters: &WaveletFilters) -> Result<[Array2<f64>; 4]> {
    let (r, c) = parent.dim();
    if r % 2 != 0 || c % 2 != 0 || r == 0 || c == 0 {
        return Err(Error::dim(format!("analysis needs even dimensions, got {r}x{c}")));
    }
    // Horizontal filters run along each row (column axis).
    let lo = analyze_axis(parent, &filters.g, Axis(1));
    let hi = analyze_axis(parent, &filters.h, Axis(1));
    let gg = analyze_axis(lo.view(), &filters.g, Axis(0));
    let hg = analyze_axis(hi.view(), &filters.g, Axis(0));
    let gh = analyze_axis(lo.view(), &filters.h, Axis(0));
    let hh = analyze_axis(hi.view(), &filters.h, Axis(0));
    Ok([gg, hg, gh, hh])
}

/// One synthesis level from children `[gg, hg, gh, hh]`.
pub fn synthesis_step(children: [ArrayView2<f64>; 4], filters: &WaveletFilters) -> Result<Array2<f64>> {
    let shape = children[0].dim();
    if children.iter().any(|ch| ch.dim() != shape) {
        return Err(Error::dim("synthesis children differ in shape"));
    }
    let (r, c) = shape;
    let [gg, hg, gh, hh] = children;
    let mut lo = Array2::zeros((2 * r, c));
    synthesize_axis(gg, &filters.g1, Axis(0), &mut lo);
    synthesize_axis(gh, &filters.h1, Axis(0), &mut lo);
    let mut hi = Array2::zeros((2 * r, c));
    synthesize_axis(hg, &filters.g1, Axis(0), &mut hi);
    synthesize_axis(hh, &filters.h1, Axis(0), &mut hi);
    let mut out = Array2::zeros((2 * r, 2 * c));
    synthesize_axis(lo.view(), &filters.g1, Axis(1), &mut out);
    synthesize_axis(hi.view(), &filters.h1, Axis(1), &mut out);
    Ok(out)
}

/// Full-tree decomposition to `level` levels.
pub fn uniform_decompose(image: ArrayView2<f64>, level: usize, filters: &WaveletFilters) -> Result<SubbandSet> {
    if level == 0 {
        return Err(Error::Argument("decomposition level must be >= 1".into()));
    }
    let (r, c) = image.dim();
    let scale = 1usize << level;
    if r % scale != 0 || c % scale != 0 || r == 0 || c == 0 {
        return Err(Error::dim(format!(
            "image {r}x{c} not divisible by 2^{level}"
        )));
    }
    let mut bands = vec![image.to_owned()];
    for _ in 0..level {
        let mut next = Vec::with_capacity(bands.len() * 4);
        for parent in &bands {
            next.extend(analysis_step(parent.view(), filters)?);
        }
        bands = next;
    }
    SubbandSet::new(level, bands, (r, c))
}

/// Inverse of [`uniform_decompose`].
pub fn uniform_reconstruct(set: &SubbandSet, filters: &WaveletFilters) -> Result<Array2<f64>> {
    let shape = set.band_shape();
    if set.bands.iter().any(|b| b.dim() != shape) {
        return Err(Error::dim("inconsistent band shapes"));
    }
    let mut bands: Vec<Array2<f64>> = set.bands.clone();
    while bands.len() > 1 {
        let mut parents = Vec::with_capacity(bands.len() / 4);
        for quad in bands.chunks(4) {
            parents.push(synthesis_step(
                [quad[0].view(), quad[1].view(), quad[2].view(), quad[3].view()],
                filters,
            )?);
        }
        bands = parents;
    }
    let out = bands.pop().expect("at least one band");
    if out.dim() != set.source_shape {
        return Err(Error::dim("reconstruction shape differs from source shape"));
    }
    Ok(out)
}

/// Copy of `set` with every band whose mask bit is `false` replaced by zeros.
pub fn apply_mask(set: &SubbandSet, mask: &SubbandMask) -> Result<SubbandSet> {
    if mask.len() != set.len() {
        return Err(Error::dim(format!(
            "mask length {} does not match {} bands",
            mask.len(),
            set.len()
        )));
    }
    let bands = set
        .bands
        .iter()
        .zip(mask.bits())
        .map(|(b, &keep)| if keep { b.clone() } else { Array2::zeros(b.dim()) })
        .collect();
    Ok(SubbandSet {
        level: set.level,
        bands,
        source_shape: set.source_shape,
    })
}
