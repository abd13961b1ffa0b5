use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::Fft2;
use crate::error::{Error, Result};

/// Responses this close to zero count as exactly zero; FFT round-off on a
/// constant image stays far below it.
pub const ZERO_TOL: f64 = 1e-12;

/// Parameters of the odd-phase Gabor bank. Planes are ordered wavelength-major:
/// plane `p` uses `wavelengths[p / n_orient]` and `orientations[p % n_orient]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaborParams {
    pub wavelengths: Vec<f64>,
    /// Radians; 0 means the carrier runs along columns.
    pub orientations: Vec<f64>,
    /// Envelope sigma as a fraction of the wavelength.
    pub sigma_ratio: f64,
}

impl Default for GaborParams {
    fn default() -> Self {
        GaborParams {
            wavelengths: vec![4.0, 5.0, 6.5],
            orientations: vec![0.0, PI / 2.0],
            sigma_ratio: 0.5,
        }
    }
}

impl GaborParams {
    pub fn planes(&self) -> usize {
        self.wavelengths.len() * self.orientations.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.planes() == 0 {
            return Err(Error::Argument("gabor bank needs at least one filter".into()));
        }
        if self.wavelengths.iter().any(|&l| !(l >= 2.0)) || !(self.sigma_ratio > 0.0) {
            return Err(Error::Argument("gabor wavelengths must be >= 2 and sigma_ratio > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaborFilter {
    pub wavelength: f64,
    pub orientation: f64,
    pub sigma: f64,
    /// Half-extent of the truncated kernel, (rows, cols).
    pub radius: (usize, usize),
}

/// Odd-phase Gabor filters bound to one image shape, applied by circular
/// convolution in the frequency domain.
#[derive(Debug, Clone)]
pub struct GaborBank {
    params: GaborParams,
    filters: Vec<GaborFilter>,
    rows: usize,
    cols: usize,
    fft: Fft2,
    spectra: Vec<Vec<Complex64>>,
}

/// Real responses of every plane, shape (planes, rows, cols).
pub type Responses = Array3<f64>;

impl GaborBank {
    pub fn new(params: GaborParams, rows: usize, cols: usize) -> Result<Self> {
        params.validate()?;
        if rows < 4 || cols < 4 {
            return Err(Error::dim(format!("image {rows}x{cols} too small for a gabor bank")));
        }
        let fft = Fft2::new(rows, cols);
        let mut filters = Vec::new();
        let mut spectra = Vec::new();
        for &lambda in &params.wavelengths {
            for &theta in &params.orientations {
                let sigma = params.sigma_ratio * lambda;
                let reach = (3.0 * sigma).ceil() as usize;
                let radius = (reach.min((rows - 1) / 2), reach.min((cols - 1) / 2));
                let kernel = odd_kernel(lambda, theta, sigma, radius);
                let mut grid = vec![Complex64::default(); rows * cols];
                let (ry, rx) = (radius.0 as isize, radius.1 as isize);
                for (i, dy) in (-ry..=ry).enumerate() {
                    for (j, dx) in (-rx..=rx).enumerate() {
                        let r = dy.rem_euclid(rows as isize) as usize;
                        let c = dx.rem_euclid(cols as isize) as usize;
                        grid[r * cols + c].re += kernel[[i, j]];
                    }
                }
                fft.forward(&mut grid);
                grid[0] = Complex64::default();
                spectra.push(grid);
                filters.push(GaborFilter {
                    wavelength: lambda,
                    orientation: theta,
                    sigma,
                    radius,
                });
            }
        }
        Ok(GaborBank {
            params,
            filters,
            rows,
            cols,
            fft,
            spectra,
        })
    }

    pub fn params(&self) -> &GaborParams {
        &self.params
    }

    pub fn filters(&self) -> &[GaborFilter] {
        &self.filters
    }

    pub fn planes(&self) -> usize {
        self.filters.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Spatial kernel of plane `p` (zero mean, unit L2 norm).
    pub fn kernel(&self, p: usize) -> Array2<f64> {
        let f = &self.filters[p];
        odd_kernel(f.wavelength, f.orientation, f.sigma, f.radius)
    }

    fn check(&self, image: ArrayView2<f64>) -> Result<()> {
        if image.dim() != (self.rows, self.cols) {
            return Err(Error::dim(format!(
                "image {:?} does not match gabor bank shape {:?}",
                image.dim(),
                (self.rows, self.cols)
            )));
        }
        Ok(())
    }

    /// Filter responses of every plane.
    pub fn responses(&self, image: ArrayView2<f64>) -> Result<Responses> {
        self.check(image)?;
        let n = self.rows * self.cols;
        let mut spec: Vec<Complex64> = image.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut spec);
        let mut out = Array3::zeros((self.planes(), self.rows, self.cols));
        // Two real responses per complex inverse transform.
        let mut p = 0;
        let mut buf = vec![Complex64::default(); n];
        while p < self.planes() {
            let pair = p + 1 < self.planes();
            for k in 0..n {
                let a = spec[k] * self.spectra[p][k];
                buf[k] = if pair {
                    a + Complex64::i() * spec[k] * self.spectra[p + 1][k]
                } else {
                    a
                };
            }
            self.fft.inverse(&mut buf);
            let flat = out.as_slice_mut().expect("standard layout");
            for k in 0..n {
                flat[p * n + k] = buf[k].re;
                if pair {
                    flat[(p + 1) * n + k] = buf[k].im;
                }
            }
            p += 2;
        }
        Ok(out)
    }

    /// Adjoint of [`GaborBank::responses`]: maps a gradient w.r.t. the
    /// responses to a gradient w.r.t. the image.
    pub fn responses_vjp(&self, grad: &Responses) -> Result<Array2<f64>> {
        if grad.dim() != (self.planes(), self.rows, self.cols) {
            return Err(Error::dim(format!("response gradient shape {:?}", grad.dim())));
        }
        let n = self.rows * self.cols;
        let flat = grad.as_standard_layout();
        let flat = flat.as_slice().expect("standard layout");
        let mut acc = vec![Complex64::default(); n];
        let mut buf = vec![Complex64::default(); n];
        let mut p = 0;
        while p < self.planes() {
            let pair = p + 1 < self.planes();
            for k in 0..n {
                buf[k] = Complex64::new(flat[p * n + k], if pair { flat[(p + 1) * n + k] } else { 0.0 });
            }
            self.fft.forward(&mut buf);
            for k in 0..n {
                // Separate the two real spectra packed in one transform.
                let z = buf[k];
                let zm = buf[self.fft.mirror(k)].conj();
                let ga = (z + zm) * 0.5;
                acc[k] += self.spectra[p][k].conj() * ga;
                if pair {
                    let gb = (z - zm) * Complex64::new(0.0, -0.5);
                    acc[k] += self.spectra[p + 1][k].conj() * gb;
                }
            }
            p += 2;
        }
        self.fft.inverse(&mut acc);
        Ok(Array2::from_shape_vec((self.rows, self.cols), acc.iter().map(|c| c.re).collect()).expect("shape"))
    }
}

/// Odd-phase (sine carrier) Gabor kernel, isotropic Gaussian envelope,
/// normalized to zero mean and unit L2 norm.
fn odd_kernel(lambda: f64, theta: f64, sigma: f64, radius: (usize, usize)) -> Array2<f64> {
    let (ry, rx) = (radius.0 as isize, radius.1 as isize);
    let (s, c) = theta.sin_cos();
    let mut k = Array2::from_shape_fn(((2 * ry + 1) as usize, (2 * rx + 1) as usize), |(i, j)| {
        let y = i as f64 - ry as f64;
        let x = j as f64 - rx as f64;
        let env = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
        env * (2.0 * PI * (x * c + y * s) / lambda).sin()
    });
    let mean = k.mean().unwrap_or(0.0);
    k.mapv_inplace(|v| v - mean);
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        k.mapv_inplace(|v| v / norm);
    }
    k
}

/// Smooth surrogate of the binary template: `tanh(beta * response)` per plane.
#[derive(Debug, Clone)]
pub struct SoftTemplate {
    pub values: Array3<f64>,
    pub beta: f64,
}

pub fn encode_soft(image: ArrayView2<f64>, bank: &GaborBank, beta: f64) -> Result<SoftTemplate> {
    if !(beta > 0.0) {
        return Err(Error::Argument("beta must be > 0".into()));
    }
    let r = bank.responses(image)?;
    Ok(SoftTemplate {
        values: r.mapv(|v| (beta * v).tanh()),
        beta,
    })
}

impl SoftTemplate {
    /// Gradient w.r.t. the image given the gradient w.r.t. the template.
    pub fn backward(&self, bank: &GaborBank, grad: &Array3<f64>) -> Result<Array2<f64>> {
        if grad.dim() != self.values.dim() {
            return Err(Error::dim("template gradient shape mismatch"));
        }
        let beta = self.beta;
        let mut g = grad.clone();
        g.zip_mut_with(&self.values, |g, &s| *g *= beta * (1.0 - s * s));
        bank.responses_vjp(&g)
    }

    pub fn planes(&self) -> usize {
        self.values.len_of(Axis(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>())
    }

    fn toy_bank() -> GaborBank {
        let p = GaborParams {
            wavelengths: vec![3.0, 5.0, 8.0],
            ..GaborParams::default()
        };
        GaborBank::new(p, 8, 16).unwrap()
    }

    #[test]
    fn kernels_zero_mean_unit_norm() {
        let b = GaborBank::new(GaborParams::default(), 64, 512).unwrap();
        assert_eq!(b.planes(), 6);
        for p in 0..6 {
            let k = b.kernel(p);
            assert!(k.sum().abs() < 1e-12);
            assert!((k.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn responses_match_direct_convolution() {
        let b = toy_bank();
        let x = random(8, 16, 1);
        let r = b.responses(x.view()).unwrap();
        for p in 0..b.planes() {
            let k = b.kernel(p);
            let (ry, rx) = b.filters()[p].radius;
            for i in 0..8 {
                for j in 0..16 {
                    let mut acc = 0.0;
                    for ((a, bb), &w) in k.indexed_iter() {
                        let dy = a as isize - ry as isize;
                        let dx = bb as isize - rx as isize;
                        let si = (i as isize - dy).rem_euclid(8) as usize;
                        let sj = (j as isize - dx).rem_euclid(16) as usize;
                        acc += w * x[[si, sj]];
                    }
                    // DC of the folded kernel is removed exactly; x's mean
                    // contributes through the folded kernel sum only.
                    let fold: f64 = k.sum();
                    acc -= fold * x.mean().unwrap();
                    assert!((acc - r[[p, i, j]]).abs() < 1e-10, "plane {p} at {i},{j}");
                }
            }
        }
    }

    #[test]
    fn vjp_is_adjoint() {
        let b = toy_bank();
        let x = random(8, 16, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Array3::from_shape_fn((b.planes(), 8, 16), |_| rng.gen_range(-1.0..1.0));
        let lhs = (&b.responses(x.view()).unwrap() * &g).sum();
        let rhs = (&b.responses_vjp(&g).unwrap() * &x).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn odd_plane_count_works() {
        let p = GaborParams {
            wavelengths: vec![4.0],
            orientations: vec![0.0],
            sigma_ratio: 0.5,
        };
        let b = GaborBank::new(p, 8, 16).unwrap();
        let x = random(8, 16, 4);
        let r = b.responses(x.view()).unwrap();
        let g = r.clone();
        let lhs = (&r * &g).sum();
        let rhs = (&b.responses_vjp(&g).unwrap() * &x).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let b = toy_bank();
        assert!(matches!(b.responses(Array2::zeros((8, 8)).view()), Err(Error::Dimension(_))));
    }
}
