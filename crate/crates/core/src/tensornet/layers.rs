use ndarray::linalg::general_mat_mul;
use ndarray::{Array4, ArrayView2, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

/// One layer of a network, by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        kernel: (usize, usize),
        out_channels: usize,
        stride: (usize, usize),
        padding: Padding,
        /// Depthwise + pointwise factorization instead of a dense kernel.
        #[serde(default)]
        separable: bool,
    },
    /// Transposed convolution.
    Deconv {
        kernel: (usize, usize),
        out_channels: usize,
        stride: (usize, usize),
        padding: Padding,
    },
    Relu,
    Tanh,
    BatchNorm,
}

impl LayerSpec {
    pub fn conv(k: usize, out_channels: usize, stride: usize) -> Self {
        LayerSpec::Conv {
            kernel: (k, k),
            out_channels,
            stride: (stride, stride),
            padding: Padding::Same,
            separable: false,
        }
    }

    pub fn deconv(k: usize, out_channels: usize, stride: usize) -> Self {
        LayerSpec::Deconv {
            kernel: (k, k),
            out_channels,
            stride: (stride, stride),
            padding: Padding::Same,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            LayerSpec::Conv { kernel, out_channels, stride, .. }
            | LayerSpec::Deconv { kernel, out_channels, stride, .. } => {
                if kernel.0 == 0 || kernel.1 == 0 || *out_channels == 0 {
                    return Err(Error::Argument(format!("degenerate kernel in {self:?}")));
                }
                if !matches!(stride.0, 1 | 2) || !matches!(stride.1, 1 | 2) {
                    return Err(Error::Argument(format!("stride must be 1 or 2 in {self:?}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Geometry of a 2-D convolution from `(cin, hin, win)` to `(hout, wout)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geom {
    pub cin: usize,
    pub hin: usize,
    pub win: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub hout: usize,
    pub wout: usize,
}

impl Geom {
    fn conv(cin: usize, hin: usize, win: usize, kernel: (usize, usize), stride: (usize, usize), padding: Padding) -> Result<Geom> {
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        let (hout, wout, ph, pw) = match padding {
            Padding::Same => {
                let hout = hin.div_ceil(sh);
                let wout = win.div_ceil(sw);
                let th = ((hout - 1) * sh + kh).saturating_sub(hin);
                let tw = ((wout - 1) * sw + kw).saturating_sub(win);
                (hout, wout, th / 2, tw / 2)
            }
            Padding::Valid => {
                if hin < kh || win < kw {
                    return Err(Error::dim(format!("input {hin}x{win} smaller than kernel {kh}x{kw}")));
                }
                ((hin - kh) / sh + 1, (win - kw) / sw + 1, 0, 0)
            }
        };
        Ok(Geom { cin, hin, win, kh, kw, sh, sw, ph, pw, hout, wout })
    }

    /// Geometry of the convolution whose adjoint is a transposed convolution
    /// from `(hin, win)` (the deconv input) up to a larger output.
    fn deconv(cout: usize, hin: usize, win: usize, kernel: (usize, usize), stride: (usize, usize), padding: Padding) -> Geom {
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        let (hbig, wbig, ph, pw) = match padding {
            Padding::Same => (hin * sh, win * sw, kh.saturating_sub(sh) / 2, kw.saturating_sub(sw) / 2),
            Padding::Valid => ((hin - 1) * sh + kh, (win - 1) * sw + kw, 0, 0),
        };
        Geom { cin: cout, hin: hbig, win: wbig, kh, kw, sh, sw, ph, pw, hout: hin, wout: win }
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn npos(&self) -> usize {
        self.hout * self.wout
    }
}

/// Unfold `x` (cin*hin*win) into `cols` (cin*kh*kw, hout*wout); zero padding.
fn im2col(x: &[f64], g: &Geom, cols: &mut [f64]) {
    let np = g.npos();
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * np..(row + 1) * np];
                for oi in 0..g.hout {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    let drow = &mut dst[oi * g.wout..(oi + 1) * g.wout];
                    if ii < 0 || ii >= g.hin as isize {
                        drow.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[(c * g.hin + ii as usize) * g.win..][..g.win];
                    for (oj, d) in drow.iter_mut().enumerate() {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        *d = if jj < 0 || jj >= g.win as isize { 0.0 } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate `cols` back into `x`.
fn col2im(cols: &[f64], g: &Geom, x: &mut [f64]) {
    let np = g.npos();
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * np..(row + 1) * np];
                for oi in 0..g.hout {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    if ii < 0 || ii >= g.hin as isize {
                        continue;
                    }
                    let dst = &mut x[(c * g.hin + ii as usize) * g.win..][..g.win];
                    let srow = &src[oi * g.wout..(oi + 1) * g.wout];
                    for (oj, s) in srow.iter().enumerate() {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        if jj >= 0 && (jj as usize) < g.win {
                            dst[jj as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

fn mat(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix view")
}

fn mat_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix view")
}

/// A named weight or buffer tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamTensor {
    fn zeros(name: &str, shape: &[usize]) -> Self {
        ParamTensor {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    fn filled(name: &str, shape: &[usize], v: f64) -> Self {
        let mut p = Self::zeros(name, shape);
        p.data.iter_mut().for_each(|x| *x = v);
        p
    }

    fn uniform(name: &str, shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(name, shape);
        p.data.iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
        p
    }
}

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Runtime state of one layer: resolved geometry, weights and buffers.
#[derive(Debug, Clone)]
pub(crate) struct Layer {
    pub spec: LayerSpec,
    pub in_shape: [usize; 3],
    pub out_shape: [usize; 3],
    pub params: Vec<ParamTensor>,
    pub buffers: Vec<ParamTensor>,
    geom: Option<Geom>,
    /// Depthwise geometry (single channel) for separable convolutions.
    dw_geom: Option<Geom>,
}

/// What a layer keeps from its training-mode forward pass.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    Input(Tensor),
    Separable { input: Tensor, depthwise: Tensor },
    Output(Tensor),
    Norm {
        xhat: Tensor,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        count: f64,
        /// Running statistics were used, so normalization is affine.
        frozen: bool,
    },
}

impl Layer {
    pub fn new(spec: LayerSpec, in_shape: [usize; 3], rng: &mut impl Rng) -> Result<Layer> {
        spec.validate()?;
        let [c, h, w] = in_shape;
        let mut layer = Layer {
            spec: spec.clone(),
            in_shape,
            out_shape: in_shape,
            params: Vec::new(),
            buffers: Vec::new(),
            geom: None,
            dw_geom: None,
        };
        match spec {
            LayerSpec::Conv { kernel, out_channels, stride, padding, separable } => {
                let g = Geom::conv(c, h, w, kernel, stride, padding)?;
                layer.out_shape = [out_channels, g.hout, g.wout];
                if separable {
                    let dw = Geom::conv(1, h, w, kernel, stride, padding)?;
                    let b_dw = (1.0 / (kernel.0 * kernel.1) as f64).sqrt();
                    let b_pw = (1.0 / c as f64).sqrt();
                    layer.params.push(ParamTensor::uniform("depthwise", &[c, 1, kernel.0, kernel.1], b_dw, rng));
                    layer.params.push(ParamTensor::uniform("pointwise", &[out_channels, c, 1, 1], b_pw, rng));
                    layer.dw_geom = Some(dw);
                } else {
                    let bound = (1.0 / g.patch() as f64).sqrt();
                    layer.params.push(ParamTensor::uniform("weight", &[out_channels, c, kernel.0, kernel.1], bound, rng));
                }
                layer.params.push(ParamTensor::zeros("bias", &[out_channels]));
                layer.geom = Some(g);
            }
            LayerSpec::Deconv { kernel, out_channels, stride, padding } => {
                let g = Geom::deconv(out_channels, h, w, kernel, stride, padding);
                layer.out_shape = [out_channels, g.hin, g.win];
                let fan_in = (c * kernel.0 * kernel.1) as f64 / (stride.0 * stride.1) as f64;
                let bound = (1.0 / fan_in).sqrt();
                layer.params.push(ParamTensor::uniform("weight", &[c, out_channels, kernel.0, kernel.1], bound, rng));
                layer.params.push(ParamTensor::zeros("bias", &[out_channels]));
                layer.geom = Some(g);
            }
            LayerSpec::BatchNorm => {
                layer.params.push(ParamTensor::filled("gamma", &[c], 1.0));
                layer.params.push(ParamTensor::zeros("beta", &[c]));
                layer.buffers.push(ParamTensor::zeros("running_mean", &[c]));
                layer.buffers.push(ParamTensor::filled("running_var", &[c], 1.0));
            }
            LayerSpec::Relu | LayerSpec::Tanh => {}
        }
        Ok(layer)
    }

    /// Forward pass. `batch_stats` normalizes with the batch statistics
    /// instead of the running ones; `keep` asks for a cache.
    pub fn forward(&self, x: &Tensor, batch_stats: bool, keep: bool) -> (Tensor, Option<LayerCache>) {
        let n = x.shape()[0];
        let [oc, oh, ow] = self.out_shape;
        match &self.spec {
            LayerSpec::Conv { separable: false, .. } => {
                let g = self.geom.expect("conv geometry");
                let w = &self.params[0].data;
                let b = &self.params[1].data;
                let mut y = Tensor::zeros((n, oc, oh, ow));
                let xs = x.as_slice().expect("standard layout");
                let ys = y.as_slice_mut().expect("standard layout");
                let in_len = g.cin * g.hin * g.win;
                let np = g.npos();
                let mut cols = vec![0.0; g.patch() * np];
                for s in 0..n {
                    im2col(&xs[s * in_len..(s + 1) * in_len], &g, &mut cols);
                    let out = &mut ys[s * oc * np..(s + 1) * oc * np];
                    for (o, chunk) in out.chunks_mut(np).enumerate() {
                        chunk.iter_mut().for_each(|v| *v = b[o]);
                    }
                    general_mat_mul(1.0, &mat(w, oc, g.patch()), &mat(&cols, g.patch(), np), 1.0, &mut mat_mut(out, oc, np));
                }
                (y, keep.then(|| LayerCache::Input(x.clone())))
            }
            LayerSpec::Conv { separable: true, .. } => {
                let dw = self.dw_geom.expect("depthwise geometry");
                let c = self.in_shape[0];
                let np = dw.npos();
                let kk = dw.kh * dw.kw;
                let wd = &self.params[0].data;
                let wp = &self.params[1].data;
                let b = &self.params[2].data;
                let mut mid = Tensor::zeros((n, c, oh, ow));
                let xs = x.as_slice().expect("standard layout");
                let plane = dw.hin * dw.win;
                let mut cols = vec![0.0; kk * np];
                {
                    let ms = mid.as_slice_mut().expect("standard layout");
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * plane;
                            im2col(&xs[off..off + plane], &dw, &mut cols);
                            let dst = &mut ms[(s * c + ch) * np..][..np];
                            general_mat_mul(1.0, &mat(&wd[ch * kk..(ch + 1) * kk], 1, kk), &mat(&cols, kk, np), 0.0, &mut mat_mut(dst, 1, np));
                        }
                    }
                }
                let mut y = Tensor::zeros((n, oc, oh, ow));
                let ms = mid.as_slice().expect("standard layout");
                let ys = y.as_slice_mut().expect("standard layout");
                for s in 0..n {
                    let out = &mut ys[s * oc * np..(s + 1) * oc * np];
                    for (o, chunk) in out.chunks_mut(np).enumerate() {
                        chunk.iter_mut().for_each(|v| *v = b[o]);
                    }
                    general_mat_mul(1.0, &mat(wp, oc, c), &mat(&ms[s * c * np..(s + 1) * c * np], c, np), 1.0, &mut mat_mut(out, oc, np));
                }
                let cache = keep.then(|| LayerCache::Separable { input: x.clone(), depthwise: mid });
                (y, cache)
            }
            LayerSpec::Deconv { .. } => {
                let g = self.geom.expect("deconv geometry");
                let cin = self.in_shape[0];
                let np = g.npos();
                let w = &self.params[0].data;
                let b = &self.params[1].data;
                let mut y = Tensor::zeros((n, oc, oh, ow));
                let xs = x.as_slice().expect("standard layout");
                let ys = y.as_slice_mut().expect("standard layout");
                let out_len = oc * oh * ow;
                let mut cols = vec![0.0; g.patch() * np];
                for s in 0..n {
                    let xin = &xs[s * cin * np..(s + 1) * cin * np];
                    general_mat_mul(1.0, &mat(w, cin, g.patch()).t(), &mat(xin, cin, np), 0.0, &mut mat_mut(&mut cols, g.patch(), np));
                    let out = &mut ys[s * out_len..(s + 1) * out_len];
                    for (o, chunk) in out.chunks_mut(oh * ow).enumerate() {
                        chunk.iter_mut().for_each(|v| *v = b[o]);
                    }
                    col2im(&cols, &g, out);
                }
                (y, keep.then(|| LayerCache::Input(x.clone())))
            }
            LayerSpec::Relu => {
                let y = x.mapv(|v| if v < 0.0 { 0.0 } else { v });
                let cache = keep.then(|| LayerCache::Output(y.clone()));
                (y, cache)
            }
            LayerSpec::Tanh => {
                let y = x.mapv(f64::tanh);
                let cache = keep.then(|| LayerCache::Output(y.clone()));
                (y, cache)
            }
            LayerSpec::BatchNorm => self.batchnorm_forward(x, batch_stats, keep),
        }
    }

    fn batchnorm_forward(&self, x: &Tensor, batch_stats: bool, keep: bool) -> (Tensor, Option<LayerCache>) {
        let (n, c, h, w) = x.dim();
        let plane = h * w;
        let count = (n * plane) as f64;
        let xs = x.as_slice().expect("standard layout");
        let (mean, var): (Vec<f64>, Vec<f64>) = if batch_stats {
            (0..c)
                .map(|ch| {
                    let mut sum = 0.0;
                    for s in 0..n {
                        sum += xs[(s * c + ch) * plane..][..plane].iter().sum::<f64>();
                    }
                    let mu = sum / count;
                    let mut sq = 0.0;
                    for s in 0..n {
                        sq += xs[(s * c + ch) * plane..][..plane].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                    }
                    (mu, sq / count)
                })
                .unzip()
        } else {
            (self.buffers[0].data.clone(), self.buffers[1].data.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gamma = &self.params[0].data;
        let beta = &self.params[1].data;
        let mut xhat = Tensor::zeros((n, c, h, w));
        let mut y = Tensor::zeros((n, c, h, w));
        {
            let xh = xhat.as_slice_mut().expect("standard layout");
            let ys = y.as_slice_mut().expect("standard layout");
            for s in 0..n {
                for ch in 0..c {
                    let off = (s * c + ch) * plane;
                    for i in off..off + plane {
                        let v = (xs[i] - mean[ch]) * inv_std[ch];
                        xh[i] = v;
                        ys[i] = gamma[ch] * v + beta[ch];
                    }
                }
            }
        }
        let cache = keep.then(|| LayerCache::Norm {
            xhat,
            inv_std,
            mean,
            var,
            count,
            frozen: !batch_stats,
        });
        (y, cache)
    }

    /// Fold the batch statistics of a training forward pass into the running
    /// statistics.
    pub fn update_running(&mut self, cache: &LayerCache) {
        if let LayerCache::Norm {
            mean,
            var,
            count,
            frozen: false,
            ..
        } = cache
        {
            let unbiased = if *count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for ch in 0..mean.len() {
                let rm = &mut self.buffers[0].data[ch];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[ch];
                let rv = &mut self.buffers[1].data[ch];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[ch] * unbiased;
            }
        }
    }

    /// Backward pass: returns the input gradient and one gradient per param.
    pub fn backward(&self, cache: &LayerCache, dy: &Tensor) -> (Tensor, Vec<Vec<f64>>) {
        let n = dy.shape()[0];
        let [ic, ih, iw] = self.in_shape;
        let [oc, oh, ow] = self.out_shape;
        let dys = dy.as_slice().expect("standard layout");
        match (&self.spec, cache) {
            (LayerSpec::Conv { separable: false, .. }, LayerCache::Input(x)) => {
                let g = self.geom.expect("conv geometry");
                let w = &self.params[0].data;
                let np = g.npos();
                let k = g.patch();
                let in_len = ic * ih * iw;
                let mut dw = vec![0.0; w.len()];
                let mut db = vec![0.0; oc];
                let mut dx = Tensor::zeros((n, ic, ih, iw));
                let xs = x.as_slice().expect("standard layout");
                let dxs = dx.as_slice_mut().expect("standard layout");
                let mut cols = vec![0.0; k * np];
                let mut dcols = vec![0.0; k * np];
                for s in 0..n {
                    let dout = &dys[s * oc * np..(s + 1) * oc * np];
                    for (o, chunk) in dout.chunks(np).enumerate() {
                        db[o] += chunk.iter().sum::<f64>();
                    }
                    im2col(&xs[s * in_len..(s + 1) * in_len], &g, &mut cols);
                    general_mat_mul(1.0, &mat(dout, oc, np), &mat(&cols, k, np).t(), 1.0, &mut mat_mut(&mut dw, oc, k));
                    general_mat_mul(1.0, &mat(w, oc, k).t(), &mat(dout, oc, np), 0.0, &mut mat_mut(&mut dcols, k, np));
                    col2im(&dcols, &g, &mut dxs[s * in_len..(s + 1) * in_len]);
                }
                (dx, vec![dw, db])
            }
            (LayerSpec::Conv { separable: true, .. }, LayerCache::Separable { input, depthwise }) => {
                let dwg = self.dw_geom.expect("depthwise geometry");
                let np = dwg.npos();
                let kk = dwg.kh * dwg.kw;
                let plane = ih * iw;
                let wd = &self.params[0].data;
                let wp = &self.params[1].data;
                let mut gwd = vec![0.0; wd.len()];
                let mut gwp = vec![0.0; wp.len()];
                let mut gb = vec![0.0; oc];
                let mut dmid = vec![0.0; ic * np];
                let mut dx = Tensor::zeros((n, ic, ih, iw));
                let xs = input.as_slice().expect("standard layout");
                let ms = depthwise.as_slice().expect("standard layout");
                let dxs = dx.as_slice_mut().expect("standard layout");
                let mut cols = vec![0.0; kk * np];
                let mut dcols = vec![0.0; kk * np];
                for s in 0..n {
                    let dout = &dys[s * oc * np..(s + 1) * oc * np];
                    for (o, chunk) in dout.chunks(np).enumerate() {
                        gb[o] += chunk.iter().sum::<f64>();
                    }
                    let mid = &ms[s * ic * np..(s + 1) * ic * np];
                    general_mat_mul(1.0, &mat(dout, oc, np), &mat(mid, ic, np).t(), 1.0, &mut mat_mut(&mut gwp, oc, ic));
                    general_mat_mul(1.0, &mat(wp, oc, ic).t(), &mat(dout, oc, np), 0.0, &mut mat_mut(&mut dmid, ic, np));
                    for ch in 0..ic {
                        let off = (s * ic + ch) * plane;
                        im2col(&xs[off..off + plane], &dwg, &mut cols);
                        let dm = &dmid[ch * np..(ch + 1) * np];
                        general_mat_mul(1.0, &mat(dm, 1, np), &mat(&cols, kk, np).t(), 1.0, &mut mat_mut(&mut gwd[ch * kk..(ch + 1) * kk], 1, kk));
                        general_mat_mul(1.0, &mat(&wd[ch * kk..(ch + 1) * kk], 1, kk).t(), &mat(dm, 1, np), 0.0, &mut mat_mut(&mut dcols, kk, np));
                        col2im(&dcols, &dwg, &mut dxs[off..off + plane]);
                    }
                }
                (dx, vec![gwd, gwp, gb])
            }
            (LayerSpec::Deconv { .. }, LayerCache::Input(x)) => {
                let g = self.geom.expect("deconv geometry");
                let np = g.npos();
                let k = g.patch();
                let w = &self.params[0].data;
                let out_len = oc * oh * ow;
                let mut dw = vec![0.0; w.len()];
                let mut db = vec![0.0; oc];
                let mut dx = Tensor::zeros((n, ic, ih, iw));
                let xs = x.as_slice().expect("standard layout");
                let dxs = dx.as_slice_mut().expect("standard layout");
                let mut dcols = vec![0.0; k * np];
                for s in 0..n {
                    let dout = &dys[s * out_len..(s + 1) * out_len];
                    for (o, chunk) in dout.chunks(oh * ow).enumerate() {
                        db[o] += chunk.iter().sum::<f64>();
                    }
                    im2col(dout, &g, &mut dcols);
                    let xin = &xs[s * ic * np..(s + 1) * ic * np];
                    general_mat_mul(1.0, &mat(w, ic, k), &mat(&dcols, k, np), 0.0, &mut mat_mut(&mut dxs[s * ic * np..(s + 1) * ic * np], ic, np));
                    general_mat_mul(1.0, &mat(xin, ic, np), &mat(&dcols, k, np).t(), 1.0, &mut mat_mut(&mut dw, ic, k));
                }
                (dx, vec![dw, db])
            }
            (LayerSpec::Relu, LayerCache::Output(y)) => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |d, &o| {
                    if o <= 0.0 {
                        *d = 0.0
                    }
                });
                (dx, vec![])
            }
            (LayerSpec::Tanh, LayerCache::Output(y)) => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |d, &o| *d *= 1.0 - o * o);
                (dx, vec![])
            }
            (LayerSpec::BatchNorm, LayerCache::Norm { xhat, inv_std, frozen, .. }) => {
                let (n, c, h, w) = dy.dim();
                let plane = h * w;
                let count = (n * plane) as f64;
                let gamma = &self.params[0].data;
                let xh = xhat.as_slice().expect("standard layout");
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * plane;
                        for i in off..off + plane {
                            dgamma[ch] += dys[i] * xh[i];
                            dbeta[ch] += dys[i];
                        }
                    }
                }
                let mut dx = Array4::zeros((n, c, h, w));
                let dxs = dx.as_slice_mut().expect("standard layout");
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * plane;
                        if *frozen {
                            let k = gamma[ch] * inv_std[ch];
                            for i in off..off + plane {
                                dxs[i] = k * dys[i];
                            }
                        } else {
                            let k = gamma[ch] * inv_std[ch] / count;
                            for i in off..off + plane {
                                dxs[i] = k * (count * dys[i] - dbeta[ch] - xh[i] * dgamma[ch]);
                            }
                        }
                    }
                }
                (dx, vec![dgamma, dbeta])
            }
            _ => unreachable!("cache kind does not match layer kind"),
        }
    }
}
