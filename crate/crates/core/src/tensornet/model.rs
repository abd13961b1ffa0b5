use std::collections::BTreeMap;

use ndarray::s;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerCache, LayerSpec, ParamTensor};
use super::Tensor;
use crate::error::{Error, Result};

/// Output of layer `from` is concatenated (appended along channels) to the
/// input of layer `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipLink {
    pub from: usize,
    pub to: usize,
}

/// Serializable description of a network's structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub skip_links: Vec<SkipLink>,
    pub input_shape: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers; caches for backward.
    Train,
    /// Running statistics; no cache.
    Infer,
    /// Running statistics with caches, for gradients of a fixed network.
    Frozen,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    layer_caches: Vec<LayerCache>,
    batch: usize,
}

/// Gradients of a scalar loss with respect to every parameter tensor
/// (in [`NetworkModel::params`] order) and to the network input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Vec<f64>>,
    pub input: Tensor,
}

/// A feed-forward network with optional skip concatenations.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    arch: Architecture,
    layers: Vec<Layer>,
    output_shape: [usize; 3],
    cache: Option<ForwardCache>,
    /// Free-form provenance stored alongside the weights.
    pub metadata: BTreeMap<String, String>,
}

impl NetworkModel {
    /// Build a model and initialize weights uniformly in `±1/sqrt(fan_in)`
    /// from `seed`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers: Vec<Layer> = Vec::with_capacity(arch.layers.len());
        let mut shape = arch.input_shape;
        for (i, spec) in arch.layers.iter().enumerate() {
            let mut in_shape = shape;
            for link in arch.skip_links.iter().filter(|l| l.to == i) {
                if link.from >= i {
                    return Err(Error::Argument(format!("skip link {link:?} must point forward")));
                }
                let src = layers[link.from].out_shape;
                if src[1..] != in_shape[1..] {
                    return Err(Error::dim(format!(
                        "skip link {link:?}: spatial shape {:?} does not match {:?}",
                        &src[1..],
                        &in_shape[1..]
                    )));
                }
                in_shape[0] += src[0];
            }
            let layer = Layer::new(spec.clone(), in_shape, &mut rng)?;
            shape = layer.out_shape;
            layers.push(layer);
        }
        for link in &arch.skip_links {
            if link.to >= arch.layers.len() {
                return Err(Error::Argument(format!("skip link {link:?} out of range")));
            }
        }
        let mut metadata = BTreeMap::new();
        metadata.insert("init".into(), "uniform(+-1/sqrt(fan_in))".into());
        metadata.insert("init_seed".into(), seed.to_string());
        Ok(NetworkModel {
            arch,
            layers,
            output_shape: shape,
            cache: None,
            metadata,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.arch.input_shape
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.output_shape
    }

    /// Per-layer output shapes `(channels, rows, cols)`.
    pub fn layer_shapes(&self) -> Vec<[usize; 3]> {
        self.layers.iter().map(|l| l.out_shape).collect()
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<&ParamTensor> {
        self.layers.iter().flat_map(|l| l.params.iter()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut()).collect()
    }

    /// Non-trainable state (normalization running statistics).
    pub fn buffers(&self) -> Vec<&ParamTensor> {
        self.layers.iter().flat_map(|l| l.buffers.iter()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers.iter_mut().flat_map(|l| l.buffers.iter_mut()).collect()
    }

    /// Fully-qualified names (`layer{i}.{name}`) for params then buffers.
    pub(crate) fn tensor_names(&self) -> (Vec<String>, Vec<String>) {
        let mut p = Vec::new();
        let mut b = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            p.extend(l.params.iter().map(|t| format!("layer{i}.{}", t.name)));
            b.extend(l.buffers.iter().map(|t| format!("layer{i}.{}", t.name)));
        }
        (p, b)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let (_, c, h, w) = batch.dim();
        if [c, h, w] != self.arch.input_shape {
            return Err(Error::dim(format!(
                "batch shape {:?} does not match model input {:?}",
                [c, h, w],
                self.arch.input_shape
            )));
        }
        if batch.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in input batch".into()));
        }
        Ok(())
    }

    fn pass(&self, batch: &Tensor, batch_stats: bool, keep: bool) -> Result<(Tensor, Vec<LayerCache>)> {
        self.check_input(batch)?;
        let mut saved: BTreeMap<usize, Tensor> = BTreeMap::new();
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut x = batch.as_standard_layout().into_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            for link in self.arch.skip_links.iter().filter(|l| l.to == i) {
                x = concat_channels(&x, &saved[&link.from]);
            }
            let (y, cache) = layer.forward(&x, batch_stats, keep);
            caches.extend(cache);
            if self.arch.skip_links.iter().any(|l| l.from == i) {
                saved.insert(i, y.clone());
            }
            x = y;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite activation in forward pass".into()));
        }
        Ok((x, caches))
    }

    /// Forward pass. [`Mode::Train`] and [`Mode::Frozen`] cache activations
    /// for [`NetworkModel::backward`]; only [`Mode::Train`] updates the
    /// normalization running statistics.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        self.cache = None;
        let (y, caches) = match mode {
            Mode::Infer => return self.infer(batch),
            Mode::Train => {
                let (y, caches) = self.pass(batch, true, true)?;
                for (layer, c) in self.layers.iter_mut().zip(&caches) {
                    layer.update_running(c);
                }
                (y, caches)
            }
            Mode::Frozen => self.pass(batch, false, true)?,
        };
        self.cache = Some(ForwardCache {
            layer_caches: caches,
            batch: batch.shape()[0],
        });
        Ok(y)
    }

    /// Inference-mode forward pass without touching any state.
    pub fn infer(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.pass(batch, false, false)?.0)
    }

    /// Inference-mode forward pass followed by back-propagation of
    /// `loss(output) -> (value, d value / d output)`. Returns the loss value,
    /// the output and the gradient w.r.t. the input. Leaves the model untouched.
    pub fn input_gradient<F>(&self, batch: &Tensor, loss: F) -> Result<(f64, Tensor, Tensor)>
    where
        F: FnOnce(&Tensor) -> (f64, Tensor),
    {
        let (y, caches) = self.pass(batch, false, true)?;
        let (value, grad) = loss(&y);
        let g = self.backprop(&caches, &grad, false)?;
        Ok((value, y, g.input))
    }

    /// Back-propagate `loss_grad` (gradient of the loss w.r.t. the output of
    /// the most recent caching forward pass).
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<Gradients> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        if loss_grad.shape()[0] != cache.batch {
            return Err(Error::dim(format!(
                "loss gradient batch {} does not match cached batch {}",
                loss_grad.shape()[0],
                cache.batch
            )));
        }
        self.backprop(&cache.layer_caches, loss_grad, true)
    }

    fn backprop(&self, caches: &[LayerCache], loss_grad: &Tensor, want_params: bool) -> Result<Gradients> {
        let (_, c, h, w) = loss_grad.dim();
        if [c, h, w] != self.output_shape {
            return Err(Error::dim(format!(
                "loss gradient shape {:?} does not match output {:?}",
                loss_grad.dim(),
                self.output_shape
            )));
        }
        let nl = self.layers.len();
        let mut param_grads: Vec<Vec<Vec<f64>>> = vec![Vec::new(); nl];
        let mut extra: BTreeMap<usize, Tensor> = BTreeMap::new();
        let mut dy = loss_grad.as_standard_layout().into_owned();
        for i in (0..nl).rev() {
            if let Some(e) = extra.remove(&i) {
                dy += &e;
            }
            let (mut dx, grads) = self.layers[i].backward(&caches[i], &dy);
            if want_params {
                param_grads[i] = grads;
            }
            // Split the concatenated input gradient back to its sources, last
            // appended first.
            for link in self.arch.skip_links.iter().filter(|l| l.to == i).rev() {
                let width = self.layers[link.from].out_shape[0];
                let total = dx.shape()[1];
                let part = dx.slice(s![.., total - width.., .., ..]).to_owned();
                extra
                    .entry(link.from)
                    .and_modify(|t| *t += &part)
                    .or_insert(part);
                dx = dx.slice(s![.., ..total - width, .., ..]).to_owned();
            }
            dy = dx;
        }
        Ok(Gradients {
            params: param_grads.into_iter().flatten().collect(),
            input: dy,
        })
    }

    /// Drop the cached forward pass.
    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, ca, h, w) = a.dim();
    let cb = b.dim().1;
    let mut out = Tensor::zeros((n, ca + cb, h, w));
    out.slice_mut(s![.., ..ca, .., ..]).assign(a);
    out.slice_mut(s![.., ca.., .., ..]).assign(b);
    out
}

fn width(base: usize, scale: f64) -> usize {
    ((base as f64 * scale).round() as usize).max(1)
}

/// Sub-band denoising autoencoder: three stride-2 4x4 convolutions followed
/// by three stride-2 4x4 transposed convolutions, batch normalization and
/// ReLU after every layer but the last, linear output.
pub fn denoiser_architecture(band_shape: (usize, usize), width_scale: f64) -> Architecture {
    let (c1, c2, c3) = (width(64, width_scale), width(128, width_scale), width(256, width_scale));
    let block = |spec: LayerSpec| vec![spec, LayerSpec::BatchNorm, LayerSpec::Relu];
    let mut layers = Vec::new();
    layers.extend(block(LayerSpec::conv(4, c1, 2)));
    layers.extend(block(LayerSpec::conv(4, c2, 2)));
    layers.extend(block(LayerSpec::conv(4, c3, 2)));
    layers.extend(block(LayerSpec::deconv(4, c2, 2)));
    layers.extend(block(LayerSpec::deconv(4, c1, 2)));
    layers.push(LayerSpec::deconv(4, 1, 2));
    Architecture {
        layers,
        skip_links: vec![],
        input_shape: [1, band_shape.0, band_shape.1],
    }
}

/// U-Net iris-code surrogate: five stride-2 convolutions, five stride-2
/// transposed convolutions, encoder outputs concatenated into the matching
/// decoder inputs, tanh output with `planes` channels.
pub fn surrogate_architecture(image_shape: (usize, usize), width_scale: f64, planes: usize) -> Architecture {
    let enc = [64, 128, 256, 512, 512].map(|c| width(c, width_scale));
    let dec = [512, 256, 128, 64].map(|c| width(c, width_scale));
    let mut layers = Vec::new();
    let mut enc_out = Vec::new();
    for &c in &enc {
        layers.push(LayerSpec::conv(4, c, 2));
        layers.push(LayerSpec::BatchNorm);
        layers.push(LayerSpec::Relu);
        enc_out.push(layers.len() - 1);
    }
    let mut skip_links = Vec::new();
    // deconv4 takes only the bottleneck; deconv3..deconv0 get encoder skips.
    for (k, &c) in dec.iter().enumerate() {
        if k > 0 {
            skip_links.push(SkipLink {
                from: enc_out[4 - k],
                to: layers.len(),
            });
        }
        layers.push(LayerSpec::deconv(4, c, 2));
        layers.push(LayerSpec::BatchNorm);
        layers.push(LayerSpec::Relu);
    }
    skip_links.push(SkipLink {
        from: enc_out[0],
        to: layers.len(),
    });
    layers.push(LayerSpec::deconv(4, planes, 2));
    layers.push(LayerSpec::Tanh);
    Architecture {
        layers,
        skip_links,
        input_shape: [2, image_shape.0, image_shape.1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn identity_one_by_one_conv() {
        let arch = Architecture {
            layers: vec![LayerSpec::conv(1, 1, 1)],
            skip_links: vec![],
            input_shape: [1, 3, 4],
        };
        let mut m = NetworkModel::new(arch, 0).unwrap();
        m.params_mut()[0].data = vec![1.0];
        let x = Array4::from_shape_fn((2, 1, 3, 4), |(a, _, b, c)| (a * 12 + b * 4 + c) as f64 - 5.0);
        assert_eq!(m.infer(&x).unwrap(), x);
    }

    #[test]
    fn relu_values() {
        let arch = Architecture {
            layers: vec![LayerSpec::Relu],
            skip_links: vec![],
            input_shape: [1, 1, 3],
        };
        let m = NetworkModel::new(arch, 0).unwrap();
        let x = Array4::from_shape_vec((1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(m.infer(&x).unwrap().into_raw_vec_and_offset().0, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn denoiser_shapes() {
        let m = NetworkModel::new(denoiser_architecture((16, 128), 1.0), 1).unwrap();
        let shapes = m.layer_shapes();
        assert_eq!(shapes[0], [64, 8, 64]);
        assert_eq!(shapes[3], [128, 4, 32]);
        assert_eq!(shapes[6], [256, 2, 16]);
        assert_eq!(shapes[9], [128, 4, 32]);
        assert_eq!(shapes[12], [64, 8, 64]);
        assert_eq!(m.output_shape(), [1, 16, 128]);
    }

    #[test]
    fn surrogate_shapes_and_skips() {
        let m = NetworkModel::new(surrogate_architecture((64, 512), 1.0, 6), 1).unwrap();
        let shapes = m.layer_shapes();
        assert_eq!(shapes[12], [512, 2, 16]);
        assert_eq!(m.output_shape(), [6, 64, 512]);
        // deconv3 sees 512 + 512 channels.
        assert_eq!(m.layers[18].in_shape, [1024, 4, 32]);
        assert_eq!(m.layers[27].in_shape, [128, 32, 256]);
    }

    #[test]
    fn backward_requires_forward() {
        let mut m = NetworkModel::new(denoiser_architecture((8, 8), 0.125), 1).unwrap();
        let g = Array4::zeros((1, 1, 8, 8));
        assert!(matches!(m.backward(&g), Err(Error::State(_))));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut m = NetworkModel::new(denoiser_architecture((8, 8), 0.125), 1).unwrap();
        let x = Array4::zeros((1, 1, 8, 16));
        assert!(matches!(m.forward(&x, Mode::Train), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_weight_gradients() {
        let mut m = NetworkModel::new(denoiser_architecture((8, 8), 0.125), 3).unwrap();
        let x = Array4::from_shape_fn((2, 1, 8, 8), |(a, _, b, c)| ((a + b * 3 + c * 7) % 5) as f64 / 5.0);
        let y = m.forward(&x, Mode::Train).unwrap();
        let g = m.backward(&Array4::zeros(y.dim())).unwrap();
        assert!(g.params.iter().flatten().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }
}
