use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{Mode, NetworkModel};
use super::Tensor;
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Below this magnitude gradients are compared absolutely.
const ABS_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    /// Worst relative error over all weights and input entries.
    pub max_rel_error: f64,
    /// Name of the tensor holding the worst entry.
    pub worst_tensor: String,
    pub checked: usize,
    /// Entries skipped because the stencil straddles a ReLU kink.
    pub kinks_skipped: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(ABS_FLOOR)
}

/// Compare back-propagated gradients of `L = <u, model(x)>` (random `x` in
/// [-1, 1], random `u`) against five-point central differences, for every weight
/// and every input entry. Training-mode forward passes are used throughout.
pub fn gradcheck(model: &NetworkModel, batch: usize, tolerance: f64, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c, h, w] = model.input_shape();
    let x = Tensor::from_shape_fn((batch, c, h, w), |_| rng.gen_range(-1.0..1.0));
    let [oc, oh, ow] = model.output_shape();
    let u = Tensor::from_shape_fn((batch, oc, oh, ow), |_| rng.gen_range(-1.0..1.0));

    let mut m = model.clone();
    let loss = |m: &mut NetworkModel, x: &Tensor| -> Result<f64> {
        let y = m.forward(x, Mode::Train)?;
        Ok(y.iter().zip(u.iter()).map(|(a, b)| a * b).sum())
    };
    let l0 = loss(&mut m, &x)?;
    let grads = m.backward(&u)?;

    let mut worst = 0.0f64;
    let mut worst_tensor = String::new();
    let mut checked = 0;
    let mut kinks = 0;
    // `l` holds the loss at -2h, -h, +h, +2h.
    let mut judge = |analytic: f64, l: [f64; 4], name: &str| {
        // Second differences at h and 2h scale by 4 on smooth functions; a
        // ReLU kink inside the stencil breaks that.
        let d1 = l[2] - 2.0 * l0 + l[1];
        let d2 = l[3] - 2.0 * l0 + l[0];
        if (d2 - 4.0 * d1).abs() > 0.1 * (d2.abs() + 4.0 * d1.abs()) + 1e-13 * (1.0 + l0.abs()) {
            kinks += 1;
            return;
        }
        let numeric = (8.0 * (l[2] - l[1]) - (l[3] - l[0])) / (12.0 * FD_STEP);
        let e = rel_error(analytic, numeric);
        checked += 1;
        if e > worst {
            worst = e;
            worst_tensor = name.to_string();
        }
    };
    const OFFSETS: [f64; 4] = [-2.0 * FD_STEP, -FD_STEP, FD_STEP, 2.0 * FD_STEP];

    let (names, _) = m.tensor_names();
    let n_params = m.params().len();
    for k in 0..n_params {
        let len = m.params()[k].data.len();
        for i in 0..len {
            let orig = m.params()[k].data[i];
            let mut l = [0.0; 4];
            for (slot, d) in l.iter_mut().zip(OFFSETS) {
                m.params_mut()[k].data[i] = orig + d;
                *slot = loss(&mut m, &x)?;
            }
            m.params_mut()[k].data[i] = orig;
            judge(grads.params[k][i], l, &names[k]);
        }
    }
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = x.as_slice().expect("standard layout")[i];
        let mut l = [0.0; 4];
        for (slot, d) in l.iter_mut().zip(OFFSETS) {
            xp.as_slice_mut().expect("standard layout")[i] = orig + d;
            *slot = loss(&mut m, &xp)?;
        }
        xp.as_slice_mut().expect("standard layout")[i] = orig;
        judge(grads.input.as_slice().expect("standard layout")[i], l, "input");
    }
    Ok(GradcheckReport {
        max_rel_error: worst,
        worst_tensor,
        checked,
        kinks_skipped: kinks,
        tolerance,
        passed: worst <= tolerance,
    })
}
