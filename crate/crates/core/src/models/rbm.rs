//! Convolutional RBM over `[channels, 3]` visible patches with Gaussian visible units
//! and noisy rectified hidden units. Its weights share the first convolution's geometry.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Borrowed RBM parameters: `weight [m, C, 3]`, `hidden_bias [m]`, `visible_bias [C]`.
pub struct RbmView<'a> {
    pub weight: &'a [f64],
    pub hidden_bias: &'a [f64],
    pub visible_bias: &'a [f64],
    pub hidden: usize,
    pub channels: usize,
}

impl<'a> RbmView<'a> {
    pub fn from_store(store: &'a ParamStore) -> Result<Self> {
        let w = store.get("rbm.weight")?;
        let (hidden, channels) = match *w.shape() {
            [m, c, 3] => (m, c),
            ref s => return Err(Error::shape("rbm", format!("weight must be [m, C, 3], got {s:?}"))),
        };
        Ok(Self {
            weight: w.data(),
            hidden_bias: store.get("rbm.hidden_bias")?.data(),
            visible_bias: store.get("rbm.visible_bias")?.data(),
            hidden,
            channels,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * 3
    }

    /// Hidden pre-activations `W v + c` for one patch.
    pub fn hidden_pre(&self, v: &[f64]) -> Vec<f64> {
        let p = self.patch_len();
        (0..self.hidden)
            .map(|j| {
                self.hidden_bias[j] + self.weight[j * p..(j + 1) * p].iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Gaussian visible means `W^T h + b`, the bias broadcast across the three taps.
    pub fn visible_mean(&self, h: &[f64]) -> Vec<f64> {
        let p = self.patch_len();
        let mut v: Vec<f64> = (0..p).map(|i| self.visible_bias[i / 3]).collect();
        for (j, &hj) in h.iter().enumerate() {
            if hj != 0.0 {
                for (vi, w) in v.iter_mut().zip(&self.weight[j * p..(j + 1) * p]) {
                    *vi += hj * w;
                }
            }
        }
        v
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Noisy ReLU: `max(0, x + n * sigmoid'(x))` with standard normal `n`.
pub fn noisy_relu<R: Rng + ?Sized>(x: f64, rng: &mut R) -> f64 {
    let s = sigmoid(x);
    let n: f64 = rng.sample(StandardNormal);
    (x + n * s * (1.0 - s)).max(0.0)
}

/// One up-down pass for a `[C, 3]` patch: the hidden sample and the visible reconstruction.
/// Without `rng` the hidden units are deterministic, `relu(W v + c)`.
pub fn rbm_energy_step<R: Rng + ?Sized>(
    visible: &Tensor,
    store: &ParamStore,
    rng: Option<&mut R>,
) -> Result<(Vec<f64>, Tensor)> {
    let rbm = RbmView::from_store(store)?;
    if visible.shape() != [rbm.channels, 3] {
        return Err(Error::shape("rbm", format!("visible patch must be [{}, 3], got {:?}", rbm.channels, visible.shape())));
    }
    let pre = rbm.hidden_pre(visible.data());
    let hidden: Vec<f64> = match rng {
        Some(rng) => pre.iter().map(|&x| noisy_relu(x, rng)).collect(),
        None => pre.iter().map(|&x| x.max(0.0)).collect(),
    };
    let recon = Tensor::new(vec![rbm.channels, 3], rbm.visible_mean(&hidden))?;
    Ok((hidden, recon))
}

/// Gradients of the CD-1 objective (to be minimized) averaged over patches.
#[derive(Debug, Clone)]
pub struct Cd1Gradients {
    pub weight: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub visible_bias: Vec<f64>,
    /// Sum of squared reconstruction errors over all patch elements.
    pub sq_error: f64,
    pub elements: usize,
}

/// Positive phase from the data with sampled hidden units, negative phase from the
/// mean reconstruction with deterministic hidden units.
pub fn cd1_gradients<R: Rng + ?Sized>(rbm: &RbmView<'_>, patches: &[Vec<f64>], rng: &mut R) -> Cd1Gradients {
    let p = rbm.patch_len();
    let mut gw = vec![0.0; rbm.hidden * p];
    let mut gh = vec![0.0; rbm.hidden];
    let mut gv = vec![0.0; rbm.channels];
    let mut sq_error = 0.0;
    for v0 in patches {
        let h0: Vec<f64> = rbm.hidden_pre(v0).iter().map(|&x| noisy_relu(x, rng)).collect();
        let v1 = rbm.visible_mean(&h0);
        let h1: Vec<f64> = rbm.hidden_pre(&v1).iter().map(|&x| x.max(0.0)).collect();
        for j in 0..rbm.hidden {
            let row = &mut gw[j * p..(j + 1) * p];
            for i in 0..p {
                row[i] -= h0[j] * v0[i] - h1[j] * v1[i];
            }
            gh[j] -= h0[j] - h1[j];
        }
        for i in 0..p {
            gv[i / 3] -= v0[i] - v1[i];
            sq_error += (v0[i] - v1[i]).powi(2);
        }
    }
    let n = patches.len().max(1) as f64;
    gw.iter_mut().chain(gh.iter_mut()).chain(gv.iter_mut()).for_each(|g| *g /= n);
    Cd1Gradients {
        weight: gw,
        hidden_bias: gh,
        visible_bias: gv,
        sq_error,
        elements: patches.len() * p,
    }
}

/// Mean squared reconstruction error with deterministic hidden units.
pub fn reconstruction_mse(rbm: &RbmView<'_>, patches: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for v0 in patches {
        let h: Vec<f64> = rbm.hidden_pre(v0).iter().map(|&x| x.max(0.0)).collect();
        let v1 = rbm.visible_mean(&h);
        total += v0.iter().zip(&v1).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        n += v0.len();
    }
    total / n.max(1) as f64
}

/// All `[C, 3]` patches of a channel-first `[C, w]` frame at valid positions.
pub fn frame_patches(frame: &[f64], channels: usize, w: usize) -> Vec<Vec<f64>> {
    (0..w.saturating_sub(2))
        .map(|t| {
            let mut p = Vec::with_capacity(channels * 3);
            for c in 0..channels {
                p.extend_from_slice(&frame[c * w + t..c * w + t + 3]);
            }
            p
        })
        .collect()
}
