//! Small configurable convolutional network with analytic gradients.
//!
//! Forward/backward are written directly (no autodiff); the gradient-check
//! entry point compares every trainable tensor against central finite
//! differences, which is how the layer math is kept honest.

use ndarray::{Array1, Array2, Array3, Array4, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{decode_f32, encode_f32};
use crate::error::{Error, Result};

pub const ELU_ALPHA: f64 = 1.0;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Elu,
    Sigmoid,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z >= 0.0 {
                    z
                } else {
                    ELU_ALPHA * (z.exp() - 1.0)
                }
            }
            Activation::Sigmoid => super::logistic::sigmoid(z),
        }
    }

    /// Derivative as a function of the pre-activation z.
    fn grad(&self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z >= 0.0 {
                    1.0
                } else {
                    ELU_ALPHA * z.exp()
                }
            }
            Activation::Sigmoid => {
                let s = super::logistic::sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: usize,
        activation: Activation,
    },
    MaxPool2d,
    BatchNorm,
    Dropout {
        rate: f64,
    },
    Flatten,
    GlobalAveragePool,
    Dense {
        units: usize,
        activation: Activation,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Optimizer {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Input shape (channels, height, width).
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub optimizer: Optimizer,
}

/// Shape flowing between layers during validation.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Im(usize, usize, usize),
    Flat(usize),
}

impl NetworkSpec {
    /// Chains shapes through every layer and enforces the fixed output head:
    /// exactly one unit with a sigmoid.
    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument("input shape has a zero dimension".into()));
        }
        let mut shape = Shape::Im(c, h, w);
        for (i, layer) in self.layers.iter().enumerate() {
            let err = |msg: String| Error::InvalidArgument(format!("layer {i}: {msg}"));
            shape = match (*layer, shape) {
                (LayerSpec::Conv2d { filters, kernel, .. }, Shape::Im(_, h, w)) => {
                    if filters == 0 || kernel == 0 {
                        return Err(err("conv2d needs filters >= 1 and kernel >= 1".into()));
                    }
                    if kernel > h || kernel > w {
                        return Err(err(format!("kernel {kernel} larger than input {h}x{w}")));
                    }
                    Shape::Im(filters, h - kernel + 1, w - kernel + 1)
                }
                (LayerSpec::MaxPool2d, Shape::Im(c, h, w)) => {
                    if h < 2 || w < 2 {
                        return Err(err(format!("cannot 2x2-pool a {h}x{w} map")));
                    }
                    Shape::Im(c, h / 2, w / 2)
                }
                (LayerSpec::BatchNorm, s) => s,
                (LayerSpec::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(err(format!("dropout rate must be in [0, 1), got {rate}")));
                    }
                    s
                }
                (LayerSpec::Flatten, Shape::Im(c, h, w)) => Shape::Flat(c * h * w),
                (LayerSpec::GlobalAveragePool, Shape::Im(c, _, _)) => Shape::Flat(c),
                (LayerSpec::Dense { units, .. }, Shape::Flat(_)) => {
                    if units == 0 {
                        return Err(err("dense needs units >= 1".into()));
                    }
                    Shape::Flat(units)
                }
                (l, s) => {
                    return Err(err(format!("{l:?} cannot follow a {s:?} value")));
                }
            };
        }
        match (self.layers.last(), shape) {
            (
                Some(LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                }),
                Shape::Flat(1),
            ) => Ok(()),
            _ => Err(Error::InvalidArgument(
                "the final layer must be dense(1, sigmoid)".into(),
            )),
        }
    }
}

/// Learned state per layer; stateless layers hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerState {
    Conv {
        w: Array4<f64>, // (filters, in_channels, k, k)
        b: Array1<f64>,
    },
    Bn {
        gamma: Array1<f64>,
        beta: Array1<f64>,
        run_mean: Array1<f64>,
        run_var: Array1<f64>,
    },
    Dense {
        w: Array2<f64>, // (in, out)
        b: Array1<f64>,
    },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetworkDump", try_from = "NetworkDump")]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerState>,
}

/// On-disk form: each tensor as shape + base64 little-endian f32 data.
#[derive(Clone, Serialize, Deserialize)]
struct TensorDump {
    shape: Vec<usize>,
    data: String,
}

impl TensorDump {
    fn of(shape: &[usize], data: &[f64]) -> TensorDump {
        TensorDump {
            shape: shape.to_vec(),
            data: encode_f32(data),
        }
    }

    fn values(&self, want_len: usize) -> Result<Vec<f64>> {
        let v = decode_f32(&self.data)?;
        if v.len() != want_len || self.shape.iter().product::<usize>() != want_len {
            return Err(Error::Model("tensor shape/data length mismatch".into()));
        }
        Ok(v)
    }
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerDump {
    Conv { w: TensorDump, b: TensorDump },
    Bn {
        gamma: TensorDump,
        beta: TensorDump,
        run_mean: TensorDump,
        run_var: TensorDump,
    },
    Dense { w: TensorDump, b: TensorDump },
    None,
}

#[derive(Clone, Serialize, Deserialize)]
struct NetworkDump {
    spec: NetworkSpec,
    layers: Vec<LayerDump>,
}

impl From<Network> for NetworkDump {
    fn from(net: Network) -> NetworkDump {
        let layers = net
            .layers
            .iter()
            .map(|l| match l {
                LayerState::Conv { w, b } => LayerDump::Conv {
                    w: TensorDump::of(w.shape(), w.as_slice().unwrap()),
                    b: TensorDump::of(b.shape(), b.as_slice().unwrap()),
                },
                LayerState::Bn {
                    gamma,
                    beta,
                    run_mean,
                    run_var,
                } => LayerDump::Bn {
                    gamma: TensorDump::of(gamma.shape(), gamma.as_slice().unwrap()),
                    beta: TensorDump::of(beta.shape(), beta.as_slice().unwrap()),
                    run_mean: TensorDump::of(run_mean.shape(), run_mean.as_slice().unwrap()),
                    run_var: TensorDump::of(run_var.shape(), run_var.as_slice().unwrap()),
                },
                LayerState::Dense { w, b } => LayerDump::Dense {
                    w: TensorDump::of(w.shape(), w.as_slice().unwrap()),
                    b: TensorDump::of(b.shape(), b.as_slice().unwrap()),
                },
                LayerState::None => LayerDump::None,
            })
            .collect();
        NetworkDump {
            spec: net.spec,
            layers,
        }
    }
}

impl TryFrom<NetworkDump> for Network {
    type Error = Error;

    fn try_from(dump: NetworkDump) -> Result<Network> {
        dump.spec.validate()?;
        let vec1 = |t: &TensorDump| -> Result<Array1<f64>> {
            let len = t.shape.iter().product();
            Ok(Array1::from_vec(t.values(len)?))
        };
        let layers = dump
            .layers
            .iter()
            .map(|l| {
                Ok(match l {
                    LayerDump::Conv { w, b } => {
                        if w.shape.len() != 4 {
                            return Err(Error::Model("conv weight must be rank 4".into()));
                        }
                        let shape = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
                        let len = w.shape.iter().product();
                        LayerState::Conv {
                            w: Array4::from_shape_vec(shape, w.values(len)?)
                                .map_err(|e| Error::Model(e.to_string()))?,
                            b: vec1(b)?,
                        }
                    }
                    LayerDump::Bn {
                        gamma,
                        beta,
                        run_mean,
                        run_var,
                    } => LayerState::Bn {
                        gamma: vec1(gamma)?,
                        beta: vec1(beta)?,
                        run_mean: vec1(run_mean)?,
                        run_var: vec1(run_var)?,
                    },
                    LayerDump::Dense { w, b } => {
                        if w.shape.len() != 2 {
                            return Err(Error::Model("dense weight must be rank 2".into()));
                        }
                        let len = w.shape.iter().product();
                        LayerState::Dense {
                            w: Array2::from_shape_vec((w.shape[0], w.shape[1]), w.values(len)?)
                                .map_err(|e| Error::Model(e.to_string()))?,
                            b: vec1(b)?,
                        }
                    }
                    LayerDump::None => LayerState::None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if layers.len() != dump.spec.layers.len() {
            return Err(Error::Model("layer count mismatch".into()));
        }
        Ok(Network {
            spec: dump.spec,
            layers,
        })
    }
}

/// Activations flowing between layers: image batches or flat batches.
#[derive(Debug, Clone)]
enum Val {
    Im(Array4<f64>), // (N, C, H, W)
    Flat(Array2<f64>), // (N, D)
}

/// Per-layer cache recorded on the forward pass for use by backward.
enum Cache {
    Conv { input: Array4<f64>, z: Array4<f64> },
    Pool { input_shape: [usize; 4], argmax: Vec<(usize, usize)> },
    Bn { xhat: Val, inv_std: Array1<f64> },
    Dropout { mask: Val },
    Flatten { input_shape: [usize; 4] },
    Gap { input_shape: [usize; 4] },
    Dense { input: Array2<f64>, z: Array2<f64> },
}

/// Gradients for one layer, mirroring `LayerState`.
#[derive(Debug, Clone)]
pub(crate) enum LayerGrads {
    Conv { w: Array4<f64>, b: Array1<f64> },
    Bn { gamma: Array1<f64>, beta: Array1<f64> },
    Dense { w: Array2<f64>, b: Array1<f64> },
    None,
}

enum Mode<'a> {
    Train { rng: &'a mut ChaCha8Rng, update_running: bool },
    Eval,
}

impl Network {
    /// He-style Gaussian initialization; batch-norm starts at identity.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Network> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut c, mut h, mut w) = spec.input;
        let mut flat: Option<usize> = None;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            let state = match *layer {
                LayerSpec::Conv2d { filters, kernel, .. } => {
                    let fan_in = c * kernel * kernel;
                    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                    let wts = Array4::from_shape_fn((filters, c, kernel, kernel), |_| {
                        dist.sample(&mut rng)
                    });
                    c = filters;
                    h = h - kernel + 1;
                    w = w - kernel + 1;
                    LayerState::Conv {
                        w: wts,
                        b: Array1::zeros(filters),
                    }
                }
                LayerSpec::MaxPool2d => {
                    h /= 2;
                    w /= 2;
                    LayerState::None
                }
                LayerSpec::BatchNorm => {
                    let width = flat.unwrap_or(c);
                    LayerState::Bn {
                        gamma: Array1::ones(width),
                        beta: Array1::zeros(width),
                        run_mean: Array1::zeros(width),
                        run_var: Array1::ones(width),
                    }
                }
                LayerSpec::Dropout { .. } => LayerState::None,
                LayerSpec::Flatten => {
                    flat = Some(c * h * w);
                    LayerState::None
                }
                LayerSpec::GlobalAveragePool => {
                    flat = Some(c);
                    LayerState::None
                }
                LayerSpec::Dense { units, .. } => {
                    let fan_in = flat.expect("validated");
                    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                    let wts = Array2::from_shape_fn((fan_in, units), |_| dist.sample(&mut rng));
                    flat = Some(units);
                    LayerState::Dense {
                        w: wts,
                        b: Array1::zeros(units),
                    }
                }
            };
            layers.push(state);
        }
        Ok(Network {
            spec: spec.clone(),
            layers,
        })
    }

    fn forward(&mut self, x: Array4<f64>, mut mode: Mode) -> (Array1<f64>, Vec<Cache>) {
        let mut val = Val::Im(x);
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let n_layers = self.spec.layers.len();
        for li in 0..n_layers {
            let layer = self.spec.layers[li];
            let (next, cache) = match (layer, &mut self.layers[li]) {
                (LayerSpec::Conv2d { activation, .. }, LayerState::Conv { w, b }) => {
                    let input = match val {
                        Val::Im(a) => a,
                        _ => unreachable!("validated"),
                    };
                    let (n, _c_in, ih, iw) = {
                        let s = input.shape();
                        (s[0], s[1], s[2], s[3])
                    };
                    let (f, c_in, k, _) = {
                        let s = w.shape();
                        (s[0], s[1], s[2], s[3])
                    };
                    let (oh, ow) = (ih - k + 1, iw - k + 1);
                    let mut z = Array4::zeros((n, f, oh, ow));
                    for ni in 0..n {
                        for fi in 0..f {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let mut acc = b[fi];
                                    for ci in 0..c_in {
                                        for ky in 0..k {
                                            for kx in 0..k {
                                                acc += w[[fi, ci, ky, kx]]
                                                    * input[[ni, ci, oy + ky, ox + kx]];
                                            }
                                        }
                                    }
                                    z[[ni, fi, oy, ox]] = acc;
                                }
                            }
                        }
                    }
                    let out = z.mapv(|v| activation.apply(v));
                    (Val::Im(out), Cache::Conv { input, z })
                }
                (LayerSpec::MaxPool2d, _) => {
                    let input = match val {
                        Val::Im(a) => a,
                        _ => unreachable!(),
                    };
                    let s = input.shape();
                    let (n, c, ih, iw) = (s[0], s[1], s[2], s[3]);
                    let (oh, ow) = (ih / 2, iw / 2);
                    let mut out = Array4::zeros((n, c, oh, ow));
                    let mut argmax = Vec::with_capacity(n * c * oh * ow);
                    for ni in 0..n {
                        for ci in 0..c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let mut best = f64::NEG_INFINITY;
                                    let mut at = (0, 0);
                                    for dy in 0..2 {
                                        for dx in 0..2 {
                                            let v = input[[ni, ci, 2 * oy + dy, 2 * ox + dx]];
                                            if v > best {
                                                best = v;
                                                at = (2 * oy + dy, 2 * ox + dx);
                                            }
                                        }
                                    }
                                    out[[ni, ci, oy, ox]] = best;
                                    argmax.push(at);
                                }
                            }
                        }
                    }
                    (
                        Val::Im(out),
                        Cache::Pool {
                            input_shape: [n, c, ih, iw],
                            argmax,
                        },
                    )
                }
                (
                    LayerSpec::BatchNorm,
                    LayerState::Bn {
                        gamma,
                        beta,
                        run_mean,
                        run_var,
                    },
                ) => {
                    let width = gamma.len();
                    let (is_train, update_running) = match &mode {
                        Mode::Train { update_running, .. } => (true, *update_running),
                        Mode::Eval => (false, false),
                    };
                    // Collect per-channel statistics uniformly for both domains.
                    let (mean, var): (Array1<f64>, Array1<f64>) = if is_train {
                        let (mut mean, mut var) = (Array1::zeros(width), Array1::zeros(width));
                        match &val {
                            Val::Im(a) => {
                                let m = (a.shape()[0] * a.shape()[2] * a.shape()[3]) as f64;
                                for ci in 0..width {
                                    let ch = a.index_axis(Axis(1), ci);
                                    let mu = ch.sum() / m;
                                    mean[ci] = mu;
                                    var[ci] =
                                        ch.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
                                }
                            }
                            Val::Flat(a) => {
                                let m = a.nrows() as f64;
                                for ci in 0..width {
                                    let col = a.column(ci);
                                    let mu = col.sum() / m;
                                    mean[ci] = mu;
                                    var[ci] =
                                        col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
                                }
                            }
                        }
                        if update_running {
                            for ci in 0..width {
                                run_mean[ci] =
                                    BN_MOMENTUM * run_mean[ci] + (1.0 - BN_MOMENTUM) * mean[ci];
                                run_var[ci] =
                                    BN_MOMENTUM * run_var[ci] + (1.0 - BN_MOMENTUM) * var[ci];
                            }
                        }
                        (mean, var)
                    } else {
                        (run_mean.clone(), run_var.clone())
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let (out, xhat) = match &val {
                        Val::Im(a) => {
                            let mut xhat = a.clone();
                            for ci in 0..width {
                                let mut ch = xhat.index_axis_mut(Axis(1), ci);
                                ch.mapv_inplace(|v| (v - mean[ci]) * inv_std[ci]);
                            }
                            let mut out = xhat.clone();
                            for ci in 0..width {
                                let mut ch = out.index_axis_mut(Axis(1), ci);
                                ch.mapv_inplace(|v| gamma[ci] * v + beta[ci]);
                            }
                            (Val::Im(out), Val::Im(xhat))
                        }
                        Val::Flat(a) => {
                            let mut xhat = a.clone();
                            for ci in 0..width {
                                let mut col = xhat.column_mut(ci);
                                col.mapv_inplace(|v| (v - mean[ci]) * inv_std[ci]);
                            }
                            let mut out = xhat.clone();
                            for ci in 0..width {
                                let mut col = out.column_mut(ci);
                                col.mapv_inplace(|v| gamma[ci] * v + beta[ci]);
                            }
                            (Val::Flat(out), Val::Flat(xhat))
                        }
                    };
                    (out, Cache::Bn { xhat, inv_std })
                }
                (LayerSpec::Dropout { rate }, _) => {
                    let (out, mask) = match &mut mode {
                        Mode::Train { rng, .. } if rate > 0.0 => {
                            let keep = 1.0 - rate;
                            match val {
                                Val::Im(a) => {
                                    let mask = Array4::from_shape_fn(a.raw_dim(), |_| {
                                        if rng.gen::<f64>() < keep {
                                            1.0 / keep
                                        } else {
                                            0.0
                                        }
                                    });
                                    (Val::Im(&a * &mask), Val::Im(mask))
                                }
                                Val::Flat(a) => {
                                    let mask = Array2::from_shape_fn(a.raw_dim(), |_| {
                                        if rng.gen::<f64>() < keep {
                                            1.0 / keep
                                        } else {
                                            0.0
                                        }
                                    });
                                    (Val::Flat(&a * &mask), Val::Flat(mask))
                                }
                            }
                        }
                        _ => {
                            // Inference (or rate 0): identity with a unit mask.
                            let mask = match &val {
                                Val::Im(a) => Val::Im(Array4::ones(a.raw_dim())),
                                Val::Flat(a) => Val::Flat(Array2::ones(a.raw_dim())),
                            };
                            (val, mask)
                        }
                    };
                    (out, Cache::Dropout { mask })
                }
                (LayerSpec::Flatten, _) => {
                    let input = match val {
                        Val::Im(a) => a,
                        _ => unreachable!(),
                    };
                    let s = input.shape();
                    let shape = [s[0], s[1], s[2], s[3]];
                    let n = s[0];
                    let width = s[1] * s[2] * s[3];
                    let flat = input
                        .into_shape_with_order((n, width))
                        .expect("contiguous");
                    (Val::Flat(flat), Cache::Flatten { input_shape: shape })
                }
                (LayerSpec::GlobalAveragePool, _) => {
                    let input = match val {
                        Val::Im(a) => a,
                        _ => unreachable!(),
                    };
                    let s = input.shape();
                    let shape = [s[0], s[1], s[2], s[3]];
                    let area = (s[2] * s[3]) as f64;
                    let mut out = Array2::zeros((s[0], s[1]));
                    for ni in 0..s[0] {
                        for ci in 0..s[1] {
                            out[[ni, ci]] =
                                input.index_axis(Axis(0), ni).index_axis(Axis(0), ci).sum()
                                    / area;
                        }
                    }
                    (Val::Flat(out), Cache::Gap { input_shape: shape })
                }
                (LayerSpec::Dense { activation, .. }, LayerState::Dense { w, b }) => {
                    let input = match val {
                        Val::Flat(a) => a,
                        _ => unreachable!(),
                    };
                    let mut z = input.dot(w);
                    for mut row in z.outer_iter_mut() {
                        row += &b.view();
                    }
                    let out = z.mapv(|v| activation.apply(v));
                    (Val::Flat(out), Cache::Dense { input, z })
                }
                _ => unreachable!("spec/state mismatch"),
            };
            val = next;
            caches.push(cache);
        }
        let probs = match val {
            Val::Flat(a) => a.column(0).to_owned(),
            _ => unreachable!("output head is dense"),
        };
        (probs, caches)
    }

    /// Backward pass from the output pre-activation gradient
    /// dL/dz_out = (p - y)/N (the sigmoid + BCE shortcut).
    fn backward(&self, caches: &[Cache], delta_out: Array1<f64>) -> Vec<LayerGrads> {
        let n_layers = self.spec.layers.len();
        let mut grads: Vec<LayerGrads> = vec![LayerGrads::None; n_layers];
        // Current gradient flowing backward.
        let mut dval = Val::Flat(
            delta_out
                .insert_axis(Axis(1)),
        );
        for li in (0..n_layers).rev() {
            let is_output = li == n_layers - 1;
            match (&self.spec.layers[li], &self.layers[li], &caches[li]) {
                (
                    LayerSpec::Dense { activation, .. },
                    LayerState::Dense { w, .. },
                    Cache::Dense { input, z },
                ) => {
                    let dy = match dval {
                        Val::Flat(a) => a,
                        _ => unreachable!(),
                    };
                    // For the output head the incoming gradient is already
                    // w.r.t. z; otherwise apply the activation derivative.
                    let dz = if is_output {
                        dy
                    } else {
                        let mut dz = dy;
                        Zip::from(&mut dz).and(z).for_each(|g, &zv| *g *= activation.grad(zv));
                        dz
                    };
                    let dw = input.t().dot(&dz);
                    let db = dz.sum_axis(Axis(0));
                    grads[li] = LayerGrads::Dense { w: dw, b: db };
                    dval = Val::Flat(dz.dot(&w.t()));
                }
                (
                    LayerSpec::Conv2d { activation, .. },
                    LayerState::Conv { w, .. },
                    Cache::Conv { input, z },
                ) => {
                    let dy = match dval {
                        Val::Im(a) => a,
                        _ => unreachable!(),
                    };
                    let mut dz = dy;
                    Zip::from(&mut dz).and(z).for_each(|g, &zv| *g *= activation.grad(zv));
                    let (f, c_in, k) = {
                        let s = w.shape();
                        (s[0], s[1], s[2])
                    };
                    let (n, oh, ow) = {
                        let s = dz.shape();
                        (s[0], s[2], s[3])
                    };
                    let mut dw = Array4::zeros(w.raw_dim());
                    let mut db = Array1::zeros(f);
                    let mut dx = Array4::zeros(input.raw_dim());
                    for ni in 0..n {
                        for fi in 0..f {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let g = dz[[ni, fi, oy, ox]];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    db[fi] += g;
                                    for ci in 0..c_in {
                                        for ky in 0..k {
                                            for kx in 0..k {
                                                dw[[fi, ci, ky, kx]] +=
                                                    g * input[[ni, ci, oy + ky, ox + kx]];
                                                dx[[ni, ci, oy + ky, ox + kx]] +=
                                                    g * w[[fi, ci, ky, kx]];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    grads[li] = LayerGrads::Conv { w: dw, b: db };
                    dval = Val::Im(dx);
                }
                (LayerSpec::MaxPool2d, _, Cache::Pool { input_shape, argmax }) => {
                    let dy = match dval {
                        Val::Im(a) => a,
                        _ => unreachable!(),
                    };
                    let [n, c, ih, iw] = *input_shape;
                    let (oh, ow) = (ih / 2, iw / 2);
                    let mut dx = Array4::zeros((n, c, ih, iw));
                    let mut at = 0;
                    for ni in 0..n {
                        for ci in 0..c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let (y, x) = argmax[at];
                                    at += 1;
                                    dx[[ni, ci, y, x]] += dy[[ni, ci, oy, ox]];
                                }
                            }
                        }
                    }
                    dval = Val::Im(dx);
                }
                (
                    LayerSpec::BatchNorm,
                    LayerState::Bn { gamma, .. },
                    Cache::Bn { xhat, inv_std },
                ) => {
                    let width = gamma.len();
                    let mut dgamma = Array1::zeros(width);
                    let mut dbeta = Array1::zeros(width);
                    match (&dval, xhat) {
                        (Val::Im(dy), Val::Im(xh)) => {
                            let s = dy.shape();
                            let m = (s[0] * s[2] * s[3]) as f64;
                            let mut dx = dy.clone();
                            for ci in 0..width {
                                let dych = dy.index_axis(Axis(1), ci);
                                let xhch = xh.index_axis(Axis(1), ci);
                                let sum_dy = dych.sum();
                                let sum_dyxh: f64 =
                                    dych.iter().zip(xhch.iter()).map(|(a, b)| a * b).sum();
                                dgamma[ci] = sum_dyxh;
                                dbeta[ci] = sum_dy;
                                let scale = gamma[ci] * inv_std[ci];
                                let mut dxch = dx.index_axis_mut(Axis(1), ci);
                                Zip::from(&mut dxch).and(&xhch).for_each(|g, &xv| {
                                    *g = scale * (*g - sum_dy / m - xv * sum_dyxh / m);
                                });
                            }
                            dval = Val::Im(dx);
                        }
                        (Val::Flat(dy), Val::Flat(xh)) => {
                            let m = dy.nrows() as f64;
                            let mut dx = dy.clone();
                            for ci in 0..width {
                                let dyc = dy.column(ci);
                                let xhc = xh.column(ci);
                                let sum_dy = dyc.sum();
                                let sum_dyxh: f64 =
                                    dyc.iter().zip(xhc.iter()).map(|(a, b)| a * b).sum();
                                dgamma[ci] = sum_dyxh;
                                dbeta[ci] = sum_dy;
                                let scale = gamma[ci] * inv_std[ci];
                                let mut dxc = dx.column_mut(ci);
                                Zip::from(&mut dxc).and(&xhc).for_each(|g, &xv| {
                                    *g = scale * (*g - sum_dy / m - xv * sum_dyxh / m);
                                });
                            }
                            dval = Val::Flat(dx);
                        }
                        _ => unreachable!(),
                    }
                    grads[li] = LayerGrads::Bn {
                        gamma: dgamma,
                        beta: dbeta,
                    };
                }
                (LayerSpec::Dropout { .. }, _, Cache::Dropout { mask }) => {
                    dval = match (dval, mask) {
                        (Val::Im(dy), Val::Im(m)) => Val::Im(&dy * m),
                        (Val::Flat(dy), Val::Flat(m)) => Val::Flat(&dy * m),
                        _ => unreachable!(),
                    };
                }
                (LayerSpec::Flatten, _, Cache::Flatten { input_shape }) => {
                    let dy = match dval {
                        Val::Flat(a) => a,
                        _ => unreachable!(),
                    };
                    let [n, c, h, w] = *input_shape;
                    let dy = dy.as_standard_layout().into_owned();
                    dval = Val::Im(
                        dy.into_shape_with_order((n, c, h, w)).expect("contiguous"),
                    );
                }
                (LayerSpec::GlobalAveragePool, _, Cache::Gap { input_shape }) => {
                    let dy = match dval {
                        Val::Flat(a) => a,
                        _ => unreachable!(),
                    };
                    let [n, c, h, w] = *input_shape;
                    let area = (h * w) as f64;
                    let mut dx = Array4::zeros((n, c, h, w));
                    for ni in 0..n {
                        for ci in 0..c {
                            let g = dy[[ni, ci]] / area;
                            dx.index_axis_mut(Axis(0), ni)
                                .index_axis_mut(Axis(0), ci)
                                .fill(g);
                        }
                    }
                    dval = Val::Im(dx);
                }
                _ => unreachable!("spec/cache mismatch"),
            }
        }
        grads
    }

    /// Inference-mode score for a single image.
    pub fn predict_image(&self, image: &Array3<f64>) -> Result<f64> {
        Ok(self.predict_images(std::slice::from_ref(image))?[0])
    }

    pub fn predict_images(&self, images: &[Array3<f64>]) -> Result<Vec<f64>> {
        let (c, h, w) = self.spec.input;
        let batch = stack_images(images, (c, h, w))?;
        // Forward mutates nothing in eval mode; clone is cheap relative to
        // the convolution work.
        let mut net = self.clone();
        let (probs, _) = net.forward(batch, Mode::Eval);
        Ok(probs.to_vec())
    }
}

fn stack_images(images: &[Array3<f64>], want: (usize, usize, usize)) -> Result<Array4<f64>> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("empty image batch".into()));
    }
    let (c, h, w) = want;
    let mut out = Array4::zeros((images.len(), c, h, w));
    for (i, img) in images.iter().enumerate() {
        if img.shape() != [c, h, w] {
            return Err(Error::DimensionMismatch {
                expected: c * h * w,
                got: img.len(),
            });
        }
        out.index_axis_mut(Axis(0), i).assign(img);
    }
    Ok(out)
}

fn bce_loss(probs: &Array1<f64>, labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

/// Adam / SGD state per trainable tensor (flattened).
struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
}

fn apply_update(
    params: &mut [f64],
    grads: &[f64],
    opt: &Optimizer,
    state: &mut OptState,
    t: usize,
) {
    match *opt {
        Optimizer::Sgd { lr } => {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= lr * g;
            }
        }
        Optimizer::Adam { lr, beta1, beta2, eps } => {
            let t = t as i32;
            for ((p, g), (m, v)) in params
                .iter_mut()
                .zip(grads)
                .zip(state.m.iter_mut().zip(state.v.iter_mut()))
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / (1.0 - beta1.powi(t));
                let vhat = *v / (1.0 - beta2.powi(t));
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Mini-batch training with per-epoch shuffling.
pub fn nn_train(
    spec: &NetworkSpec,
    images: &[Array3<f64>],
    labels: &[usize],
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Network> {
    if images.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: images.len(),
        });
    }
    if images.is_empty() || batch_size == 0 {
        return Err(Error::InvalidArgument(
            "need at least one image and batch_size >= 1".into(),
        ));
    }
    let mut net = Network::init(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    // One optimizer state per layer, sized lazily on first use.
    let mut states: Vec<Option<(OptState, OptState)>> = (0..net.layers.len()).map(|_| None).collect();
    let mut step = 0usize;
    let n = images.len();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        // Fisher-Yates shuffle.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(batch_size) {
            let batch_imgs: Vec<Array3<f64>> = chunk.iter().map(|&i| images[i].clone()).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let x = stack_images(&batch_imgs, spec.input)?;
            let (probs, caches) = net.forward(
                x,
                Mode::Train {
                    rng: &mut rng,
                    update_running: true,
                },
            );
            let m = chunk.len() as f64;
            let delta: Array1<f64> = probs
                .iter()
                .zip(&batch_labels)
                .map(|(&p, &y)| (p - y as f64) / m)
                .collect();
            let grads = net.backward(&caches, delta);
            step += 1;
            for (li, g) in grads.into_iter().enumerate() {
                let (pw, pb, gw, gb): (&mut [f64], &mut [f64], Vec<f64>, Vec<f64>) =
                    match (&mut net.layers[li], g) {
                        (LayerState::Conv { w, b }, LayerGrads::Conv { w: gw, b: gb }) => (
                            w.as_slice_mut().unwrap(),
                            b.as_slice_mut().unwrap(),
                            gw.into_iter().collect(),
                            gb.to_vec(),
                        ),
                        (LayerState::Dense { w, b }, LayerGrads::Dense { w: gw, b: gb }) => (
                            w.as_slice_mut().unwrap(),
                            b.as_slice_mut().unwrap(),
                            gw.into_iter().collect(),
                            gb.to_vec(),
                        ),
                        (
                            LayerState::Bn { gamma, beta, .. },
                            LayerGrads::Bn { gamma: gg, beta: gb },
                        ) => (
                            gamma.as_slice_mut().unwrap(),
                            beta.as_slice_mut().unwrap(),
                            gg.to_vec(),
                            gb.to_vec(),
                        ),
                        (_, LayerGrads::None) => continue,
                        _ => unreachable!(),
                    };
                let st = states[li].get_or_insert_with(|| {
                    (
                        OptState {
                            m: vec![0.0; pw.len()],
                            v: vec![0.0; pw.len()],
                        },
                        OptState {
                            m: vec![0.0; pb.len()],
                            v: vec![0.0; pb.len()],
                        },
                    )
                });
                apply_update(pw, &gw, &spec.optimizer, &mut st.0, step);
                apply_update(pb, &gb, &spec.optimizer, &mut st.1, step);
            }
        }
    }
    Ok(net)
}

/// Maximum relative error between analytic gradients and central finite
/// differences over every trainable tensor, evaluated on one batch.
pub fn nn_gradient_check(
    spec: &NetworkSpec,
    images: &[Array3<f64>],
    labels: &[usize],
    eps: f64,
    seed: u64,
) -> Result<f64> {
    if images.len() != labels.len() || images.is_empty() {
        return Err(Error::InvalidArgument("bad gradient-check batch".into()));
    }
    let net0 = Network::init(spec, seed)?;
    let x = stack_images(images, spec.input)?;
    let m = labels.len() as f64;

    // Loss is evaluated in training mode with a fresh identically-seeded RNG
    // per call, so dropout masks match across evaluations.
    let loss_of = |net: &Network| -> f64 {
        let mut net = net.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
        let (probs, _) = net.forward(
            x.clone(),
            Mode::Train {
                rng: &mut rng,
                update_running: false,
            },
        );
        bce_loss(&probs, labels)
    };

    let analytic: Vec<LayerGrads> = {
        let mut net = net0.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
        let (probs, caches) = net.forward(
            x.clone(),
            Mode::Train {
                rng: &mut rng,
                update_running: false,
            },
        );
        let delta: Array1<f64> = probs
            .iter()
            .zip(labels)
            .map(|(&p, &y)| (p - y as f64) / m)
            .collect();
        net.backward(&caches, delta)
    };

    let mut max_rel = 0.0f64;
    for li in 0..net0.layers.len() {
        let tensors: Vec<(Vec<f64>, TensorSel)> = match (&net0.layers[li], &analytic[li]) {
            (LayerState::Conv { .. }, LayerGrads::Conv { w: gw, b: gb }) => vec![
                (gw.iter().copied().collect(), TensorSel::W(li)),
                (gb.to_vec(), TensorSel::B(li)),
            ],
            (LayerState::Dense { .. }, LayerGrads::Dense { w: gw, b: gb }) => vec![
                (gw.iter().copied().collect(), TensorSel::W(li)),
                (gb.to_vec(), TensorSel::B(li)),
            ],
            (LayerState::Bn { .. }, LayerGrads::Bn { gamma, beta }) => vec![
                (gamma.to_vec(), TensorSel::Gamma(li)),
                (beta.to_vec(), TensorSel::Beta(li)),
            ],
            _ => continue,
        };
        for (grad, sel) in tensors {
            for at in 0..grad.len() {
                let mut plus = net0.clone();
                nudge(&mut plus, sel, at, eps);
                let mut minus = net0.clone();
                nudge(&mut minus, sel, at, -eps);
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
                let a = grad[at];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                max_rel = max_rel.max(rel);
            }
        }
    }
    Ok(max_rel)
}

#[derive(Clone, Copy)]
enum TensorSel {
    W(usize),
    B(usize),
    Gamma(usize),
    Beta(usize),
}

fn nudge(net: &mut Network, sel: TensorSel, at: usize, eps: f64) {
    match sel {
        TensorSel::W(li) => match &mut net.layers[li] {
            LayerState::Conv { w, .. } => w.as_slice_mut().unwrap()[at] += eps,
            LayerState::Dense { w, .. } => w.as_slice_mut().unwrap()[at] += eps,
            _ => unreachable!(),
        },
        TensorSel::B(li) => match &mut net.layers[li] {
            LayerState::Conv { b, .. } => b[at] += eps,
            LayerState::Dense { b, .. } => b[at] += eps,
            _ => unreachable!(),
        },
        TensorSel::Gamma(li) => match &mut net.layers[li] {
            LayerState::Bn { gamma, .. } => gamma[at] += eps,
            _ => unreachable!(),
        },
        TensorSel::Beta(li) => match &mut net.layers[li] {
            LayerState::Bn { beta, .. } => beta[at] += eps,
            _ => unreachable!(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_spec(with_dropout: bool) -> NetworkSpec {
        let mut layers = vec![
            LayerSpec::Conv2d {
                filters: 3,
                kernel: 3,
                activation: Activation::Elu,
            },
            LayerSpec::BatchNorm,
            LayerSpec::MaxPool2d,
            LayerSpec::Conv2d {
                filters: 4,
                kernel: 3,
                activation: Activation::Relu,
            },
        ];
        if with_dropout {
            layers.push(LayerSpec::Dropout { rate: 0.25 });
        }
        layers.extend([
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 8,
                activation: Activation::Elu,
            },
            LayerSpec::BatchNorm,
            LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            },
        ]);
        NetworkSpec {
            input: (1, 12, 12),
            layers,
            optimizer: Optimizer::adam(0.01),
        }
    }

    fn toy_images(n: usize, seed: u64) -> (Vec<Array3<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            // Class 1 has a bright 4x4 block in the center.
            let img = Array3::from_shape_fn((1, 12, 12), |(_, y, x)| {
                let base = rng.gen::<f64>() * 0.3;
                if label == 1 && (4..8).contains(&y) && (4..8).contains(&x) {
                    base + 0.6
                } else {
                    base
                }
            });
            images.push(img);
            labels.push(label);
        }
        (images, labels)
    }

    #[test]
    fn spec_validation_catches_bad_shapes() {
        let mut spec = toy_spec(false);
        assert!(spec.validate().is_ok());
        // Missing sigmoid head.
        spec.layers.pop();
        assert!(spec.validate().is_err());
        // Dense before flatten.
        let spec = NetworkSpec {
            input: (1, 8, 8),
            layers: vec![LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            }],
            optimizer: Optimizer::Sgd { lr: 0.1 },
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn gradient_check_all_layer_types() {
        let spec = toy_spec(true);
        let (images, labels) = toy_images(6, 11);
        let err = nn_gradient_check(&spec, &images, &labels, 1e-5, 3).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_global_average_pool() {
        let spec = NetworkSpec {
            input: (1, 8, 8),
            layers: vec![
                LayerSpec::Conv2d {
                    filters: 2,
                    kernel: 3,
                    activation: Activation::Elu,
                },
                LayerSpec::GlobalAveragePool,
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                },
            ],
            optimizer: Optimizer::Sgd { lr: 0.1 },
        };
        let (images, labels) = toy_images(4, 12);
        let small: Vec<Array3<f64>> = images
            .iter()
            .map(|im| {
                Array3::from_shape_fn((1, 8, 8), |(c, y, x)| im[[c, y, x]])
            })
            .collect();
        let err = nn_gradient_check(&spec, &small, &labels, 1e-5, 5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let spec = toy_spec(false);
        let (images, labels) = toy_images(12, 13);
        let a = nn_train(&spec, &images, &labels, 2, 4, 9).unwrap();
        let b = nn_train(&spec, &images, &labels, 2, 4, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_learns_the_block_pattern() {
        let spec = toy_spec(false);
        let (images, labels) = toy_images(40, 14);
        let net = nn_train(&spec, &images, &labels, 18, 8, 2).unwrap();
        let scores = net.predict_images(&images).unwrap();
        let correct = scores
            .iter()
            .zip(&labels)
            .filter(|(&s, &l)| (s >= 0.5) == (l == 1))
            .count();
        assert!(correct >= 36, "{correct}/40 correct");
        for s in scores {
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn network_json_round_trip() {
        let spec = toy_spec(true);
        let (images, labels) = toy_images(8, 15);
        let net = nn_train(&spec, &images, &labels, 1, 4, 1).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: Network = serde_json::from_str(&json).unwrap();
        let a = net.predict_images(&images).unwrap();
        let b = back.predict_images(&images).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}
