//! The two fixed toy architectures and their forward pass.
//!
//! Parameter shapes are a pure function of the [`Architecture`] value, so a
//! checkpoint can be validated against its declared architecture before any
//! tensor data is read.

use serde::{Deserialize, Serialize};

use crate::diffcore::tensor::{Element, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, SALT_MODEL_INIT};

/// Width of both MLP hidden layers.
pub const MLP_HIDDEN: usize = 64;
/// Channels out of the first and second convolution.
pub const CONV1_CHANNELS: usize = 16;
pub const CONV2_CHANNELS: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum Architecture {
    /// Fully connected input_dim -> 64 -> 64 -> classes with ReLU between.
    Mlp { input_dim: usize, classes: usize },
    /// 3x3 conv (pad 1) -> ReLU -> 2x2 maxpool, twice, then a dense head.
    /// Spatial input size is part of the architecture because the dense
    /// head's shape depends on it.
    SmallConvNet {
        in_channels: usize,
        height: usize,
        width: usize,
        classes: usize,
    },
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Architecture::Mlp { input_dim, classes } => {
                if input_dim == 0 {
                    return Err(Error::config("mlp input_dim must be positive"));
                }
                if classes < 2 {
                    return Err(Error::config("mlp needs at least 2 classes"));
                }
            }
            Architecture::SmallConvNet {
                in_channels,
                height,
                width,
                classes,
            } => {
                if in_channels == 0 {
                    return Err(Error::config("small_conv_net in_channels must be positive"));
                }
                if height < 4 || width < 4 {
                    return Err(Error::config(format!(
                        "small_conv_net needs height and width >= 4 to survive two 2x2 pools, got {height}x{width}"
                    )));
                }
                if classes < 2 {
                    return Err(Error::config("small_conv_net needs at least 2 classes"));
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        match *self {
            Architecture::Mlp { classes, .. } => classes,
            Architecture::SmallConvNet { classes, .. } => classes,
        }
    }

    /// Flat input dimension (product of the per-sample input shape).
    pub fn input_len(&self) -> usize {
        match *self {
            Architecture::Mlp { input_dim, .. } => input_dim,
            Architecture::SmallConvNet {
                in_channels,
                height,
                width,
                ..
            } => in_channels * height * width,
        }
    }

    /// Spatial sizes after each pool for the conv net.
    pub(crate) fn pooled_dims(&self) -> Option<(usize, usize, usize, usize)> {
        match *self {
            Architecture::SmallConvNet { height, width, .. } => {
                let (h1, w1) = (height / 2, width / 2);
                Some((h1, w1, h1 / 2, w1 / 2))
            }
            _ => None,
        }
    }

    /// Parameter names, shapes, and the fan-in governing their init bound,
    /// in storage order.
    pub fn param_specs(&self) -> Vec<(&'static str, Vec<usize>, usize)> {
        match *self {
            Architecture::Mlp { input_dim, classes } => vec![
                ("fc1.weight", vec![MLP_HIDDEN, input_dim], input_dim),
                ("fc1.bias", vec![MLP_HIDDEN], input_dim),
                ("fc2.weight", vec![MLP_HIDDEN, MLP_HIDDEN], MLP_HIDDEN),
                ("fc2.bias", vec![MLP_HIDDEN], MLP_HIDDEN),
                ("fc3.weight", vec![classes, MLP_HIDDEN], MLP_HIDDEN),
                ("fc3.bias", vec![classes], MLP_HIDDEN),
            ],
            Architecture::SmallConvNet {
                in_channels,
                classes,
                ..
            } => {
                let (_, _, h2, w2) = self.pooled_dims().unwrap();
                let flat = CONV2_CHANNELS * h2 * w2;
                vec![
                    (
                        "conv1.weight",
                        vec![CONV1_CHANNELS, in_channels, 3, 3],
                        in_channels * 9,
                    ),
                    ("conv1.bias", vec![CONV1_CHANNELS], in_channels * 9),
                    (
                        "conv2.weight",
                        vec![CONV2_CHANNELS, CONV1_CHANNELS, 3, 3],
                        CONV1_CHANNELS * 9,
                    ),
                    ("conv2.bias", vec![CONV2_CHANNELS], CONV1_CHANNELS * 9),
                    ("fc.weight", vec![classes, flat], flat),
                    ("fc.bias", vec![classes], flat),
                ]
            }
        }
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        self.param_specs().into_iter().map(|(n, _, _)| n).collect()
    }
}

/// A concrete network: architecture tag plus parameter tensors in the order
/// given by [`Architecture::param_specs`]. `eval_mode` is carried through
/// checkpoints; neither architecture contains a layer that behaves
/// differently between modes.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Element> {
    pub arch: Architecture,
    pub params: Vec<Tensor<T>>,
    pub eval_mode: bool,
}

impl<T: Element> Model<T> {
    /// Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; each
    /// parameter tensor draws from its own derived stream so the values do
    /// not depend on fill order elsewhere.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = Vec::new();
        for (index, (_, shape, fan_in)) in arch.param_specs().into_iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut stream = rng::stream(seed, &[SALT_MODEL_INIT, index as u64]);
            let n: usize = shape.iter().product();
            let data: Vec<T> = (0..n)
                .map(|_| T::from_f64(rng::uniform_in(&mut stream, -bound, bound)))
                .collect();
            params.push(Tensor::new(shape, data)?);
        }
        Ok(Model {
            arch,
            params,
            eval_mode: false,
        })
    }

    /// All-zero parameters, mostly for tests that hand-set weights.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let params = arch
            .param_specs()
            .into_iter()
            .map(|(_, shape, _)| Tensor::zeros(shape))
            .collect();
        Ok(Model {
            arch,
            params,
            eval_mode: false,
        })
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        self.arch.param_names()
    }

    /// Check that `params` matches the shapes the architecture dictates.
    pub fn check_shapes(&self) -> Result<()> {
        let specs = self.arch.param_specs();
        if specs.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                context: "model parameter count".into(),
                expected: format!("{}", specs.len()),
                actual: format!("{}", self.params.len()),
            });
        }
        for ((name, shape, _), tensor) in specs.iter().zip(&self.params) {
            if tensor.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    context: format!("parameter {name}"),
                    expected: format!("{shape:?}"),
                    actual: format!("{:?}", tensor.shape()),
                });
            }
        }
        Ok(())
    }

    /// Logits for a batch. MLP accepts `[batch, input_dim]` or any
    /// `[batch, ...]` whose trailing dims multiply to `input_dim`; the conv
    /// net requires `[batch, in_channels, height, width]`.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_trace(batch)?.into_logits())
    }

    /// Forward pass keeping every intermediate needed by backprop.
    pub(crate) fn forward_trace(&self, batch: &Tensor<T>) -> Result<Trace<T>> {
        self.check_shapes()?;
        let n = self.batch_size(batch)?;
        match self.arch {
            Architecture::Mlp { input_dim, .. } => {
                let x = Tensor::new(
                    vec![n, input_dim],
                    batch.data().to_vec(),
                )?;
                let h1_pre = dense_forward(&x, &self.params[0], &self.params[1]);
                let h1 = relu(&h1_pre);
                let h2_pre = dense_forward(&h1, &self.params[2], &self.params[3]);
                let h2 = relu(&h2_pre);
                let logits = dense_forward(&h2, &self.params[4], &self.params[5]);
                Ok(Trace::Mlp {
                    x,
                    h1_pre,
                    h1,
                    h2_pre,
                    h2,
                    logits,
                })
            }
            Architecture::SmallConvNet { .. } => {
                let c1_pre = conv3x3_forward(batch, &self.params[0], &self.params[1]);
                let c1 = relu(&c1_pre);
                let (p1, p1_src) = maxpool2_forward(&c1);
                let c2_pre = conv3x3_forward(&p1, &self.params[2], &self.params[3]);
                let c2 = relu(&c2_pre);
                let (p2, p2_src) = maxpool2_forward(&c2);
                let flat = Tensor::new(vec![n, p2.len() / n], p2.data().to_vec())?;
                let logits = dense_forward(&flat, &self.params[4], &self.params[5]);
                Ok(Trace::Conv {
                    c1_pre,
                    p1,
                    p1_src,
                    c2_pre,
                    p2_src,
                    flat,
                    logits,
                })
            }
        }
    }

    /// Validate the batch shape against the architecture and return the
    /// batch size.
    pub fn batch_size(&self, batch: &Tensor<T>) -> Result<usize> {
        let shape = batch.shape();
        if shape.is_empty() || shape[0] == 0 {
            return Err(Error::ShapeMismatch {
                context: "forward input".into(),
                expected: "non-empty batch dimension".into(),
                actual: format!("{shape:?}"),
            });
        }
        let per_sample: usize = shape[1..].iter().product();
        match self.arch {
            Architecture::Mlp { input_dim, .. } => {
                if per_sample != input_dim {
                    return Err(Error::ShapeMismatch {
                        context: "mlp forward input".into(),
                        expected: format!("[batch, {input_dim}] (possibly factored)"),
                        actual: format!("{shape:?}"),
                    });
                }
            }
            Architecture::SmallConvNet {
                in_channels,
                height,
                width,
                ..
            } => {
                if shape.len() != 4
                    || shape[1] != in_channels
                    || shape[2] != height
                    || shape[3] != width
                {
                    return Err(Error::ShapeMismatch {
                        context: "small_conv_net forward input".into(),
                        expected: format!("[batch, {in_channels}, {height}, {width}]"),
                        actual: format!("{shape:?}"),
                    });
                }
            }
        }
        Ok(shape[0])
    }
}

/// Intermediates captured by the forward pass, consumed by backprop.
pub(crate) enum Trace<T: Element> {
    Mlp {
        x: Tensor<T>,
        h1_pre: Tensor<T>,
        h1: Tensor<T>,
        h2_pre: Tensor<T>,
        h2: Tensor<T>,
        logits: Tensor<T>,
    },
    Conv {
        c1_pre: Tensor<T>,
        p1: Tensor<T>,
        p1_src: Vec<usize>,
        c2_pre: Tensor<T>,
        p2_src: Vec<usize>,
        flat: Tensor<T>,
        logits: Tensor<T>,
    },
}

impl<T: Element> Trace<T> {
    pub(crate) fn logits(&self) -> &Tensor<T> {
        match self {
            Trace::Mlp { logits, .. } => logits,
            Trace::Conv { logits, .. } => logits,
        }
    }

    pub(crate) fn into_logits(self) -> Tensor<T> {
        match self {
            Trace::Mlp { logits, .. } => logits,
            Trace::Conv { logits, .. } => logits,
        }
    }
}

// Layer kernels. All are plain loops over row-major buffers; shapes are
// trusted here because the callers validate them.

/// y = x W^T + b for x [n, in], w [out, in], b [out].
pub(crate) fn dense_forward<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let n = x.shape()[0];
    let in_dim = x.shape()[1];
    let out_dim = w.shape()[0];
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let mut out = vec![T::zero(); n * out_dim];
    for i in 0..n {
        let xr = &xd[i * in_dim..(i + 1) * in_dim];
        for o in 0..out_dim {
            let wr = &wd[o * in_dim..(o + 1) * in_dim];
            let mut acc = bd[o];
            for k in 0..in_dim {
                acc = acc + xr[k] * wr[k];
            }
            out[i * out_dim + o] = acc;
        }
    }
    Tensor::new(vec![n, out_dim], out).unwrap()
}

pub(crate) fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// 3x3 convolution, stride 1, zero padding 1; output spatial size equals
/// input spatial size.
pub(crate) fn conv3x3_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Tensor<T> {
    let (n, cin, h, wd_) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let cout = w.shape()[0];
    let xd = x.data();
    let wv = w.data();
    let bv = b.data();
    let mut out = vec![T::zero(); n * cout * h * wd_];
    for i in 0..n {
        for co in 0..cout {
            let bias = bv[co];
            for r in 0..h {
                for c in 0..wd_ {
                    let mut acc = bias;
                    for ci in 0..cin {
                        let xbase = ((i * cin + ci) * h) * wd_;
                        let wbase = ((co * cin + ci) * 3) * 3;
                        for kr in 0..3usize {
                            let rr = (r + kr).wrapping_sub(1);
                            if rr >= h {
                                continue;
                            }
                            for kc in 0..3usize {
                                let cc = (c + kc).wrapping_sub(1);
                                if cc >= wd_ {
                                    continue;
                                }
                                acc = acc
                                    + xd[xbase + rr * wd_ + cc] * wv[wbase + kr * 3 + kc];
                            }
                        }
                    }
                    out[((i * cout + co) * h + r) * wd_ + c] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, h, wd_], out).unwrap()
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
/// Also returns, per output element, the flat index of the winning input
/// element; ties go to the first cell in row-major window order.
pub(crate) fn maxpool2_forward<T: Element>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    let mut src = vec![0usize; n * c * oh * ow];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            for r in 0..oh {
                for col in 0..ow {
                    let mut best_ix = base + (2 * r) * w + 2 * col;
                    let mut best = xd[best_ix];
                    for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                        let ix = base + (2 * r + dr) * w + 2 * col + dc;
                        if xd[ix] > best {
                            best = xd[ix];
                            best_ix = ix;
                        }
                    }
                    let o = ((i * c + ch) * oh + r) * ow + col;
                    out[o] = best;
                    src[o] = best_ix;
                }
            }
        }
    }
    (Tensor::new(vec![n, c, oh, ow], out).unwrap(), src)
}
