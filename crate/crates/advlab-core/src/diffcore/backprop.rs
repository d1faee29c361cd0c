//! Reverse-mode gradients for the two fixed architectures, plus the
//! finite-difference oracle used to check them.

use crate::diffcore::model::{Model, Trace};
use crate::diffcore::tensor::{Element, Tensor};
use crate::error::{Error, Result};
use crate::losses::LogitLoss;

/// Gradients of the mean-over-batch loss.
#[derive(Clone, Debug)]
pub struct GradientResult<T: Element> {
    pub loss_value: T,
    /// Same order as `model.params`; names via `model.param_names()`.
    pub param_grads: Vec<Tensor<T>>,
    /// Present iff requested.
    pub input_grad: Option<Tensor<T>>,
}

fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::ShapeMismatch {
            context: "labels".into(),
            expected: format!("{batch}"),
            actual: format!("{}", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::config(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Loss of each sample in the batch under the current parameters.
pub fn per_sample_losses<T: Element>(
    model: &Model<T>,
    loss: &dyn LogitLoss<T>,
    batch: &Tensor<T>,
    labels: &[usize],
) -> Result<Vec<T>> {
    let logits = model.forward(batch)?;
    let classes = model.arch.classes();
    check_labels(labels, logits.shape()[0], classes)?;
    let mut out = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * classes..(i + 1) * classes];
        let v = loss.value(row, label);
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { sample: i });
        }
        out.push(v);
    }
    Ok(out)
}

/// Exact reverse-mode gradients of mean(loss) over the batch, with respect
/// to every parameter and, when `want_input_grad`, the input batch.
pub fn backward<T: Element>(
    model: &Model<T>,
    loss: &dyn LogitLoss<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    want_input_grad: bool,
) -> Result<GradientResult<T>> {
    let trace = model.forward_trace(batch)?;
    let logits = trace.logits();
    let n = logits.shape()[0];
    let classes = logits.shape()[1];
    check_labels(labels, n, classes)?;

    let inv_n = T::from_f64(1.0 / n as f64);
    let mut loss_sum = T::zero();
    let mut dlogits = vec![T::zero(); n * classes];
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * classes..(i + 1) * classes];
        let v = loss.value(row, label);
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { sample: i });
        }
        loss_sum = loss_sum + v;
        let g = loss.grad(row, label);
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { sample: i });
        }
        for (j, gj) in g.into_iter().enumerate() {
            dlogits[i * classes + j] = gj * inv_n;
        }
    }
    let dlogits = Tensor::new(vec![n, classes], dlogits)?;
    let loss_value = loss_sum * inv_n;

    match trace {
        Trace::Mlp {
            x,
            h1_pre,
            h1,
            h2_pre,
            h2,
            ..
        } => {
            let (dw3, db3, dh2) = dense_backward(&dlogits, &h2, &model.params[4], true);
            let dh2_pre = relu_backward(&dh2.unwrap(), &h2_pre);
            let (dw2, db2, dh1) = dense_backward(&dh2_pre, &h1, &model.params[2], true);
            let dh1_pre = relu_backward(&dh1.unwrap(), &h1_pre);
            let (dw1, db1, dx) = dense_backward(&dh1_pre, &x, &model.params[0], want_input_grad);
            let input_grad = match dx {
                Some(g) => Some(g.reshape(batch.shape().to_vec())?),
                None => None,
            };
            Ok(GradientResult {
                loss_value,
                param_grads: vec![dw1, db1, dw2, db2, dw3, db3],
                input_grad,
            })
        }
        Trace::Conv {
            c1_pre,
            p1,
            p1_src,
            c2_pre,
            p2_src,
            flat,
            ..
        } => {
            let (dwf, dbf, dflat) = dense_backward(&dlogits, &flat, &model.params[4], true);
            let dp2 = dflat.unwrap().reshape({
                let (_, _, h2, w2) = model.arch.pooled_dims().unwrap();
                vec![n, c2_pre.shape()[1], h2, w2]
            })?;
            let dc2 = maxpool2_backward(&dp2, &p2_src, c2_pre.shape().to_vec());
            let dc2_pre = relu_backward(&dc2, &c2_pre);
            let (dwc2, dbc2, dp1) = conv3x3_backward(&dc2_pre, &p1, &model.params[2], true);
            let dc1 = maxpool2_backward(&dp1.unwrap(), &p1_src, c1_pre.shape().to_vec());
            let dc1_pre = relu_backward(&dc1, &c1_pre);
            let (dwc1, dbc1, dx) =
                conv3x3_backward(&dc1_pre, batch, &model.params[0], want_input_grad);
            Ok(GradientResult {
                loss_value,
                param_grads: vec![dwc1, dbc1, dwc2, dbc2, dwf, dbf],
                input_grad: dx,
            })
        }
    }
}

/// Central-difference gradient oracle: (L(w+h) - L(w-h)) / 2h for every
/// parameter coordinate and every input coordinate. Meant for 64-bit
/// elements; the returned `input_grad` is always present.
pub fn finite_difference_gradient<T: Element>(
    model: &Model<T>,
    loss: &dyn LogitLoss<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    h: f64,
) -> Result<GradientResult<T>> {
    if h <= 0.0 {
        return Err(Error::config(format!("finite difference step must be positive, got {h}")));
    }
    let step = T::from_f64(h);
    let two_h = T::from_f64(2.0 * h);
    let mean = |m: &Model<T>, b: &Tensor<T>| -> Result<T> {
        let vals = per_sample_losses(m, loss, b, labels)?;
        let sum = vals.iter().fold(T::zero(), |a, &v| a + v);
        Ok(sum / T::from_f64(vals.len() as f64))
    };

    let loss_value = mean(model, batch)?;
    let mut work = model.clone();
    let mut param_grads = Vec::with_capacity(model.params.len());
    for p in 0..model.params.len() {
        let shape = model.params[p].shape().to_vec();
        let mut grad = vec![T::zero(); model.params[p].len()];
        for j in 0..grad.len() {
            let orig = work.params[p].data()[j];
            work.params[p].data_mut()[j] = orig + step;
            let up = mean(&work, batch)?;
            work.params[p].data_mut()[j] = orig - step;
            let dn = mean(&work, batch)?;
            work.params[p].data_mut()[j] = orig;
            grad[j] = (up - dn) / two_h;
        }
        param_grads.push(Tensor::new(shape, grad)?);
    }

    let mut input = batch.clone();
    let mut igrad = vec![T::zero(); batch.len()];
    for j in 0..igrad.len() {
        let orig = input.data()[j];
        input.data_mut()[j] = orig + step;
        let up = mean(model, &input)?;
        input.data_mut()[j] = orig - step;
        let dn = mean(model, &input)?;
        input.data_mut()[j] = orig;
        igrad[j] = (up - dn) / two_h;
    }

    Ok(GradientResult {
        loss_value,
        param_grads,
        input_grad: Some(Tensor::new(batch.shape().to_vec(), igrad)?),
    })
}

/// Worst discrepancy between two gradient sets, for gradcheck assertions:
/// coordinates closer than 1e-9 in absolute terms count as zero, everything
/// else contributes its relative error.
pub fn max_gradient_discrepancy(a: &GradientResult<f64>, b: &GradientResult<f64>) -> f64 {
    fn discrepancy(x: f64, y: f64) -> f64 {
        let d = (x - y).abs();
        if d < 1e-9 {
            0.0
        } else {
            d / x.abs().max(y.abs())
        }
    }
    let mut worst = 0.0f64;
    for (ga, gb) in a.param_grads.iter().zip(&b.param_grads) {
        for (&x, &y) in ga.data().iter().zip(gb.data()) {
            worst = worst.max(discrepancy(x, y));
        }
    }
    if let (Some(ia), Some(ib)) = (&a.input_grad, &b.input_grad) {
        for (&x, &y) in ia.data().iter().zip(ib.data()) {
            worst = worst.max(discrepancy(x, y));
        }
    }
    worst
}

/// Backward of `dense_forward`: given dL/dy, the layer input, and the weight,
/// produce (dL/dW, dL/db, optionally dL/dx).
pub(crate) fn dense_backward<T: Element>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    want_dx: bool,
) -> (Tensor<T>, Tensor<T>, Option<Tensor<T>>) {
    let n = dy.shape()[0];
    let out_dim = dy.shape()[1];
    let in_dim = x.shape()[1];
    let dyd = dy.data();
    let xd = x.data();
    let wd = w.data();

    let mut dw = vec![T::zero(); out_dim * in_dim];
    let mut db = vec![T::zero(); out_dim];
    for i in 0..n {
        for o in 0..out_dim {
            let g = dyd[i * out_dim + o];
            db[o] = db[o] + g;
            let row = &mut dw[o * in_dim..(o + 1) * in_dim];
            let xr = &xd[i * in_dim..(i + 1) * in_dim];
            for k in 0..in_dim {
                row[k] = row[k] + g * xr[k];
            }
        }
    }
    let dx = want_dx.then(|| {
        let mut dx = vec![T::zero(); n * in_dim];
        for i in 0..n {
            for o in 0..out_dim {
                let g = dyd[i * out_dim + o];
                let wr = &wd[o * in_dim..(o + 1) * in_dim];
                let row = &mut dx[i * in_dim..(i + 1) * in_dim];
                for k in 0..in_dim {
                    row[k] = row[k] + g * wr[k];
                }
            }
        }
        Tensor::new(vec![n, in_dim], dx).unwrap()
    });
    (
        Tensor::new(vec![out_dim, in_dim], dw).unwrap(),
        Tensor::new(vec![out_dim], db).unwrap(),
        dx,
    )
}

/// dL/dx for y = relu(pre): pass gradient where pre > 0, zero elsewhere
/// (the subgradient at exactly 0 is taken to be 0).
pub(crate) fn relu_backward<T: Element>(dy: &Tensor<T>, pre: &Tensor<T>) -> Tensor<T> {
    let data = dy
        .data()
        .iter()
        .zip(pre.data())
        .map(|(&g, &p)| if p > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(dy.shape().to_vec(), data).unwrap()
}

/// Backward of `conv3x3_forward` (stride 1, pad 1).
pub(crate) fn conv3x3_backward<T: Element>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    want_dx: bool,
) -> (Tensor<T>, Tensor<T>, Option<Tensor<T>>) {
    let (n, cin, h, wd_) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let cout = w.shape()[0];
    let dyd = dy.data();
    let xd = x.data();
    let wv = w.data();

    let mut dw = vec![T::zero(); cout * cin * 9];
    let mut db = vec![T::zero(); cout];
    let mut dx = vec![T::zero(); if want_dx { n * cin * h * wd_ } else { 0 }];
    for i in 0..n {
        for co in 0..cout {
            for r in 0..h {
                for c in 0..wd_ {
                    let g = dyd[((i * cout + co) * h + r) * wd_ + c];
                    db[co] = db[co] + g;
                    for ci in 0..cin {
                        let xbase = (i * cin + ci) * h * wd_;
                        let wbase = (co * cin + ci) * 9;
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
                                let xi = xbase + rr * wd_ + cc;
                                dw[wbase + kr * 3 + kc] =
                                    dw[wbase + kr * 3 + kc] + g * xd[xi];
                                if want_dx {
                                    dx[xi] = dx[xi] + g * wv[wbase + kr * 3 + kc];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(vec![cout, cin, 3, 3], dw).unwrap(),
        Tensor::new(vec![cout], db).unwrap(),
        want_dx.then(|| Tensor::new(vec![n, cin, h, wd_], dx).unwrap()),
    )
}

/// Backward of `maxpool2_forward`: route each output gradient to the input
/// element that won the window.
pub(crate) fn maxpool2_backward<T: Element>(
    dy: &Tensor<T>,
    src: &[usize],
    input_shape: Vec<usize>,
) -> Tensor<T> {
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    for (g, &ix) in dy.data().iter().zip(src) {
        dx[ix] = dx[ix] + *g;
    }
    Tensor::new(input_shape, dx).unwrap()
}

/// Row-wise argmax of a [n, c] tensor, first index winning ties.
pub fn argmax_rows<T: Element>(logits: &Tensor<T>) -> Vec<usize> {
    let n = logits.shape()[0];
    let c = logits.shape()[1];
    let d = logits.data();
    (0..n)
        .map(|i| {
            let row = &d[i * c..(i + 1) * c];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
