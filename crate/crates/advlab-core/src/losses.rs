//! Training and attack objectives: cross-entropy, the original and rescaled
//! square losses, squentropy, label smoothing, logit penalty, logit
//! normalization, and the margin objective used by the CW-style attack.
//!
//! Every objective exposes its value and its exact gradient with respect to
//! the logits; model backprop composes these with the architecture chain.

use serde::{Deserialize, Serialize};

use crate::diffcore::Element;
use crate::error::{Error, Result};

/// Guard below which a logit vector is treated as zero by `LogitNorm`.
const ZERO_NORM_GUARD: f64 = 1e-12;

/// Objective selector. `Rsl { k, m }` rescales the true-class squared residual
/// by `k` against target magnitude `m`; see [`LossKind::value`] for the exact
/// forms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    /// Cross-entropy on softmax probabilities.
    Cel,
    /// Squared Euclidean distance between softmax output and the one-hot label.
    Osl,
    /// Rescaled square loss on raw logits: k*(f_y - m)^2 + sum_{j!=y} f_j^2.
    Rsl { k: f64, m: f64 },
    /// Cross-entropy plus lambda * sum of squared non-true logits.
    Squentropy { lambda: f64 },
    /// Cross-entropy against a label-smoothed target distribution.
    LabelSmooth { eps: f64 },
    /// Any base loss plus beta * squared L2 norm of the logits.
    LogitPenalty { base: Box<LossKind>, beta: f64 },
    /// Cross-entropy computed on logits scaled to unit L2 norm over tau.
    LogitNorm { tau: f64 },
    /// Untargeted margin max_{j!=y} f_j - f_y, maximized by the attacker.
    CwMargin,
}

impl LossKind {
    /// Check the documented parameter ranges.
    pub fn validate(&self) -> Result<()> {
        match self {
            LossKind::Rsl { k, m } => {
                if *k <= 0.0 || *m <= 0.0 {
                    return Err(Error::config(format!(
                        "rsl requires k > 0 and m > 0, got k={k}, m={m}"
                    )));
                }
            }
            LossKind::Squentropy { lambda } => {
                if *lambda < 0.0 {
                    return Err(Error::config(format!(
                        "squentropy requires lambda >= 0, got {lambda}"
                    )));
                }
            }
            LossKind::LabelSmooth { eps } => {
                if !(0.0..1.0).contains(eps) {
                    return Err(Error::config(format!(
                        "label_smooth requires 0 <= eps < 1, got {eps}"
                    )));
                }
            }
            LossKind::LogitPenalty { base, beta } => {
                if *beta < 0.0 {
                    return Err(Error::config(format!(
                        "logit_penalty requires beta >= 0, got {beta}"
                    )));
                }
                base.validate()?;
            }
            LossKind::LogitNorm { tau } => {
                if *tau <= 0.0 {
                    return Err(Error::config(format!(
                        "logit_norm requires tau > 0, got {tau}"
                    )));
                }
            }
            LossKind::Cel | LossKind::Osl | LossKind::CwMargin => {}
        }
        Ok(())
    }
}

/// A scalar objective over one sample's logits, differentiable in the logits.
pub trait LogitLoss<T: Element> {
    fn value(&self, logits: &[T], label: usize) -> T;
    /// d value / d logits, same length as `logits`.
    fn grad(&self, logits: &[T], label: usize) -> Vec<T>;
}

/// Numerically stabilized log(sum(exp(f))).
fn log_sum_exp<T: Element>(logits: &[T]) -> T {
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let sum = logits
        .iter()
        .fold(T::zero(), |acc, &f| acc + (f - max).exp());
    max + sum.ln()
}

/// Stabilized softmax.
pub fn softmax<T: Element>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&f| (f - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

fn cel_value<T: Element>(logits: &[T], label: usize) -> T {
    log_sum_exp(logits) - logits[label]
}

fn cel_grad<T: Element>(logits: &[T], label: usize) -> Vec<T> {
    let mut g = softmax(logits);
    g[label] = g[label] - T::one();
    g
}

fn osl_value<T: Element>(logits: &[T], label: usize) -> T {
    softmax(logits)
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (j, &p)| {
            let d = if j == label { p - T::one() } else { p };
            acc + d * d
        })
}

fn osl_value_grad<T: Element>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let p = softmax(logits);
    let d: Vec<T> = p
        .iter()
        .enumerate()
        .map(|(j, &pj)| if j == label { pj - T::one() } else { pj })
        .collect();
    let value = d.iter().fold(T::zero(), |a, &x| a + x * x);
    // d/df_j ||p - y||^2 = 2 p_j (d_j - sum_i d_i p_i)
    let s = d
        .iter()
        .zip(&p)
        .fold(T::zero(), |a, (&di, &pi)| a + di * pi);
    let two = T::from_f64(2.0);
    let grad = p.iter().zip(&d).map(|(&pj, &dj)| two * pj * (dj - s)).collect();
    (value, grad)
}

fn rsl_value<T: Element>(logits: &[T], label: usize, k: f64, m: f64) -> T {
    let k = T::from_f64(k);
    let m = T::from_f64(m);
    logits.iter().enumerate().fold(T::zero(), |acc, (j, &f)| {
        if j == label {
            let r = f - m;
            acc + k * r * r
        } else {
            acc + f * f
        }
    })
}

fn rsl_grad<T: Element>(logits: &[T], label: usize, k: f64, m: f64) -> Vec<T> {
    let k = T::from_f64(k);
    let m = T::from_f64(m);
    let two = T::from_f64(2.0);
    logits
        .iter()
        .enumerate()
        .map(|(j, &f)| {
            if j == label {
                two * k * (f - m)
            } else {
                two * f
            }
        })
        .collect()
}

fn label_smooth_value<T: Element>(logits: &[T], label: usize, eps: f64) -> T {
    // Cross-entropy against (1-eps)*onehot + eps/C * ones.
    let c = T::from_f64(logits.len() as f64);
    let eps = T::from_f64(eps);
    let lse = log_sum_exp(logits);
    let uniform = logits.iter().fold(T::zero(), |a, &f| a + f) / c;
    let target_dot = (T::one() - eps) * logits[label] + eps * uniform;
    lse - target_dot
}

fn label_smooth_grad<T: Element>(logits: &[T], label: usize, eps: f64) -> Vec<T> {
    let c = T::from_f64(logits.len() as f64);
    let eps = T::from_f64(eps);
    let p = softmax(logits);
    p.iter()
        .enumerate()
        .map(|(j, &pj)| {
            let t = if j == label {
                T::one() - eps + eps / c
            } else {
                eps / c
            };
            pj - t
        })
        .collect()
}

fn sq_norm<T: Element>(logits: &[T]) -> T {
    logits.iter().fold(T::zero(), |a, &f| a + f * f)
}

fn logit_norm_value<T: Element>(logits: &[T], label: usize, tau: f64) -> T {
    let n = sq_norm(logits).sqrt();
    if n.to_f64() < ZERO_NORM_GUARD {
        return T::from_f64((logits.len() as f64).ln());
    }
    let tau = T::from_f64(tau);
    let scaled: Vec<T> = logits.iter().map(|&f| f / (tau * n)).collect();
    cel_value(&scaled, label)
}

fn logit_norm_grad<T: Element>(logits: &[T], label: usize, tau: f64) -> Vec<T> {
    let n2 = sq_norm(logits);
    let n = n2.sqrt();
    if n.to_f64() < ZERO_NORM_GUARD {
        return vec![T::zero(); logits.len()];
    }
    let tau = T::from_f64(tau);
    let scaled: Vec<T> = logits.iter().map(|&f| f / (tau * n)).collect();
    let gu = cel_grad(&scaled, label);
    // Chain rule through f / (tau * ||f||): subtract the radial component.
    let dot = logits
        .iter()
        .zip(&gu)
        .fold(T::zero(), |a, (&f, &g)| a + f * g);
    logits
        .iter()
        .zip(&gu)
        .map(|(&f, &g)| (g - f * dot / n2) / (tau * n))
        .collect()
}

/// Index of the largest non-true logit, first index winning ties.
fn cw_runner_up<T: Element>(logits: &[T], label: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_val = T::neg_infinity();
    for (j, &f) in logits.iter().enumerate() {
        if j != label && f > best_val {
            best = j;
            best_val = f;
        }
    }
    best
}

impl<T: Element> LogitLoss<T> for LossKind {
    fn value(&self, logits: &[T], label: usize) -> T {
        match self {
            LossKind::Cel => cel_value(logits, label),
            LossKind::Osl => osl_value(logits, label),
            LossKind::Rsl { k, m } => rsl_value(logits, label, *k, *m),
            LossKind::Squentropy { lambda } => {
                let side = logits.iter().enumerate().fold(T::zero(), |acc, (j, &f)| {
                    if j == label {
                        acc
                    } else {
                        acc + f * f
                    }
                });
                cel_value(logits, label) + T::from_f64(*lambda) * side
            }
            LossKind::LabelSmooth { eps } => label_smooth_value(logits, label, *eps),
            LossKind::LogitPenalty { base, beta } => {
                base.value(logits, label) + T::from_f64(*beta) * sq_norm(logits)
            }
            LossKind::LogitNorm { tau } => logit_norm_value(logits, label, *tau),
            LossKind::CwMargin => logits[cw_runner_up(logits, label)] - logits[label],
        }
    }

    fn grad(&self, logits: &[T], label: usize) -> Vec<T> {
        match self {
            LossKind::Cel => cel_grad(logits, label),
            LossKind::Osl => osl_value_grad(logits, label).1,
            LossKind::Rsl { k, m } => rsl_grad(logits, label, *k, *m),
            LossKind::Squentropy { lambda } => {
                let two_lambda = T::from_f64(2.0 * *lambda);
                let mut g = cel_grad(logits, label);
                for (j, (gj, &f)) in g.iter_mut().zip(logits).enumerate() {
                    if j != label {
                        *gj = *gj + two_lambda * f;
                    }
                }
                g
            }
            LossKind::LabelSmooth { eps } => label_smooth_grad(logits, label, *eps),
            LossKind::LogitPenalty { base, beta } => {
                let two_beta = T::from_f64(2.0 * *beta);
                let mut g = base.grad(logits, label);
                for (gj, &f) in g.iter_mut().zip(logits) {
                    *gj = *gj + two_beta * f;
                }
                g
            }
            LossKind::LogitNorm { tau } => logit_norm_grad(logits, label, *tau),
            LossKind::CwMargin => {
                let mut g = vec![T::zero(); logits.len()];
                g[cw_runner_up(logits, label)] = T::one();
                g[label] = -T::one();
                g
            }
        }
    }
}
