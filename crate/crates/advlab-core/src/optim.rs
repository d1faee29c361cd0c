//! SGD with momentum and decoupled-free weight decay, the three learning
//! rate schedules, and the exponential weight averager used for evaluation.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Element, Model, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    5e-4
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::config(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState<T: Element> {
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Element> SgdState<T> {
    pub fn zeros_like(params: &[Tensor<T>]) -> Self {
        SgdState {
            velocity: params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
        }
    }
}

/// One SGD update: g' = g + weight_decay*w, v = momentum*v + g',
/// w = w - lr*v. Rejects non-finite gradients or updates.
pub fn sgd_step<T: Element>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut SgdState<T>,
    cfg: &SgdConfig,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::ShapeMismatch {
            context: "sgd_step tensor lists".into(),
            expected: format!("{} tensors", params.len()),
            actual: format!("{} grads, {} velocities", grads.len(), state.velocity.len()),
        });
    }
    let momentum = T::from_f64(cfg.momentum);
    let wd = T::from_f64(cfg.weight_decay);
    let lr_t = T::from_f64(lr);
    for (ix, ((p, g), v)) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.velocity)
        .enumerate()
    {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                context: format!("sgd_step param {ix}"),
                expected: format!("{:?}", p.shape()),
                actual: format!("{:?}", g.shape()),
            });
        }
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteUpdate {
                param: format!("param {ix}"),
            });
        }
        let pd = p.data_mut();
        let vd = v.data_mut();
        for k in 0..pd.len() {
            let g_eff = g.data()[k] + wd * pd[k];
            vd[k] = momentum * vd[k] + g_eff;
            pd[k] = pd[k] - lr_t * vd[k];
            if !pd[k].is_finite() {
                return Err(Error::NonFiniteUpdate {
                    param: format!("param {ix}"),
                });
            }
        }
    }
    Ok(())
}

/// Learning-rate schedule over training, evaluated at a (possibly
/// fractional) epoch index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Constant base_lr divided by `factor` at each epoch in `drop_epochs`.
    Piecewise {
        base_lr: f64,
        #[serde(default = "default_drop_epochs")]
        drop_epochs: Vec<usize>,
        #[serde(default = "default_drop_factor")]
        factor: f64,
    },
    /// Linear ramp 0 -> max_lr peaking at `peak_fraction` of
    /// `total_epochs`, then linear back down to 0.
    OneCycle {
        #[serde(default = "default_max_lr")]
        max_lr: f64,
        total_epochs: usize,
        #[serde(default = "default_peak_fraction")]
        peak_fraction: f64,
    },
    /// Half-cosine from max_lr down to 0 over total_epochs.
    Cosine { max_lr: f64, total_epochs: usize },
}

fn default_drop_epochs() -> Vec<usize> {
    vec![100, 150]
}

fn default_drop_factor() -> f64 {
    10.0
}

fn default_max_lr() -> f64 {
    0.2
}

fn default_peak_fraction() -> f64 {
    0.5
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::Piecewise {
                base_lr,
                drop_epochs,
                factor,
            } => {
                if *base_lr <= 0.0 {
                    return Err(Error::config(format!("base_lr must be positive, got {base_lr}")));
                }
                if *factor <= 1.0 {
                    return Err(Error::config(format!(
                        "piecewise factor must exceed 1, got {factor}"
                    )));
                }
                if drop_epochs.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config(
                        "piecewise drop_epochs must be strictly increasing",
                    ));
                }
            }
            Schedule::OneCycle {
                max_lr,
                total_epochs,
                peak_fraction,
            } => {
                if *max_lr <= 0.0 || *total_epochs == 0 {
                    return Err(Error::config(
                        "one_cycle needs max_lr > 0 and total_epochs > 0",
                    ));
                }
                if !(*peak_fraction > 0.0 && *peak_fraction < 1.0) {
                    return Err(Error::config(format!(
                        "one_cycle peak_fraction must be inside (0, 1), got {peak_fraction}"
                    )));
                }
            }
            Schedule::Cosine {
                max_lr,
                total_epochs,
            } => {
                if *max_lr <= 0.0 || *total_epochs == 0 {
                    return Err(Error::config("cosine needs max_lr > 0 and total_epochs > 0"));
                }
            }
        }
        Ok(())
    }

    /// Learning rate at a fractional epoch index. Piecewise changes only at
    /// whole epochs; the cyclic and cosine shapes are smooth in the
    /// fraction.
    pub fn lr_at(&self, epoch_progress: f64) -> f64 {
        match self {
            Schedule::Piecewise {
                base_lr,
                drop_epochs,
                factor,
            } => {
                let epoch = epoch_progress.floor() as usize;
                let drops = drop_epochs.iter().filter(|&&d| epoch >= d).count();
                base_lr / factor.powi(drops as i32)
            }
            Schedule::OneCycle {
                max_lr,
                total_epochs,
                peak_fraction,
            } => {
                let t = (epoch_progress / *total_epochs as f64).clamp(0.0, 1.0);
                if t <= *peak_fraction {
                    max_lr * t / peak_fraction
                } else {
                    max_lr * (1.0 - t) / (1.0 - peak_fraction)
                }
            }
            Schedule::Cosine {
                max_lr,
                total_epochs,
            } => {
                let t = (epoch_progress / *total_epochs as f64).clamp(0.0, 1.0);
                max_lr * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
            }
        }
    }
}

/// Exponential moving average of the parameters, kept apart from the live
/// weights so evaluation can use the average while training continues.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightAverager<T: Element> {
    pub averaged: Vec<Tensor<T>>,
    pub decay: f64,
    pub start_epoch: usize,
}

impl<T: Element> WeightAverager<T> {
    /// Seed the average with the current parameters.
    pub fn new(params: &[Tensor<T>], decay: f64, start_epoch: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::config(format!(
                "weight averaging decay must be in [0, 1), got {decay}"
            )));
        }
        Ok(WeightAverager {
            averaged: params.to_vec(),
            decay,
            start_epoch,
        })
    }

    /// avg = decay*avg + (1-decay)*current. Never touches `params`.
    pub fn update(&mut self, params: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.averaged.len() {
            return Err(Error::ShapeMismatch {
                context: "weight averager".into(),
                expected: format!("{} tensors", self.averaged.len()),
                actual: format!("{} tensors", params.len()),
            });
        }
        let decay = T::from_f64(self.decay);
        let one_minus = T::from_f64(1.0 - self.decay);
        for (avg, cur) in self.averaged.iter_mut().zip(params) {
            if avg.shape() != cur.shape() {
                return Err(Error::ShapeMismatch {
                    context: "weight averager".into(),
                    expected: format!("{:?}", avg.shape()),
                    actual: format!("{:?}", cur.shape()),
                });
            }
            let ad = avg.data_mut();
            for (a, &c) in ad.iter_mut().zip(cur.data()) {
                *a = decay * *a + one_minus * c;
            }
        }
        Ok(())
    }

    /// A copy of `model` carrying the averaged parameters.
    pub fn averaged_model(&self, model: &Model<T>) -> Model<T> {
        let mut out = model.clone();
        out.params = self.averaged.clone();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::from_f64_slice(vec![1], &[v]).unwrap()]
    }

    #[test]
    fn sgd_vanilla_step() {
        let mut params = one(1.0);
        let grads = one(1.0);
        let mut state = SgdState::zeros_like(&params);
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.0,
        };
        sgd_step(&mut params, &grads, &mut state, &cfg, 0.1).unwrap();
        assert!((params[0].data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_carries_velocity() {
        let mut params = one(1.0);
        let grads = one(0.0);
        let mut state = SgdState::zeros_like(&params);
        state.velocity[0].data_mut()[0] = 1.0;
        let cfg = SgdConfig {
            momentum: 0.9,
            weight_decay: 0.0,
        };
        sgd_step(&mut params, &grads, &mut state, &cfg, 0.1).unwrap();
        assert!((state.velocity[0].data()[0] - 0.9).abs() < 1e-15);
        assert!((params[0].data()[0] - 0.91).abs() < 1e-15);
    }

    #[test]
    fn sgd_weight_decay_shrinks_weights() {
        let mut params = one(2.0);
        let grads = one(0.0);
        let mut state = SgdState::zeros_like(&params);
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 5e-4,
        };
        sgd_step(&mut params, &grads, &mut state, &cfg, 0.1).unwrap();
        assert!((params[0].data()[0] - 1.9999).abs() < 1e-12);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let mut params = one(1.0);
        let grads = one(f64::NAN);
        let mut state = SgdState::zeros_like(&params);
        let err = sgd_step(&mut params, &grads, &mut state, &SgdConfig::default(), 0.1)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteUpdate { .. }));
        assert_eq!(params[0].data()[0], 1.0);
    }

    #[test]
    fn sgd_plain_equals_gradient_descent_over_many_steps() {
        let mut params = one(3.0);
        let mut state = SgdState::zeros_like(&params);
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut reference = 3.0f64;
        for step in 0..20 {
            let g = 0.3 * (step as f64 + 1.0);
            sgd_step(&mut params, &one(g), &mut state, &cfg, 0.05).unwrap();
            reference -= 0.05 * g;
            assert_eq!(params[0].data()[0], reference);
        }
    }

    #[test]
    fn piecewise_drops_at_the_named_epochs() {
        let s = Schedule::Piecewise {
            base_lr: 0.1,
            drop_epochs: vec![100, 150],
            factor: 10.0,
        };
        assert!((s.lr_at(99.0) - 0.1).abs() < 1e-15);
        assert!((s.lr_at(100.0) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(150.0) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn piecewise_is_nonincreasing() {
        let s = Schedule::Piecewise {
            base_lr: 0.1,
            drop_epochs: vec![3, 7, 11],
            factor: 10.0,
        };
        let mut prev = f64::INFINITY;
        for e in 0..20 {
            let lr = s.lr_at(e as f64);
            assert!(lr <= prev && lr >= 0.0);
            prev = lr;
        }
    }

    #[test]
    fn one_cycle_endpoints_and_peak() {
        let s = Schedule::OneCycle {
            max_lr: 0.2,
            total_epochs: 200,
            peak_fraction: 0.5,
        };
        assert_eq!(s.lr_at(0.0), 0.0);
        assert_eq!(s.lr_at(100.0), 0.2);
        assert_eq!(s.lr_at(200.0), 0.0);
        // Attains the max exactly once over a fine grid.
        let mut hits = 0;
        for i in 0..=2000 {
            if s.lr_at(i as f64 * 0.1) == 0.2 {
                hits += 1;
            }
        }
        assert_eq!(hits, 1);
    }

    #[test]
    fn one_cycle_is_continuous_and_nonnegative() {
        let s = Schedule::OneCycle {
            max_lr: 0.2,
            total_epochs: 50,
            peak_fraction: 0.3,
        };
        // Steepest slope is max_lr/(peak_fraction*total) per epoch, so one
        // 0.01-epoch step can move lr by at most ~1.34e-4.
        let mut prev = s.lr_at(0.0);
        for i in 1..=5000 {
            let lr = s.lr_at(i as f64 * 0.01);
            assert!(lr >= 0.0);
            assert!((lr - prev).abs() < 2e-4);
            prev = lr;
        }
    }

    #[test]
    fn cosine_endpoints_are_exact() {
        let s = Schedule::Cosine {
            max_lr: 0.2,
            total_epochs: 10,
        };
        assert_eq!(s.lr_at(0.0), 0.2);
        assert_eq!(s.lr_at(10.0), 0.0);
        assert!((s.lr_at(5.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn weight_averager_hand_values() {
        let mut wa = WeightAverager::new(&one(0.0), 0.9, 0).unwrap();
        wa.update(&one(1.0)).unwrap();
        assert!((wa.averaged[0].data()[0] - 0.1).abs() < 1e-15);

        let mut snap = WeightAverager::new(&one(0.0), 0.0, 0).unwrap();
        snap.update(&one(0.7)).unwrap();
        assert_eq!(snap.averaged[0].data()[0], 0.7);
    }

    #[test]
    fn weight_averager_converges_geometrically() {
        let target = 2.0;
        let decay = 0.8f64;
        let mut wa = WeightAverager::new(&one(0.0), decay, 0).unwrap();
        let current = one(target);
        for n in 1..=30 {
            wa.update(&current).unwrap();
            let gap = (wa.averaged[0].data()[0] - target).abs();
            let expected = decay.powi(n) * target;
            assert!((gap - expected).abs() < 1e-12, "n={n}: {gap} vs {expected}");
        }
    }

    #[test]
    fn weight_averager_leaves_live_params_alone() {
        let params = one(1.5);
        let mut wa = WeightAverager::new(&params, 0.99, 0).unwrap();
        wa.update(&params).unwrap();
        assert_eq!(params[0].data()[0], 1.5);
    }

    #[test]
    fn schedule_validation_rejects_bad_shapes() {
        assert!(Schedule::Piecewise {
            base_lr: 0.1,
            drop_epochs: vec![150, 100],
            factor: 10.0
        }
        .validate()
        .is_err());
        assert!(Schedule::OneCycle {
            max_lr: 0.2,
            total_epochs: 0,
            peak_fraction: 0.5
        }
        .validate()
        .is_err());
        assert!(SgdConfig {
            momentum: 1.0,
            weight_decay: 0.0
        }
        .validate()
        .is_err());
    }
}
