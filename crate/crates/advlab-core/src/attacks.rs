//! Inner-maximization procedures: FGSM, PGD, NFGSM, the margin-loss PGD
//! variant, and a multi-restart strong evaluation combining the last two.
//!
//! All attacks derive per-sample RNG streams from (seed, restart, sample),
//! so results are independent of batch order and of any parallel execution.

use serde::{Deserialize, Serialize};

use crate::diffcore::{argmax_rows, backward, per_sample_losses, Element, Model, Tensor};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::rng::{self, SALT_CW, SALT_PGD};

/// Starting perturbation before the first gradient step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    /// delta_0 = 0.
    Zero,
    /// Each coordinate uniform in [-epsilon, epsilon].
    UniformEps,
    /// Each coordinate N(0, sigma^2); sigma defaults to epsilon/2.
    /// Pre-clamped into [-epsilon, epsilon] when clip_delta is set.
    Gaussian { sigma: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// L-infinity budget in [0,1] pixel units.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Step size.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_init")]
    pub init: Init,
    /// Clamp delta into [-epsilon, epsilon] after every step.
    #[serde(default = "default_true")]
    pub clip_delta: bool,
    /// Clamp x + delta into [0, 1] after every step.
    #[serde(default = "default_true")]
    pub clip_image: bool,
    /// Independent restarts used by strong_eval.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Loss the attack ascends. Absent means inherit from context: the
    /// training loss inside the training loop, cross-entropy standalone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_loss: Option<LossKind>,
    /// Half-width of the NFGSM noise interval, as a multiple of epsilon.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_epsilon() -> f64 {
    8.0 / 255.0
}

fn default_alpha() -> f64 {
    2.0 / 255.0
}

fn default_steps() -> usize {
    10
}

fn default_init() -> Init {
    Init::Gaussian { sigma: None }
}

fn default_true() -> bool {
    true
}

fn default_restarts() -> usize {
    1
}

fn default_noise_scale() -> f64 {
    2.0
}

impl Default for AttackConfig {
    /// The training-protocol default: 10-step PGD at epsilon = 8/255.
    fn default() -> Self {
        AttackConfig::pgd10(default_epsilon())
    }
}

impl AttackConfig {
    /// 10-step PGD with Gaussian init and alpha = 2/255, the evaluation
    /// attack used throughout.
    pub fn pgd10(epsilon: f64) -> Self {
        AttackConfig {
            epsilon,
            alpha: 2.0 / 255.0,
            steps: 10,
            init: Init::Gaussian { sigma: None },
            clip_delta: true,
            clip_image: true,
            restarts: 1,
            target_loss: None,
            noise_scale: default_noise_scale(),
            seed: 0,
        }
    }

    /// Single-step FGSM with uniform noise init and alpha = 10/255.
    pub fn fgsm_eval(epsilon: f64) -> Self {
        AttackConfig {
            alpha: 10.0 / 255.0,
            steps: 1,
            init: Init::UniformEps,
            ..AttackConfig::pgd10(epsilon)
        }
    }

    /// 10-step PGD driven by the margin loss.
    pub fn cw10(epsilon: f64) -> Self {
        AttackConfig {
            target_loss: Some(LossKind::CwMargin),
            ..AttackConfig::pgd10(epsilon)
        }
    }

    /// The loss this attack ascends when invoked standalone.
    pub fn target(&self) -> LossKind {
        self.target_loss.clone().unwrap_or(LossKind::Cel)
    }

    /// Single-step training attack with unclipped noise; alpha = epsilon.
    pub fn nfgsm(epsilon: f64) -> Self {
        AttackConfig {
            alpha: epsilon,
            steps: 1,
            init: Init::Zero,
            clip_delta: false,
            ..AttackConfig::pgd10(epsilon)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::config(format!(
                "attack epsilon must be in (0, 1], got {}",
                self.epsilon
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!(
                "attack alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.steps == 0 {
            return Err(Error::config("attack steps must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::config("attack restarts must be at least 1"));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::config(format!(
                "nfgsm noise_scale must be positive, got {}",
                self.noise_scale
            )));
        }
        if let Init::Gaussian { sigma: Some(s) } = self.init {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config(format!(
                    "gaussian init sigma must be positive, got {s}"
                )));
            }
        }
        if let Some(t) = &self.target_loss {
            t.validate()?;
        }
        Ok(())
    }
}

/// One attacked batch.
#[derive(Clone, Debug)]
pub struct AdvBatch<T: Element> {
    pub x_adv: Tensor<T>,
    pub delta: Tensor<T>,
    /// True where the prediction on x_adv differs from the label.
    pub success_mask: Vec<bool>,
}

fn sign_of<T: Element>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Fill `delta` with the configured init, one RNG stream per sample.
fn draw_init<T: Element>(
    cfg: &AttackConfig,
    run_seed: u64,
    n: usize,
    per_sample: usize,
) -> Vec<T> {
    let eps = cfg.epsilon;
    let mut delta = vec![T::zero(); n * per_sample];
    match cfg.init {
        Init::Zero => {}
        Init::UniformEps => {
            for i in 0..n {
                let mut stream = rng::stream(run_seed, &[i as u64]);
                for v in &mut delta[i * per_sample..(i + 1) * per_sample] {
                    *v = T::from_f64(rng::uniform_in(&mut stream, -eps, eps));
                }
            }
        }
        Init::Gaussian { sigma } => {
            let sigma = sigma.unwrap_or(eps / 2.0);
            for i in 0..n {
                let mut stream = rng::stream(run_seed, &[i as u64]);
                for v in &mut delta[i * per_sample..(i + 1) * per_sample] {
                    let mut d = sigma * rng::standard_normal(&mut stream);
                    if cfg.clip_delta {
                        d = d.clamp(-eps, eps);
                    }
                    *v = T::from_f64(d);
                }
            }
        }
    }
    delta
}

struct RunOut<T: Element> {
    delta: Vec<T>,
    x_adv: Vec<T>,
    success: Vec<bool>,
    final_losses: Vec<T>,
    /// Mean target loss after init and after each step, when requested.
    trace: Option<Vec<f64>>,
}

/// The shared iterated-step kernel behind fgsm, pgd and cw_pgd.
fn run_clamped<T: Element>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    target: &LossKind,
    run_seed: u64,
    init_override: Option<&Tensor<T>>,
    want_trace: bool,
) -> Result<RunOut<T>> {
    let n = model.batch_size(batch)?;
    let per_sample = batch.len() / n;
    let eps = T::from_f64(cfg.epsilon);
    let alpha = T::from_f64(cfg.alpha);

    let mut delta = match init_override {
        Some(t) => {
            if t.shape() != batch.shape() {
                return Err(Error::ShapeMismatch {
                    context: "attack init override".into(),
                    expected: format!("{:?}", batch.shape()),
                    actual: format!("{:?}", t.shape()),
                });
            }
            t.data().to_vec()
        }
        None => draw_init(cfg, run_seed, n, per_sample),
    };

    let xd = batch.data();
    let mut x_adv: Vec<T> = xd.iter().zip(&delta).map(|(&x, &d)| x + d).collect();
    let mut trace = want_trace.then(Vec::new);
    if let Some(tr) = trace.as_mut() {
        let t = Tensor::new(batch.shape().to_vec(), x_adv.clone())?;
        tr.push(mean_f64(&per_sample_losses(model, target, &t, labels)?));
    }

    for _ in 0..cfg.steps {
        let current = Tensor::new(batch.shape().to_vec(), x_adv.clone())?;
        let grad = backward(model, target, &current, labels, true)?
            .input_grad
            .expect("input gradient was requested");
        for (k, g) in grad.data().iter().enumerate() {
            let mut d = delta[k] + alpha * sign_of(*g);
            if cfg.clip_delta {
                d = d.clamp(-eps, eps);
            }
            if cfg.clip_image {
                // Only rewrite coordinates that actually leave [0, 1]. An
                // unconditional (x + d).clamp(0, 1) - x would perturb every
                // in-range coordinate by a rounding error.
                let s = xd[k] + d;
                if s < T::zero() {
                    d = T::zero() - xd[k];
                } else if s > T::one() {
                    d = T::one() - xd[k];
                }
            }
            delta[k] = d;
            x_adv[k] = xd[k] + d;
        }
        if let Some(tr) = trace.as_mut() {
            let t = Tensor::new(batch.shape().to_vec(), x_adv.clone())?;
            tr.push(mean_f64(&per_sample_losses(model, target, &t, labels)?));
        }
    }

    let adv = Tensor::new(batch.shape().to_vec(), x_adv)?;
    let final_losses = per_sample_losses(model, target, &adv, labels)?;
    let preds = argmax_rows(&model.forward(&adv)?);
    let success = preds
        .iter()
        .zip(labels)
        .map(|(&p, &l)| p != l)
        .collect();
    Ok(RunOut {
        delta,
        x_adv: adv.into_data(),
        success,
        final_losses,
        trace,
    })
}

fn mean_f64<T: Element>(values: &[T]) -> f64 {
    values.iter().map(|&v| v.to_f64()).sum::<f64>() / values.len() as f64
}

fn into_adv_batch<T: Element>(shape: Vec<usize>, out: RunOut<T>) -> AdvBatch<T> {
    AdvBatch {
        x_adv: Tensor::new(shape.clone(), out.x_adv).unwrap(),
        delta: Tensor::new(shape, out.delta).unwrap(),
        success_mask: out.success,
    }
}

/// Single-step attack: delta = clamp(eta + alpha*sign(grad at x+eta)).
pub fn fgsm<T: Element>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdvBatch<T>> {
    cfg.validate()?;
    if cfg.steps != 1 {
        return Err(Error::config(format!(
            "fgsm takes exactly 1 step, got {}",
            cfg.steps
        )));
    }
    let target = cfg.target();
    let out = run_clamped(model, batch, labels, cfg, &target, cfg.seed, None, false)?;
    Ok(into_adv_batch(batch.shape().to_vec(), out))
}

/// FGSM with the noise tensor supplied by the caller instead of drawn.
pub fn fgsm_with_noise<T: Element>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    noise: &Tensor<T>,
) -> Result<AdvBatch<T>> {
    cfg.validate()?;
    if cfg.steps != 1 {
        return Err(Error::config(format!(
            "fgsm takes exactly 1 step, got {}",
            cfg.steps
        )));
    }
    let out = run_clamped(
        model,
        batch,
        labels,
        cfg,
        &cfg.target(),
        cfg.seed,
        Some(noise),
        false,
    )?;
    Ok(into_adv_batch(batch.shape().to_vec(), out))
}

/// Iterated signed-gradient ascent inside the epsilon ball.
pub fn pgd<T: Element>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdvBatch<T>> {
    cfg.validate()?;
    let target = cfg.target();
    let out = run_clamped(model, batch, labels, cfg, &target, cfg.seed, None, false)?;
    Ok(into_adv_batch(batch.shape().to_vec(), out))
}

/// PGD from a caller-supplied starting perturbation.
pub fn pgd_with_init<T: Element>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    init_delta: &Tensor<T>,
) -> Result<AdvBatch<T>> {
    cfg.validate()?;
    let out = run_clamped(
        model,
        batch,
        labels,
        cfg,
        &cfg.target(),
        cfg.seed,
        Some(init_delta),
        false,
    )?;
    Ok(into_adv_batch(batch.shape().to_vec(), out))
}

/// PGD that also reports the mean target loss after init and after every
/// step, for diagnosing step-size behavior.
pub fn pgd_trace<T: Element>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<(AdvBatch<T>, Vec<f64>)> {
    cfg.validate()?;
    let target = cfg.target();
    let out = run_clamped(model, batch, labels, cfg, &target, cfg.seed, None, true)?;
    let trace = out.trace.clone().unwrap();
    Ok((into_adv_batch(batch.shape().to_vec(), out), trace))
}

/// Single-step attack around a noised anchor, without the epsilon clamp:
/// x_adv = (x + eta) + alpha*sign(grad at x + eta).
pub fn nfgsm<T: Element>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdvBatch<T>> {
    cfg.validate()?;
    nfgsm_checks(cfg)?;
    let n = model.batch_size(batch)?;
    let per_sample = batch.len() / n;
    let span = cfg.noise_scale * cfg.epsilon;
    let mut noise = vec![T::zero(); n * per_sample];
    for i in 0..n {
        let mut stream = rng::stream(cfg.seed, &[i as u64]);
        for v in &mut noise[i * per_sample..(i + 1) * per_sample] {
            *v = T::from_f64(rng::uniform_in(&mut stream, -span, span));
        }
    }
    let noise = Tensor::new(batch.shape().to_vec(), noise)?;
    nfgsm_step(model, batch, labels, cfg, &noise)
}

/// NFGSM with the noise tensor supplied by the caller instead of drawn.
pub fn nfgsm_with_noise<T: Element>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    noise: &Tensor<T>,
) -> Result<AdvBatch<T>> {
    cfg.validate()?;
    nfgsm_checks(cfg)?;
    nfgsm_step(model, batch, labels, cfg, noise)
}

fn nfgsm_checks(cfg: &AttackConfig) -> Result<()> {
    if cfg.clip_delta {
        return Err(Error::config(
            "nfgsm has no epsilon clamp; clip_delta must be false",
        ));
    }
    if cfg.steps != 1 {
        return Err(Error::config(format!(
            "nfgsm takes exactly 1 step, got {}",
            cfg.steps
        )));
    }
    Ok(())
}

fn nfgsm_step<T: Element>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    noise: &Tensor<T>,
) -> Result<AdvBatch<T>> {
    if noise.shape() != batch.shape() {
        return Err(Error::ShapeMismatch {
            context: "nfgsm noise".into(),
            expected: format!("{:?}", batch.shape()),
            actual: format!("{:?}", noise.shape()),
        });
    }
    let alpha = T::from_f64(cfg.alpha);
    let anchor = batch.add(noise)?;
    let target = cfg.target();
    let grad = backward(model, &target, &anchor, labels, true)?
        .input_grad
        .expect("input gradient was requested");
    let xd = batch.data();
    let nd = noise.data();
    let mut delta = Vec::with_capacity(batch.len());
    let mut x_adv = Vec::with_capacity(batch.len());
    for (k, g) in grad.data().iter().enumerate() {
        // Track the perturbation in delta space so a zero gradient passes
        // the noise through bitwise, mirroring the pgd kernel.
        let mut d = nd[k] + alpha * sign_of(*g);
        if cfg.clip_image {
            let s = xd[k] + d;
            if s < T::zero() {
                d = T::zero() - xd[k];
            } else if s > T::one() {
                d = T::one() - xd[k];
            }
        }
        delta.push(d);
        x_adv.push(xd[k] + d);
    }
    let adv = Tensor::new(batch.shape().to_vec(), x_adv)?;
    let preds = argmax_rows(&model.forward(&adv)?);
    let success = preds.iter().zip(labels).map(|(&p, &l)| p != l).collect();
    Ok(AdvBatch {
        delta: Tensor::new(batch.shape().to_vec(), delta)?,
        x_adv: adv,
        success_mask: success,
    })
}

/// PGD carrying the margin loss; identical stepping to `pgd`.
pub fn cw_pgd<T: Element>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdvBatch<T>> {
    cfg.validate()?;
    if cfg.target() != LossKind::CwMargin {
        return Err(Error::config(
            "cw_pgd requires target_loss = cw_margin",
        ));
    }
    let target = cfg.target();
    let out = run_clamped(model, batch, labels, cfg, &target, cfg.seed, None, false)?;
    Ok(into_adv_batch(batch.shape().to_vec(), out))
}

/// Multi-restart union of PGD (cross-entropy) and margin-loss PGD. Restart 0
/// of each family reuses `cfg.seed` directly, so a plain `pgd` or `cw_pgd`
/// call with the same seed is one of the runs; later restarts use salted
/// seeds. Per sample, the first flipping run wins; if none flips, the run
/// with the highest final target loss is kept.
pub fn strong_eval<T: Element>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdvBatch<T>> {
    cfg.validate()?;
    let n = model.batch_size(batch)?;
    let per_sample = batch.len() / n;

    let mut runs: Vec<RunOut<T>> = Vec::with_capacity(2 * cfg.restarts);
    for (salt, target) in [(SALT_PGD, LossKind::Cel), (SALT_CW, LossKind::CwMargin)] {
        for r in 0..cfg.restarts {
            let run_seed = if r == 0 {
                cfg.seed
            } else {
                rng::mix_all(cfg.seed, &[salt, r as u64])
            };
            runs.push(run_clamped(
                model, batch, labels, cfg, &target, run_seed, None, false,
            )?);
        }
    }

    let shape = batch.shape().to_vec();
    let mut delta = vec![T::zero(); batch.len()];
    let mut x_adv = vec![T::zero(); batch.len()];
    let mut success = vec![false; n];
    for i in 0..n {
        let winner = runs
            .iter()
            .position(|run| run.success[i])
            .unwrap_or_else(|| {
                let mut best = 0;
                for (ix, run) in runs.iter().enumerate() {
                    if run.final_losses[i].to_f64() > runs[best].final_losses[i].to_f64() {
                        best = ix;
                    }
                }
                best
            });
        let run = &runs[winner];
        success[i] = run.success[i];
        let span = i * per_sample..(i + 1) * per_sample;
        delta[span.clone()].copy_from_slice(&run.delta[span.clone()]);
        x_adv[span.clone()].copy_from_slice(&run.x_adv[span]);
    }
    Ok(AdvBatch {
        x_adv: Tensor::new(shape.clone(), x_adv)?,
        delta: Tensor::new(shape, delta)?,
        success_mask: success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Architecture, Model, MLP_HIDDEN};

    const EPS: f64 = 8.0 / 255.0;

    /// MLP wired so the logits are exactly (x, -x) for scalar input x > 0.
    fn linear_pair_model() -> Model<f64> {
        let mut model = Model::<f64>::zeros(Architecture::Mlp {
            input_dim: 1,
            classes: 2,
        })
        .unwrap();
        {
            let w1 = model.params[0].data_mut();
            w1[0] = 1.0;
            w1[1] = -1.0;
        }
        {
            let w2 = model.params[2].data_mut();
            w2[0] = 1.0;
            w2[MLP_HIDDEN + 1] = 1.0;
        }
        {
            let w3 = model.params[4].data_mut();
            w3[0] = 1.0;
            w3[1] = -1.0;
            w3[MLP_HIDDEN] = -1.0;
            w3[MLP_HIDDEN + 1] = 1.0;
        }
        model
    }

    fn scalar_batch(x: f64) -> Tensor<f64> {
        Tensor::from_f64_slice(vec![1, 1], &[x]).unwrap()
    }

    fn random_model_and_batch(seed: u64) -> (Model<f64>, Tensor<f64>, Vec<usize>) {
        let model = Model::<f64>::init(
            Architecture::Mlp {
                input_dim: 6,
                classes: 3,
            },
            seed,
        )
        .unwrap();
        let mut stream = rng::stream(seed, &[123]);
        let data: Vec<f64> = (0..4 * 6)
            .map(|_| rng::uniform_in(&mut stream, 0.0, 1.0))
            .collect();
        let labels = (0..4)
            .map(|_| rng::uniform_in(&mut stream, 0.0, 3.0).floor() as usize)
            .collect();
        (model, Tensor::new(vec![4, 6], data).unwrap(), labels)
    }

    #[test]
    fn fgsm_on_constant_model_returns_the_noise() {
        let model = Model::<f64>::zeros(Architecture::Mlp {
            input_dim: 3,
            classes: 2,
        })
        .unwrap();
        let batch = Tensor::<f64>::full(vec![2, 3], 0.5);
        let mut cfg = AttackConfig::fgsm_eval(EPS);
        cfg.seed = 7;
        let adv = fgsm(&model, &batch, &[0, 1], &cfg).unwrap();
        // Reproduce the documented draw order: one stream per sample,
        // coordinates filled row-major.
        for i in 0..2 {
            let mut stream = rng::stream(7, &[i as u64]);
            for k in 0..3 {
                let eta = rng::uniform_in(&mut stream, -EPS, EPS);
                assert_eq!(adv.delta.data()[i * 3 + k], eta);
            }
        }
    }

    #[test]
    fn fgsm_follows_the_gradient_sign_downhill() {
        // Logits (x, -x), label 0: dL/dx < 0, so the step is -alpha.
        let model = linear_pair_model();
        let mut cfg = AttackConfig::fgsm_eval(EPS);
        cfg.alpha = EPS;
        cfg.init = Init::Zero;
        let adv = fgsm(&model, &scalar_batch(0.5), &[0], &cfg).unwrap();
        assert!((adv.delta.data()[0] + EPS).abs() < 1e-15);
        assert!((adv.x_adv.data()[0] - (0.5 - EPS)).abs() < 1e-15);
    }

    #[test]
    fn fgsm_clamps_saturated_noise_to_epsilon() {
        // eta = 7/255, gradient sign +1 (label 1), alpha = 10/255: the
        // pre-clamp value 17/255 clamps to exactly 8/255.
        let model = linear_pair_model();
        let cfg = AttackConfig::fgsm_eval(EPS);
        let noise = scalar_batch(7.0 / 255.0);
        let adv = fgsm_with_noise(&model, &scalar_batch(0.5), &[1], &cfg, &noise).unwrap();
        assert!((adv.delta.data()[0] - EPS).abs() < 1e-15);
    }

    #[test]
    fn pgd_single_step_clamp_example() {
        // delta_i = 7/255, sign +1, alpha = 2/255: 9/255 clamps to 8/255.
        let model = linear_pair_model();
        let mut cfg = AttackConfig::pgd10(EPS);
        cfg.steps = 1;
        let init = scalar_batch(7.0 / 255.0);
        let adv = pgd_with_init(&model, &scalar_batch(0.5), &[1], &cfg, &init).unwrap();
        assert!((adv.delta.data()[0] - EPS).abs() < 1e-15);
    }

    #[test]
    fn pgd_on_constant_model_keeps_clamped_init() {
        let model = Model::<f64>::zeros(Architecture::Mlp {
            input_dim: 3,
            classes: 2,
        })
        .unwrap();
        let batch = Tensor::<f64>::full(vec![2, 3], 0.5);
        let mut cfg = AttackConfig::pgd10(EPS);
        cfg.seed = 11;
        cfg.steps = 5;
        let adv = pgd(&model, &batch, &[0, 1], &cfg).unwrap();
        for i in 0..2 {
            let mut stream = rng::stream(11, &[i as u64]);
            for k in 0..3 {
                let draw = (EPS / 2.0) * rng::standard_normal(&mut stream);
                let expected = draw.clamp(-EPS, EPS);
                assert_eq!(adv.delta.data()[i * 3 + k], expected);
            }
        }
    }

    #[test]
    fn pgd_one_step_zero_init_is_bitwise_fgsm() {
        let (model, batch, labels) = random_model_and_batch(5);
        let mut cfg = AttackConfig::pgd10(EPS);
        cfg.steps = 1;
        cfg.init = Init::Zero;
        cfg.seed = 3;
        let a = pgd(&model, &batch, &labels, &cfg).unwrap();
        let b = fgsm(&model, &batch, &labels, &cfg).unwrap();
        assert_eq!(a.delta.data(), b.delta.data());
        assert_eq!(a.x_adv.data(), b.x_adv.data());
        assert_eq!(a.success_mask, b.success_mask);
    }

    #[test]
    fn nfgsm_zero_gradient_passes_noise_through() {
        let model = Model::<f64>::zeros(Architecture::Mlp {
            input_dim: 2,
            classes: 2,
        })
        .unwrap();
        let mut cfg = AttackConfig::nfgsm(EPS);
        cfg.clip_image = false;
        let batch = Tensor::<f64>::full(vec![1, 2], 0.5);
        let noise = Tensor::from_f64_slice(vec![1, 2], &[0.01, -0.02]).unwrap();
        let adv = nfgsm_with_noise(&model, &batch, &[0], &cfg, &noise).unwrap();
        assert_eq!(adv.delta.data(), noise.data());
    }

    #[test]
    fn nfgsm_exceeds_epsilon_without_clamp() {
        // eta = 1.9*eps and a +1 gradient step of alpha = eps lands at
        // 2.9*eps from the clean sample.
        let model = linear_pair_model();
        let mut cfg = AttackConfig::nfgsm(EPS);
        cfg.clip_image = false;
        let noise = scalar_batch(1.9 * EPS);
        let adv = nfgsm_with_noise(&model, &scalar_batch(0.5), &[1], &cfg, &noise).unwrap();
        let moved = adv.delta.data()[0];
        assert!((moved - 2.9 * EPS).abs() < 1e-12);
        assert!(moved > EPS);
    }

    #[test]
    fn nfgsm_linear_example_steps_negative() {
        let model = linear_pair_model();
        let mut cfg = AttackConfig::nfgsm(EPS);
        cfg.clip_image = false;
        let noise = scalar_batch(0.0);
        let adv = nfgsm_with_noise(&model, &scalar_batch(0.5), &[0], &cfg, &noise).unwrap();
        assert!((adv.delta.data()[0] + cfg.alpha).abs() < 1e-15);
    }

    #[test]
    fn nfgsm_rejects_epsilon_clamp() {
        let model = linear_pair_model();
        let mut cfg = AttackConfig::nfgsm(EPS);
        cfg.clip_delta = true;
        assert!(nfgsm(&model, &scalar_batch(0.5), &[0], &cfg).is_err());
    }

    #[test]
    fn cw_requires_margin_loss_and_positive_steps() {
        let model = linear_pair_model();
        let mut cfg = AttackConfig::pgd10(EPS);
        assert!(cw_pgd(&model, &scalar_batch(0.5), &[0], &cfg).is_err());
        cfg = AttackConfig::cw10(EPS);
        cfg.steps = 0;
        assert!(cw_pgd(&model, &scalar_batch(0.5), &[0], &cfg).is_err());
    }

    #[test]
    fn cw_walks_the_margin_gradient() {
        // margin = f_1 - f_0 = -2x for label 0, so steps move x down until
        // the ball boundary.
        let model = linear_pair_model();
        let mut cfg = AttackConfig::cw10(EPS);
        cfg.init = Init::Zero;
        let adv = cw_pgd(&model, &scalar_batch(0.5), &[0], &cfg).unwrap();
        assert!((adv.delta.data()[0] + EPS).abs() < 1e-15);
    }

    #[test]
    fn strong_eval_on_constant_model_matches_clean_errors() {
        let mut model = Model::<f64>::zeros(Architecture::Mlp {
            input_dim: 2,
            classes: 2,
        })
        .unwrap();
        model.params[5].data_mut()[0] = 1.0;
        let batch = Tensor::<f64>::full(vec![2, 2], 0.5);
        let mut cfg = AttackConfig::pgd10(EPS);
        cfg.restarts = 2;
        let adv = strong_eval(&model, &batch, &[0, 1], &cfg).unwrap();
        assert_eq!(adv.success_mask, vec![false, true]);
    }

    #[test]
    fn strong_eval_flips_at_least_what_plain_pgd_flips() {
        for seed in 0..5u64 {
            let (model, batch, labels) = random_model_and_batch(seed);
            let mut cfg = AttackConfig::pgd10(EPS);
            cfg.seed = 1000 + seed;
            cfg.restarts = 2;
            let plain = pgd(&model, &batch, &labels, &cfg).unwrap();
            let strong = strong_eval(&model, &batch, &labels, &cfg).unwrap();
            for (s, p) in strong.success_mask.iter().zip(&plain.success_mask) {
                assert!(*s || !*p, "strong_eval lost a flip that plain pgd found");
            }
        }
    }

    #[test]
    fn budget_and_image_clamps_hold() {
        for seed in 0..10u64 {
            let (model, batch, labels) = random_model_and_batch(seed);
            let mut cfg = AttackConfig::pgd10(EPS);
            cfg.seed = seed;
            let adv = pgd(&model, &batch, &labels, &cfg).unwrap();
            assert!(adv.delta.linf_norm() <= EPS + 1e-7);
            for &v in adv.x_adv.data() {
                assert!((0.0..=1.0).contains(&v));
            }
            // x_adv stays exactly x + delta.
            for ((&xa, &x), &d) in adv.x_adv.data().iter().zip(batch.data()).zip(adv.delta.data())
            {
                assert_eq!(xa, x + d);
            }
        }
    }

    #[test]
    fn attacks_are_seed_deterministic() {
        let (model, batch, labels) = random_model_and_batch(2);
        let mut cfg = AttackConfig::pgd10(EPS);
        cfg.seed = 77;
        let a = pgd(&model, &batch, &labels, &cfg).unwrap();
        let b = pgd(&model, &batch, &labels, &cfg).unwrap();
        assert_eq!(a.delta.data(), b.delta.data());

        // Ten saturating steps can push every coordinate to the same +/-eps
        // corner regardless of init, so probe seed sensitivity with a single
        // small step where the random init survives.
        cfg.steps = 1;
        cfg.alpha = 0.1 / 255.0;
        let c = pgd(&model, &batch, &labels, &cfg).unwrap();
        cfg.seed = 78;
        let d = pgd(&model, &batch, &labels, &cfg).unwrap();
        assert_ne!(c.delta.data(), d.delta.data());
    }

    #[test]
    fn pgd_trace_mostly_climbs_the_loss() {
        let mut monotone = 0;
        let trials = 20;
        for seed in 0..trials {
            let (model, batch, labels) = random_model_and_batch(seed);
            let mut cfg = AttackConfig::pgd10(EPS);
            cfg.seed = seed;
            cfg.alpha = 0.5 / 255.0;
            let (_, trace) = pgd_trace(&model, &batch, &labels, &cfg).unwrap();
            if trace.windows(2).all(|w| w[1] >= w[0] - 1e-6) {
                monotone += 1;
            }
        }
        assert!(
            monotone as f64 >= 0.9 * trials as f64,
            "only {monotone}/{trials} traces were monotone"
        );
    }

    #[test]
    fn attack_config_validation() {
        let mut cfg = AttackConfig::pgd10(EPS);
        cfg.epsilon = 0.0;
        assert!(cfg.validate().is_err());
        cfg.epsilon = 1.5;
        assert!(cfg.validate().is_err());
        cfg = AttackConfig::pgd10(EPS);
        cfg.restarts = 0;
        assert!(cfg.validate().is_err());
    }
}
