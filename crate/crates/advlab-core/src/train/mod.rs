//! Adversarial training loop: inner maximization via the configured attack,
//! outer minimization via SGD, per-epoch evaluation and checkpointing.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::analysis::{evaluate, EvalSuite};
use crate::attacks::{self, AttackConfig};
use crate::data::{augment, AugmentPipeline, Dataset};
use crate::diffcore::{backward, Architecture, Element, Model, Tensor};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::optim::{sgd_step, Schedule, SgdConfig, SgdState, WeightAverager};
use crate::rng::{self, SALT_AUGMENT, SALT_SHUFFLE, SALT_TRAIN_ATTACK};

/// Which inner maximization generates the training batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    /// Multi-step projected ascent; pairs with a clamped attack.
    PgdAt,
    /// Single signed step from wide unclipped noise.
    NfgsmAt,
}

/// Evaluation-time weight averaging. The live trajectory is never touched;
/// the average only replaces the weights when a model is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaSettings {
    pub decay: f64,
    /// Fraction of the run after which averaging begins.
    pub start_fraction: f64,
}

impl Default for WaSettings {
    fn default() -> Self {
        WaSettings {
            decay: 0.995,
            start_fraction: 0.5,
        }
    }
}

impl WaSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::config(format!(
                "weight averaging decay must be in [0, 1), got {}",
                self.decay
            )));
        }
        if !(0.0..=1.0).contains(&self.start_fraction) {
            return Err(Error::config(format!(
                "weight averaging start_fraction must be in [0, 1], got {}",
                self.start_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Defaults to the desk-scale reference net: an MLP over 3x8x8 inputs
    /// with 3 classes.
    #[serde(default = "default_arch")]
    pub arch: Architecture,
    #[serde(default = "default_paradigm")]
    pub paradigm: Paradigm,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    /// The inner-maximization attack. epsilon = 0 disables it and the run
    /// degenerates to natural training.
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub optimizer: SgdConfig,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "AugmentPipeline::standard")]
    pub augment: AugmentPipeline,
    #[serde(default)]
    pub wa: Option<WaSettings>,
    #[serde(default)]
    pub eval: EvalSuite,
    #[serde(default)]
    pub seed: u64,
}

fn default_arch() -> Architecture {
    Architecture::Mlp {
        input_dim: 192,
        classes: 3,
    }
}

fn default_paradigm() -> Paradigm {
    Paradigm::PgdAt
}

fn default_loss() -> LossKind {
    LossKind::Cel
}

fn default_schedule() -> Schedule {
    Schedule::OneCycle {
        max_lr: 0.2,
        total_epochs: 200,
        peak_fraction: 0.5,
    }
}

fn default_epochs() -> usize {
    200
}

fn default_batch_size() -> usize {
    128
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: default_arch(),
            paradigm: default_paradigm(),
            loss: default_loss(),
            attack: AttackConfig::default(),
            optimizer: SgdConfig::default(),
            schedule: default_schedule(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            augment: AugmentPipeline::standard(),
            wa: None,
            eval: EvalSuite::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.schedule.validate()?;
        self.augment.validate()?;
        self.eval.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if let Some(wa) = &self.wa {
            wa.validate()?;
        }
        if self.attack.epsilon == 0.0 {
            return Ok(());
        }
        self.attack.validate()?;
        match self.paradigm {
            Paradigm::PgdAt => {
                if !self.attack.clip_delta {
                    return Err(Error::config(
                        "pgd_at trains with a projected attack; set attack.clip_delta = true",
                    ));
                }
            }
            Paradigm::NfgsmAt => {
                if self.attack.steps != 1 {
                    return Err(Error::config(format!(
                        "nfgsm_at takes a single attack step, got steps = {}",
                        self.attack.steps
                    )));
                }
                if self.attack.clip_delta {
                    return Err(Error::config(
                        "nfgsm_at leaves the perturbation unclipped; set attack.clip_delta = false",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn check_dataset<T: Element>(&self, set: &Dataset<T>, which: &str) -> Result<()> {
        if set.is_empty() {
            return Err(Error::config(format!("{which} set is empty")));
        }
        if set.classes != self.arch.classes() {
            return Err(Error::config(format!(
                "{which} set has {} classes, architecture expects {}",
                set.classes,
                self.arch.classes()
            )));
        }
        let shape = set.sample_shape();
        let flat: usize = shape.iter().product();
        match &self.arch {
            Architecture::Mlp { input_dim, .. } => {
                if flat != *input_dim {
                    return Err(Error::ShapeMismatch {
                        context: format!("{which} set"),
                        expected: format!("{input_dim} features per sample"),
                        actual: format!("{shape:?} = {flat}"),
                    });
                }
            }
            Architecture::SmallConvNet {
                in_channels,
                height,
                width,
                ..
            } => {
                if shape != [*in_channels, *height, *width] {
                    return Err(Error::ShapeMismatch {
                        context: format!("{which} set"),
                        expected: format!("[{in_channels}, {height}, {width}]"),
                        actual: format!("{shape:?}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// One row of the per-epoch metrics table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub natural_acc: f64,
    pub fgsm_acc: f64,
    pub pgd_acc: f64,
    pub cw_acc: f64,
    pub strong_acc: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput<T: Element> {
    pub model: Model<T>,
    pub metrics: Vec<MetricsRecord>,
    /// Snapshot with the highest PGD test accuracy seen; earliest epoch wins
    /// ties.
    pub best: Checkpoint,
    pub last: Checkpoint,
}

/// Augment a gathered batch sample by sample. Streams are keyed by epoch and
/// dataset index, so the draw a sample sees does not depend on shuffle order.
fn augment_batch<T: Element>(
    pipeline: &AugmentPipeline,
    x: &Tensor<T>,
    indices: &[usize],
    seed: u64,
    epoch: usize,
) -> Result<Tensor<T>> {
    if pipeline.ops.is_empty() {
        return Ok(x.clone());
    }
    let sample_shape = x.shape()[1..].to_vec();
    let per_sample: usize = sample_shape.iter().product();
    let mut out = Vec::with_capacity(x.len());
    for (i, &ds_index) in indices.iter().enumerate() {
        let img = Tensor::new(
            sample_shape.clone(),
            x.data()[i * per_sample..(i + 1) * per_sample].to_vec(),
        )?;
        let mut stream = rng::stream(seed, &[SALT_AUGMENT, epoch as u64, ds_index as u64]);
        let aug = augment(pipeline, &img, &mut stream)?;
        out.extend_from_slice(aug.data());
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// The adversarial batch for one training step; clean copy when epsilon = 0.
fn make_adv<T: Element>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    batch: usize,
) -> Result<Tensor<T>> {
    if cfg.attack.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let mut acfg = cfg.attack.clone();
    // The inner maximization ascends the training loss unless the attack
    // section names its own target.
    if acfg.target_loss.is_none() {
        acfg.target_loss = Some(cfg.loss.clone());
    }
    acfg.seed = rng::mix_all(cfg.seed, &[SALT_TRAIN_ATTACK, epoch as u64, batch as u64]);
    let adv = match cfg.paradigm {
        Paradigm::PgdAt => attacks::pgd(model, x, labels, &acfg)?,
        Paradigm::NfgsmAt => attacks::nfgsm(model, x, labels, &acfg)?,
    };
    Ok(adv.x_adv)
}

fn to_divergence(err: Error, epoch: usize, batch: usize, last_good: &Checkpoint) -> Error {
    match err {
        Error::NonFiniteLoss { .. }
        | Error::NonFiniteGradient { .. }
        | Error::NonFiniteUpdate { .. } => Error::Diverged {
            epoch,
            batch,
            last_good: Box::new(last_good.clone()),
        },
        other => other,
    }
}

struct EpochStats {
    train_loss: f64,
    first_lr: f64,
}

/// Run one epoch of shuffled, augmented, attacked SGD updates.
fn run_epoch<T: Element>(
    cfg: &TrainConfig,
    train_set: &Dataset<T>,
    model: &mut Model<T>,
    state: &mut SgdState<T>,
    epoch: usize,
    last_good: &Checkpoint,
) -> Result<EpochStats> {
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_stream = rng::stream(cfg.seed, &[SALT_SHUFFLE, epoch as u64]);
    order.shuffle(&mut shuffle_stream);
    let num_batches = n.div_ceil(cfg.batch_size);
    let mut loss_sum = 0.0;
    let mut first_lr = 0.0;
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let lr = cfg
            .schedule
            .lr_at(epoch as f64 + b as f64 / num_batches as f64);
        if b == 0 {
            first_lr = lr;
        }
        let (x, labels) = train_set.gather(chunk);
        let x = augment_batch(&cfg.augment, &x, chunk, cfg.seed, epoch)?;
        let x_adv = make_adv(model, &x, &labels, cfg, epoch, b)
            .map_err(|e| to_divergence(e, epoch, b, last_good))?;
        let grads = backward(model, &cfg.loss, &x_adv, &labels, false)
            .map_err(|e| to_divergence(e, epoch, b, last_good))?;
        sgd_step(&mut model.params, &grads.param_grads, state, &cfg.optimizer, lr)
            .map_err(|e| to_divergence(e, epoch, b, last_good))?;
        loss_sum += grads.loss_value.to_f64() * chunk.len() as f64;
    }
    Ok(EpochStats {
        train_loss: loss_sum / n as f64,
        first_lr,
    })
}

/// Full training run with per-epoch evaluation and best-checkpoint tracking.
pub fn train<T: Element>(
    cfg: &TrainConfig,
    train_set: &Dataset<T>,
    test_set: &Dataset<T>,
) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    cfg.check_dataset(train_set, "training")?;
    cfg.check_dataset(test_set, "test")?;

    let mut model = Model::<T>::init(cfg.arch.clone(), cfg.seed)?;
    let mut state = SgdState::zeros_like(&model.params);
    let mut averager: Option<WeightAverager<T>> = None;
    let wa_start = cfg
        .wa
        .map(|w| (cfg.epochs as f64 * w.start_fraction).floor() as usize);

    let mut last_good = Checkpoint::from_state(&model, &state, None, 0, cfg.seed);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        if let (Some(wa), Some(start)) = (cfg.wa, wa_start) {
            if epoch == start && averager.is_none() {
                averager = Some(WeightAverager::new(&model.params, wa.decay, start)?);
            }
        }
        let stats = run_epoch(cfg, train_set, &mut model, &mut state, epoch, &last_good)?;
        if let Some(avg) = averager.as_mut() {
            avg.update(&model.params)?;
        }
        let eval_owned = averager.as_ref().map(|a| a.averaged_model(&model));
        let eval_model = eval_owned.as_ref().unwrap_or(&model);
        let report = evaluate(eval_model, test_set, &cfg.eval)?;
        let record = MetricsRecord {
            epoch,
            lr: stats.first_lr,
            train_loss: stats.train_loss,
            natural_acc: report.natural_acc,
            fgsm_acc: report.fgsm_acc,
            pgd_acc: report.pgd_acc,
            cw_acc: report.cw_acc,
            strong_acc: report.strong_acc,
            wall_time: started.elapsed().as_secs_f64(),
        };
        let ckpt = Checkpoint::from_state(
            &model,
            &state,
            averager.as_ref().map(|a| a.averaged.as_slice()),
            (epoch + 1) as u32,
            cfg.seed,
        );
        if best.as_ref().is_none_or(|(acc, _)| record.pgd_acc > *acc) {
            best = Some((record.pgd_acc, ckpt.clone()));
        }
        metrics.push(record);
        last_good = ckpt;
    }

    let last = last_good;
    let best = best.map(|(_, c)| c).unwrap_or_else(|| last.clone());
    Ok(TrainOutput {
        model,
        metrics,
        best,
        last,
    })
}

/// Same trajectory as [`train`] without the per-epoch evaluation; used where
/// only the final model matters (the bias-variance halves). Evaluation never
/// consumes training randomness, so this matches `train`'s final parameters
/// bit for bit.
pub fn fit<T: Element>(cfg: &TrainConfig, train_set: &Dataset<T>) -> Result<Model<T>> {
    cfg.validate()?;
    cfg.check_dataset(train_set, "training")?;
    let mut model = Model::<T>::init(cfg.arch.clone(), cfg.seed)?;
    let mut state = SgdState::zeros_like(&model.params);
    let mut last_good = Checkpoint::from_state(&model, &state, None, 0, cfg.seed);
    for epoch in 0..cfg.epochs {
        run_epoch(cfg, train_set, &mut model, &mut state, epoch, &last_good)?;
        last_good = Checkpoint::from_state(&model, &state, None, (epoch + 1) as u32, cfg.seed);
    }
    Ok(model)
}
