//! Evaluation suites, overfitting gap summaries, and the bias-variance
//! decomposition over training-half realizations.

use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackConfig};
use crate::data::{split_half, CorruptionKind, Dataset};
use crate::diffcore::{argmax_rows, Element, Model, Tensor};
use crate::error::{Error, Result};
use crate::losses::{softmax, LossKind};
use crate::rng::{self, EVAL_SEED};
use crate::train::{fit, MetricsRecord, TrainConfig};

/// Evaluation batches are attacked in fixed-size chunks; the chunk index is
/// mixed into the attack seed so per-sample noise does not repeat between
/// chunks.
const EVAL_CHUNK: usize = 128;

/// The attack battery run against a model: natural accuracy plus FGSM,
/// PGD, CW-margin, and the multi-restart strong ensemble, all at the same
/// budget. epsilon = 0 means no attack and every accuracy equals the
/// natural one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSuite {
    pub epsilon: f64,
    pub pgd_alpha: f64,
    pub pgd_steps: usize,
    pub fgsm_alpha: f64,
    pub strong_restarts: usize,
    /// Cap on how many test samples the per-epoch evaluation sees; None
    /// evaluates the whole set.
    pub max_samples: Option<usize>,
    pub seed: u64,
}

impl Default for EvalSuite {
    fn default() -> Self {
        EvalSuite {
            epsilon: 8.0 / 255.0,
            pgd_alpha: 2.0 / 255.0,
            pgd_steps: 10,
            fgsm_alpha: 10.0 / 255.0,
            strong_restarts: 2,
            max_samples: None,
            seed: EVAL_SEED,
        }
    }
}

impl EvalSuite {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon != 0.0 && !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::config(format!(
                "evaluation epsilon must be 0 or in (0, 1], got {}",
                self.epsilon
            )));
        }
        if self.epsilon > 0.0 {
            if !(self.pgd_alpha > 0.0) || !(self.fgsm_alpha > 0.0) {
                return Err(Error::config("evaluation step sizes must be positive"));
            }
            if self.pgd_steps == 0 {
                return Err(Error::config("pgd_steps must be at least 1"));
            }
            if self.strong_restarts == 0 {
                return Err(Error::config("strong_restarts must be at least 1"));
            }
        }
        if let Some(0) = self.max_samples {
            return Err(Error::config("max_samples must be at least 1 when set"));
        }
        Ok(())
    }

    fn pgd_config(&self) -> AttackConfig {
        let mut cfg = AttackConfig::pgd10(self.epsilon);
        cfg.alpha = self.pgd_alpha;
        cfg.steps = self.pgd_steps;
        cfg.seed = self.seed;
        cfg
    }

    fn fgsm_config(&self) -> AttackConfig {
        let mut cfg = AttackConfig::fgsm_eval(self.epsilon);
        cfg.alpha = self.fgsm_alpha;
        cfg.seed = self.seed;
        cfg
    }

    fn cw_config(&self) -> AttackConfig {
        let mut cfg = self.pgd_config();
        cfg.target_loss = Some(LossKind::CwMargin);
        cfg
    }

    fn strong_config(&self) -> AttackConfig {
        let mut cfg = self.pgd_config();
        cfg.restarts = self.strong_restarts;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub natural_acc: f64,
    pub fgsm_acc: f64,
    pub pgd_acc: f64,
    pub cw_acc: f64,
    pub strong_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub cells: Vec<CorruptionCell>,
    pub mean_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionCell {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub acc: f64,
}

fn count_correct<T: Element>(model: &Model<T>, images: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    let logits = model.forward(images)?;
    Ok(argmax_rows(&logits)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count())
}

/// Natural accuracy over the whole dataset. Argmax ties go to the lowest
/// index.
pub fn dataset_accuracy<T: Element>(model: &Model<T>, set: &Dataset<T>) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0;
    for chunk in index_chunks(set.len()) {
        let (x, labels) = set.gather(&chunk);
        correct += count_correct(model, &x, &labels)?;
    }
    Ok(correct as f64 / set.len() as f64)
}

fn index_chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n)
        .step_by(EVAL_CHUNK)
        .map(move |start| (start..(start + EVAL_CHUNK).min(n)).collect())
}

#[derive(Clone, Copy)]
enum AttackOp {
    Fgsm,
    Pgd,
    Cw,
    Strong,
}

fn attacked_accuracy<T: Element>(
    model: &Model<T>,
    set: &Dataset<T>,
    base: &AttackConfig,
    op: AttackOp,
) -> Result<f64> {
    let mut correct = 0;
    for (c, chunk) in index_chunks(set.len()).enumerate() {
        let (x, labels) = set.gather(&chunk);
        let mut cfg = base.clone();
        cfg.seed = rng::mix_all(base.seed, &[c as u64]);
        let adv = match op {
            AttackOp::Fgsm => attacks::fgsm(model, &x, &labels, &cfg)?,
            AttackOp::Pgd => attacks::pgd(model, &x, &labels, &cfg)?,
            AttackOp::Cw => attacks::cw_pgd(model, &x, &labels, &cfg)?,
            AttackOp::Strong => attacks::strong_eval(model, &x, &labels, &cfg)?,
        };
        correct += count_correct(model, &adv.x_adv, &labels)?;
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Run the full suite. The strong ensemble shares its seed and restart 0
/// with the plain PGD and CW runs, so its accuracy can never exceed theirs.
pub fn evaluate<T: Element>(
    model: &Model<T>,
    test_set: &Dataset<T>,
    suite: &EvalSuite,
) -> Result<EvalReport> {
    suite.validate()?;
    let capped;
    let set = match suite.max_samples {
        Some(m) if m < test_set.len() => {
            capped = test_set.take(m);
            &capped
        }
        _ => test_set,
    };
    let natural_acc = dataset_accuracy(model, set)?;
    if suite.epsilon == 0.0 {
        return Ok(EvalReport {
            natural_acc,
            fgsm_acc: natural_acc,
            pgd_acc: natural_acc,
            cw_acc: natural_acc,
            strong_acc: natural_acc,
            corruption: None,
        });
    }
    Ok(EvalReport {
        natural_acc,
        fgsm_acc: attacked_accuracy(model, set, &suite.fgsm_config(), AttackOp::Fgsm)?,
        pgd_acc: attacked_accuracy(model, set, &suite.pgd_config(), AttackOp::Pgd)?,
        cw_acc: attacked_accuracy(model, set, &suite.cw_config(), AttackOp::Cw)?,
        strong_acc: attacked_accuracy(model, set, &suite.strong_config(), AttackOp::Strong)?,
        corruption: None,
    })
}

/// Accuracy per (corruption kind, severity) cell plus the unweighted mean.
pub fn corruption_eval<T: Element>(
    model: &Model<T>,
    test_set: &Dataset<T>,
    kinds: &[CorruptionKind],
    severities: &[u8],
    seed: u64,
) -> Result<CorruptionReport> {
    if kinds.is_empty() || severities.is_empty() {
        return Err(Error::config(
            "corruption evaluation needs at least one kind and one severity",
        ));
    }
    let mut cells = Vec::with_capacity(kinds.len() * severities.len());
    let mut sum = 0.0;
    for kind in kinds {
        for &severity in severities {
            let corrupted = crate::data::corrupt_dataset(test_set, kind, severity, seed)?;
            let acc = dataset_accuracy(model, &corrupted)?;
            sum += acc;
            cells.push(CorruptionCell {
                kind: *kind,
                severity,
                acc,
            });
        }
    }
    let mean_acc = sum / cells.len() as f64;
    Ok(CorruptionReport { cells, mean_acc })
}

/// Best/final/diff for one metric column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub best: f64,
    #[serde(rename = "final")]
    pub last: f64,
    pub diff: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitGap {
    pub natural: GapRow,
    pub fgsm: GapRow,
    pub pgd: GapRow,
    pub cw: GapRow,
    pub strong: GapRow,
}

fn gap_of(values: impl Iterator<Item = f64> + Clone) -> GapRow {
    let best = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let last = values.last().unwrap();
    GapRow {
        best,
        last,
        diff: best - last,
    }
}

/// Best over epochs, final epoch, and their difference for every accuracy
/// column. diff is nonnegative because the final value is one of the
/// candidates for the maximum.
pub fn overfit_gap(metrics: &[MetricsRecord]) -> Result<OverfitGap> {
    if metrics.is_empty() {
        return Err(Error::config("overfit_gap needs at least one epoch"));
    }
    Ok(OverfitGap {
        natural: gap_of(metrics.iter().map(|m| m.natural_acc)),
        fgsm: gap_of(metrics.iter().map(|m| m.fgsm_acc)),
        pgd: gap_of(metrics.iter().map(|m| m.pgd_acc)),
        cw: gap_of(metrics.iter().map(|m| m.cw_acc)),
        strong: gap_of(metrics.iter().map(|m| m.strong_acc)),
    })
}

/// Which space the decomposition's prediction vectors live in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSpace {
    /// Softmax probabilities against one-hot targets (bounded, default).
    Softmax,
    /// Raw logits; the additive identity holds here too.
    Logit,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BvConfig {
    /// Recipe applied identically to both halves; its attack epsilon is
    /// overwritten by each sweep point.
    pub train: TrainConfig,
    /// Training budgets to sweep.
    pub sweep_eps: Vec<f64>,
    #[serde(default)]
    pub split_seed: u64,
    /// Degenerate control: train both models on the same half with the same
    /// seed, which must drive the variance to zero.
    #[serde(default)]
    pub same_half: bool,
    #[serde(default = "default_space")]
    pub space: PredictionSpace,
}

fn default_space() -> PredictionSpace {
    PredictionSpace::Softmax
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BvTriple {
    pub risk: f64,
    pub bias: f64,
    pub variance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BvPoint {
    pub train_eps: f64,
    pub natural: BvTriple,
    pub adversarial: BvTriple,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BvReport {
    pub space: PredictionSpace,
    pub points: Vec<BvPoint>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Per-sample prediction vectors, attacked first when an attack is given.
fn prediction_rows<T: Element>(
    model: &Model<T>,
    set: &Dataset<T>,
    attack: Option<&AttackConfig>,
    space: PredictionSpace,
) -> Result<Vec<Vec<f64>>> {
    let classes = set.classes;
    let mut rows = Vec::with_capacity(set.len());
    for (c, chunk) in index_chunks(set.len()).enumerate() {
        let (x, labels) = set.gather(&chunk);
        let x = match attack {
            Some(base) if base.epsilon > 0.0 => {
                let mut cfg = base.clone();
                cfg.seed = rng::mix_all(base.seed, &[c as u64]);
                attacks::pgd(model, &x, &labels, &cfg)?.x_adv
            }
            _ => x,
        };
        let logits = model.forward(&x)?;
        for i in 0..chunk.len() {
            let row = &logits.data()[i * classes..(i + 1) * classes];
            let g: Vec<f64> = match space {
                PredictionSpace::Softmax => {
                    softmax(row).into_iter().map(|v| v.to_f64()).collect()
                }
                PredictionSpace::Logit => row.iter().map(|&v| v.to_f64()).collect(),
            };
            rows.push(g);
        }
    }
    Ok(rows)
}

/// Empirical two-model decomposition at one sweep point. With the mean
/// prediction g_hat = (g1+g2)/2, the identity
/// mean_m d(y, g_m) = d(y, g_hat) + mean_m d(g_m, g_hat) holds exactly for
/// squared Euclidean d, so risk = bias + variance up to rounding.
fn decompose(rows1: &[Vec<f64>], rows2: &[Vec<f64>], labels: &[usize], classes: usize) -> BvTriple {
    let n = labels.len() as f64;
    let mut risk = 0.0;
    let mut bias = 0.0;
    let mut variance = 0.0;
    for ((g1, g2), &label) in rows1.iter().zip(rows2).zip(labels) {
        let mut y = vec![0.0; classes];
        y[label] = 1.0;
        let ghat: Vec<f64> = g1.iter().zip(g2).map(|(&a, &b)| 0.5 * (a + b)).collect();
        risk += 0.5 * (sq_dist(&y, g1) + sq_dist(&y, g2));
        bias += sq_dist(&y, &ghat);
        variance += 0.5 * (sq_dist(g1, &ghat) + sq_dist(g2, &ghat));
    }
    BvTriple {
        risk: risk / n,
        bias: bias / n,
        variance: variance / n,
    }
}

/// Split the training data in half, fit one model per half at each sweep
/// budget, and decompose the test risk. The adversarial variant attacks
/// each half-model independently with the fixed evaluation attack.
pub fn bias_variance<T: Element>(
    train_set: &Dataset<T>,
    test_set: &Dataset<T>,
    cfg: &BvConfig,
    eval_attack: &AttackConfig,
) -> Result<BvReport> {
    if cfg.sweep_eps.is_empty() {
        return Err(Error::config("bias-variance sweep needs at least one epsilon"));
    }
    if eval_attack.epsilon > 0.0 {
        eval_attack.validate()?;
    }
    let (first, second) = split_half(train_set, cfg.split_seed);
    let halves = if cfg.same_half {
        (first.clone(), first)
    } else {
        (first, second)
    };
    let mut points = Vec::with_capacity(cfg.sweep_eps.len());
    for &eps in &cfg.sweep_eps {
        let mut tc = cfg.train.clone();
        tc.attack.epsilon = eps;
        let f1: Model<T> = fit(&tc, &halves.0)?;
        let f2: Model<T> = fit(&tc, &halves.1)?;
        let nat1 = prediction_rows(&f1, test_set, None, cfg.space)?;
        let nat2 = prediction_rows(&f2, test_set, None, cfg.space)?;
        let adv1 = prediction_rows(&f1, test_set, Some(eval_attack), cfg.space)?;
        let adv2 = prediction_rows(&f2, test_set, Some(eval_attack), cfg.space)?;
        points.push(BvPoint {
            train_eps: eps,
            natural: decompose(&nat1, &nat2, &test_set.labels, test_set.classes),
            adversarial: decompose(&adv1, &adv2, &test_set.labels, test_set.classes),
        });
    }
    Ok(BvReport {
        space: cfg.space,
        points,
    })
}
