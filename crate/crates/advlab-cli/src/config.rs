//! Experiment configs: one JSON document selecting a dataset, a training
//! recipe, and the optional analysis sections.
//!
//! Every key is optional; the defaults reproduce the evaluation protocol
//! (SGD momentum 0.9, weight decay 5e-4, one-cycle peak 0.2 over 200
//! epochs, 10-step PGD at alpha 2/255 and epsilon 8/255) on the synthetic
//! reference task. Unknown keys are rejected with their JSON path.

use std::path::{Path, PathBuf};

use advlab_core::analysis::{BvConfig, PredictionSpace};
use advlab_core::attacks::AttackConfig;
use advlab_core::data::{
    load_cifar_binary, load_idx_dataset, make_synthetic_pair, CorruptionKind, Dataset,
};
use advlab_core::diffcore::Tensor;
use advlab_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::output::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Where outputs land; the --out-dir flag overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Settings for the bvdecomp subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bv: Option<BvSection>,
    /// Settings for the corrupt-eval subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Per-class random templates plus Gaussian pixel noise, the desk-scale
    /// stand-in for CIFAR-sized benchmarks.
    Synthetic {
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_per_class_train")]
        per_class_train: usize,
        #[serde(default = "default_per_class_test")]
        per_class_test: usize,
        #[serde(default = "default_channels")]
        channels: usize,
        #[serde(default = "default_side")]
        height: usize,
        #[serde(default = "default_side")]
        width: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Concatenation of CIFAR-style binary batch files (3073-byte records).
    CifarBinary {
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
        #[serde(default = "default_file_classes")]
        classes: usize,
    },
    /// IDX image/label file pairs.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "default_file_classes")]
        classes: usize,
    },
}

fn default_classes() -> usize {
    3
}

fn default_per_class_train() -> usize {
    64
}

fn default_per_class_test() -> usize {
    64
}

fn default_channels() -> usize {
    3
}

fn default_side() -> usize {
    8
}

fn default_sigma() -> f64 {
    0.2
}

fn default_file_classes() -> usize {
    10
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            classes: default_classes(),
            per_class_train: default_per_class_train(),
            per_class_test: default_per_class_test(),
            channels: default_channels(),
            height: default_side(),
            width: default_side(),
            sigma: default_sigma(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BvSection {
    /// Training budgets to sweep.
    pub sweep_eps: Vec<f64>,
    #[serde(default)]
    pub split_seed: u64,
    /// Degenerate control: both models see the same half, driving the
    /// variance to zero.
    #[serde(default)]
    pub same_half: bool,
    #[serde(default = "default_space")]
    pub space: PredictionSpace,
    /// Attack applied to each half's model when collecting adversarial
    /// predictions; absent means the training config's evaluation attack.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_attack: Option<AttackConfig>,
}

fn default_space() -> PredictionSpace {
    PredictionSpace::Softmax
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSection {
    pub kinds: Vec<CorruptionKind>,
    #[serde(default = "default_severities")]
    pub severities: Vec<u8>,
    #[serde(default)]
    pub seed: u64,
}

fn default_severities() -> Vec<u8> {
    vec![1, 2, 3, 4, 5]
}

/// Parse config text: fill protocol presets on the raw document, then do a
/// strict typed parse, then validate. Errors name the offending JSON path.
pub fn load_experiment(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| CliError::input(format!("config is not valid json: {e}")))?;
    apply_protocol_presets(&mut value);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        CliError::input(format!("config key \"{}\": {}", e.path(), e.inner()))
    })?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn load_experiment_file(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
    load_experiment(&text)
}

/// The canonical echo: all defaults spelled out. Parsing this text again is
/// a fixed point.
pub fn canonical_json(cfg: &ExperimentConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

/// Cross-field defaults that cannot live in serde field defaults.
///
/// Square-loss training under a piecewise schedule needs a much smaller
/// base learning rate to avoid early gradient explosion, so an unspecified
/// base_lr becomes 0.001 instead of failing to parse. A run declared as
/// single-step noise training fills the attack shape that paradigm demands
/// (one step, no delta clamp, alpha equal to the budget) for any key the
/// document leaves out.
fn apply_protocol_presets(value: &mut serde_json::Value) {
    let Some(train) = value.get_mut("train").and_then(|t| t.as_object_mut()) else {
        return;
    };

    let loss_is_square = train
        .get("loss")
        .and_then(|l| l.get("kind"))
        .and_then(|k| k.as_str())
        .is_some_and(|k| k == "rsl" || k == "osl");
    if loss_is_square {
        if let Some(s) = train.get_mut("schedule").and_then(|s| s.as_object_mut()) {
            if s.get("kind").and_then(|k| k.as_str()) == Some("piecewise")
                && !s.contains_key("base_lr")
            {
                s.insert("base_lr".into(), serde_json::json!(0.001));
            }
        }
    }

    if train.get("paradigm").and_then(|p| p.as_str()) == Some("nfgsm_at") {
        let attack = train
            .entry("attack")
            .or_insert_with(|| serde_json::json!({}));
        if let Some(a) = attack.as_object_mut() {
            let epsilon = a
                .get("epsilon")
                .and_then(|e| e.as_f64())
                .unwrap_or(8.0 / 255.0);
            a.entry("steps").or_insert(serde_json::json!(1));
            a.entry("clip_delta").or_insert(serde_json::json!(false));
            a.entry("alpha").or_insert(serde_json::json!(epsilon));
        }
    }
}

fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cfg.train
        .validate()
        .map_err(|e| CliError::input(format!("config key \"train\": {e}")))?;
    match &cfg.dataset {
        DatasetConfig::Synthetic {
            classes,
            per_class_train,
            per_class_test,
            channels,
            height,
            width,
            sigma,
            ..
        } => {
            if *classes < 2 {
                return Err(CliError::input(format!(
                    "config key \"dataset.classes\": need at least 2 classes, got {classes}"
                )));
            }
            if *per_class_train == 0 || *per_class_test == 0 {
                return Err(CliError::input(
                    "config key \"dataset\": per-class sample counts must be positive",
                ));
            }
            if *channels == 0 || *height == 0 || *width == 0 {
                return Err(CliError::input(
                    "config key \"dataset\": image dimensions must be positive",
                ));
            }
            if !(*sigma >= 0.0 && sigma.is_finite()) {
                return Err(CliError::input(format!(
                    "config key \"dataset.sigma\": must be a finite non-negative number, got {sigma}"
                )));
            }
        }
        DatasetConfig::CifarBinary { train, test, classes } => {
            if train.is_empty() || test.is_empty() {
                return Err(CliError::input(
                    "config key \"dataset\": need at least one train and one test file",
                ));
            }
            if *classes < 2 {
                return Err(CliError::input(format!(
                    "config key \"dataset.classes\": need at least 2 classes, got {classes}"
                )));
            }
        }
        DatasetConfig::Idx { classes, .. } => {
            if *classes < 2 {
                return Err(CliError::input(format!(
                    "config key \"dataset.classes\": need at least 2 classes, got {classes}"
                )));
            }
        }
    }
    if let Some(bv) = &cfg.bv {
        if bv.sweep_eps.is_empty() {
            return Err(CliError::input(
                "config key \"bv.sweep_eps\": sweep needs at least one epsilon",
            ));
        }
        for &e in &bv.sweep_eps {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(CliError::input(format!(
                    "config key \"bv.sweep_eps\": budgets must be finite and non-negative, got {e}"
                )));
            }
        }
        if let Some(a) = &bv.eval_attack {
            if a.epsilon > 0.0 {
                a.validate()
                    .map_err(|e| CliError::input(format!("config key \"bv.eval_attack\": {e}")))?;
            }
        }
    }
    if let Some(c) = &cfg.corruption {
        if c.kinds.is_empty() || c.severities.is_empty() {
            return Err(CliError::input(
                "config key \"corruption\": need at least one kind and one severity",
            ));
        }
        for kind in &c.kinds {
            kind.validate()
                .map_err(|e| CliError::input(format!("config key \"corruption.kinds\": {e}")))?;
        }
        for &s in &c.severities {
            if !(1..=5).contains(&s) {
                return Err(CliError::input(format!(
                    "config key \"corruption.severities\": severity must be in 1..=5, got {s}"
                )));
            }
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Assemble the core bias-variance config from the bv section.
    pub fn bv_config(&self) -> Result<(BvConfig, AttackConfig), CliError> {
        let section = self.bv.as_ref().ok_or_else(|| {
            CliError::input("config key \"bv\": bvdecomp needs a bv section with sweep_eps")
        })?;
        let eval_attack = section.eval_attack.clone().unwrap_or_else(|| {
            let mut a = AttackConfig::pgd10(self.train.eval.epsilon);
            a.alpha = self.train.eval.pgd_alpha;
            a.steps = self.train.eval.pgd_steps;
            a.seed = self.train.eval.seed;
            a
        });
        Ok((
            BvConfig {
                train: self.train.clone(),
                sweep_eps: section.sweep_eps.clone(),
                split_seed: section.split_seed,
                same_half: section.same_half,
                space: section.space,
            },
            eval_attack,
        ))
    }
}

/// Resolve a dataset-file path: absolute stays as is, relative joins the
/// data directory from --data-dir or ADVLAB_DATA_DIR.
fn resolve_path(path: &Path, data_dir: Option<&Path>) -> Result<PathBuf, CliError> {
    if path.is_absolute() {
        return Ok(path.to_path_buf());
    }
    match data_dir {
        Some(dir) => Ok(dir.join(path)),
        None => Err(CliError::input(format!(
            "relative dataset path {} needs a data directory: pass --data-dir or set ADVLAB_DATA_DIR",
            path.display()
        ))),
    }
}

fn concat_datasets(parts: Vec<Dataset<f64>>) -> Result<Dataset<f64>, CliError> {
    let mut iter = parts.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| CliError::input("dataset file list is empty"))?;
    let classes = first.classes;
    let sample_shape = first.sample_shape();
    let mut shape = first.images.shape().to_vec();
    let mut data = first.images.into_data();
    let mut labels = first.labels;
    for part in iter {
        if part.sample_shape() != sample_shape {
            return Err(CliError::input(format!(
                "dataset files disagree on sample shape: {:?} vs {:?}",
                sample_shape,
                part.sample_shape()
            )));
        }
        shape[0] += part.len();
        data.extend(part.images.into_data());
        labels.extend(part.labels);
    }
    let images = Tensor::new(shape, data)
        .map_err(|e| CliError::input(format!("concatenated dataset is inconsistent: {e}")))?;
    Dataset::new(images, labels, classes)
        .map_err(|e| CliError::input(format!("loaded dataset is invalid: {e}")))
}

/// Load the (train, test) pair the config names.
pub fn load_datasets(
    cfg: &DatasetConfig,
    data_dir: Option<&Path>,
) -> Result<(Dataset<f64>, Dataset<f64>), CliError> {
    match cfg {
        DatasetConfig::Synthetic {
            classes,
            per_class_train,
            per_class_test,
            channels,
            height,
            width,
            sigma,
            seed,
        } => make_synthetic_pair(
            *classes,
            *per_class_train,
            *per_class_test,
            *channels,
            *height,
            *width,
            *sigma,
            *seed,
        )
        .map_err(|e| CliError::input(format!("synthetic dataset: {e}"))),
        DatasetConfig::CifarBinary { train, test, classes } => {
            let load_all = |paths: &[PathBuf]| -> Result<Dataset<f64>, CliError> {
                let mut parts = Vec::with_capacity(paths.len());
                for p in paths {
                    let full = resolve_path(p, data_dir)?;
                    let mut part = load_cifar_binary::<f64>(&full)
                        .map_err(|e| CliError::input(format!("{}: {e}", full.display())))?;
                    part.classes = *classes;
                    part.validate()
                        .map_err(|e| CliError::input(format!("{}: {e}", full.display())))?;
                    parts.push(part);
                }
                concat_datasets(parts)
            };
            Ok((load_all(train)?, load_all(test)?))
        }
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            classes,
        } => {
            let pair = |imgs: &Path, lbls: &Path| -> Result<Dataset<f64>, CliError> {
                let imgs = resolve_path(imgs, data_dir)?;
                let lbls = resolve_path(lbls, data_dir)?;
                load_idx_dataset::<f64>(&imgs, &lbls, *classes)
                    .map_err(|e| CliError::input(format!("{}: {e}", imgs.display())))
            };
            Ok((
                pair(train_images, train_labels)?,
                pair(test_images, test_labels)?,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use advlab_core::losses::LossKind;
    use advlab_core::optim::Schedule;
    use advlab_core::train::Paradigm;

    #[test]
    fn empty_document_parses_to_protocol_defaults() {
        let cfg = load_experiment("{}").unwrap();
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.train.batch_size, 128);
        assert!((cfg.train.optimizer.momentum - 0.9).abs() < 1e-15);
        assert!((cfg.train.optimizer.weight_decay - 5e-4).abs() < 1e-15);
        assert!((cfg.train.attack.epsilon - 8.0 / 255.0).abs() < 1e-15);
        assert!((cfg.train.attack.alpha - 2.0 / 255.0).abs() < 1e-15);
        assert_eq!(cfg.train.attack.steps, 10);
        match cfg.train.schedule {
            Schedule::OneCycle { max_lr, total_epochs, .. } => {
                assert!((max_lr - 0.2).abs() < 1e-15);
                assert_eq!(total_epochs, 200);
            }
            other => panic!("unexpected default schedule {other:?}"),
        }
        assert_eq!(cfg.dataset, DatasetConfig::default());
    }

    #[test]
    fn unknown_key_is_named_with_its_path() {
        let err = load_experiment(r#"{"train": {"optimizer": {"momentun": 0.9}}}"#).unwrap_err();
        assert_eq!(err.code(), 2);
        assert!(
            err.message().contains("train.optimizer"),
            "{}",
            err.message()
        );
        assert!(err.message().contains("momentun"), "{}", err.message());
    }

    #[test]
    fn canonical_echo_is_a_fixed_point() {
        let texts = [
            "{}",
            r#"{"train": {"loss": {"kind": "rsl", "k": 2.0, "m": 1.0}, "epochs": 30}}"#,
            r#"{"dataset": {"source": "synthetic", "classes": 4}, "bv": {"sweep_eps": [0.0, 0.03]}}"#,
        ];
        for text in texts {
            let once = load_experiment(text).unwrap();
            let echo = canonical_json(&once);
            let twice = load_experiment(&echo).unwrap();
            assert_eq!(once, twice, "reparse changed the config for {text}");
            assert_eq!(echo, canonical_json(&twice), "echo is not a fixed point for {text}");
        }
    }

    #[test]
    fn square_loss_piecewise_gets_the_small_base_lr() {
        let cfg = load_experiment(
            r#"{"train": {"loss": {"kind": "rsl", "k": 2.0, "m": 1.0},
                          "schedule": {"kind": "piecewise"}}}"#,
        )
        .unwrap();
        match cfg.train.schedule {
            Schedule::Piecewise { base_lr, .. } => assert!((base_lr - 0.001).abs() < 1e-15),
            other => panic!("unexpected schedule {other:?}"),
        }
        // An explicit base_lr wins.
        let cfg = load_experiment(
            r#"{"train": {"loss": {"kind": "rsl", "k": 2.0, "m": 1.0},
                          "schedule": {"kind": "piecewise", "base_lr": 0.05}}}"#,
        )
        .unwrap();
        match cfg.train.schedule {
            Schedule::Piecewise { base_lr, .. } => assert!((base_lr - 0.05).abs() < 1e-15),
            other => panic!("unexpected schedule {other:?}"),
        }
        // Cross-entropy still requires base_lr to be spelled out.
        let err = load_experiment(r#"{"train": {"schedule": {"kind": "piecewise"}}}"#).unwrap_err();
        assert!(err.message().contains("base_lr"), "{}", err.message());
    }

    #[test]
    fn nfgsm_paradigm_fills_the_attack_shape() {
        let cfg = load_experiment(r#"{"train": {"paradigm": "nfgsm_at"}}"#).unwrap();
        assert_eq!(cfg.train.paradigm, Paradigm::NfgsmAt);
        assert_eq!(cfg.train.attack.steps, 1);
        assert!(!cfg.train.attack.clip_delta);
        assert!((cfg.train.attack.alpha - 8.0 / 255.0).abs() < 1e-15);
        // Explicit keys are respected.
        let cfg = load_experiment(
            r#"{"train": {"paradigm": "nfgsm_at",
                          "attack": {"epsilon": 0.05, "noise_scale": 1.5}}}"#,
        )
        .unwrap();
        assert!((cfg.train.attack.alpha - 0.05).abs() < 1e-15);
        assert!((cfg.train.attack.noise_scale - 1.5).abs() < 1e-15);
    }

    #[test]
    fn attack_target_loss_stays_inherited_unless_named() {
        let cfg = load_experiment(r#"{"train": {"loss": {"kind": "osl"}}}"#).unwrap();
        assert!(cfg.train.attack.target_loss.is_none());
        let cfg = load_experiment(
            r#"{"train": {"attack": {"target_loss": {"kind": "cw_margin"}}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.train.attack.target_loss, Some(LossKind::CwMargin));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(load_experiment(r#"{"dataset": {"source": "synthetic", "classes": 1}}"#).is_err());
        assert!(load_experiment(r#"{"bv": {"sweep_eps": []}}"#).is_err());
        assert!(load_experiment(
            r#"{"corruption": {"kinds": [{"kind": "identity"}], "severities": [6]}}"#
        )
        .is_err());
        assert!(load_experiment(r#"{"train": {"batch_size": 0}}"#).is_err());
        assert!(load_experiment("not json").is_err());
    }

    #[test]
    fn synthetic_pair_loads_and_matches_the_default_arch() {
        let cfg = load_experiment("{}").unwrap();
        let (train, test) = load_datasets(&cfg.dataset, None).unwrap();
        assert_eq!(train.len(), 3 * 64);
        assert_eq!(test.len(), 3 * 64);
        assert_eq!(train.sample_shape(), vec![3, 8, 8]);
        cfg.train.check_dataset(&train, "training").unwrap();
    }

    #[test]
    fn relative_file_paths_need_a_data_dir() {
        let cfg = load_experiment(
            r#"{"dataset": {"source": "cifar_binary",
                            "train": ["a.bin"], "test": ["b.bin"]}}"#,
        )
        .unwrap();
        let err = load_datasets(&cfg.dataset, None).unwrap_err();
        assert!(err.message().contains("ADVLAB_DATA_DIR"), "{}", err.message());
        assert_eq!(err.code(), 2);
    }
}
