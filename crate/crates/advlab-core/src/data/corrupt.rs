//! Parametric image corruptions with a 1..5 severity scale. Severity
//! multiplies each corruption's deviation from the identity, so severity 0
//! would be a no-op and higher levels are strictly stronger.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffcore::{Element, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, SALT_CORRUPT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionKind {
    Identity,
    /// Additive pixel noise with standard deviation sigma * severity.
    GaussianNoise { sigma: f64 },
    /// Mean filter with window radius `radius * severity`.
    BoxBlur { radius: usize },
    /// Additive brightness shift `shift * severity`.
    Brightness { shift: f64 },
    /// Contrast about 0.5 with factor 1 + (scale - 1) * severity, so
    /// scale = 1 is the identity at every severity.
    Contrast { scale: f64 },
}

impl CorruptionKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CorruptionKind::Identity => {}
            CorruptionKind::GaussianNoise { sigma } => {
                if sigma <= 0.0 || !sigma.is_finite() {
                    return Err(Error::config(format!(
                        "gaussian_noise sigma must be positive, got {sigma}"
                    )));
                }
            }
            CorruptionKind::BoxBlur { radius } => {
                if radius == 0 {
                    return Err(Error::config("box_blur radius must be positive"));
                }
            }
            CorruptionKind::Brightness { shift } => {
                if !shift.is_finite() {
                    return Err(Error::config("brightness shift must be finite"));
                }
            }
            CorruptionKind::Contrast { scale } => {
                if scale <= 0.0 || !scale.is_finite() {
                    return Err(Error::config(format!(
                        "contrast scale must be positive, got {scale}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_severity(severity: u8) -> Result<()> {
    if !(1..=5).contains(&severity) {
        return Err(Error::config(format!(
            "corruption severity must be in 1..=5, got {severity}"
        )));
    }
    Ok(())
}

/// Corrupt one [channels, h, w] image. Randomness comes only from the
/// caller's stream, so (seed, kind, severity) fixes the output.
pub fn corrupt<T: Element>(
    image: &Tensor<T>,
    kind: &CorruptionKind,
    severity: u8,
    stream: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    check_severity(severity)?;
    kind.validate()?;
    if image.shape().len() != 3 {
        return Err(Error::ShapeMismatch {
            context: "corrupt input".into(),
            expected: "[channels, h, w]".into(),
            actual: format!("{:?}", image.shape()),
        });
    }
    let s = severity as f64;
    let out = match *kind {
        CorruptionKind::Identity => image.clone(),
        CorruptionKind::GaussianNoise { sigma } => {
            let eff = sigma * s;
            image.map(|v| {
                T::from_f64((v.to_f64() + eff * rng::standard_normal(stream)).clamp(0.0, 1.0))
            })
        }
        CorruptionKind::BoxBlur { radius } => box_blur(image, radius * severity as usize),
        CorruptionKind::Brightness { shift } => {
            let eff = shift * s;
            image.map(|v| T::from_f64((v.to_f64() + eff).clamp(0.0, 1.0)))
        }
        CorruptionKind::Contrast { scale } => {
            let eff = 1.0 + (scale - 1.0) * s;
            if eff == 1.0 {
                // 0.5 + 1.0 * (v - 0.5) is not bitwise v, so keep the
                // no-op case an actual no-op.
                image.clone()
            } else {
                image.map(|v| T::from_f64((0.5 + eff * (v.to_f64() - 0.5)).clamp(0.0, 1.0)))
            }
        }
    };
    Ok(out)
}

fn box_blur<T: Element>(image: &Tensor<T>, radius: usize) -> Tensor<T> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let src = image.data();
    let mut data = vec![T::zero(); c * h * w];
    let r = radius as i64;
    for ch in 0..c {
        for row in 0..h as i64 {
            for col in 0..w as i64 {
                let mut acc = 0.0;
                let mut count = 0.0;
                for dr in -r..=r {
                    let rr = row + dr;
                    if rr < 0 || rr >= h as i64 {
                        continue;
                    }
                    for dc in -r..=r {
                        let cc = col + dc;
                        if cc < 0 || cc >= w as i64 {
                            continue;
                        }
                        acc += src[(ch * h + rr as usize) * w + cc as usize].to_f64();
                        count += 1.0;
                    }
                }
                data[(ch * h + row as usize) * w + col as usize] =
                    T::from_f64((acc / count).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(image.shape().to_vec(), data).unwrap()
}

/// Corrupt every image in the dataset, one derived stream per sample.
pub fn corrupt_dataset<T: Element>(
    dataset: &Dataset<T>,
    kind: &CorruptionKind,
    severity: u8,
    seed: u64,
) -> Result<Dataset<T>> {
    let shape = dataset.sample_shape();
    let per_sample: usize = shape.iter().product();
    let mut data = Vec::with_capacity(dataset.images.len());
    for i in 0..dataset.len() {
        let img = Tensor::new(
            shape.clone(),
            dataset.images.data()[i * per_sample..(i + 1) * per_sample].to_vec(),
        )?;
        let mut stream = rng::stream(seed, &[SALT_CORRUPT, i as u64]);
        let out = corrupt(&img, kind, severity, &mut stream)?;
        data.extend_from_slice(out.data());
    }
    Dataset::new(
        Tensor::new(dataset.images.shape().to_vec(), data)?,
        dataset.labels.clone(),
        dataset.classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image() -> Tensor<f64> {
        let data: Vec<f64> = (0..48).map(|i| i as f64 / 48.0).collect();
        Tensor::new(vec![3, 4, 4], data).unwrap()
    }

    fn mse(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / a.len() as f64
    }

    #[test]
    fn identity_is_bitwise_identity() {
        let img = gradient_image();
        for severity in 1..=5 {
            let mut stream = rng::stream(1, &[severity as u64]);
            let out = corrupt(&img, &CorruptionKind::Identity, severity, &mut stream).unwrap();
            assert_eq!(out.data(), img.data());
        }
    }

    #[test]
    fn unit_contrast_is_bitwise_identity() {
        let img = gradient_image();
        let kind = CorruptionKind::Contrast { scale: 1.0 };
        for severity in 1..=5 {
            let mut stream = rng::stream(2, &[severity as u64]);
            let out = corrupt(&img, &kind, severity, &mut stream).unwrap();
            assert_eq!(out.data(), img.data());
        }
    }

    #[test]
    fn gaussian_noise_mse_increases_with_severity() {
        let img = gradient_image();
        let kind = CorruptionKind::GaussianNoise { sigma: 0.02 };
        let mut prev = 0.0;
        for severity in 1..=5 {
            // Same stream per severity so only the scale changes.
            let mut stream = rng::stream(7, &[0]);
            let out = corrupt(&img, &kind, severity, &mut stream).unwrap();
            let err = mse(&img, &out);
            assert!(err > prev, "severity {severity}: {err} <= {prev}");
            prev = err;
        }
    }

    #[test]
    fn corruption_is_seed_deterministic() {
        let ds = Dataset::new(
            Tensor::<f64>::full(vec![3, 1, 4, 4], 0.5),
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        let kind = CorruptionKind::GaussianNoise { sigma: 0.05 };
        let a = corrupt_dataset(&ds, &kind, 3, 99).unwrap();
        let b = corrupt_dataset(&ds, &kind, 3, 99).unwrap();
        let c = corrupt_dataset(&ds, &kind, 3, 100).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_ne!(a.images.data(), c.images.data());
    }

    #[test]
    fn outputs_stay_in_range_and_shape() {
        let img = gradient_image();
        let kinds = [
            CorruptionKind::GaussianNoise { sigma: 0.2 },
            CorruptionKind::BoxBlur { radius: 1 },
            CorruptionKind::Brightness { shift: 0.3 },
            CorruptionKind::Contrast { scale: 2.0 },
        ];
        for kind in &kinds {
            for severity in 1..=5 {
                let mut stream = rng::stream(4, &[severity as u64]);
                let out = corrupt(&img, kind, severity, &mut stream).unwrap();
                assert_eq!(out.shape(), img.shape());
                assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn blur_flattens_towards_the_mean() {
        let img = gradient_image();
        let kind = CorruptionKind::BoxBlur { radius: 1 };
        let mut stream = rng::stream(5, &[0]);
        let light = corrupt(&img, &kind, 1, &mut stream).unwrap();
        let heavy = corrupt(&img, &kind, 5, &mut stream).unwrap();
        let var = |t: &Tensor<f64>| {
            let mean = t.data().iter().sum::<f64>() / t.len() as f64;
            t.data().iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / t.len() as f64
        };
        assert!(var(&heavy) < var(&light));
        assert!(var(&light) < var(&img));
    }

    #[test]
    fn severity_bounds_are_enforced() {
        let img = gradient_image();
        let mut stream = rng::stream(6, &[0]);
        assert!(corrupt(&img, &CorruptionKind::Identity, 0, &mut stream).is_err());
        assert!(corrupt(&img, &CorruptionKind::Identity, 6, &mut stream).is_err());
    }
}
