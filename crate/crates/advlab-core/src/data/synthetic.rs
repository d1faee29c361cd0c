//! Seeded synthetic classification data: one random template image per
//! class, samples scattered around the templates by Gaussian pixel noise.

use crate::data::Dataset;
use crate::diffcore::{Element, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, SALT_SYNTH, SALT_TEMPLATE};

/// Generate `classes * per_class` samples of shape [channels, height,
/// width]. Class templates depend only on (seed, class), so datasets built
/// from the same seed share them; `partition` selects an independent noise
/// stream, letting train and test sets come from the same distribution.
pub fn make_synthetic<T: Element>(
    classes: usize,
    per_class: usize,
    channels: usize,
    height: usize,
    width: usize,
    sigma: f64,
    seed: u64,
    partition: u64,
) -> Result<Dataset<T>> {
    if classes < 2 {
        return Err(Error::config("synthetic data needs at least 2 classes"));
    }
    if per_class == 0 || channels == 0 || height == 0 || width == 0 {
        return Err(Error::config(
            "synthetic data needs positive per_class, channels, height, width",
        ));
    }
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::config(format!(
            "synthetic noise sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let per_sample = channels * height * width;
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * per_sample);
    let mut labels = Vec::with_capacity(n);
    for class in 0..classes {
        let mut template = vec![0.0f64; per_sample];
        let mut tstream = rng::stream(seed, &[SALT_TEMPLATE, class as u64]);
        for t in &mut template {
            *t = rng::uniform_in(&mut tstream, 0.0, 1.0);
        }
        for sample in 0..per_class {
            let mut sstream =
                rng::stream(seed, &[SALT_SYNTH, partition, class as u64, sample as u64]);
            for &t in &template {
                let v = (t + sigma * rng::standard_normal(&mut sstream)).clamp(0.0, 1.0);
                data.push(T::from_f64(v));
            }
            labels.push(class);
        }
    }
    Dataset::new(
        Tensor::new(vec![n, channels, height, width], data)?,
        labels,
        classes,
    )
}

/// Train and test sets drawn around the same class templates.
#[allow(clippy::too_many_arguments)]
pub fn make_synthetic_pair<T: Element>(
    classes: usize,
    per_class_train: usize,
    per_class_test: usize,
    channels: usize,
    height: usize,
    width: usize,
    sigma: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    let train = make_synthetic(
        classes,
        per_class_train,
        channels,
        height,
        width,
        sigma,
        seed,
        0,
    )?;
    let test = make_synthetic(
        classes,
        per_class_test,
        channels,
        height,
        width,
        sigma,
        seed,
        1,
    )?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_repeats_the_template() {
        let ds = make_synthetic::<f64>(2, 3, 1, 2, 2, 0.0, 5, 0).unwrap();
        let first = &ds.images.data()[0..4];
        for s in 1..3 {
            assert_eq!(&ds.images.data()[s * 4..(s + 1) * 4], first);
        }
        let other_class = &ds.images.data()[3 * 4..4 * 4];
        assert_ne!(other_class, first);
    }

    #[test]
    fn different_seeds_give_different_templates() {
        let a = make_synthetic::<f64>(2, 1, 1, 2, 2, 0.0, 1, 0).unwrap();
        let b = make_synthetic::<f64>(2, 1, 1, 2, 2, 0.0, 2, 0).unwrap();
        assert_ne!(a.images.data(), b.images.data());
    }

    #[test]
    fn partitions_share_templates_but_not_noise() {
        let (train, test) = make_synthetic_pair::<f64>(2, 4, 4, 1, 3, 3, 0.05, 9).unwrap();
        assert_ne!(train.images.data(), test.images.data());
        // With sigma 0 both partitions collapse onto the shared templates.
        let (t0, t1) = make_synthetic_pair::<f64>(2, 2, 2, 1, 3, 3, 0.0, 9).unwrap();
        assert_eq!(t0.images.data()[0..9], t1.images.data()[0..9]);
    }

    /// Independent least-squares classifier, solved by Gaussian elimination
    /// on the normal equations. Kept free of the crate's model code on
    /// purpose: it cross-checks that the generated task is linearly easy.
    fn least_squares_accuracy(train: &Dataset<f64>, test: &Dataset<f64>) -> f64 {
        let d: usize = train.sample_shape().iter().product();
        let c = train.classes;
        let n = train.len();
        let x = train.images.data();
        // Normal matrix A = X^T X + lambda I (d x d), targets B = X^T Y.
        let mut a = vec![0.0f64; d * d];
        let mut b = vec![0.0f64; d * c];
        for i in 0..n {
            let xi = &x[i * d..(i + 1) * d];
            for p in 0..d {
                for q in 0..d {
                    a[p * d + q] += xi[p] * xi[q];
                }
                b[p * c + train.labels[i]] += xi[p];
            }
        }
        for p in 0..d {
            a[p * d + p] += 1e-6;
        }
        // Solve A W = B by row reduction with partial pivoting.
        for col in 0..d {
            let mut pivot = col;
            for r in col + 1..d {
                if a[r * d + col].abs() > a[pivot * d + col].abs() {
                    pivot = r;
                }
            }
            for q in 0..d {
                a.swap(col * d + q, pivot * d + q);
            }
            for q in 0..c {
                b.swap(col * c + q, pivot * c + q);
            }
            let diag = a[col * d + col];
            for r in 0..d {
                if r == col {
                    continue;
                }
                let factor = a[r * d + col] / diag;
                if factor == 0.0 {
                    continue;
                }
                for q in col..d {
                    a[r * d + q] -= factor * a[col * d + q];
                }
                for q in 0..c {
                    b[r * c + q] -= factor * b[col * c + q];
                }
            }
        }
        let w: Vec<f64> = (0..d * c)
            .map(|ix| b[ix] / a[(ix / c) * d + (ix / c)])
            .collect();

        let xt = test.images.data();
        let mut correct = 0;
        for i in 0..test.len() {
            let xi = &xt[i * d..(i + 1) * d];
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for class in 0..c {
                let score: f64 = (0..d).map(|p| xi[p] * w[p * c + class]).sum();
                if score > best_score {
                    best_score = score;
                    best = class;
                }
            }
            if best == test.labels[i] {
                correct += 1;
            }
        }
        correct as f64 / test.len() as f64
    }

    #[test]
    fn synthetic_task_is_linearly_separable() {
        let ds = make_synthetic::<f64>(3, 200, 3, 8, 8, 0.05, 42, 0).unwrap();
        let (train, test) = crate::data::split_half(&ds, 1);
        let acc = least_squares_accuracy(&train, &test);
        assert!(acc > 0.95, "least squares reached only {acc}");
    }
}
