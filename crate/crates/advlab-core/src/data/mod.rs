//! Datasets: loaders for the two binary formats, a synthetic generator,
//! train-time augmentation, parametric corruptions, and the stratified
//! split used by the bias-variance experiments.

pub mod augment;
pub mod corrupt;
pub mod io;
pub mod synthetic;

pub use augment::{augment, AugmentOp, AugmentPipeline, EraseFill};
pub use corrupt::{corrupt, corrupt_dataset, CorruptionKind};
pub use io::{load_cifar_binary, load_idx, load_idx_dataset, write_cifar_binary, write_idx, IdxContent};
pub use synthetic::{make_synthetic, make_synthetic_pair};

use rand::seq::SliceRandom;

use crate::diffcore::{Element, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, SALT_SPLIT};

/// Labeled image set. Images are [N, channels, H, W] with pixels in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Element> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl<T: Element> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let ds = Dataset {
            images,
            labels,
            classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.shape().len() != 4 {
            return Err(Error::ShapeMismatch {
                context: "dataset images".into(),
                expected: "[n, channels, h, w]".into(),
                actual: format!("{:?}", self.images.shape()),
            });
        }
        if self.images.shape()[0] != self.labels.len() {
            return Err(Error::ShapeMismatch {
                context: "dataset labels".into(),
                expected: format!("{}", self.images.shape()[0]),
                actual: format!("{}", self.labels.len()),
            });
        }
        if self.classes < 2 {
            return Err(Error::config("dataset needs at least 2 classes"));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::config(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        let zero = T::zero();
        let one = T::one();
        if self.images.data().iter().any(|&v| v < zero || v > one) {
            return Err(Error::config("dataset pixels must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape [channels, h, w].
    pub fn sample_shape(&self) -> Vec<usize> {
        self.images.shape()[1..].to_vec()
    }

    /// Copy out the samples at `indices`, in the given order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let per_sample: usize = self.sample_shape().iter().product();
        let src = self.images.data();
        let mut data = Vec::with_capacity(indices.len() * per_sample);
        let mut labels = Vec::with_capacity(indices.len());
        for &ix in indices {
            data.extend_from_slice(&src[ix * per_sample..(ix + 1) * per_sample]);
            labels.push(self.labels[ix]);
        }
        let mut shape = vec![indices.len()];
        shape.extend(self.sample_shape());
        (Tensor::new(shape, data).unwrap(), labels)
    }

    /// New dataset with the samples at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Dataset<T> {
        let (images, labels) = self.gather(indices);
        Dataset {
            images,
            labels,
            classes: self.classes,
        }
    }

    /// First `n` samples, used to bound evaluation cost.
    pub fn take(&self, n: usize) -> Dataset<T> {
        let keep: Vec<usize> = (0..self.len().min(n)).collect();
        self.subset(&keep)
    }

    pub fn cast<U: Element>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            classes: self.classes,
        }
    }
}

/// Split into disjoint halves of sizes ceil(N/2) and floor(N/2), stratified
/// so per-class counts differ by at most one between the halves. Within each
/// class the assignment is a seeded uniform shuffle.
pub fn split_half<T: Element>(dataset: &Dataset<T>, seed: u64) -> (Dataset<T>, Dataset<T>) {
    let mut first: Vec<usize> = Vec::with_capacity(dataset.len().div_ceil(2));
    let mut second: Vec<usize> = Vec::with_capacity(dataset.len() / 2);
    // Odd-sized classes alternate which half receives the extra sample, so
    // the global sizes stay balanced.
    let mut extra_to_first = true;
    for class in 0..dataset.classes {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == class)
            .collect();
        let mut stream = rng::stream(seed, &[SALT_SPLIT, class as u64]);
        members.shuffle(&mut stream);
        let half = if members.len() % 2 == 1 && extra_to_first {
            members.len().div_ceil(2)
        } else {
            members.len() / 2
        };
        if members.len() % 2 == 1 {
            extra_to_first = !extra_to_first;
        }
        first.extend_from_slice(&members[..half]);
        second.extend_from_slice(&members[half..]);
    }
    let mut order = rng::stream(seed, &[SALT_SPLIT, u64::MAX]);
    first.shuffle(&mut order);
    second.shuffle(&mut order);
    (dataset.subset(&first), dataset.subset(&second))
}
