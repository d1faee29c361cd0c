//! Train-time augmentation: padded random crop, horizontal flip, and
//! random erasing. One call transforms one [channels, h, w] image using a
//! caller-supplied RNG stream.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Element, Tensor};
use crate::error::{Error, Result};
use crate::rng;

const ERASE_TRIES: usize = 10;

/// Fill for the erased rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EraseFill {
    /// Independent uniform draws in [0,1).
    Random,
    Value { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentOp {
    /// Zero-pad by `pad` on every side, then crop back to the original size
    /// at a uniform offset.
    RandomCrop { pad: usize },
    HorizontalFlip { p: f64 },
    /// With probability `p`, replace a rectangle whose area fraction is
    /// uniform in `scale_range` and whose aspect ratio is uniform in
    /// `ratio_range`. Rectangles that cannot fit after 10 tries are skipped.
    RandomErase {
        p: f64,
        scale_range: (f64, f64),
        ratio_range: (f64, f64),
        fill: EraseFill,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPipeline {
    pub ops: Vec<AugmentOp>,
}

impl AugmentPipeline {
    /// Crop(4) + flip(0.5) + erase with the usual random-erasing defaults.
    pub fn standard() -> Self {
        AugmentPipeline {
            ops: vec![
                AugmentOp::RandomCrop { pad: 4 },
                AugmentOp::HorizontalFlip { p: 0.5 },
                AugmentOp::default_erase(),
            ],
        }
    }

    /// Crop(4) + erase, no flip; for digit-style data where mirroring
    /// changes the class.
    pub fn no_flip() -> Self {
        AugmentPipeline {
            ops: vec![AugmentOp::RandomCrop { pad: 4 }, AugmentOp::default_erase()],
        }
    }

    pub fn identity() -> Self {
        AugmentPipeline { ops: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        for op in &self.ops {
            match op {
                AugmentOp::RandomCrop { .. } => {}
                AugmentOp::HorizontalFlip { p } => {
                    if !(0.0..=1.0).contains(p) {
                        return Err(Error::config(format!(
                            "flip probability must be in [0, 1], got {p}"
                        )));
                    }
                }
                AugmentOp::RandomErase {
                    p,
                    scale_range,
                    ratio_range,
                    fill,
                } => {
                    if !(0.0..=1.0).contains(p) {
                        return Err(Error::config(format!(
                            "erase probability must be in [0, 1], got {p}"
                        )));
                    }
                    if !(scale_range.0 > 0.0 && scale_range.0 <= scale_range.1) {
                        return Err(Error::config(format!(
                            "erase scale_range must satisfy 0 < lo <= hi, got {scale_range:?}"
                        )));
                    }
                    if !(ratio_range.0 > 0.0 && ratio_range.0 <= ratio_range.1) {
                        return Err(Error::config(format!(
                            "erase ratio_range must satisfy 0 < lo <= hi, got {ratio_range:?}"
                        )));
                    }
                    if let EraseFill::Value { value } = fill {
                        if !(0.0..=1.0).contains(value) {
                            return Err(Error::config(format!(
                                "erase fill value must be in [0, 1], got {value}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl AugmentOp {
    pub fn default_erase() -> Self {
        AugmentOp::RandomErase {
            p: 0.5,
            scale_range: (0.02, 0.33),
            ratio_range: (0.3, 3.3),
            fill: EraseFill::Random,
        }
    }
}

/// Apply the pipeline to one [channels, h, w] image.
pub fn augment<T: Element>(
    pipeline: &AugmentPipeline,
    image: &Tensor<T>,
    stream: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    if image.shape().len() != 3 {
        return Err(Error::ShapeMismatch {
            context: "augment input".into(),
            expected: "[channels, h, w]".into(),
            actual: format!("{:?}", image.shape()),
        });
    }
    let mut out = image.clone();
    for op in &pipeline.ops {
        out = match op {
            AugmentOp::RandomCrop { pad } => random_crop(&out, *pad, stream),
            AugmentOp::HorizontalFlip { p } => {
                if rng::uniform_in(stream, 0.0, 1.0) < *p {
                    flip_horizontal(&out)
                } else {
                    out
                }
            }
            AugmentOp::RandomErase {
                p,
                scale_range,
                ratio_range,
                fill,
            } => {
                if rng::uniform_in(stream, 0.0, 1.0) < *p {
                    random_erase(&out, *scale_range, *ratio_range, *fill, stream)
                } else {
                    out
                }
            }
        };
    }
    Ok(out)
}

fn random_crop<T: Element>(image: &Tensor<T>, pad: usize, stream: &mut ChaCha8Rng) -> Tensor<T> {
    if pad == 0 {
        return image.clone();
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let dy = rng::uniform_in(stream, 0.0, (2 * pad + 1) as f64).floor() as usize;
    let dx = rng::uniform_in(stream, 0.0, (2 * pad + 1) as f64).floor() as usize;
    let src = image.data();
    let mut data = vec![T::zero(); c * h * w];
    // Reading the padded image at offset (dy, dx) means source row r maps
    // from padded row r + dy, which is in-bounds iff pad <= r + dy < h + pad.
    for ch in 0..c {
        for r in 0..h {
            let pr = r + dy;
            if pr < pad || pr >= h + pad {
                continue;
            }
            for col in 0..w {
                let pc = col + dx;
                if pc < pad || pc >= w + pad {
                    continue;
                }
                data[(ch * h + r) * w + col] = src[(ch * h + (pr - pad)) * w + (pc - pad)];
            }
        }
    }
    Tensor::new(image.shape().to_vec(), data).unwrap()
}

fn flip_horizontal<T: Element>(image: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let src = image.data();
    let mut data = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                data[(ch * h + r) * w + col] = src[(ch * h + r) * w + (w - 1 - col)];
            }
        }
    }
    Tensor::new(image.shape().to_vec(), data).unwrap()
}

fn random_erase<T: Element>(
    image: &Tensor<T>,
    scale_range: (f64, f64),
    ratio_range: (f64, f64),
    fill: EraseFill,
    stream: &mut ChaCha8Rng,
) -> Tensor<T> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    for _ in 0..ERASE_TRIES {
        let frac = rng::uniform_in(stream, scale_range.0, scale_range.1.max(scale_range.0 + f64::EPSILON));
        let ratio = rng::uniform_in(stream, ratio_range.0, ratio_range.1.max(ratio_range.0 + f64::EPSILON));
        let area = frac * (h * w) as f64;
        let eh = (area * ratio).sqrt().floor() as usize;
        let ew = (area / ratio).sqrt().floor() as usize;
        if eh == 0 || ew == 0 || eh > h || ew > w {
            continue;
        }
        let top = rng::uniform_in(stream, 0.0, (h - eh + 1) as f64).floor() as usize;
        let left = rng::uniform_in(stream, 0.0, (w - ew + 1) as f64).floor() as usize;
        let mut out = image.clone();
        let data = out.data_mut();
        for ch in 0..c {
            for r in top..top + eh {
                for col in left..left + ew {
                    data[(ch * h + r) * w + col] = match fill {
                        EraseFill::Random => T::from_f64(rng::uniform_in(stream, 0.0, 1.0)),
                        EraseFill::Value { value } => T::from_f64(value),
                    };
                }
            }
        }
        return out;
    }
    image.clone()
}
