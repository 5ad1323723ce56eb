use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

/// Labelled u8 images stored sample-major in NCHW order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub count: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub class_count: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        class_count: usize,
        images: Vec<u8>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let d = Dataset {
            count: labels.len(),
            channels,
            height,
            width,
            class_count,
            images,
            labels,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidShape(
                "dataset dimensions and count must be positive".into(),
            ));
        }
        if self.class_count == 0 || self.class_count > 256 {
            return Err(Error::Config(format!(
                "class_count {} must lie in 1..=256",
                self.class_count
            )));
        }
        if self.labels.len() != self.count || self.images.len() != self.count * self.sample_len() {
            return Err(Error::InvalidShape(format!(
                "dataset of {} samples of {} bytes has {} image bytes and {} labels",
                self.count,
                self.sample_len(),
                self.images.len(),
                self.labels.len()
            )));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l as usize >= self.class_count) {
            return Err(Error::InvalidLabel {
                label: label as usize,
                classes: self.class_count,
            });
        }
        Ok(())
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Images at `indices` scaled to [0, 1], optionally mirrored left-right,
    /// and their labels.
    pub fn batch(&self, indices: &[usize], flip: &[bool]) -> Result<(Tensor, Vec<usize>)> {
        let shape = Shape4::new(indices.len(), self.channels, self.height, self.width)?;
        let len = self.sample_len();
        let mut data = Vec::with_capacity(shape.numel());
        let mut labels = Vec::with_capacity(indices.len());
        for (b, &i) in indices.iter().enumerate() {
            if i >= self.count {
                return Err(Error::InvalidShape(format!("sample {i} out of {}", self.count)));
            }
            let img = &self.images[i * len..(i + 1) * len];
            let mirror = flip.get(b).copied().unwrap_or(false);
            for row in img.chunks(self.width) {
                if mirror {
                    data.extend(row.iter().rev().map(|&p| p as f64 / 255.0));
                } else {
                    data.extend(row.iter().map(|&p| p as f64 / 255.0));
                }
            }
            labels.push(self.labels[i] as usize);
        }
        Ok((Tensor::from_vec(shape, data)?, labels))
    }
}

/// Noisy images whose class is the horizontal band that is brighter than the
/// rest: class `c` lights rows `[c·h/k, (c+1)·h/k)`. Mean row intensity
/// separates the classes linearly, and the layout survives left-right flips.
pub fn synthetic_separable(
    count: usize,
    channels: usize,
    size: usize,
    class_count: usize,
    seed: u64,
) -> Result<Dataset> {
    if class_count < 2 || class_count > size {
        return Err(Error::Config(format!(
            "synthetic data needs 2 <= classes <= image size, got {class_count} classes at size {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count * channels * size * size);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % class_count;
        let (lo, hi) = (label * size / class_count, (label + 1) * size / class_count);
        for _ in 0..channels {
            for y in 0..size {
                let band = (lo..hi).contains(&y);
                for _ in 0..size {
                    images.push(if band {
                        rng.gen_range(160..=255)
                    } else {
                        rng.gen_range(0..=96)
                    });
                }
            }
        }
        labels.push(label as u8);
    }
    Dataset::new(channels, size, size, class_count, images, labels)
}
