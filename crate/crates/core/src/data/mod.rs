//! In-memory datasets and preprocessing.
//!
//! Images are stored as one flat buffer of `N * C * H * W` scalars so empty
//! datasets are representable. File formats live in the companion crate.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::netarch::FeatureShape;
use crate::rng;
use crate::scalar::{gemm, sqrt, MatRef, Scalar};
use crate::tensor::Tensor;

mod zca;

pub use zca::{zca_apply, zca_fit, ZcaTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitTag {
    #[default]
    Full,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<Scalar>,
    shape: FeatureShape,
    labels: Vec<usize>,
    classes: usize,
    pub tag: SplitTag,
}

impl Dataset {
    pub fn new(images: Vec<Scalar>, shape: FeatureShape, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if shape.size() == 0 {
            return Err(Error::Dataset(alloc::format!("image shape {shape} has a zero extent")));
        }
        if classes == 0 {
            return Err(Error::Dataset("class count must be at least 1".into()));
        }
        if images.len() != labels.len() * shape.size() {
            return Err(Error::Dataset(alloc::format!(
                "{} labels need {} pixel values, got {}",
                labels.len(),
                labels.len() * shape.size(),
                images.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::Dataset(alloc::format!("label {y} of example {i} is outside 0..{classes}")));
        }
        Ok(Dataset {
            images,
            shape,
            labels,
            classes,
            tag: SplitTag::Full,
        })
    }

    pub fn with_tag(mut self, tag: SplitTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> FeatureShape {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &[Scalar] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[Scalar] {
        let d = self.shape.size();
        &self.images[i * d..(i + 1) * d]
    }

    /// `[B, C, H, W]` batch for `indices` plus their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut data = Vec::with_capacity(indices.len() * self.shape.size());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Dataset(alloc::format!("example {i} out of {}", self.len())));
            }
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(&self.shape.batched(indices.len()), data)?, labels))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut images = Vec::with_capacity(indices.len() * self.shape.size());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Dataset(alloc::format!("example {i} out of {}", self.len())));
            }
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            images,
            shape: self.shape,
            labels,
            classes: self.classes,
            tag: self.tag,
        })
    }

    /// The first `n` examples.
    pub fn take(&self, n: usize) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::Dataset(alloc::format!("asked for {n} of {} examples", self.len())));
        }
        self.subset(&(0..n).collect::<Vec<_>>())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    fn map_images(&self, shape: FeatureShape, images: Vec<Scalar>) -> Dataset {
        Dataset {
            images,
            shape,
            labels: self.labels.clone(),
            classes: self.classes,
            tag: self.tag,
        }
    }
}

/// Pixel noise standard deviation of [`synthetic_dataset`].
pub const SYNTHETIC_NOISE: Scalar = 0.25;

/// Gaussian blobs around one random mean image per class, clipped to
/// `[0, 1]`. Labels cycle through the classes, so counts differ by at most
/// one.
pub fn synthetic_dataset(seed: u64, n: usize, classes: usize, shape: FeatureShape) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::Dataset(alloc::format!(
            "need at least one example per class, got n = {n} for {classes} classes"
        )));
    }
    let d = shape.size();
    let mut r = rng::seeded(seed, rng::stream::SYNTHETIC, 0);
    let means: Vec<Scalar> = (0..classes * d)
        .map(|_| rand::Rng::random_range(&mut r, 0.0..1.0))
        .collect();
    let noise = Normal::new(0.0, SYNTHETIC_NOISE).map_err(|e| Error::Dataset(alloc::format!("{e}")))?;
    let mut r = rng::seeded(seed, rng::stream::SYNTHETIC, 1);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut images = Vec::with_capacity(n * d);
    for &y in &labels {
        for &m in &means[y * d..(y + 1) * d] {
            let v: Scalar = m + noise.sample(&mut r);
            images.push(v.clamp(0.0, 1.0));
        }
    }
    Dataset::new(images, shape, labels, classes)
}

/// Per image: subtract the mean, divide by `max(std, 1e-8)`.
pub fn global_contrast_normalize(dataset: &Dataset) -> Dataset {
    let d = dataset.shape.size();
    let mut images = dataset.images.clone();
    for img in images.chunks_exact_mut(d) {
        // The rounded mean of a constant image can differ from its pixels,
        // and the guard would magnify that residual.
        if img.iter().all(|&v| v == img[0]) {
            img.fill(0.0);
            continue;
        }
        let mean = img.iter().sum::<Scalar>() / d as Scalar;
        let var = img.iter().map(|v| (v - mean) * (v - mean)).sum::<Scalar>() / d as Scalar;
        let scale = sqrt(var).max(1e-8);
        for v in img.iter_mut() {
            *v = (*v - mean) / scale;
        }
    }
    dataset.map_images(dataset.shape, images)
}

fn unit_draw(bits: u64) -> Scalar {
    (bits >> 11) as Scalar * (1.0 / (1u64 << 53) as Scalar)
}

/// Whether example `index` is mirrored in `epoch`.
pub fn flip_coin(seed: u64, epoch: usize, index: usize, probability: Scalar) -> bool {
    let epoch_seed = rng::derive_seed(seed, rng::stream::FLIP, epoch as u64);
    unit_draw(rng::derive_seed(epoch_seed, rng::stream::FLIP, index as u64)) < probability
}

/// Mirrors one `C x H x W` image left to right.
pub fn flip_horizontal(image: &mut [Scalar], shape: FeatureShape) {
    for row in image.chunks_exact_mut(shape.width) {
        row.reverse();
    }
}

/// Mirrors batch rows whose dataset index wins the coin for `epoch`.
pub fn flip_batch(batch: &mut Tensor, indices: &[usize], seed: u64, epoch: usize, probability: Scalar) -> Result<()> {
    let [b, c, h, w] = batch.dims4("flip_batch")?;
    if b != indices.len() {
        return Err(Error::invalid("flip_batch", alloc::format!("{b} rows for {} indices", indices.len())));
    }
    let shape = FeatureShape::new(c, h, w);
    for (img, &i) in batch.data_mut().chunks_exact_mut(shape.size()).zip(indices) {
        if flip_coin(seed, epoch, i, probability) {
            flip_horizontal(img, shape);
        }
    }
    Ok(())
}

/// The augmented copy of `dataset` for one epoch.
pub fn random_flip(dataset: &Dataset, seed: u64, epoch: usize, probability: Scalar) -> Dataset {
    let d = dataset.shape.size();
    let mut images = dataset.images.clone();
    for (i, img) in images.chunks_exact_mut(d).enumerate() {
        if flip_coin(seed, epoch, i, probability) {
            flip_horizontal(img, dataset.shape);
        }
    }
    dataset.map_images(dataset.shape, images)
}

/// Seeded shuffle, then the first `train_n` examples for training and the
/// next `val_n` for validation.
pub fn split(dataset: &Dataset, train_n: usize, val_n: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if train_n + val_n > dataset.len() {
        return Err(Error::Dataset(alloc::format!(
            "split of {train_n} + {val_n} exceeds {} examples",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::seeded(seed, rng::stream::SPLIT, 0));
    let train = dataset.subset(&order[..train_n])?.with_tag(SplitTag::Train);
    let val = dataset.subset(&order[train_n..train_n + val_n])?.with_tag(SplitTag::Validation);
    Ok((train, val))
}

/// Averages non-overlapping 2x2 blocks; odd trailing rows and columns are
/// dropped.
pub fn downsample_2x(dataset: &Dataset) -> Result<Dataset> {
    let s = dataset.shape;
    if s.height < 2 || s.width < 2 {
        return Err(Error::Dataset(alloc::format!("cannot downsample {s}")));
    }
    let out = FeatureShape::new(s.channels, s.height / 2, s.width / 2);
    let mut images = Vec::with_capacity(dataset.len() * out.size());
    for img in dataset.images.chunks_exact(s.size()) {
        for c in 0..s.channels {
            let plane = &img[c * s.height * s.width..(c + 1) * s.height * s.width];
            for y in 0..out.height {
                for x in 0..out.width {
                    let at = |dy: usize, dx: usize| plane[(2 * y + dy) * s.width + 2 * x + dx];
                    images.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * 0.25);
                }
            }
        }
    }
    Ok(dataset.map_images(out, images))
}

/// `[N, D]` view of the images times `matrix^T` (`matrix` is `rows x D`).
pub(crate) fn project(images: &[Scalar], n: usize, d: usize, matrix: &[Scalar], rows: usize) -> Vec<Scalar> {
    let mut out = alloc::vec![0.0; n * rows];
    if n > 0 {
        gemm(
            1.0,
            MatRef::row_major(images, n, d),
            MatRef::transposed(matrix, rows, d),
            0.0,
            &mut out,
        );
    }
    out
}
