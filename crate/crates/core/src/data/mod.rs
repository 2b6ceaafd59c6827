//! Datasets, binary loaders, a synthetic corpus, and coarse-image degradation.

mod cifar;
mod degrade;
mod idx;
mod synth;

pub use cifar::{load_cifar, parse_cifar, write_cifar, CifarSplit, CifarVariant};
pub use degrade::{degrade, make_pairs, CoarsePair, DegradeConfig, PairSet};
pub use idx::{load_mnist, mnist_to_idx, parse_mnist, IdxArray};
pub use synth::{linear_probe_accuracy, synth_dataset};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{argmax, AttributeVector, ImageShape};
use crate::tensor::Tensor;

/// Images in `[0, 1]` with one attribute row per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: String,
    /// `[N, C, H, W]`.
    pub images: Tensor,
    /// `[N, d]`.
    pub attributes: Tensor,
    /// CIFAR-100 superclass labels, kept so batches re-serialize unchanged.
    pub coarse_labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, split: impl Into<String>, images: Tensor, attributes: Tensor) -> Result<Self> {
        let ds = Self { name: name.into(), split: split.into(), images, attributes, coarse_labels: None };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let (i, a) = (self.images.shape(), self.attributes.shape());
        if i.len() != 4 || a.len() != 2 || i[0] != a[0] {
            return Err(Error::Shape(format!("images {i:?} and attributes {a:?} must be [N, C, H, W] and [N, d]")));
        }
        if let Some(v) = self.images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("pixel value {v} outside [0, 1]")));
        }
        if let Some(v) = self.attributes.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("attribute value {v} outside [0, 1]")));
        }
        if let Some(c) = &self.coarse_labels {
            if c.len() != i[0] {
                return Err(Error::Shape("one coarse label per image is required".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Attribute count `d`.
    pub fn d(&self) -> usize {
        self.attributes.shape()[1]
    }

    pub fn shape(&self) -> ImageShape {
        let s = self.images.shape();
        ImageShape::new(s[1], s[2], s[3])
    }

    pub fn attribute(&self, i: usize) -> Result<AttributeVector> {
        AttributeVector::new(self.attributes.row(i)?.into_data())
    }

    /// Whether every attribute row has exactly one entry equal to 1.
    pub fn is_one_hot(&self) -> bool {
        let d = self.d();
        self.attributes.data().chunks(d).all(|row| {
            row.iter().all(|&v| v == 0.0 || v == 1.0) && row.iter().filter(|&&v| v == 1.0).count() == 1
        })
    }

    /// Argmax class of each attribute row.
    pub fn labels(&self) -> Vec<usize> {
        self.attributes.data().chunks(self.d()).map(argmax).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            name: self.name.clone(),
            split: self.split.clone(),
            images: self.images.select_rows(indices)?,
            attributes: self.attributes.select_rows(indices)?,
            coarse_labels: self.coarse_labels.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
        })
    }

    /// Seeded shuffle, then the first `train` indices and the last `eval`.
    pub fn split(&self, train: usize, eval: usize, seed: u64) -> Result<(Self, Self)> {
        if train == 0 || eval == 0 {
            return Err(Error::Contract("both splits must be non-empty".into()));
        }
        if train + eval > self.len() {
            return Err(Error::Config(format!(
                "cannot take {train} training and {eval} evaluation images from {} images",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut a = self.subset(&order[..train])?;
        let mut b = self.subset(&order[order.len() - eval..])?;
        a.split = "train".into();
        b.split = "eval".into();
        Ok((a, b))
    }
}

/// `[N, d]` one-hot rows.
pub fn one_hot(labels: &[usize], d: usize) -> Result<Tensor> {
    if let Some(&l) = labels.iter().find(|&&l| l >= d) {
        return Err(Error::Contract(format!("label {l} out of range for d = {d}")));
    }
    Ok(Tensor::from_fn(&[labels.len(), d], |i| if labels[i / d] == i % d { 1.0 } else { 0.0 }))
}

/// Byte `b` to `b / 255`.
pub fn byte_to_unit(b: u8) -> f64 {
    b as f64 / 255.0
}

/// Inverse of [`byte_to_unit`], rounding half up.
pub fn unit_to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let images = Tensor::from_fn(&[n, 1, 2, 2], |i| (i / 4) as f64 / n as f64);
        Dataset::new("toy", "all", images, one_hot(&labels, 3).unwrap()).unwrap()
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let ds = toy(20);
        let (a, b) = ds.split(12, 5, 3).unwrap();
        assert_eq!((a.len(), b.len()), (12, 5));
        assert_eq!(ds.split(12, 5, 3).unwrap(), (a.clone(), b.clone()));
        assert_ne!(ds.split(12, 5, 4).unwrap().0, a);
        let key = |d: &Dataset, i: usize| d.images.data()[i * 4];
        for i in 0..a.len() {
            for j in 0..b.len() {
                assert_ne!(key(&a, i), key(&b, j));
            }
        }
        assert!(matches!(ds.split(15, 6, 0), Err(Error::Config(_))));
        assert!(matches!(ds.split(15, 0, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn invariants_are_enforced() {
        let images = Tensor::full(&[2, 1, 2, 2], 1.5);
        assert!(matches!(Dataset::new("x", "y", images, one_hot(&[0, 1], 2).unwrap()), Err(Error::Domain(_))));
        let images = Tensor::zeros(&[3, 1, 2, 2]);
        assert!(matches!(Dataset::new("x", "y", images, one_hot(&[0, 1], 2).unwrap()), Err(Error::Shape(_))));
        let ds = toy(6);
        assert!(ds.is_one_hot());
        assert_eq!(ds.labels(), vec![0, 1, 2, 0, 1, 2]);
        assert!(ds.attribute(4).unwrap().is_one_hot());
    }

    #[test]
    fn quantization_round_trips() {
        for b in 0..=255u8 {
            assert_eq!(unit_to_byte(byte_to_unit(b)), b);
        }
        assert_eq!(unit_to_byte(0.5), 128);
        assert_eq!(unit_to_byte(1.0), 255);
    }
}
