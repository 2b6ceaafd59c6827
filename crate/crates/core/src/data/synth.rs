//! Synthetic bar images whose class is readable from where the bar sits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{one_hot, Dataset};
use crate::error::{Error, Result};
use crate::models::ImageShape;
use crate::tensor::Tensor;

/// `n` images of shape `shape`, classes balanced (counts differ by at most
/// one). The image plane is cut into a grid with one cell per class, and
/// class `c` draws a bright horizontal or vertical bar inside cell `c` over
/// faint background noise.
pub fn synth_dataset(n: usize, shape: ImageShape, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::Config("synthetic datasets need n ≥ 1 and d ≥ 1".into()));
    }
    let grid = (1..).find(|g| g * g >= d).expect("unbounded");
    let (ch, cw) = (shape.height / grid, shape.width / grid);
    if ch < 2 || cw < 2 || shape.channels == 0 {
        return Err(Error::Config(format!(
            "{}×{} images are too small for {d} classes of bars",
            shape.height, shape.width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % d).collect();
    labels.shuffle(&mut rng);

    let plane = shape.height * shape.width;
    let mut pixels = Vec::with_capacity(n * shape.numel());
    for &class in &labels {
        let (top, left) = ((class / grid) * ch, (class % grid) * cw);
        let horizontal = rng.random_bool(0.5);
        let thick = (if horizontal { ch } else { cw } / 4).max(1);
        let offset = rng.random_range(0..=(if horizontal { ch } else { cw }) - thick);
        let intensity = rng.random_range(0.7..1.0);
        let mut image = vec![0.0; plane];
        for v in image.iter_mut() {
            *v = rng.random_range(0.0..0.15);
        }
        for r in 0..ch {
            for c in 0..cw {
                let along = if horizontal { r } else { c };
                if (offset..offset + thick).contains(&along) {
                    image[(top + r) * shape.width + left + c] = intensity;
                }
            }
        }
        for _ in 0..shape.channels {
            let tint: f64 = rng.random_range(0.8..=1.0);
            pixels.extend(image.iter().map(|v| v * tint));
        }
    }
    let images = Tensor::new([n, shape.channels, shape.height, shape.width], pixels)?;
    Dataset::new("synth", "all", images, one_hot(&labels, d)?)
}

/// Nearest-centroid accuracy on raw pixels: centroids from even-indexed
/// images, scored on odd-indexed ones. Nearest-centroid is a linear rule.
pub fn linear_probe_accuracy(ds: &Dataset) -> Result<f64> {
    if ds.len() < 2 {
        return Err(Error::Contract("the probe needs at least two images".into()));
    }
    let (d, k) = (ds.d(), ds.shape().numel());
    let labels = ds.labels();
    let mut centroids = vec![0.0; d * k];
    let mut counts = vec![0usize; d];
    for i in (0..ds.len()).step_by(2) {
        let img = &ds.images.data()[i * k..(i + 1) * k];
        counts[labels[i]] += 1;
        for (c, v) in centroids[labels[i] * k..(labels[i] + 1) * k].iter_mut().zip(img) {
            *c += v;
        }
    }
    for (class, &count) in counts.iter().enumerate() {
        centroids[class * k..(class + 1) * k].iter_mut().for_each(|c| *c /= count.max(1) as f64);
    }
    let (mut hits, mut total) = (0, 0);
    for i in (1..ds.len()).step_by(2) {
        let img = &ds.images.data()[i * k..(i + 1) * k];
        let nearest = (0..d)
            .filter(|&c| counts[c] > 0)
            .map(|c| {
                let dist: f64 = centroids[c * k..(c + 1) * k].iter().zip(img).map(|(a, b)| (a - b) * (a - b)).sum();
                (c, dist)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c);
        hits += usize::from(nearest == Some(labels[i]));
        total += 1;
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mnist_like() -> ImageShape {
        ImageShape::new(1, 28, 28)
    }

    #[test]
    fn deterministic_in_seed() {
        let a = synth_dataset(100, mnist_like(), 4, 7).unwrap();
        assert_eq!(a, synth_dataset(100, mnist_like(), 4, 7).unwrap());
        assert_ne!(a, synth_dataset(100, mnist_like(), 4, 8).unwrap());
    }

    #[test]
    fn classes_are_balanced() {
        let ds = synth_dataset(100, mnist_like(), 4, 7).unwrap();
        let mut counts = [0; 4];
        ds.labels().into_iter().for_each(|l| counts[l] += 1);
        assert_eq!(counts, [25; 4]);
        assert!(ds.is_one_hot());
    }

    #[test]
    fn linear_probe_separates_the_classes() {
        for (shape, d) in [(mnist_like(), 4), (mnist_like(), 10), (ImageShape::new(3, 32, 32), 10)] {
            let ds = synth_dataset(400, shape, d, 7).unwrap();
            let acc = linear_probe_accuracy(&ds).unwrap();
            assert!(acc >= 0.9, "{shape:?}, d = {d}: {acc}");
        }
    }

    #[test]
    fn tiny_planes_are_rejected() {
        assert!(matches!(synth_dataset(10, ImageShape::new(1, 8, 8), 100, 0), Err(Error::Config(_))));
    }
}
