//! Coarse-image manufacture: optional blur, block averaging, nearest
//! replication, optional clipped noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::models::AttributeVector;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradeConfig {
    /// Block size of the average-pool / replicate step.
    pub factor: usize,
    /// Gaussian pre-blur standard deviation in pixels; 0 disables it.
    pub blur_sigma: f64,
    /// Additive Gaussian noise standard deviation; 0 disables it.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self { factor: 4, blur_sigma: 0.0, noise_sigma: 0.0, seed: 0 }
    }
}

impl DegradeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(Error::Config("degradation factor must be at least 1".into()));
        }
        for (name, s) in [("blur_sigma", self.blur_sigma), ("noise_sigma", self.noise_sigma)] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {s}")));
            }
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable blur with clamp-to-edge borders, so constants stay constant.
fn blur_plane(plane: &mut [f64], h: usize, w: usize, kernel: &[f64]) {
    let r = (kernel.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] =
                kernel.iter().enumerate().map(|(k, c)| c * plane[y * w + clamp(x as isize + k as isize - r, w)]).sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] =
                kernel.iter().enumerate().map(|(k, c)| c * tmp[clamp(y as isize + k as isize - r, h) * w + x]).sum();
        }
    }
}

/// Replaces every `f×f` block by its mean. The mean is taken relative to the
/// block's first pixel, so blocks that are already constant come back
/// bit-identical.
fn block_average(plane: &mut [f64], h: usize, w: usize, f: usize) {
    let scale = 1.0 / (f * f) as f64;
    for by in (0..h).step_by(f) {
        for bx in (0..w).step_by(f) {
            let anchor = plane[by * w + bx];
            let mut dev = 0.0;
            for y in by..by + f {
                dev += plane[y * w + bx..y * w + bx + f].iter().map(|v| v - anchor).sum::<f64>();
            }
            let mean = anchor + dev * scale;
            for y in by..by + f {
                plane[y * w + bx..y * w + bx + f].iter_mut().for_each(|v| *v = mean);
            }
        }
    }
}

/// Degrades images `[…, H, W]`; output shape equals input shape and values
/// stay in `[0, 1]` for inputs in `[0, 1]`.
pub fn degrade(fine: &Tensor, cfg: &DegradeConfig) -> Result<Tensor> {
    cfg.validate()?;
    let s = fine.shape();
    if s.len() < 2 {
        return Err(Error::Shape(format!("degradation needs an image plane, got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if h % cfg.factor != 0 || w % cfg.factor != 0 {
        return Err(Error::Shape(format!("factor {} does not divide {h}×{w}", cfg.factor)));
    }
    let mut out = fine.clone();
    let kernel = (cfg.blur_sigma > 0.0).then(|| gaussian_kernel(cfg.blur_sigma));
    for plane in out.data_mut().chunks_mut(h * w) {
        if let Some(k) = &kernel {
            blur_plane(plane, h, w, k);
        }
        block_average(plane, h, w, cfg.factor);
    }
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        out.data_mut().iter_mut().for_each(|v| *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0));
    }
    Ok(out)
}

/// One supervised restoration example.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarsePair {
    pub coarse: Tensor,
    pub fine: Tensor,
    pub attributes: AttributeVector,
}

/// Every image of a dataset with its coarse counterpart, stacked.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    /// `[N, C, H, W]`.
    pub coarse: Tensor,
    pub fine: Tensor,
    /// `[N, d]`.
    pub attributes: Tensor,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.fine.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Result<CoarsePair> {
        let img = &self.fine.shape()[1..];
        Ok(CoarsePair {
            coarse: self.coarse.row(i)?.reshape(img)?,
            fine: self.fine.row(i)?.reshape(img)?,
            attributes: AttributeVector::new(self.attributes.row(i)?.into_data())?,
        })
    }

    /// Rows `indices` of each stack.
    pub fn batch(&self, indices: &[usize]) -> Result<PairSet> {
        Ok(PairSet {
            coarse: self.coarse.select_rows(indices)?,
            fine: self.fine.select_rows(indices)?,
            attributes: self.attributes.select_rows(indices)?,
        })
    }
}

pub fn make_pairs(ds: &Dataset, cfg: &DegradeConfig) -> Result<PairSet> {
    Ok(PairSet { coarse: degrade(&ds.images, cfg)?, fine: ds.images.clone(), attributes: ds.attributes.clone() })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::synth_dataset;
    use crate::models::ImageShape;

    fn cfg(factor: usize) -> DegradeConfig {
        DegradeConfig { factor, ..DegradeConfig::default() }
    }

    #[test]
    fn constants_survive() {
        let img = Tensor::full(&[2, 1, 28, 28], 0.3);
        for f in [1, 2, 4, 7, 14] {
            assert_eq!(degrade(&img, &cfg(f)).unwrap(), img);
        }
        let blurred = DegradeConfig { blur_sigma: 1.2, ..cfg(4) };
        let out = degrade(&img, &blurred).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn unit_checkerboard_collapses_to_grey() {
        let board = Tensor::from_fn(&[1, 1, 28, 28], |i| ((i / 28 + i % 28) % 2) as f64);
        let out = degrade(&board, &cfg(4)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 28, 28]);
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn indivisible_sizes_are_shape_errors() {
        assert!(matches!(degrade(&Tensor::zeros(&[1, 1, 28, 28]), &cfg(3)), Err(Error::Shape(_))));
        assert!(matches!(degrade(&Tensor::zeros(&[1, 1, 4, 4]), &cfg(0)), Err(Error::Config(_))));
        let bad = DegradeConfig { noise_sigma: -1.0, ..cfg(2) };
        assert!(matches!(degrade(&Tensor::zeros(&[1, 1, 4, 4]), &bad), Err(Error::Config(_))));
    }

    #[test]
    fn noise_is_seeded_and_clipped() {
        let img = Tensor::full(&[3, 1, 8, 8], 0.95);
        let noisy = DegradeConfig { noise_sigma: 0.3, seed: 5, ..cfg(2) };
        let a = degrade(&img, &noisy).unwrap();
        assert_eq!(a, degrade(&img, &noisy).unwrap());
        assert_ne!(a, degrade(&img, &DegradeConfig { seed: 6, ..noisy }).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.data().iter().any(|&v| v == 1.0));
    }

    #[test]
    fn pairs_carry_the_dataset_through() {
        let ds = synth_dataset(12, ImageShape::new(1, 28, 28), 4, 1).unwrap();
        let pairs = make_pairs(&ds, &cfg(4)).unwrap();
        assert_eq!(pairs.len(), 12);
        let p = pairs.get(5).unwrap();
        assert_eq!(p.fine, ds.images.row(5).unwrap().reshape(&[1, 28, 28]).unwrap());
        assert_eq!(p.attributes, ds.attribute(5).unwrap());
        assert_eq!(make_pairs(&ds, &cfg(4)).unwrap(), pairs);
        assert_eq!(pairs.batch(&[5]).unwrap().coarse.reshape(&[1, 28, 28]).unwrap(), p.coarse);
    }

    proptest! {
        #[test]
        fn degradation_properties(
            pixels in prop::collection::vec(0.0f64..=1.0, 2 * 12 * 12),
            f in prop::sample::select(vec![1usize, 2, 3, 4, 6]),
            blur in prop::sample::select(vec![0.0, 0.7, 1.5]),
            noise in prop::sample::select(vec![0.0, 0.2]),
        ) {
            let img = Tensor::new([2, 1, 12, 12], pixels).unwrap();
            let c = DegradeConfig { factor: f, blur_sigma: blur, noise_sigma: noise, seed: 3 };
            let out = degrade(&img, &c).unwrap();
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let plain = degrade(&img, &cfg(f)).unwrap();
            prop_assert_eq!(&degrade(&plain, &cfg(f)).unwrap(), &plain);
            let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.len() as f64;
            prop_assert!((mean(&plain) - mean(&img)).abs() < 1e-10);
        }
    }
}
