use std::path::Path;

use resgan_core::data::{load_mnist, make_pairs, DegradeConfig};

fn subset() -> resgan_core::data::Dataset {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k");
    load_mnist(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte")).unwrap()
}

#[test]
fn bundled_subset_has_every_digit() {
    let ds = subset();
    assert_eq!(ds.images.shape(), &[5000, 1, 28, 28]);
    assert_eq!(ds.d(), 10);
    assert!(ds.is_one_hot());
    let mut counts = [0usize; 10];
    for l in ds.labels() {
        counts[l] += 1;
    }
    assert!(counts.iter().all(|&c| c > 300), "{counts:?}");
    assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn desk_split_and_degradation() {
    let ds = subset();
    let (train, eval) = ds.split(2000, 500, 0).unwrap();
    let (again, _) = ds.split(2000, 500, 0).unwrap();
    assert_eq!(train.images, again.images);
    assert_eq!((train.len(), eval.len()), (2000, 500));

    let pairs = make_pairs(&eval, &DegradeConfig { factor: 4, ..DegradeConfig::default() }).unwrap();
    assert_eq!(pairs.coarse.shape(), pairs.fine.shape());
    // Every 4×4 block of a coarse image is constant.
    let img = &pairs.coarse.data()[..784];
    for y in 0..28 {
        for x in 0..28 {
            assert_eq!(img[y * 28 + x], img[(y / 4 * 4) * 28 + x / 4 * 4]);
        }
    }
    assert_ne!(pairs.coarse, pairs.fine);
}
