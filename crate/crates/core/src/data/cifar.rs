//! CIFAR-10 / CIFAR-100 binary batches.
//!
//! A CIFAR-10 record is one label byte followed by 3072 pixel bytes (1024
//! red, then green, then blue, each row-major over 32×32). CIFAR-100 records
//! carry a coarse and then a fine label byte before the same pixels.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{byte_to_unit, one_hot, unit_to_byte, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PIXELS: usize = 3 * 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn classes(&self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    pub fn record_len(&self) -> usize {
        self.label_bytes() + PIXELS
    }

    fn label_bytes(&self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "cifar10",
            CifarVariant::Cifar100 => "cifar100",
        }
    }

    fn files(&self, split: CifarSplit) -> Vec<&'static str> {
        match (self, split) {
            (CifarVariant::Cifar10, CifarSplit::Train) => {
                vec!["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"]
            }
            (CifarVariant::Cifar10, CifarSplit::Test) => vec!["test_batch.bin"],
            (CifarVariant::Cifar100, CifarSplit::Train) => vec!["train.bin"],
            (CifarVariant::Cifar100, CifarSplit::Test) => vec!["test.bin"],
        }
    }

    fn archive_dir(&self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "cifar-10-batches-bin",
            CifarVariant::Cifar100 => "cifar-100-binary",
        }
    }
}

impl FromStr for CifarVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10" => Ok(CifarVariant::Cifar10),
            "cifar100" => Ok(CifarVariant::Cifar100),
            other => Err(Error::Config(format!("unknown CIFAR variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarSplit {
    Train,
    Test,
}

/// Parses concatenated records. CIFAR-100 attributes use the fine label.
pub fn parse_cifar(bytes: &[u8], variant: CifarVariant) -> Result<Dataset> {
    let stride = variant.record_len();
    let whole = bytes.len() / stride * stride;
    if whole != bytes.len() {
        return Err(Error::Format {
            offset: whole as u64,
            message: format!("{} bytes is not a whole number of {stride}-byte records", bytes.len()),
        });
    }
    if bytes.is_empty() {
        return Err(Error::Format { offset: 0, message: "no records".into() });
    }
    let n = bytes.len() / stride;
    let classes = variant.classes();
    let mut labels = Vec::with_capacity(n);
    let mut coarse = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    for (i, record) in bytes.chunks(stride).enumerate() {
        let fine = record[variant.label_bytes() - 1];
        if fine as usize >= classes {
            return Err(Error::Format {
                offset: (i * stride + variant.label_bytes() - 1) as u64,
                message: format!("label {fine} out of range for {classes} classes"),
            });
        }
        labels.push(fine as usize);
        coarse.push(record[0]);
        pixels.extend(record[variant.label_bytes()..].iter().map(|&b| byte_to_unit(b)));
    }
    let mut ds = Dataset::new(variant.name(), "train", Tensor::new([n, 3, 32, 32], pixels)?, one_hot(&labels, classes)?)?;
    if variant == CifarVariant::Cifar100 {
        ds.coarse_labels = Some(coarse);
    }
    Ok(ds)
}

/// Serializes records in the variant's layout. CIFAR-100 superclass bytes
/// come from `coarse_labels`, or zero when absent.
pub fn write_cifar(ds: &Dataset, variant: CifarVariant) -> Result<Vec<u8>> {
    let s = ds.shape();
    if (s.channels, s.height, s.width) != (3, 32, 32) || ds.d() != variant.classes() || !ds.is_one_hot() {
        return Err(Error::Contract(format!("{} export needs one-hot 3×32×32 images", variant.name())));
    }
    let mut out = Vec::with_capacity(ds.len() * variant.record_len());
    for (i, (label, pixels)) in ds.labels().into_iter().zip(ds.images.data().chunks(PIXELS)).enumerate() {
        if variant == CifarVariant::Cifar100 {
            out.push(ds.coarse_labels.as_ref().map_or(0, |c| c[i]));
        }
        out.push(label as u8);
        out.extend(pixels.iter().map(|&v| unit_to_byte(v)));
    }
    Ok(out)
}

fn batch_dir(dir: &Path, variant: CifarVariant, first: &str) -> PathBuf {
    let nested = dir.join(variant.archive_dir());
    if !dir.join(first).exists() && nested.join(first).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Reads a split from the standard batch files in `dir`, or in the
/// archive's own subdirectory beneath it.
pub fn load_cifar(dir: &Path, variant: CifarVariant, split: CifarSplit) -> Result<Dataset> {
    let files = variant.files(split);
    let root = batch_dir(dir, variant, files[0]);
    let mut bytes = Vec::new();
    for f in files {
        let path = root.join(f);
        let chunk = std::fs::read(&path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        if chunk.len() % variant.record_len() != 0 {
            return Err(Error::Format {
                offset: (bytes.len() + chunk.len() / variant.record_len() * variant.record_len()) as u64,
                message: format!("{} is not a whole number of records", path.display()),
            });
        }
        bytes.extend(chunk);
    }
    let mut ds = parse_cifar(&bytes, variant)?;
    ds.split = match split {
        CifarSplit::Train => "train".into(),
        CifarSplit::Test => "test".into(),
    };
    Ok(ds)
}
