//! IDX unsigned-byte arrays and the MNIST image/label pair.

use std::path::Path;

use super::{byte_to_unit, one_hot, unit_to_byte, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const UBYTE: u8 = 0x08;
const MNIST_CLASSES: usize = 10;

/// An IDX array of unsigned bytes: big-endian header `00 00 08 ndim`,
/// then `ndim` big-endian u32 sizes, then the row-major data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

impl IdxArray {
    pub fn parse(bytes: &[u8], expected_ndim: u8) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(format_err(bytes.len(), "truncated IDX magic"));
        }
        if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != UBYTE || bytes[3] != expected_ndim {
            return Err(format_err(
                0,
                format!(
                    "bad IDX magic {:02x} {:02x} {:02x} {:02x}, expected 00 00 08 {expected_ndim:02x}",
                    bytes[0], bytes[1], bytes[2], bytes[3]
                ),
            ));
        }
        let ndim = expected_ndim as usize;
        let header = 4 + 4 * ndim;
        if bytes.len() < header {
            return Err(format_err(bytes.len(), "truncated IDX dimension header"));
        }
        let dims: Vec<usize> = bytes[4..header]
            .chunks(4)
            .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let count: usize = dims.iter().product();
        let body = &bytes[header..];
        if body.len() < count {
            return Err(format_err(bytes.len(), format!("truncated IDX body: {count} bytes declared, {} present", body.len())));
        }
        if body.len() > count {
            return Err(format_err(header + count, "trailing bytes after the IDX body"));
        }
        Ok(Self { dims, data: body.to_vec() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0, 0, UBYTE, self.dims.len() as u8];
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

/// MNIST from in-memory IDX files: `[N, 1, H, W]` pixels scaled by 1/255,
/// one-hot `d = 10` attributes.
pub fn parse_mnist(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let img = IdxArray::parse(images, 3)?;
    let lab = IdxArray::parse(labels, 1)?;
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    if n == 0 || h == 0 || w == 0 {
        return Err(format_err(4, "empty image array"));
    }
    if lab.dims[0] != n {
        return Err(format_err(4, format!("{} labels for {n} images", lab.dims[0])));
    }
    if let Some(i) = lab.data.iter().position(|&l| l as usize >= MNIST_CLASSES) {
        return Err(format_err(8 + i, format!("label {} is not a digit", lab.data[i])));
    }
    let labels: Vec<usize> = lab.data.iter().map(|&l| l as usize).collect();
    let pixels = img.data.iter().map(|&b| byte_to_unit(b)).collect();
    Dataset::new("mnist", "train", Tensor::new([n, 1, h, w], pixels)?, one_hot(&labels, MNIST_CLASSES)?)
}

pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    parse_mnist(&std::fs::read(images_path)?, &std::fs::read(labels_path)?)
}

/// Serializes a single-channel one-hot dataset back to image and label IDX bytes.
pub fn mnist_to_idx(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let s = ds.shape();
    if s.channels != 1 || !ds.is_one_hot() || ds.d() > 256 {
        return Err(Error::Contract("IDX export needs single-channel images with one-hot labels".into()));
    }
    let images = IdxArray {
        dims: vec![ds.len(), s.height, s.width],
        data: ds.images.data().iter().map(|&v| unit_to_byte(v)).collect(),
    };
    let labels = IdxArray { dims: vec![ds.len()], data: ds.labels().into_iter().map(|l| l as u8).collect() };
    Ok((images.to_bytes(), labels.to_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Vec<u8>, Vec<u8>) {
        let images = IdxArray { dims: vec![3, 2, 2], data: vec![0, 255, 7, 128, 1, 2, 3, 4, 9, 8, 7, 6] };
        let labels = IdxArray { dims: vec![3], data: vec![7, 0, 9] };
        (images.to_bytes(), labels.to_bytes())
    }

    #[test]
    fn header_and_scaling() {
        let (images, labels) = tiny();
        assert_eq!(&images[..4], &[0, 0, 8, 3]);
        let ds = parse_mnist(&images, &labels).unwrap();
        assert_eq!(ds.images.shape(), &[3, 1, 2, 2]);
        assert_eq!(ds.images.data()[1], 1.0);
        assert_eq!(ds.attribute(0).unwrap().values()[7], 1.0);
        assert!(ds.attribute(0).unwrap().is_one_hot());
        assert_eq!(ds.labels(), vec![7, 0, 9]);
    }

    #[test]
    fn large_header_dimensions() {
        let mut header = vec![0, 0, 8, 3];
        for d in [60000u32, 28, 28] {
            header.extend_from_slice(&d.to_be_bytes());
        }
        let mut bytes = header.clone();
        bytes.resize(header.len() + 60000 * 784, 0);
        let arr = IdxArray::parse(&bytes, 3).unwrap();
        assert_eq!(arr.dims, vec![60000, 28, 28]);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (images, labels) = tiny();
        let ds = parse_mnist(&images, &labels).unwrap();
        assert_eq!(mnist_to_idx(&ds).unwrap(), (images, labels));
    }

    #[test]
    fn malformed_files_report_offsets() {
        let (images, labels) = tiny();
        let mut bad = images.clone();
        bad[2] = 9;
        assert!(matches!(parse_mnist(&bad, &labels), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_mnist(&labels, &labels), Err(Error::Format { offset: 0, .. })));
        let cut = images.len() - 1;
        assert!(matches!(parse_mnist(&images[..cut], &labels), Err(Error::Format { offset, .. }) if offset as usize == cut));
        assert!(matches!(parse_mnist(&images[..10], &labels), Err(Error::Format { offset: 10, .. })));
        let mut long = images.clone();
        long.push(0);
        assert!(matches!(parse_mnist(&long, &labels), Err(Error::Format { offset, .. }) if offset as usize == images.len()));
        let mut bad_label = labels.clone();
        bad_label[9] = 12;
        assert!(matches!(parse_mnist(&images, &bad_label), Err(Error::Format { offset: 9, .. })));
        let short = IdxArray { dims: vec![2], data: vec![1, 2] }.to_bytes();
        assert!(matches!(parse_mnist(&images, &short), Err(Error::Format { .. })));
    }
}
