//! Tiled image grids written as 8-bit portable graymaps (one channel) or
//! pixmaps (three channels).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `round(v·255)` with halves rounded up, after clamping to `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    crate::data::unit_to_byte(v)
}

/// Tiles laid out on a `rows × cols` raster; empty cells stay white.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    tiles: Tensor,
    cells: Vec<Option<usize>>,
    rows: usize,
    cols: usize,
}

impl ImageGrid {
    /// `cells[r·cols + c]` names the tile of `images` shown at `(r, c)`.
    pub fn new(images: &Tensor, cells: Vec<Option<usize>>, rows: usize, cols: usize) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 || !(s[1] == 1 || s[1] == 3) {
            return Err(Error::Shape(format!("grid tiles must be [N, 1|3, H, W], got {s:?}")));
        }
        if rows * cols == 0 || cells.len() != rows * cols {
            return Err(Error::Contract(format!("{} cells cannot fill a {rows}×{cols} grid", cells.len())));
        }
        if let Some(i) = cells.iter().flatten().find(|&&i| i >= s[0]) {
            return Err(Error::Contract(format!("cell refers to tile {i} of {}", s[0])));
        }
        Ok(Self { tiles: images.clone(), cells, rows, cols })
    }

    /// All tiles in order, `cols` per row.
    pub fn row_major(images: &Tensor, cols: usize) -> Result<Self> {
        let n = images.shape().first().copied().unwrap_or(0);
        let cols = cols.clamp(1, n.max(1));
        let rows = n.div_ceil(cols).max(1);
        let cells = (0..rows * cols).map(|i| (i < n).then_some(i)).collect();
        Self::new(images, cells, rows, cols)
    }

    /// One row per class present in `labels`, ascending, holding up to
    /// `per_row` of that class's tiles in their original order.
    pub fn by_class(images: &Tensor, labels: &[usize], per_row: usize) -> Result<Self> {
        let groups = class_groups(labels, per_row);
        let cols = groups.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let cells = groups
            .iter()
            .flat_map(|g| (0..cols).map(move |c| g.get(c).copied()))
            .collect::<Vec<_>>();
        Self::new(images, cells, groups.len().max(1), cols)
    }

    /// Coarse, restored and real versions side by side, one example per
    /// row, rows grouped by class when `labels` is given.
    pub fn triptych(coarse: &Tensor, restored: &Tensor, real: &Tensor, labels: Option<&[usize]>, per_class: usize) -> Result<Self> {
        if coarse.shape() != restored.shape() || coarse.shape() != real.shape() {
            return Err(Error::Shape(format!(
                "panels differ in shape: {:?}, {:?}, {:?}",
                coarse.shape(),
                restored.shape(),
                real.shape()
            )));
        }
        let n = coarse.shape().first().copied().unwrap_or(0);
        let order: Vec<usize> = match labels {
            Some(l) => class_groups(l, per_class).concat(),
            None => (0..n).collect(),
        };
        let stacked = Tensor::concat(&[coarse, restored, real], 0)?;
        let cells = order.iter().flat_map(|&i| [Some(i), Some(n + i), Some(2 * n + i)]).collect::<Vec<_>>();
        let rows = order.len();
        Self::new(&stacked, cells, rows, 3)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Pixel width and height of the raster, separators included.
    pub fn dimensions(&self) -> (usize, usize) {
        let s = self.tiles.shape();
        (self.cols * s[3] + self.cols - 1, self.rows * s[2] + self.rows - 1)
    }

    pub fn to_pnm(&self) -> Vec<u8> {
        let s = self.tiles.shape();
        let (ch, th, tw) = (s[1], s[2], s[3]);
        let (w, h) = self.dimensions();
        let mut pixels = vec![255u8; w * h * ch];
        for (cell, tile) in self.cells.iter().enumerate() {
            let Some(t) = tile else { continue };
            let (top, left) = ((cell / self.cols) * (th + 1), (cell % self.cols) * (tw + 1));
            let data = &self.tiles.data()[t * ch * th * tw..(t + 1) * ch * th * tw];
            for y in 0..th {
                for x in 0..tw {
                    for c in 0..ch {
                        pixels[((top + y) * w + left + x) * ch + c] = quantize(data[(c * th + y) * tw + x]);
                    }
                }
            }
        }
        let mut out = format!("{}\n{w} {h}\n255\n", if ch == 1 { "P5" } else { "P6" }).into_bytes();
        out.extend(pixels);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pnm())?;
        Ok(())
    }
}

fn class_groups(labels: &[usize], per_class: usize) -> Vec<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    (0..classes)
        .map(|c| labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).take(per_class).collect::<Vec<_>>())
        .filter(|g| !g.is_empty())
        .collect()
}

/// Writes `images` row-major with `cols` tiles per row.
pub fn write_image_grid(images: &Tensor, cols: usize, path: &Path) -> Result<()> {
    ImageGrid::row_major(images, cols)?.write(path)
}

/// A decoded binary PGM or PPM with maxval 255.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// Interleaved, row-major.
    pub pixels: Vec<u8>,
}

impl Pnm {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format { offset: pos as u64, message: "truncated PNM header".into() });
            }
            fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
        }
        let channels = match fields[0].1.as_str() {
            "P5" => 1,
            "P6" => 3,
            _ => return Err(Error::Format { offset: 0, message: "expected a binary PGM or PPM".into() }),
        };
        let number = |k: usize| {
            fields[k]
                .1
                .parse::<usize>()
                .map_err(|_| Error::Format { offset: fields[k].0 as u64, message: format!("bad header field `{}`", fields[k].1) })
        };
        let (width, height, maxval) = (number(1)?, number(2)?, number(3)?);
        if maxval != 255 {
            return Err(Error::Format { offset: fields[3].0 as u64, message: format!("maxval {maxval} is not 255") });
        }
        let body = &bytes[(pos + 1).min(bytes.len())..];
        let expected = width * height * channels;
        if body.len() != expected {
            return Err(Error::Format {
                offset: (pos + 1 + body.len().min(expected)) as u64,
                message: format!("expected {expected} pixel bytes, found {}", body.len()),
            });
        }
        Ok(Self { channels, width, height, pixels: body.to_vec() })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read(path)?)
    }

    /// The tile at raster cell `(row, col)` as `[C, H, W]` values `byte / 255`.
    pub fn tile(&self, row: usize, col: usize, tile_h: usize, tile_w: usize) -> Result<Tensor> {
        let (top, left) = (row * (tile_h + 1), col * (tile_w + 1));
        if top + tile_h > self.height || left + tile_w > self.width {
            return Err(Error::Shape(format!("cell ({row}, {col}) lies outside the {}×{} raster", self.width, self.height)));
        }
        let ch = self.channels;
        Ok(Tensor::from_fn(&[ch, tile_h, tile_w], |i| {
            let (c, y, x) = (i / (tile_h * tile_w), (i / tile_w) % tile_h, i % tile_w);
            f64::from(self.pixels[((top + y) * self.width + left + x) * ch + c]) / 255.0
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_arithmetic_and_quantization() {
        let tiles = Tensor::from_fn(&[4, 1, 28, 28], |i| (i % 7) as f64 / 6.0);
        let grid = ImageGrid::row_major(&tiles, 2).unwrap();
        assert_eq!(grid.dimensions(), (57, 57));
        let pnm = Pnm::parse(&grid.to_pnm()).unwrap();
        assert_eq!((pnm.width, pnm.height, pnm.channels), (57, 57, 1));
        assert_eq!(pnm.pixels[28], 255);
        assert_eq!((quantize(1.0), quantize(0.5), quantize(0.0)), (255, 128, 0));
        assert_eq!(quantize(1.5), 255);
    }

    #[test]
    fn round_trip_recovers_quantized_pixels() {
        let tiles = Tensor::from_fn(&[5, 3, 6, 4], |i| ((i * 37) % 101) as f64 / 100.0);
        let grid = ImageGrid::row_major(&tiles, 3).unwrap();
        let pnm = Pnm::parse(&grid.to_pnm()).unwrap();
        for t in 0..5 {
            let back = pnm.tile(t / 3, t % 3, 6, 4).unwrap();
            let want = tiles.row(t).unwrap().reshape(&[3, 6, 4]).unwrap().map(|v| f64::from(quantize(v)) / 255.0);
            assert_eq!(back, want);
        }
        // The unused sixth cell is white.
        assert!(pnm.tile(1, 2, 6, 4).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn class_rows_and_triptychs() {
        let tiles = Tensor::from_fn(&[6, 1, 2, 2], |i| (i / 4) as f64 / 5.0);
        let grid = ImageGrid::by_class(&tiles, &[2, 0, 2, 1, 0, 2], 2).unwrap();
        assert_eq!((grid.rows(), grid.cols()), (3, 2));
        assert_eq!(grid.cells, vec![Some(1), Some(4), Some(3), None, Some(0), Some(2)]);
        let t = ImageGrid::triptych(&tiles, &tiles, &tiles, Some(&[1, 0, 1, 0, 0, 1]), 1).unwrap();
        assert_eq!((t.rows(), t.cols()), (2, 3));
        assert_eq!(t.cells, vec![Some(1), Some(7), Some(13), Some(0), Some(6), Some(12)]);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(matches!(ImageGrid::row_major(&Tensor::zeros(&[2, 2, 4, 4]), 2), Err(Error::Shape(_))));
        assert!(matches!(ImageGrid::new(&Tensor::zeros(&[1, 1, 2, 2]), vec![Some(3)], 1, 1), Err(Error::Contract(_))));
        assert!(matches!(Pnm::parse(b"P2\n1 1\n255\n0"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(Pnm::parse(b"P5\n2 2\n255\n\x00"), Err(Error::Format { .. })));
        assert!(matches!(Pnm::parse(b"P5\n2"), Err(Error::Format { .. })));
    }
}
