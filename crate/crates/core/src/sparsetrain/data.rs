//! Image classification datasets: IDX files (the MNIST distribution format)
//! and a procedural seven-segment digit generator for offline runs.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::Rng;

use super::network::Shape;
use super::scalar::Scalar;
use super::TrainError;

pub const MNIST_MEAN: f32 = 0.1307;
pub const MNIST_STD: f32 = 0.3081;

/// Normalized images stored (N, H, W, C) with one label per image.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub shape: Shape,
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(shape: Shape, images: Vec<f32>, labels: Vec<u8>) -> Result<Self, TrainError> {
        if images.len() != shape.len() * labels.len() {
            return Err(TrainError::Data(format!(
                "{} pixels for {} images of {shape:?}",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { shape, images, labels })
    }

    /// From raw 8-bit pixels, scaled to [0, 1] then standardized.
    pub fn from_pixels(shape: Shape, pixels: &[u8], labels: Vec<u8>) -> Result<Self, TrainError> {
        let images = pixels
            .iter()
            .map(|&p| (p as f32 / 255.0 - MNIST_MEAN) / MNIST_STD)
            .collect();
        Self::new(shape, images, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.shape.len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Copies of the listed samples, converted to the network precision.
    pub fn gather<T: Scalar>(&self, indices: &[usize]) -> (Vec<T>, Vec<u8>) {
        let mut x = Vec::with_capacity(indices.len() * self.shape.len());
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend(self.image(i).iter().map(|&v| T::of(v as f64)));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    pub fn range(&self, start: usize, end: usize) -> Dataset {
        let n = self.shape.len();
        Dataset {
            shape: self.shape,
            images: self.images[start * n..end * n].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }

    /// First `len - tail` samples and the last `tail`.
    pub fn split_tail(&self, tail: usize) -> (Dataset, Dataset) {
        let cut = self.len().saturating_sub(tail);
        (self.range(0, cut), self.range(cut, self.len()))
    }

    /// Random subset without replacement.
    pub fn sample<R: Rng>(&self, count: usize, rng: &mut R) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        idx.truncate(count);
        idx.sort_unstable();
        let n = self.shape.len();
        let mut images = Vec::with_capacity(idx.len() * n);
        for &i in &idx {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            shape: self.shape,
            images,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, TrainError> {
    let io = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut raw = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut raw)).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses an IDX file of unsigned bytes, returning its dimensions and data.
pub fn parse_idx(bytes: &[u8]) -> Result<(Vec<usize>, &[u8]), TrainError> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(TrainError::Data("not an IDX file".into()));
    }
    if bytes[2] != 0x08 {
        return Err(TrainError::Data(format!("IDX element type {:#04x} is not u8", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(TrainError::Data("truncated IDX header".into()));
    }
    let dims: Vec<usize> = (0..ndim).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + count {
        return Err(TrainError::Data(format!(
            "IDX body has {} bytes, dimensions {dims:?} need {count}",
            bytes.len() - header
        )));
    }
    Ok((dims, &bytes[header..]))
}

/// Loads an image file (`N x H x W`) and its label file.
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<Dataset, TrainError> {
    let img = read_maybe_gz(images)?;
    let lab = read_maybe_gz(labels)?;
    let (idims, pixels) = parse_idx(&img)?;
    let (ldims, lbl) = parse_idx(&lab)?;
    if idims.len() != 3 || ldims.len() != 1 || idims[0] != ldims[0] {
        return Err(TrainError::Data(format!("image dims {idims:?} do not match label dims {ldims:?}")));
    }
    Dataset::from_pixels(Shape::new(idims[1], idims[2], 1), pixels, lbl.to_vec())
}

fn find(dir: &Path, stem: &str) -> Option<PathBuf> {
    let alt = stem.replacen("-idx", ".idx", 1);
    [stem.to_string(), alt]
        .iter()
        .flat_map(|s| [s.clone(), format!("{s}.gz")])
        .map(|f| dir.join(f))
        .find(|p| p.is_file())
}

/// Loads the MNIST train and test sets from a directory holding the four
/// standard IDX files, optionally gzipped.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset), TrainError> {
    let get = |stem: &str| {
        find(dir, stem).ok_or_else(|| TrainError::Data(format!("{stem} not found in {}", dir.display())))
    };
    let train = load_idx_pair(&get("train-images-idx3-ubyte")?, &get("train-labels-idx1-ubyte")?)?;
    let test = load_idx_pair(&get("t10k-images-idx3-ubyte")?, &get("t10k-labels-idx1-ubyte")?)?;
    Ok((train, test))
}

// Segment endpoints in a unit box, x right and y down:
// top, upper-left, upper-right, middle, lower-left, lower-right, bottom.
const SEGMENTS: [[(f32, f32); 2]; 7] = [
    [(0.0, 0.0), (1.0, 0.0)],
    [(0.0, 0.0), (0.0, 0.5)],
    [(1.0, 0.0), (1.0, 0.5)],
    [(0.0, 0.5), (1.0, 0.5)],
    [(0.0, 0.5), (0.0, 1.0)],
    [(1.0, 0.5), (1.0, 1.0)],
    [(0.0, 1.0), (1.0, 1.0)],
];

const DIGITS: [u8; 10] = [
    0b1110111, 0b0100100, 0b1011101, 0b1101101, 0b0101110, 0b1101011, 0b1111011, 0b0100101, 0b1111111, 0b1101111,
];

fn segment_distance(px: f32, py: f32, (ax, ay): (f32, f32), (bx, by): (f32, f32)) -> f32 {
    let (dx, dy) = (bx - ax, by - ay);
    let t = (((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    let (cx, cy) = (ax + t * dx - px, ay + t * dy - py);
    (cx * cx + cy * cy).sqrt()
}

/// Renders one seven-segment digit into a 28x28 8-bit image with a random
/// rotation, scale, shear, offset, stroke width and pixel noise.
pub fn render_digit<R: Rng>(digit: u8, rng: &mut R) -> [u8; 784] {
    let angle: f32 = rng.gen_range(-0.3..0.3);
    let scale: f32 = rng.gen_range(0.8..1.15);
    let shear: f32 = rng.gen_range(-0.25..0.25);
    let (ox, oy): (f32, f32) = (rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5));
    let width: f32 = rng.gen_range(1.0..2.2);
    let (w, h) = (10.0 * scale, 17.0 * scale);
    let (sin, cos) = angle.sin_cos();
    let mask = DIGITS[digit as usize];
    // per-segment jitter so instances of a class differ in shape
    let jitter: Vec<[(f32, f32); 2]> = SEGMENTS
        .iter()
        .map(|s| s.map(|(x, y)| (x + rng.gen_range(-0.06..0.06), y + rng.gen_range(-0.04..0.04))))
        .collect();
    let mut img = [0u8; 784];
    for (i, px) in img.iter_mut().enumerate() {
        let (x, y) = ((i % 28) as f32 - 13.5 - ox, (i / 28) as f32 - 13.5 - oy);
        // undo rotation then shear, map into the unit box
        let (rx, ry) = (cos * x + sin * y, -sin * x + cos * y);
        let ux = (rx - shear * ry) / w + 0.5;
        let uy = ry / h + 0.5;
        let mut d = f32::INFINITY;
        for (s, seg) in jitter.iter().enumerate() {
            if mask >> (6 - s) & 1 == 1 {
                let dd = segment_distance(ux * w, uy * h, (seg[0].0 * w, seg[0].1 * h), (seg[1].0 * w, seg[1].1 * h));
                d = d.min(dd);
            }
        }
        let ink = (width + 0.5 - d).clamp(0.0, 1.0);
        let noise: f32 = rng.gen_range(0.0..0.08);
        *px = ((ink + noise).min(1.0) * 255.0).round() as u8;
    }
    img
}

/// `count` synthetic digits with balanced, shuffled labels.
pub fn synthetic_digits<R: Rng>(count: usize, rng: &mut R) -> Dataset {
    let mut labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
    labels.shuffle(rng);
    let mut pixels = Vec::with_capacity(count * 784);
    for &l in &labels {
        pixels.extend_from_slice(&render_digit(l, rng));
    }
    Dataset::from_pixels(Shape::new(28, 28, 1), &pixels, labels).expect("sizes agree")
}
