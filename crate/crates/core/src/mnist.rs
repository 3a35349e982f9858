//! MNIST ingestion from IDX files (plain or gzip), one-hot targets, the
//! train/validation split and seeded minibatch shuffling.
//!
//! IDX layout (all integers big-endian u32): magic, then one dimension per
//! axis, then the payload bytes. Images use magic 2051 with dims
//! `[count, rows, cols]`; labels use 2049 with dims `[count]`.

use std::fs::File;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{EqPropError, Result};
use crate::model::Scalar;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;
/// Size of the validation tail carved off the 60,000-image training file.
pub const VALIDATION_SIZE: usize = 10_000;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Raw image tensor as stored in an IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, image-major, row-major within an image.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image_len(&self) -> usize {
        self.rows * self.cols
    }
}

fn read_all(mut source: impl Read) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    source.read_to_end(&mut raw)?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| EqPropError::Truncated(format!("IDX header ends before {what}")))
}

fn check_magic(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(EqPropError::Format {
            expected: format!("IDX magic {expected:#010x} ({expected})"),
            found: format!("{found:#010x} ({found})"),
        });
    }
    Ok(())
}

/// Reads an IDX image file, gzip-compressed or not.
pub fn load_idx_images(source: impl Read) -> Result<IdxImages> {
    let bytes = read_all(source)?;
    check_magic(be_u32(&bytes, 0, "magic")?, IMAGE_MAGIC)?;
    let count = be_u32(&bytes, 4, "image count")? as usize;
    let rows = be_u32(&bytes, 8, "row count")? as usize;
    let cols = be_u32(&bytes, 12, "column count")? as usize;
    let expected = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < expected {
        return Err(EqPropError::Truncated(format!(
            "image payload has {} bytes, header promises {count}x{rows}x{cols} = {expected}",
            payload.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload[..expected].to_vec(),
    })
}

/// Reads an IDX label file; every label must be a digit 0..=9.
pub fn load_idx_labels(source: impl Read) -> Result<Vec<u8>> {
    let bytes = read_all(source)?;
    check_magic(be_u32(&bytes, 0, "magic")?, LABEL_MAGIC)?;
    let count = be_u32(&bytes, 4, "label count")? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(EqPropError::Truncated(format!(
            "label payload has {} bytes, header promises {count}",
            payload.len()
        )));
    }
    let labels = payload[..count].to_vec();
    if let Some(index) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
        return Err(EqPropError::Data {
            index,
            message: format!("label {} is not a digit", labels[index]),
        });
    }
    Ok(labels)
}

pub fn load_idx_images_path(path: impl AsRef<Path>) -> Result<IdxImages> {
    load_idx_images(File::open(path)?)
}

pub fn load_idx_labels_path(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    load_idx_labels(File::open(path)?)
}

pub fn write_idx_images(mut out: impl Write, images: &IdxImages) -> Result<()> {
    if images.pixels.len() != images.count * images.image_len() {
        return Err(EqPropError::dim("image payload", images.count * images.image_len(), images.pixels.len()));
    }
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.write_all(&v.to_be_bytes())?;
    }
    out.write_all(&images.pixels)?;
    Ok(())
}

pub fn write_idx_labels(mut out: impl Write, labels: &[u8]) -> Result<()> {
    out.write_all(&LABEL_MAGIC.to_be_bytes())?;
    out.write_all(&(labels.len() as u32).to_be_bytes())?;
    out.write_all(labels)?;
    Ok(())
}

/// `e_label` in R^10.
pub fn one_hot<T: Scalar>(label: u8) -> Array1<T> {
    assert!((label as usize) < NUM_CLASSES, "label {label} out of range");
    let mut v = Array1::zeros(NUM_CLASSES);
    v[label as usize] = T::one();
    v
}

/// Labelled images with a train/validation boundary: indices below
/// `train_len` are training examples, the rest validation.
///
/// Pixels are kept as raw bytes and scaled by 1/255 on access.
#[derive(Clone, Debug)]
pub struct Dataset {
    pixels: Vec<u8>,
    image_len: usize,
    labels: Vec<u8>,
    train_len: usize,
}

impl Dataset {
    /// All examples are training examples until a split is applied.
    pub fn new(images: IdxImages, labels: Vec<u8>) -> Result<Self> {
        if images.count != labels.len() {
            return Err(EqPropError::dim("label count", images.count, labels.len()));
        }
        Ok(Dataset {
            image_len: images.image_len(),
            pixels: images.pixels,
            train_len: labels.len(),
            labels,
        })
    }

    pub fn load(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        Dataset::new(load_idx_images_path(images)?, load_idx_labels_path(labels)?)
    }

    /// Moves the last `val_size` examples into the validation split.
    pub fn with_validation_tail(mut self, val_size: usize) -> Result<Self> {
        if val_size >= self.len() {
            return Err(EqPropError::Config(format!(
                "validation size {val_size} leaves no training examples out of {}",
                self.len()
            )));
        }
        self.train_len = self.len() - val_size;
        Ok(self)
    }

    /// New dataset made of the given examples, all marked as training.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.raw_image(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            pixels,
            image_len: self.image_len,
            train_len: labels.len(),
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.image_len
    }

    pub fn train_indices(&self) -> Range<usize> {
        0..self.train_len
    }

    pub fn val_indices(&self) -> Range<usize> {
        self.train_len..self.len()
    }

    pub fn raw_image(&self, i: usize) -> &[u8] {
        &self.pixels[i * self.image_len..(i + 1) * self.image_len]
    }

    /// Pixels of image `i` scaled into `[0, 1]`.
    pub fn image<T: Scalar>(&self, i: usize) -> Array1<T> {
        let scale = T::of(1.0 / 255.0);
        self.raw_image(i).iter().map(|&p| T::of(p as f64) * scale).collect()
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn target<T: Scalar>(&self, i: usize) -> Array1<T> {
        one_hot(self.labels[i])
    }
}

/// Generator for the minibatch permutation of `epoch`.
pub fn shuffle_rng(rng_seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(epoch);
    rng
}

/// Shuffles `indices` with `rng` and cuts them into batches of `size`; the
/// last batch may be short.
pub fn minibatches_with(indices: &[usize], size: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if size == 0 {
        return Err(EqPropError::Config("minibatch size must be at least 1".into()));
    }
    let mut order = indices.to_vec();
    order.shuffle(rng);
    Ok(order.chunks(size).map(|c| c.to_vec()).collect())
}

/// Deterministic shuffled minibatches for a given seed and epoch.
pub fn minibatches(indices: &[usize], size: usize, rng_seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    minibatches_with(indices, size, &mut shuffle_rng(rng_seed, epoch))
}
