//! IDX-format reader for the Fashion-MNIST files.
//!
//! Big-endian headers: images are magic 0x00000803, count, rows, cols, then
//! raw bytes; labels are magic 0x00000801, count, then raw bytes. Files may
//! be gzip-compressed; the gzip signature is detected from the first bytes.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::bufread::GzDecoder;

use super::LabeledImage;
use crate::panel::{IMAGE_PIXELS, IMAGE_SIDE};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug)]
pub enum IdxError {
    Io(std::io::Error),
    BadMagic { expected: u32, found: u32 },
    Truncated { context: &'static str },
    BadShape { rows: u32, cols: u32 },
    CountMismatch { images: usize, labels: usize },
    BadLabel { index: usize, label: u8 },
}

impl fmt::Display for IdxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdxError::Io(e) => write!(f, "idx i/o error: {e}"),
            IdxError::BadMagic { expected, found } => {
                write!(f, "bad idx magic {found:#010x}, expected {expected:#010x}")
            }
            IdxError::Truncated { context } => write!(f, "idx file truncated while {context}"),
            IdxError::BadShape { rows, cols } => {
                write!(f, "expected 28x28 images, file says {rows}x{cols}")
            }
            IdxError::CountMismatch { images, labels } => {
                write!(f, "image/label count mismatch: {images} images, {labels} labels")
            }
            IdxError::BadLabel { index, label } => {
                write!(f, "label {label} at index {index} is outside 0..=9")
            }
        }
    }
}

impl std::error::Error for IdxError {}

impl From<std::io::Error> for IdxError {
    fn from(e: std::io::Error) -> Self {
        IdxError::Io(e)
    }
}

fn open_maybe_gzip(path: &Path) -> Result<Box<dyn Read>, IdxError> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut sig = [0u8; 2];
    let n = reader.fill_and_peek(&mut sig)?;
    if n == 2 && sig == [0x1f, 0x8b] {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

trait PeekTwo: std::io::BufRead {
    fn fill_and_peek(&mut self, out: &mut [u8; 2]) -> std::io::Result<usize> {
        let buf = self.fill_buf()?;
        let n = buf.len().min(2);
        out[..n].copy_from_slice(&buf[..n]);
        Ok(n)
    }
}

impl<T: std::io::BufRead> PeekTwo for T {}

fn read_u32_be(r: &mut dyn Read, context: &'static str) -> Result<u32, IdxError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| IdxError::Truncated { context })?;
    Ok(u32::from_be_bytes(buf))
}

/// Raw image bytes from an IDX image file, one `IMAGE_PIXELS`-byte row per
/// image.
pub fn load_idx_images(path: &Path) -> Result<Vec<u8>, IdxError> {
    let mut r = open_maybe_gzip(path)?;
    let magic = read_u32_be(&mut r, "reading image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(IdxError::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&mut r, "reading image count")? as usize;
    let rows = read_u32_be(&mut r, "reading row count")?;
    let cols = read_u32_be(&mut r, "reading column count")?;
    if rows as usize != IMAGE_SIDE || cols as usize != IMAGE_SIDE {
        return Err(IdxError::BadShape { rows, cols });
    }
    let mut data = vec![0u8; count * IMAGE_PIXELS];
    r.read_exact(&mut data).map_err(|_| IdxError::Truncated {
        context: "reading pixel data",
    })?;
    Ok(data)
}

/// Labels from an IDX label file.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>, IdxError> {
    let mut r = open_maybe_gzip(path)?;
    let magic = read_u32_be(&mut r, "reading label magic")?;
    if magic != LABEL_MAGIC {
        return Err(IdxError::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&mut r, "reading label count")? as usize;
    let mut data = vec![0u8; count];
    r.read_exact(&mut data).map_err(|_| IdxError::Truncated {
        context: "reading label data",
    })?;
    Ok(data)
}

/// Load an image/label file pair into `[0,1]`-valued labeled images,
/// preserving file order.
pub fn load_fashion_mnist(
    image_path: &Path,
    label_path: &Path,
) -> Result<Vec<LabeledImage>, IdxError> {
    let images = load_idx_images(image_path)?;
    let labels = load_idx_labels(label_path)?;
    let n_images = images.len() / IMAGE_PIXELS;
    if n_images != labels.len() {
        return Err(IdxError::CountMismatch {
            images: n_images,
            labels: labels.len(),
        });
    }
    images
        .chunks_exact(IMAGE_PIXELS)
        .zip(labels.iter())
        .enumerate()
        .map(|(index, (raw, &label))| {
            if label > 9 {
                return Err(IdxError::BadLabel { index, label });
            }
            let pixels = raw.iter().map(|&b| b as f32 / 255.0).collect();
            Ok(LabeledImage { pixels, label })
        })
        .collect()
}
