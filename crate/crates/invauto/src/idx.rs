//! Big-endian IDX containers of unsigned bytes (the MNIST distribution format).

use std::path::Path;

use invauto_core::data::{Dataset, Normalization, Split};
use invauto_core::scalar::{cst, Real};

use crate::error::{read, IoError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Target range for byte pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelRange {
    /// `v / 255`
    Unit,
    /// `v / 127.5 - 1`
    Symmetric,
}

impl PixelRange {
    pub fn scale<T: Real>(self, v: u8) -> T {
        match self {
            PixelRange::Unit => cst(v as f64 / 255.0),
            PixelRange::Symmetric => cst(v as f64 / 127.5 - 1.0),
        }
    }

    pub fn normalization(self) -> Normalization {
        match self {
            PixelRange::Unit => Normalization::Unit,
            PixelRange::Symmetric => Normalization::Symmetric,
        }
    }
}

/// Header dims and payload of an IDX byte array.
pub fn parse_idx(bytes: &[u8]) -> Result<(u32, Vec<usize>, &[u8])> {
    if bytes.len() < 4 {
        return Err(IoError::Length {
            expected: 4,
            found: bytes.len(),
        });
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    let rank = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        m => return Err(IoError::Format(format!("unsupported IDX magic {m:#010x}"))),
    };
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(IoError::Length {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let payload = dims.iter().product::<usize>();
    if bytes.len() != header + payload {
        return Err(IoError::Length {
            expected: header + payload,
            found: bytes.len(),
        });
    }
    Ok((magic, dims, &bytes[header..]))
}

/// Images `[n, rows, cols]` as a dataset of `[1, rows, cols]` samples.
pub fn decode_idx_images<T: Real>(bytes: &[u8], range: PixelRange, split: Split) -> Result<Dataset<T>> {
    let (magic, dims, payload) = parse_idx(bytes)?;
    if magic != IMAGES_MAGIC {
        return Err(IoError::Format("expected an IDX image file".into()));
    }
    if dims[0] == 0 {
        return Err(IoError::Format("IDX file holds no images".into()));
    }
    let data = payload.iter().map(|&v| range.scale(v)).collect();
    Ok(Dataset::new(vec![1, dims[1], dims[2]], data, split, range.normalization())?)
}

pub fn decode_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let (magic, _, payload) = parse_idx(bytes)?;
    if magic != LABELS_MAGIC {
        return Err(IoError::Format("expected an IDX label file".into()));
    }
    Ok(payload.to_vec())
}

pub fn load_idx<T: Real>(path: &Path, range: PixelRange, split: Split) -> Result<Dataset<T>> {
    decode_idx_images(&read(path)?, range, split)
}

/// Loads `{train,t10k}-images-idx3-ubyte` (and labels when present) from `dir`.
pub fn load_mnist<T: Real>(dir: &Path, split: Split, range: PixelRange) -> Result<Dataset<T>> {
    let stem = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let mut d = load_idx(&dir.join(format!("{stem}-images-idx3-ubyte")), range, split)?;
    let labels = dir.join(format!("{stem}-labels-idx1-ubyte"));
    if labels.exists() {
        let l = decode_idx_labels(&read(&labels)?)?;
        if l.len() != d.len() {
            return Err(IoError::Format(format!("{} labels for {} images", l.len(), d.len())));
        }
        d.labels = Some(l);
    }
    Ok(d)
}
