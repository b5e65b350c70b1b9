//! Binary PGM (`P5`) and PPM (`P6`) images as `[C, H, W]` tensors in
//! `[-1, 1]`.
//!
//! Decoding maps sample `s` to `2 s / maxval - 1`. Encoding always writes
//! `maxval = 255`, clamps to `[-1, 1]` and rounds to the nearest level, so a
//! save/load round trip moves each value by at most `1/255`.

use std::path::{Path, PathBuf};

use invauto_core::data::{Dataset, Normalization, Split};
use invauto_core::{Real, Tensor};

use crate::error::{read, write, IoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    /// Offset of the first raster byte.
    pub data_start: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IoError::Format(format!("netpbm header: bad {what}")))
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(m) => return Err(IoError::Format(format!("unsupported netpbm magic {:?}", String::from_utf8_lossy(m)))),
        None => return Err(IoError::Length { expected: 2, found: bytes.len() }),
    };
    let mut c = Cursor { bytes, pos: 2 };
    let width = c.number("width")? as usize;
    let height = c.number("height")? as usize;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 || !(1..=65535).contains(&maxval) {
        return Err(IoError::Format(format!("netpbm header: {width}x{height}, maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(IoError::Format("netpbm header: missing separator before raster".into()));
    }
    Ok(Header {
        channels,
        width,
        height,
        maxval,
        data_start: c.pos + 1,
    })
}

/// Decodes a `P5`/`P6` file into `[C, H, W]`. Samples above `maxval` are a
/// format error.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let h = parse_header(bytes)?;
    let wide = h.maxval > 255;
    let n = h.channels * h.width * h.height;
    let need = n * if wide { 2 } else { 1 };
    let raster = &bytes[h.data_start..];
    if raster.len() < need {
        return Err(IoError::Length { expected: need, found: raster.len() });
    }
    let sample = |i: usize| -> u32 {
        if wide {
            u32::from(u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]))
        } else {
            u32::from(raster[i])
        }
    };
    let (hw, m) = (h.width * h.height, f64::from(h.maxval));
    let mut data = vec![T::zero(); n];
    // Interleaved RGB on disk, planar in memory.
    for p in 0..hw {
        for ch in 0..h.channels {
            let s = sample(p * h.channels + ch);
            if s > h.maxval {
                return Err(IoError::Format(format!("netpbm sample {s} above maxval {}", h.maxval)));
            }
            data[ch * hw + p] = T::from_f64_lossy(2.0 * f64::from(s) / m - 1.0);
        }
    }
    Ok(Tensor::new(&[h.channels, h.height, h.width], data)?)
}

/// Quantizes one value of `[-1, 1]` to `0..=255`.
pub fn to_byte<T: Real>(v: T) -> u8 {
    let v = v.as_f64();
    let v = if v.is_nan() { -1.0 } else { v.clamp(-1.0, 1.0) };
    ((v + 1.0) * 127.5).round() as u8
}

/// Encodes `[1, H, W]` as `P5` or `[3, H, W]` as `P6`.
pub fn encode<T: Real>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (c, hgt, w) = match img.shape() {
        &[c @ (1 | 3), h, w] if h > 0 && w > 0 => (c, h, w),
        s => return Err(IoError::Format(format!("cannot encode an image of shape {s:?}"))),
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {hgt}\n255\n").into_bytes();
    let hw = w * hgt;
    let d = img.data();
    out.extend((0..hw).flat_map(|p| (0..c).map(move |ch| to_byte(d[ch * hw + p]))));
    Ok(out)
}

pub fn load_image<T: Real>(path: &Path) -> Result<Tensor<T>> {
    decode(&read(path)?).map_err(|e| match e {
        IoError::Format(m) => IoError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_image<T: Real>(img: &Tensor<T>, path: &Path) -> Result<()> {
    write(path, &encode(img)?)
}

/// `.pgm`, `.ppm` and `.pnm` files of `dir`, sorted by name.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(crate::error::io_at(dir))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(crate::error::io_at(dir))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("pgm" | "ppm" | "pnm")) && p.is_file() {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Every image of `dir` as one dataset in `[-1, 1]`. All images must share
/// one shape.
pub fn load_image_folder<T: Real>(dir: &Path, split: Split) -> Result<Dataset<T>> {
    let files = image_files(dir)?;
    let Some(first) = files.first() else {
        return Err(IoError::Format(format!("{}: no PGM/PPM images", dir.display())));
    };
    let img0 = load_image::<T>(first)?;
    let shape = img0.shape().to_vec();
    let mut data = img0.into_data();
    for f in &files[1..] {
        let img = load_image::<T>(f)?;
        if img.shape() != shape.as_slice() {
            return Err(IoError::Format(format!("{}: shape {:?}, expected {shape:?}", f.display(), img.shape())));
        }
        data.extend(img.into_data());
    }
    Ok(Dataset::new(shape, data, split, Normalization::Symmetric)?)
}
