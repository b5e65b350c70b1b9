//! In-memory datasets and synthetic image-domain pairs.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::init::rng_for;
use crate::scalar::{cst, Real};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// How raw values were mapped into the stored range.
#[derive(Debug, Clone, PartialEq)]
pub enum Normalization {
    /// Bytes divided by 255.
    Unit,
    /// Bytes mapped linearly onto `[-1, 1]`.
    Symmetric,
    /// Unit-range values minus a per-feature mean, divided by one global std.
    Centered { mean: Vec<f64>, std: f64 },
}

/// Equally shaped samples stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    sample_shape: Vec<usize>,
    data: Vec<T>,
    pub labels: Option<Vec<u8>>,
    pub split: Split,
    pub norm: Normalization,
}

impl<T: Real> Dataset<T> {
    pub fn new(sample_shape: Vec<usize>, data: Vec<T>, split: Split, norm: Normalization) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || data.len() % per != 0 {
            return Err(Error::Dimension(alloc::format!(
                "{} values do not split into samples of shape {sample_shape:?}",
                data.len()
            )));
        }
        Ok(Dataset {
            sample_shape,
            data,
            labels: None,
            split,
            norm,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.sample_len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    /// Samples `idx` stacked along a new leading axis.
    pub fn batch(&self, idx: &[usize]) -> Result<Tensor<T>> {
        if idx.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let s = self.sample_len();
        let mut out = Vec::with_capacity(idx.len() * s);
        for &i in idx {
            if i >= self.len() {
                return Err(Error::Dimension(alloc::format!("sample {i} of {}", self.len())));
            }
            out.extend_from_slice(self.sample(i));
        }
        let mut shape = vec![idx.len()];
        shape.extend(&self.sample_shape);
        Tensor::new(&shape, out)
    }

    /// Same values viewed with another per-sample shape.
    pub fn reshaped(mut self, sample_shape: Vec<usize>) -> Result<Self> {
        if sample_shape.iter().product::<usize>() != self.sample_len() {
            return Err(Error::shape("dataset reshape", &self.sample_shape, &sample_shape));
        }
        self.sample_shape = sample_shape;
        Ok(self)
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let mut d = self.clone();
        d.data.truncate(n * self.sample_len());
        if let Some(l) = &mut d.labels {
            l.truncate(n);
        }
        d
    }

    /// Per-feature mean and global std of a unit-range dataset.
    pub fn fit_centering(&self) -> Result<(Vec<f64>, f64)> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (n, s) = (self.len(), self.sample_len());
        let mut mean = vec![0.0f64; s];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(self.sample(i)) {
                *m += v.as_f64();
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = 0.0;
        let grand = mean.iter().sum::<f64>() / s as f64;
        for v in &self.data {
            var += (v.as_f64() - grand) * (v.as_f64() - grand);
        }
        let std = num_traits::Float::sqrt(var / self.data.len() as f64);
        Ok((mean, std))
    }

    /// Subtracts `mean` per feature and divides by `std`. Only valid on a
    /// unit-range dataset.
    pub fn centered(mut self, mean: &[f64], std: f64) -> Result<Self> {
        if self.norm != Normalization::Unit {
            return Err(Error::Contract("centering expects unit-range data".into()));
        }
        if mean.len() != self.sample_len() || !(std > 0.0) {
            return Err(Error::Parameter("centering statistics do not fit this dataset".into()));
        }
        let s = self.sample_len();
        for (i, v) in self.data.iter_mut().enumerate() {
            *v = cst((v.as_f64() - mean[i % s]) / std);
        }
        self.norm = Normalization::Centered {
            mean: mean.to_vec(),
            std,
        };
        Ok(self)
    }
}

/// Index permutation for one pass over `n` samples; a pure function of
/// `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, 0x5_0000_0000 + epoch));
    idx
}

/// Relationship between the two synthetic domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// `B = -A`.
    Invert,
    /// Red and blue channels swapped. The swap is its own inverse.
    ChannelSwap,
    /// `B = 0.5 A + 0.3`.
    AffineBrightness,
}

impl SyntheticKind {
    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "invert" => Ok(SyntheticKind::Invert),
            "hue-shift" | "channel-swap" => Ok(SyntheticKind::ChannelSwap),
            "affine-brightness" => Ok(SyntheticKind::AffineBrightness),
            _ => Err(Error::Unknown {
                what: "synthetic domain kind",
                name: s.into(),
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Invert => "invert",
            SyntheticKind::ChannelSwap => "hue-shift",
            SyntheticKind::AffineBrightness => "affine-brightness",
        }
    }

    /// Maps one `[3, h, w]` image of domain A to its B counterpart.
    pub fn apply<T: Real>(self, img: &[T]) -> Vec<T> {
        match self {
            SyntheticKind::Invert => img.iter().map(|&v| -v).collect(),
            SyntheticKind::ChannelSwap => {
                let p = img.len() / 3;
                let mut out = img.to_vec();
                out[..p].copy_from_slice(&img[2 * p..]);
                out[2 * p..].copy_from_slice(&img[..p]);
                out
            }
            SyntheticKind::AffineBrightness => img.iter().map(|&v| v * cst(0.5) + cst(0.3)).collect(),
        }
    }
}

/// Two unpaired image domains with the hidden ground-truth pairing kept.
#[derive(Debug, Clone)]
pub struct DomainPair<T> {
    pub a: Dataset<T>,
    /// Shuffled: sample `i` of `a` corresponds to sample `truth[i]` of `b`.
    pub b: Dataset<T>,
    pub truth: Vec<usize>,
}

impl<T: Real> DomainPair<T> {
    /// Domain B reordered to align with A.
    pub fn b_aligned(&self) -> Result<Dataset<T>> {
        let mut d = self.b.clone();
        let t = self.b.batch(&self.truth)?;
        d.data = t.into_data();
        Ok(d)
    }
}

/// `n` random `[3, size, size]` images in `[-1, 1]` (dark graded background
/// with one to three bright discs or boxes) and their counterparts under
/// `kind`. Deterministic per `seed`.
pub fn make_synthetic_domains<T: Real>(kind: SyntheticKind, n: usize, size: usize, seed: u64) -> Result<DomainPair<T>> {
    if n == 0 || size < 8 {
        return Err(Error::Parameter(alloc::format!(
            "need n > 0 and size >= 8, got n={n} size={size}"
        )));
    }
    let rng = &mut rng_for(seed, 0xD0_0000);
    let mut a = Vec::with_capacity(n * 3 * size * size);
    for _ in 0..n {
        a.extend(draw_image::<T>(size, rng));
    }
    let mut truth: Vec<usize> = (0..n).collect();
    truth.shuffle(rng);
    // b[truth[i]] = f(a[i])
    let per = 3 * size * size;
    let mut b = vec![T::zero(); n * per];
    for i in 0..n {
        let img = kind.apply(&a[i * per..(i + 1) * per]);
        b[truth[i] * per..(truth[i] + 1) * per].copy_from_slice(&img);
    }
    let shape = vec![3, size, size];
    Ok(DomainPair {
        a: Dataset::new(shape.clone(), a, Split::Train, Normalization::Symmetric)?,
        b: Dataset::new(shape, b, Split::Train, Normalization::Symmetric)?,
        truth,
    })
}

fn draw_image<T: Real>(s: usize, rng: &mut impl Rng) -> Vec<T> {
    let sf = s as f64;
    let mut img = vec![0.0f64; 3 * s * s];
    let base: [f64; 3] = core::array::from_fn(|_| -0.9 + 0.3 * rng.random::<f64>());
    let gx = (rng.random::<f64>() * 2.0 - 1.0) * 0.2;
    for c in 0..3 {
        for y in 0..s {
            for x in 0..s {
                img[(c * s + y) * s + x] = base[c] + gx * x as f64 / sf;
            }
        }
    }
    let margin = (s / 8).max(1);
    for _ in 0..rng.random_range(1..=3) {
        let mut col: [f64; 3] = core::array::from_fn(|_| 0.2 + 0.8 * rng.random::<f64>());
        col[0] = 0.5 + 0.5 * rng.random::<f64>();
        let cx = rng.random_range(margin..s - margin) as f64;
        let cy = rng.random_range(margin..s - margin) as f64;
        let r = (3.0 + 6.0 * rng.random::<f64>()) * sf / 32.0;
        let disc = rng.random::<f64>() < 0.5;
        for y in 0..s {
            for x in 0..s {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if disc {
                    dx * dx + dy * dy < r * r
                } else {
                    dx.abs() < r && dy.abs() < r * 0.7
                };
                if inside {
                    for c in 0..3 {
                        img[(c * s + y) * s + x] = col[c];
                    }
                }
            }
        }
    }
    img.into_iter().map(|v| cst(v.clamp(-1.0, 1.0))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_is_a_permutation() {
        let mut o = epoch_order(1, 2, 50);
        assert_eq!(o, epoch_order(1, 2, 50));
        assert_ne!(o, epoch_order(1, 3, 50));
        o.sort();
        assert_eq!(o, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn centering_statistics() {
        let d = Dataset::<f64>::new(vec![2], vec![0.0, 1.0, 1.0, 1.0], Split::Train, Normalization::Unit).unwrap();
        let (m, s) = d.fit_centering().unwrap();
        assert_eq!(m, vec![0.5, 1.0]);
        assert!((s - num_traits::Float::sqrt(0.1875f64)).abs() < 1e-15);
        let c = d.centered(&m, s).unwrap();
        assert!((c.data()[0] + 0.5 / s).abs() < 1e-15);
    }
}
