//! Explicit matrices for the linear part of a stack, and the statistics
//! used to judge how close a trained encoder/decoder pair is to inversion.
//!
//! All matrices are `f64` and act on row-major `vec` (channel, row, column).
//! Biases and nonlinearities contribute nothing; convolutions become their
//! Toeplitz matrices obtained by column probing.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::layers::{Layer, Network, Role, Stack};
use crate::param::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const HISTOGRAM_BINS: usize = 100;

/// Matrix `T` with `conv(x) == T vec(x)`, found by convolving every basis
/// image. A basis image is non-zero in a single channel, so each input
/// channel is probed with its own kernel slice.
pub fn toeplitz_of_conv<T: Real>(kernel: &Tensor<T>, g: &ConvGeom) -> Result<Tensor<f64>> {
    check_kernel(kernel, g)?;
    let kd = kernel.cast::<f64>();
    let (hw, kk, out_len) = (g.h * g.w, g.k * g.k, g.out_len());
    let g1 = ConvGeom { c_in: 1, ..*g };
    let probes = Tensor::<f64>::eye(hw);
    let mut t = vec![0.0f64; out_len * g.in_len()];
    let cols = g.in_len();
    for ci in 0..g.c_in {
        let slice: Vec<f64> = (0..g.c_out)
            .flat_map(|co| kd.data()[(co * g.c_in + ci) * kk..(co * g.c_in + ci + 1) * kk].iter().copied())
            .collect();
        let out = kernels::conv_forward(probes.data(), hw, &slice, &g1);
        for q in 0..hw {
            for (r, &v) in out[q * out_len..(q + 1) * out_len].iter().enumerate() {
                t[r * cols + ci * hw + q] = v;
            }
        }
    }
    Tensor::new(&[out_len, cols], t)
}

/// Matrix of the transposed convolution, found by probing that operation
/// itself (not by transposing [`toeplitz_of_conv`]), one output channel at
/// a time.
pub fn toeplitz_of_conv_transposed<T: Real>(kernel: &Tensor<T>, g: &ConvGeom) -> Result<Tensor<f64>> {
    check_kernel(kernel, g)?;
    let kd = kernel.cast::<f64>();
    let (ohw, per_co, in_len) = (g.out_h() * g.out_w(), g.c_in * g.k * g.k, g.in_len());
    let g1 = ConvGeom { c_out: 1, ..*g };
    let probes = Tensor::<f64>::eye(ohw);
    let cols = g.out_len();
    let mut t = vec![0.0f64; in_len * cols];
    for co in 0..g.c_out {
        let slice = &kd.data()[co * per_co..(co + 1) * per_co];
        let out = kernels::conv_transposed_forward(probes.data(), ohw, slice, &g1);
        for q in 0..ohw {
            for (r, &v) in out[q * in_len..(q + 1) * in_len].iter().enumerate() {
                t[r * cols + co * ohw + q] = v;
            }
        }
    }
    Tensor::new(&[in_len, cols], t)
}

/// The same matrix as [`toeplitz_of_conv`] by direct index arithmetic.
pub fn toeplitz_direct<T: Real>(kernel: &Tensor<T>, g: &ConvGeom) -> Result<Tensor<f64>> {
    check_kernel(kernel, g)?;
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut t = Tensor::<f64>::zeros(&[g.out_len(), g.in_len()]);
    let kd = kernel.data();
    let cols = g.in_len();
    for co in 0..g.c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (co * oh + oy) * ow + ox;
                for ci in 0..g.c_in {
                    for kh in 0..g.k {
                        for kw in 0..g.k {
                            let iy = (oy * g.stride + kh) as isize - g.pad as isize;
                            let ix = (ox * g.stride + kw) as isize - g.pad as isize;
                            if iy < 0 || ix < 0 || iy as usize >= g.h || ix as usize >= g.w {
                                continue;
                            }
                            let col = (ci * g.h + iy as usize) * g.w + ix as usize;
                            let kv = kd[((co * g.c_in + ci) * g.k + kh) * g.k + kw];
                            t.data_mut()[row * cols + col] = kv.as_f64();
                        }
                    }
                }
            }
        }
    }
    Ok(t)
}

fn check_kernel<T: Real>(kernel: &Tensor<T>, g: &ConvGeom) -> Result<()> {
    if kernel.shape() != g.kernel_shape() {
        return Err(Error::shape("toeplitz", kernel.shape(), &g.kernel_shape()));
    }
    Ok(())
}

/// `a * b` with a fixed summation order: ascending inner index, zero terms
/// skipped. Computing `b^T a^T` the same way yields bit-for-bit the
/// transpose, because products commute, every sum runs in the same order
/// and adding an exact zero never changes a running sum.
pub fn matmul_ordered(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let a_rows = nonzeros_by_row(ad, m, k);
    let b_nnz = bd.iter().filter(|&&v| v != 0.0).count();
    let mut out = vec![0.0f64; m * n];
    if b_nnz * 4 < k * n {
        let b_rows = nonzeros_by_row(bd, k, n);
        for (i, row) in a_rows.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for &(p, av) in row {
                for &(j, bv) in &b_rows[p] {
                    orow[j] += av * bv;
                }
            }
        }
    } else {
        // Column tiles keep the touched slice of `b` cache resident.
        const TILE: usize = 128;
        for lo in (0..n).step_by(TILE) {
            let hi = (lo + TILE).min(n);
            for (i, row) in a_rows.iter().enumerate() {
                let orow = &mut out[i * n + lo..i * n + hi];
                for &(p, av) in row {
                    let brow = &bd[p * n + lo..p * n + hi];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
    }
    Tensor::new(&[m, n], out)
}

fn nonzeros_by_row(d: &[f64], rows: usize, cols: usize) -> Vec<Vec<(usize, f64)>> {
    (0..rows)
        .map(|r| {
            d[r * cols..(r + 1) * cols]
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(j, &v)| (j, v))
                .collect()
        })
        .collect()
}

/// Matrix of one layer's linear part, `None` for biases and nonlinearities.
pub fn layer_matrix<T: Real>(layer: &Layer, store: &ParamStore<T>) -> Result<Option<Tensor<f64>>> {
    Ok(match *layer {
        Layer::Linear { w, role } => {
            let w = store.value(w).cast::<f64>();
            Some(match role {
                Role::Forward => w,
                Role::Inverse => w.transpose()?,
            })
        }
        Layer::Conv { k, geom, role } => {
            let k = store.value(k);
            Some(match role {
                Role::Forward => toeplitz_of_conv(k, &geom)?,
                Role::Inverse => toeplitz_of_conv_transposed(k, &geom)?,
            })
        }
        Layer::InvRes { k1, k2, geom, role, .. } => {
            let (k1, k2) = (store.value(k1), store.value(k2));
            let mut m = match role {
                Role::Forward => {
                    matmul_ordered(&toeplitz_of_conv_transposed(k2, &geom)?, &toeplitz_of_conv(k1, &geom)?)?
                }
                Role::Inverse => {
                    matmul_ordered(&toeplitz_of_conv_transposed(k1, &geom)?, &toeplitz_of_conv(k2, &geom)?)?
                }
            };
            let n = m.dims2()?.0;
            for i in 0..n {
                m.data_mut()[i * n + i] += 1.0;
            }
            Some(m)
        }
        Layer::Bias { .. }
        | Layer::InvAct { .. }
        | Layer::LeakyRelu { .. }
        | Layer::InstanceNorm
        | Layer::Tanh
        | Layer::Sigmoid => None,
    })
}

/// Product of the per-layer matrices in application order: `L_m ... L_1`.
///
/// For an encoder-role stack the product is accumulated from the first
/// applied layer (`acc = L_i acc`). A mirrored decoder is accumulated as the
/// transpose of that association: its factors are transposed and fed to the
/// same product in the same positions, so an exactly tied pair
/// materializes to exact transposes of each other even though the dense
/// products themselves are blocked.
pub fn materialize_stack<T: Real>(stack: &Stack, store: &ParamStore<T>) -> Result<Tensor<f64>> {
    let shapes = stack.shapes(store)?;
    let in_dim: usize = shapes[0].iter().product();
    let mut mats = Vec::new();
    for l in &stack.layers {
        if let Some(m) = layer_matrix(l, store)? {
            mats.push(m);
        }
    }
    if mats.is_empty() {
        return Ok(Tensor::eye(in_dim));
    }
    match stack.role {
        Role::Forward => {
            let mut it = mats.into_iter();
            let mut acc = it.next().unwrap();
            for m in it {
                acc = kernels::matmul(&m, false, &acc, false)?;
            }
            Ok(acc)
        }
        Role::Inverse => {
            // D = L_1 L_2 ... L_m (L_m applied first), evaluated as
            // (L_m^T ... (L_2^T L_1^T))^T.
            let mut it = mats.into_iter().rev();
            let mut acc = it.next().unwrap().transpose()?;
            for m in it {
                acc = kernels::matmul(&m.transpose()?, false, &acc, false)?;
            }
            acc.transpose()
        }
    }
}

/// Explicit encoder and decoder matrices of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedMap {
    /// `latent x input`
    pub e: Tensor<f64>,
    /// `input x latent`
    pub d: Tensor<f64>,
}

impl LinearizedMap {
    pub fn of_stacks<T: Real>(encoder: &Stack, decoder: &Stack, store: &ParamStore<T>) -> Result<Self> {
        let e = materialize_stack(encoder, store)?;
        let d = materialize_stack(decoder, store)?;
        let (er, ec) = e.dims2()?;
        let (dr, dc) = d.dims2()?;
        if dc != er || dr != ec {
            return Err(Error::shape("linearize", e.shape(), d.shape()));
        }
        Ok(LinearizedMap { e, d })
    }

    pub fn of_network<T: Real>(net: &Network, store: &ParamStore<T>) -> Result<Self> {
        Self::of_stacks(&net.encoder, &net.decoder, store)
    }

    /// Largest `|D - E^T|` entry.
    pub fn tying_error(&self) -> Result<f64> {
        self.d.max_abs_diff(&self.e.transpose()?)
    }

    pub fn de(&self) -> Result<Tensor<f64>> {
        kernels::matmul(&self.d, false, &self.e, false)
    }
}

/// Deviation of `D E` from the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationStats {
    /// Mean of squared entries of `DE - I`.
    pub mse_total: f64,
    /// Mean of `(DE_ii - 1)^2`.
    pub mse_diag: f64,
    /// Mean of `DE_ij^2` over `i != j`.
    pub mse_offdiag: f64,
    /// Mean squared off-diagonal entry of `DE` over mean squared diagonal
    /// entry of `DE`.
    pub ratio_offdiag_over_diag: f64,
}

pub fn identity_deviation(e: &Tensor<f64>, d: &Tensor<f64>) -> Result<DeviationStats> {
    let (er, ec) = e.dims2()?;
    let (dr, dc) = d.dims2()?;
    if dc != er || dr != ec {
        return Err(Error::shape("identity_deviation", d.shape(), e.shape()));
    }
    Ok(deviation_of(&kernels::matmul(d, false, e, false)?))
}

/// Statistics of a square `M = DE`.
pub fn deviation_of(m: &Tensor<f64>) -> DeviationStats {
    let n = m.shape()[0];
    let md = m.data();
    let (mut tot, mut diag_dev, mut diag_sq, mut off) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let v = md[i * n + j];
            if i == j {
                diag_dev += (v - 1.0) * (v - 1.0);
                diag_sq += v * v;
                tot += (v - 1.0) * (v - 1.0);
            } else {
                off += v * v;
                tot += v * v;
            }
        }
    }
    let nf = n as f64;
    let n_off = (n * n - n).max(1) as f64;
    let (mse_off, msq_diag) = (off / n_off, diag_sq / nf);
    let ratio = if msq_diag > 0.0 {
        mse_off / msq_diag
    } else if mse_off == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    DeviationStats {
        mse_total: tot / (nf * nf),
        mse_diag: diag_dev / nf,
        mse_offdiag: if n > 1 { off / n_off } else { 0.0 },
        ratio_offdiag_over_diag: ratio,
    }
}

/// Pairwise cosine similarity of the rows of `E`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineStats {
    pub mean: f64,
    pub std: f64,
    pub pairs: usize,
    /// Counts over `HISTOGRAM_BINS` equal bins covering `[-1, 1]`.
    pub histogram: Vec<u64>,
}

/// Row norms of `E`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    pub norms: Vec<f64>,
}

/// Both row statistics of one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStats {
    pub cosine: CosineStats,
    pub norm: NormStats,
}

pub fn row_stats(e: &Tensor<f64>) -> Result<RowStats> {
    Ok(RowStats {
        cosine: row_cosine_stats(e)?,
        norm: row_norm_stats(e)?,
    })
}

fn norms_of(e: &Tensor<f64>) -> Result<(usize, usize, Vec<f64>)> {
    let (r, c) = e.dims2()?;
    let norms = (0..r)
        .map(|i| num_traits::Float::sqrt(e.data()[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>()))
        .collect();
    Ok((r, c, norms))
}

/// Mean and (population) std of the cosine over all unordered distinct row
/// pairs. Zero rows are an error.
pub fn row_cosine_stats(e: &Tensor<f64>) -> Result<CosineStats> {
    let (r, c, norms) = norms_of(e)?;
    if r < 2 {
        return Err(Error::Dimension(format!("need at least 2 rows, got {r}")));
    }
    let zero: Vec<usize> = (0..r).filter(|&i| norms[i] == 0.0).collect();
    if !zero.is_empty() {
        return Err(Error::DegenerateRows(zero));
    }
    let mut unit = e.clone();
    for (i, &nv) in norms.iter().enumerate() {
        for v in &mut unit.data_mut()[i * c..(i + 1) * c] {
            *v /= nv;
        }
    }
    let gram = kernels::matmul(&unit, false, &unit, true)?;
    let mut hist = vec![0u64; HISTOGRAM_BINS];
    let (mut s, mut s2) = (0.0, 0.0);
    for i in 0..r {
        for j in i + 1..r {
            let v = gram.data()[i * r + j].clamp(-1.0, 1.0);
            s += v;
            s2 += v * v;
            let bin = (((v + 1.0) / 2.0) * HISTOGRAM_BINS as f64) as usize;
            hist[bin.min(HISTOGRAM_BINS - 1)] += 1;
        }
    }
    let pairs = r * (r - 1) / 2;
    let mean = s / pairs as f64;
    let var = (s2 / pairs as f64 - mean * mean).max(0.0);
    Ok(CosineStats {
        mean,
        std: num_traits::Float::sqrt(var),
        pairs,
        histogram: hist,
    })
}

/// Mean and (population) std of the row l2 norms.
pub fn row_norm_stats(e: &Tensor<f64>) -> Result<NormStats> {
    let (r, _, norms) = norms_of(e)?;
    let mean = norms.iter().sum::<f64>() / r as f64;
    let var = norms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / r as f64;
    Ok(NormStats {
        mean,
        std: num_traits::Float::sqrt(var),
        norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_and_scalar_kernels() {
        let g = ConvGeom::new(1, (3, 3), 1, 3, 1, 1).unwrap();
        let mut k = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        assert_eq!(toeplitz_of_conv(&k, &g).unwrap(), Tensor::eye(9));
        let g1 = ConvGeom::new(2, (2, 2), 2, 1, 1, 0).unwrap();
        let k1 = Tensor::<f64>::new(&[2, 2, 1, 1], vec![3.0, 0.0, 0.0, 3.0]).unwrap();
        assert_eq!(toeplitz_of_conv(&k1, &g1).unwrap(), Tensor::eye(8).map(|v| 3.0 * v));
    }

    #[test]
    fn rotation_has_zero_deviation() {
        let (s, c) = (0.5f64, num_traits::Float::sqrt(3.0f64) / 2.0);
        let e = Tensor::new(&[2, 2], vec![c, -s, s, c]).unwrap();
        let st = identity_deviation(&e, &e.transpose().unwrap()).unwrap();
        assert!(st.mse_total < 1e-30);
        assert_eq!(identity_deviation(&Tensor::eye(3), &Tensor::eye(3)).unwrap().ratio_offdiag_over_diag, 0.0);
    }

    #[test]
    fn identity_rows() {
        let st = row_cosine_stats(&Tensor::eye(4)).unwrap();
        assert_eq!((st.mean, st.std, st.pairs), (0.0, 0.0, 6));
        assert_eq!(st.histogram[50], 6);
        let n = row_norm_stats(&Tensor::eye(4).map(|v| 2.0 * v)).unwrap();
        assert_eq!((n.mean, n.std), (2.0, 0.0));
    }

    #[test]
    fn zero_row_is_reported() {
        let e = Tensor::new(&[3, 2], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(row_cosine_stats(&e), Err(Error::DegenerateRows(vec![1])));
    }

    #[test]
    fn duplicate_rows_have_cosine_one() {
        let e = Tensor::new(&[2, 2], vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let st = row_cosine_stats(&e).unwrap();
        assert!((st.mean - 1.0).abs() < 1e-15);
        assert_eq!(st.histogram[HISTOGRAM_BINS - 1], 1);
    }
}
