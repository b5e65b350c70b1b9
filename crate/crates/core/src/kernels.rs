//! Raw numeric kernels: GEMM, im2col/col2im convolution, instance norm.
//!
//! Images are NCHW, row-major. Convolution is cross-correlation (no kernel
//! flip); kernels are `[c_out, c_in, k, k]`. A transposed convolution is
//! described by the geometry of the forward convolution it transposes, so
//! its output extent is always the forward input extent.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::{cst, Real};
use crate::tensor::Tensor;

/// `c = op(a) * op(b) + beta * c` for row-major buffers. `op(a)` is `m x k`,
/// `op(b)` is `k x n`; a transposed operand is stored in its untransposed
/// layout.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    beta: T,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v = if beta == T::zero() { T::zero() } else { *v * beta };
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: extents checked above; `c` is a distinct &mut borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `op(a) * op(b)` for rank-2 tensors.
pub fn matmul<T: Real>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool) -> Result<Tensor<T>> {
    let (ar, ac) = a.dims2()?;
    let (br, bc) = b.dims2()?;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(m, k, n, a.data(), ta, b.data(), tb, &mut out, T::zero());
    Tensor::new(&[m, n], out)
}

/// Geometry of one forward convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(
        c_in: usize,
        (h, w): (usize, usize),
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if c_in == 0 || c_out == 0 || h == 0 || w == 0 || k == 0 || stride == 0 {
            return Err(Error::Dimension(alloc::format!(
                "degenerate conv geometry c_in={c_in} c_out={c_out} h={h} w={w} k={k} stride={stride}"
            )));
        }
        if k > h + 2 * pad || k > w + 2 * pad {
            return Err(Error::Dimension(alloc::format!(
                "kernel {k} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
        })
    }

    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.out_h() * self.out_w()
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.k, self.k]
    }

    pub fn kernel_len(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }

    fn ckk(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn ohw(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unfolds one `[c_in, h, w]` image into `[c_in*k*k, oh*ow]` patch columns.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (s, p) = (g.stride as isize, g.pad as isize);
    let mut row = 0;
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize * s - p + kh as isize;
                    let seg = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kw as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch columns back, accumulating into `x`.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (s, p) = (g.stride as isize, g.pad as isize);
    let mut row = 0;
    for ci in 0..g.c_in {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize * s - p + kh as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = ox as isize * s - p + kw as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Batched forward convolution: `[n, c_in, h, w]` -> `[n, c_out, oh, ow]`.
pub fn conv_forward<T: Real>(x: &[T], n: usize, kernel: &[T], g: &ConvGeom) -> Vec<T> {
    let (ckk, ohw) = (g.ckk(), g.ohw());
    let mut cols = vec![T::zero(); ckk * ohw];
    let mut out = vec![T::zero(); n * g.out_len()];
    for i in 0..n {
        im2col(&x[i * g.in_len()..(i + 1) * g.in_len()], g, &mut cols);
        let o = &mut out[i * g.out_len()..(i + 1) * g.out_len()];
        gemm(g.c_out, ckk, ohw, kernel, false, &cols, false, o, T::zero());
    }
    out
}

/// Gradients of [`conv_forward`] with respect to the input and the kernel.
/// The kernel gradient is accumulated into `dk`.
pub fn conv_backward<T: Real>(
    x: &[T],
    n: usize,
    kernel: &[T],
    g: &ConvGeom,
    dout: &[T],
    dx: Option<&mut [T]>,
    dk: Option<&mut [T]>,
) {
    let (ckk, ohw) = (g.ckk(), g.ohw());
    let mut cols = vec![T::zero(); ckk * ohw];
    if let Some(dk) = dk {
        for i in 0..n {
            im2col(&x[i * g.in_len()..(i + 1) * g.in_len()], g, &mut cols);
            let d = &dout[i * g.out_len()..(i + 1) * g.out_len()];
            gemm(g.c_out, ohw, ckk, d, false, &cols, true, dk, T::one());
        }
    }
    if let Some(dx) = dx {
        for i in 0..n {
            let d = &dout[i * g.out_len()..(i + 1) * g.out_len()];
            gemm(ckk, g.c_out, ohw, kernel, true, d, false, &mut cols, T::zero());
            col2im(&cols, g, &mut dx[i * g.in_len()..(i + 1) * g.in_len()]);
        }
    }
}

/// Batched transposed convolution: `[n, c_out, oh, ow]` -> `[n, c_in, h, w]`.
/// Realizes the transpose of the Toeplitz matrix of the forward conv `g`.
pub fn conv_transposed_forward<T: Real>(y: &[T], n: usize, kernel: &[T], g: &ConvGeom) -> Vec<T> {
    let (ckk, ohw) = (g.ckk(), g.ohw());
    let mut cols = vec![T::zero(); ckk * ohw];
    let mut out = vec![T::zero(); n * g.in_len()];
    for i in 0..n {
        let yi = &y[i * g.out_len()..(i + 1) * g.out_len()];
        gemm(ckk, g.c_out, ohw, kernel, true, yi, false, &mut cols, T::zero());
        col2im(&cols, g, &mut out[i * g.in_len()..(i + 1) * g.in_len()]);
    }
    out
}

/// Gradients of [`conv_transposed_forward`]; the kernel gradient accumulates.
pub fn conv_transposed_backward<T: Real>(
    y: &[T],
    n: usize,
    kernel: &[T],
    g: &ConvGeom,
    dout: &[T],
    dy: Option<&mut [T]>,
    dk: Option<&mut [T]>,
) {
    let (ckk, ohw) = (g.ckk(), g.ohw());
    let mut dcols = vec![T::zero(); ckk * ohw];
    let mut dy = dy;
    let mut dk = dk;
    for i in 0..n {
        im2col(&dout[i * g.in_len()..(i + 1) * g.in_len()], g, &mut dcols);
        if let Some(dy) = dy.as_deref_mut() {
            let o = &mut dy[i * g.out_len()..(i + 1) * g.out_len()];
            gemm(g.c_out, ckk, ohw, kernel, false, &dcols, false, o, T::zero());
        }
        if let Some(dk) = dk.as_deref_mut() {
            let yi = &y[i * g.out_len()..(i + 1) * g.out_len()];
            gemm(g.c_out, ohw, ckk, yi, false, &dcols, true, dk, T::one());
        }
    }
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-(sample, channel) normalization over the spatial plane, no affine
/// parameters. Returns the normalized values and the inverse std per plane.
pub fn instance_norm_forward<T: Real>(x: &[T], planes: usize, hw: usize) -> (Vec<T>, Vec<T>) {
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); planes];
    let nf: T = cst(hw as f64);
    let eps: T = cst(INSTANCE_NORM_EPS);
    for p in 0..planes {
        let src = &x[p * hw..(p + 1) * hw];
        let mean = src.iter().copied().sum::<T>() / nf;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
        let is = T::one() / (var + eps).sqrt();
        inv_std[p] = is;
        for (o, &v) in out[p * hw..(p + 1) * hw].iter_mut().zip(src) {
            *o = (v - mean) * is;
        }
    }
    (out, inv_std)
}

/// `dx = inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))` per plane.
pub fn instance_norm_backward<T: Real>(xhat: &[T], inv_std: &[T], dy: &[T], hw: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); dy.len()];
    let nf: T = cst(hw as f64);
    for (p, &is) in inv_std.iter().enumerate() {
        let r = p * hw..(p + 1) * hw;
        let (xh, g) = (&xhat[r.clone()], &dy[r.clone()]);
        let mg = g.iter().copied().sum::<T>() / nf;
        let mgx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / nf;
        for ((d, &gv), &xv) in dx[r].iter_mut().zip(g).zip(xh) {
            *d = is * (gv - mg - xv * mgx);
        }
    }
    dx
}

fn image_batch<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Dimension(alloc::format!(
            "{what}: expected [C,H,W] or [N,C,H,W], got {:?}",
            t.shape()
        ))),
    }
}

fn kernel_dims<T: Real>(kernel: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *kernel.shape() {
        [co, ci, k, k2] if k == k2 => Ok((co, ci, k)),
        _ => Err(Error::Dimension(alloc::format!(
            "kernel must be [C_out, C_in, K, K], got {:?}",
            kernel.shape()
        ))),
    }
}

/// Cross-correlation of a `[C,H,W]` or `[N,C,H,W]` input with zero padding.
pub fn conv2d<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = image_batch(input, "conv2d")?;
    let (co, ci, k) = kernel_dims(kernel)?;
    if ci != c {
        return Err(Error::shape("conv2d", input.shape(), kernel.shape()));
    }
    let g = ConvGeom::new(c, (h, w), co, k, stride, pad)?;
    let out = conv_forward(input.data(), n, kernel.data(), &g);
    let shape: Vec<usize> = if input.rank() == 3 {
        vec![co, g.out_h(), g.out_w()]
    } else {
        vec![n, co, g.out_h(), g.out_w()]
    };
    Tensor::new(&shape, out)
}

/// Transpose of [`conv2d`] with the same kernel. `in_hw` is the spatial
/// extent of the forward convolution's input, which this returns to.
pub fn conv2d_transposed<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
    in_hw: (usize, usize),
) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = image_batch(input, "conv2d_transposed")?;
    let (co, ci, k) = kernel_dims(kernel)?;
    if co != c {
        return Err(Error::shape("conv2d_transposed", input.shape(), kernel.shape()));
    }
    let g = ConvGeom::new(ci, in_hw, co, k, stride, pad)?;
    if g.out_h() != oh || g.out_w() != ow {
        return Err(Error::Dimension(alloc::format!(
            "input {oh}x{ow} does not match forward output {}x{}",
            g.out_h(),
            g.out_w()
        )));
    }
    let out = conv_transposed_forward(input.data(), n, kernel.data(), &g);
    let shape: Vec<usize> = if input.rank() == 3 {
        vec![ci, in_hw.0, in_hw.1]
    } else {
        vec![n, ci, in_hw.0, in_hw.1]
    };
    Tensor::new(&shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], kern: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = vec![0.0; g.out_len()];
        for co in 0..g.c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..g.c_in {
                        for kh in 0..g.k {
                            for kw in 0..g.k {
                                let iy = (oy * g.stride + kh) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kw) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                    s += kern[((co * g.c_in + ci) * g.k + kh) * g.k + kw]
                                        * x[(ci * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_direct_loops() {
        let g = ConvGeom::new(2, (5, 6), 3, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..g.in_len()).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let k: Vec<f64> = (0..g.kernel_len()).map(|i| ((i * 5 % 7) as f64) * 0.25 - 0.5).collect();
        let fast = conv_forward(&x, 1, &k, &g);
        let slow = naive_conv(&x, &k, &g);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        assert!(ConvGeom::new(1, (2, 2), 1, 5, 1, 0).is_err());
        assert!(ConvGeom::new(1, (2, 2), 1, 5, 1, 2).is_ok());
    }

    #[test]
    fn unit_scalar_kernel_doubles_input() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 3], |i| i as f64);
        let k = Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y, x.map(|v| 2.0 * v));
        let yt = conv2d_transposed(&x, &k, 1, 0, (3, 3)).unwrap();
        assert_eq!(yt, y);
    }

    #[test]
    fn delta_kernel_is_identity_both_ways() {
        let x = Tensor::<f64>::from_fn(&[2, 4, 4], |i| (i as f64).sin());
        let mut k = Tensor::<f64>::zeros(&[2, 2, 3, 3]);
        k.data_mut()[4] = 1.0; // (0,0,1,1)
        k.data_mut()[9 + 9 + 9 + 4] = 1.0; // (1,1,1,1)
        assert_eq!(conv2d(&x, &k, 1, 1).unwrap(), x);
        assert_eq!(conv2d_transposed(&x, &k, 1, 1, (4, 4)).unwrap(), x);
    }

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let x: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).cos() * 3.0 + 1.0).collect();
        let (y, _) = instance_norm_forward(&x, 2, 16);
        for p in 0..2 {
            let s = &y[p * 16..(p + 1) * 16];
            let m: f64 = s.iter().sum::<f64>() / 16.0;
            let v: f64 = s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }
}
