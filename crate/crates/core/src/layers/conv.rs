use crate::error::{shape_err, Result};
use crate::par::map_indexed;
use crate::tensor::{MatMut, MatRef, Real, Shape4, Tensor4};

/// Learnable parameters of a convolution or transposed convolution.
///
/// For [`conv2d`] the kernel is viewed as `(kh, kw, in_channels,
/// out_channels)`; for [`transposed_conv2d`] it is `(kh, kw, out_channels,
/// in_channels)` (scatter orientation). Either way `bias` has one entry per
/// output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub kernel: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn new(kernel: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let s = kernel.shape();
        if s.batch != s.height {
            return Err(shape_err!("kernels must be square, got {s}"));
        }
        Ok(ConvParams { kernel, bias })
    }

    pub fn zeros(k: usize, dim2: usize, dim3: usize, bias_len: usize) -> Self {
        ConvParams {
            kernel: Tensor4::zeros(Shape4::new(k, k, dim2, dim3)),
            bias: vec![T::zero(); bias_len],
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape().batch
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    fn conv_channels(&self) -> (usize, usize) {
        let s = self.kernel.shape();
        (s.width, s.channels)
    }

    fn deconv_channels(&self) -> (usize, usize) {
        let s = self.kernel.shape();
        (s.channels, s.width)
    }

    fn check_bias(&self, out_channels: usize) -> Result<()> {
        if self.bias.len() != out_channels {
            return Err(shape_err!(
                "bias has {} entries, expected {out_channels}",
                self.bias.len()
            ));
        }
        Ok(())
    }
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub params: ConvParams<T>,
}

/// Leading zero padding of a stride-1 "same" convolution. Odd kernels pad
/// symmetrically; even kernels put the extra row/column after.
pub fn same_padding(k: usize) -> usize {
    (k - 1) / 2
}

/// Leading padding of the stride-2 "same" convolution whose adjoint is the
/// transposed convolution.
pub fn transposed_padding(k: usize) -> usize {
    k.saturating_sub(2) / 2
}

// Upper bound on the number of elements in one im2col block.
const BLOCK_ELEMS: usize = 1 << 20;

/// Geometry of a patch grid: position `(py, px)` reads source pixel
/// `(py * stride + a - pad, px * stride + b - pad)` for kernel tap `(a, b)`.
#[derive(Clone, Copy)]
struct PatchGrid {
    src_h: usize,
    src_w: usize,
    channels: usize,
    grid_w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl PatchGrid {
    fn row_len(&self) -> usize {
        self.k * self.k * self.channels
    }

    #[inline]
    fn source(&self, p: usize, tap: usize, limit: usize) -> Option<usize> {
        let s = p * self.stride + tap;
        if s < self.pad || s - self.pad >= limit {
            None
        } else {
            Some(s - self.pad)
        }
    }

    fn im2col<T: Real>(&self, src: &[T], rows: std::ops::Range<usize>, cols: &mut [T]) {
        let c = self.channels;
        let row_len = self.row_len();
        let mut r = 0;
        for py in rows {
            for px in 0..self.grid_w {
                let dst = &mut cols[r * row_len..(r + 1) * row_len];
                for a in 0..self.k {
                    let sy = self.source(py, a, self.src_h);
                    for b in 0..self.k {
                        let o = (a * self.k + b) * c;
                        match (sy, self.source(px, b, self.src_w)) {
                            (Some(sy), Some(sx)) => {
                                let s = (sy * self.src_w + sx) * c;
                                dst[o..o + c].copy_from_slice(&src[s..s + c]);
                            }
                            _ => dst[o..o + c].fill(T::zero()),
                        }
                    }
                }
                r += 1;
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], rows: std::ops::Range<usize>, dst: &mut [T]) {
        let c = self.channels;
        let row_len = self.row_len();
        let mut r = 0;
        for py in rows {
            for px in 0..self.grid_w {
                let src = &cols[r * row_len..(r + 1) * row_len];
                for a in 0..self.k {
                    let Some(sy) = self.source(py, a, self.src_h) else { continue };
                    for b in 0..self.k {
                        let Some(sx) = self.source(px, b, self.src_w) else { continue };
                        let o = (a * self.k + b) * c;
                        let d = (sy * self.src_w + sx) * c;
                        for (dv, &sv) in dst[d..d + c].iter_mut().zip(&src[o..o + c]) {
                            *dv += sv;
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

fn row_blocks(grid_h: usize, grid_w: usize, row_len: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let per = (BLOCK_ELEMS / (grid_w * row_len).max(1)).max(1);
    (0..grid_h).step_by(per).map(move |r0| r0..(r0 + per).min(grid_h))
}

fn sum_channels<T: Real>(t: &Tensor4<T>) -> Vec<T> {
    let c = t.shape().channels;
    let mut out = vec![T::zero(); c];
    for px in t.data().chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    out
}

fn add_in_place<T: Real>(acc: &mut [T], v: &[T]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Stride-1 "same" cross-correlation plus bias.
pub fn conv2d<T: Real>(input: &Tensor4<T>, params: &ConvParams<T>) -> Result<Tensor4<T>> {
    let s = input.shape();
    let (cin, cout) = params.conv_channels();
    if s.channels != cin {
        return Err(shape_err!(
            "conv2d input {s} does not match kernel {} (expects {cin} input channels)",
            params.kernel.shape()
        ));
    }
    params.check_bias(cout)?;
    let k = params.kernel_size();
    let grid = PatchGrid {
        src_h: s.height,
        src_w: s.width,
        channels: cin,
        grid_w: s.width,
        k,
        stride: 1,
        pad: same_padding(k),
    };
    let row_len = grid.row_len();
    let out_shape = Shape4::new(s.batch, s.height, s.width, cout);
    let samples = map_indexed(s.batch, |n| {
        let src = input.sample(n);
        let mut out = vec![T::zero(); out_shape.sample_len()];
        for px in out.chunks_exact_mut(cout) {
            px.copy_from_slice(&params.bias);
        }
        let mut cols = Vec::new();
        for rows in row_blocks(s.height, s.width, row_len) {
            let m = rows.len() * s.width;
            cols.resize(m * row_len, T::zero());
            grid.im2col(src, rows.clone(), &mut cols);
            let dst = &mut out[rows.start * s.width * cout..rows.end * s.width * cout];
            T::gemm(
                m,
                row_len,
                cout,
                MatRef::row_major(&cols, row_len),
                MatRef::row_major(params.kernel.data(), cout),
                T::one(),
                MatMut::row_major(dst, cout),
            );
        }
        out
    });
    Tensor4::from_vec(out_shape, samples.concat())
}

/// Vector-Jacobian product of [`conv2d`].
pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    params: &ConvParams<T>,
    upstream: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    let (cin, cout) = params.conv_channels();
    let expect = Shape4::new(s.batch, s.height, s.width, cout);
    if s.channels != cin || upstream.shape() != expect {
        return Err(shape_err!(
            "conv2d backward: input {s}, kernel {}, upstream {} (expected {expect})",
            params.kernel.shape(),
            upstream.shape()
        ));
    }
    let k = params.kernel_size();
    let grid = PatchGrid {
        src_h: s.height,
        src_w: s.width,
        channels: cin,
        grid_w: s.width,
        k,
        stride: 1,
        pad: same_padding(k),
    };
    let row_len = grid.row_len();
    let per_sample = map_indexed(s.batch, |n| {
        let src = input.sample(n);
        let up = upstream.sample(n);
        let mut dx = vec![T::zero(); s.sample_len()];
        let mut dk = vec![T::zero(); params.kernel.len()];
        let mut cols = Vec::new();
        let mut dcols = Vec::new();
        for rows in row_blocks(s.height, s.width, row_len) {
            let m = rows.len() * s.width;
            cols.resize(m * row_len, T::zero());
            dcols.resize(m * row_len, T::zero());
            grid.im2col(src, rows.clone(), &mut cols);
            let g = &up[rows.start * s.width * cout..rows.end * s.width * cout];
            // dK += cols^T · g
            T::gemm(
                row_len,
                m,
                cout,
                MatRef::transposed(&cols, row_len),
                MatRef::row_major(g, cout),
                T::one(),
                MatMut::row_major(&mut dk, cout),
            );
            // dcols = g · K^T
            T::gemm(
                m,
                cout,
                row_len,
                MatRef::row_major(g, cout),
                MatRef::transposed(params.kernel.data(), cout),
                T::zero(),
                MatMut::row_major(&mut dcols, row_len),
            );
            grid.col2im(&dcols, rows, &mut dx);
        }
        (dx, dk)
    });
    let mut dk = vec![T::zero(); params.kernel.len()];
    let mut dx = Vec::with_capacity(s.len());
    for (sx, sk) in per_sample {
        dx.extend_from_slice(&sx);
        add_in_place(&mut dk, &sk);
    }
    Ok(ConvGrads {
        input: Tensor4::from_vec(s, dx)?,
        params: ConvParams {
            kernel: Tensor4::from_vec(params.kernel.shape(), dk)?,
            bias: sum_channels(upstream),
        },
    })
}

fn deconv_grid(s: Shape4, cout: usize, k: usize) -> PatchGrid {
    PatchGrid {
        src_h: 2 * s.height,
        src_w: 2 * s.width,
        channels: cout,
        grid_w: s.width,
        k,
        stride: 2,
        pad: transposed_padding(k),
    }
}

/// Stride-2 "same" transposed convolution plus bias; doubles height and width.
///
/// Input pixel `(i, j)` scatters `in[i][j] · K[a][b]` onto output pixel
/// `(2i + a - p, 2j + b - p)` with `p = transposed_padding(k)`. No activation.
pub fn transposed_conv2d<T: Real>(input: &Tensor4<T>, params: &ConvParams<T>) -> Result<Tensor4<T>> {
    let s = input.shape();
    let (cin, cout) = params.deconv_channels();
    if s.channels != cin {
        return Err(shape_err!(
            "transposed_conv2d input {s} does not match kernel {} (expects {cin} input channels)",
            params.kernel.shape()
        ));
    }
    params.check_bias(cout)?;
    let k = params.kernel_size();
    let grid = deconv_grid(s, cout, k);
    let row_len = grid.row_len();
    let out_shape = Shape4::new(s.batch, 2 * s.height, 2 * s.width, cout);
    let samples = map_indexed(s.batch, |n| {
        let src = input.sample(n);
        let mut out = vec![T::zero(); out_shape.sample_len()];
        for px in out.chunks_exact_mut(cout) {
            px.copy_from_slice(&params.bias);
        }
        let mut cols = Vec::new();
        for rows in row_blocks(s.height, s.width, row_len) {
            let m = rows.len() * s.width;
            cols.resize(m * row_len, T::zero());
            let x = &src[rows.start * s.width * cin..rows.end * s.width * cin];
            // cols = x · K^T where K is the row-major [(a, b, co), ci] buffer
            T::gemm(
                m,
                cin,
                row_len,
                MatRef::row_major(x, cin),
                MatRef::transposed(params.kernel.data(), cin),
                T::zero(),
                MatMut::row_major(&mut cols, row_len),
            );
            grid.col2im(&cols, rows, &mut out);
        }
        out
    });
    Tensor4::from_vec(out_shape, samples.concat())
}

/// Vector-Jacobian product of [`transposed_conv2d`].
pub fn transposed_conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    params: &ConvParams<T>,
    upstream: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    let (cin, cout) = params.deconv_channels();
    let expect = Shape4::new(s.batch, 2 * s.height, 2 * s.width, cout);
    if s.channels != cin || upstream.shape() != expect {
        return Err(shape_err!(
            "transposed_conv2d backward: input {s}, kernel {}, upstream {} (expected {expect})",
            params.kernel.shape(),
            upstream.shape()
        ));
    }
    let k = params.kernel_size();
    let grid = deconv_grid(s, cout, k);
    let row_len = grid.row_len();
    let per_sample = map_indexed(s.batch, |n| {
        let src = input.sample(n);
        let up = upstream.sample(n);
        let mut dx = vec![T::zero(); s.sample_len()];
        let mut dk = vec![T::zero(); params.kernel.len()];
        let mut dcols = Vec::new();
        for rows in row_blocks(s.height, s.width, row_len) {
            let m = rows.len() * s.width;
            dcols.resize(m * row_len, T::zero());
            grid.im2col(up, rows.clone(), &mut dcols);
            let x = &src[rows.start * s.width * cin..rows.end * s.width * cin];
            let dxb = &mut dx[rows.start * s.width * cin..rows.end * s.width * cin];
            T::gemm(
                m,
                row_len,
                cin,
                MatRef::row_major(&dcols, row_len),
                MatRef::row_major(params.kernel.data(), cin),
                T::zero(),
                MatMut::row_major(dxb, cin),
            );
            T::gemm(
                row_len,
                m,
                cin,
                MatRef::transposed(&dcols, row_len),
                MatRef::row_major(x, cin),
                T::one(),
                MatMut::row_major(&mut dk, cin),
            );
        }
        (dx, dk)
    });
    let mut dk = vec![T::zero(); params.kernel.len()];
    let mut dx = Vec::with_capacity(s.len());
    for (sx, sk) in per_sample {
        dx.extend_from_slice(&sx);
        add_in_place(&mut dk, &sk);
    }
    Ok(ConvGrads {
        input: Tensor4::from_vec(s, dx)?,
        params: ConvParams {
            kernel: Tensor4::from_vec(params.kernel.shape(), dk)?,
            bias: sum_channels(upstream),
        },
    })
}
