//! Standard and transposed 2-D convolution.
//!
//! Both lower to an im2col buffer followed by a matrix product. Rows of the
//! column buffer are ordered (input channel, ky, kx), matching the
//! (out, in, ky, kx) weight layout, and each output element accumulates
//! `bias + sum_k w[k] * col[k]` in that row order.

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

/// Weights and bias of a `k x k` convolution.
///
/// Tap `n` (in `0..k*k`) sits at row-major position `(n / k, n % k)` of the
/// kernel window and samples at integer offset
/// `(n / k - k / 2, n % k - k / 2)`. A deformable offset field stores that
/// tap's `(dy, dx)` in channels `(2n, 2n + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl KernelSpec {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let wd = weight.dims();
        if wd.h != wd.w || wd.h.is_multiple_of(2) {
            return Err(Error::shape(
                "kernel",
                format!("kernel must be square with odd side, got {wd}"),
            ));
        }
        let bd = bias.dims();
        if bd.n != 1 || bd.c != wd.n || bd.h != 1 || bd.w != 1 {
            return Err(Error::ShapeMismatch {
                op: "kernel bias",
                left: wd,
                right: bd,
            });
        }
        Ok(KernelSpec { weight, bias })
    }

    /// Kernel with zero bias.
    pub fn from_weight(weight: Tensor) -> Result<Self> {
        let bias = Tensor::zeros(Dims::new(1, weight.dims().n, 1, 1)?);
        KernelSpec::new(weight, bias)
    }

    /// `out_ch x in_ch` kernel whose only nonzero weight is the center tap of
    /// the diagonal.
    pub fn identity(channels: usize, k: usize) -> Result<Self> {
        let r = k / 2;
        let w = Tensor::from_fn(Dims::new(channels, channels, k, k)?, |o, c, y, x| {
            if o == c && y == r && x == r {
                1.0
            } else {
                0.0
            }
        });
        KernelSpec::from_weight(w)
    }

    pub fn k(&self) -> usize {
        self.weight.dims().h
    }

    pub fn tap_count(&self) -> usize {
        self.k() * self.k()
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims().n
    }

    /// Fixed sampling offsets `(dy, dx)` in tap order.
    pub fn taps(&self) -> Vec<(isize, isize)> {
        taps(self.k())
    }
}

pub fn taps(k: usize) -> Vec<(isize, isize)> {
    let r = (k / 2) as isize;
    (0..k * k)
        .map(|n| ((n / k) as isize - r, (n % k) as isize - r))
        .collect()
}

/// Sliding-window geometry shared by im2col and col2im.
///
/// A window anchored at output `(oy, ox)` reads source pixel
/// `(oy * stride - pad + ky, ox * stride - pad + kx)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub src_h: usize,
    pub src_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

pub fn conv_out_size(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < k || stride == 0 {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Gathers sliding windows of one sample (`channels x src_h x src_w`) into
/// `col` (`rows x positions`). Out-of-image taps read zero.
pub(crate) fn im2col(src: &[f64], g: &Window, col: &mut [f64]) {
    let p = g.positions();
    debug_assert_eq!(col.len(), g.rows() * p);
    for c in 0..g.channels {
        let plane = &src[c * g.src_h * g.src_w..(c + 1) * g.src_h * g.src_w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let sy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if sy < 0 || sy >= g.src_h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[sy as usize * g.src_w..(sy as usize + 1) * g.src_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let sx = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if sx < 0 || sx >= g.src_w as isize {
                            0.0
                        } else {
                            src_row[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back, accumulating into `dst`.
pub(crate) fn col2im(col: &[f64], g: &Window, dst: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &mut dst[c * g.src_h * g.src_w..(c + 1) * g.src_h * g.src_w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let sy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if sy < 0 || sy >= g.src_h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[sy as usize * g.src_w..(sy as usize + 1) * g.src_w];
                    for ox in 0..g.out_w {
                        let sx = (ox * g.stride + kx) as isize - g.pad as isize;
                        if sx >= 0 && sx < g.src_w as isize {
                            dst_row[sx as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out[m x p] = bias[m] + a[m x k] * b[k x p]`, summing over k in order.
pub(crate) fn matmul_bias(a: &[f64], b: &[f64], bias: Option<&[f64]>, m: usize, k: usize, p: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        row.fill(bias.map_or(0.0, |bv| bv[i]));
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * p..(kk + 1) * p];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k x p] += a[m x k]^T * g[m x p]`.
pub(crate) fn matmul_at_acc(a: &[f64], g: &[f64], m: usize, k: usize, p: usize, out: &mut [f64]) {
    for i in 0..m {
        let g_row = &g[i * p..(i + 1) * p];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let o_row = &mut out[kk * p..(kk + 1) * p];
            for (o, &gv) in o_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

/// `out[m x k] += g[m x p] * b[k x p]^T`.
pub(crate) fn matmul_bt_acc(g: &[f64], b: &[f64], m: usize, k: usize, p: usize, out: &mut [f64]) {
    for i in 0..m {
        let g_row = &g[i * p..(i + 1) * p];
        for kk in 0..k {
            let b_row = &b[kk * p..(kk + 1) * p];
            let mut acc = 0.0;
            for (x, y) in g_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * k + kk] += acc;
        }
    }
}

pub(crate) fn check_kernel(op: &'static str, x: Dims, w: Dims, b: Dims, in_ch: usize) -> Result<()> {
    if x.c != in_ch {
        return Err(Error::ShapeMismatch {
            op,
            left: x,
            right: w,
        });
    }
    if w.h != w.w {
        return Err(Error::shape(op, format!("non-square kernel {w}")));
    }
    if b.n != 1 || b.h != 1 || b.w != 1 {
        return Err(Error::shape(op, format!("bias must be (1, c, 1, 1), got {b}")));
    }
    Ok(())
}

pub(crate) fn conv_window(op: &'static str, x: Dims, k: usize, stride: usize, pad: usize) -> Result<Window> {
    let out_h = conv_out_size(x.h, k, stride, pad);
    let out_w = conv_out_size(x.w, k, stride, pad);
    match (out_h, out_w) {
        (Some(out_h), Some(out_w)) => Ok(Window {
            channels: x.c,
            src_h: x.h,
            src_w: x.w,
            k,
            stride,
            pad,
            out_h,
            out_w,
        }),
        _ => Err(Error::shape(
            op,
            format!("input {x} too small for kernel {k} stride {stride} pad {pad}"),
        )),
    }
}

/// Forward convolution from raw weight/bias tensors. Returns the output and
/// the per-sample column buffers.
pub(crate) fn conv2d_raw(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<(Tensor, Vec<f64>)> {
    let (xd, wd, bd) = (x.dims(), w.dims(), b.dims());
    check_kernel("conv2d", xd, wd, bd, wd.c)?;
    if bd.c != wd.n {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: wd,
            right: bd,
        });
    }
    let g = conv_window("conv2d", xd, wd.h, stride, pad)?;
    let (rows, p, m) = (g.rows(), g.positions(), wd.n);
    let od = Dims::new(xd.n, m, g.out_h, g.out_w)?;
    let mut out = vec![0.0; od.len()];
    let mut cols = vec![0.0; xd.n * rows * p];
    for n in 0..xd.n {
        let col = &mut cols[n * rows * p..(n + 1) * rows * p];
        im2col(&x.data()[n * xd.sample_len()..(n + 1) * xd.sample_len()], &g, col);
        matmul_bias(w.data(), col, Some(b.data()), m, rows, p, &mut out[n * m * p..(n + 1) * m * p]);
    }
    Ok((Tensor::from_parts(od, out), cols))
}

pub(crate) struct ConvGrads {
    pub x: Option<Tensor>,
    pub w: Tensor,
    pub b: Tensor,
}

pub(crate) fn conv2d_backward(
    x_dims: Dims,
    w: &Tensor,
    cols: &[f64],
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    need_x: bool,
) -> Result<ConvGrads> {
    let wd = w.dims();
    let g = conv_window("conv2d", x_dims, wd.h, stride, pad)?;
    let (rows, p, m) = (g.rows(), g.positions(), wd.n);
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; m];
    let mut gx = need_x.then(|| vec![0.0; x_dims.len()]);
    let mut gcol = vec![0.0; rows * p];
    for n in 0..x_dims.n {
        let go = &grad_out.data()[n * m * p..(n + 1) * m * p];
        let col = &cols[n * rows * p..(n + 1) * rows * p];
        matmul_bt_acc(go, col, m, rows, p, &mut gw);
        for (o, gbv) in gb.iter_mut().enumerate() {
            *gbv += go[o * p..(o + 1) * p].iter().sum::<f64>();
        }
        if let Some(gx) = gx.as_mut() {
            gcol.fill(0.0);
            matmul_at_acc(w.data(), go, m, rows, p, &mut gcol);
            let sl = x_dims.sample_len();
            col2im(&gcol, &g, &mut gx[n * sl..(n + 1) * sl]);
        }
    }
    Ok(ConvGrads {
        x: gx.map(|v| Tensor::from_parts(x_dims, v)),
        w: Tensor::from_parts(wd, gw),
        b: Tensor::from_parts(Dims::new(1, m, 1, 1)?, gb),
    })
}

/// Zero-padded 2-D convolution:
/// `out[o, p] = bias[o] + sum_c sum_n w[o, c, n] * x[c, p * stride + p_n]`.
pub fn conv2d(x: &Tensor, spec: &KernelSpec, stride: usize, pad: usize) -> Result<Tensor> {
    conv2d_raw(x, &spec.weight, &spec.bias, stride, pad).map(|(t, _)| t)
}

/// Stride-2 convolution with `pad = k / 2`, producing `ceil(h/2) x ceil(w/2)`.
pub fn strided_conv_downsample(x: &Tensor, spec: &KernelSpec) -> Result<Tensor> {
    conv2d(x, spec, 2, spec.k() / 2)
}

/// Window geometry of a transposed convolution: the small input grid is the
/// window anchor grid over the large output.
pub(crate) fn transpose_window(x: Dims, out_ch: usize, k: usize, stride: usize, pad: usize) -> Result<(Window, Dims)> {
    let out_h = ((x.h - 1) * stride + k).checked_sub(2 * pad);
    let out_w = ((x.w - 1) * stride + k).checked_sub(2 * pad);
    match (out_h, out_w) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((
            Window {
                channels: out_ch,
                src_h: oh,
                src_w: ow,
                k,
                stride,
                pad,
                out_h: x.h,
                out_w: x.w,
            },
            Dims::new(x.n, out_ch, oh, ow)?,
        )),
        _ => Err(Error::shape(
            "conv_transpose2d",
            format!("degenerate output for input {x}, k {k}, stride {stride}, pad {pad}"),
        )),
    }
}

/// Transposed convolution. Weight layout is (in, out, k, k); output size is
/// `(h - 1) * stride + k - 2 * pad`.
pub(crate) fn conv_transpose2d_raw(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (xd, wd, bd) = (x.dims(), w.dims(), b.dims());
    check_kernel("conv_transpose2d", xd, wd, bd, wd.n)?;
    if bd.c != wd.c {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d bias",
            left: wd,
            right: bd,
        });
    }
    let (g, od) = transpose_window(xd, wd.c, wd.h, stride, pad)?;
    let (rows, p, cin) = (g.rows(), g.positions(), wd.n);
    let mut out = vec![0.0; od.len()];
    let mut col = vec![0.0; rows * p];
    let plane = od.plane();
    for n in 0..xd.n {
        col.fill(0.0);
        matmul_at_acc(w.data(), &x.data()[n * xd.sample_len()..(n + 1) * xd.sample_len()], cin, rows, p, &mut col);
        let dst = &mut out[n * od.sample_len()..(n + 1) * od.sample_len()];
        for (o, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.fill(b.data()[o]);
        }
        col2im(&col, &g, dst);
    }
    Ok(Tensor::from_parts(od, out))
}

pub(crate) fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    need_x: bool,
) -> Result<ConvGrads> {
    let (xd, wd) = (x.dims(), w.dims());
    let (g, od) = transpose_window(xd, wd.c, wd.h, stride, pad)?;
    let (rows, p, cin) = (g.rows(), g.positions(), wd.n);
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; wd.c];
    let mut gx = need_x.then(|| vec![0.0; xd.len()]);
    let mut gcol = vec![0.0; rows * p];
    let plane = od.plane();
    for n in 0..xd.n {
        let go = &grad_out.data()[n * od.sample_len()..(n + 1) * od.sample_len()];
        for (o, chunk) in go.chunks(plane).enumerate() {
            gb[o] += chunk.iter().sum::<f64>();
        }
        im2col(go, &g, &mut gcol);
        let xs = &x.data()[n * xd.sample_len()..(n + 1) * xd.sample_len()];
        matmul_bt_acc(xs, &gcol, cin, rows, p, &mut gw);
        if let Some(gx) = gx.as_mut() {
            let mut tmp = vec![0.0; cin * p];
            matmul_bias(w.data(), &gcol, None, cin, rows, p, &mut tmp);
            for (d, t) in gx[n * xd.sample_len()..(n + 1) * xd.sample_len()].iter_mut().zip(tmp) {
                *d += t;
            }
        }
    }
    Ok(ConvGrads {
        x: gx.map(|v| Tensor::from_parts(xd, v)),
        w: Tensor::from_parts(wd, gw),
        b: Tensor::from_parts(Dims::new(1, wd.c, 1, 1)?, gb),
    })
}

pub fn conv_transpose2d(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    conv_transpose2d_raw(x, weight, bias, stride, pad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(rng: &mut Rng, shape: [usize; 4]) -> Tensor {
        let [n, c, h, w] = shape;
        Tensor::from_fn(Dims::new(n, c, h, w).unwrap(), |_, _, _, _| rng.uniform(-1.0, 1.0))
    }

    /// Direct nested-loop evaluation: bias first, then (c, ky, kx) in order.
    fn naive_conv(x: &Tensor, spec: &KernelSpec, stride: usize, pad: usize) -> Tensor {
        let xd = x.dims();
        let k = spec.k();
        let oh = (xd.h + 2 * pad - k) / stride + 1;
        let ow = (xd.w + 2 * pad - k) / stride + 1;
        let od = Dims::new(xd.n, spec.out_channels(), oh, ow).unwrap();
        Tensor::from_fn(od, |n, o, oy, ox| {
            let mut acc = spec.bias.at(0, o, 0, 0);
            for c in 0..xd.c {
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = (oy * stride + ky) as isize - pad as isize;
                        let sx = (ox * stride + kx) as isize - pad as isize;
                        let v = if sy < 0 || sx < 0 || sy >= xd.h as isize || sx >= xd.w as isize {
                            0.0
                        } else {
                            x.at(n, c, sy as usize, sx as usize)
                        };
                        acc += spec.weight.at(o, c, ky, kx) * v;
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn tap_enumeration_row_major() {
        assert_eq!(
            taps(3),
            vec![(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)]
        );
    }

    #[test]
    fn even_kernel_rejected() {
        let w = Tensor::zeros(Dims::new(1, 1, 2, 2).unwrap());
        assert!(KernelSpec::from_weight(w).is_err());
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = Rng::new(1);
        let x = random(&mut rng, [2, 3, 5, 4]);
        let id = KernelSpec::identity(3, 3).unwrap();
        assert_eq!(conv2d(&x, &id, 1, 1).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_taps() {
        let x = Tensor::full(Dims::new(1, 1, 5, 5).unwrap(), 1.0);
        let spec = KernelSpec::from_weight(Tensor::full(Dims::new(1, 1, 3, 3).unwrap(), 1.0)).unwrap();
        let y = conv2d(&x, &spec, 1, 1).unwrap();
        assert_eq!(y.at(0, 0, 2, 2), 9.0);
        assert_eq!(y.at(0, 0, 0, 2), 6.0);
        assert_eq!(y.at(0, 0, 2, 4), 6.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 0, 4, 4), 4.0);
    }

    #[test]
    fn matches_naive_loops_bit_identical() {
        for seed in 0..5 {
            let mut rng = Rng::new(seed);
            let x = random(&mut rng, [2, 3, 7, 6]);
            let w = random(&mut rng, [4, 3, 3, 3]);
            let b = random(&mut rng, [1, 4, 1, 1]);
            let spec = KernelSpec::new(w, b).unwrap();
            for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
                let fast = conv2d(&x, &spec, stride, pad).unwrap();
                let slow = naive_conv(&x, &spec, stride, pad);
                assert_eq!(fast, slow, "seed {seed} stride {stride} pad {pad}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::zeros(Dims::new(1, 2, 4, 4).unwrap());
        let spec = KernelSpec::identity(3, 3).unwrap();
        assert!(matches!(conv2d(&x, &spec, 1, 1), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn downsample_stage_sizes() {
        let mut h = 64;
        let mut sizes = Vec::new();
        let mut x = Tensor::zeros(Dims::new(1, 1, h, h).unwrap());
        let spec = KernelSpec::identity(1, 3).unwrap();
        for _ in 0..4 {
            x = strided_conv_downsample(&x, &spec).unwrap();
            h = x.dims().h;
            sizes.push(h);
        }
        assert_eq!(sizes, vec![32, 16, 8, 4]);
        let odd = strided_conv_downsample(&Tensor::zeros(Dims::new(1, 1, 7, 5).unwrap()), &spec).unwrap();
        assert_eq!((odd.dims().h, odd.dims().w), (4, 3));
    }

    #[test]
    fn delta_kernel_picks_even_pixels() {
        let mut rng = Rng::new(9);
        let x = random(&mut rng, [1, 2, 8, 6]);
        let spec = KernelSpec::identity(2, 3).unwrap();
        let y = strided_conv_downsample(&x, &spec).unwrap();
        for c in 0..2 {
            for oy in 0..4 {
                for ox in 0..3 {
                    assert_eq!(y.at(0, c, oy, ox), x.at(0, c, 2 * oy, 2 * ox));
                }
            }
        }
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> for zero bias and shared weights.
        let mut rng = Rng::new(4);
        let x = random(&mut rng, [1, 2, 5, 5]);
        let w = random(&mut rng, [3, 2, 3, 3]);
        let spec = KernelSpec::from_weight(w.clone()).unwrap();
        let cx = conv2d(&x, &spec, 2, 1).unwrap();
        let y = random(&mut rng, [1, 3, cx.dims().h, cx.dims().w]);
        let zero_b = Tensor::zeros(Dims::new(1, 2, 1, 1).unwrap());
        let ty = conv_transpose2d(&y, &w, &zero_b, 2, 1).unwrap();
        assert_eq!(ty.dims(), x.dims());
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn deconv_doubles_size() {
        let x = Tensor::zeros(Dims::new(1, 2, 4, 5).unwrap());
        let w = Tensor::zeros(Dims::new(2, 3, 4, 4).unwrap());
        let b = Tensor::from_shape([1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let y = conv_transpose2d(&x, &w, &b, 2, 1).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 3, 8, 10).unwrap());
        assert_eq!(y.at(0, 2, 7, 9), 3.0);
    }

    proptest::proptest! {
        #[test]
        fn conv_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = Rng::new(seed);
            let x = random(&mut rng, [1, 2, 5, 5]);
            let y = random(&mut rng, [1, 2, 5, 5]);
            let spec = KernelSpec::from_weight(random(&mut rng, [3, 2, 3, 3])).unwrap();
            let mix = Tensor::from_fn(x.dims(), |n, c, h, w| a * x.at(n, c, h, w) + b * y.at(n, c, h, w));
            let lhs = conv2d(&mix, &spec, 1, 1).unwrap();
            let cx = conv2d(&x, &spec, 1, 1).unwrap();
            let cy = conv2d(&y, &spec, 1, 1).unwrap();
            let rhs = Tensor::from_fn(cx.dims(), |n, c, h, w| a * cx.at(n, c, h, w) + b * cy.at(n, c, h, w));
            proptest::prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        }
    }
}
