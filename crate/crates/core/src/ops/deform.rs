//! Bilinear sampling and deformable convolution (offsets only, one offset
//! set shared by every channel).
//!
//! Output position `p` of tap `n` samples the input at
//! `p + p_n + (dy_n(p), dx_n(p))` with bilinear interpolation. Neighbors
//! outside the image contribute zero. The interpolant is piecewise linear;
//! at an exact integer coordinate the coordinate derivative takes the
//! right-hand branch (the cell starting at `floor(coord)`).

use crate::error::{Error, Result};
use crate::ops::conv::{matmul_at_acc, matmul_bias, matmul_bt_acc};
use crate::tensor::{Dims, Tensor};

/// Per-position displacement field: `(n, 2N, h, w)`, channel `2t` holding
/// tap `t`'s vertical offset and `2t + 1` its horizontal offset, in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField {
    field: Tensor,
}

impl OffsetField {
    /// Wraps `field`, clamping vertical components to `[-h, h]` and
    /// horizontal ones to `[-w, w]` of the field's own grid.
    pub fn new(field: Tensor, taps: usize) -> Result<Self> {
        let d = field.dims();
        if d.c != 2 * taps {
            return Err(Error::shape(
                "offset field",
                format!("expected {} channels for {taps} taps, got {d}", 2 * taps),
            ));
        }
        let (lim_y, lim_x) = (d.h as f64, d.w as f64);
        let mut field = field;
        let plane = d.plane();
        for (i, v) in field.data_mut().iter_mut().enumerate() {
            let lim = if (i / plane).is_multiple_of(2) { lim_y } else { lim_x };
            *v = v.clamp(-lim, lim);
        }
        Ok(OffsetField { field })
    }

    pub fn zeros(n: usize, taps: usize, h: usize, w: usize) -> Result<Self> {
        OffsetField::new(Tensor::zeros(Dims::new(n, 2 * taps, h, w)?), taps)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.field
    }

    pub fn taps(&self) -> usize {
        self.field.dims().c / 2
    }

    /// `(dy, dx)` of tap `t` at position `(y, x)` in sample `n`.
    pub fn get(&self, n: usize, t: usize, y: usize, x: usize) -> (f64, f64) {
        (self.field.at(n, 2 * t, y, x), self.field.at(n, 2 * t + 1, y, x))
    }
}

/// Location of one bilinear sample: the top-left neighbor and fractional
/// parts.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SamplePoint {
    y0: isize,
    x0: isize,
    fy: f64,
    fx: f64,
}

impl SamplePoint {
    #[inline]
    pub fn new(y: f64, x: f64) -> Self {
        let (yf, xf) = (y.floor(), x.floor());
        SamplePoint {
            y0: yf as isize,
            x0: xf as isize,
            fy: y - yf,
            fx: x - xf,
        }
    }

    /// The four neighbor values, zero outside the plane:
    /// `[(y0,x0), (y0,x0+1), (y0+1,x0), (y0+1,x0+1)]`.
    #[inline]
    fn neighbors(&self, plane: &[f64], h: usize, w: usize) -> [f64; 4] {
        let at = |y: isize, x: isize| {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                plane[y as usize * w + x as usize]
            }
        };
        [
            at(self.y0, self.x0),
            at(self.y0, self.x0 + 1),
            at(self.y0 + 1, self.x0),
            at(self.y0 + 1, self.x0 + 1),
        ]
    }

    #[inline]
    fn weights(&self) -> [f64; 4] {
        let (fy, fx) = (self.fy, self.fx);
        [(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx]
    }

    #[inline]
    pub fn value(&self, plane: &[f64], h: usize, w: usize) -> f64 {
        let v = self.neighbors(plane, h, w);
        let wt = self.weights();
        wt[0] * v[0] + wt[1] * v[1] + wt[2] * v[2] + wt[3] * v[3]
    }

    /// `(d value / dy, d value / dx)`.
    #[inline]
    pub fn coord_grad(&self, plane: &[f64], h: usize, w: usize) -> (f64, f64) {
        let v = self.neighbors(plane, h, w);
        let (fy, fx) = (self.fy, self.fx);
        let dy = (1.0 - fx) * (v[2] - v[0]) + fx * (v[3] - v[1]);
        let dx = (1.0 - fy) * (v[1] - v[0]) + fy * (v[3] - v[2]);
        (dy, dx)
    }

    /// Accumulates `g` times the bilinear weights into the neighbors.
    #[inline]
    pub fn scatter(&self, g: f64, plane: &mut [f64], h: usize, w: usize) {
        let wt = self.weights();
        let cells = [
            (self.y0, self.x0),
            (self.y0, self.x0 + 1),
            (self.y0 + 1, self.x0),
            (self.y0 + 1, self.x0 + 1),
        ];
        for (&(y, x), &wv) in cells.iter().zip(&wt) {
            if y >= 0 && x >= 0 && y < h as isize && x < w as isize {
                plane[y as usize * w + x as usize] += g * wv;
            }
        }
    }
}

/// Bilinear read of `x[batch, channel]` at fractional `(y, xc)`.
pub fn bilinear_sample(x: &Tensor, y: f64, xc: f64, channel: usize, batch: usize) -> f64 {
    let d = x.dims();
    let plane = &x.data()[(batch * d.c + channel) * d.plane()..][..d.plane()];
    SamplePoint::new(y, xc).value(plane, d.h, d.w)
}

/// Derivative of [`bilinear_sample`] with respect to `(y, xc)`.
pub fn bilinear_sample_coord_grad(x: &Tensor, y: f64, xc: f64, channel: usize, batch: usize) -> (f64, f64) {
    let d = x.dims();
    let plane = &x.data()[(batch * d.c + channel) * d.plane()..][..d.plane()];
    SamplePoint::new(y, xc).coord_grad(plane, d.h, d.w)
}

/// Saved forward state: sample points per (sample, tap, position) and the
/// deformable column buffers.
pub(crate) struct DeformSaved {
    pub points: Vec<SamplePoint>,
    /// 1 where an offset component was clamped (gradient blocked).
    pub clamped: Vec<bool>,
    pub cols: Vec<f64>,
}

pub(crate) fn check_offsets(x: Dims, w: Dims, off: Dims) -> Result<usize> {
    let taps = w.h * w.w;
    if off.c != 2 * taps {
        return Err(Error::shape(
            "deform_conv2d",
            format!("offset field has {} channels, expected 2N = {}", off.c, 2 * taps),
        ));
    }
    if off.n != x.n || off.h != x.h || off.w != x.w {
        return Err(Error::ShapeMismatch {
            op: "deform_conv2d offsets",
            left: x,
            right: off,
        });
    }
    Ok(taps)
}

/// Stride-1, pad `k/2` deformable convolution from raw tensors.
pub(crate) fn deform_conv2d_raw(x: &Tensor, w: &Tensor, b: &Tensor, off: &Tensor) -> Result<(Tensor, DeformSaved)> {
    let (xd, wd, bd, od) = (x.dims(), w.dims(), b.dims(), off.dims());
    crate::ops::conv::check_kernel("deform_conv2d", xd, wd, bd, wd.c)?;
    if bd.c != wd.n || wd.h % 2 == 0 {
        return Err(Error::ShapeMismatch {
            op: "deform_conv2d kernel",
            left: wd,
            right: bd,
        });
    }
    let taps = check_offsets(xd, wd, od)?;
    let k = wd.h;
    let r = (k / 2) as isize;
    let (h, wdt) = (xd.h, xd.w);
    let p = h * wdt;
    let rows = xd.c * taps;
    let m = wd.n;
    let (lim_y, lim_x) = (h as f64, wdt as f64);

    let mut points = Vec::with_capacity(xd.n * taps * p);
    let mut clamped = vec![false; od.len()];
    for n in 0..xd.n {
        for t in 0..taps {
            let (ty, tx) = ((t / k) as isize - r, (t % k) as isize - r);
            let base_y = od.index(n, 2 * t, 0, 0);
            let base_x = od.index(n, 2 * t + 1, 0, 0);
            for oy in 0..h {
                for ox in 0..wdt {
                    let i = oy * wdt + ox;
                    let raw_dy = off.data()[base_y + i];
                    let raw_dx = off.data()[base_x + i];
                    let dy = raw_dy.clamp(-lim_y, lim_y);
                    let dx = raw_dx.clamp(-lim_x, lim_x);
                    clamped[base_y + i] = dy != raw_dy;
                    clamped[base_x + i] = dx != raw_dx;
                    points.push(SamplePoint::new(
                        (oy as isize + ty) as f64 + dy,
                        (ox as isize + tx) as f64 + dx,
                    ));
                }
            }
        }
    }

    let mut cols = vec![0.0; xd.n * rows * p];
    let outd = Dims::new(xd.n, m, h, wdt)?;
    let mut out = vec![0.0; outd.len()];
    for n in 0..xd.n {
        let col = &mut cols[n * rows * p..(n + 1) * rows * p];
        let pts = &points[n * taps * p..(n + 1) * taps * p];
        for c in 0..xd.c {
            let plane = &x.data()[(n * xd.c + c) * p..(n * xd.c + c + 1) * p];
            for t in 0..taps {
                let row = &mut col[(c * taps + t) * p..(c * taps + t + 1) * p];
                for (v, pt) in row.iter_mut().zip(&pts[t * p..(t + 1) * p]) {
                    *v = pt.value(plane, h, wdt);
                }
            }
        }
        matmul_bias(w.data(), col, Some(b.data()), m, rows, p, &mut out[n * m * p..(n + 1) * m * p]);
    }
    Ok((
        Tensor::from_parts(outd, out),
        DeformSaved {
            points,
            clamped,
            cols,
        },
    ))
}

pub(crate) struct DeformGrads {
    pub x: Option<Tensor>,
    pub w: Tensor,
    pub b: Tensor,
    pub offsets: Option<Tensor>,
}

pub(crate) fn deform_conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    off_dims: Dims,
    saved: &DeformSaved,
    grad_out: &Tensor,
    need_x: bool,
    need_offsets: bool,
) -> Result<DeformGrads> {
    let (xd, wd) = (x.dims(), w.dims());
    let taps = wd.h * wd.w;
    let (h, wdt) = (xd.h, xd.w);
    let p = h * wdt;
    let rows = xd.c * taps;
    let m = wd.n;

    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; m];
    let mut gx = need_x.then(|| vec![0.0; xd.len()]);
    let mut goff = need_offsets.then(|| vec![0.0; off_dims.len()]);
    let mut gcol = vec![0.0; rows * p];
    for n in 0..xd.n {
        let go = &grad_out.data()[n * m * p..(n + 1) * m * p];
        let col = &saved.cols[n * rows * p..(n + 1) * rows * p];
        matmul_bt_acc(go, col, m, rows, p, &mut gw);
        for (o, gbv) in gb.iter_mut().enumerate() {
            *gbv += go[o * p..(o + 1) * p].iter().sum::<f64>();
        }
        if gx.is_none() && goff.is_none() {
            continue;
        }
        gcol.fill(0.0);
        matmul_at_acc(w.data(), go, m, rows, p, &mut gcol);
        let pts = &saved.points[n * taps * p..(n + 1) * taps * p];
        for c in 0..xd.c {
            let pi = (n * xd.c + c) * p;
            let plane = &x.data()[pi..pi + p];
            for t in 0..taps {
                let g_row = &gcol[(c * taps + t) * p..(c * taps + t + 1) * p];
                let t_pts = &pts[t * p..(t + 1) * p];
                if let Some(gx) = gx.as_mut() {
                    let gplane = &mut gx[pi..pi + p];
                    for (&g, pt) in g_row.iter().zip(t_pts) {
                        if g != 0.0 {
                            pt.scatter(g, gplane, h, wdt);
                        }
                    }
                }
                if let Some(goff) = goff.as_mut() {
                    let by = off_dims.index(n, 2 * t, 0, 0);
                    let bx = off_dims.index(n, 2 * t + 1, 0, 0);
                    for (i, (&g, pt)) in g_row.iter().zip(t_pts).enumerate() {
                        let (dy, dx) = pt.coord_grad(plane, h, wdt);
                        goff[by + i] += g * dy;
                        goff[bx + i] += g * dx;
                    }
                }
            }
        }
    }
    if let Some(goff) = goff.as_mut() {
        for (g, &c) in goff.iter_mut().zip(&saved.clamped) {
            if c {
                *g = 0.0;
            }
        }
    }
    Ok(DeformGrads {
        x: gx.map(|v| Tensor::from_parts(xd, v)),
        w: Tensor::from_parts(wd, gw),
        b: Tensor::from_parts(Dims::new(1, m, 1, 1)?, gb),
        offsets: goff.map(|v| Tensor::from_parts(off_dims, v)),
    })
}

/// Deformable convolution at stride 1 with `pad = k / 2`:
/// `out[o, p] = bias[o] + sum_c sum_n w[o, c, n] * bilinear(x[c], p + p_n + offset_n(p))`.
pub fn deform_conv2d(x: &Tensor, spec: &crate::ops::conv::KernelSpec, offsets: &OffsetField) -> Result<Tensor> {
    deform_conv2d_raw(x, &spec.weight, &spec.bias, offsets.tensor()).map(|(t, _)| t)
}
