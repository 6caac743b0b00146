//! Raw numeric kernels behind the differentiable ops.
//!
//! Convolutions go through im2col and a strided GEMM. The column buffer is
//! built a few output rows at a time so 9x9 layers on wide feature maps stay
//! within a bounded working set.

use crate::error::{Error, Result};

use super::Tensor;

/// Upper bound on column-buffer elements per chunk.
const COLUMN_BUDGET: usize = 1 << 21;

/// `c = a * b + beta * c` over strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len());
        assert!(last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: every element addressed through the strides lies inside the
    // slices, checked by the assertions above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Geometry of a strided correlation from a `(c, h, w)` plane stack to
/// `(oh, ow)` output sites.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    fn rows_per_chunk(&self) -> usize {
        (COLUMN_BUDGET / (self.patch_len() * self.ow).max(1)).clamp(1, self.oh.max(1))
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.rows_per_chunk();
        let oh = self.oh;
        (0..oh).step_by(step).map(move |r0| (r0, (r0 + step).min(oh)))
    }

    fn source(&self, o: usize, kk: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < extent).then_some(i as usize)
    }
}

fn im2col(x: &[f64], g: &Geom, r0: usize, r1: usize, cols: &mut [f64]) {
    let n = (r1 - r0) * g.ow;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * n;
                let dst = &mut cols[row..row + n];
                for (ri, oy) in (r0..r1).enumerate() {
                    let line = &mut dst[ri * g.ow..(ri + 1) * g.ow];
                    match g.source(oy, ky, g.h) {
                        None => line.fill(0.0),
                        Some(iy) => {
                            let src = &plane[iy * g.w..(iy + 1) * g.w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = g.source(ox, kx, g.w).map_or(0.0, |ix| src[ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geom, r0: usize, r1: usize, x: &mut [f64]) {
    let n = (r1 - r0) * g.ow;
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * n;
                let src = &cols[row..row + n];
                for (ri, oy) in (r0..r1).enumerate() {
                    let Some(iy) = g.source(oy, ky, g.h) else { continue };
                    let line = &src[ri * g.ow..(ri + 1) * g.ow];
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for (ox, v) in line.iter().enumerate() {
                        if let Some(ix) = g.source(ox, kx, g.w) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Validated layout of a convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvShape {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let [batch, in_ch, in_h, in_w] = x.dims4()?;
        let [out_ch, w_in, kh, kw] = w.dims4().map_err(|_| {
            Error::shape("conv2d", format!("weights must be (out, in, k, k), got {:?}", w.shape()))
        })?;
        check_common("conv2d", stride, kh, kw)?;
        if w_in != in_ch {
            return Err(Error::shape(
                "conv2d",
                format!("axis 1 (channels): input has {}, weights expect {}", in_ch, w_in),
            ));
        }
        if b.shape() != [out_ch] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?} does not match {} output channels", b.shape(), out_ch),
            ));
        }
        for (axis, extent) in [(2, in_h), (3, in_w)] {
            if extent + 2 * pad < kh {
                return Err(Error::shape(
                    "conv2d",
                    format!("axis {}: extent {} + 2*{} smaller than kernel {}", axis, extent, pad, kh),
                ));
            }
        }
        Ok(ConvShape {
            batch,
            in_ch,
            out_ch,
            in_h,
            in_w,
            out_h: (in_h + 2 * pad - kh) / stride + 1,
            out_w: (in_w + 2 * pad - kh) / stride + 1,
            k: kh,
            stride,
            pad,
        })
    }

    /// Layout of a transposed convolution. Weights are `(in, out, k, k)`,
    /// i.e. the same tensor a forward conv from `out` to `in` channels uses.
    pub fn conv_transpose2d(
        x: &Tensor,
        w: &Tensor,
        b: &Tensor,
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<Self> {
        let [batch, in_ch, in_h, in_w] = x.dims4()?;
        let [w_in, out_ch, kh, kw] = w.dims4().map_err(|_| {
            Error::shape(
                "conv_transpose2d",
                format!("weights must be (in, out, k, k), got {:?}", w.shape()),
            )
        })?;
        check_common("conv_transpose2d", stride, kh, kw)?;
        if w_in != in_ch {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("axis 1 (channels): input has {}, weights expect {}", in_ch, w_in),
            ));
        }
        if b.shape() != [out_ch] {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("bias {:?} does not match {} output channels", b.shape(), out_ch),
            ));
        }
        if output_padding >= stride {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("output_padding {} must be below stride {}", output_padding, stride),
            ));
        }
        let grow = |extent: usize, axis: usize| -> Result<usize> {
            let full = stride * (extent.max(1) - 1) + kh + output_padding;
            if extent == 0 || full < 2 * pad + 1 {
                return Err(Error::shape(
                    "conv_transpose2d",
                    format!("axis {}: extent {} too small for padding {}", axis, extent, pad),
                ));
            }
            Ok(full - 2 * pad)
        };
        Ok(ConvShape {
            batch,
            in_ch,
            out_ch,
            in_h,
            in_w,
            out_h: grow(in_h, 2)?,
            out_w: grow(in_w, 3)?,
            k: kh,
            stride,
            pad,
        })
    }

    fn forward_geom(&self) -> Geom {
        Geom {
            c: self.in_ch,
            h: self.in_h,
            w: self.in_w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            oh: self.out_h,
            ow: self.out_w,
        }
    }

    /// Transposed conv seen as the adjoint of a conv from its output space.
    fn adjoint_geom(&self) -> Geom {
        Geom {
            c: self.out_ch,
            h: self.out_h,
            w: self.out_w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            oh: self.in_h,
            ow: self.in_w,
        }
    }
}

fn check_common(op: &'static str, stride: usize, kh: usize, kw: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::shape(op, "stride must be positive"));
    }
    if kh != kw || kh == 0 {
        return Err(Error::shape(
            op,
            format!("axes 2/3: kernel must be square and non-empty, got {}x{}", kh, kw),
        ));
    }
    Ok(())
}

fn add_bias(y: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, &bv) in y.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += bv;
        }
    }
}

fn bias_grad(gy: &[f64], channels: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; channels];
    for (i, chunk) in gy.chunks(plane).enumerate() {
        gb[i % channels] += chunk.iter().sum::<f64>();
    }
    gb
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Need {
    pub x: bool,
    pub w: bool,
}

pub(crate) fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, s: &ConvShape) -> Tensor {
    let g = s.forward_geom();
    let in_plane = s.in_ch * s.in_h * s.in_w;
    let out_plane = s.out_h * s.out_w;
    let kl = g.patch_len();
    let mut y = vec![0.0; s.batch * s.out_ch * out_plane];
    let mut cols = Vec::new();
    for bi in 0..s.batch {
        let xb = &x.data()[bi * in_plane..(bi + 1) * in_plane];
        let yb = &mut y[bi * s.out_ch * out_plane..(bi + 1) * s.out_ch * out_plane];
        for (r0, r1) in g.chunks() {
            let n = (r1 - r0) * s.out_w;
            cols.resize(kl * n, 0.0);
            im2col(xb, &g, r0, r1, &mut cols);
            gemm(
                s.out_ch,
                kl,
                n,
                w.data(),
                (kl, 1),
                &cols,
                (n, 1),
                0.0,
                &mut yb[r0 * s.out_w..],
                (out_plane, 1),
            );
        }
    }
    add_bias(&mut y, b.data(), out_plane);
    Tensor::new(&[s.batch, s.out_ch, s.out_h, s.out_w], y).expect("conv2d output extents")
}

/// Gradients of a conv2d with respect to input, weights and bias.
/// Gradients of a conv with respect to input, weight and bias. The input
/// and weight gradients are skipped when not `need`ed.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    s: &ConvShape,
    need: Need,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let g = s.forward_geom();
    let in_plane = s.in_ch * s.in_h * s.in_w;
    let out_plane = s.out_h * s.out_w;
    let kl = g.patch_len();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut cols = Vec::new();
    let mut gcols = Vec::new();
    for bi in 0..s.batch {
        let xb = &x.data()[bi * in_plane..(bi + 1) * in_plane];
        let gyb = &gy.data()[bi * s.out_ch * out_plane..(bi + 1) * s.out_ch * out_plane];
        let gxb = &mut gx[bi * in_plane..(bi + 1) * in_plane];
        for (r0, r1) in g.chunks() {
            let n = (r1 - r0) * s.out_w;
            cols.resize(if need.w { kl * n } else { 0 }, 0.0);
            gcols.resize(if need.x { kl * n } else { 0 }, 0.0);
            let gy_view = &gyb[r0 * s.out_w..];
            if need.w {
                im2col(xb, &g, r0, r1, &mut cols);
                // gw += gy * cols^T
                gemm(s.out_ch, n, kl, gy_view, (out_plane, 1), &cols, (1, n), 1.0, &mut gw, (kl, 1));
            }
            if need.x {
                // gcols = w^T * gy
                gemm(kl, s.out_ch, n, w.data(), (1, kl), gy_view, (out_plane, 1), 0.0, &mut gcols, (n, 1));
                col2im(&gcols, &g, r0, r1, gxb);
            }
        }
    }
    let gb = bias_grad(gy.data(), s.out_ch, out_plane);
    (
        need.x.then(|| Tensor::new(x.shape(), gx).expect("gx")),
        need.w.then(|| Tensor::new(w.shape(), gw).expect("gw")),
        Tensor::new(&[s.out_ch], gb).expect("gb"),
    )
}

pub(crate) fn conv_transpose2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, s: &ConvShape) -> Tensor {
    let g = s.adjoint_geom();
    let in_plane = s.in_h * s.in_w;
    let out_plane = s.out_h * s.out_w;
    let kl = g.patch_len();
    let mut y = vec![0.0; s.batch * s.out_ch * out_plane];
    let mut cols = Vec::new();
    for bi in 0..s.batch {
        let xb = &x.data()[bi * s.in_ch * in_plane..(bi + 1) * s.in_ch * in_plane];
        let yb = &mut y[bi * s.out_ch * out_plane..(bi + 1) * s.out_ch * out_plane];
        for (r0, r1) in g.chunks() {
            let n = (r1 - r0) * s.in_w;
            cols.resize(kl * n, 0.0);
            // cols = w^T * x, with w viewed as (in, out*k*k)
            gemm(kl, s.in_ch, n, w.data(), (1, kl), &xb[r0 * s.in_w..], (in_plane, 1), 0.0, &mut cols, (n, 1));
            col2im(&cols, &g, r0, r1, yb);
        }
    }
    add_bias(&mut y, b.data(), out_plane);
    Tensor::new(&[s.batch, s.out_ch, s.out_h, s.out_w], y).expect("conv_transpose2d output extents")
}

pub(crate) fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    s: &ConvShape,
    need: Need,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let g = s.adjoint_geom();
    let in_plane = s.in_h * s.in_w;
    let out_plane = s.out_h * s.out_w;
    let kl = g.patch_len();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut cols = Vec::new();
    for bi in 0..s.batch {
        let xb = &x.data()[bi * s.in_ch * in_plane..(bi + 1) * s.in_ch * in_plane];
        let gyb = &gy.data()[bi * s.out_ch * out_plane..(bi + 1) * s.out_ch * out_plane];
        let gxb = &mut gx[bi * s.in_ch * in_plane..(bi + 1) * s.in_ch * in_plane];
        for (r0, r1) in g.chunks() {
            let n = (r1 - r0) * s.in_w;
            cols.resize(kl * n, 0.0);
            im2col(gyb, &g, r0, r1, &mut cols);
            if need.x {
                // gx = w * cols
                gemm(s.in_ch, kl, n, w.data(), (kl, 1), &cols, (n, 1), 0.0, &mut gxb[r0 * s.in_w..], (in_plane, 1));
            }
            if need.w {
                // gw += x * cols^T
                gemm(s.in_ch, n, kl, &xb[r0 * s.in_w..], (in_plane, 1), &cols, (1, n), 1.0, &mut gw, (kl, 1));
            }
        }
    }
    let gb = bias_grad(gy.data(), s.out_ch, out_plane);
    (
        need.x.then(|| Tensor::new(x.shape(), gx).expect("gx")),
        need.w.then(|| Tensor::new(w.shape(), gw).expect("gw")),
        Tensor::new(&[s.out_ch], gb).expect("gb"),
    )
}

/// Symmetric (half-sample) reflection of index `i` into `0..n`.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Offsets `lo..=hi` around a centre pixel covered by a window of `size`.
pub fn window_offsets(size: usize) -> (isize, isize) {
    let lo = (size as isize - 1) / 2;
    (-lo, size as isize - 1 - lo)
}

fn box_pass(src: &[f64], dst: &mut [f64], planes: usize, h: usize, w: usize, size: usize, along_rows: bool, adjoint: bool) {
    let (lo, hi) = window_offsets(size);
    let scale = 1.0 / size as f64;
    let (len, lines, step, line_step) = if along_rows { (w, h, 1, w) } else { (h, w, w, 1) };
    for p in 0..planes {
        let base = p * h * w;
        for line in 0..lines {
            let off = base + line * line_step;
            for j in 0..len {
                for d in lo..=hi {
                    let r = reflect(j as isize + d, len);
                    if adjoint {
                        dst[off + r * step] += src[off + j * step] * scale;
                    } else {
                        dst[off + j * step] += src[off + r * step] * scale;
                    }
                }
            }
        }
    }
}

/// Per-pixel mean over a `size` x `size` window with reflective borders.
pub(crate) fn window_mean(x: &Tensor, size: usize, adjoint: bool) -> Result<Tensor> {
    let [b, c, h, w] = x.dims4()?;
    let mut tmp = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    box_pass(x.data(), &mut tmp, b * c, h, w, size, true, adjoint);
    box_pass(&tmp, &mut out, b * c, h, w, size, false, adjoint);
    Tensor::new(x.shape(), out)
}

pub(crate) fn neighbor_diff_shape(x: &Tensor, dy: isize, dx: isize) -> Result<[usize; 4]> {
    let [b, c, h, w] = x.dims4()?;
    let (ady, adx) = (dy.unsigned_abs(), dx.unsigned_abs());
    if ady >= h || adx >= w {
        return Err(Error::shape(
            "neighbor_diff",
            format!("offset ({}, {}) exceeds extent {}x{}", dy, dx, h, w),
        ));
    }
    Ok([b, c, h - ady, w - adx])
}

/// Top-left corner of the valid region for pixel and neighbour.
fn neighbor_origin(dy: isize, dx: isize) -> (usize, usize, usize, usize) {
    let y0 = (-dy).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    (y0, x0, (y0 as isize + dy) as usize, (x0 as isize + dx) as usize)
}

/// `x[i] - x[i + (dy, dx)]` over every pixel whose neighbour is in bounds.
pub(crate) fn neighbor_diff(x: &Tensor, dy: isize, dx: isize) -> Result<Tensor> {
    let [b, c, h, w] = x.dims4()?;
    let [_, _, oh, ow] = neighbor_diff_shape(x, dy, dx)?;
    let (y0, x0, ny0, nx0) = neighbor_origin(dy, dx);
    let src = x.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for p in 0..b * c {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                out.push(src[base + (y0 + i) * w + x0 + j] - src[base + (ny0 + i) * w + nx0 + j]);
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

pub(crate) fn neighbor_diff_backward(shape: &[usize], g: &Tensor, dy: isize, dx: isize) -> Tensor {
    let (h, w) = (shape[2], shape[3]);
    let [_, _, oh, ow] = g.dims4().expect("rank-4 gradient");
    let (y0, x0, ny0, nx0) = neighbor_origin(dy, dx);
    let mut gx = Tensor::zeros(shape);
    let out = gx.data_mut();
    for (p, plane) in g.data().chunks(oh * ow).enumerate() {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let v = plane[i * ow + j];
                out[base + (y0 + i) * w + x0 + j] += v;
                out[base + (ny0 + i) * w + nx0 + j] -= v;
            }
        }
    }
    gx
}

/// Two-tap weights of the half-pixel bilinear x2 rule for output index `o`.
fn upsample_taps(o: usize, n: usize) -> [(usize, f64); 2] {
    let j = o / 2;
    let other = if o % 2 == 0 { j.saturating_sub(1) } else { (j + 1).min(n - 1) };
    [(j, 0.75), (other, 0.25)]
}

/// Bilinear x2 upsampling (half-pixel centres, edge clamped), or its adjoint
/// when `adjoint` is set; `x` is then the upsampled-space tensor.
pub(crate) fn upsample2x(x: &Tensor, adjoint: bool) -> Result<Tensor> {
    let [b, c, h, w] = x.dims4()?;
    let (sh, sw, dh, dw) = if adjoint {
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("upsample2x", format!("adjoint needs even extents, got {}x{}", h, w)));
        }
        (h / 2, w / 2, h, w)
    } else {
        (h, w, 2 * h, 2 * w)
    };
    let planes = b * c;
    let src = x.data();
    // rows pass: (sh, sw) <-> (sh, dw)
    let mut mid = vec![0.0; planes * sh * dw];
    let mut out = vec![0.0; planes * if adjoint { sh * sw } else { dh * dw }];
    if !adjoint {
        for p in 0..planes {
            for i in 0..sh {
                for o in 0..dw {
                    mid[(p * sh + i) * dw + o] = upsample_taps(o, sw)
                        .iter()
                        .map(|&(j, wt)| wt * src[(p * sh + i) * sw + j])
                        .sum();
                }
            }
            for o in 0..dh {
                for j in 0..dw {
                    out[(p * dh + o) * dw + j] = upsample_taps(o, sh)
                        .iter()
                        .map(|&(i, wt)| wt * mid[(p * sh + i) * dw + j])
                        .sum();
                }
            }
        }
        Tensor::new(&[b, c, dh, dw], out)
    } else {
        for p in 0..planes {
            for o in 0..dh {
                for j in 0..dw {
                    let g = src[(p * dh + o) * dw + j];
                    for (i, wt) in upsample_taps(o, sh) {
                        mid[(p * sh + i) * dw + j] += wt * g;
                    }
                }
            }
            for i in 0..sh {
                for o in 0..dw {
                    let g = mid[(p * sh + i) * dw + o];
                    for (j, wt) in upsample_taps(o, sw) {
                        out[(p * sh + i) * sw + j] += wt * g;
                    }
                }
            }
        }
        Tensor::new(&[b, c, sh, sw], out)
    }
}
