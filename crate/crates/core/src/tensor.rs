//! Dense row-major `f64` tensors and the numeric kernels shared by the
//! autograd engine and the frozen (non-trainable) feature extractors.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::BadShape(format!(
                "{} elements do not fill shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::BadShape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        self.clone().reshape(shape)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len().max(1) as f64
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Axis permutation; `perm[i]` names the source axis of output axis `i`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.rank(), "permutation rank mismatch");
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = strides(&self.shape);
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = vec![0.0; self.data.len()];
        let rank = out_shape.len();
        if rank == 0 || out.is_empty() {
            return Self {
                shape: out_shape,
                data: out,
            };
        }
        let inner = out_shape[rank - 1];
        let inner_stride = src_strides[rank - 1];
        let outer = out.len() / inner;
        let mut idx = vec![0usize; rank - 1];
        for o in 0..outer {
            let mut base = 0;
            for (i, &ix) in idx.iter().enumerate() {
                base += ix * src_strides[i];
            }
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (k, d) in dst.iter_mut().enumerate() {
                *d = self.data[base + k * inner_stride];
            }
            for ax in (0..rank - 1).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Self {
            shape: out_shape,
            data: out,
        }
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::BadShape("concat of zero tensors".into()))?;
        let rank = first.rank();
        let mut out_shape = first.shape.clone();
        out_shape[axis] = 0;
        for p in parts {
            if p.rank() != rank
                || p
                    .shape
                    .iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != first.shape[i])
            {
                return Err(Error::BadShape(format!(
                    "concat axis {axis}: {:?} vs {:?}",
                    first.shape, p.shape
                )));
            }
            out_shape[axis] += p.shape[axis];
        }
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Self {
        assert!(start + len <= self.shape[axis], "slice out of range");
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let full = self.shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Self { shape, data }
    }

    /// Repeats each leading-axis entry `times` times consecutively.
    pub fn repeat_interleave(&self, times: usize) -> Self {
        let rows = self.shape[0];
        let inner = self.data.len() / rows.max(1);
        let mut data = Vec::with_capacity(self.data.len() * times);
        for r in 0..rows {
            for _ in 0..times {
                data.extend_from_slice(&self.data[r * inner..(r + 1) * inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[0] *= times;
        Self { shape, data }
    }

    pub fn checksum(&self) -> u64 {
        // FNV-1a over the raw bits; used to assert frozen weights never move.
        let mut h: u64 = 0xcbf29ce484222325;
        for v in &self.data {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major matrices, where
/// `op` optionally transposes. `a` is `m x k` after `op`, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths checked above; strides describe in-bounds
    // row-major (or transposed) layouts of exactly those extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
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

/// Geometry of an up-to-3D convolution over `[B, C, D, H, W]` data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn output(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for i in 0..3 {
            out[i] = (self.input[i] + 2 * self.pad[i] - self.kernel[i]) / self.stride[i] + 1;
        }
        out
    }

    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }

    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.output().iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }
}

/// Output columns `xo` with `0 <= xo * stride + offset - pad < len`.
fn valid_range(out: usize, stride: usize, offset: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(offset).div_ceil(stride).min(out);
    let hi = if len + pad > offset { (len + pad - offset).div_ceil(stride).min(out) } else { 0 };
    (lo, hi.max(lo))
}

/// Calls `f(out_row, in_row)` for every output row of kernel tap `(a, b, _)`
/// whose input row is in bounds; rows index flattened `(depth, height)`.
fn for_rows(g: &ConvGeom, a: usize, b: usize, mut f: impl FnMut(usize, usize)) {
    let [d, h, _] = g.input;
    let [sd, sh, _] = g.stride;
    let [pd, ph, _] = g.pad;
    let [od, oh, _] = g.output();
    let (z0, z1) = valid_range(od, sd, a, pd, d);
    let (y0, y1) = valid_range(oh, sh, b, ph, h);
    for zo in z0..z1 {
        let zi = zo * sd + a - pd;
        for yo in y0..y1 {
            let yi = yo * sh + b - ph;
            f(zo * oh + yo, zi * h + yi);
        }
    }
}

fn im2col(g: &ConvGeom, x: &[f64], col: &mut [f64]) {
    let [d, h, w] = g.input;
    let [kd, kh, kw] = g.kernel;
    let (sw, pw) = (g.stride[2], g.pad[2]);
    let [od, oh, ow] = g.output();
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..g.cin {
        let xc = &x[c * d * h * w..(c + 1) * d * h * w];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    dst.fill(0.0);
                    let (x0, x1) = valid_range(ow, sw, e, pw, w);
                    for_rows(g, a, b, |r, src| {
                        let out = &mut dst[r * ow + x0..r * ow + x1];
                        let start = src * w + x0 * sw + e - pw;
                        if sw == 1 {
                            out.copy_from_slice(&xc[start..start + out.len()]);
                        } else {
                            for (i, o) in out.iter_mut().enumerate() {
                                *o = xc[start + i * sw];
                            }
                        }
                    });
                    row += 1;
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, col: &[f64], dx: &mut [f64]) {
    let [d, h, w] = g.input;
    let [kd, kh, kw] = g.kernel;
    let (sw, pw) = (g.stride[2], g.pad[2]);
    let [od, oh, ow] = g.output();
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..g.cin {
        let dxc = &mut dx[c * d * h * w..(c + 1) * d * h * w];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &col[row * p..(row + 1) * p];
                    let (x0, x1) = valid_range(ow, sw, e, pw, w);
                    for_rows(g, a, b, |r, dst| {
                        let start = dst * w + x0 * sw + e - pw;
                        for (i, v) in src[r * ow + x0..r * ow + x1].iter().enumerate() {
                            dxc[start + i * sw] += v;
                        }
                    });
                    row += 1;
                }
            }
        }
    }
}

/// Forward convolution. `weight` is `[cout, cin, kd, kh, kw]` flattened.
pub fn conv_forward(g: &ConvGeom, x: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let k = g.cin * g.kvol();
    let p = g.out_vol();
    let mut out = vec![0.0; g.batch * g.cout * p];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; k * p]
    };
    for b in 0..g.batch {
        let xb = &x[b * g.cin * g.in_vol()..(b + 1) * g.cin * g.in_vol()];
        let ob = &mut out[b * g.cout * p..(b + 1) * g.cout * p];
        if let Some(bias) = bias {
            for (co, row) in ob.chunks_mut(p).enumerate() {
                row.fill(bias[co]);
            }
        }
        let src: &[f64] = if g.is_pointwise() {
            xb
        } else {
            im2col(g, xb, &mut col);
            &col
        };
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(g.cout, k, p, 1.0, weight, false, src, false, beta, ob);
    }
    out
}

/// Backward convolution: returns (dx, dweight, dbias).
pub fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let k = g.cin * g.kvol();
    let p = g.out_vol();
    let in_len = g.cin * g.in_vol();
    let mut dw = vec![0.0; g.cout * k];
    let mut db = vec![0.0; g.cout];
    let mut dx = if need_dx {
        Some(vec![0.0; g.batch * in_len])
    } else {
        None
    };
    let mut col = vec![0.0; if g.is_pointwise() { 0 } else { k * p }];
    let mut dcol = vec![0.0; k * p];
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let dyb = &dy[b * g.cout * p..(b + 1) * g.cout * p];
        for (co, row) in dyb.chunks(p).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
        let src: &[f64] = if g.is_pointwise() {
            xb
        } else {
            im2col(g, xb, &mut col);
            &col
        };
        gemm(g.cout, p, k, 1.0, dyb, false, src, true, 1.0, &mut dw);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                gemm(k, g.cout, p, 1.0, weight, true, dyb, false, 1.0, dxb);
            } else {
                gemm(k, g.cout, p, 1.0, weight, true, dyb, false, 0.0, &mut dcol);
                col2im(g, &dcol, dxb);
            }
        }
    }
    (dx, dw, db)
}

/// Nearest-neighbour 2x upsampling of `[B, C, H, W]`.
pub fn upsample2x(x: &Tensor) -> Tensor {
    let [b, c, h, w] = dims4(x);
    let mut out = Tensor::zeros(&[b, c, 2 * h, 2 * w]);
    let od = out.data_mut();
    for bc in 0..b * c {
        let src = &x.data()[bc * h * w..(bc + 1) * h * w];
        let dst = &mut od[bc * 4 * h * w..(bc + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward(dy: &Tensor) -> Tensor {
    let [b, c, h2, w2] = dims4(dy);
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros(&[b, c, h, w]);
    let od = out.data_mut();
    for bc in 0..b * c {
        let src = &dy.data()[bc * h2 * w2..(bc + 1) * h2 * w2];
        let dst = &mut od[bc * h * w..(bc + 1) * h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[(y / 2) * w + xx / 2] += src[y * w2 + xx];
            }
        }
    }
    out
}

/// Area-average downsampling of `[B, C, H, W]` by an integer factor.
pub fn avg_pool(x: &Tensor, factor: usize) -> Tensor {
    let [b, c, h, w] = dims4(x);
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let norm = 1.0 / (factor * factor) as f64;
    let od = out.data_mut();
    for bc in 0..b * c {
        let src = &x.data()[bc * h * w..(bc + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        s += src[(y * factor + dy) * w + xx * factor + dx];
                    }
                }
                od[bc * oh * ow + y * ow + xx] = s * norm;
            }
        }
    }
    out
}

/// Bilinear resize of `[C, H, W]` with corner alignment: the four corner
/// samples of the source land exactly on the four corners of the target.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let scale = |n_in: usize, n_out: usize| {
        if n_out <= 1 || n_in <= 1 {
            0.0
        } else {
            (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let (sy, sx) = (scale(h, out_h), scale(w, out_w));
    let od = out.data_mut();
    for y in 0..out_h {
        let fy = y as f64 * sy;
        let y0 = (fy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for xx in 0..out_w {
            let fx = xx as f64 * sx;
            let x0 = (fx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            for ch in 0..c {
                let s = &x.data()[ch * h * w..(ch + 1) * h * w];
                let top = s[y0 * w + x0] * (1.0 - tx) + s[y0 * w + x1] * tx;
                let bot = s[y1 * w + x0] * (1.0 - tx) + s[y1 * w + x1] * tx;
                od[(ch * out_h + y) * out_w + xx] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    out
}

pub fn dims4(x: &Tensor) -> [usize; 4] {
    assert_eq!(x.rank(), 4, "expected a rank-4 tensor, got {:?}", x.shape());
    [x.dim(0), x.dim(1), x.dim(2), x.dim(3)]
}
