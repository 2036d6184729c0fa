//! 2D cross-correlation over `C x H x W` maps (optionally batched as
//! `N x C x H x W`) lowered to GEMM through an im2col buffer.

use serde::{Deserialize, Serialize};

use super::tensor::{matmul, MatRef, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Output extent for an input extent `n`, kernel extent `d` and stride `s`:
/// `ceil(n / s)` for SAME, `ceil((n - d + 1) / s)` for VALID.
pub fn out_dim(n: usize, d: usize, s: usize, mode: Padding) -> Result<usize> {
    if n == 0 || d == 0 || s == 0 {
        return Err(Error::Dimension(format!(
            "extent, kernel and stride must be positive (N={n}, d={d}, s={s})"
        )));
    }
    match mode {
        Padding::Same => Ok(n.div_ceil(s)),
        Padding::Valid => {
            if d > n {
                return Err(Error::Dimension(format!(
                    "VALID window of extent {d} does not fit input extent {n}"
                )));
            }
            Ok((n - d + 1).div_ceil(s))
        }
    }
}

/// Zero padding `(before, after)` along one axis. SAME splits the total pad
/// floor-before / ceil-after.
pub fn padding_amounts(n: usize, d: usize, s: usize, mode: Padding) -> Result<(usize, usize)> {
    let out = out_dim(n, d, s, mode)?;
    match mode {
        Padding::Valid => Ok((0, 0)),
        Padding::Same => {
            let total = ((out - 1) * s + d).saturating_sub(n);
            Ok((total / 2, total - total / 2))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BiasKind {
    /// One value per output channel, broadcast over space.
    PerChannel,
    /// One value per output channel and output position.
    Spatial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Dimension("stride must be at least 1".into()));
        }
        let out_h = out_dim(h, k, stride, padding)?;
        let out_w = out_dim(w, k, stride, padding)?;
        let (pad_top, _) = padding_amounts(h, k, stride, padding)?;
        let (pad_left, _) = padding_amounts(w, k, stride, padding)?;
        Ok(ConvGeometry {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.out_positions()
    }

    /// 1x1 stride-1 convolutions read the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }
}

/// Resolved shapes for one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvSetup {
    pub batch: Option<usize>,
    pub geom: ConvGeometry,
    pub bias: Option<BiasKind>,
}

impl ConvSetup {
    pub fn batch_len(&self) -> usize {
        self.batch.unwrap_or(1)
    }

    pub fn out_shape(&self) -> Vec<usize> {
        let g = &self.geom;
        match self.batch {
            Some(n) => vec![n, g.c_out, g.out_h, g.out_w],
            None => vec![g.c_out, g.out_h, g.out_w],
        }
    }
}

pub(crate) fn conv_setup(
    input: &[usize],
    kernel: &[usize],
    bias: Option<&[usize]>,
    stride: usize,
    padding: Padding,
) -> Result<ConvSetup> {
    let (batch, chw) = match input.len() {
        3 => (None, input),
        4 => (Some(input[0]), &input[1..]),
        _ => {
            return Err(Error::shape(format!(
                "convolution input must be C x H x W or N x C x H x W, got {input:?}"
            )))
        }
    };
    if kernel.len() != 4 || kernel[2] != kernel[3] {
        return Err(Error::shape(format!(
            "kernel must be C_out x C_in x d x d, got {kernel:?}"
        )));
    }
    if kernel[1] != chw[0] {
        return Err(Error::shape(format!(
            "kernel expects {} input channels, input has {}",
            kernel[1], chw[0]
        )));
    }
    let geom = ConvGeometry::new(chw[0], chw[1], chw[2], kernel[0], kernel[2], stride, padding)?;
    let bias = match bias {
        None => None,
        Some(b) if b == [geom.c_out] => Some(BiasKind::PerChannel),
        Some(b) if b == [geom.c_out, geom.out_h, geom.out_w] => Some(BiasKind::Spatial),
        Some(b) => {
            return Err(Error::shape(format!(
                "bias shape {b:?} fits neither [{}] nor [{}, {}, {}]",
                geom.c_out, geom.c_out, geom.out_h, geom.out_w
            )))
        }
    };
    Ok(ConvSetup { batch, geom, bias })
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let p = g.out_positions();
    let k = g.k;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.h as isize {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad_left as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let p = g.out_positions();
    let k = g.k;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad_left as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward_raw<T: Scalar>(
    x: &[T],
    setup: &ConvSetup,
    kernel: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let g = &setup.geom;
    let n = setup.batch_len();
    let p = g.out_positions();
    let mut out = vec![T::zero(); n * g.out_len()];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch_len() * p]
    };
    for b in 0..n {
        let xb = &x[b * g.in_len()..(b + 1) * g.in_len()];
        let ob = &mut out[b * g.out_len()..(b + 1) * g.out_len()];
        let colref = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols[..]
        };
        matmul(
            MatRef::new(kernel, g.c_out, g.patch_len()),
            MatRef::new(colref, g.patch_len(), p),
            ob,
            false,
        );
        if let (Some(bias), Some(kind)) = (bias, setup.bias) {
            match kind {
                BiasKind::PerChannel => {
                    for (o, chunk) in ob.chunks_mut(p).enumerate() {
                        for v in chunk {
                            *v += bias[o];
                        }
                    }
                }
                BiasKind::Spatial => {
                    for (v, &bv) in ob.iter_mut().zip(bias) {
                        *v += bv;
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a convolution with respect to its input, kernel and bias.
pub(crate) struct ConvGrads<T> {
    pub input: Vec<T>,
    pub kernel: Vec<T>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv_backward_raw<T: Scalar>(
    x: &[T],
    setup: &ConvSetup,
    kernel: &[T],
    dy: &[T],
    want_input: bool,
    want_kernel: bool,
) -> ConvGrads<T> {
    let g = &setup.geom;
    let n = setup.batch_len();
    let p = g.out_positions();
    let mut dx = if want_input {
        vec![T::zero(); n * g.in_len()]
    } else {
        Vec::new()
    };
    let mut dk = if want_kernel {
        vec![T::zero(); kernel.len()]
    } else {
        Vec::new()
    };
    let pointwise = g.is_pointwise();
    let mut cols = vec![T::zero(); if pointwise { 0 } else { g.patch_len() * p }];
    let mut dcols = vec![T::zero(); if pointwise || !want_input { 0 } else { g.patch_len() * p }];
    for b in 0..n {
        let xb = &x[b * g.in_len()..(b + 1) * g.in_len()];
        let dyb = &dy[b * g.out_len()..(b + 1) * g.out_len()];
        if want_kernel {
            let colref = if pointwise {
                xb
            } else {
                im2col(xb, g, &mut cols);
                &cols[..]
            };
            matmul(
                MatRef::new(dyb, g.c_out, p),
                MatRef::t(colref, g.patch_len(), p),
                &mut dk,
                true,
            );
        }
        if want_input {
            let dxb = &mut dx[b * g.in_len()..(b + 1) * g.in_len()];
            let kt = MatRef::t(kernel, g.c_out, g.patch_len());
            if pointwise {
                matmul(kt, MatRef::new(dyb, g.c_out, p), dxb, true);
            } else {
                matmul(kt, MatRef::new(dyb, g.c_out, p), &mut dcols, false);
                col2im(&dcols, g, dxb);
            }
        }
    }
    let bias = setup.bias.map(|kind| match kind {
        BiasKind::PerChannel => {
            let mut db = vec![T::zero(); g.c_out];
            for b in 0..n {
                let dyb = &dy[b * g.out_len()..(b + 1) * g.out_len()];
                for (o, chunk) in dyb.chunks(p).enumerate() {
                    db[o] += chunk.iter().copied().sum::<T>();
                }
            }
            db
        }
        BiasKind::Spatial => {
            let mut db = vec![T::zero(); g.out_len()];
            for b in 0..n {
                for (d, &v) in db.iter_mut().zip(&dy[b * g.out_len()..(b + 1) * g.out_len()]) {
                    *d += v;
                }
            }
            db
        }
    });
    ConvGrads {
        input: dx,
        kernel: dk,
        bias,
    }
}

/// Cross-correlation of a `C_in x H x W` (or batched `N x C_in x H x W`)
/// input with a `C_out x C_in x d x d` kernel. The bias is either `[C_out]`
/// or `[C_out, H', W']`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let setup = conv_setup(
        input.shape(),
        kernel.shape(),
        bias.map(|b| b.shape()),
        stride,
        padding,
    )?;
    let out = conv_forward_raw(input.data(), &setup, kernel.data(), bias.map(|b| b.data()));
    Ok(Tensor::from_parts(setup.out_shape(), out))
}
