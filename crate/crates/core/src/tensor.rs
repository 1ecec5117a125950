//! Dense row-major tensors and the numeric kernels the layers are built on.
//!
//! Images and feature maps use the channels-last layout `(h, w, c)`, batched
//! as `(n, h, w, c)`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar type of a tensor: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` on strided matrices.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension in {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            off = off * d + i;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<T> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let o = self
            .offset(index)
            .ok_or_else(|| Error::Shape(format!("index {index:?} out of bounds for {:?}", self.shape)))?;
        self.data[o] = value;
        Ok(())
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors if any element is NaN or infinite.
    pub fn ensure_finite(self, what: &str) -> Result<Self> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(self),
            Some(i) => Err(Error::NonFinite(format!(
                "{what}: element {i} is {}",
                self.data[i]
            ))),
        }
    }

    /// Sum in index order.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }
}

/// Read-only strided matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a, T: Real> MatRef<'a, T> {
    pub(crate) fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix view size");
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub(crate) fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// Row-major `c = a * b`, or `c += a * b` when `accumulate` is set.
pub(crate) fn gemm<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>, c: &mut [T], accumulate: bool) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(c.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(T::zero());
        }
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the views were built by `row_major` (length checked) and
    // possibly transposed, so every addressed element lies inside its slice;
    // `c` is a distinct mutable slice of exactly m * n elements.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product of `[m, k]` and `[k, n]` tensors.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(Error::Shape(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    };
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(
        MatRef::row_major(a.data(), m, k),
        MatRef::row_major(b.data(), k, n),
        &mut out,
        false,
    );
    Tensor::new(&[m, n], out)?.ensure_finite("matmul output")
}

/// Zero padding on each side of an image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding2d {
    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// Size-preserving padding at stride 1. Even kernels put the extra row and
    /// column after the image: `before = (k - 1) / 2`, `after = k - 1 - before`.
    pub fn same(kh: usize, kw: usize) -> Self {
        let (th, tw) = (kh.saturating_sub(1), kw.saturating_sub(1));
        Self {
            top: th / 2,
            bottom: th - th / 2,
            left: tw / 2,
            right: tw - tw / 2,
        }
    }
}

/// Geometry of a sliding-window patch extraction over an `(h, w, c)` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: Padding2d,
    pub out_h: usize,
    pub out_w: usize,
}

impl PatchGeometry {
    pub fn new(
        (in_h, in_w, channels): (usize, usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        pad: Padding2d,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Shape("stride must be at least 1".into()));
        }
        if kh == 0 || kw == 0 || channels == 0 {
            return Err(Error::Shape("kernel and channel sizes must be positive".into()));
        }
        let span_h = in_h + pad.top + pad.bottom;
        let span_w = in_w + pad.left + pad.right;
        if span_h < kh || span_w < kw {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} larger than padded input {span_h}x{span_w}"
            )));
        }
        if !(span_h - kh).is_multiple_of(stride) || !(span_w - kw).is_multiple_of(stride) {
            return Err(Error::Shape(format!(
                "non-integral output size for padded input {span_h}x{span_w}, kernel {kh}x{kw}, stride {stride}"
            )));
        }
        Ok(Self {
            in_h,
            in_w,
            channels,
            kh,
            kw,
            stride,
            pad,
            out_h: (span_h - kh) / stride + 1,
            out_w: (span_w - kw) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.channels
    }

    pub fn rows(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.in_h * self.in_w * self.channels
    }

    /// Source row/column of kernel tap `(k_y, k_x)` for output cell `(o_y, o_x)`,
    /// or `None` when it falls in the padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad.top)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad.left)?;
        (iy < self.in_h && ix < self.in_w).then_some((iy, ix))
    }

    /// Writes one patch row per output cell of `image` into `cols`. Columns
    /// are ordered `(k_y, k_x, c)`, matching the filter flattening.
    pub(crate) fn im2col_into<T: Real>(&self, image: &[T], cols: &mut [T]) {
        debug_assert_eq!(image.len(), self.image_len());
        debug_assert_eq!(cols.len(), self.rows() * self.patch_len());
        let c = self.channels;
        let mut out = cols.chunks_exact_mut(c);
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let dst = out.next().expect("cols sized by geometry");
                        match self.source(oy, ox, ky, kx) {
                            Some((iy, ix)) => {
                                let s = (iy * self.in_w + ix) * c;
                                dst.copy_from_slice(&image[s..s + c]);
                            }
                            None => dst.fill(T::zero()),
                        }
                    }
                }
            }
        }
    }

    /// Single patch row `row` of `image` (same column order as `im2col_into`).
    pub(crate) fn patch_at<T: Real>(&self, image: &[T], row: usize) -> Vec<T> {
        let (oy, ox) = (row / self.out_w, row % self.out_w);
        let c = self.channels;
        let mut out = Vec::with_capacity(self.patch_len());
        for ky in 0..self.kh {
            for kx in 0..self.kw {
                match self.source(oy, ox, ky, kx) {
                    Some((iy, ix)) => {
                        let s = (iy * self.in_w + ix) * c;
                        out.extend_from_slice(&image[s..s + c]);
                    }
                    None => out.extend(std::iter::repeat_n(T::zero(), c)),
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::im2col_into`]: scatter-adds patch rows back onto `image`.
    pub(crate) fn col2im_add<T: Real>(&self, cols: &[T], image: &mut [T]) {
        debug_assert_eq!(image.len(), self.image_len());
        debug_assert_eq!(cols.len(), self.rows() * self.patch_len());
        let c = self.channels;
        let mut src = cols.chunks_exact(c);
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let patch = src.next().expect("cols sized by geometry");
                        if let Some((iy, ix)) = self.source(oy, ox, ky, kx) {
                            let s = (iy * self.in_w + ix) * c;
                            for (d, &g) in image[s..s + c].iter_mut().zip(patch) {
                                *d = *d + g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Patch matrix of an `(h, w, c)` image with symmetric zero padding.
pub fn im2col<T: Real>(
    input: &Tensor<T>,
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    im2col_padded(input, kernel, stride, Padding2d::uniform(padding))
}

/// Patch matrix of an `(h, w, c)` image with explicit per-side padding.
pub fn im2col_padded<T: Real>(
    input: &Tensor<T>,
    kernel: (usize, usize),
    stride: usize,
    pad: Padding2d,
) -> Result<Tensor<T>> {
    let &[h, w, c] = input.shape() else {
        return Err(Error::Shape(format!(
            "im2col expects an (h, w, c) image, got {:?}",
            input.shape()
        )));
    };
    let geom = PatchGeometry::new((h, w, c), kernel, stride, pad)?;
    let mut cols = vec![T::zero(); geom.rows() * geom.patch_len()];
    geom.im2col_into(input.data(), &mut cols);
    Tensor::new(&[geom.rows(), geom.patch_len()], cols)
}
