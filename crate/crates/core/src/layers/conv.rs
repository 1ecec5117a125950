use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Padding2d, PatchGeometry, Real, Tensor};

/// Stride-1, same-padded 2-D convolution (cross-correlation, no filter flip).
///
/// Filters are stored `[kh, kw, cin, cout]`, which in row-major order is the
/// `[kh * kw * cin, cout]` matrix multiplied against the im2col patch rows.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Real = f32> {
    filters: Tensor<T>,
    bias: Tensor<T>,
    cache: Option<ConvCache<T>>,
}

#[derive(Clone, Debug)]
struct ConvCache<T> {
    geom: PatchGeometry,
    batch: usize,
    batched: bool,
    cols: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct ConvGradients<T> {
    pub dx: Tensor<T>,
    pub dfilters: Tensor<T>,
    pub dbias: Tensor<T>,
}

/// Splits `(h, w, c)` or `(n, h, w, c)` into `(n, h, w, c, batched)`.
pub(crate) fn image_batch_dims(shape: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match *shape {
        [h, w, c] => Ok((1, h, w, c, false)),
        [n, h, w, c] => Ok((n, h, w, c, true)),
        _ => Err(Error::Shape(format!(
            "expected (h, w, c) or (n, h, w, c) input, got {shape:?}"
        ))),
    }
}

impl<T: Real> Conv2d<T> {
    pub fn new(kernel: (usize, usize), in_channels: usize, out_channels: usize) -> Self {
        let (kh, kw) = kernel;
        Self {
            filters: Tensor::zeros(&[kh, kw, in_channels, out_channels]),
            bias: Tensor::zeros(&[out_channels]),
            cache: None,
        }
    }

    pub fn from_parts(filters: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[_, _, _, cout] = filters.shape() else {
            return Err(Error::Shape(format!(
                "filters must be [kh, kw, cin, cout], got {:?}",
                filters.shape()
            )));
        };
        if bias.shape() != [cout] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match {cout} filters",
                bias.shape()
            )));
        }
        Ok(Self {
            filters,
            bias,
            cache: None,
        })
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.filters.shape()[0], self.filters.shape()[1])
    }

    pub fn in_channels(&self) -> usize {
        self.filters.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.filters.shape()[3]
    }

    /// Inputs feeding one filter: `kh * kw * cin`.
    pub fn fan_in(&self) -> usize {
        let (kh, kw) = self.kernel();
        kh * kw * self.in_channels()
    }

    pub fn filters(&self) -> &Tensor<T> {
        &self.filters
    }

    pub fn filters_mut(&mut self) -> &mut Tensor<T> {
        &mut self.filters
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut Tensor<T> {
        &mut self.bias
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Tensor<T>, &mut Tensor<T>) {
        (&mut self.filters, &mut self.bias)
    }

    pub fn padding(&self) -> Padding2d {
        let (kh, kw) = self.kernel();
        Padding2d::same(kh, kw)
    }

    pub fn geometry(&self, h: usize, w: usize, c: usize) -> Result<PatchGeometry> {
        if c != self.in_channels() {
            return Err(Error::Shape(format!(
                "input has {c} channels, filters expect {}",
                self.in_channels()
            )));
        }
        PatchGeometry::new((h, w, c), self.kernel(), 1, self.padding())
    }

    /// Patch rows of a batch, `[n * out_h * out_w, fan_in]` flattened.
    pub(crate) fn patches(&self, x: &Tensor<T>) -> Result<(PatchGeometry, usize, bool, Vec<T>)> {
        let (n, h, w, c, batched) = image_batch_dims(x.shape())?;
        let geom = self.geometry(h, w, c)?;
        let per_image = geom.rows() * geom.patch_len();
        let mut cols = vec![T::zero(); n * per_image];
        for (img, out) in x
            .data()
            .chunks_exact(geom.image_len())
            .zip(cols.chunks_exact_mut(per_image))
        {
            geom.im2col_into(img, out);
        }
        Ok((geom, n, batched, cols))
    }

    fn apply(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (geom, n, batched, cols) = self.patches(x)?;
        let rows = n * geom.rows();
        let cout = self.out_channels();
        let mut out = vec![T::zero(); rows * cout];
        gemm(
            MatRef::row_major(&cols, rows, geom.patch_len()),
            MatRef::row_major(self.filters.data(), geom.patch_len(), cout),
            &mut out,
            false,
        );
        for row in out.chunks_exact_mut(cout) {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v = *v + b;
            }
        }
        let shape: Vec<usize> = if batched {
            vec![n, geom.out_h, geom.out_w, cout]
        } else {
            vec![geom.out_h, geom.out_w, cout]
        };
        let y = Tensor::new(&shape, out)?.ensure_finite("conv output")?;
        Ok((
            y,
            ConvCache {
                geom,
                batch: n,
                batched,
                cols,
            },
        ))
    }

    /// Forward pass without touching the backward cache.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(x).map(|(y, _)| y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, cache) = self.apply(x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<ConvGradients<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("conv backward called before forward".into()))?;
        let geom = cache.geom;
        let cout = self.out_channels();
        let expected: Vec<usize> = if cache.batched {
            vec![cache.batch, geom.out_h, geom.out_w, cout]
        } else {
            vec![geom.out_h, geom.out_w, cout]
        };
        if dy.shape() != expected.as_slice() {
            return Err(Error::Shape(format!(
                "conv backward expected dy {expected:?}, got {:?}",
                dy.shape()
            )));
        }
        let rows = cache.batch * geom.rows();
        let k = geom.patch_len();
        let dy_mat = MatRef::row_major(dy.data(), rows, cout);

        let mut dfilters = vec![T::zero(); k * cout];
        gemm(MatRef::row_major(&cache.cols, rows, k).t(), dy_mat, &mut dfilters, false);

        let mut dbias = vec![T::zero(); cout];
        for row in dy.data().chunks_exact(cout) {
            for (d, &g) in dbias.iter_mut().zip(row) {
                *d = *d + g;
            }
        }

        let mut dcols = vec![T::zero(); rows * k];
        gemm(dy_mat, MatRef::row_major(self.filters.data(), k, cout).t(), &mut dcols, false);
        let mut dx = vec![T::zero(); cache.batch * geom.image_len()];
        let per_image = geom.rows() * k;
        for (img, dc) in dx
            .chunks_exact_mut(geom.image_len())
            .zip(dcols.chunks_exact(per_image))
        {
            geom.col2im_add(dc, img);
        }
        let in_shape: Vec<usize> = if cache.batched {
            vec![cache.batch, geom.in_h, geom.in_w, geom.channels]
        } else {
            vec![geom.in_h, geom.in_w, geom.channels]
        };
        Ok(ConvGradients {
            dx: Tensor::new(&in_shape, dx)?.ensure_finite("conv input gradient")?,
            dfilters: Tensor::new(self.filters.shape(), dfilters)?
                .ensure_finite("conv filter gradient")?,
            dbias: Tensor::new(&[cout], dbias)?,
        })
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_filter_copies_input() {
        let mut conv = Conv2d::<f64>::from_parts(
            Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap(),
            Tensor::zeros(&[1]),
        )
        .unwrap();
        let x = Tensor::from_fn(&[3, 4, 1], |i| i as f64 - 5.0);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y, x);
        let g = conv.backward(&x).unwrap();
        assert_eq!(g.dx, x);
    }

    #[test]
    fn zero_filters_give_bias() {
        let conv = Conv2d::<f32>::from_parts(
            Tensor::zeros(&[3, 3, 2, 2]),
            Tensor::new(&[2], vec![0.5, -1.5]).unwrap(),
        )
        .unwrap();
        let y = conv.infer(&Tensor::filled(&[5, 5, 2], 3.0)).unwrap();
        assert_eq!(y.shape(), &[5, 5, 2]);
        for px in y.data().chunks(2) {
            assert_eq!(px, [0.5, -1.5]);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut conv = Conv2d::<f64>::from_parts(
            Tensor::from_fn(&[2, 2, 2, 3], |i| i as f64 * 0.1),
            Tensor::filled(&[3], 0.2),
        )
        .unwrap();
        let y = conv.forward(&Tensor::from_fn(&[2, 4, 4, 2], |i| (i % 7) as f64)).unwrap();
        let g = conv.backward(&Tensor::zeros(y.shape())).unwrap();
        assert!(g.dx.data().iter().all(|&v| v == 0.0));
        assert!(g.dfilters.data().iter().all(|&v| v == 0.0));
        assert!(g.dbias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut conv = Conv2d::<f32>::new((2, 2), 1, 1);
        assert!(matches!(
            conv.backward(&Tensor::zeros(&[2, 2, 1])),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let conv = Conv2d::<f32>::new((3, 3), 3, 4);
        assert!(matches!(
            conv.infer(&Tensor::zeros(&[8, 8, 2])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn same_padding_preserves_spatial_size() {
        for (k, cin, cout, side) in [(2, 3, 16, 32), (2, 16, 32, 16), (3, 32, 64, 8), (3, 64, 128, 4)] {
            let conv = Conv2d::<f32>::new((k, k), cin, cout);
            let y = conv.infer(&Tensor::zeros(&[side, side, cin])).unwrap();
            assert_eq!(y.shape(), &[side, side, cout]);
        }
    }
}
