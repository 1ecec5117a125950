use crate::error::{Error, Result};
use crate::layers::conv::image_batch_dims;
use crate::tensor::{Real, Tensor};

/// 2-D max pooling. Ties resolve to the first element of the window in
/// row-major order.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    window: (usize, usize),
    stride: usize,
    cache: Option<PoolCache>,
}

#[derive(Clone, Debug)]
struct PoolCache {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    /// Flat input offset of the winning element, one per output element.
    argmax: Vec<usize>,
}

impl Default for MaxPool2d {
    fn default() -> Self {
        Self::new((2, 2), 2)
    }
}

impl MaxPool2d {
    pub fn new(window: (usize, usize), stride: usize) -> Self {
        assert!(window.0 > 0 && window.1 > 0 && stride > 0, "pool window and stride must be positive");
        Self {
            window,
            stride,
            cache: None,
        }
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (wh, ww) = self.window;
        if h < wh || w < ww {
            return Err(Error::Shape(format!(
                "pool window {wh}x{ww} larger than input {h}x{w}"
            )));
        }
        Ok(((h - wh) / self.stride + 1, (w - ww) / self.stride + 1))
    }

    fn apply<T: Real>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
        let (n, h, w, c, batched) = image_batch_dims(x.shape())?;
        let (oh, ow) = self.output_dims(h, w)?;
        let (wh, ww) = self.window;
        let src = x.data();
        let mut out = Vec::with_capacity(n * oh * ow * c);
        let mut argmax = Vec::with_capacity(n * oh * ow * c);
        for b in 0..n {
            let base = b * h * w * c;
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = base + ((oy * self.stride) * w + ox * self.stride) * c + ch;
                        for ky in 0..wh {
                            for kx in 0..ww {
                                let iy = oy * self.stride + ky;
                                let ix = ox * self.stride + kx;
                                let idx = base + (iy * w + ix) * c + ch;
                                if src[idx] > src[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(src[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let shape = if batched { vec![n, oh, ow, c] } else { vec![oh, ow, c] };
        let y = Tensor::new(&shape, out)?.ensure_finite("max pool output")?;
        Ok((
            y,
            PoolCache {
                input_shape: x.shape().to_vec(),
                output_shape: shape,
                argmax,
            },
        ))
    }

    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(x).map(|(y, _)| y)
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, cache) = self.apply(x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    /// Routes each upstream gradient to the cached argmax position.
    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("max pool backward called before forward".into()))?;
        if dy.shape() != cache.output_shape.as_slice() {
            return Err(Error::Shape(format!(
                "max pool backward expected dy {:?}, got {:?}",
                cache.output_shape,
                dy.shape()
            )));
        }
        let mut dx = Tensor::zeros(&cache.input_shape);
        let d = dx.data_mut();
        for (&idx, &g) in cache.argmax.iter().zip(dy.data()) {
            d[idx] = d[idx] + g;
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
