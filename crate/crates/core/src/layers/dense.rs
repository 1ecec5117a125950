use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Real, Tensor};

/// Fully connected layer, `y = x W + b` with `W` stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Dense<T: Real = f32> {
    weights: Tensor<T>,
    bias: Tensor<T>,
    cache: Option<(Tensor<T>, bool)>,
}

#[derive(Clone, Debug)]
pub struct DenseGradients<T> {
    pub dx: Tensor<T>,
    pub dweights: Tensor<T>,
    pub dbias: Tensor<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
            cache: None,
        }
    }

    pub fn from_parts(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[_, out] = weights.shape() else {
            return Err(Error::Shape(format!(
                "dense weights must be [in, out], got {:?}",
                weights.shape()
            )));
        };
        if bias.shape() != [out] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match {out} outputs",
                bias.shape()
            )));
        }
        Ok(Self {
            weights,
            bias,
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weights
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut Tensor<T> {
        &mut self.bias
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Tensor<T>, &mut Tensor<T>) {
        (&mut self.weights, &mut self.bias)
    }

    /// Accepts `[in]` or `[n, in]`.
    fn rows(&self, x: &Tensor<T>) -> Result<(usize, bool)> {
        match *x.shape() {
            [i] if i == self.inputs() => Ok((1, false)),
            [n, i] if i == self.inputs() => Ok((n, true)),
            _ => Err(Error::Shape(format!(
                "dense layer expects {} inputs, got shape {:?}",
                self.inputs(),
                x.shape()
            ))),
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, batched) = self.rows(x)?;
        let out_dim = self.outputs();
        let mut out = vec![T::zero(); n * out_dim];
        gemm(
            MatRef::row_major(x.data(), n, self.inputs()),
            MatRef::row_major(self.weights.data(), self.inputs(), out_dim),
            &mut out,
            false,
        );
        for row in out.chunks_exact_mut(out_dim) {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v = *v + b;
            }
        }
        let shape = if batched { vec![n, out_dim] } else { vec![out_dim] };
        Tensor::new(&shape, out)?.ensure_finite("dense output")
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        let batched = x.rank() == 2;
        self.cache = Some((x.clone(), batched));
        Ok(y)
    }

    /// `dx = dy W^T`, `dW = x^T dy`, `db = sum_rows(dy)`.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<DenseGradients<T>> {
        let (x, batched) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("dense backward called before forward".into()))?;
        let n = if *batched { x.shape()[0] } else { 1 };
        let (inp, out_dim) = (self.inputs(), self.outputs());
        let expected: Vec<usize> = if *batched { vec![n, out_dim] } else { vec![out_dim] };
        if dy.shape() != expected.as_slice() {
            return Err(Error::Shape(format!(
                "dense backward expected dy {expected:?}, got {:?}",
                dy.shape()
            )));
        }
        let dy_mat = MatRef::row_major(dy.data(), n, out_dim);
        let mut dx = vec![T::zero(); n * inp];
        gemm(dy_mat, MatRef::row_major(self.weights.data(), inp, out_dim).t(), &mut dx, false);
        let mut dw = vec![T::zero(); inp * out_dim];
        gemm(MatRef::row_major(x.data(), n, inp).t(), dy_mat, &mut dw, false);
        let mut db = vec![T::zero(); out_dim];
        for row in dy.data().chunks_exact(out_dim) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d = *d + g;
            }
        }
        Ok(DenseGradients {
            dx: Tensor::new(x.shape(), dx)?.ensure_finite("dense input gradient")?,
            dweights: Tensor::new(&[inp, out_dim], dw)?.ensure_finite("dense weight gradient")?,
            dbias: Tensor::new(&[out_dim], db)?,
        })
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
