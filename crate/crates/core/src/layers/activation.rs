use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `max(0, x)`; the derivative at exactly 0 is taken as 0.
#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<(Vec<usize>, Vec<bool>)>,
}

impl Relu {
    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.map(|v| if v > T::zero() { v } else { T::zero() }))
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = x.data().iter().map(|&v| v > T::zero()).collect();
        self.mask = Some((x.shape().to_vec(), mask));
        self.infer(x)
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, mask) = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::State("relu backward called before forward".into()))?;
        if dy.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "relu backward expected dy {shape:?}, got {:?}",
                dy.shape()
            )));
        }
        let data = dy
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &on)| if on { g } else { T::zero() })
            .collect();
        Tensor::new(shape, data)
    }

    pub fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// Logistic function evaluated without overflow for large `|x|`.
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Sigmoid<T: Real = f32> {
    output: Option<Tensor<T>>,
}

impl<T: Real> Sigmoid<T> {
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.map(sigmoid_scalar))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.output = Some(y.clone());
        Ok(y)
    }

    /// `dy * s * (1 - s)` using the cached output `s`.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self
            .output
            .as_ref()
            .ok_or_else(|| Error::State("sigmoid backward called before forward".into()))?;
        if dy.shape() != s.shape() {
            return Err(Error::Shape(format!(
                "sigmoid backward expected dy {:?}, got {:?}",
                s.shape(),
                dy.shape()
            )));
        }
        let data = dy
            .data()
            .iter()
            .zip(s.data())
            .map(|(&g, &p)| g * p * (T::one() - p))
            .collect();
        Tensor::new(s.shape(), data)
    }

    pub fn clear_cache(&mut self) {
        self.output = None;
    }
}

/// `(n, h, w, c) -> (n, h * w * c)` in row-major `(h, w, c)` order.
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = x.shape();
        let n = shape.first().copied().unwrap_or(1);
        if shape.len() < 2 {
            return Err(Error::Shape(format!("flatten needs a batch axis, got {shape:?}")));
        }
        x.clone().reshape(&[n, x.len() / n])
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input_shape = Some(x.shape().to_vec());
        Ok(y)
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| Error::State("flatten backward called before forward".into()))?;
        dy.clone().reshape(shape)
    }

    pub fn clear_cache(&mut self) {
        self.input_shape = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values_and_mask() {
        let mut r = Relu::default();
        let x = Tensor::new(&[3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(r.forward(&x).unwrap().data(), &[0.0, 0.0, 2.0]);
        let dx = r.backward(&Tensor::filled(&[3], 5.0)).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn relu_identity_on_positive() {
        let mut r = Relu::default();
        let x = Tensor::from_fn(&[2, 3], |i| 0.5 + i as f64);
        assert_eq!(r.forward(&x).unwrap(), x);
        let dy = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.0);
        assert_eq!(r.backward(&dy).unwrap(), dy);
    }

    #[test]
    fn sigmoid_midpoint_symmetry_and_tails() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        for x in [0.1f64, 1.0, 3.7, 12.0, 40.0] {
            assert!((sigmoid_scalar(-x) - (1.0 - sigmoid_scalar(x))).abs() < 1e-15);
        }
        for x in [-500.0f64, 500.0] {
            let s = sigmoid_scalar(x);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        }
        let s32 = sigmoid_scalar(-500.0f32);
        assert!(s32.is_finite());
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let eps = 1e-5;
        let fd = (sigmoid_scalar(eps) - sigmoid_scalar(-eps)) / (2.0 * eps);
        assert!((fd - 0.25f64).abs() < 1e-6);
        let mut s = Sigmoid::<f64>::default();
        s.forward(&Tensor::zeros(&[1])).unwrap();
        assert_eq!(s.backward(&Tensor::filled(&[1], 1.0)).unwrap().data(), &[0.25]);
    }

    #[test]
    fn flatten_round_trip() {
        let mut f = Flatten::default();
        let x = Tensor::<f32>::from_fn(&[2, 2, 2, 3], |i| i as f32);
        let y = f.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 12]);
        assert_eq!(f.backward(&y).unwrap(), x);
    }
}
