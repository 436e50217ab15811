use crate::error::{DiffError, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. Most kernels expect the 4-D `(B, C, H, W)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(DiffError::ElementCount {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Interprets the shape as `(B, C, H, W)`.
    pub fn dims4(&self) -> Option<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[b, c, h, w] => Some((b, c, h, w)),
            _ => None,
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(DiffError::ElementCount {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lossy conversion between element types.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.as_f64()).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Slab `b` of a 4-D tensor as a `(1, C, H, W)` tensor.
    pub fn batch_item(&self, b: usize) -> Option<Self> {
        let (nb, c, h, w) = self.dims4()?;
        if b >= nb {
            return None;
        }
        let stride = c * h * w;
        Some(Self {
            shape: vec![1, c, h, w],
            data: self.data[b * stride..(b + 1) * stride].to_vec(),
        })
    }

    /// Stacks `(1, C, H, W)` (or `(C, H, W)`) items along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or(DiffError::Empty("stack"))?;
        let inner: Vec<usize> = match first.shape.as_slice() {
            [1, rest @ ..] if rest.len() == 3 => rest.to_vec(),
            rest if rest.len() == 3 => rest.to_vec(),
            other => {
                return Err(DiffError::Shape {
                    op: "stack",
                    operand: "item",
                    expected: "(1, C, H, W) or (C, H, W)".into(),
                    found: other.to_vec(),
                })
            }
        };
        let per: usize = inner.iter().product();
        let mut data = Vec::with_capacity(per * items.len());
        for it in items {
            if it.numel() != per {
                return Err(DiffError::Shape {
                    op: "stack",
                    operand: "item",
                    expected: format!("{inner:?}"),
                    found: it.shape.clone(),
                });
            }
            data.extend_from_slice(&it.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Ok(Self { shape, data })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
                .fold(0.0, f64::max),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_count_must_match_shape() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn stack_and_batch_item_are_inverse() {
        let a = Tensor::<f64>::from_vec(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[1, 2, 1, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 1, 2]);
        assert_eq!(s.batch_item(0).unwrap(), a);
        assert_eq!(s.batch_item(1).unwrap(), b);
    }
}
