//! Dense rank-4 `(batch, channel, row, col)` storage.

use std::fmt;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one batch item.
    pub const fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn with_n(self, n: usize) -> Self {
        Shape4 { n, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, v) in [("n", self.n), ("c", self.c), ("h", self.h), ("w", self.w)] {
            if v == 0 {
                return Err(Error::dim(axis, 1, 0));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor4<F = f32> {
    shape: Shape4,
    data: Vec<F>,
}

impl<F: fmt::Debug> fmt::Debug for Tensor4<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor4({}, {:?}", self.shape, head)?;
        if self.data.len() > 8 {
            write!(f, "..")?;
        }
        write!(f, ")")
    }
}

impl<F: Real> Tensor4<F> {
    /// Panics if any dimension is zero.
    pub fn zeros(shape: Shape4) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: Shape4, value: F) -> Self {
        assert!(
            shape.validate().is_ok(),
            "tensor dimensions must be >= 1, got {shape}"
        );
        Tensor4 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<F>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::dim("data length", shape.len(), data.len()));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> F) -> Self {
        let mut t = Self::zeros(shape);
        let mut i = 0;
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        t.data[i] = f(n, c, y, x);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> F {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: F) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    pub fn item(&self, n: usize) -> &[F] {
        let l = self.shape.item_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [F] {
        let l = self.shape.item_len();
        &mut self.data[n * l..(n + 1) * l]
    }

    /// Copies `count` batch items starting at `start`.
    pub fn batch_range(&self, start: usize, count: usize) -> Tensor4<F> {
        let l = self.shape.item_len();
        Tensor4 {
            shape: self.shape.with_n(count),
            data: self.data[start * l..(start + count) * l].to_vec(),
        }
    }

    /// Stacks tensors along the batch axis; all parts must agree on (c, h, w).
    pub fn concat_batch(parts: &[Tensor4<F>]) -> Result<Tensor4<F>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Validation("cannot concatenate zero tensors".into()))?;
        let base = first.shape;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut n = 0;
        for p in parts {
            let s = p.shape;
            if (s.c, s.h, s.w) != (base.c, base.h, base.w) {
                return Err(Error::dim("item shape", base.item_len(), s.item_len()));
            }
            data.extend_from_slice(&p.data);
            n += s.n;
        }
        Ok(Tensor4 {
            shape: base.with_n(n),
            data,
        })
    }

    /// Reinterprets the batch axis, keeping (c, h, w).
    pub fn reshape_batch(self, n: usize) -> Result<Tensor4<F>> {
        let shape = self.shape.with_n(n);
        Tensor4::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor4<F> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor4<F>, f: impl Fn(F, F) -> F) -> Result<Tensor4<F>> {
        self.expect_shape(other.shape, "operand")?;
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor4<F>) -> Result<()> {
        self.expect_shape(other.shape, "operand")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: F) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Tensor4<F>) -> Result<F> {
        self.expect_shape(other.shape, "operand")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor4<F>) -> F {
        self.data
            .iter()
            .zip(&other.data)
            .fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn cast<G: Real>(&self) -> Tensor4<G> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| G::of(v.as_f64())).collect(),
        }
    }

    pub(crate) fn expect_shape(&self, shape: Shape4, what: &str) -> Result<()> {
        let s = self.shape;
        for (axis, a, b) in [
            ("n", s.n, shape.n),
            ("c", s.c, shape.c),
            ("h", s.h, shape.h),
            ("w", s.w, shape.w),
        ] {
            if a != b {
                return Err(Error::dim(format!("{what} axis {axis}"), a, b));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length_and_dims() {
        let s = Shape4::new(1, 2, 2, 2);
        assert!(Tensor4::<f32>::from_vec(s, vec![0.0; 8]).is_ok());
        assert!(matches!(
            Tensor4::<f32>::from_vec(s, vec![0.0; 7]),
            Err(Error::Dimension { .. })
        ));
        assert!(Tensor4::<f32>::from_vec(Shape4::new(0, 1, 1, 1), vec![]).is_err());
    }

    #[test]
    fn concat_and_range_are_inverse() {
        let a = Tensor4::<f32>::from_fn(Shape4::new(2, 1, 2, 2), |n, _, y, x| {
            (n * 4 + y * 2 + x) as f32
        });
        let b = a.map(|v| v + 100.0);
        let cat = Tensor4::concat_batch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(cat.shape().n, 4);
        assert_eq!(cat.batch_range(0, 2), a);
        assert_eq!(cat.batch_range(2, 2), b);
    }

    #[test]
    fn index_is_row_major() {
        let t = Tensor4::<f32>::from_fn(Shape4::new(2, 3, 4, 5), |n, c, y, x| {
            (((n * 3 + c) * 4 + y) * 5 + x) as f32
        });
        for (i, v) in t.data().iter().enumerate() {
            assert_eq!(*v, i as f32);
        }
        assert_eq!(t.at(1, 2, 3, 4), 119.0);
    }
}
