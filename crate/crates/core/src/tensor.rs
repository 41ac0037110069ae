//! Dense row-major tensor of `f64` with the elementwise and reduction
//! primitives the layers build on.
//!
//! Layout is always contiguous row-major; every op copies rather than
//! aliasing. Views and broadcasting are deliberately absent.

use crate::error::{Error, Result};

/// N-dimensional array of `f64`, contiguous row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("rank must be at least 1".into()));
    }
    let mut n = 1usize;
    for &e in shape {
        if e == 0 {
            return Err(Error::InvalidShape(format!("zero extent in {shape:?}")));
        }
        n = n.checked_mul(e).ok_or_else(|| {
            Error::InvalidShape(format!("extent product overflows for {shape:?}"))
        })?;
    }
    Ok(n)
}

impl Tensor {
    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![0.0; n] })
    }

    /// Tensor filled with a constant.
    pub fn filled(shape: &[usize], value: f64) -> Result<Tensor> {
        let n = check_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![value; n] })
    }

    /// Wrap an existing buffer; `data.len()` must equal the shape product.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: vec![0.0; self.data.len()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable element access; used by the optimizer for in-place updates.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row-major buffer offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.rank() {
            return Err(Error::ShapeMismatch(format!(
                "index rank {} vs tensor rank {}",
                index.len(),
                self.rank()
            )));
        }
        let mut off = 0usize;
        for (&i, &e) in index.iter().zip(&self.shape) {
            if i >= e {
                return Err(Error::ShapeMismatch(format!(
                    "index {index:?} out of bounds for shape {:?}",
                    self.shape
                )));
            }
            off = off * e + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    /// Same buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elems) to {shape:?} ({n} elems)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    /// Elementwise `max(x, s)`; with `s = 0` this is ReLU.
    pub fn max_scalar(&self, s: f64) -> Tensor {
        let data = self.data.iter().map(|&v| v.max(s)).collect();
        Tensor { shape: self.shape.clone(), data }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let data = self.data.iter().map(|&v| v * s).collect();
        Tensor { shape: self.shape.clone(), data }
    }

    /// `self += other`, in place.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Rank-2 matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "inner dimensions {k} vs {k2}"
            )));
        }
        let mut out = vec![0.0; m * n];
        // i-k-j order keeps both the `other` row and the output row contiguous.
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for t in 0..k {
                let a = self.data[i * k + t];
                let b_row = &other.data[t * n..(t + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor { shape: vec![m, n], data: out })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Flat index of the maximum; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    fn reduce_axis(&self, axis: usize, init: f64, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis { axis, rank: self.rank() });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![init; outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &v) in dst.iter_mut().zip(&self.data[base..base + inner]) {
                    *d = f(*d, v);
                }
            }
        }
        let mut shape: Vec<usize> = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::from_vec(&shape, out)
    }

    /// Sum along one axis; the axis is removed (a rank-1 result is kept rank-1).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, 0.0, |a, b| a + b)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let extent = *self
            .shape
            .get(axis)
            .ok_or(Error::InvalidAxis { axis, rank: self.rank() })?;
        Ok(self.sum_axis(axis)?.scale(1.0 / extent as f64))
    }

    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, f64::NEG_INFINITY, f64::max)
    }

    /// Per-slice argmax along `axis`, ties toward the lowest index.
    pub fn argmax_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis { axis, rank: self.rank() });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0usize;
                let mut best_v = self.data[(o * extent) * inner + i];
                for e in 1..extent {
                    let v = self.data[(o * extent + e) * inner + i];
                    if v > best_v {
                        best_v = v;
                        best = e;
                    }
                }
                out[o * inner + i] = best as f64;
            }
        }
        let mut shape: Vec<usize> = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::from_vec(&shape, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_has_given_shape_and_zero_sum() {
        let t = Tensor::zeros(&[2, 2]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert!(t.data().iter().all(|&v| v == 0.0));
        assert_eq!(Tensor::zeros(&[3, 4, 5]).unwrap().sum(), 0.0);
        assert_eq!(Tensor::zeros(&[1]).unwrap().data(), &[0.0]);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(matches!(Tensor::zeros(&[2, 0]), Err(Error::InvalidShape(_))));
        assert!(matches!(Tensor::zeros(&[]), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn relu_via_max_scalar() {
        let t = Tensor::from_vec(&[2, 2], vec![-1.0, 2.0, 0.0, -3.0]).unwrap();
        assert_eq!(t.max_scalar(0.0).data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn add_identity_and_mul() {
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x.add(&x.zeros_like()).unwrap(), x);
        let y = Tensor::from_vec(&[3], vec![4.0, 5.0, 6.0]).unwrap();
        assert_eq!(x.mul(&y).unwrap().data(), &[4.0, 10.0, 18.0]);
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let x = Tensor::zeros(&[2]).unwrap();
        let y = Tensor::zeros(&[3]).unwrap();
        assert!(matches!(x.add(&y), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let m = Tensor::from_vec(&[3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            eye.set(&[i, i], 1.0).unwrap();
        }
        assert_eq!(eye.matmul(&m).unwrap(), m);

        let a = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[4, 2]).unwrap();
        assert!(matches!(a.matmul(&b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        // Fixed-seed random 5x7 . 7x3 against the naive definition.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a = Tensor::from_vec(&[5, 7], (0..35).map(|_| next()).collect()).unwrap();
        let b = Tensor::from_vec(&[7, 3], (0..21).map(|_| next()).collect()).unwrap();
        let got = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut want = 0.0;
                for t in 0..7 {
                    want += a.get(&[i, t]).unwrap() * b.get(&[t, j]).unwrap();
                }
                assert!((got.get(&[i, j]).unwrap() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reductions() {
        let t = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.sum(), 6.0);
        let ties = Tensor::from_vec(&[3], vec![0.2, 0.5, 0.5]).unwrap();
        assert_eq!(ties.argmax(), 1);
        let ones = Tensor::filled(&[7, 7], 1.0).unwrap();
        assert_eq!(ones.mean(), 1.0);
    }

    #[test]
    fn axis_reductions() {
        let t = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.sum_axis(0).unwrap().data(), &[5.0, 7.0, 9.0]);
        assert_eq!(t.sum_axis(1).unwrap().data(), &[6.0, 15.0]);
        assert_eq!(t.mean_axis(1).unwrap().data(), &[2.0, 5.0]);
        assert_eq!(t.max_axis(0).unwrap().data(), &[4.0, 5.0, 6.0]);
        assert_eq!(t.argmax_axis(1).unwrap().data(), &[2.0, 2.0]);
        assert!(matches!(
            t.sum_axis(2),
            Err(Error::InvalidAxis { axis: 2, rank: 2 })
        ));
    }

    #[test]
    fn get_set_round_trip() {
        let mut t = Tensor::zeros(&[2, 3, 4]).unwrap();
        t.set(&[1, 2, 3], 42.0).unwrap();
        assert_eq!(t.get(&[1, 2, 3]).unwrap(), 42.0);
        assert_eq!(t.get(&[0, 0, 0]).unwrap(), 0.0);
        assert!(t.get(&[2, 0, 0]).is_err());
    }

    proptest! {
        #[test]
        fn write_then_read_returns_written(
            shape in proptest::collection::vec(1usize..5, 1..4),
            value in -1e6f64..1e6,
        ) {
            let mut t = Tensor::zeros(&shape).unwrap();
            let idx: Vec<usize> = shape.iter().map(|&e| e - 1).collect();
            t.set(&idx, value).unwrap();
            prop_assert_eq!(t.get(&idx).unwrap(), value);
        }

        #[test]
        fn elementwise_commutes_with_reshape(
            data in proptest::collection::vec(-100.0f64..100.0, 12),
        ) {
            let a = Tensor::from_vec(&[3, 4], data.clone()).unwrap();
            let b = Tensor::from_vec(&[3, 4], data.iter().map(|v| v + 1.0).collect()).unwrap();
            let direct = a.add(&b).unwrap().reshape(&[2, 6]).unwrap();
            let reshaped =
                a.reshape(&[2, 6]).unwrap().add(&b.reshape(&[2, 6]).unwrap()).unwrap();
            prop_assert_eq!(direct, reshaped);
        }

        #[test]
        fn matmul_oracle_random(
            m in 1usize..9, k in 1usize..9, n in 1usize..9, seed in 0u64..1000,
        ) {
            let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            };
            let a = Tensor::from_vec(&[m, k], (0..m * k).map(|_| next()).collect()).unwrap();
            let b = Tensor::from_vec(&[k, n], (0..k * n).map(|_| next()).collect()).unwrap();
            let got = a.matmul(&b).unwrap();
            for i in 0..m {
                for j in 0..n {
                    let mut want = 0.0;
                    for t in 0..k {
                        want += a.get(&[i, t]).unwrap() * b.get(&[t, j]).unwrap();
                    }
                    prop_assert!((got.get(&[i, j]).unwrap() - want).abs() < 1e-12);
                }
            }
        }
    }
}
