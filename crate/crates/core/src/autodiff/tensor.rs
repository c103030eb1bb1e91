use std::fmt;

use nalgebra::SMatrix;

use crate::error::{Error, Result};

/// Dense row-major matrix. Vectors are `[1, n]` rows, scalars `[1, 1]`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

fn mismatch(op: &str, a: [usize; 2], b: [usize; 2]) -> Error {
    Error::ShapeMismatch(format!("{op}: {a:?} vs {b:?}"))
}

impl Tensor {
    pub fn new(shape: [usize; 2], data: Vec<f64>) -> Result<Self> {
        if shape[0] * shape[1] != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {} values, got {}",
                shape[0] * shape[1],
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 2]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 2], value: f64) -> Self {
        Self { shape, data: vec![value; shape[0] * shape[1]] }
    }

    pub fn scalar(x: f64) -> Self {
        Self { shape: [1, 1], data: vec![x] }
    }

    pub fn row(values: &[f64]) -> Self {
        Self { shape: [1, values.len()], data: values.to_vec() }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: [usize; 2], mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape[0] * shape[1]);
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                data.push(f(i, j));
            }
        }
        Self { shape, data }
    }

    pub fn from_matrix<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> Self {
        Self::from_fn([R, C], |i, j| m[(i, j)])
    }

    /// Column vectors become `[1, n]` rows.
    pub fn from_vector<const N: usize>(v: &SMatrix<f64, N, 1>) -> Self {
        Self::row(v.as_slice())
    }

    /// Reads the buffer as an `R x C` matrix in row-major order.
    pub fn to_matrix<const R: usize, const C: usize>(&self) -> SMatrix<f64, R, C> {
        assert_eq!(self.len(), R * C, "tensor of shape {:?} is not {R}x{C}", self.shape);
        SMatrix::from_row_slice(&self.data)
    }

    pub fn to_vector<const N: usize>(&self) -> SMatrix<f64, N, 1> {
        assert_eq!(self.len(), N, "tensor of shape {:?} has no {N} entries", self.shape);
        SMatrix::from_column_slice(&self.data)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.shape[1] + j] = v;
    }

    /// Value of a `[1, 1]` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape, [1, 1], "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    fn zip(&self, other: &Self, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(mismatch(op, self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { shape: self.shape, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(mismatch("add_assign", self.shape, other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| x * c)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let [n, k] = self.shape;
        let [k2, m] = other.shape;
        if k != k2 {
            return Err(mismatch("matmul", self.shape, other.shape));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b = &other.data[p * m..(p + 1) * m];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Ok(Self { shape: [n, m], data: out })
    }

    pub fn transpose(&self) -> Self {
        let [r, c] = self.shape;
        Self::from_fn([c, r], |i, j| self.data[j * c + i])
    }

    pub fn reshape(&self, shape: [usize; 2]) -> Result<Self> {
        if shape[0] * shape[1] != self.len() {
            return Err(mismatch("reshape", self.shape, shape));
        }
        Ok(Self { shape, data: self.data.clone() })
    }

    /// Sub-block of the given shape starting at `(r0, c0)`.
    pub fn slice(&self, r0: usize, c0: usize, shape: [usize; 2]) -> Result<Self> {
        if r0 + shape[0] > self.shape[0] || c0 + shape[1] > self.shape[1] {
            return Err(mismatch("slice", self.shape, [r0 + shape[0], c0 + shape[1]]));
        }
        Ok(Self::from_fn(shape, |i, j| self.get(r0 + i, c0 + j)))
    }

    /// Embeds `self` into a zero tensor of `shape` at `(r0, c0)`.
    pub fn pad(&self, r0: usize, c0: usize, shape: [usize; 2]) -> Result<Self> {
        if r0 + self.shape[0] > shape[0] || c0 + self.shape[1] > shape[1] {
            return Err(mismatch("pad", self.shape, shape));
        }
        let mut out = Self::zeros(shape);
        for i in 0..self.shape[0] {
            for j in 0..self.shape[1] {
                out.set(r0 + i, c0 + j, self.get(i, j));
            }
        }
        Ok(out)
    }

    /// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::ShapeMismatch("concat of nothing".into()))?;
        let other = 1 - axis;
        let mut shape = first.shape;
        shape[axis] = 0;
        for p in parts {
            if p.shape[other] != first.shape[other] {
                return Err(mismatch("concat", first.shape, p.shape));
            }
            shape[axis] += p.shape[axis];
        }
        let mut out = Self::zeros(shape);
        let mut offset = 0;
        for p in parts {
            let (r0, c0) = if axis == 0 { (offset, 0) } else { (0, offset) };
            for i in 0..p.shape[0] {
                for j in 0..p.shape[1] {
                    out.set(r0 + i, c0 + j, p.get(i, j));
                }
            }
            offset += p.shape[axis];
        }
        Ok(out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Broadcasts a `[1, 1]`, `[1, c]` or `[r, 1]` tensor to `shape`.
    pub fn broadcast_to(&self, shape: [usize; 2]) -> Result<Self> {
        let [r, c] = self.shape;
        if (r != 1 && r != shape[0]) || (c != 1 && c != shape[1]) {
            return Err(mismatch("broadcast", self.shape, shape));
        }
        Ok(Self::from_fn(shape, |i, j| self.get(if r == 1 { 0 } else { i }, if c == 1 { 0 } else { j })))
    }

    /// Reverse of [`Self::broadcast_to`]: sums over broadcast axes.
    pub fn sum_to(&self, shape: [usize; 2]) -> Result<Self> {
        let [r, c] = shape;
        if (r != 1 && r != self.shape[0]) || (c != 1 && c != self.shape[1]) {
            return Err(mismatch("sum_to", self.shape, shape));
        }
        let mut out = Self::zeros(shape);
        for i in 0..self.shape[0] {
            for j in 0..self.shape[1] {
                let (oi, oj) = (if r == 1 { 0 } else { i }, if c == 1 { 0 } else { j });
                out.data[oi * c + oj] += self.get(i, j);
            }
        }
        Ok(out)
    }

    /// Inverse of a square matrix by LU decomposition with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        let [n, m] = self.shape;
        if n != m {
            return Err(mismatch("inverse", self.shape, [n, n]));
        }
        let mut a = self.data.clone();
        let mut inv = Self::identity(n).data;
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs())).unwrap_or(col);
            let pv = a[pivot * n + col];
            if pv.abs() <= 1e-14 * scale || !pv.is_finite() {
                return Err(Error::SingularMass(pv));
            }
            if pivot != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot * n + j);
                    inv.swap(col * n + j, pivot * n + j);
                }
            }
            for row in 0..n {
                if row == col {
                    continue;
                }
                let f = a[row * n + col] / pv;
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[row * n + j] -= f * a[col * n + j];
                    inv[row * n + j] -= f * inv[col * n + j];
                }
            }
        }
        for row in 0..n {
            let d = a[row * n + row];
            for j in 0..n {
                inv[row * n + j] /= d;
            }
        }
        Ok(Self { shape: [n, n], data: inv })
    }
}
