use serde::{Deserialize, Serialize};

use super::GradError;

/// Dense row-major tensor of 64-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, GradError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(GradError::ShapeMismatch {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, GradError> {
        Self::new(vec![rows, cols], data)
    }

    /// Uniform samples in `[-bound, bound]`.
    pub fn uniform<R: rand::Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.gen_range(-bound..=bound)).collect(),
        }
    }

    /// Identity matrix of size `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the trailing axis.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as a `[rows, last_dim]` matrix.
    pub fn outer_len(&self) -> usize {
        let last = self.last_dim();
        if last == 0 {
            0
        } else {
            self.data.len() / last
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.last_dim();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.last_dim();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, GradError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(GradError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// `c[m,n] (+)= a[m,k] * b[k,n]` with arbitrary strides, backed by a packed gemm kernel.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    if k == 0 {
        if beta == 0.0 {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    if m * k * n <= 4096 {
        // Packing overhead dominates for tiny blocks.
        let (ar, ac) = (a_strides.0 as usize, a_strides.1 as usize);
        let (br, bc) = (b_strides.0 as usize, b_strides.1 as usize);
        if ac == 1 && br == 1 && (n == 1 || bc != 1) {
            // Contiguous dot products.
            for i in 0..m {
                let arow = &a[i * ar..i * ar + k];
                for j in 0..n {
                    let bcol = &b[j * bc..j * bc + k];
                    let acc: f64 = arow.iter().zip(bcol).map(|(x, y)| x * y).sum();
                    let dst = &mut c[i * n + j];
                    *dst = if beta == 0.0 { acc } else { beta * *dst + acc };
                }
            }
        } else if bc == 1 {
            // Rows of b are contiguous: accumulate scaled rows into c.
            for i in 0..m {
                let row = &mut c[i * n..(i + 1) * n];
                if beta == 0.0 {
                    row.fill(0.0);
                } else if beta != 1.0 {
                    row.iter_mut().for_each(|v| *v *= beta);
                }
                for p in 0..k {
                    let aip = a[i * ar + p * ac];
                    let brow = &b[p * br..p * br + n];
                    row.iter_mut().zip(brow).for_each(|(v, x)| *v += aip * x);
                }
            }
        } else {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a[i * ar + p * ac] * b[p * br + j * bc];
                    }
                    let dst = &mut c[i * n + j];
                    *dst = if beta == 0.0 { acc } else { beta * *dst + acc };
                }
            }
        }
        return;
    }
    // SAFETY: slice lengths cover every index reachable through the given
    // strides for the callers in this crate (checked by debug assertions at
    // the call sites); c is contiguous row-major m x n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Right-aligned broadcast of `shape` against `out`; returns the source index for
/// every flat output index, or `None` when the shapes are incompatible.
pub(crate) fn broadcast_index(shape: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if shape.len() > out.len() {
        return None;
    }
    let offset = out.len() - shape.len();
    let mut strides = vec![0usize; out.len()];
    let mut acc = 1usize;
    for (i, &d) in shape.iter().enumerate().rev() {
        let od = out[offset + i];
        if d == od {
            strides[offset + i] = acc;
        } else if d == 1 {
            strides[offset + i] = 0;
        } else {
            return None;
        }
        acc *= d;
    }
    let total: usize = out.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; out.len()];
    let mut src = 0usize;
    for _ in 0..total {
        idx.push(src);
        for ax in (0..out.len()).rev() {
            counter[ax] += 1;
            src += strides[ax];
            if counter[ax] < out[ax] {
                break;
            }
            src -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    Some(idx)
}

/// Broadcast result shape of two shapes, numpy style.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_row_vector() {
        let idx = broadcast_index(&[3], &[2, 3]).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 0, 1, 2]);
        let idx = broadcast_index(&[2, 1], &[2, 3]).unwrap();
        assert_eq!(idx, vec![0, 0, 0, 1, 1, 1]);
        assert!(broadcast_index(&[2], &[2, 3]).is_none());
    }

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[4, 1, 3], &[5, 1]), Some(vec![4, 5, 3]));
        assert_eq!(broadcast_shape(&[2], &[3]), None);
    }

    #[test]
    fn gemm_small() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 1.0, 1.0];
        let mut c = [0.0; 2];
        gemm(2, 3, 1, &a, (3, 1), &b, (1, 1), 0.0, &mut c);
        assert_eq!(c, [6.0, 15.0]);
        // transpose of a via strides: [3,2] x [2,1]
        let b2 = [1.0, 0.0];
        let mut c2 = [0.0; 3];
        gemm(3, 2, 1, &a, (1, 3), &b2, (1, 1), 0.0, &mut c2);
        assert_eq!(c2, [1.0, 2.0, 3.0]);
    }
}
