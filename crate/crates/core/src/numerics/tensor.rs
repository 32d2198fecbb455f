use crate::error::{Error, Result};

/// Dense row-major array of `f64` values.
///
/// Vectors (`[k]`) behave as `1 × k` row matrices and scalars (`[]`) as
/// `1 × 1` matrices wherever a two-dimensional view is needed.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::dim("tensor values", numel, values.len()));
        }
        Ok(Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            values: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    /// Stacks equally sized rows into a matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::dim(format!("row {i}"), cols, r.len()));
            }
            values.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// `(rows, cols)` of the two-dimensional view.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.values.len() / cols.max(1), cols)
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[i * c..(i + 1) * c]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        if !flag {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::dim("gradient buffer", self.values.len(), grad.len()));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Selects rows by index into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut values = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![idx.len(), c],
            values,
            requires_grad: false,
            grad: None,
        }
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        let (r, c1) = self.dims2();
        let (r2, c2) = other.dims2();
        if r != r2 {
            return Err(Error::dim("concat_cols rows", r, r2));
        }
        let mut values = Vec::with_capacity(r * (c1 + c2));
        for i in 0..r {
            values.extend_from_slice(self.row(i));
            values.extend_from_slice(other.row(i));
        }
        Tensor::matrix(r, c1 + c2, values)
    }

    /// Vertical concatenation of two matrices with equal column counts.
    pub fn concat_rows(&self, other: &Tensor) -> Result<Tensor> {
        let (r1, c) = self.dims2();
        let (r2, c2) = other.dims2();
        if c != c2 {
            return Err(Error::dim("concat_rows cols", c, c2));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Tensor::matrix(r1 + r2, c, values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `c = beta * c + op(a) · op(b)` on row-major buffers, where `op` is an
/// optional transpose. `a` is stored as `a_rows × a_cols` before transposing.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f64],
    a_rows: usize,
    a_cols: usize,
    trans_a: bool,
    b: &[f64],
    b_rows: usize,
    b_cols: usize,
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    let (m, k) = if trans_a { (a_cols, a_rows) } else { (a_rows, a_cols) };
    let (k2, n) = if trans_b { (b_cols, b_rows) } else { (b_rows, b_cols) };
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(a.len(), a_rows * a_cols);
    assert_eq!(b.len(), b_rows * b_cols);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, a_cols as isize) } else { (a_cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b_cols as isize) } else { (b_cols as isize, 1) };
    // SAFETY: buffer lengths were checked against the logical shapes above and
    // the strides address only elements inside those buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
