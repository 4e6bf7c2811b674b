use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`. Vectors and scalars are `n×1`, `1×n`
/// or `1×1` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() != 2 {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("expected a 2-d shape, got {shape:?}"),
            });
        }
        if shape[0] * shape[1] != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} does not hold {} values", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape {
                op: "from_rows",
                detail: "ragged rows".into(),
            });
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::filled(1, 1, value)
    }

    pub fn column(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len(), 1],
            data: values,
        }
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
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

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// The single value of a `1×1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `C = op(A)·op(B)` (`β = 0`) with optional transposes, via packed GEMM.
    pub fn matmul_t(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Result<Tensor> {
        let (m, k) = if trans_a {
            (a.cols(), a.rows())
        } else {
            (a.rows(), a.cols())
        };
        let (k2, n) = if trans_b {
            (b.cols(), b.rows())
        } else {
            (b.rows(), b.cols())
        };
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!(
                    "{:?} x {:?} (transposed: {trans_a}, {trans_b})",
                    a.shape, b.shape
                ),
            });
        }
        let mut out = Tensor::zeros(m, n);
        gemm_into(a, trans_a, b, trans_b, &mut out, 0.0);
        Ok(out)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::matmul_t(self, false, other, false)
    }
}

/// `C ← op(A)·op(B) + β C`. Shapes must already be compatible.
pub(crate) fn gemm_into(
    a: &Tensor,
    trans_a: bool,
    b: &Tensor,
    trans_b: bool,
    c: &mut Tensor,
    beta: f64,
) {
    let (m, k) = if trans_a {
        (a.cols(), a.rows())
    } else {
        (a.rows(), a.cols())
    };
    let n = if trans_b { b.rows() } else { b.cols() };
    debug_assert_eq!(c.shape, vec![m, n]);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.data.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    // Row-major strides; a transpose just swaps them.
    let (rsa, csa) = if trans_a {
        (1, a.cols() as isize)
    } else {
        (a.cols() as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b.cols() as isize)
    } else {
        (b.cols() as isize, 1)
    };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
