use crate::error::{Error, Result};
use crate::real::Real;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("DenseMatrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                "DenseMatrix::add_assign",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::lit(x.f64())).collect(),
        }
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }
}

/// Operand orientation for [`gemm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// `C = alpha * op(A) * op(B) + beta * C` where `op` optionally transposes.
///
/// `a` and `b` are row-major buffers of logical shape `a_shape`/`b_shape`
/// before `op` is applied.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    alpha: T,
    a: &[T],
    a_shape: (usize, usize),
    ta: Trans,
    b: &[T],
    b_shape: (usize, usize),
    tb: Trans,
    beta: T,
    c: &mut [T],
    c_shape: (usize, usize),
) -> Result<()> {
    let (m, k, rsa, csa) = match ta {
        Trans::No => (a_shape.0, a_shape.1, a_shape.1 as isize, 1),
        Trans::Yes => (a_shape.1, a_shape.0, 1, a_shape.1 as isize),
    };
    let (kb, n, rsb, csb) = match tb {
        Trans::No => (b_shape.0, b_shape.1, b_shape.1 as isize, 1),
        Trans::Yes => (b_shape.1, b_shape.0, 1, b_shape.1 as isize),
    };
    if k != kb || c_shape != (m, n) {
        return Err(Error::dim(
            "gemm",
            format!("({m}x{k})·({k}x{n}) -> ({m}x{n})"),
            format!("({m}x{k})·({kb}x{n}) -> {c_shape:?}"),
        ));
    }
    if a.len() < a_shape.0 * a_shape.1 || b.len() < b_shape.0 * b_shape.1 || c.len() < m * n {
        return Err(Error::dim("gemm buffers", "buffers covering shapes", "short buffer"));
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        for x in c[..m * n].iter_mut() {
            *x = if beta == T::zero() { T::zero() } else { *x * beta };
        }
        return Ok(());
    }
    // SAFETY: shapes and buffer lengths were validated above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
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
    Ok(())
}
