use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Layout {
    AsIs,
    Transposed,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same buffer viewed with a different shape.
    pub fn reshape(self, rows: usize, cols: usize) -> Self {
        Self::from_vec(rows, cols, self.data)
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Tensor2) -> Tensor2 {
        gemm(self, Layout::AsIs, other, Layout::AsIs)
    }

    /// `self^T * other`.
    pub fn matmul_tn(&self, other: &Tensor2) -> Tensor2 {
        gemm(self, Layout::Transposed, other, Layout::AsIs)
    }

    /// `self * other^T`.
    pub fn matmul_nt(&self, other: &Tensor2) -> Tensor2 {
        gemm(self, Layout::AsIs, other, Layout::Transposed)
    }

    pub fn add_row_vector(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.cols);
        for r in self.data.chunks_exact_mut(self.cols) {
            for (x, b) in r.iter_mut().zip(v) {
                *x += b;
            }
        }
    }

    /// Accumulates column sums into `out`.
    pub fn add_column_sums_to(&self, out: &mut [f64]) {
        assert_eq!(out.len(), self.cols);
        for r in self.data.chunks_exact(self.cols) {
            for (o, x) in out.iter_mut().zip(r) {
                *o += x;
            }
        }
    }
}

fn gemm(a: &Tensor2, la: Layout, b: &Tensor2, lb: Layout) -> Tensor2 {
    let (m, k, rsa, csa) = match la {
        Layout::AsIs => (a.rows, a.cols, a.cols as isize, 1),
        Layout::Transposed => (a.cols, a.rows, 1, a.cols as isize),
    };
    let (kb, n, rsb, csb) = match lb {
        Layout::AsIs => (b.rows, b.cols, b.cols as isize, 1),
        Layout::Transposed => (b.cols, b.rows, 1, b.cols as isize),
    };
    assert_eq!(k, kb, "inner dimensions differ");
    let mut c = Tensor2::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: strides describe the in-bounds layouts of `a`, `b` and `c`
    // computed above; `c` is freshly allocated with m * n elements.
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
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}
