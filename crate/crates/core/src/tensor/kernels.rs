/// How a stored row-major matrix is read: as stored, or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatView {
    /// Stored rows and columns.
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl MatView {
    pub fn new(rows: usize, cols: usize, transposed: bool) -> Self {
        Self {
            rows,
            cols,
            transposed,
        }
    }

    /// Logical (rows, cols) after the optional transpose.
    pub fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` for one matrix pair.
pub fn gemm(a: &[f64], av: MatView, b: &[f64], bv: MatView, c: &mut [f64], beta: f64) {
    let (m, k) = av.logical();
    let (k2, n) = bv.logical();
    assert_eq!(k, k2, "gemm inner dimensions");
    assert_eq!(a.len(), av.rows * av.cols);
    assert_eq!(b.len(), bv.rows * bv.cols);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = av.strides();
    let (rsb, csb) = bv.strides();
    // SAFETY: the asserts above bound every index the kernel touches.
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
