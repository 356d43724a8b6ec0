//! Dense row-major matrix storage.
//!
//! All weight matrices, masks and quantized tensors in this crate share one
//! layout: a flat `Vec` in row-major order with explicit `rows x cols` shape.
//! Entry `(r, c)` lives at index `r * cols + c`.

/// A dense row-major matrix over `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Mat<T> {
    /// Matrix with every entry set to `fill`.
    pub fn from_elem(rows: usize, cols: usize, fill: T) -> Self {
        Mat {
            rows,
            cols,
            data: vec![fill; rows * cols],
        }
    }

    /// Wraps an existing row-major buffer. Panics if the length is not `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length must be rows*cols");
        Mat { rows, cols, data }
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    /// Row `r` as a contiguous slice.
    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The whole buffer, row-major.
    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Element-wise map into a matrix of the same shape.
    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies the `src` matrix into the rectangle whose top-left corner is
    /// `(row0, col0)`. Panics if the rectangle does not fit.
    pub fn write_block(&mut self, row0: usize, col0: usize, src: &Mat<T>) {
        assert!(row0 + src.rows <= self.rows && col0 + src.cols <= self.cols);
        for r in 0..src.rows {
            let dst = &mut self.row_mut(row0 + r)[col0..col0 + src.cols];
            dst.copy_from_slice(src.row(r));
        }
    }

    /// Extracts the `rows x cols` rectangle at `(row0, col0)` into a new matrix.
    pub fn read_block(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Mat<T> {
        assert!(row0 + rows <= self.rows && col0 + cols <= self.cols);
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend_from_slice(&self.row(row0 + r)[col0..col0 + cols]);
        }
        Mat { rows, cols, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_io_round_trip() {
        let mut m = Mat::from_elem(4, 5, 0i32);
        let b = Mat::from_vec(2, 3, vec![1, 2, 3, 4, 5, 6]);
        m.write_block(1, 2, &b);
        assert_eq!(m.read_block(1, 2, 2, 3), b);
        assert_eq!(m.get(0, 0), 0);
        assert_eq!(m.get(1, 2), 1);
        assert_eq!(m.get(2, 4), 6);
    }

    #[test]
    #[should_panic]
    fn write_block_out_of_bounds() {
        let mut m = Mat::from_elem(2, 2, 0.0f32);
        let b = Mat::from_elem(2, 3, 1.0f32);
        m.write_block(0, 0, &b);
    }
}
