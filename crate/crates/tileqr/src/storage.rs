//! Block Data Layout storage: the matrix is split into square `b x b` tiles,
//! each tile occupying contiguous memory in column-major order, with the
//! tiles themselves ordered column-major in the grid.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// A `p x q` grid of contiguous `b x b` tiles holding an `m x n` matrix.
///
/// Sizes that are not multiples of `b` are zero-padded up to the next tile
/// boundary; the padding is cropped again by [`TiledMatrix::to_col_major`].
/// With the zero-column Householder convention (`tau = 0`) the factorization
/// of the padded matrix embeds the factorization of the original, so all
/// kernels stay square-tile-only.
#[derive(Debug, Clone, PartialEq)]
pub struct TiledMatrix {
    m: usize,
    n: usize,
    b: usize,
    p: usize,
    q: usize,
    pad_rows: usize,
    pad_cols: usize,
    data: Vec<f64>,
}

impl TiledMatrix {
    /// Converts a column-major matrix into block data layout with tile edge `b`.
    pub fn from_col_major(a: &DenseMatrix, b: usize) -> Result<Self> {
        if b == 0 {
            return Err(Error::invalid("tile edge must be at least 1"));
        }
        let (m, n) = (a.rows(), a.cols());
        let p = m.div_ceil(b);
        let q = n.div_ceil(b);
        let mut t = Self {
            m,
            n,
            b,
            p,
            q,
            pad_rows: p * b - m,
            pad_cols: q * b - n,
            data: vec![0.0; p * q * b * b],
        };
        for c in 0..n {
            let (tj, lc) = (c / b, c % b);
            let src = a.col(c);
            for ti in 0..p {
                let rows = (m - ti * b).min(b);
                let off = t.tile_offset(ti, tj) + lc * b;
                t.data[off..off + rows].copy_from_slice(&src[ti * b..ti * b + rows]);
            }
        }
        Ok(t)
    }

    /// Returns the logical `m x n` content, cropping any padding.
    pub fn to_col_major(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.m, self.n);
        for c in 0..self.n {
            let (tj, lc) = (c / self.b, c % self.b);
            for ti in 0..self.p {
                let rows = (self.m - ti * self.b).min(self.b);
                let off = self.tile_offset(ti, tj) + lc * self.b;
                out.col_mut(c)[ti * self.b..ti * self.b + rows]
                    .copy_from_slice(&self.data[off..off + rows]);
            }
        }
        out
    }

    fn tile_offset(&self, i: usize, j: usize) -> usize {
        (j * self.p + i) * self.b * self.b
    }

    /// Borrows tile `(i, j)` as its contiguous `b*b` column-major buffer.
    pub fn tile(&self, i: usize, j: usize) -> &[f64] {
        assert!(i < self.p && j < self.q, "tile ({i},{j}) out of range");
        let off = self.tile_offset(i, j);
        &self.data[off..off + self.b * self.b]
    }

    /// Mutably borrows tile `(i, j)`.
    pub fn tile_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        assert!(i < self.p && j < self.q, "tile ({i},{j}) out of range");
        let off = self.tile_offset(i, j);
        &mut self.data[off..off + self.b * self.b]
    }

    /// Logical entry (r, c); padded positions read as whatever the tiles hold.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        assert!(r < self.m && c < self.n, "index ({r},{c}) out of range");
        let off = self.tile_offset(r / self.b, c / self.b);
        self.data[off + (c % self.b) * self.b + (r % self.b)]
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn block_size(&self) -> usize {
        self.b
    }

    pub fn tile_rows(&self) -> usize {
        self.p
    }

    pub fn tile_cols(&self) -> usize {
        self.q
    }

    pub fn pad_rows(&self) -> usize {
        self.pad_rows
    }

    pub fn pad_cols(&self) -> usize {
        self.pad_cols
    }

    pub(crate) fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut_ptr(&mut self) -> *mut f64 {
        self.data.as_mut_ptr()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_arithmetic_4x4_b2() {
        let a = DenseMatrix::from_fn(4, 4, |r, c| (r * 10 + c) as f64);
        let t = TiledMatrix::from_col_major(&a, 2).unwrap();
        assert_eq!(t.tile_rows(), 2);
        assert_eq!(t.tile_cols(), 2);
        // entry (2,3) lands in tile (1,1) local (0,1)
        assert_eq!(t.tile(1, 1)[2], a.get(2, 3));
    }

    #[test]
    fn padding_5x3_b2() {
        let a = DenseMatrix::from_fn(5, 3, |r, c| (r + c) as f64 + 1.0);
        let t = TiledMatrix::from_col_major(&a, 2).unwrap();
        assert_eq!((t.tile_rows(), t.tile_cols()), (3, 2));
        assert_eq!((t.pad_rows(), t.pad_cols()), (1, 1));
        // padded row 5 and padded column 3 hold exact zeros
        for j in 0..2 {
            let bottom = t.tile(2, j);
            for lc in 0..2 {
                assert_eq!(bottom[lc * 2 + 1], 0.0);
            }
        }
        for i in 0..3 {
            let right = t.tile(i, 1);
            for lr in 0..2 {
                assert_eq!(right[2 + lr], 0.0);
            }
        }
        assert_eq!(t.to_col_major(), a);
    }

    #[test]
    fn roundtrip_random_37x23_b5() {
        let a = DenseMatrix::random_uniform(37, 23, 11);
        let t = TiledMatrix::from_col_major(&a, 5).unwrap();
        let back = t.to_col_major();
        assert_eq!(a.data().len(), back.data().len());
        for (x, y) in a.data().iter().zip(back.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn degenerate_1x1_b4() {
        let a = DenseMatrix::new(1, 1, vec![3.5]).unwrap();
        let t = TiledMatrix::from_col_major(&a, 4).unwrap();
        assert_eq!(t.tile(0, 0)[0], 3.5);
        let d = t.to_col_major();
        assert_eq!((d.rows(), d.cols()), (1, 1));
        assert_eq!(d.get(0, 0), 3.5);
    }

    #[test]
    fn all_zero_tiles() {
        let a = DenseMatrix::zeros(6, 4);
        let t = TiledMatrix::from_col_major(&a, 3).unwrap();
        assert!(t.to_col_major().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_diag_tile() {
        let a = DenseMatrix::identity(6);
        let t = TiledMatrix::from_col_major(&a, 3).unwrap();
        let d = t.tile(0, 0);
        for c in 0..3 {
            for r in 0..3 {
                assert_eq!(d[c * 3 + r], if r == c { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn zero_block_size_rejected() {
        let a = DenseMatrix::identity(3);
        assert!(matches!(
            TiledMatrix::from_col_major(&a, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn tile_writes_do_not_alias() {
        let a = DenseMatrix::random_uniform(6, 6, 3);
        let mut t = TiledMatrix::from_col_major(&a, 3).unwrap();
        let snapshot: Vec<f64> = t.tile(0, 0).to_vec();
        for v in t.tile_mut(1, 0) {
            *v = -7.0;
        }
        assert_eq!(t.tile(0, 0), snapshot.as_slice());
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn tile_out_of_range_panics() {
        let a = DenseMatrix::identity(4);
        let t = TiledMatrix::from_col_major(&a, 2).unwrap();
        let _ = t.tile(2, 0);
    }
}
