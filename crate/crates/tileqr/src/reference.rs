//! Baselines and quality metrics: unblocked Householder QR (the correctness
//! oracle for every other path), the LAPACK-style blocked factorization used
//! as the sequential fork-join baseline, analytic flop models, and the
//! backward-error / orthogonality measures.

#![allow(clippy::needless_range_loop)]

use crate::dense::{axpy, dot, DenseMatrix};
use crate::error::{Error, Result};
use crate::kernels::{house_gen, larft_accumulate};

/// Scale factor for residual tolerances: bounds are `BACKWARD_ERROR_FACTOR *
/// max(m, n) * eps`.
pub const BACKWARD_ERROR_FACTOR: f64 = 100.0;

/// Factored form produced by the column-by-column paths: R in the upper
/// triangle of `vr`, reflector vectors below the diagonal, taus alongside.
#[derive(Debug, Clone)]
pub struct UnblockedFactors {
    vr: DenseMatrix,
    taus: Vec<f64>,
}

/// Common surface of every factorization path, used by the error metrics.
pub trait QrFactorization {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// The m x n upper-triangular factor (zeros below the diagonal).
    fn r_matrix(&self) -> DenseMatrix;
    /// Q * B with Q applied implicitly through the stored reflectors.
    fn apply_q(&self, bmat: &DenseMatrix) -> Result<DenseMatrix>;
    /// Q^T * B.
    fn apply_q_transpose(&self, bmat: &DenseMatrix) -> Result<DenseMatrix>;
}

/// Factors columns `[j0, j0 + w)` of `a` in place using rows `j0..m`. Each
/// reflector updates columns up to `upd_end`: the panel itself for the
/// blocked path, the whole matrix for the unblocked one.
fn panel_factor(a: &mut DenseMatrix, j0: usize, w: usize, upd_end: usize, taus: &mut [f64]) {
    let m = a.rows();
    for jj in 0..w {
        let j = j0 + jj;
        let tau = {
            let col = &mut a.col_mut(j)[j..m];
            let tail_sumsq = dot(&col[1..], &col[1..]);
            if tail_sumsq == 0.0 {
                0.0
            } else {
                let r = house_gen(col);
                col[0] = r.beta;
                col[1..].copy_from_slice(&r.v[1..]);
                r.tau
            }
        };
        taus[jj] = tau;
        if tau == 0.0 {
            continue;
        }
        let v_tail: Vec<f64> = a.col(j)[j + 1..m].to_vec();
        for c in j + 1..upd_end {
            let s = {
                let ccol = a.col(c);
                tau * (ccol[j] + dot(&v_tail, &ccol[j + 1..m]))
            };
            let ccol = a.col_mut(c);
            ccol[j] -= s;
            axpy(&mut ccol[j + 1..m], -s, &v_tail);
        }
    }
}

/// Column-by-column Householder QR; the oracle every other path is checked
/// against.
pub fn house_qr_unblocked(a: &DenseMatrix) -> UnblockedFactors {
    let mut vr = a.clone();
    let k = a.rows().min(a.cols());
    let mut taus = vec![0.0; k];
    panel_factor(&mut vr, 0, k, a.cols(), &mut taus);
    UnblockedFactors { vr, taus }
}

/// Applies the elimination operator of panel `(j0, w)` to the columns right
/// of the panel (the trailing submatrix update).
fn apply_block_reflectors_to_trailing(a: &mut DenseMatrix, j0: usize, w: usize, taus: &[f64]) {
    let (m, n) = (a.rows(), a.cols());
    if j0 + w >= n {
        return;
    }
    // Copy the unit-lower-trapezoidal V out of the panel.
    let rows = m - j0;
    let v = DenseMatrix::from_fn(
        rows,
        w,
        |r, c| if r > c { a.col(j0 + c)[j0 + r] } else { 0.0 },
    );
    let t = larft_accumulate(&v, taus);
    // W = V^T * A_trailing; W <- T^T W; A_trailing -= V * W.
    let mut work = vec![0.0; w];
    for c in j0 + w..n {
        for (r, wr) in work.iter_mut().enumerate() {
            let ccol = a.col(c);
            *wr = ccol[j0 + r] + dot(&v.col(r)[r + 1..rows], &ccol[j0 + r + 1..m]);
        }
        // work <- T^T work
        for r in (0..w).rev() {
            let mut acc = 0.0;
            for (s, ws) in work.iter().enumerate().take(r + 1) {
                acc += t.get(s, r) * ws;
            }
            work[r] = acc;
        }
        let ccol = a.col_mut(c);
        for r in 0..w {
            let x = work[r];
            ccol[j0 + r] -= x;
            axpy(&mut ccol[j0 + r + 1..m], -x, &v.col(r)[r + 1..rows]);
        }
    }
}

/// LAPACK-style blocked QR: panel factorization followed by a compact-WY
/// trailing update, executed sequentially. With `b >= n` this degenerates to
/// a single panel and is bitwise identical to [`house_qr_unblocked`].
pub fn blocked_qr(a: &DenseMatrix, b: usize) -> Result<UnblockedFactors> {
    if b == 0 {
        return Err(Error::invalid("panel width must be at least 1"));
    }
    let mut vr = a.clone();
    let k = a.rows().min(a.cols());
    let mut taus = vec![0.0; k];
    let mut j0 = 0;
    while j0 < k {
        let w = b.min(k - j0);
        panel_factor(&mut vr, j0, w, j0 + w, &mut taus[j0..j0 + w]);
        apply_block_reflectors_to_trailing(&mut vr, j0, w, &taus[j0..j0 + w]);
        j0 += w;
    }
    Ok(UnblockedFactors { vr, taus })
}

impl UnblockedFactors {
    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn vr(&self) -> &DenseMatrix {
        &self.vr
    }

    fn apply_reflector(&self, j: usize, bmat: &mut DenseMatrix) {
        let tau = self.taus[j];
        if tau == 0.0 {
            return;
        }
        let m = self.vr.rows();
        for c in 0..bmat.cols() {
            let s = {
                let col = bmat.col(c);
                tau * (col[j] + dot(&self.vr.col(j)[j + 1..m], &col[j + 1..m]))
            };
            let vcol: Vec<f64> = self.vr.col(j)[j + 1..m].to_vec();
            let col = bmat.col_mut(c);
            col[j] -= s;
            axpy(&mut col[j + 1..m], -s, &vcol);
        }
    }
}

impl QrFactorization for UnblockedFactors {
    fn nrows(&self) -> usize {
        self.vr.rows()
    }

    fn ncols(&self) -> usize {
        self.vr.cols()
    }

    fn r_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.vr.rows(), self.vr.cols(), |r, c| {
            if r <= c {
                self.vr.get(r, c)
            } else {
                0.0
            }
        })
    }

    fn apply_q(&self, bmat: &DenseMatrix) -> Result<DenseMatrix> {
        if bmat.rows() != self.vr.rows() {
            return Err(Error::invalid("row count mismatch in apply_q"));
        }
        let mut out = bmat.clone();
        for j in (0..self.taus.len()).rev() {
            self.apply_reflector(j, &mut out);
        }
        Ok(out)
    }

    fn apply_q_transpose(&self, bmat: &DenseMatrix) -> Result<DenseMatrix> {
        if bmat.rows() != self.vr.rows() {
            return Err(Error::invalid("row count mismatch in apply_q_transpose"));
        }
        let mut out = bmat.clone();
        for j in 0..self.taus.len() {
            self.apply_reflector(j, &mut out);
        }
        Ok(out)
    }
}

/// `||A - Q R||_F / ||A||_F` with Q applied implicitly. A zero input matrix
/// yields the absolute residual `||Q R||_F`.
pub fn backward_error(a: &DenseMatrix, f: &dyn QrFactorization) -> f64 {
    let r = f.r_matrix();
    let qr = f.apply_q(&r).expect("factor shape matches its own R");
    let num = qr.sub(a).frob_norm();
    let den = a.frob_norm();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// `||Q^T Q - I||_inf` with Q materialized by applying the factor to the
/// identity.
pub fn orthogonality_error(f: &dyn QrFactorization) -> f64 {
    let m = f.nrows();
    let q = f
        .apply_q(&DenseMatrix::identity(m))
        .expect("identity has m rows");
    q.transpose()
        .matmul(&q)
        .sub(&DenseMatrix::identity(m))
        .inf_norm()
}

/// Negates the rows of R whose diagonal entry is negative, so R factors from
/// different paths can be compared entrywise (full-column-rank inputs have a
/// unique positive-diagonal R).
pub fn normalize_r_signs(r: &DenseMatrix) -> DenseMatrix {
    let mut out = r.clone();
    for d in 0..r.rows().min(r.cols()) {
        if out.get(d, d) < 0.0 {
            for c in 0..r.cols() {
                let v = out.get(d, c);
                out.set(d, c, -v);
            }
        }
    }
    out
}

/// Which algorithm a flop count models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopAlgorithm {
    /// Tile algorithm, exact per-kernel sum over the factorization loops.
    Tiled { p: usize, q: usize, b: usize },
    /// Standard Householder QR count 2 n^2 (m - n/3).
    Blocked { m: usize, n: usize },
}

/// An analytic operation count. Totals are tracked in thirds of a flop so
/// the 10/3 b^3 kernel term stays exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopModel {
    pub algorithm: FlopAlgorithm,
    pub total_thirds: u128,
}

impl FlopModel {
    pub fn tiled(p: usize, q: usize, b: usize) -> Result<Self> {
        if p < q {
            return Err(Error::invalid("tiled flop model assumes p >= q"));
        }
        if q == 0 || b == 0 {
            return Err(Error::invalid("tiled flop model needs q >= 1 and b >= 1"));
        }
        let b3 = (b as u128).pow(3);
        let (p128, q128) = (p as u128, q as u128);
        let mut thirds = 0u128;
        for k in 1..=q128 {
            let (dq, dp) = (q128 - k, p128 - k);
            thirds += (6 + 9 * dq + 10 * dp + 15 * dp * dq) * b3;
        }
        Ok(Self {
            algorithm: FlopAlgorithm::Tiled { p, q, b },
            total_thirds: thirds,
        })
    }

    pub fn blocked(m: usize, n: usize) -> Result<Self> {
        if m < n {
            return Err(Error::invalid("blocked flop model assumes m >= n"));
        }
        if n == 0 {
            return Err(Error::invalid("blocked flop model needs n >= 1"));
        }
        let (m128, n128) = (m as u128, n as u128);
        // 2 n^2 (m - n/3) = (2/3) n^2 (3m - n)
        let thirds = 2 * n128 * n128 * (3 * m128 - n128);
        Ok(Self {
            algorithm: FlopAlgorithm::Blocked { m, n },
            total_thirds: thirds,
        })
    }

    pub fn total(&self) -> f64 {
        self.total_thirds as f64 / 3.0
    }
}

/// Exact tiled operation count (the full loop sum, not the asymptotic form).
pub fn model_flops_tiled(p: usize, q: usize, b: usize) -> Result<f64> {
    Ok(FlopModel::tiled(p, q, b)?.total())
}

/// Standard QR operation count 2 n^2 (m - n/3).
pub fn model_flops_blocked(m: usize, n: usize) -> Result<f64> {
    Ok(FlopModel::blocked(m, n)?.total())
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = f64::EPSILON;

    #[test]
    fn unblocked_identity() {
        let f = house_qr_unblocked(&DenseMatrix::identity(3));
        assert_eq!(f.r_matrix(), DenseMatrix::identity(3));
        assert!(f.taus().iter().all(|&t| t == 0.0));
    }

    #[test]
    fn unblocked_2x1_column() {
        let a = DenseMatrix::new(2, 1, vec![3.0, 4.0]).unwrap();
        let f = house_qr_unblocked(&a);
        assert!((f.r_matrix().get(0, 0) + 5.0).abs() <= 32.0 * EPS);
        assert!((f.taus()[0] - 1.6).abs() <= 8.0 * EPS);
    }

    #[test]
    fn unblocked_residual_8x5() {
        let a = DenseMatrix::random_uniform(8, 5, 3);
        let f = house_qr_unblocked(&a);
        assert!(backward_error(&a, &f) <= BACKWARD_ERROR_FACTOR * 8.0 * EPS);
    }

    #[test]
    fn blocked_single_panel_is_bitwise_unblocked() {
        let a = DenseMatrix::random_uniform(9, 6, 13);
        let u = house_qr_unblocked(&a);
        for b in [6, 7, 32] {
            let f = blocked_qr(&a, b).unwrap();
            assert_eq!(f.vr().data(), u.vr().data());
            assert_eq!(f.taus(), u.taus());
        }
    }

    #[test]
    fn blocked_matches_oracle_12x12() {
        let a = DenseMatrix::random_uniform(12, 12, 4);
        let f = blocked_qr(&a, 4).unwrap();
        let u = house_qr_unblocked(&a);
        let rf = normalize_r_signs(&f.r_matrix());
        let ru = normalize_r_signs(&u.r_matrix());
        let scale = ru.max_abs();
        assert!(rf.sub(&ru).max_abs() <= 1e-12 * scale);
        assert!(backward_error(&a, &f) <= BACKWARD_ERROR_FACTOR * 12.0 * EPS);
    }

    #[test]
    fn blocked_identity_any_panel() {
        for b in [1, 2, 5] {
            let f = blocked_qr(&DenseMatrix::identity(6), b).unwrap();
            assert_eq!(f.r_matrix(), DenseMatrix::identity(6));
            assert!(f.taus().iter().all(|&t| t == 0.0));
        }
    }

    #[test]
    fn wide_matrix_supported() {
        let a = DenseMatrix::random_uniform(4, 7, 15);
        let f = house_qr_unblocked(&a);
        assert!(backward_error(&a, &f) <= BACKWARD_ERROR_FACTOR * 7.0 * EPS);
        let g = blocked_qr(&a, 2).unwrap();
        assert!(backward_error(&a, &g) <= BACKWARD_ERROR_FACTOR * 7.0 * EPS);
    }

    #[test]
    fn model_blocked_values() {
        assert_eq!(model_flops_blocked(10, 10).unwrap(), 4.0 / 3.0 * 1000.0);
        assert_eq!(model_flops_blocked(3000, 3000).unwrap(), 3.6e10);
        assert!(model_flops_blocked(5, 6).is_err());
    }

    #[test]
    fn model_tiled_values() {
        // single tile: one GEQT2
        for b in [1usize, 3, 10] {
            assert_eq!(
                model_flops_tiled(1, 1, b).unwrap(),
                2.0 * (b as f64).powi(3)
            );
        }
        // exact 20x20 grid, b = 1, against the hand-computed closed form
        let t = model_flops_tiled(20, 20, 1).unwrap();
        assert!((t - 40780.0 / 3.0).abs() < 1e-9);
        let ratio = t / model_flops_blocked(20, 20).unwrap();
        assert!((ratio - 1.274).abs() < 1e-3, "ratio {ratio}");
        assert!(model_flops_tiled(3, 4, 2).is_err());
    }

    #[test]
    fn model_ratio_tends_to_quarter_overhead() {
        let ratio =
            model_flops_tiled(100, 100, 1).unwrap() / model_flops_blocked(100, 100).unwrap();
        assert!((1.25..=1.26).contains(&ratio), "ratio {ratio}");
        // monotone decrease toward 1.25
        let r10 = model_flops_tiled(10, 10, 1).unwrap() / model_flops_blocked(10, 10).unwrap();
        assert!(r10 > ratio && ratio > 1.25);
    }

    #[test]
    fn model_monotone_in_dimensions() {
        let base = FlopModel::tiled(4, 3, 2).unwrap().total_thirds;
        assert!(FlopModel::tiled(5, 3, 2).unwrap().total_thirds > base);
        assert!(FlopModel::tiled(4, 4, 2).unwrap().total_thirds > base);
        assert!(FlopModel::tiled(4, 3, 3).unwrap().total_thirds > base);
    }

    #[test]
    fn backward_error_cases() {
        let id = DenseMatrix::identity(4);
        let f = house_qr_unblocked(&id);
        assert!(backward_error(&id, &f) <= EPS);

        let a = DenseMatrix::random_uniform(100, 100, 8);
        let f = house_qr_unblocked(&a);
        assert!(backward_error(&a, &f) <= BACKWARD_ERROR_FACTOR * 100.0 * EPS);
    }

    #[test]
    fn backward_error_detects_tampering() {
        let a = DenseMatrix::random_uniform(10, 10, 9);
        let mut f = house_qr_unblocked(&a);
        let v = f.vr.get(0, 5);
        f.vr.set(0, 5, v + 1.0);
        assert!(backward_error(&a, &f) >= 0.5 / a.frob_norm());
    }

    #[test]
    fn orthogonality_error_cases() {
        let f = house_qr_unblocked(&DenseMatrix::identity(5));
        assert_eq!(orthogonality_error(&f), 0.0);

        let a = DenseMatrix::random_uniform(50, 50, 10);
        let f = house_qr_unblocked(&a);
        assert!(orthogonality_error(&f) <= BACKWARD_ERROR_FACTOR * 50.0 * EPS);

        let one = DenseMatrix::new(2, 1, vec![3.0, 4.0]).unwrap();
        let f = house_qr_unblocked(&one);
        assert!(orthogonality_error(&f) <= 16.0 * EPS);
    }

    #[test]
    fn sign_normalization() {
        let r = DenseMatrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => -1.0,
            (0, 1) => 3.0,
            (1, 1) => 2.0,
            _ => 0.0,
        });
        let n = normalize_r_signs(&r);
        assert_eq!(n.get(0, 0), 1.0);
        assert_eq!(n.get(0, 1), -3.0);
        assert_eq!(n.get(1, 1), 2.0);

        let pos = DenseMatrix::identity(3);
        assert_eq!(normalize_r_signs(&pos), pos);
    }
}
