//! Property tests over the storage layout and the factorization drivers.

use proptest::prelude::*;
use tileqr::dense::DenseMatrix;
use tileqr::driver::{tiled_qr_parallel, tiled_qr_sequential};
use tileqr::reference::backward_error;
use tileqr::storage::TiledMatrix;

const EPS: f64 = f64::EPSILON;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Round trip through block data layout is bitwise for every tile edge
    /// up to max(m, n) + 3.
    #[test]
    fn bdl_roundtrip_bitwise(m in 1usize..24, n in 1usize..24, boff in 0usize..27, seed in 0u64..1000) {
        let b = 1 + boff % (m.max(n) + 3);
        let a = DenseMatrix::random_uniform(m, n, seed);
        let t = TiledMatrix::from_col_major(&a, b).unwrap();
        let back = t.to_col_major();
        for (x, y) in a.data().iter().zip(back.data()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    /// The factorization meets the backward-error bound for arbitrary
    /// shapes, including tile edges larger than the matrix.
    #[test]
    fn factorization_backward_error(m in 1usize..40, n in 1usize..40, boff in 0usize..12, seed in 0u64..500) {
        let b = 1 + boff % 11;
        let a = DenseMatrix::random_uniform(m, n, seed);
        let f = tiled_qr_sequential(TiledMatrix::from_col_major(&a, b).unwrap());
        let bound = 100.0 * m.max(n) as f64 * EPS;
        prop_assert!(backward_error(&a, &f) <= bound);
    }

    /// Parallel execution with a small worker pool reproduces the
    /// sequential bits on arbitrary shapes.
    #[test]
    fn parallel_matches_sequential(m in 2usize..30, n in 2usize..30, seed in 0u64..200, workers in 1usize..5) {
        let b = 4;
        let a = DenseMatrix::random_uniform(m, n, seed);
        let f_seq = tiled_qr_sequential(TiledMatrix::from_col_major(&a, b).unwrap());
        let (f_par, _) = tiled_qr_parallel(TiledMatrix::from_col_major(&a, b).unwrap(), workers).unwrap();
        prop_assert!(f_seq.bitwise_eq(&f_par));
    }
}

/// Unblocked, blocked and tiled paths agree on the sign-normalized R on
/// well-conditioned random matrices up to 200x200.
#[test]
fn oracle_chain_agreement() {
    use tileqr::reference::{blocked_qr, house_qr_unblocked, normalize_r_signs, QrFactorization};
    for n in [60usize, 128, 200] {
        let a = DenseMatrix::random_uniform(n, n, n as u64 + 1);
        let ru = normalize_r_signs(&house_qr_unblocked(&a).r_matrix());
        let tol = 1e-10 * a.frob_norm();
        for b in [4usize, 8, 16, 32] {
            let rb = normalize_r_signs(&blocked_qr(&a, b).unwrap().r_matrix());
            let f = tiled_qr_sequential(TiledMatrix::from_col_major(&a, b).unwrap());
            let rt = normalize_r_signs(&f.r_matrix());
            assert!(rb.sub(&ru).max_abs() <= tol, "blocked n={n} b={b}");
            assert!(rt.sub(&ru).max_abs() <= tol, "tiled n={n} b={b}");
        }
    }
}

/// Backward-error grid from the driver invariants: a spread of sizes and
/// tile edges including padding and tile edges above the matrix size.
#[test]
fn backward_error_grid() {
    for (m, n, b) in [
        (16usize, 16usize, 4usize),
        (100, 60, 8),
        (256, 256, 16),
        (512, 512, 100),
        (130, 512, 16),
        (33, 33, 100),
    ] {
        let a = DenseMatrix::random_uniform(m, n, (m * 7 + n * 3 + b) as u64);
        let f = tiled_qr_sequential(TiledMatrix::from_col_major(&a, b).unwrap());
        let bound = 100.0 * m.max(n) as f64 * EPS;
        let be = backward_error(&a, &f);
        assert!(be <= bound, "m={m} n={n} b={b}: {be} > {bound}");
    }
}
