//! The four tile-level operations the factorization is built from, plus the
//! Householder primitives they share.
//!
//! Conventions:
//! * A reflector is H = I - tau * v * v^T with v[0] = 1 implicit. For a
//!   generating vector whose trailing part is zero the kernel emits tau = 0
//!   (no reflection); this is what makes zero padding transparent.
//! * T factors follow the forward columnwise accumulation, so
//!   I - V*T*V^T = H_1 * H_2 * ... * H_b. The elimination operator actually
//!   applied to trailing tiles is the transpose, I - V*T^T*V^T; see
//!   [`larfb_apply`].
//! * Every kernel is a pure function of its in/out arguments; repeated calls
//!   produce bitwise-identical results.

// Triangular recurrences read better with explicit indices.
#![allow(clippy::needless_range_loop)]

use crate::dense::{axpy, dot, DenseMatrix};

/// An elementary Householder reflector H = I - tau * v * v^T.
#[derive(Debug, Clone)]
pub struct Reflector {
    /// Reflector vector, normalized so `v[0] == 1`.
    pub v: Vec<f64>,
    pub tau: f64,
    /// Leading entry of H * x for the generating vector x.
    pub beta: f64,
}

/// Upper-triangular compact-WY accumulation factor of `b` reflectors.
///
/// The strictly lower part is zero and diagonal entry `j` equals `tau_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TFactor {
    b: usize,
    data: Vec<f64>,
}

impl TFactor {
    pub fn new(b: usize) -> Self {
        assert!(b > 0, "T factor order must be nonzero");
        Self {
            b,
            data: vec![0.0; b * b],
        }
    }

    pub fn order(&self) -> usize {
        self.b
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.b + r]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    fn zero(&mut self) {
        self.data.fill(0.0);
    }

    /// taus are the diagonal by construction.
    pub fn taus(&self) -> Vec<f64> {
        (0..self.b).map(|j| self.get(j, j)).collect()
    }
}

/// Scalar core of the Householder generator. Returns `(tau, beta, scale)`
/// for a vector with leading entry `x0` and trailing sum of squares
/// `tail_sumsq`; trailing entries are scaled by `scale` to form v.
#[inline]
fn house_coeffs(x0: f64, tail_sumsq: f64) -> (f64, f64, f64) {
    if tail_sumsq == 0.0 {
        return (0.0, x0, 0.0);
    }
    let norm = (x0 * x0 + tail_sumsq).sqrt();
    let beta = if x0 >= 0.0 { -norm } else { norm };
    let tau = (beta - x0) / beta;
    (tau, beta, 1.0 / (x0 - beta))
}

/// Generates the reflector taking `x` to `(beta, 0, ..., 0)`.
///
/// If the trailing part of `x` is zero the result is the no-reflection
/// convention `tau = 0`, `beta = x[0]`, `v = e1` (and `beta = 0` for an
/// all-zero `x`).
pub fn house_gen(x: &[f64]) -> Reflector {
    assert!(!x.is_empty(), "reflector needs at least one entry");
    let tail_sumsq = dot(&x[1..], &x[1..]);
    let (tau, beta, scale) = house_coeffs(x[0], tail_sumsq);
    let mut v = vec![0.0; x.len()];
    v[0] = 1.0;
    for (vi, xi) in v[1..].iter_mut().zip(&x[1..]) {
        *vi = xi * scale;
    }
    Reflector { v, tau, beta }
}

/// In-place generator over a column slice: `col[0]` becomes beta and the
/// tail becomes the normalized reflector tail. Returns tau.
#[inline]
fn house_gen_inplace(col: &mut [f64]) -> f64 {
    let (head, tail) = col.split_at_mut(1);
    let tail_sumsq = dot(tail, tail);
    let (tau, beta, scale) = house_coeffs(head[0], tail_sumsq);
    if tau != 0.0 {
        head[0] = beta;
        for v in tail.iter_mut() {
            *v *= scale;
        }
    }
    tau
}

/// Generator for a split vector `(x0, tail)` as used by [`tsqt2`]; the tail
/// is rewritten with the reflector entries. Returns `(tau, beta)`.
#[inline]
fn house_gen_split(x0: f64, tail: &mut [f64]) -> (f64, f64) {
    let tail_sumsq = dot(tail, tail);
    let (tau, beta, scale) = house_coeffs(x0, tail_sumsq);
    if tau != 0.0 {
        for v in tail.iter_mut() {
            *v *= scale;
        }
    }
    (tau, beta)
}

/// Forward columnwise accumulation: given the unit-lower-trapezoidal
/// reflector block `V` (entries above the diagonal are ignored, the unit
/// diagonal is implicit) and the taus, builds the upper-triangular T with
/// `I - V*T*V^T = H_1 * H_2 * ... * H_b`.
pub fn larft_accumulate(v: &DenseMatrix, taus: &[f64]) -> TFactor {
    let nb = taus.len();
    assert!(
        nb > 0 && v.cols() == nb && v.rows() >= nb,
        "reflector block shape mismatch"
    );
    let rows = v.rows();
    let mut t = TFactor::new(nb);
    let mut z = vec![0.0; nb];
    for j in 0..nb {
        let tau = taus[j];
        if tau == 0.0 {
            continue;
        }
        t.data[j * nb + j] = tau;
        // z[c] = v_c^T v_j reading only the stored trapezoid plus the units.
        let vj = &v.col(j)[j + 1..rows];
        for c in 0..j {
            let vc = v.col(c);
            z[c] = vc[j] + dot(&vc[j + 1..rows], vj);
        }
        // T[0:j, j] = -tau * T[0:j, 0:j] * z
        for i in 0..j {
            let mut acc = 0.0;
            for c in i..j {
                acc += t.data[c * nb + i] * z[c];
            }
            t.data[j * nb + i] = -tau * acc;
        }
    }
    t
}

/// T accumulation reading V from the strictly lower triangle of a factored
/// tile (the geqt2 storage scheme).
fn larft_from_tile(a: &[f64], b: usize, taus: &[f64], t: &mut TFactor) {
    t.zero();
    let mut z = vec![0.0; b];
    for j in 0..b {
        let tau = taus[j];
        if tau == 0.0 {
            continue;
        }
        t.data[j * b + j] = tau;
        let vj = &a[j * b + j + 1..(j + 1) * b];
        for (c, zc) in z.iter_mut().enumerate().take(j) {
            let vc = &a[c * b..(c + 1) * b];
            *zc = vc[j] + dot(&vc[j + 1..b], vj);
        }
        for i in 0..j {
            let mut acc = 0.0;
            for c in i..j {
                acc += t.data[c * b + i] * z[c];
            }
            t.data[j * b + i] = -tau * acc;
        }
    }
}

/// Unblocked QR of a diagonal tile.
///
/// On return the tile holds R in its upper triangle (diagonal included) and
/// the reflector block V in its strictly lower triangle (unit diagonal
/// implicit); `t_kk` receives the compact-WY factor. No storage beyond the
/// tile itself is used for V and R.
pub fn geqt2(a_kk: &mut [f64], t_kk: &mut TFactor, b: usize) {
    assert_eq!(a_kk.len(), b * b, "tile buffer size mismatch");
    assert_eq!(t_kk.order(), b, "T factor order mismatch");
    let mut taus = vec![0.0; b];
    for j in 0..b {
        let tau = {
            let col = &mut a_kk[j * b + j..(j + 1) * b];
            house_gen_inplace(col)
        };
        taus[j] = tau;
        if tau == 0.0 {
            continue;
        }
        let (left, right) = a_kk.split_at_mut((j + 1) * b);
        let v_tail = &left[j * b + j + 1..j * b + b];
        for c in 0..b - j - 1 {
            let colc = &mut right[c * b + j..c * b + b];
            let s = tau * (colc[0] + dot(v_tail, &colc[1..]));
            colc[0] -= s;
            axpy(&mut colc[1..], -s, v_tail);
        }
    }
    larft_from_tile(a_kk, b, &taus, t_kk);
}

/// Triangular multiply `x <- T^T x` (transpose = true) or `x <- T x`.
#[inline]
fn t_mul(t: &TFactor, x: &mut [f64], transpose: bool) {
    let b = t.b;
    if transpose {
        for r in (0..b).rev() {
            let mut acc = 0.0;
            for (s, xs) in x.iter().enumerate().take(r + 1) {
                acc += t.data[r * b + s] * xs;
            }
            x[r] = acc;
        }
    } else {
        for r in 0..b {
            let mut acc = 0.0;
            for s in r..b {
                acc += t.data[s * b + r] * x[s];
            }
            x[r] = acc;
        }
    }
}

/// Applies the compact-WY block reflector of a diagonal tile to a `b x w`
/// panel: `panel <- (I - V*T'*V^T) panel` where `T'` is `T^T` when
/// `transpose_t` is set (the elimination direction) and `T` otherwise.
pub(crate) fn apply_wy_diag(
    panel: &mut [f64],
    w: usize,
    v_kk: &[f64],
    t_kk: &TFactor,
    b: usize,
    transpose_t: bool,
) {
    assert_eq!(panel.len(), b * w, "panel buffer size mismatch");
    assert_eq!(v_kk.len(), b * b, "reflector tile size mismatch");
    assert_eq!(t_kk.order(), b, "T factor order mismatch");
    let mut work = vec![0.0; b];
    for c in 0..w {
        let col = &mut panel[c * b..(c + 1) * b];
        for r in 0..b {
            work[r] = col[r] + dot(&v_kk[r * b + r + 1..(r + 1) * b], &col[r + 1..]);
        }
        t_mul(t_kk, &mut work, transpose_t);
        for r in 0..b {
            let x = work[r];
            col[r] -= x;
            axpy(&mut col[r + 1..], -x, &v_kk[r * b + r + 1..(r + 1) * b]);
        }
    }
}

/// Applies the stacked block reflector of a subdiagonal tile (identity on
/// top of a full `V`) to a pair of `b x w` panels.
pub(crate) fn apply_wy_stacked(
    top: &mut [f64],
    bot: &mut [f64],
    w: usize,
    v_ik: &[f64],
    t_ik: &TFactor,
    b: usize,
    transpose_t: bool,
) {
    assert_eq!(top.len(), b * w, "top panel buffer size mismatch");
    assert_eq!(bot.len(), b * w, "bottom panel buffer size mismatch");
    assert_eq!(v_ik.len(), b * b, "reflector tile size mismatch");
    let mut work = vec![0.0; b];
    for c in 0..w {
        let tcol = &mut top[c * b..(c + 1) * b];
        let bcol = &mut bot[c * b..(c + 1) * b];
        for r in 0..b {
            work[r] = tcol[r] + dot(&v_ik[r * b..(r + 1) * b], bcol);
        }
        t_mul(t_ik, &mut work, transpose_t);
        for r in 0..b {
            tcol[r] -= work[r];
        }
        for r in 0..b {
            axpy(bcol, -work[r], &v_ik[r * b..(r + 1) * b]);
        }
    }
}

/// Applies the transformation computed by [`geqt2`] to a tile on the same
/// tile row: `A_kj <- (I - V_kk*T_kk^T*V_kk^T) A_kj`, computed as
/// `W = V^T A; W <- T^T W; A <- A - V W`. Only the strictly lower triangle
/// of `v_kk` (plus its implicit unit diagonal) is read.
pub fn larfb_apply(a_kj: &mut [f64], v_kk: &[f64], t_kk: &TFactor, b: usize) {
    apply_wy_diag(a_kj, b, v_kk, t_kk, b, true);
}

/// QR of the stacked matrix [R_kk; A_ik].
///
/// `r_kk` is read and written only in its upper triangle (the strictly lower
/// part keeps holding V_kk from geqt2). The reflectors have the structure
/// [I; V_ik]; the identity part is not stored and V_ik overwrites `a_ik`.
/// `t_ik` is built with the structured recurrence that exploits the identity
/// block: z reduces to dot products of stored V columns.
pub fn tsqt2(r_kk: &mut [f64], a_ik: &mut [f64], t_ik: &mut TFactor, b: usize) {
    assert_eq!(r_kk.len(), b * b, "tile buffer size mismatch");
    assert_eq!(a_ik.len(), b * b, "tile buffer size mismatch");
    assert_eq!(t_ik.order(), b, "T factor order mismatch");
    t_ik.zero();
    let mut z = vec![0.0; b];
    for j in 0..b {
        let x0 = r_kk[j * b + j];
        let (tau, beta) = {
            let col = &mut a_ik[j * b..(j + 1) * b];
            house_gen_split(x0, col)
        };
        if tau == 0.0 {
            continue;
        }
        r_kk[j * b + j] = beta;
        t_ik.data[j * b + j] = tau;
        // Update the trailing columns of the stack; the top block only sees
        // its row j because the reflector top is e_j.
        {
            let (left, right) = a_ik.split_at_mut((j + 1) * b);
            let w_j = &left[j * b..(j + 1) * b];
            for c in 0..b - j - 1 {
                let gc = j + 1 + c;
                let bcol = &mut right[c * b..(c + 1) * b];
                let val = tau * (r_kk[gc * b + j] + dot(w_j, bcol));
                r_kk[gc * b + j] -= val;
                axpy(bcol, -val, w_j);
            }
        }
        // T column j from the stored V columns alone.
        let w_j = &a_ik[j * b..(j + 1) * b];
        for (c, zc) in z.iter_mut().enumerate().take(j) {
            *zc = dot(&a_ik[c * b..(c + 1) * b], w_j);
        }
        for i in 0..j {
            let mut acc = 0.0;
            for c in i..j {
                acc += t_ik.data[c * b + i] * z[c];
            }
            t_ik.data[j * b + i] = -tau * acc;
        }
    }
}

/// Applies the transformation computed by [`tsqt2`] to the tile pair
/// (A_kj, A_ij): `W = A_kj + V_ik^T A_ij; X = T_ik^T W; A_kj -= X;
/// A_ij -= V_ik X`.
pub fn ssrfb_apply(a_kj: &mut [f64], a_ij: &mut [f64], v_ik: &[f64], t_ik: &TFactor, b: usize) {
    apply_wy_stacked(a_kj, a_ij, b, v_ik, t_ik, b, true);
}

/// The four kernel kinds, in task-letter order (G, L, T, S).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Geqt2,
    Larfb,
    Tsqt2,
    Ssrfb,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Geqt2,
        KernelKind::Larfb,
        KernelKind::Tsqt2,
        KernelKind::Ssrfb,
    ];

    pub fn letter(self) -> char {
        match self {
            KernelKind::Geqt2 => 'G',
            KernelKind::Larfb => 'L',
            KernelKind::Tsqt2 => 'T',
            KernelKind::Ssrfb => 'S',
        }
    }

    pub fn index(self) -> usize {
        match self {
            KernelKind::Geqt2 => 0,
            KernelKind::Larfb => 1,
            KernelKind::Tsqt2 => 2,
            KernelKind::Ssrfb => 3,
        }
    }
}

/// Modeled cost of one kernel call, in thirds of a flop so the 10/3 b^3
/// term stays exact: 6 b^3, 9 b^3, 10 b^3, 15 b^3 thirds respectively.
pub fn kernel_flop_thirds(kind: KernelKind, b: usize) -> u128 {
    let b3 = (b as u128).pow(3);
    match kind {
        KernelKind::Geqt2 => 6 * b3,
        KernelKind::Larfb => 9 * b3,
        KernelKind::Tsqt2 => 10 * b3,
        KernelKind::Ssrfb => 15 * b3,
    }
}

/// Modeled cost of one kernel call: 2 b^3, 3 b^3, 10/3 b^3 and 5 b^3 flops.
/// This is the analytic model, not an instrumented count.
pub fn kernel_flops(kind: KernelKind, b: usize) -> f64 {
    kernel_flop_thirds(kind, b) as f64 / 3.0
}
