//! Dense helpers on top of nalgebra: squared distances, jittered Cholesky
//! and the reverse-mode derivative of the Cholesky factorization.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// First jitter tried when factorizing a Gram matrix.
pub const JITTER_START: f64 = 1e-6;
/// Largest jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-2;

/// Pairwise squared Euclidean distances between the rows of `a` and `b`.
pub fn sq_dists(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols(), "row dimension mismatch");
    let (na, nb, d) = (a.nrows(), b.nrows(), a.ncols());
    let mut out = DMatrix::zeros(na, nb);
    for j in 0..nb {
        for i in 0..na {
            let mut s = 0.0;
            for t in 0..d {
                let diff = a[(i, t)] - b[(j, t)];
                s += diff * diff;
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// Cholesky factor of `k + jitter * I` and its inverse, escalating the
/// jitter tenfold from `start` up to [`JITTER_MAX`]. Returns `(L, L^{-1}, jitter)`.
pub fn cholesky_jittered(k: &DMatrix<f64>, start: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let mut jitter = start.max(JITTER_START);
    loop {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some((l, linv)) = cholesky_with_inverse(&kj) {
            return Ok((l, linv, jitter));
        }
        if jitter >= JITTER_MAX {
            return Err(Error::Cholesky { jitter });
        }
        jitter = (jitter * 10.0).min(JITTER_MAX);
    }
}

const BLOCK: usize = 64;

/// Lower Cholesky factor of a symmetric positive-definite matrix together
/// with its inverse, by recursive 2x2 blocking so the bulk of the work runs
/// through matrix products. `None` if the matrix is not positive definite.
pub fn cholesky_with_inverse(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if n <= BLOCK {
        let l = Cholesky::new(a.clone())?.unpack();
        if (0..n).any(|i| !(l[(i, i)] > 0.0) || !l[(i, i)].is_finite()) {
            return None;
        }
        let linv = l.solve_lower_triangular(&DMatrix::identity(n, n))?;
        return Some((l, linv));
    }
    let h = n / 2;
    let r = n - h;
    let (l11, i11) = cholesky_with_inverse(&a.view((0, 0), (h, h)).into_owned())?;
    let l21 = mul(&a.view((h, 0), (r, h)).into_owned(), false, &i11, true);
    let schur = a.view((h, h), (r, r)) - mul(&l21, false, &l21, true);
    let (l22, i22) = cholesky_with_inverse(&schur)?;
    let i21 = -mul(&i22, false, &mul(&l21, false, &i11, false), false);
    let mut l = DMatrix::zeros(n, n);
    let mut linv = DMatrix::zeros(n, n);
    l.view_mut((0, 0), (h, h)).copy_from(&l11);
    l.view_mut((h, 0), (r, h)).copy_from(&l21);
    l.view_mut((h, h), (r, r)).copy_from(&l22);
    linv.view_mut((0, 0), (h, h)).copy_from(&i11);
    linv.view_mut((h, 0), (r, h)).copy_from(&i21);
    linv.view_mut((h, h), (r, r)).copy_from(&i22);
    Some((l, linv))
}

/// `op(a) * op(b)` where `op` transposes when the flag is set, without
/// materializing the transposes.
pub fn mul(a: &DMatrix<f64>, ta: bool, b: &DMatrix<f64>, tb: bool) -> DMatrix<f64> {
    let (m, k) = if ta { (a.ncols(), a.nrows()) } else { (a.nrows(), a.ncols()) };
    let (kb, n) = if tb { (b.ncols(), b.nrows()) } else { (b.nrows(), b.ncols()) };
    assert_eq!(k, kb, "inner dimensions differ");
    let mut c = DMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // column-major storage: element (i, j) lives at i + j * nrows
    let strides = |x: &DMatrix<f64>, t: bool| -> (isize, isize) {
        let ld = x.nrows() as isize;
        if t {
            (ld, 1)
        } else {
            (1, ld)
        }
    };
    let (rsa, csa) = strides(a, ta);
    let (rsb, csb) = strides(b, tb);
    // SAFETY: the pointers cover column-major buffers whose shapes match the
    // dimensions and strides passed; `c` is freshly allocated and unaliased.
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
            0.0,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    c
}

/// Sparsity of an operand after its optional transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Full,
    Lower,
    Upper,
}

const MUL_BLOCK: usize = 64;

/// Like [`mul`], but skips the blocks that vanish because `op(a)` or `op(b)`
/// is triangular (their other triangle must hold zeros). With `lower_out`
/// only the lower triangle of the product is formed; the rest is zero.
pub fn mul_structured(
    a: &DMatrix<f64>,
    ta: bool,
    sa: Shape,
    b: &DMatrix<f64>,
    tb: bool,
    sb: Shape,
    lower_out: bool,
) -> DMatrix<f64> {
    let (m, k) = if ta { (a.ncols(), a.nrows()) } else { (a.nrows(), a.ncols()) };
    let (kb, n) = if tb { (b.ncols(), b.nrows()) } else { (b.nrows(), b.ncols()) };
    assert_eq!(k, kb, "inner dimensions differ");
    let mut c = DMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let strides = |x: &DMatrix<f64>, t: bool| -> (isize, isize) {
        let ld = x.nrows() as isize;
        if t {
            (ld, 1)
        } else {
            (1, ld)
        }
    };
    let (rsa, csa) = strides(a, ta);
    let (rsb, csb) = strides(b, tb);
    let ldc = m as isize;
    for j0 in (0..n).step_by(MUL_BLOCK) {
        let j1 = (j0 + MUL_BLOCK).min(n);
        for i0 in (0..m).step_by(MUL_BLOCK) {
            let i1 = (i0 + MUL_BLOCK).min(m);
            if lower_out && i1 <= j0 {
                continue;
            }
            let (mut lo, mut hi) = (0, k);
            match sa {
                Shape::Lower => hi = hi.min(i1),
                Shape::Upper => lo = lo.max(i0),
                Shape::Full => {}
            }
            match sb {
                Shape::Lower => lo = lo.max(j0),
                Shape::Upper => hi = hi.min(j1),
                Shape::Full => {}
            }
            if lo >= hi {
                continue;
            }
            // SAFETY: every offset stays inside the operand buffers because
            // the row and column ranges lie within the logical shapes and the
            // strides describe column-major storage; `c` is unaliased.
            unsafe {
                matrixmultiply::dgemm(
                    i1 - i0,
                    hi - lo,
                    j1 - j0,
                    1.0,
                    a.as_ptr().offset(i0 as isize * rsa + lo as isize * csa),
                    rsa,
                    csa,
                    b.as_ptr().offset(lo as isize * rsb + j0 as isize * csb),
                    rsb,
                    csb,
                    0.0,
                    c.as_mut_ptr().offset(i0 as isize + j0 as isize * ldc),
                    1,
                    ldc,
                );
            }
        }
    }
    if lower_out {
        tril_in_place(&mut c);
    }
    c
}

/// Keep the lower triangle (diagonal included), zeroing the rest.
pub fn tril_in_place(m: &mut DMatrix<f64>) {
    let n = m.ncols();
    for j in 1..n {
        for i in 0..j.min(m.nrows()) {
            m[(i, j)] = 0.0;
        }
    }
}

/// Gradient with respect to `A` of a scalar function of `L = chol(A)`,
/// given `l_bar`, its (lower-triangular) gradient with respect to the lower factor, and
/// `linv = L^{-1}`.
///
/// Uses `A_bar = L^{-T} Phi(L^T L_bar) L^{-1}` where `Phi` keeps the lower
/// triangle and halves the diagonal; the result is symmetrized.
pub fn cholesky_backward(l: &DMatrix<f64>, linv: &DMatrix<f64>, l_bar: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut p = mul_structured(l, true, Shape::Upper, l_bar, false, Shape::Lower, true);
    for i in 0..n {
        p[(i, i)] *= 0.5;
    }
    let pl = mul_structured(&p, false, Shape::Lower, linv, false, Shape::Lower, true);
    let mut out = mul_structured(linv, true, Shape::Upper, &pl, false, Shape::Lower, false);
    for j in 0..n {
        for i in (j + 1)..n {
            let s = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// Row-wise squared norms.
pub fn row_sq_norms(m: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(m.nrows());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out[i] += m[(i, j)] * m[(i, j)];
        }
    }
    out
}

/// Column-wise squared norms.
pub fn col_sq_norms(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.norm_squared()))
}

/// Gather rows of `m` by index.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |i, j| libm::sin((i * 7 + j * 3) as f64) + if i == j { 2.0 } else { 0.0 });
        &b * b.transpose()
    }

    #[test]
    fn structured_mul_matches_dense() {
        let n = 150;
        let full = DMatrix::from_fn(n, n, |i, j| libm::cos((i * 13 + j * 5) as f64));
        let mut lower = full.clone();
        tril_in_place(&mut lower);
        let cases = [
            (&lower, false, Shape::Lower, &lower, false, Shape::Lower),
            (&lower, true, Shape::Upper, &lower, false, Shape::Lower),
            (&lower, false, Shape::Lower, &lower, true, Shape::Upper),
            (&lower, true, Shape::Upper, &full, false, Shape::Full),
            (&full, false, Shape::Full, &lower, true, Shape::Upper),
        ];
        for (a, ta, sa, b, tb, sb) in cases {
            let dense = mul(a, ta, b, tb);
            let got = mul_structured(a, ta, sa, b, tb, sb, false);
            assert!((&got - &dense).amax() < 1e-10);
            let mut dense_lower = dense.clone();
            tril_in_place(&mut dense_lower);
            let got = mul_structured(a, ta, sa, b, tb, sb, true);
            assert!((&got - &dense_lower).amax() < 1e-10);
        }
    }

    #[test]
    fn cholesky_backward_matches_finite_differences() {
        let n = 5;
        let a = spd(n);
        // f(A) = sum_ij W_ij L_ij with fixed weights W
        let w = DMatrix::from_fn(n, n, |i, j| if i >= j { 0.3 + (i as f64) - 0.7 * (j as f64) } else { 0.0 });
        let f = |a: &DMatrix<f64>| -> f64 {
            let l = Cholesky::new(a.clone()).unwrap().unpack();
            l.component_mul(&w).sum()
        };
        let (l, linv) = cholesky_with_inverse(&a).unwrap();
        let a_bar = cholesky_backward(&l, &linv, &w);
        let h = 1e-6;
        for i in 0..n {
            for j in 0..=i {
                // symmetric perturbation of (i, j) and (j, i)
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[(i, j)] += h;
                am[(i, j)] -= h;
                if i != j {
                    ap[(j, i)] += h;
                    am[(j, i)] -= h;
                }
                let fd = (f(&ap) - f(&am)) / (2.0 * h);
                let an = if i == j { a_bar[(i, i)] } else { a_bar[(i, j)] + a_bar[(j, i)] };
                assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "({i},{j}) fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn strided_products_match_nalgebra() {
        let a = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 - 2.5);
        let b = DMatrix::from_fn(4, 5, |i, j| libm::cos((i + 2 * j) as f64));
        let c = DMatrix::from_fn(3, 5, |i, j| (i as f64) * 0.5 - j as f64);
        assert!((mul(&a, true, &b, false) - a.transpose() * &b).amax() < 1e-12);
        assert!((mul(&b, true, &a, false) - b.transpose() * &a).amax() < 1e-12);
        assert!((mul(&a, false, &c, false) - &a * &c).amax() < 1e-12);
        assert!((mul(&c, false, &c, true) - &c * c.transpose()).amax() < 1e-12);
        assert!((mul(&c, true, &a, true) - c.transpose() * a.transpose()).amax() < 1e-12);
        assert_eq!(mul(&DMatrix::zeros(2, 0), false, &DMatrix::zeros(0, 3), false), DMatrix::zeros(2, 3));
    }

    #[test]
    fn blocked_factor_matches_reference() {
        for n in [1, 5, 64, 65, 150] {
            let a = spd(n) + DMatrix::identity(n, n) * n as f64;
            let (l, linv) = cholesky_with_inverse(&a).unwrap();
            let reference = Cholesky::new(a.clone()).unwrap().unpack();
            assert!((&l - &reference).amax() < 1e-9 * a.amax(), "n={n}");
            assert!((&l * &linv - DMatrix::identity(n, n)).amax() < 1e-10, "n={n}");
            for j in 0..n {
                for i in 0..j {
                    assert_eq!(l[(i, j)], 0.0);
                    assert_eq!(linv[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn jitter_escalates_on_singular_input() {
        let k = DMatrix::from_element(3, 3, 1.0);
        let (l, _, jitter) = cholesky_jittered(&k, JITTER_START).unwrap();
        assert!(jitter >= JITTER_START);
        let rebuilt = &l * l.transpose();
        assert!((rebuilt[(0, 0)] - 1.0 - jitter).abs() < 1e-12);
    }

    #[test]
    fn negative_definite_fails() {
        let k = DMatrix::from_element(2, 2, -1.0);
        assert!(matches!(cholesky_jittered(&k, JITTER_START), Err(Error::Cholesky { .. })));
    }
}
