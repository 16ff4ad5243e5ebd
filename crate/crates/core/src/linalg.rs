//! Dense complex-matrix helpers for small Hilbert spaces.
//!
//! Every matrix in this crate is at most 144×144 (the vectorized density
//! matrix of the largest protocol space), so everything here is plain dense
//! arithmetic: commutators, a cyclic Jacobi eigensolver for Hermitian
//! matrices, and a scaling-and-squaring matrix exponential for Liouvillian
//! superoperators.

use ndarray::{self as nd, Array2};
use num_complex::Complex64 as C64;

/// Dense complex matrix, the lingua franca of all dynamics.
pub type CMat = Array2<C64>;

/// Compute the commutator `[A, B] = A B - B A`.
pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a.dot(b) - b.dot(a)
}

/// Compute the anti-commutator `{A, B} = A B + B A`.
pub fn anti_commutator(a: &CMat, b: &CMat) -> CMat {
    a.dot(b) + b.dot(a)
}

/// Conjugate transpose.
pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

/// Trace of a square matrix.
pub fn trace(a: &CMat) -> C64 {
    a.diag().iter().copied().sum()
}

/// Largest entrywise deviation from Hermiticity, `max |A - A†|`.
pub fn hermiticity_error(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (a[[i, j]] - a[[j, i]].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Largest entrywise absolute difference between two matrices.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    nd::Zip::from(a)
        .and(b)
        .fold(0.0f64, |acc, x, y| acc.max((x - y).norm()))
}

/// Matrix 1-norm (maximum absolute column sum).
pub fn norm_one(a: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for col in a.columns() {
        let s: f64 = col.iter().map(|z| z.norm()).sum();
        if s > worst {
            worst = s;
        }
    }
    worst
}

/// `out = a · b` without intermediate allocation, plain ikj loop.
pub fn matmul_into(out: &mut CMat, a: &CMat, b: &CMat) {
    let (n, m) = (a.nrows(), b.ncols());
    let k_dim = a.ncols();
    debug_assert_eq!(k_dim, b.nrows());
    debug_assert_eq!(out.dim(), (n, m));
    out.fill(C64::new(0.0, 0.0));
    let bs = b.as_slice().expect("matmul_into: b not contiguous");
    let os = out.as_slice_mut().expect("matmul_into: out not contiguous");
    for i in 0..n {
        for k in 0..k_dim {
            let aik = a[[i, k]];
            if aik == C64::new(0.0, 0.0) {
                continue;
            }
            let brow = &bs[k * m..(k + 1) * m];
            let orow = &mut os[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// Eigenvalues and eigenvectors of a Hermitian matrix by cyclic Jacobi
/// rotations. Returns eigenvalues in ascending order with the matching
/// eigenvectors as columns.
///
/// Converges quadratically; perfectly adequate for the dim <= 144 matrices
/// used here and keeps the crate free of a LAPACK backend.
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "hermitian_eigen: matrix must be square");
    let mut m = a.clone();
    let mut v: CMat = Array2::eye(n);

    let off_norm = |m: &CMat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[[i, j]].norm_sqr();
                }
            }
        }
        s.sqrt()
    };
    let scale: f64 = (0..n).map(|i| m[[i, i]].norm()).fold(off_norm(&m), f64::max);
    let tol = 1e-14 * scale.max(1e-300);

    for _sweep in 0..60 {
        if off_norm(&m) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.norm() <= tol / (n as f64) {
                    continue;
                }
                // Unitary 2x2 rotation annihilating the (p, q) element:
                // first remove the phase of a_pq, then a real Jacobi rotation.
                let app = m[[p, p]].re;
                let aqq = m[[q, q]].re;
                let abs_apq = apq.norm();
                let phase = apq / C64::new(abs_apq, 0.0);
                let theta = 0.5 * (2.0 * abs_apq).atan2(aqq - app);
                let (s, c) = theta.sin_cos();
                let sp = phase * C64::new(s, 0.0);

                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = mkp * c - mkq * sp.conj();
                    m[[k, q]] = mkp * sp + mkq * c;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = mpk * c - mqk * sp;
                    m[[q, k]] = mpk * sp.conj() + mqk * c;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = vkp * c - vkq * sp.conj();
                    v[[k, q]] = vkp * sp + vkq * c;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let evals_raw: Vec<f64> = (0..n).map(|i| m[[i, i]].re).collect();
    order.sort_by(|&i, &j| evals_raw[i].partial_cmp(&evals_raw[j]).unwrap());
    let evals: Vec<f64> = order.iter().map(|&i| evals_raw[i]).collect();
    let mut vecs: CMat = Array2::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vecs[[k, new_col]] = v[[k, old_col]];
        }
    }
    (evals, vecs)
}

/// Eigenvalues only, ascending.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    hermitian_eigen(a).0
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(a: &CMat) -> f64 {
    hermitian_eigenvalues(a)[0]
}

/// Matrix exponential `exp(A)` by scaling and squaring with a Taylor core.
///
/// Intended for Liouvillian superoperators whose exponential is a
/// contraction; the Taylor series is evaluated at 1-norm <= 0.25, where
/// 20 terms leave a truncation error far below f64 roundoff.
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm: matrix must be square");
    let norm = norm_one(a);
    let s = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.mapv(|z| z / C64::new(2f64.powi(s as i32), 0.0));

    let mut result: CMat = Array2::eye(n);
    let mut term: CMat = Array2::eye(n);
    let mut scratch: CMat = Array2::zeros((n, n));
    for k in 1..=20u32 {
        matmul_into(&mut scratch, &term, &scaled);
        scratch.mapv_inplace(|z| z / C64::new(k as f64, 0.0));
        term.assign(&scratch);
        result += &term;
    }
    for _ in 0..s {
        matmul_into(&mut scratch, &result, &result);
        std::mem::swap(&mut result, &mut scratch);
    }
    result
}
