//! Small dense complex linear-algebra routines: Hermitian eigensolver and
//! LU-based solve/inverse. Sized for the Hilbert spaces used here (dim ≤ a few
//! hundred), so no external LAPACK backend is pulled in.

use ndarray::Array2;
use num_complex::Complex64 as C64;

/// Eigenvalues and eigenvectors of a Hermitian matrix via cyclic Jacobi
/// rotations. Returns eigenvalues in ascending order; column `k` of the
/// returned matrix is the eigenvector for eigenvalue `k`.
///
/// The input is assumed Hermitian; only the Hermitian part is diagonalized.
pub fn hermitian_eig(mat: &Array2<C64>) -> (Vec<f64>, Array2<C64>) {
    let n = mat.nrows();
    assert_eq!(n, mat.ncols(), "hermitian_eig: matrix must be square");
    // Work on the explicitly Hermitized copy to wash out representation noise.
    let mut a = Array2::<C64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] = 0.5 * (mat[[i, j]] + mat[[j, i]].conj());
        }
    }
    let mut v = Array2::<C64>::eye(n);
    if n <= 1 {
        let vals = (0..n).map(|i| a[[i, i]].re).collect();
        return (vals, v);
    }

    let norm: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let tol = (norm * 1e-15).max(f64::MIN_POSITIVE);
    for _sweep in 0..60 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.norm() <= tol / (n as f64) {
                    continue;
                }
                // Diagonalize the 2x2 Hermitian block [[app, apq], [apq*, aqq]].
                let app = a[[p, p]].re;
                let aqq = a[[q, q]].re;
                let phase = apq / apq.norm();
                let theta = 0.5 * (2.0 * apq.norm()).atan2(app - aqq);
                let c = theta.cos();
                let s_conj = phase.conj() * theta.sin();
                // Columns: apply the rotation on both sides.
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = akp * c + akq * s_conj.conj();
                    a[[k, q]] = -akp * s_conj + akq * c;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = apk * c + aqk * s_conj;
                    a[[q, k]] = -apk * s_conj.conj() + aqk * c;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = vkp * c + vkq * s_conj.conj();
                    v[[k, q]] = -vkp * s_conj + vkq * c;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].re.partial_cmp(&a[[j, j]].re).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| a[[i, i]].re).collect();
    let mut vecs = Array2::<C64>::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vecs[[k, new_col]] = v[[k, old_col]];
        }
    }
    (vals, vecs)
}

/// Eigenvalues only, ascending.
pub fn hermitian_eigenvalues(mat: &Array2<C64>) -> Vec<f64> {
    hermitian_eig(mat).0
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(mat: &Array2<C64>) -> f64 {
    hermitian_eigenvalues(mat)[0]
}

/// Solve A X = B for X with partial-pivot LU. Panics on singular input to
/// machine precision; callers pass well-conditioned physics matrices.
pub fn solve(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "solve: matrix must be square");
    assert_eq!(n, b.nrows(), "solve: dimension mismatch");
    let m = b.ncols();
    let mut lu = a.clone();
    let mut x = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();

    for col in 0..n {
        let (pivot_row, pivot_mag) = (col..n)
            .map(|r| (r, lu[[r, col]].norm()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        assert!(pivot_mag > 1e-300, "solve: singular matrix");
        if pivot_row != col {
            perm.swap(col, pivot_row);
            for k in 0..n {
                let tmp = lu[[col, k]];
                lu[[col, k]] = lu[[pivot_row, k]];
                lu[[pivot_row, k]] = tmp;
            }
            for k in 0..m {
                let tmp = x[[col, k]];
                x[[col, k]] = x[[pivot_row, k]];
                x[[pivot_row, k]] = tmp;
            }
        }
        let pivot = lu[[col, col]];
        for r in (col + 1)..n {
            let factor = lu[[r, col]] / pivot;
            lu[[r, col]] = factor;
            for k in (col + 1)..n {
                let sub = factor * lu[[col, k]];
                lu[[r, k]] -= sub;
            }
            for k in 0..m {
                let sub = factor * x[[col, k]];
                x[[r, k]] -= sub;
            }
        }
    }
    // Back substitution.
    for col in (0..n).rev() {
        for k in 0..m {
            let mut acc = x[[col, k]];
            for j in (col + 1)..n {
                acc -= lu[[col, j]] * x[[j, k]];
            }
            x[[col, k]] = acc / lu[[col, col]];
        }
    }
    x
}

/// Matrix inverse via [`solve`] against the identity.
pub fn invert(a: &Array2<C64>) -> Array2<C64> {
    let n = a.nrows();
    solve(a, &Array2::<C64>::eye(n))
}
