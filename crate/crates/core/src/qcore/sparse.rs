//! Compressed sparse operators for the master-equation hot path.
//!
//! Hamiltonians and collapse operators on the composite spaces used here are
//! extremely sparse (a few entries per row), so the integrator works with
//! entry lists applied to dense density matrices instead of dense matmuls.

use ndarray::Array2;
use num_complex::Complex64 as C64;

/// Sparse square operator stored as row-sorted (row, col, value) triplets.
#[derive(Clone, Debug)]
pub struct SparseOp {
    pub dim: usize,
    entries: Vec<(u32, u32, C64)>,
}

impl SparseOp {
    /// Extract the nonzero pattern of a dense matrix. Entries with magnitude
    /// below `drop_tol` times the largest magnitude are discarded.
    pub fn from_dense(mat: &Array2<C64>, drop_tol: f64) -> Self {
        let dim = mat.nrows();
        let max = mat.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
        let cut = max * drop_tol;
        let mut entries = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                let z = mat[[i, j]];
                if z.norm() > cut && z.norm() > 0.0 {
                    entries.push((i as u32, j as u32, z));
                }
            }
        }
        Self { dim, entries }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Visit every stored entry as `(row, col, value)`.
    pub fn for_each<F: FnMut(usize, usize, C64)>(&self, mut f: F) {
        for &(i, j, v) in &self.entries {
            f(i as usize, j as usize, v);
        }
    }

    pub fn adjoint(&self) -> Self {
        let mut entries: Vec<(u32, u32, C64)> = self
            .entries
            .iter()
            .map(|&(i, j, v)| (j, i, v.conj()))
            .collect();
        entries.sort_by_key(|&(i, j, _)| (i, j));
        Self { dim: self.dim, entries }
    }

    /// `out += scale * self * rho`, with `rho` and `out` dense row-major
    /// `dim x dim` buffers.
    pub fn left_mul_acc(&self, rho: &[C64], out: &mut [C64], scale: C64) {
        let n = self.dim;
        for &(i, k, v) in &self.entries {
            let coeff = scale * v;
            let src = &rho[(k as usize) * n..(k as usize + 1) * n];
            let dst = &mut out[(i as usize) * n..(i as usize + 1) * n];
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += coeff * s;
            }
        }
    }

    /// `out += scale * rho * self`.
    pub fn right_mul_acc(&self, rho: &[C64], out: &mut [C64], scale: C64) {
        let n = self.dim;
        for &(k, j, v) in &self.entries {
            let coeff = scale * v;
            let (k, j) = (k as usize, j as usize);
            for r in 0..n {
                out[r * n + j] += coeff * rho[r * n + k];
            }
        }
    }

    /// Dense `self * rho` into a fresh buffer (zeroing `out` first).
    pub fn left_mul(&self, rho: &[C64], out: &mut [C64]) {
        out.fill(C64::new(0.0, 0.0));
        self.left_mul_acc(rho, out, C64::new(1.0, 0.0));
    }
}
