//! Composite-Hilbert-space operator algebra: construction, composition, and
//! evaluation of operators and states for multi-ion/multi-mode systems.
//!
//! All values are immutable after construction; dense complex matrices are the
//! default representation, with a sparse mirror used by the integrator above
//! total dimension 128 (see [`crate::dynamics`]).

pub mod linalg;
pub mod sparse;

use ndarray::{linalg::kron, Array1, Array2};
use num_complex::Complex64 as C64;
use thiserror::Error;

pub use sparse::SparseOp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcoreError {
    #[error("Hilbert space factors must all have dimension >= 1")]
    EmptyFactor,
    #[error("space mismatch: expected {expected:?}, got {got:?}")]
    SpaceMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("dimension mismatch: operator dim {op_dim} vs factor dim {factor_dim} at slot {slot}")]
    DimensionMismatch { op_dim: usize, factor_dim: usize, slot: usize },
    #[error("slot index {slot} out of range for a space with {num_factors} factors")]
    SlotOutOfRange { slot: usize, num_factors: usize },
    #[error("matrix shape {rows}x{cols} does not match space dimension {dim}")]
    ShapeMismatch { rows: usize, cols: usize, dim: usize },
}

/// Ordered list of subsystem dimensions, e.g. `[6, 6, 3, 3]` for two six-level
/// ions and two cavity modes truncated at two photons.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct HilbertSpace {
    factors: Vec<usize>,
}

impl HilbertSpace {
    pub fn new(factors: &[usize]) -> Result<Self, QcoreError> {
        if factors.is_empty() || factors.iter().any(|&d| d == 0) {
            return Err(QcoreError::EmptyFactor);
        }
        Ok(Self { factors: factors.to_vec() })
    }

    /// Total dimension (product of factors).
    pub fn dim(&self) -> usize {
        self.factors.iter().product()
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    /// Row-major strides: the first factor varies slowest.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.factors.len()];
        for i in (0..self.factors.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.factors[i + 1];
        }
        strides
    }

    /// Flat index of a multi-index like `[ion1_level, ion2_level, n_a, n_b]`.
    pub fn index_of(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.factors.len());
        debug_assert!(multi.iter().zip(&self.factors).all(|(&m, &d)| m < d));
        multi.iter().zip(self.strides()).map(|(&m, s)| m * s).sum()
    }

    /// Multi-index of a flat basis index.
    pub fn decompose(&self, index: usize) -> Vec<usize> {
        let mut rem = index;
        self.strides()
            .iter()
            .map(|&s| {
                let q = rem / s;
                rem %= s;
                q
            })
            .collect()
    }

    /// Concatenation of factor lists (the space of a tensor product).
    pub fn compose(&self, other: &HilbertSpace) -> HilbertSpace {
        let mut factors = self.factors.clone();
        factors.extend_from_slice(&other.factors);
        HilbertSpace { factors }
    }
}

/// Dense complex operator tagged with its space signature.
#[derive(Clone, Debug)]
pub struct Operator {
    space: HilbertSpace,
    mat: Array2<C64>,
}

impl Operator {
    pub fn from_matrix(space: HilbertSpace, mat: Array2<C64>) -> Result<Self, QcoreError> {
        if mat.nrows() != space.dim() || mat.ncols() != space.dim() {
            return Err(QcoreError::ShapeMismatch {
                rows: mat.nrows(),
                cols: mat.ncols(),
                dim: space.dim(),
            });
        }
        Ok(Self { space, mat })
    }

    pub fn identity(space: &HilbertSpace) -> Self {
        Self { space: space.clone(), mat: Array2::eye(space.dim()) }
    }

    pub fn zeros(space: &HilbertSpace) -> Self {
        Self { space: space.clone(), mat: Array2::zeros((space.dim(), space.dim())) }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.mat
    }

    pub fn dagger(&self) -> Self {
        let n = self.mat.nrows();
        let mut out = Array2::<C64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] = self.mat[[j, i]].conj();
            }
        }
        Self { space: self.space.clone(), mat: out }
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self { space: self.space.clone(), mat: self.mat.mapv(|z| z * factor) }
    }

    pub fn scaled_re(&self, factor: f64) -> Self {
        self.scaled(C64::new(factor, 0.0))
    }

    /// Largest deviation from Hermiticity, entrywise.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.mat.nrows();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.mat[[i, j]] - self.mat[[j, i]].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let prod = self.dagger().mat.dot(&self.mat);
        let eye = Array2::<C64>::eye(self.mat.nrows());
        prod.iter().zip(eye.iter()).all(|(a, b)| (a - b).norm() <= tol)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector, QcoreError> {
        check_spaces(&self.space, &state.space)?;
        Ok(StateVector { space: state.space.clone(), amp: self.mat.dot(&state.amp) })
    }

    /// `self * other`, with matching spaces.
    pub fn matmul(&self, other: &Operator) -> Operator {
        assert_eq!(self.space, other.space, "operator product: space mismatch");
        Operator { space: self.space.clone(), mat: self.mat.dot(&other.mat) }
    }

    pub fn add(&self, other: &Operator) -> Operator {
        assert_eq!(self.space, other.space, "operator sum: space mismatch");
        Operator { space: self.space.clone(), mat: &self.mat + &other.mat }
    }

    pub fn sub(&self, other: &Operator) -> Operator {
        assert_eq!(self.space, other.space, "operator difference: space mismatch");
        Operator { space: self.space.clone(), mat: &self.mat - &other.mat }
    }
}

/// Kronecker product of operators in operand order; the resulting space is the
/// concatenation of the operand factor lists.
pub fn tensor(ops: &[&Operator]) -> Operator {
    assert!(!ops.is_empty(), "tensor: empty operand list");
    let mut mat = ops[0].mat.clone();
    let mut space = ops[0].space.clone();
    for op in &ops[1..] {
        mat = kron(&mat, &op.mat);
        space = space.compose(&op.space);
    }
    Operator { space, mat }
}

/// Embed a single-factor operator at `slot`, acting as identity elsewhere.
pub fn embed(op: &Operator, slot: usize, space: &HilbertSpace) -> Result<Operator, QcoreError> {
    if slot >= space.num_factors() {
        return Err(QcoreError::SlotOutOfRange { slot, num_factors: space.num_factors() });
    }
    let factor_dim = space.factors()[slot];
    if op.space.dim() != factor_dim {
        return Err(QcoreError::DimensionMismatch { op_dim: op.space.dim(), factor_dim, slot });
    }
    let left_dim: usize = space.factors()[..slot].iter().product();
    let right_dim: usize = space.factors()[slot + 1..].iter().product();
    let mut mat = op.mat.clone();
    if left_dim > 1 {
        mat = kron(&Array2::<C64>::eye(left_dim), &mat);
    }
    if right_dim > 1 {
        mat = kron(&mat, &Array2::<C64>::eye(right_dim));
    }
    Ok(Operator { space: space.clone(), mat })
}

/// Fock-space annihilation operator on `n_max + 1` levels:
/// `<n-1| a |n> = sqrt(n)`.
pub fn annihilation(n_max: usize) -> Operator {
    assert!(n_max >= 1, "annihilation: n_max must be >= 1");
    let dim = n_max + 1;
    let mut mat = Array2::<C64>::zeros((dim, dim));
    for n in 1..dim {
        mat[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
    }
    Operator { space: HilbertSpace::new(&[dim]).unwrap(), mat }
}

/// `|to><from|` on a single `dim`-level factor.
pub fn level_transition(dim: usize, to: usize, from: usize) -> Operator {
    assert!(to < dim && from < dim);
    let mut mat = Array2::<C64>::zeros((dim, dim));
    mat[[to, from]] = C64::new(1.0, 0.0);
    Operator { space: HilbertSpace::new(&[dim]).unwrap(), mat }
}

/// Projector onto one level of a single factor.
pub fn projector(dim: usize, level: usize) -> Operator {
    level_transition(dim, level, level)
}

pub fn commutator(a: &Operator, b: &Operator) -> Operator {
    a.matmul(b).sub(&b.matmul(a))
}

/// `Tr(rho * op)`; real to within tolerance when `op` is Hermitian.
pub fn expectation(rho: &DensityMatrix, op: &Operator) -> Result<C64, QcoreError> {
    check_spaces(&op.space, &rho.space)?;
    let n = rho.mat.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += rho.mat[[i, k]] * op.mat[[k, i]];
        }
    }
    Ok(acc)
}

/// Trace out all factors not listed in `keep` (ascending slot indices).
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix, QcoreError> {
    let nf = rho.space.num_factors();
    for &slot in keep {
        if slot >= nf {
            return Err(QcoreError::SlotOutOfRange { slot, num_factors: nf });
        }
    }
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    let traced: Vec<usize> = (0..nf).filter(|s| !keep.contains(s)).collect();

    let kept_factors: Vec<usize> = keep.iter().map(|&s| rho.space.factors()[s]).collect();
    let out_space = HilbertSpace::new(&kept_factors)?;
    let out_dim = out_space.dim();
    let mut out = Array2::<C64>::zeros((out_dim, out_dim));

    let strides = rho.space.strides();
    let traced_dims: Vec<usize> = traced.iter().map(|&s| rho.space.factors()[s]).collect();
    let traced_total: usize = traced_dims.iter().product::<usize>().max(1);

    // Enumerate kept bra/ket multi-indices and sum over the traced factors.
    for row_out in 0..out_dim {
        let row_multi = out_space.decompose(row_out);
        for col_out in 0..out_dim {
            let col_multi = out_space.decompose(col_out);
            let mut acc = C64::new(0.0, 0.0);
            for t in 0..traced_total {
                // Shared traced multi-index for bra and ket.
                let mut rem = t;
                let mut row_full = 0usize;
                let mut col_full = 0usize;
                for (pos, &slot) in traced.iter().enumerate() {
                    let d: usize = traced_dims[pos + 1..].iter().product::<usize>().max(1);
                    let idx = rem / d;
                    rem %= d;
                    row_full += idx * strides[slot];
                    col_full += idx * strides[slot];
                }
                for (pos, &slot) in keep.iter().enumerate() {
                    row_full += row_multi[pos] * strides[slot];
                    col_full += col_multi[pos] * strides[slot];
                }
                acc += rho.mat[[row_full, col_full]];
            }
            out[[row_out, col_out]] = acc;
        }
    }
    Ok(DensityMatrix { space: out_space, mat: out })
}

/// Complex state vector tagged with its space signature.
#[derive(Clone, Debug)]
pub struct StateVector {
    space: HilbertSpace,
    amp: Array1<C64>,
}

impl StateVector {
    pub fn from_amplitudes(space: HilbertSpace, amp: Array1<C64>) -> Result<Self, QcoreError> {
        if amp.len() != space.dim() {
            return Err(QcoreError::ShapeMismatch { rows: amp.len(), cols: 1, dim: space.dim() });
        }
        Ok(Self { space, amp })
    }

    /// Basis state `|multi>` with unit amplitude.
    pub fn basis(space: &HilbertSpace, multi: &[usize]) -> Self {
        let mut amp = Array1::<C64>::zeros(space.dim());
        amp[space.index_of(multi)] = C64::new(1.0, 0.0);
        Self { space: space.clone(), amp }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amp
    }

    pub fn norm(&self) -> f64 {
        self.amp.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        assert!(n > 0.0, "cannot normalize the zero vector");
        Self { space: self.space.clone(), amp: self.amp.mapv(|z| z / n) }
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self { space: self.space.clone(), amp: self.amp.mapv(|z| z * factor) }
    }

    pub fn add(&self, other: &StateVector) -> StateVector {
        assert_eq!(self.space, other.space, "state sum: space mismatch");
        StateVector { space: self.space.clone(), amp: &self.amp + &other.amp }
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        assert_eq!(self.space, other.space, "inner product: space mismatch");
        self.amp.iter().zip(other.amp.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn tensor(&self, other: &StateVector) -> StateVector {
        let space = self.space.compose(&other.space);
        let mut amp = Array1::<C64>::zeros(space.dim());
        let n2 = other.amp.len();
        for (i, a) in self.amp.iter().enumerate() {
            for (j, b) in other.amp.iter().enumerate() {
                amp[i * n2 + j] = a * b;
            }
        }
        StateVector { space, amp }
    }

    pub fn to_density(&self) -> DensityMatrix {
        let n = self.amp.len();
        let mut mat = Array2::<C64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                mat[[i, j]] = self.amp[i] * self.amp[j].conj();
            }
        }
        DensityMatrix { space: self.space.clone(), mat }
    }
}

/// Default validation tolerances for density matrices; overridable per call.
pub const TRACE_TOL: f64 = 1e-9;
pub const HERMITICITY_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-9;

/// Complex square matrix with unit trace, Hermitian and positive to tolerance.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    space: HilbertSpace,
    mat: Array2<C64>,
}

impl DensityMatrix {
    pub fn from_matrix(space: HilbertSpace, mat: Array2<C64>) -> Result<Self, QcoreError> {
        if mat.nrows() != space.dim() || mat.ncols() != space.dim() {
            return Err(QcoreError::ShapeMismatch {
                rows: mat.nrows(),
                cols: mat.ncols(),
                dim: space.dim(),
            });
        }
        Ok(Self { space, mat })
    }

    pub fn from_pure(state: &StateVector) -> Self {
        state.to_density()
    }

    /// Maximally mixed state on `space`.
    pub fn maximally_mixed(space: &HilbertSpace) -> Self {
        let d = space.dim();
        let mat = Array2::<C64>::eye(d).mapv(|z| z / d as f64);
        Self { space: space.clone(), mat }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.mat
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<C64> {
        &mut self.mat
    }

    pub fn trace(&self) -> C64 {
        (0..self.mat.nrows()).map(|i| self.mat[[i, i]]).sum()
    }

    pub fn purity(&self) -> f64 {
        let n = self.mat.nrows();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self.mat[[i, j]] * self.mat[[j, i]]).re;
            }
        }
        acc
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.mat.nrows();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.mat[[i, j]] - self.mat[[j, i]].conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.mat)
    }

    pub fn von_neumann_entropy(&self) -> f64 {
        linalg::hermitian_eigenvalues(&self.mat)
            .into_iter()
            .filter(|&l| l > 1e-15)
            .map(|l| -l * l.ln())
            .sum()
    }

    /// Check the trace/Hermiticity/positivity invariants at the given
    /// tolerances, returning the first violated quantity.
    pub fn validate(&self, trace_tol: f64, herm_tol: f64, pos_tol: f64) -> Result<(), String> {
        let tr = self.trace();
        if (tr.re - 1.0).abs() > trace_tol || tr.im.abs() > trace_tol {
            return Err(format!("trace = {tr} deviates from 1 beyond {trace_tol}"));
        }
        let herm = self.hermiticity_defect();
        if herm > herm_tol {
            return Err(format!("hermiticity defect {herm} beyond {herm_tol}"));
        }
        let min = self.min_eigenvalue();
        if min < -pos_tol {
            return Err(format!("minimum eigenvalue {min} below -{pos_tol}"));
        }
        Ok(())
    }

    /// Convex mixture `p * self + (1 - p) * other`.
    pub fn mix(&self, other: &DensityMatrix, p: f64) -> DensityMatrix {
        assert_eq!(self.space, other.space, "mix: space mismatch");
        let mat = self.mat.mapv(|z| z * p) + other.mat.mapv(|z| z * (1.0 - p));
        DensityMatrix { space: self.space.clone(), mat }
    }

    /// `U rho U^dagger` for a (not necessarily unitary) map `u`.
    pub fn conjugate(&self, u: &Operator) -> DensityMatrix {
        assert_eq!(self.space, u.space, "conjugate: space mismatch");
        let mat = u.mat.dot(&self.mat).dot(&u.dagger().mat);
        DensityMatrix { space: self.space.clone(), mat }
    }

    /// Overlap `<psi| rho |psi>` with a pure state.
    pub fn overlap(&self, psi: &StateVector) -> f64 {
        assert_eq!(self.space, psi.space, "overlap: space mismatch");
        let v = self.mat.dot(&psi.amp);
        psi.amp.iter().zip(v.iter()).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

fn check_spaces(expected: &HilbertSpace, got: &HilbertSpace) -> Result<(), QcoreError> {
    if expected != got {
        return Err(QcoreError::SpaceMismatch {
            expected: expected.factors().to_vec(),
            got: got.factors().to_vec(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn tensor_of_identities_is_identity() {
        let i2 = Operator::identity(&HilbertSpace::new(&[2]).unwrap());
        let i3 = Operator::identity(&HilbertSpace::new(&[3]).unwrap());
        let prod = tensor(&[&i2, &i3]);
        assert_eq!(prod.space().factors(), &[2, 3]);
        assert_eq!(prod.space().dim(), 6);
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!((prod.matrix()[[i, j]] - c(expect)).norm(), 0.0);
            }
        }
    }

    #[test]
    fn lowering_in_first_slot_only_acts_there() {
        // sigma_- (2-level) x identity(2) annihilates |e> only in slot 1.
        let lower = level_transition(2, 0, 1); // |g><e|
        let id = Operator::identity(&HilbertSpace::new(&[2]).unwrap());
        let op = tensor(&[&lower, &id]);
        let space = op.space().clone();
        let eg = StateVector::basis(&space, &[1, 0]);
        let out = op.apply(&eg).unwrap();
        let gg = StateVector::basis(&space, &[0, 0]);
        assert_abs_diff_eq!((out.inner(&gg) - c(1.0)).norm(), 0.0, epsilon = 1e-15);
        // |g,e> is annihilated.
        let ge = StateVector::basis(&space, &[0, 1]);
        assert_abs_diff_eq!(op.apply(&ge).unwrap().norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn creation_tensor_identity_matrix_elements() {
        // Oracle: direct matrix construction. a^dag (trunc 3) x id(2):
        // <1,k| . |0,k> = 1 for all k.
        let adag = annihilation(3).dagger();
        let id = Operator::identity(&HilbertSpace::new(&[2]).unwrap());
        let op = tensor(&[&adag, &id]);
        let space = op.space().clone();
        for k in 0..2 {
            let row = space.index_of(&[1, k]);
            let col = space.index_of(&[0, k]);
            assert_abs_diff_eq!((op.matrix()[[row, col]] - c(1.0)).norm(), 0.0);
        }
        // Direct construction of the full matrix as the oracle.
        let mut oracle = Array2::<C64>::zeros((8, 8));
        for n in 0..3usize {
            for k in 0..2usize {
                oracle[[(n + 1) * 2 + k, n * 2 + k]] = c(((n + 1) as f64).sqrt());
            }
        }
        for i in 0..8 {
            for j in 0..8 {
                assert_abs_diff_eq!((op.matrix()[[i, j]] - oracle[[i, j]]).norm(), 0.0);
            }
        }
    }

    #[test]
    fn embed_matches_manual_tensor_and_commutes_across_slots() {
        let space = HilbertSpace::new(&[2, 2]).unwrap();
        let lower = level_transition(2, 0, 1);
        let emb = embed(&lower, 0, &space).unwrap();
        let eg = StateVector::basis(&space, &[1, 0]);
        let out = emb.apply(&eg).unwrap();
        assert_abs_diff_eq!(
            (out.inner(&StateVector::basis(&space, &[0, 0])) - c(1.0)).norm(),
            0.0
        );

        // embed(a, slot 2, [6,6,3]) annihilates the vacuum component.
        let big = HilbertSpace::new(&[6, 6, 3]).unwrap();
        let a = annihilation(2);
        let a_emb = embed(&a, 2, &big).unwrap();
        let vac = StateVector::basis(&big, &[3, 1, 0]);
        assert_abs_diff_eq!(a_emb.apply(&vac).unwrap().norm(), 0.0);

        // Numerical commutator oracle: embeds in distinct slots commute.
        let x = annihilation(2);
        let y = level_transition(6, 2, 0);
        let ex = embed(&x, 2, &big).unwrap();
        let ey = embed(&y, 0, &big).unwrap();
        assert_abs_diff_eq!(commutator(&ex, &ey).frobenius_norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn embed_rejects_dimension_mismatch() {
        let space = HilbertSpace::new(&[2, 3]).unwrap();
        let a = annihilation(2); // dim 3
        assert!(matches!(
            embed(&a, 0, &space),
            Err(QcoreError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            embed(&a, 5, &space),
            Err(QcoreError::SlotOutOfRange { .. })
        ));
    }

    #[test]
    fn annihilation_defining_relations() {
        let a = annihilation(2);
        let space = a.space().clone();
        // a|2> = sqrt(2)|1>
        let two = StateVector::basis(&space, &[2]);
        let out = a.apply(&two).unwrap();
        let one = StateVector::basis(&space, &[1]);
        assert_abs_diff_eq!((out.inner(&one) - c(2.0_f64.sqrt())).norm(), 0.0);
        // a|0> = 0
        let vac = StateVector::basis(&space, &[0]);
        assert_abs_diff_eq!(a.apply(&vac).unwrap().norm(), 0.0);
        // Matrix commutator oracle: [a, a^dag] = 1 on n < n_max.
        let comm = commutator(&a, &a.dagger());
        for n in 0..2 {
            assert_abs_diff_eq!((comm.matrix()[[n, n]] - c(1.0)).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn expectation_identities_and_thermal_mixture() {
        let space = HilbertSpace::new(&[3]).unwrap();
        let a = annihilation(2);
        let number = a.dagger().matmul(&a);
        let id = Operator::identity(&space);

        let fock1 = DensityMatrix::from_pure(&StateVector::basis(&space, &[1]));
        assert_abs_diff_eq!(expectation(&fock1, &id).unwrap().re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(expectation(&fock1, &number).unwrap().re, 1.0, epsilon = 1e-12);

        // Hand computation: 0.7|0><0| + 0.3|1><1| gives <n> = 0.3.
        let vac = DensityMatrix::from_pure(&StateVector::basis(&space, &[0]));
        let thermal = vac.mix(&fock1, 0.7);
        assert_abs_diff_eq!(expectation(&thermal, &number).unwrap().re, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(expectation(&thermal, &number).unwrap().im, 0.0, epsilon = 1e-12);

        // Space mismatch is an error.
        let other = DensityMatrix::maximally_mixed(&HilbertSpace::new(&[2]).unwrap());
        assert!(expectation(&other, &number).is_err());
    }

    #[test]
    fn partial_trace_recovers_product_factors() {
        let space_a = HilbertSpace::new(&[2]).unwrap();
        let space_b = HilbertSpace::new(&[3]).unwrap();
        let psi_a = StateVector::from_amplitudes(
            space_a.clone(),
            ndarray::array![c(0.6), C64::new(0.0, 0.8)],
        )
        .unwrap();
        let psi_b = StateVector::basis(&space_b, &[2]);
        let joint = DensityMatrix::from_pure(&psi_a.tensor(&psi_b));

        let red_a = partial_trace(&joint, &[0]).unwrap();
        let red_b = partial_trace(&joint, &[1]).unwrap();
        assert_abs_diff_eq!(red_a.trace().re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(red_b.trace().re, 1.0, epsilon = 1e-12);
        let expect_a = DensityMatrix::from_pure(&psi_a);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(
                    (red_a.matrix()[[i, j]] - expect_a.matrix()[[i, j]]).norm(),
                    0.0,
                    epsilon = 1e-12
                );
            }
        }
        assert_abs_diff_eq!((red_b.matrix()[[2, 2]] - c(1.0)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn partial_trace_of_bell_state_is_maximally_mixed() {
        // Direct computation oracle for a maximally entangled 2x2 state.
        let space = HilbertSpace::new(&[2, 2]).unwrap();
        let bell = StateVector::basis(&space, &[0, 0])
            .add(&StateVector::basis(&space, &[1, 1]))
            .scaled(c(1.0 / 2.0_f64.sqrt()));
        let rho = DensityMatrix::from_pure(&bell);
        let red = partial_trace(&rho, &[0]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 0.5 } else { 0.0 };
                assert_abs_diff_eq!((red.matrix()[[i, j]] - c(expect)).norm(), 0.0, epsilon = 1e-12);
            }
        }
        // Entropy of the marginal is ln 2.
        assert_abs_diff_eq!(red.von_neumann_entropy(), 2.0_f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn density_matrix_validation_catches_bad_inputs() {
        let space = HilbertSpace::new(&[2]).unwrap();
        let good = DensityMatrix::maximally_mixed(&space);
        assert!(good.validate(TRACE_TOL, HERMITICITY_TOL, POSITIVITY_TOL).is_ok());

        let mut bad = good.clone();
        bad.matrix_mut()[[0, 1]] = c(2.0);
        assert!(bad.validate(TRACE_TOL, HERMITICITY_TOL, POSITIVITY_TOL).is_err());
    }
}
