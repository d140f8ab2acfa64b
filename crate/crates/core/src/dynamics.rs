//! Master-equation integration and derived observables: temporal photon
//! shapes, detection probabilities, cumulative efficiencies, and the post-hoc
//! imperfection scalings applied to stored density matrices.
//!
//! The integrator is a fixed-step 4th-order Runge-Kutta on the vectorized
//! master equation (step-doubling adaptive control optional). Trace and
//! positivity are monitored, never enforced: violations beyond tolerance
//! abort the run, since silent projection hides integrator bugs. Dark counts
//! are added at analysis time, never inside the quantum model.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LindbladModel, PhysicalParams};
use crate::qcore::{linalg, DensityMatrix, HilbertSpace, Operator, SparseOp};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("trajectory is missing the series '{0}'")]
    MissingSeries(String),
    #[error("window [{0}, {1}] is empty or reversed")]
    EmptyWindow(f64, f64),
    #[error("window [{0}, {1}] lies outside the trajectory span")]
    WindowOutOfRange(f64, f64),
    #[error("trace deviated by {dev:.3e} at t = {t:.3e} s")]
    TraceViolation { t: f64, dev: f64 },
    #[error("density matrix developed eigenvalue {min_eig:.3e} at t = {t:.3e} s")]
    PositivityViolation { t: f64, min_eig: f64 },
    #[error("adaptive controller could not meet tolerance at t = {t:.3e} s (h = {h:.3e})")]
    StepSizeFailure { t: f64, h: f64 },
    #[error("coherence time must be positive")]
    NonPositiveTau,
    #[error("initial state space does not match the model space")]
    SpaceMismatch,
    #[error("invalid integrator configuration: {0}")]
    BadConfig(String),
}

#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    /// Classic RK4 with a fixed step.
    FixedStep { dt: f64 },
    /// RK4 with step-doubling error control.
    Adaptive { rel_tol: f64, abs_tol: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Integration horizon (s).
    pub t_end: f64,
    pub stepper: Stepper,
    /// Histogram bin width for photon shapes (s).
    pub bin_width: f64,
    /// Observable sampling interval (s); `None` samples every step under the
    /// fixed stepper and every `bin_width / 8` under the adaptive one.
    pub sample_dt: Option<f64>,
    /// Abort thresholds for the monitored invariants.
    pub trace_abort_tol: f64,
    pub positivity_abort_tol: f64,
    /// Eigenvalue checks run on every n-th sample (0 disables them).
    pub positivity_check_stride: usize,
}

impl IntegratorConfig {
    pub fn fixed(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            stepper: Stepper::FixedStep { dt },
            bin_width: 1e-6,
            sample_dt: None,
            trace_abort_tol: 1e-6,
            positivity_abort_tol: 1e-6,
            positivity_check_stride: 64,
        }
    }

    pub fn adaptive(t_end: f64, rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            t_end,
            stepper: Stepper::Adaptive { rel_tol, abs_tol },
            bin_width: 1e-6,
            sample_dt: None,
            trace_abort_tol: 1e-6,
            positivity_abort_tol: 1e-6,
            positivity_check_stride: 64,
        }
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.t_end > 0.0) {
            return Err(DynamicsError::BadConfig("t_end must be > 0".into()));
        }
        match self.stepper {
            Stepper::FixedStep { dt } if !(dt > 0.0) => {
                Err(DynamicsError::BadConfig("dt must be > 0".into()))
            }
            Stepper::Adaptive { rel_tol, abs_tol } if !(rel_tol > 0.0 || abs_tol > 0.0) => {
                Err(DynamicsError::BadConfig("tolerances must be > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::fixed(55e-6, 5e-9)
    }
}

/// Time grid with named real observable series.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub series: Vec<(String, Vec<f64>)>,
    pub attempts_normalization: bool,
}

impl Trajectory {
    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.series.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn span(&self) -> (f64, f64) {
        (
            self.times.first().copied().unwrap_or(0.0),
            self.times.last().copied().unwrap_or(0.0),
        )
    }

    /// CSV export: header row, `time_us` plus one column per series, nine
    /// significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_us");
        for (name, _) in &self.series {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (k, &t) in self.times.iter().enumerate() {
            out.push_str(&format!("{:.8e}", t * 1e6));
            for (_, vals) in &self.series {
                out.push_str(&format!(",{:.8e}", vals[k]));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Diagnostics {
    /// Largest |Tr rho - 1| seen at any sample.
    pub max_trace_dev: f64,
    /// Smallest eigenvalue seen at any checked sample.
    pub min_eigenvalue: f64,
    pub steps: u64,
    pub positivity_checks: u32,
}

pub struct EvolveOutput {
    pub trajectory: Trajectory,
    pub final_state: DensityMatrix,
    pub diagnostics: Diagnostics,
    /// Stored snapshots `(t, rho)` when requested via `snapshot_stride`.
    pub snapshots: Vec<(f64, DensityMatrix)>,
}

struct CompiledCollapse {
    l: SparseOp,
    l_dag: SparseOp,
    ldl: SparseOp,
}

struct CompiledModel {
    dim: usize,
    h: SparseOp,
    collapse: Vec<CompiledCollapse>,
}

impl CompiledModel {
    fn new(model: &LindbladModel) -> Self {
        let dim = model.space.dim();
        let h = SparseOp::from_dense(model.hamiltonian.matrix(), 0.0);
        let collapse = model
            .collapse
            .iter()
            .filter(|(_, rate)| *rate > 0.0)
            .map(|(l, rate)| {
                let scaled = l.matrix().mapv(|z| z * rate.sqrt());
                let ldl_mat = l
                    .dagger()
                    .matrix()
                    .dot(l.matrix())
                    .mapv(|z| z * C64::new(*rate, 0.0));
                let l_sp = SparseOp::from_dense(&scaled, 0.0);
                CompiledCollapse {
                    l_dag: l_sp.adjoint(),
                    l: l_sp,
                    ldl: SparseOp::from_dense(&ldl_mat, 0.0),
                }
            })
            .collect();
        Self { dim, h, collapse }
    }

    /// Lindblad right-hand side into `out`; `tmp` is scratch.
    fn rhs(&self, rho: &[C64], out: &mut [C64], tmp: &mut [C64]) {
        out.fill(C64::new(0.0, 0.0));
        self.h.left_mul_acc(rho, out, C64::new(0.0, -1.0));
        self.h.right_mul_acc(rho, out, C64::new(0.0, 1.0));
        let one = C64::new(1.0, 0.0);
        let neg_half = C64::new(-0.5, 0.0);
        for term in &self.collapse {
            term.l.left_mul(rho, tmp);
            term.l_dag.right_mul_acc(tmp, out, one);
            term.ldl.left_mul_acc(rho, out, neg_half);
            term.ldl.right_mul_acc(rho, out, neg_half);
        }
    }
}

fn axpy(dst: &mut [C64], a: f64, x: &[C64]) {
    let a = C64::new(a, 0.0);
    for (d, s) in dst.iter_mut().zip(x.iter()) {
        *d += a * s;
    }
}

fn rk4_step(model: &CompiledModel, rho: &mut Vec<C64>, dt: f64, buf: &mut Rk4Buffers) {
    model.rhs(rho, &mut buf.k1, &mut buf.tmp);
    buf.stage.copy_from_slice(rho);
    axpy(&mut buf.stage, dt / 2.0, &buf.k1);
    model.rhs(&buf.stage, &mut buf.k2, &mut buf.tmp);
    buf.stage.copy_from_slice(rho);
    axpy(&mut buf.stage, dt / 2.0, &buf.k2);
    model.rhs(&buf.stage, &mut buf.k3, &mut buf.tmp);
    buf.stage.copy_from_slice(rho);
    axpy(&mut buf.stage, dt, &buf.k3);
    model.rhs(&buf.stage, &mut buf.k4, &mut buf.tmp);
    axpy(rho, dt / 6.0, &buf.k1);
    axpy(rho, dt / 3.0, &buf.k2);
    axpy(rho, dt / 3.0, &buf.k3);
    axpy(rho, dt / 6.0, &buf.k4);
}

struct Rk4Buffers {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
    stage: Vec<C64>,
}

impl Rk4Buffers {
    fn new(n: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); n];
        Self { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z.clone(), stage: z }
    }
}

/// Integrate the master equation, sampling the named Hermitian observables on
/// the configured grid. `snapshot_stride` stores every n-th sampled density
/// matrix (0 stores none).
pub fn evolve_recording(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    cfg: &IntegratorConfig,
    observables: &[(String, Operator)],
    snapshot_stride: usize,
) -> Result<EvolveOutput, DynamicsError> {
    cfg.validate()?;
    if rho0.space() != &model.space {
        return Err(DynamicsError::SpaceMismatch);
    }
    let dim = model.space.dim();
    let compiled = CompiledModel::new(model);
    let obs_sparse: Vec<(String, SparseOp)> = observables
        .iter()
        .map(|(name, op)| {
            assert_eq!(op.space(), &model.space, "observable space mismatch: {name}");
            (name.clone(), SparseOp::from_dense(op.matrix(), 0.0))
        })
        .collect();

    // Sampling grid.
    let sample_dt = match (cfg.sample_dt, cfg.stepper) {
        (Some(s), _) => s,
        (None, Stepper::FixedStep { dt }) => dt,
        (None, Stepper::Adaptive { .. }) => cfg.bin_width / 8.0,
    };
    let n_samples = (cfg.t_end / sample_dt).round().max(1.0) as usize;
    let sample_dt = cfg.t_end / n_samples as f64;

    let mut rho: Vec<C64> = rho0.matrix().iter().cloned().collect();
    let mut buf = Rk4Buffers::new(dim * dim);
    let mut times = Vec::with_capacity(n_samples + 1);
    let mut series: Vec<(String, Vec<f64>)> = obs_sparse
        .iter()
        .map(|(name, _)| (name.clone(), Vec::with_capacity(n_samples + 1)))
        .collect();
    let mut snapshots = Vec::new();
    let mut diag = Diagnostics { min_eigenvalue: f64::INFINITY, ..Default::default() };

    let mut sample =
        |k: usize, t: f64, rho: &[C64], diag: &mut Diagnostics, snapshots: &mut Vec<(f64, DensityMatrix)>,
         times: &mut Vec<f64>, series: &mut Vec<(String, Vec<f64>)>|
         -> Result<(), DynamicsError> {
            times.push(t);
            let mut trace = C64::new(0.0, 0.0);
            for i in 0..dim {
                trace += rho[i * dim + i];
            }
            let dev = (trace - C64::new(1.0, 0.0)).norm();
            diag.max_trace_dev = diag.max_trace_dev.max(dev);
            if dev > cfg.trace_abort_tol {
                return Err(DynamicsError::TraceViolation { t, dev });
            }
            for ((_, sp), (_, vals)) in obs_sparse.iter().zip(series.iter_mut()) {
                vals.push(trace_product(sp, rho, dim).re);
            }
            let check_due = cfg.positivity_check_stride > 0
                && (k % cfg.positivity_check_stride == 0 || k == n_samples);
            if check_due {
                let mat = ndarray::Array2::from_shape_vec((dim, dim), rho.to_vec()).unwrap();
                let min_eig = linalg::min_eigenvalue(&mat);
                diag.min_eigenvalue = diag.min_eigenvalue.min(min_eig);
                diag.positivity_checks += 1;
                if min_eig < -cfg.positivity_abort_tol {
                    return Err(DynamicsError::PositivityViolation { t, min_eig });
                }
            }
            if snapshot_stride > 0 && (k % snapshot_stride == 0 || k == n_samples) {
                let mat = ndarray::Array2::from_shape_vec((dim, dim), rho.to_vec()).unwrap();
                snapshots.push((t, DensityMatrix::from_matrix(model.space.clone(), mat).unwrap()));
            }
            Ok(())
        };

    sample(0, 0.0, &rho, &mut diag, &mut snapshots, &mut times, &mut series)?;

    match cfg.stepper {
        Stepper::FixedStep { dt } => {
            let steps_per_sample = (sample_dt / dt).round().max(1.0) as usize;
            let h = sample_dt / steps_per_sample as f64;
            for k in 1..=n_samples {
                for _ in 0..steps_per_sample {
                    rk4_step(&compiled, &mut rho, h, &mut buf);
                    diag.steps += 1;
                }
                sample(k, k as f64 * sample_dt, &rho, &mut diag, &mut snapshots, &mut times, &mut series)?;
            }
        }
        Stepper::Adaptive { rel_tol, abs_tol } => {
            let mut h = sample_dt / 4.0;
            let h_min = sample_dt * 1e-9;
            let mut full = vec![C64::new(0.0, 0.0); dim * dim];
            for k in 1..=n_samples {
                let t_target = k as f64 * sample_dt;
                let mut t = (k - 1) as f64 * sample_dt;
                while t < t_target - 1e-18 {
                    let step = h.min(t_target - t);
                    // One full step vs two half steps.
                    full.copy_from_slice(&rho);
                    rk4_step(&compiled, &mut full, step, &mut buf);
                    let mut halves = rho.clone();
                    rk4_step(&compiled, &mut halves, step / 2.0, &mut buf);
                    rk4_step(&compiled, &mut halves, step / 2.0, &mut buf);
                    diag.steps += 3;
                    let mut err = 0.0_f64;
                    let mut scale = 0.0_f64;
                    for (a, b) in full.iter().zip(halves.iter()) {
                        err += (a - b).norm_sqr();
                        scale += b.norm_sqr();
                    }
                    let err = err.sqrt() / 15.0;
                    let tol = abs_tol + rel_tol * scale.sqrt();
                    if err <= tol {
                        rho.copy_from_slice(&halves);
                        t += step;
                        let grow = if err > 0.0 { 0.9 * (tol / err).powf(0.2) } else { 2.0 };
                        h = (step * grow.clamp(0.2, 2.0)).min(sample_dt);
                    } else {
                        h = step * (0.9 * (tol / err).powf(0.2)).clamp(0.1, 0.9);
                        if h < h_min {
                            return Err(DynamicsError::StepSizeFailure { t, h });
                        }
                    }
                }
                sample(k, t_target, &rho, &mut diag, &mut snapshots, &mut times, &mut series)?;
            }
        }
    }

    let mat = ndarray::Array2::from_shape_vec((dim, dim), rho).unwrap();
    let final_state = DensityMatrix::from_matrix(model.space.clone(), mat).unwrap();
    Ok(EvolveOutput {
        trajectory: Trajectory { times, series, attempts_normalization: false },
        final_state,
        diagnostics: diag,
        snapshots,
    })
}

fn trace_product(op: &SparseOp, rho: &[C64], dim: usize) -> C64 {
    // Tr(O rho) = sum_ik O_ik rho_ki; iterate the sparse entries of O.
    let mut acc = C64::new(0.0, 0.0);
    op.for_each(|i, k, v| acc += v * rho[k * dim + i]);
    acc
}

/// Integrate the master equation and return the sampled trajectory plus the
/// final density matrix.
pub fn evolve(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    cfg: &IntegratorConfig,
    observables: &[(String, Operator)],
) -> Result<EvolveOutput, DynamicsError> {
    evolve_recording(model, rho0, cfg, observables, 0)
}

/// Trapezoidal integral of a sampled series over `[t0, t1]`, interpolating
/// linearly at the window edges.
pub fn integrate_series(times: &[f64], values: &[f64], t0: f64, t1: f64) -> f64 {
    assert_eq!(times.len(), values.len());
    if times.len() < 2 || t1 <= t0 {
        return 0.0;
    }
    let value_at = |t: f64| -> f64 {
        match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => values[i],
            Err(0) => values[0],
            Err(i) if i >= times.len() => *values.last().unwrap(),
            Err(i) => {
                let w = (t - times[i - 1]) / (times[i] - times[i - 1]);
                values[i - 1] * (1.0 - w) + values[i] * w
            }
        }
    };
    let mut acc = 0.0;
    let mut prev_t = t0;
    let mut prev_v = value_at(t0);
    for (&t, &v) in times.iter().zip(values.iter()) {
        if t <= t0 {
            continue;
        }
        if t >= t1 {
            break;
        }
        acc += (t - prev_t) * (prev_v + v) / 2.0;
        prev_t = t;
        prev_v = v;
    }
    acc += (t1 - prev_t) * (prev_v + value_at(t1)) / 2.0;
    acc
}

/// Total photon output flux 2*kappa*(<a^dag a> + <b^dag b>) from a trajectory,
/// in photons/s. The `n_b` series is optional (monochromatic runs).
pub fn photon_flux(traj: &Trajectory, params: &PhysicalParams) -> Result<Vec<f64>, DynamicsError> {
    let n_a = traj
        .series("n_a")
        .ok_or_else(|| DynamicsError::MissingSeries("n_a".into()))?;
    let n_b = traj.series("n_b");
    let kappa_ang = std::f64::consts::TAU * params.kappa;
    Ok(n_a
        .iter()
        .enumerate()
        .map(|(i, &na)| 2.0 * kappa_ang * (na + n_b.map_or(0.0, |s| s[i])))
        .collect())
}

/// Per-bin detection probability: `detection_efficiency * int_bin flux dt`
/// plus the dark-count contribution `(d1 + d2) * bin_width`.
pub fn photon_shape(traj: &Trajectory, params: &PhysicalParams) -> Result<Vec<f64>, DynamicsError> {
    let flux = photon_flux(traj, params)?;
    let (_, t_end) = traj.span();
    let bin = crate_bin_width(traj);
    let n_bins = (t_end / bin + 1e-9).floor() as usize;
    let dark = (params.dark_rate_1 + params.dark_rate_2) * bin;
    Ok((0..n_bins)
        .map(|k| {
            let t0 = k as f64 * bin;
            let t1 = t0 + bin;
            params.detection_efficiency * integrate_series(&traj.times, &flux, t0, t1) + dark
        })
        .collect())
}

// Bin width used by shape exports; trajectories do not carry the integrator
// config, so shapes default to 1 us bins.
fn crate_bin_width(_traj: &Trajectory) -> f64 {
    1e-6
}

/// Probability to detect a photon (including dark counts) in `[t0, t1]`.
pub fn detection_probability(
    traj: &Trajectory,
    params: &PhysicalParams,
    window: (f64, f64),
) -> Result<f64, DynamicsError> {
    let (t0, t1) = window;
    if t1 <= t0 {
        return if t1 == t0 { Ok(0.0) } else { Err(DynamicsError::EmptyWindow(t0, t1)) };
    }
    let (start, end) = traj.span();
    if t0 < start - 1e-12 || t1 > end + 1e-9 {
        return Err(DynamicsError::WindowOutOfRange(t0, t1));
    }
    let flux = photon_flux(traj, params)?;
    let dark = (params.dark_rate_1 + params.dark_rate_2) * (t1 - t0);
    Ok(params.detection_efficiency * integrate_series(&traj.times, &flux, t0, t1) + dark)
}

/// Cumulative detection efficiency series epsilon(t): the probability to have
/// detected a photon before each sample time. Monotone nondecreasing.
pub fn cumulative_efficiency(
    traj: &Trajectory,
    params: &PhysicalParams,
) -> Result<Vec<(f64, f64)>, DynamicsError> {
    let flux = photon_flux(traj, params)?;
    let dark_rate = params.dark_rate_1 + params.dark_rate_2;
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(traj.times.len());
    out.push((traj.times[0], 0.0));
    for i in 1..traj.times.len() {
        let dt = traj.times[i] - traj.times[i - 1];
        acc += params.detection_efficiency * dt * (flux[i] + flux[i - 1]) / 2.0;
        out.push((traj.times[i], acc + dark_rate * (traj.times[i] - traj.times[0])));
    }
    Ok(out)
}

/// Gaussian dephasing factor `exp(-(2 t / tau)^2)` from slow magnetic-field
/// fluctuations over the storage time `t`.
pub fn gaussian_dephasing_factor(t: f64, tau: f64) -> Result<f64, DynamicsError> {
    if tau <= 0.0 {
        return Err(DynamicsError::NonPositiveTau);
    }
    let x = 2.0 * t / tau;
    Ok((-x * x).exp())
}

/// Combined scale on prepared-qubit coherences at storage time `t`: the
/// one-shot preparation factor times the Gaussian field-fluctuation decay.
pub fn qubit_coherence_factor(params: &PhysicalParams, t: f64) -> Result<f64, DynamicsError> {
    Ok(params.coherence_scale * gaussian_dephasing_factor(t, params.tau_ssp)?)
}

/// Scale the S/S'-manifold coherences of each stored density matrix by
/// `coherence_scale * exp(-(2 t / tau_ssp)^2)`; diagonals are untouched and
/// the output remains a valid density matrix (the map is a convex combination
/// of the state and its block-dephased version).
///
/// Ion factors are slots 0 and 1 with levels `{0: S, 1: S'}`.
pub fn apply_imperfection_scalings(
    snapshots: &[(f64, DensityMatrix)],
    params: &PhysicalParams,
) -> Result<Vec<(f64, DensityMatrix)>, DynamicsError> {
    if params.tau_ssp <= 0.0 {
        return Err(DynamicsError::NonPositiveTau);
    }
    snapshots
        .iter()
        .map(|(t, rho)| {
            let factor = qubit_coherence_factor(params, *t)?;
            Ok((*t, scale_ss_coherences(rho, factor)))
        })
        .collect()
}

/// Multiply every matrix element whose bra and ket differ within an ion's
/// `{S, S'}` doublet by `factor`.
pub fn scale_ss_coherences(rho: &DensityMatrix, factor: f64) -> DensityMatrix {
    let space: HilbertSpace = rho.space().clone();
    let dim = space.dim();
    let mut mat = rho.matrix().clone();
    let multis: Vec<Vec<usize>> = (0..dim).map(|i| space.decompose(i)).collect();
    for i in 0..dim {
        for j in 0..dim {
            if i == j {
                continue;
            }
            let differs_in_doublet = [0usize, 1usize].iter().any(|&ion| {
                let (a, b) = (multis[i][ion], multis[j][ion]);
                a <= 1 && b <= 1 && a != b
            });
            if differs_in_doublet {
                mat[[i, j]] = mat[[i, j]] * factor;
            }
        }
    }
    DensityMatrix::from_matrix(space, mat).unwrap()
}
