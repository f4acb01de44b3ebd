//! Forward propagation of the discretized 1D TDKS system under either a
//! pointwise correlation grid or a functional model with one-step memory,
//! plus loss evaluation.

use crate::error::{Error, Result};
use crate::grid::{self, interaction_matrix, laplacian4, simpson_weights, GridSpec,
    InteractionMatrix, QuadratureWeights};
use crate::model::{MlpParameters, ModelKind};
use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;

pub type KohnShamState = Array1<Complex64>;

/// `2 |phi|^2`.
pub fn density_of(phi: ArrayView1<Complex64>) -> Array1<f64> {
    phi.mapv(|z| 2.0 * z.norm_sqr())
}

/// Pointwise correlation potential unknowns, shape `(frames, points)`.
/// Row `k` drives the step from `t_k` to `t_{k+1}`; the final row is not
/// used by the dynamics but keeps the shape aligned with the densities.
#[derive(Debug, Clone)]
pub struct CorrelationGrid(pub Array2<f64>);

impl CorrelationGrid {
    pub fn zeros(spec: &GridSpec) -> Self {
        CorrelationGrid(Array2::zeros((spec.frames(), spec.points())))
    }
}

/// Precomputed pieces shared by every TDKS step: the exact kinetic
/// half-step propagator (via diagonalization of the kinetic matrix),
/// the external potential, the interaction kernel and Simpson weights.
pub struct PropagatorCache {
    pub grid: GridSpec,
    /// `exp(-i K dt/2)`; complex symmetric since the kinetic matrix is
    /// real symmetric.
    pub half_kinetic: Array2<Complex64>,
    /// Orthonormal eigenvectors of the kinetic matrix (columns).
    pub kinetic_vecs: Array2<f64>,
    pub kinetic_vals: Array1<f64>,
    pub v_ext: Array1<f64>,
    pub interaction: InteractionMatrix,
    pub weights: QuadratureWeights,
}

pub fn build_cache(spec: &GridSpec) -> Result<PropagatorCache> {
    let n = spec.points();
    let lap = laplacian4(spec)?;
    let dense = lap.to_dense();
    let mut kin = nalgebra::DMatrix::<f64>::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            kin[(a, b)] = -0.5 * dense[[a, b]];
        }
    }
    let eig = kin.symmetric_eigen();
    let mut vecs = Array2::zeros((n, n));
    let mut vals = Array1::zeros(n);
    for c in 0..n {
        vals[c] = eig.eigenvalues[c];
        for r in 0..n {
            vecs[[r, c]] = eig.eigenvectors[(r, c)];
        }
    }
    let half_kinetic = propagator_from_eigen(&vecs, &vals, spec.dt / 2.0);
    Ok(PropagatorCache {
        grid: spec.clone(),
        half_kinetic,
        kinetic_vecs: vecs,
        kinetic_vals: vals,
        v_ext: grid::external_potential(spec),
        interaction: interaction_matrix(spec),
        weights: simpson_weights(spec)?,
    })
}

/// `S exp(-i D tau) S^T` from the stored eigendecomposition.
pub fn propagator_from_eigen(
    vecs: &Array2<f64>,
    vals: &Array1<f64>,
    tau: f64,
) -> Array2<Complex64> {
    let n = vals.len();
    let phases: Vec<Complex64> =
        vals.iter().map(|&e| Complex64::from_polar(1.0, -e * tau)).collect();
    let mut out = Array2::zeros((n, n));
    for r in 0..n {
        for c in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..n {
                acc += vecs[[r, m]] * phases[m] * vecs[[c, m]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Full Kohn-Sham potential `v_ext + W(|phi|^2 o w) + v_c`.
/// The single interaction term is the Hartree-plus-exchange combination
/// for a doubly occupied orbital.
pub fn potential_vector(
    phi: ArrayView1<Complex64>,
    vc: ArrayView1<f64>,
    cache: &PropagatorCache,
) -> Array1<f64> {
    let mut weighted: Array1<f64> = phi.mapv(|z| z.norm_sqr());
    weighted *= &cache.weights.0;
    let hartree = cache.interaction.0.dot(&weighted);
    &cache.v_ext + &hartree + &vc
}

/// Intermediates of one split step, reused by the adjoint pass.
pub struct StepLinearization {
    /// `P_K phi` (state after the inner kinetic half step).
    pub pre_potential: Array1<Complex64>,
    /// `exp(-i v dt)`.
    pub phase: Array1<Complex64>,
    pub potential: Array1<f64>,
}

pub fn step_with_linearization(
    phi: ArrayView1<Complex64>,
    vc: ArrayView1<f64>,
    cache: &PropagatorCache,
) -> Result<(KohnShamState, StepLinearization)> {
    let v = potential_vector(phi, vc, cache);
    if let Some(idx) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Propagation {
            step: 0,
            msg: format!("non-finite potential at grid index {idx}"),
        });
    }
    let dt = cache.grid.dt;
    let phase: Array1<Complex64> =
        v.iter().map(|&vj| Complex64::from_polar(1.0, -vj * dt)).collect();
    let u = cache.half_kinetic.dot(&phi.to_owned());
    let mid = &u * &phase;
    let next = cache.half_kinetic.dot(&mid);
    Ok((next, StepLinearization { pre_potential: u, phase, potential: v }))
}

/// One split step `P_K exp(-i V dt) P_K phi`.
pub fn step(
    phi: ArrayView1<Complex64>,
    vc: ArrayView1<f64>,
    cache: &PropagatorCache,
) -> Result<KohnShamState> {
    Ok(step_with_linearization(phi, vc, cache)?.0)
}

#[derive(Debug, Clone)]
pub struct TdksTrajectory {
    pub grid: GridSpec,
    pub states: Vec<KohnShamState>,
    /// Fingerprint of the control (correlation grid or model parameters)
    /// that produced this trajectory.
    pub provenance: u64,
}

impl TdksTrajectory {
    pub fn densities(&self) -> Array2<f64> {
        let mut rows = Array2::zeros((self.states.len(), self.grid.points()));
        for (k, phi) in self.states.iter().enumerate() {
            rows.row_mut(k).assign(&density_of(phi.view()));
        }
        rows
    }
}

/// Iterate the split step forward under a pointwise correlation grid.
/// Row `k` of the grid drives step `k -> k+1`; the last row is unused.
pub fn propagate_pointwise(
    phi0: &KohnShamState,
    vc: &CorrelationGrid,
    cache: &PropagatorCache,
) -> Result<TdksTrajectory> {
    let spec = &cache.grid;
    if vc.0.nrows() != spec.frames() || vc.0.ncols() != spec.points() {
        return Err(Error::Shape(format!(
            "correlation grid shape {:?} does not match ({}, {})",
            vc.0.dim(),
            spec.frames(),
            spec.points()
        )));
    }
    let mut states = Vec::with_capacity(spec.frames());
    states.push(phi0.clone());
    for k in 0..spec.steps {
        let next = step(states[k].view(), vc.0.row(k), cache).map_err(|e| match e {
            Error::Propagation { msg, .. } => Error::Propagation { step: k, msg },
            other => other,
        })?;
        states.push(next);
    }
    Ok(TdksTrajectory {
        grid: spec.clone(),
        states,
        provenance: crate::fingerprint_f64(vc.0.as_slice().unwrap()),
    })
}

/// Iterate the split step forward under a memory-functional model.
/// `phi0` and `phi1` are the exact Kohn-Sham pair at the coarse time step;
/// the first propagated state is `phi_2`.
pub fn propagate_functional(
    phi0: &KohnShamState,
    phi1: &KohnShamState,
    model: &MlpParameters,
    kind: ModelKind,
    cache: &PropagatorCache,
) -> Result<TdksTrajectory> {
    let spec = &cache.grid;
    let mut states = Vec::with_capacity(spec.frames());
    states.push(phi0.clone());
    states.push(phi1.clone());
    for k in 1..spec.steps {
        let vc = model.forward(states[k].view(), states[k - 1].view(), kind)?;
        let next = step(states[k].view(), vc.view(), cache).map_err(|e| match e {
            Error::Propagation { msg, .. } => Error::Propagation { step: k, msg },
            other => other,
        })?;
        states.push(next);
    }
    Ok(TdksTrajectory {
        grid: spec.clone(),
        states,
        provenance: model.fingerprint(),
    })
}

/// Unweighted squared density misfit
/// `(1/2) sum_k sum_j (2|phi|^2 - n_ref)^2` over all frames.
pub fn density_loss(traj: &TdksTrajectory, reference: &Array2<f64>) -> Result<f64> {
    if reference.nrows() != traj.states.len() || reference.ncols() != traj.grid.points() {
        return Err(Error::Shape(format!(
            "reference shape {:?} does not match trajectory ({}, {})",
            reference.dim(),
            traj.states.len(),
            traj.grid.points()
        )));
    }
    let mut acc = 0.0;
    for (k, phi) in traj.states.iter().enumerate() {
        for (j, z) in phi.iter().enumerate() {
            let r = 2.0 * z.norm_sqr() - reference[[k, j]];
            acc += r * r;
        }
    }
    Ok(0.5 * acc)
}

/// Paper-scale metric: `2 loss / (frames * points)`.
pub fn mse_from_loss(loss: f64, frames: usize, points: usize) -> f64 {
    2.0 * loss / (frames * points) as f64
}

/// Squared-first-difference smoothness penalty
/// `mu sum_k sum_{j<J} ((vc[k,j+1] - vc[k,j]) / dx)^2` and its exact gradient.
pub fn smoothness_penalty(
    vc: &CorrelationGrid,
    mu: f64,
    spec: &GridSpec,
) -> (f64, Array2<f64>) {
    let inv_dx2 = 1.0 / (spec.dx * spec.dx);
    let mut value = 0.0;
    let mut grad = Array2::zeros(vc.0.raw_dim());
    for k in 0..vc.0.nrows() {
        for j in 0..vc.0.ncols() - 1 {
            let d = vc.0[[k, j + 1]] - vc.0[[k, j]];
            value += d * d * inv_dx2;
            grad[[k, j + 1]] += 2.0 * mu * d * inv_dx2;
            grad[[k, j]] -= 2.0 * mu * d * inv_dx2;
        }
    }
    (mu * value, grad)
}
