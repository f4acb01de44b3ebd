//! Backward costate solvers and gradient assembly for both learning
//! problems: pointwise correlation values and memory-functional
//! parameters, built on vector-Jacobian products of the split-step
//! propagator.
//!
//! Costates are carried as complex vectors; the real and imaginary parts
//! are the paired real costate vectors of the Lagrangian formulation.
//! The real pairing `<lam, y> = lam^R . y^R + lam^I . y^I` equals
//! `Re(conj(lam)^T y)`, which fixes every conjugation below.

use crate::error::{Error, Result};
use crate::model::{MlpParameters, ModelKind};
use crate::tdks::{
    density_loss, smoothness_penalty, step_with_linearization, CorrelationGrid, PropagatorCache,
    StepLinearization, TdksTrajectory,
};
use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;

pub type AdjointState = Array1<Complex64>;

/// `4 (2|phi|^2 - n_ref) o phi`; both the final condition and the misfit
/// source term of every backward step.
pub fn misfit_term(phi: ArrayView1<Complex64>, n_ref: ArrayView1<f64>) -> AdjointState {
    Array1::from_iter(
        phi.iter()
            .zip(n_ref.iter())
            .map(|(z, nr)| 4.0 * (2.0 * z.norm_sqr() - nr) * z),
    )
}

pub fn final_condition(phi_last: ArrayView1<Complex64>, n_ref: ArrayView1<f64>) -> AdjointState {
    misfit_term(phi_last, n_ref)
}

/// Pull a costate back through multiplication by the (complex symmetric,
/// unitary) kinetic half propagator under the real pairing:
/// `lam -> conj(P) lam`.
fn pullback_kinetic(cache: &PropagatorCache, lam: &AdjointState) -> AdjointState {
    let conj_lam: Array1<Complex64> = lam.mapv(|z| z.conj());
    cache.half_kinetic.dot(&conj_lam).mapv(|z| z.conj())
}

/// State and potential cotangents of one split step.
///
/// `state` is the cotangent pulled back onto the current state through the
/// kinetic/phase/kinetic factors plus the Hartree chain of the potential;
/// `potential` is the cotangent on the potential vector itself, which the
/// pointwise gradient consumes directly and the functional path feeds to
/// the model VJP.
pub struct StepVjp {
    pub state: AdjointState,
    pub potential: Array1<f64>,
}

/// Contract a costate against the Jacobian of the split step without
/// materializing it: pull back through the outer kinetic factor, split off
/// the diagonal-phase chain into a potential cotangent, push the direct
/// term through the inner kinetic factor, and close the Hartree chain.
pub fn vjp_step_state(
    cot: &AdjointState,
    lin: &StepLinearization,
    phi: ArrayView1<Complex64>,
    cache: &PropagatorCache,
) -> StepVjp {
    let dt = cache.grid.dt;
    let c = pullback_kinetic(cache, cot);

    // Cotangent on the potential vector: Re(conj(c) o e o (-i dt) o u).
    let minus_i_dt = Complex64::new(0.0, -dt);
    let potential: Array1<f64> = Array1::from_iter(
        c.iter()
            .zip(lin.phase.iter())
            .zip(lin.pre_potential.iter())
            .map(|((cq, eq), uq)| (cq.conj() * eq * uq * minus_i_dt).re),
    );

    // Direct term: pull conj(e) o c back through the inner kinetic factor.
    let lam_u: AdjointState = Array1::from_iter(
        c.iter().zip(lin.phase.iter()).map(|(cq, eq)| eq.conj() * cq),
    );
    let direct = pullback_kinetic(cache, &lam_u);

    // Hartree chain: dV_q/dphi^{R,I}_m = 2 W_{q,m} w_m phi^{R,I}_m.
    let wg = cache.interaction.0.dot(&potential);
    let state = Array1::from_iter(direct.iter().enumerate().map(|(m, d)| {
        let s = 2.0 * cache.weights.0[m] * wg[m];
        d + Complex64::new(s * phi[m].re, s * phi[m].im)
    }));

    StepVjp { state, potential }
}

/// One backward step of the pointwise adjoint recursion:
/// `lam_k = misfit_k + lam_{k+1}^T J_phi F(phi_k, vc_k)`.
pub fn backstep_pointwise(
    lam_next: &AdjointState,
    phi_k: ArrayView1<Complex64>,
    vc_k: ArrayView1<f64>,
    n_ref_k: ArrayView1<f64>,
    cache: &PropagatorCache,
) -> Result<AdjointState> {
    let (_, lin) = step_with_linearization(phi_k, vc_k, cache)?;
    let vjp = vjp_step_state(lam_next, &lin, phi_k, cache);
    Ok(misfit_term(phi_k, n_ref_k) + vjp.state)
}

/// Full gradient of the pointwise objective, split into misfit and
/// regularizer parts.
pub struct PointwiseGradient {
    pub objective: f64,
    pub misfit: f64,
    pub regularizer: f64,
    /// Shape `(frames, points)`; the final row carries only the
    /// regularizer part since it never drives a step.
    pub gradient: Array2<f64>,
    /// Largest costate magnitude encountered on the backward pass.
    pub max_costate: f64,
}

/// Solve the backward costate recursion for a pointwise-control trajectory
/// and assemble the gradient with respect to every correlation value.
pub fn gradient_vc(
    traj: &TdksTrajectory,
    reference: &Array2<f64>,
    vc: &CorrelationGrid,
    mu: f64,
    cache: &PropagatorCache,
) -> Result<PointwiseGradient> {
    let expected = crate::fingerprint_f64(vc.0.as_slice().unwrap());
    if traj.provenance != expected {
        return Err(Error::StaleTrajectory(
            "trajectory was not produced by this correlation grid".into(),
        ));
    }
    let spec = &cache.grid;
    let steps = spec.steps;
    let misfit = density_loss(traj, reference)?;
    let (reg, mut gradient) = smoothness_penalty(vc, mu, spec);

    let mut lam = final_condition(traj.states[steps].view(), reference.row(steps));
    let mut max_costate = lam.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    for k in (0..steps).rev() {
        let phi_k = traj.states[k].view();
        let (_, lin) = step_with_linearization(phi_k, vc.0.row(k), cache)?;
        let vjp = vjp_step_state(&lam, &lin, phi_k, cache);
        for (j, g) in vjp.potential.iter().enumerate() {
            gradient[[k, j]] += g;
        }
        if k > 0 {
            lam = misfit_term(phi_k, reference.row(k)) + vjp.state;
            max_costate = max_costate.max(lam.iter().map(|z| z.norm()).fold(0.0f64, f64::max));
        }
    }

    Ok(PointwiseGradient {
        objective: misfit + reg,
        misfit,
        regularizer: reg,
        gradient,
        max_costate,
    })
}

pub struct FunctionalGradient {
    pub objective: f64,
    pub gradient: Array1<f64>,
    pub max_costate: f64,
}

/// Solve the delayed adjoint recursion for a functional-model trajectory
/// and accumulate the parameter gradient.
///
/// The recursion is
/// `lam_k = misfit_k + lam_{k+1}^T J_phi F(phi_k, phi_{k-1})
///        + lam_{k+2}^T J_{phi'} F(phi_{k+1}, phi_k)`
/// for `k = K-2 .. 1`, with `lam_K` the plain final condition and
/// `lam_{K-1}` the same recursion with the delayed term absent.
pub fn solve_adjoint_functional(
    traj: &TdksTrajectory,
    reference: &Array2<f64>,
    model: &MlpParameters,
    kind: ModelKind,
    cache: &PropagatorCache,
) -> Result<FunctionalGradient> {
    solve_adjoint_functional_impl(traj, reference, model, kind, cache, true)
}

/// Ablation hook: `include_delay = false` drops the `J_{phi'} F` term,
/// giving the no-memory recursion used for structural checks.
#[doc(hidden)]
pub fn solve_adjoint_functional_impl(
    traj: &TdksTrajectory,
    reference: &Array2<f64>,
    model: &MlpParameters,
    kind: ModelKind,
    cache: &PropagatorCache,
    include_delay: bool,
) -> Result<FunctionalGradient> {
    if traj.provenance != model.fingerprint() {
        return Err(Error::StaleTrajectory(
            "trajectory was not produced by these model parameters".into(),
        ));
    }
    let spec = &cache.grid;
    let steps = spec.steps;
    if steps < 2 {
        return Err(Error::Config("functional adjoint needs at least 2 time steps".into()));
    }
    let objective = density_loss(traj, reference)?;

    let mut theta_grad: Array1<f64> = Array1::zeros(model.flat_len());
    let mut lam = final_condition(traj.states[steps].view(), reference.row(steps));
    let mut max_costate = lam.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    // Delayed contribution from step k+1 waiting to enter lam_k.
    let mut pending_past: Option<AdjointState> = None;

    for k in (1..steps).rev() {
        let phi_k = traj.states[k].view();
        let phi_prev = traj.states[k - 1].view();
        let vc = model.forward(phi_k, phi_prev, kind)?;
        let (_, lin) = step_with_linearization(phi_k, vc.view(), cache)?;
        let vjp = vjp_step_state(&lam, &lin, phi_k, cache);

        // Model chains: one reverse pass yields the current-state chain,
        // the delayed chain, and the parameter contribution.
        let (inputs, params) = model.vjp_all(phi_k, phi_prev, kind, vjp.potential.view())?;
        theta_grad += &params;

        let mut next_lam = misfit_term(phi_k, reference.row(k)) + vjp.state;
        for j in 0..next_lam.len() {
            next_lam[j] += Complex64::new(inputs.phi_re[j], inputs.phi_im[j]);
        }
        if let Some(past) = pending_past.take() {
            next_lam += &past;
        }
        pending_past = include_delay.then(|| {
            Array1::from_iter(
                inputs
                    .prev_re
                    .iter()
                    .zip(inputs.prev_im.iter())
                    .map(|(r, i)| Complex64::new(*r, *i)),
            )
        });

        lam = next_lam;
        max_costate = max_costate.max(lam.iter().map(|z| z.norm()).fold(0.0f64, f64::max));
    }
    // lam_0 is never used: phi_0 and phi_1 are fixed by the exact
    // Kohn-Sham pair, so the pending contribution to lam_0 is dropped.

    Ok(FunctionalGradient { objective, gradient: theta_grad, max_costate })
}
