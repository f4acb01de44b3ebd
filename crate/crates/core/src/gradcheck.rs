//! Independent oracles for the adjoint gradients: an explicitly assembled
//! dense block Jacobian of the split step, and central finite differences
//! of both training objectives. Everything here recomputes derivatives
//! from the entrywise formulas or from forward propagation only, never
//! through the VJP code path it checks.

use crate::adjoint::{gradient_vc, solve_adjoint_functional, vjp_step_state, AdjointState};
use crate::error::Result;
use crate::grid::{build_grid, simpson_weights, GridSpec};
use crate::model::{init_params, MlpParameters, ModelKind};
use crate::tdks::{
    build_cache, density_loss, propagate_functional, propagate_pointwise, smoothness_penalty,
    step_with_linearization, CorrelationGrid, PropagatorCache,
};
use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;

/// Outcome of one oracle suite.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_error.is_finite() && self.max_error < self.tolerance
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} (max error {:.3e}, tolerance {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance
        )
    }
}

/// splitmix64 stream; deterministic test-instance generator.
fn uniform(seed: u64, counter: u64) -> f64 {
    let mut z = seed.wrapping_add(counter.wrapping_mul(0x9e3779b97f4a7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z = z ^ (z >> 31);
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn random_state(spec: &GridSpec, seed: u64) -> Array1<Complex64> {
    let mut phi: Array1<Complex64> = (0..spec.points())
        .map(|j| {
            Complex64::new(
                uniform(seed, 2 * j as u64) - 0.5,
                uniform(seed, 2 * j as u64 + 1) - 0.5,
            )
        })
        .collect();
    let w = simpson_weights(spec).unwrap();
    let nrm = phi.iter().zip(w.0.iter()).map(|(z, wj)| z.norm_sqr() * wj).sum::<f64>().sqrt();
    phi.mapv_inplace(|z| z / nrm);
    phi
}

fn random_reference(spec: &GridSpec, seed: u64) -> Array2<f64> {
    Array2::from_shape_fn((spec.frames(), spec.points()), |(k, j)| {
        0.1 + 0.5 * uniform(seed, (k * spec.points() + j) as u64)
    })
}

/// Dense real Jacobian of the split step with respect to `(phi_R, phi_I)`,
/// shape `(2n, 2n)`, assembled from the entrywise derivative formulas:
/// a complex-linear part `A = P diag(e) P` plus the potential chain
/// `B diag column q = P (-i dt e o u)` composed with
/// `dV_q/dphi^{R,I}_m = 2 W_{q,m} w_m phi^{R,I}_m`.
pub fn dense_step_jacobian(
    phi: ArrayView1<Complex64>,
    vc: ArrayView1<f64>,
    cache: &PropagatorCache,
) -> Result<Array2<f64>> {
    let n = phi.len();
    let (_, lin) = step_with_linearization(phi, vc, cache)?;
    let p = &cache.half_kinetic;

    // A = P diag(e) P
    let mut pe = Array2::<Complex64>::zeros((n, n));
    for r in 0..n {
        for cidx in 0..n {
            pe[[r, cidx]] = p[[r, cidx]] * lin.phase[cidx];
        }
    }
    let a = pe.dot(p);

    // B columns: P applied to diag(-i dt e o u) basis vectors.
    let minus_i_dt = Complex64::new(0.0, -cache.grid.dt);
    let mut b = Array2::<Complex64>::zeros((n, n));
    for q in 0..n {
        let col = minus_i_dt * lin.phase[q] * lin.pre_potential[q];
        for r in 0..n {
            b[[r, q]] = p[[r, q]] * col;
        }
    }

    // Potential chains dV_q/dphi^{R,I}_m.
    let mut cr = Array2::<f64>::zeros((n, n));
    let mut ci = Array2::<f64>::zeros((n, n));
    for q in 0..n {
        for m in 0..n {
            let s = 2.0 * cache.interaction.0[[q, m]] * cache.weights.0[m];
            cr[[q, m]] = s * phi[m].re;
            ci[[q, m]] = s * phi[m].im;
        }
    }
    let mr = b.dot(&cr.mapv(|v| Complex64::new(v, 0.0)));
    let mi = b.dot(&ci.mapv(|v| Complex64::new(v, 0.0)));

    let mut jac = Array2::<f64>::zeros((2 * n, 2 * n));
    for r in 0..n {
        for cidx in 0..n {
            jac[[r, cidx]] = a[[r, cidx]].re + mr[[r, cidx]].re;
            jac[[r, n + cidx]] = -a[[r, cidx]].im + mi[[r, cidx]].re;
            jac[[n + r, cidx]] = a[[r, cidx]].im + mr[[r, cidx]].im;
            jac[[n + r, n + cidx]] = a[[r, cidx]].re + mi[[r, cidx]].im;
        }
    }
    Ok(jac)
}

/// Dense Jacobian of the split step with respect to the potential vector,
/// shape `(2n, n)`.
pub fn dense_potential_jacobian(
    phi: ArrayView1<Complex64>,
    vc: ArrayView1<f64>,
    cache: &PropagatorCache,
) -> Result<Array2<f64>> {
    let n = phi.len();
    let (_, lin) = step_with_linearization(phi, vc, cache)?;
    let p = &cache.half_kinetic;
    let minus_i_dt = Complex64::new(0.0, -cache.grid.dt);
    let mut jac = Array2::<f64>::zeros((2 * n, n));
    for q in 0..n {
        let col = minus_i_dt * lin.phase[q] * lin.pre_potential[q];
        for r in 0..n {
            let z = p[[r, q]] * col;
            jac[[r, q]] = z.re;
            jac[[n + r, q]] = z.im;
        }
    }
    Ok(jac)
}

fn oracle_grid(intervals: usize, steps: usize) -> GridSpec {
    build_grid(-4.0, 4.0, intervals, 0.05 * steps as f64, steps).unwrap()
}

/// VJP-based backstep vs multiplication by the dense block Jacobian.
pub fn check_dense_jacobian() -> Result<CheckReport> {
    let spec = oracle_grid(8, 1);
    let cache = build_cache(&spec)?;
    let n = spec.points();
    let mut max_err = 0.0f64;
    for inst in 0..3u64 {
        let phi = random_state(&spec, 100 + inst);
        let vc: Array1<f64> =
            Array1::from_shape_fn(n, |j| 0.3 * (uniform(200 + inst, j as u64) - 0.5));
        let lam: AdjointState = Array1::from_shape_fn(n, |j| {
            Complex64::new(
                uniform(300 + inst, 2 * j as u64) - 0.5,
                uniform(300 + inst, 2 * j as u64 + 1) - 0.5,
            )
        });

        let (_, lin) = step_with_linearization(phi.view(), vc.view(), &cache)?;
        let vjp = vjp_step_state(&lam, &lin, phi.view(), &cache);

        let jac = dense_step_jacobian(phi.view(), vc.view(), &cache)?;
        let pjac = dense_potential_jacobian(phi.view(), vc.view(), &cache)?;
        let lam_vec: Array1<f64> = Array1::from_shape_fn(2 * n, |i| {
            if i < n { lam[i].re } else { lam[i - n].im }
        });
        let by_dense = jac.t().dot(&lam_vec);
        let pot_dense = pjac.t().dot(&lam_vec);

        for j in 0..n {
            max_err = max_err.max((vjp.state[j].re - by_dense[j]).abs());
            max_err = max_err.max((vjp.state[j].im - by_dense[n + j]).abs());
            max_err = max_err.max((vjp.potential[j] - pot_dense[j]).abs());
        }
    }
    Ok(CheckReport {
        name: "dense block-Jacobian oracle (split-step VJP)".into(),
        max_error: max_err,
        tolerance: 1e-12,
    })
}

/// Adjoint gradient of the pointwise objective vs central finite
/// differences with an h-sweep; per entry the best h counts.
pub fn check_pointwise_gradient() -> Result<CheckReport> {
    let spec = oracle_grid(8, 3);
    let cache = build_cache(&spec)?;
    let phi0 = random_state(&spec, 7);
    let reference = random_reference(&spec, 11);
    let mu = 1e-5;
    let vc = CorrelationGrid(Array2::from_shape_fn(
        (spec.frames(), spec.points()),
        |(k, j)| 0.2 * (uniform(13, (k * spec.points() + j) as u64) - 0.5),
    ));

    let objective = |vc: &CorrelationGrid| -> Result<f64> {
        let traj = propagate_pointwise(&phi0, vc, &cache)?;
        Ok(density_loss(&traj, &reference)? + smoothness_penalty(vc, mu, &spec).0)
    };

    let traj = propagate_pointwise(&phi0, &vc, &cache)?;
    let report = gradient_vc(&traj, &reference, &vc, mu, &cache)?;

    let mut max_err = 0.0f64;
    for k in 0..spec.frames() {
        for j in 0..spec.points() {
            let g = report.gradient[[k, j]];
            let mut best = f64::INFINITY;
            for h in [1e-4, 1e-5, 1e-6] {
                let mut p = vc.clone();
                p.0[[k, j]] += h;
                let mut m = vc.clone();
                m.0[[k, j]] -= h;
                let fd = (objective(&p)? - objective(&m)?) / (2.0 * h);
                let rel = (g - fd).abs() / fd.abs().max(g.abs()).max(1e-10);
                best = best.min(rel);
            }
            max_err = max_err.max(best);
        }
    }
    Ok(CheckReport {
        name: "pointwise adjoint gradient vs finite differences".into(),
        max_error: max_err,
        tolerance: 1e-6,
    })
}

fn functional_fd(kind: ModelKind) -> Result<f64> {
    let spec = oracle_grid(8, 5);
    let cache = build_cache(&spec)?;
    let phi0 = random_state(&spec, 17);
    let phi1 = random_state(&spec, 19);
    let reference = random_reference(&spec, 23);
    let model = init_params(29, 0.15, kind, spec.points(), &[8])?;

    let objective = |m: &MlpParameters| -> Result<f64> {
        let traj = propagate_functional(&phi0, &phi1, m, kind, &cache)?;
        density_loss(&traj, &reference)
    };

    let traj = propagate_functional(&phi0, &phi1, &model, kind, &cache)?;
    let report = solve_adjoint_functional(&traj, &reference, &model, kind, &cache)?;

    let flat = model.flatten();
    let mut max_err = 0.0f64;
    for idx in 0..flat.len() {
        let g = report.gradient[idx];
        let mut best = f64::INFINITY;
        for h in [1e-4, 1e-5, 1e-6] {
            let mut p = flat.clone();
            p[idx] += h;
            let mut m = flat.clone();
            m[idx] -= h;
            let fd = (objective(&model.unflatten_like(p.view())?)?
                - objective(&model.unflatten_like(m.view())?)?)
                / (2.0 * h);
            let rel = (g - fd).abs() / fd.abs().max(g.abs()).max(1e-9);
            best = best.min(rel);
        }
        max_err = max_err.max(best);
    }
    Ok(max_err)
}

/// Parameter gradient of the memory-functional objective vs exhaustive
/// central finite differences, both model kinds.
pub fn check_functional_gradient() -> Result<CheckReport> {
    let err_phi = functional_fd(ModelKind::PhiMemory)?;
    let err_density = functional_fd(ModelKind::DensityMemory)?;
    Ok(CheckReport {
        name: "functional adjoint gradient vs finite differences (both kinds)".into(),
        max_error: err_phi.max(err_density),
        tolerance: 1e-5,
    })
}

/// All oracle suites, in the order the `gradcheck` command reports them.
pub fn run_all() -> Result<Vec<CheckReport>> {
    Ok(vec![
        check_dense_jacobian()?,
        check_pointwise_gradient()?,
        check_functional_gradient()?,
    ])
}
