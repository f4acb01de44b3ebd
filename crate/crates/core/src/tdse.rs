//! Reference-data generator: solves the two-electron (spatially 2D)
//! time-dependent Schrödinger equation with soft-Coulomb potentials,
//! extracts one-electron densities and currents, and inverts the exact
//! Kohn-Sham orbital for initialization of TDKS runs.

use crate::error::{Error, Result};
use crate::grid::{
    self, derivative4, laplacian4, simpson_weights, BandedLaplacian, GridSpec, QuadratureWeights,
};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use num_complex::Complex64;

/// Density floor used when dividing the current by the density during
/// Kohn-Sham inversion; only touches exponentially small tails.
pub const DENSITY_CLAMP: f64 = 1e-12;

/// Spatial part of the two-electron singlet wave function on the
/// `(x1, x2)` grid, axis 0 indexing `x1`.
#[derive(Debug, Clone)]
pub struct TwoBodyWavefunction {
    pub grid: GridSpec,
    pub data: Array2<Complex64>,
}

impl TwoBodyWavefunction {
    pub fn norm(&self, w: &QuadratureWeights) -> f64 {
        let mut acc = 0.0;
        for (j1, row) in self.data.outer_iter().enumerate() {
            let mut s = 0.0;
            for (j2, z) in row.iter().enumerate() {
                s += z.norm_sqr() * w.0[j2];
            }
            acc += s * w.0[j1];
        }
        acc.sqrt()
    }

    /// Max absolute deviation from exchange symmetry `psi(x1,x2) = psi(x2,x1)`.
    pub fn swap_residual(&self) -> f64 {
        let n = self.grid.points();
        let mut r = 0.0f64;
        for a in 0..n {
            for b in a + 1..n {
                r = r.max((self.data[[a, b]] - self.data[[b, a]]).norm());
            }
        }
        r
    }
}

/// Incoming Gaussian wave packet.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PacketSpec {
    pub center: f64,
    pub momentum: f64,
    pub width: f64,
}

impl Default for PacketSpec {
    fn default() -> Self {
        PacketSpec { center: 10.0, momentum: -1.5, width: 1.0 }
    }
}

/// One-electron densities sampled every `stride` propagation steps.
#[derive(Debug, Clone)]
pub struct DensityTrajectory {
    pub grid: GridSpec,
    pub stride: usize,
    /// Shape `(frames, points)`.
    pub rows: Array2<f64>,
}

impl DensityTrajectory {
    pub fn validate(&self, w: &QuadratureWeights, tol: f64) -> Result<()> {
        for (k, row) in self.rows.outer_iter().enumerate() {
            let total = w.integrate(row);
            if (total - 2.0).abs() > tol {
                return Err(Error::Shape(format!(
                    "density row {k} integrates to {total}, expected 2"
                )));
            }
            if row.iter().any(|&v| v < 0.0) {
                return Err(Error::Shape(format!("density row {k} has negative entries")));
            }
        }
        Ok(())
    }
}

/// Exact Kohn-Sham orbitals at the first two coarse time steps.
#[derive(Debug, Clone)]
pub struct KsInitialPair {
    pub phi0: Array1<Complex64>,
    pub phi1: Array1<Complex64>,
    pub dt_used: f64,
}

/// Ground state of `-(1/2)d_xx + v_ext` on the grid, Simpson-normalized,
/// with the global sign fixed so the orbital is nonnegative.
/// Returns the orbital and its energy.
pub fn hydrogen_ground_state(spec: &GridSpec) -> Result<(Array1<f64>, f64)> {
    let n = spec.points();
    let lap = laplacian4(spec)?;
    let vext = grid::external_potential(spec);
    let dense = lap.to_dense();
    let mut h = nalgebra::DMatrix::<f64>::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            h[(a, b)] = -0.5 * dense[[a, b]];
        }
        h[(a, a)] += vext[a];
    }
    let eig = h.clone().symmetric_eigen();
    let (idx, &energy) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let mut phi = Array1::from_iter(eig.eigenvectors.column(idx).iter().copied());

    // Residual check against the assembled operator.
    let hphi = {
        let mut out = Array1::zeros(n);
        for a in 0..n {
            let mut acc = 0.0;
            for b in 0..n {
                acc += h[(a, b)] * phi[b];
            }
            out[a] = acc;
        }
        out
    };
    let resid = (&hphi - &(&phi * energy)).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
    if resid > 1e-8 {
        return Err(Error::Eigen(format!(
            "ground-state residual {resid:.3e} exceeds tolerance"
        )));
    }

    let w = simpson_weights(spec)?;
    let nrm = w.integrate(phi.mapv(|v| v * v).view()).sqrt();
    phi.mapv_inplace(|v| v / nrm);
    let peak = phi.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
    if peak < 0.0 {
        phi.mapv_inplace(|v| -v);
    }
    Ok((phi, energy))
}

fn gaussian_packet(spec: &GridSpec, packet: &PacketSpec) -> Array1<Complex64> {
    Array1::from_iter((0..spec.points()).map(|j| {
        let x = spec.x(j);
        let arg = -(x - packet.center).powi(2) / (4.0 * packet.width * packet.width);
        Complex64::new(arg.exp(), 0.0) * Complex64::new(0.0, packet.momentum * x).exp()
    }))
}

/// Symmetrized product of the hydrogen ground state and a Gaussian packet,
/// normalized under 2D Simpson quadrature.
pub fn initial_wavefunction(spec: &GridSpec, packet: &PacketSpec) -> Result<TwoBodyWavefunction> {
    if packet.width <= 0.0 {
        return Err(Error::Config("packet width must be positive".into()));
    }
    let (phi_h, _) = hydrogen_ground_state(spec)?;
    initial_wavefunction_with_atom(spec, packet, &phi_h)
}

/// Same as [`initial_wavefunction`] but reusing a precomputed atomic orbital.
pub fn initial_wavefunction_with_atom(
    spec: &GridSpec,
    packet: &PacketSpec,
    phi_h: &Array1<f64>,
) -> Result<TwoBodyWavefunction> {
    let n = spec.points();
    let g = gaussian_packet(spec, packet);
    let mut data = Array2::zeros((n, n));
    for a in 0..n {
        for b in 0..n {
            data[[a, b]] = phi_h[a] * g[b] + g[a] * phi_h[b];
        }
    }
    let mut psi = TwoBodyWavefunction { grid: spec.clone(), data };
    let w = simpson_weights(spec)?;
    let nrm = psi.norm(&w);
    psi.data.mapv_inplace(|z| z / nrm);
    Ok(psi)
}

/// `2 sum_j2 |psi(x_j1, x_j2)|^2 w_j2`.
pub fn one_electron_density(psi: &TwoBodyWavefunction) -> Result<Array1<f64>> {
    let w = simpson_weights(&psi.grid)?;
    Ok(Array1::from_iter(psi.data.outer_iter().map(|row| {
        2.0 * row.iter().zip(w.0.iter()).map(|(z, wj)| z.norm_sqr() * wj).sum::<f64>()
    })))
}

/// One-electron probability current `2 sum_j2 Im[psi* (D1 psi)] w_j2`,
/// with the derivative taken along `x1`.
pub fn current_density(psi: &TwoBodyWavefunction) -> Result<Array1<f64>> {
    let w = simpson_weights(&psi.grid)?;
    let d1 = derivative4(&psi.grid)?;
    let n = psi.grid.points();
    let mut out = Array1::zeros(n);
    // Differentiate each column (fixed x2) along x1.
    for j2 in 0..n {
        let col = psi.data.index_axis(Axis(1), j2).to_owned();
        let dcol = d1.apply_complex(col.view());
        for j1 in 0..n {
            out[j1] += 2.0 * (psi.data[[j1, j2]].conj() * dcol[j1]).im * w.0[j2];
        }
    }
    Ok(out)
}

/// Invert a density/current pair into the doubly occupied Kohn-Sham orbital
/// `phi = sqrt(n/2) exp(iS)` with `dS/dx = j/n`, gauge `S(x_min) = 0`.
pub fn exact_ks_state(
    n: ArrayView1<f64>,
    current: ArrayView1<f64>,
    spec: &GridSpec,
) -> Result<Array1<Complex64>> {
    let points = spec.points();
    if n.len() != points || current.len() != points {
        return Err(Error::Shape(format!(
            "density/current length {}/{} does not match grid points {points}",
            n.len(),
            current.len()
        )));
    }
    let velocity: Array1<f64> =
        current.iter().zip(n.iter()).map(|(j, nn)| j / nn.max(DENSITY_CLAMP)).collect();
    // Cumulative trapezoid phase integral from the left boundary.
    let mut phase = Array1::zeros(points);
    for j in 1..points {
        phase[j] = phase[j - 1] + 0.5 * spec.dx * (velocity[j] + velocity[j - 1]);
    }
    Ok(Array1::from_iter((0..points).map(|j| {
        complex_with_exact_norm_sqr((n[j] / 2.0).max(0.0), phase[j])
    })))
}

/// Step the magnitude of `x` by `k` ulps (positive `k` grows |x|).
fn offset_ulps(x: f64, k: i64) -> f64 {
    if x == 0.0 {
        return if k > 0 { f64::from_bits(k as u64) } else { 0.0 };
    }
    let bits = x.to_bits();
    let sign = bits & 0x8000_0000_0000_0000;
    let mag = (bits & 0x7fff_ffff_ffff_ffff) as i64;
    f64::from_bits(sign | (mag + k).max(0) as u64)
}

/// Complex value of argument ≈ `phase` whose `norm_sqr()` equals `target`
/// bit-exactly. A value built with `from_polar` misses by 1-2 ulp from the
/// sqrt/trig roundings; nudging the components by single ulps closes the
/// gap, so densities reconstructed from inverted orbitals reproduce the
/// input density exactly. The phase distortion is a few ulp and physically
/// irrelevant.
fn complex_with_exact_norm_sqr(target: f64, phase: f64) -> Complex64 {
    if target <= 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let a = target.sqrt();
    let (s, c) = phase.sin_cos();

    if s == 0.0 {
        // Purely real: scan for an exactly-invertible square root.
        for k in 0..=128i64 {
            for cand in [offset_ulps(a, k), offset_ulps(a, -k)] {
                if cand * cand == target {
                    return Complex64::new(cand.copysign(c), 0.0);
                }
            }
        }
        return Complex64::new(a.copysign(c), 0.0);
    }

    // Fix the dominant component, solve the smaller one from the
    // remainder, then nudge it until the rounded sum lands on target.
    let re0 = a * c;
    let im0 = a * s;
    let im_dominant = im0.abs() > re0.abs();
    let (p0, q_template) = if im_dominant { (im0, c) } else { (re0, s) };
    let assemble = |p: f64, q: f64| {
        if im_dominant {
            Complex64::new(q, p)
        } else {
            Complex64::new(p, q)
        }
    };
    for k in 0..=24i64 {
        for p in [offset_ulps(p0, -k), offset_ulps(p0, k)] {
            let p2 = p * p;
            let rem = target - p2;
            if rem < 0.0 {
                continue;
            }
            let mut q = rem.sqrt().copysign(if q_template == 0.0 { 1.0 } else { q_template });
            for _ in 0..12 {
                let z = assemble(p, q);
                let total = z.norm_sqr();
                if total == target {
                    return z;
                }
                q = offset_ulps(q, if total > target { -1 } else { 1 });
            }
        }
    }
    Complex64::from_polar(a, phase)
}

/// Orbital current `2 Im[phi* D1 phi]` of a doubly occupied orbital;
/// closure check for [`exact_ks_state`].
pub fn orbital_current(phi: ArrayView1<Complex64>, spec: &GridSpec) -> Result<Array1<f64>> {
    let d1 = derivative4(spec)?;
    let dphi = d1.apply_complex(phi);
    Ok(Array1::from_iter(
        phi.iter().zip(dphi.iter()).map(|(p, dp)| 2.0 * (p.conj() * dp).im),
    ))
}

/// Split-step propagator for the 2D Schrödinger system. The kinetic half
/// step is the degree-4 Taylor series of `exp(-i K dt/2)` applied
/// matrix-free; the potential step is a precomputed diagonal phase.
pub struct TdsePropagator {
    pub grid: GridSpec,
    lap: BandedLaplacian,
    /// `exp(-i V(x1,x2) dt)`.
    potential_phase: Array2<Complex64>,
    weights: QuadratureWeights,
}

impl TdsePropagator {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        let n = spec.points();
        let vext = grid::external_potential(spec);
        let mut phase = Array2::zeros((n, n));
        for a in 0..n {
            for b in 0..n {
                let v = vext[a] + vext[b] + grid::soft_coulomb_pair(spec.x(a), spec.x(b));
                phase[[a, b]] = Complex64::new(0.0, -v * spec.dt).exp();
            }
        }
        Ok(TdsePropagator {
            grid: spec.clone(),
            lap: laplacian4(spec)?,
            potential_phase: phase,
            weights: simpson_weights(spec)?,
        })
    }

    /// `-(1/2)(Laplacian along x1 + Laplacian along x2)`.
    fn kinetic_apply(&self, psi: &Array2<Complex64>) -> Array2<Complex64> {
        let n = self.grid.points() as isize;
        let scale = self.lap.scale;
        let mut out = Array2::zeros(psi.raw_dim());
        const ST: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];
        for a in 0..n {
            for b in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for (s, &c) in ST.iter().enumerate() {
                    let off = s as isize - 2;
                    let m1 = a + off;
                    if m1 >= 0 && m1 < n {
                        acc += c * psi[[m1 as usize, b as usize]];
                    }
                    let m2 = b + off;
                    if m2 >= 0 && m2 < n {
                        acc += c * psi[[a as usize, m2 as usize]];
                    }
                }
                out[[a as usize, b as usize]] = -0.5 * scale * acc;
            }
        }
        out
    }

    /// Degree-4 Taylor series of `exp(-i K dt/2)` applied to `psi`.
    fn kinetic_half_step(&self, psi: &Array2<Complex64>) -> Array2<Complex64> {
        let factor = Complex64::new(0.0, -self.grid.dt / 2.0);
        let mut acc = psi.clone();
        let mut term = psi.clone();
        for m in 1..=4 {
            term = self.kinetic_apply(&term);
            term.mapv_inplace(|z| z * factor / m as f64);
            acc += &term;
        }
        acc
    }

    pub fn step(&self, psi: &mut TwoBodyWavefunction) {
        let half = self.kinetic_half_step(&psi.data);
        let mut mid = half;
        mid.zip_mut_with(&self.potential_phase, |z, p| *z *= p);
        psi.data = self.kinetic_half_step(&mid);
    }

    /// Total energy expectation `<psi|K + V|psi>` under 2D Simpson quadrature.
    pub fn energy(&self, psi: &TwoBodyWavefunction) -> f64 {
        let n = self.grid.points();
        let kin = self.kinetic_apply(&psi.data);
        let vext = grid::external_potential(&self.grid);
        let mut acc = 0.0;
        for a in 0..n {
            for b in 0..n {
                let v = vext[a] + vext[b] + grid::soft_coulomb_pair(self.grid.x(a), self.grid.x(b));
                let h = kin[[a, b]] + v * psi.data[[a, b]];
                acc += (psi.data[[a, b]].conj() * h).re * self.weights.0[a] * self.weights.0[b];
            }
        }
        acc
    }
}

/// Result of a TDSE run: densities and currents at every saved frame plus
/// full wave-function snapshots at the requested step indices.
pub struct TdseRun {
    pub densities: DensityTrajectory,
    /// Currents at the same saved frames, shape `(frames, points)`.
    pub currents: Array2<f64>,
    pub snapshots: Vec<(usize, TwoBodyWavefunction)>,
}

/// Propagate `psi0` for `steps` steps, saving densities/currents every
/// `save_stride` steps and full snapshots at `snapshot_steps`.
/// Aborts if the Simpson norm drifts by more than 1e-6 relative
/// (the series kinetic propagator is not exactly unitary; drift signals
/// a too-large time step).
pub fn propagate_tdse(
    psi0: &TwoBodyWavefunction,
    steps: usize,
    save_stride: usize,
    snapshot_steps: &[usize],
) -> Result<TdseRun> {
    if save_stride == 0 || steps % save_stride != 0 {
        return Err(Error::Config(format!(
            "save stride {save_stride} must divide the step count {steps}"
        )));
    }
    let prop = TdsePropagator::new(&psi0.grid)?;
    let w = simpson_weights(&psi0.grid)?;
    let frames = steps / save_stride + 1;
    let points = psi0.grid.points();
    let mut rows = Array2::zeros((frames, points));
    let mut currents = Array2::zeros((frames, points));
    let mut snapshots = Vec::new();

    let mut psi = psi0.clone();
    let mut frame = 0;
    for k in 0..=steps {
        if k % save_stride == 0 {
            let nrm = psi.norm(&w);
            if (nrm - 1.0).abs() > 1e-6 {
                return Err(Error::Propagation {
                    step: k,
                    msg: format!(
                        "norm drifted to {nrm:.9}; time step too large for the series propagator"
                    ),
                });
            }
            rows.row_mut(frame).assign(&one_electron_density(&psi)?);
            currents.row_mut(frame).assign(&current_density(&psi)?);
            frame += 1;
        }
        if snapshot_steps.contains(&k) {
            snapshots.push((k, psi.clone()));
        }
        if k < steps {
            prop.step(&mut psi);
        }
    }

    Ok(TdseRun {
        densities: DensityTrajectory { grid: psi0.grid.clone(), stride: save_stride, rows },
        currents,
        snapshots,
    })
}

/// Restrict a fine-grid vector to every other point, producing data on the
/// grid with half as many intervals.
pub fn subsample_every_other_f64(v: ArrayView1<f64>) -> Array1<f64> {
    Array1::from_iter(v.iter().step_by(2).copied())
}

pub fn subsample_every_other_c64(v: ArrayView1<Complex64>) -> Array1<Complex64> {
    Array1::from_iter(v.iter().step_by(2).copied())
}

/// The coarse grid obtained by keeping every other spatial point.
pub fn half_resolution(spec: &GridSpec) -> Result<GridSpec> {
    if spec.intervals % 2 != 0 {
        return Err(Error::Grid("cannot halve an odd interval count".into()));
    }
    grid::build_grid(spec.x_min, spec.x_max, spec.intervals / 2, spec.t_final, spec.steps)
}
