//! Spatial/temporal grids, soft-Coulomb potentials, and the discrete
//! operators (fourth-order Laplacian, Simpson quadrature, interaction
//! kernel) shared by every solver in this crate.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;

/// Uniform space-time grid. All quantities in atomic units.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    /// Number of spatial intervals; the grid has `intervals + 1` points.
    pub intervals: usize,
    pub dx: f64,
    /// Final time.
    pub t_final: f64,
    /// Number of time steps; a trajectory has `steps + 1` frames.
    pub steps: usize,
    pub dt: f64,
}

impl GridSpec {
    pub fn points(&self) -> usize {
        self.intervals + 1
    }

    pub fn frames(&self) -> usize {
        self.steps + 1
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    pub fn positions(&self) -> Array1<f64> {
        Array1::from_iter((0..self.points()).map(|j| self.x(j)))
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

pub fn build_grid(
    x_min: f64,
    x_max: f64,
    intervals: usize,
    t_final: f64,
    steps: usize,
) -> Result<GridSpec> {
    if !(x_max > x_min) {
        return Err(Error::Grid(format!(
            "domain extent must be positive, got [{x_min}, {x_max}]"
        )));
    }
    if intervals < 4 {
        return Err(Error::Grid(format!(
            "need at least 4 spatial intervals, got {intervals}"
        )));
    }
    if intervals % 2 != 0 {
        return Err(Error::Grid(format!(
            "spatial interval count must be even for composite Simpson quadrature, got {intervals}"
        )));
    }
    if !(t_final > 0.0) {
        return Err(Error::Grid(format!("final time must be positive, got {t_final}")));
    }
    if steps < 1 {
        return Err(Error::Grid("need at least 1 time step".into()));
    }
    Ok(GridSpec {
        x_min,
        x_max,
        intervals,
        dx: (x_max - x_min) / intervals as f64,
        t_final,
        steps,
        dt: t_final / steps as f64,
    })
}

/// Soft-Coulomb external potential of the hydrogen atom at x = -10:
/// `-((x + 10)^2 + 1)^{-1/2}`.
pub fn external_potential(grid: &GridSpec) -> Array1<f64> {
    Array1::from_iter((0..grid.points()).map(|j| soft_coulomb_well(grid.x(j))))
}

pub fn soft_coulomb_well(x: f64) -> f64 {
    -1.0 / ((x + 10.0) * (x + 10.0) + 1.0).sqrt()
}

/// Soft-Coulomb electron-electron repulsion `((x' - x)^2 + 1)^{-1/2}`.
pub fn soft_coulomb_pair(x1: f64, x2: f64) -> f64 {
    1.0 / ((x1 - x2) * (x1 - x2) + 1.0).sqrt()
}

/// Fourth-order discrete Laplacian with interior stencil
/// `[-1, 16, -30, 16, -1] / (12 dx^2)`, truncated at the boundaries
/// (no ghost points). Applied matrix-free.
#[derive(Debug, Clone)]
pub struct BandedLaplacian {
    pub points: usize,
    /// `1 / (12 dx^2)`.
    pub scale: f64,
}

const LAP_STENCIL: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];

impl BandedLaplacian {
    pub fn apply(&self, v: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(v.len(), self.points);
        let n = self.points as isize;
        let mut out = Array1::zeros(self.points);
        for j in 0..n {
            let mut acc = 0.0;
            for (s, &c) in LAP_STENCIL.iter().enumerate() {
                let m = j + s as isize - 2;
                if m >= 0 && m < n {
                    acc += c * v[m as usize];
                }
            }
            out[j as usize] = self.scale * acc;
        }
        out
    }

    pub fn apply_complex(&self, v: ArrayView1<Complex64>) -> Array1<Complex64> {
        assert_eq!(v.len(), self.points);
        let n = self.points as isize;
        let mut out = Array1::zeros(self.points);
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (s, &c) in LAP_STENCIL.iter().enumerate() {
                let m = j + s as isize - 2;
                if m >= 0 && m < n {
                    acc += c * v[m as usize];
                }
            }
            out[j as usize] = self.scale * acc;
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.points;
        let mut m = Array2::zeros((n, n));
        for j in 0..n as isize {
            for (s, &c) in LAP_STENCIL.iter().enumerate() {
                let col = j + s as isize - 2;
                if col >= 0 && col < n as isize {
                    m[[j as usize, col as usize]] = self.scale * c;
                }
            }
        }
        m
    }
}

pub fn laplacian4(grid: &GridSpec) -> Result<BandedLaplacian> {
    if grid.intervals < 4 {
        return Err(Error::Grid(
            "fourth-order Laplacian stencil needs at least 4 intervals".into(),
        ));
    }
    Ok(BandedLaplacian {
        points: grid.points(),
        scale: 1.0 / (12.0 * grid.dx * grid.dx),
    })
}

/// Fourth-order central first derivative `[1, -8, 0, 8, -1] / (12 dx)`,
/// truncated at the boundaries like the Laplacian.
#[derive(Debug, Clone)]
pub struct BandedDerivative {
    pub points: usize,
    /// `1 / (12 dx)`.
    pub scale: f64,
}

const D1_STENCIL: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];

impl BandedDerivative {
    pub fn apply_complex(&self, v: ArrayView1<Complex64>) -> Array1<Complex64> {
        assert_eq!(v.len(), self.points);
        let n = self.points as isize;
        let mut out = Array1::zeros(self.points);
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (s, &c) in D1_STENCIL.iter().enumerate() {
                let m = j + s as isize - 2;
                if m >= 0 && m < n {
                    acc += c * v[m as usize];
                }
            }
            out[j as usize] = self.scale * acc;
        }
        out
    }
}

pub fn derivative4(grid: &GridSpec) -> Result<BandedDerivative> {
    if grid.intervals < 4 {
        return Err(Error::Grid(
            "fourth-order derivative stencil needs at least 4 intervals".into(),
        ));
    }
    Ok(BandedDerivative {
        points: grid.points(),
        scale: 1.0 / (12.0 * grid.dx),
    })
}

/// Composite Simpson weights including the `dx / 3` factor:
/// `(dx/3) * [1, 4, 2, 4, ..., 4, 1]`.
#[derive(Debug, Clone)]
pub struct QuadratureWeights(pub Array1<f64>);

impl QuadratureWeights {
    pub fn integrate(&self, v: ArrayView1<f64>) -> f64 {
        self.0.dot(&v)
    }
}

pub fn simpson_weights(grid: &GridSpec) -> Result<QuadratureWeights> {
    if grid.intervals % 2 != 0 {
        return Err(Error::Grid(
            "composite Simpson quadrature requires an even interval count".into(),
        ));
    }
    let n = grid.points();
    let h = grid.dx / 3.0;
    let mut w = Array1::zeros(n);
    for j in 0..n {
        w[j] = if j == 0 || j == n - 1 {
            h
        } else if j % 2 == 1 {
            4.0 * h
        } else {
            2.0 * h
        };
    }
    Ok(QuadratureWeights(w))
}

/// Symmetric soft-Coulomb interaction kernel
/// `W[j, j'] = ((x_j' - x_j)^2 + 1)^{-1/2} dx`.
#[derive(Debug, Clone)]
pub struct InteractionMatrix(pub Array2<f64>);

pub fn interaction_matrix(grid: &GridSpec) -> InteractionMatrix {
    let n = grid.points();
    let mut m = Array2::zeros((n, n));
    for j in 0..n {
        for jp in j..n {
            // |x_j' - x_j| depends only on the index distance on a uniform grid,
            // so mirrored entries are bit-equal by construction.
            let v = soft_coulomb_pair(grid.x(j), grid.x(jp)) * grid.dx;
            m[[j, jp]] = v;
            m[[jp, j]] = v;
        }
    }
    InteractionMatrix(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_grid() -> GridSpec {
        build_grid(0.0, 1.0, 4, 1.0, 1).unwrap()
    }

    #[test]
    fn grid_derived_spacings() {
        let g = unit_grid();
        assert_eq!(g.dx, 0.25);
        assert_eq!(g.dt, 1.0);
        let g = build_grid(-80.0, 40.0, 1200, 30.0, 100).unwrap();
        assert_relative_eq!(g.dx, 0.1, max_relative = 1e-12);
        let g = build_grid(-80.0, 40.0, 600, 30.0, 100).unwrap();
        assert_relative_eq!(g.dx, 0.2, max_relative = 1e-12);
        assert_relative_eq!(g.intervals as f64 * g.dx, g.x_max - g.x_min, max_relative = 1e-12);
        assert_relative_eq!(g.steps as f64 * g.dt, g.t_final, max_relative = 1e-12);
    }

    #[test]
    fn grid_rejects_odd_intervals() {
        let err = build_grid(0.0, 1.0, 5, 1.0, 1).unwrap_err();
        assert!(err.to_string().contains("Simpson"));
        assert!(build_grid(1.0, 0.0, 4, 1.0, 1).is_err());
        assert!(build_grid(0.0, 1.0, 4, -1.0, 1).is_err());
        assert!(build_grid(0.0, 1.0, 2, 1.0, 1).is_err());
    }

    #[test]
    fn external_potential_values() {
        let g = build_grid(-80.0, 40.0, 1200, 1.0, 1).unwrap();
        let v = external_potential(&g);
        // x = -10 is grid point j = 700; the well bottom is exactly -1 there.
        assert_relative_eq!(v[700], -1.0, max_relative = 1e-12);
        // x = 0 is grid point j = 800.
        assert_relative_eq!(v[800], -1.0 / 101f64.sqrt(), max_relative = 1e-12);
        let argmin = v
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmin, 700);
    }

    #[test]
    fn laplacian_exact_on_quadratic() {
        let g = build_grid(-80.0, 40.0, 1200, 1.0, 1).unwrap();
        let lap = laplacian4(&g).unwrap();
        let f = Array1::from_iter((0..g.points()).map(|j| g.x(j) * g.x(j)));
        let d2 = lap.apply(f.view());
        for j in 2..g.points() - 2 {
            assert!((d2[j] - 2.0).abs() < 1e-8, "j={j} d2={}", d2[j]);
        }
    }

    #[test]
    fn laplacian_fourth_order_on_sine() {
        let order = |intervals: usize| {
            let g = build_grid(-1.0, 1.0, intervals, 1.0, 1).unwrap();
            let lap = laplacian4(&g).unwrap();
            let f = Array1::from_iter((0..g.points()).map(|j| g.x(j).sin()));
            let d2 = lap.apply(f.view());
            (2..g.points() - 2)
                .map(|j| (d2[j] + g.x(j).sin()).abs())
                .fold(0.0f64, f64::max)
        };
        let ratio = order(100) / order(200);
        assert!(ratio > 2f64.powf(3.7), "observed refinement ratio {ratio}");
    }

    #[test]
    fn laplacian_boundary_row() {
        let g = unit_grid();
        let lap = laplacian4(&g).unwrap();
        let dense = lap.to_dense();
        let s = 1.0 / (12.0 * g.dx * g.dx);
        assert_eq!(dense[[0, 0]], -30.0 * s);
        assert_eq!(dense[[0, 1]], 16.0 * s);
        assert_eq!(dense[[0, 2]], -1.0 * s);
        assert_eq!(dense[[0, 3]], 0.0);
        // Exact symmetry, bit equality.
        for a in 0..g.points() {
            for b in 0..g.points() {
                assert_eq!(dense[[a, b]], dense[[b, a]]);
            }
        }
    }

    #[test]
    fn simpson_pattern_and_cubic_exactness() {
        let g = build_grid(0.0, 4.0, 4, 1.0, 1).unwrap(); // dx = 1
        let w = simpson_weights(&g).unwrap();
        let expect = [1.0 / 3.0, 4.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0];
        for (a, b) in w.0.iter().zip(expect) {
            assert_relative_eq!(*a, b, max_relative = 1e-14);
        }

        let g = build_grid(0.0, 2.0, 4, 1.0, 1).unwrap();
        let w = simpson_weights(&g).unwrap();
        let f = Array1::from_iter((0..g.points()).map(|j| g.x(j).powi(3)));
        assert!((w.integrate(f.view()) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn simpson_weights_sum_to_domain_length() {
        let g = build_grid(-80.0, 40.0, 600, 1.0, 1).unwrap();
        let w = simpson_weights(&g).unwrap();
        assert_relative_eq!(w.0.sum(), 120.0, max_relative = 1e-12);
    }

    #[test]
    fn interaction_matrix_entries() {
        let g = build_grid(-80.0, 40.0, 600, 1.0, 1).unwrap();
        let w = interaction_matrix(&g);
        let n = g.points();
        for j in 0..n {
            assert_eq!(w.0[[j, j]], g.dx);
        }
        assert_relative_eq!(
            w.0[[0, n - 1]],
            0.2 / (120.0f64 * 120.0 + 1.0).sqrt(),
            max_relative = 1e-12
        );
        for j in (0..n).step_by(97) {
            for jp in (0..n).step_by(89) {
                assert_eq!(w.0[[j, jp]], w.0[[jp, j]]);
                assert!(w.0[[j, jp]] > 0.0 && w.0[[j, jp]] <= g.dx);
            }
        }
    }
}
