//! Run configuration: schema-validated JSON with `desk` presets sized for
//! minutes-scale runs and `paper` presets reproducing the full-scale
//! experiments offline.

use crate::error::{Error, Result};
use crate::grid::{build_grid, GridSpec};
use crate::lbfgs::LbfgsOptions;
use crate::model::ModelKind;
use crate::FS_PER_AU;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
}

/// Control-grid resolution. Exactly one of `dt_au`/`dt_fs` must be set;
/// femtosecond inputs are converted with the pinned constant
/// [`FS_PER_AU`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub intervals: usize,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_au: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_fs: Option<f64>,
}

/// How much finer the reference solver runs than the control grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdseRefinement {
    /// Spatial refinement factor (reference intervals = refine * control
    /// intervals); densities are subsampled back by the same factor.
    pub refine: usize,
    /// Temporal substeps per control step.
    pub substeps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    pub center: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// "phi" (state memory) or "density" (density memory).
    pub kind: String,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub sigma: f64,
}

fn default_memory() -> usize {
    10
}
fn default_grad_tol() -> f64 {
    1e-6
}
fn default_rel_f_tol() -> f64 {
    2.22e-9
}
fn default_c1() -> f64 {
    1e-4
}
fn default_c2() -> f64 {
    0.9
}
fn default_max_ls_evals() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_memory")]
    pub memory: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_rel_f_tol")]
    pub rel_f_tol: f64,
    pub max_iter: usize,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_c2")]
    pub c2: f64,
    #[serde(default = "default_max_ls_evals")]
    pub max_ls_evals: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub domain: Domain,
    pub tdks: TimeGrid,
    pub tdse: TdseRefinement,
    pub packet: PacketConfig,
    /// Momenta to generate reference data for.
    pub momenta: Vec<f64>,
    pub train_momenta: Vec<f64>,
    pub test_momenta: Vec<f64>,
    pub model: ModelConfig,
    pub mu: f64,
    pub optimizer: OptimizerConfig,
}

impl RunConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        let momenta_all = vec![-1.0, -1.2, -1.4, -1.5, -1.6, -1.8];
        let cfg = match name {
            "desk-pointwise" => RunConfig {
                preset: name.into(),
                domain: Domain { x_min: -40.0, x_max: 20.0 },
                tdks: TimeGrid { intervals: 120, steps: 400, dt_au: Some(1.0e-2), dt_fs: None },
                tdse: TdseRefinement { refine: 2, substeps: 10 },
                packet: PacketConfig { center: 10.0, width: 1.0 },
                momenta: vec![-1.5],
                train_momenta: vec![-1.5],
                test_momenta: vec![],
                model: ModelConfig { kind: "phi".into(), hidden: vec![64], seed: 7, sigma: 0.01 },
                mu: 1e-5,
                optimizer: OptimizerConfig {
                    memory: default_memory(),
                    grad_tol: default_grad_tol(),
                    rel_f_tol: default_rel_f_tol(),
                    max_iter: 500,
                    c1: default_c1(),
                    c2: default_c2(),
                    max_ls_evals: default_max_ls_evals(),
                },
            },
            "desk-functional" => RunConfig {
                preset: name.into(),
                domain: Domain { x_min: -40.0, x_max: 20.0 },
                tdks: TimeGrid {
                    intervals: 120,
                    steps: 80,
                    dt_au: Some(9.99219e-2),
                    dt_fs: None,
                },
                tdse: TdseRefinement { refine: 2, substeps: 100 },
                packet: PacketConfig { center: 10.0, width: 1.0 },
                momenta: vec![-1.5],
                train_momenta: vec![-1.5],
                test_momenta: vec![],
                model: ModelConfig { kind: "phi".into(), hidden: vec![64], seed: 7, sigma: 0.01 },
                mu: 0.0,
                optimizer: OptimizerConfig {
                    memory: default_memory(),
                    grad_tol: default_grad_tol(),
                    rel_f_tol: default_rel_f_tol(),
                    max_iter: 500,
                    c1: default_c1(),
                    c2: default_c2(),
                    max_ls_evals: default_max_ls_evals(),
                },
            },
            "paper-pointwise" => RunConfig {
                preset: name.into(),
                domain: Domain { x_min: -80.0, x_max: 40.0 },
                tdks: TimeGrid {
                    intervals: 600,
                    steps: 30000,
                    dt_au: Some(9.99219e-4),
                    dt_fs: None,
                },
                tdse: TdseRefinement { refine: 2, substeps: 1 },
                packet: PacketConfig { center: 10.0, width: 1.0 },
                momenta: vec![-1.5],
                train_momenta: vec![-1.5],
                test_momenta: vec![],
                model: ModelConfig {
                    kind: "phi".into(),
                    hidden: vec![256, 256, 256],
                    seed: 1,
                    sigma: 0.01,
                },
                mu: 1e-5,
                optimizer: OptimizerConfig {
                    memory: default_memory(),
                    grad_tol: default_grad_tol(),
                    rel_f_tol: default_rel_f_tol(),
                    max_iter: 2000,
                    c1: default_c1(),
                    c2: default_c2(),
                    max_ls_evals: default_max_ls_evals(),
                },
            },
            "paper-functional" => RunConfig {
                preset: name.into(),
                domain: Domain { x_min: -80.0, x_max: 40.0 },
                tdks: TimeGrid {
                    intervals: 600,
                    steps: 301,
                    dt_au: Some(9.99219e-2),
                    dt_fs: None,
                },
                tdse: TdseRefinement { refine: 2, substeps: 100 },
                packet: PacketConfig { center: 10.0, width: 1.0 },
                momenta: momenta_all.clone(),
                train_momenta: vec![-1.0, -1.8],
                test_momenta: vec![-1.2, -1.4, -1.5, -1.6],
                model: ModelConfig {
                    kind: "phi".into(),
                    hidden: vec![256, 256, 256],
                    seed: 1,
                    sigma: 0.01,
                },
                mu: 0.0,
                optimizer: OptimizerConfig {
                    memory: default_memory(),
                    grad_tol: default_grad_tol(),
                    rel_f_tol: default_rel_f_tol(),
                    max_iter: 2000,
                    c1: default_c1(),
                    c2: default_c2(),
                    max_ls_evals: default_max_ls_evals(),
                },
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}'; expected desk-pointwise, desk-functional, \
                     paper-pointwise, or paper-functional"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dt_au(&self) -> Result<f64> {
        match (self.tdks.dt_au, self.tdks.dt_fs) {
            (Some(au), None) => Ok(au),
            (None, Some(fs)) => Ok(fs / FS_PER_AU),
            (Some(_), Some(_)) => {
                Err(Error::Config("set exactly one of tdks.dt_au / tdks.dt_fs, not both".into()))
            }
            (None, None) => Err(Error::Config("one of tdks.dt_au / tdks.dt_fs is required".into())),
        }
    }

    /// The control (Kohn-Sham) grid.
    pub fn tdks_grid(&self) -> Result<GridSpec> {
        let dt = self.dt_au()?;
        build_grid(
            self.domain.x_min,
            self.domain.x_max,
            self.tdks.intervals,
            dt * self.tdks.steps as f64,
            self.tdks.steps,
        )
    }

    /// The reference-solver grid (refined in space and time).
    pub fn tdse_grid(&self) -> Result<GridSpec> {
        let dt = self.dt_au()?;
        build_grid(
            self.domain.x_min,
            self.domain.x_max,
            self.tdks.intervals * self.tdse.refine,
            dt * self.tdks.steps as f64,
            self.tdks.steps * self.tdse.substeps,
        )
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        match self.model.kind.as_str() {
            "phi" => Ok(ModelKind::PhiMemory),
            "density" => Ok(ModelKind::DensityMemory),
            other => Err(Error::Config(format!(
                "unknown model kind '{other}'; expected 'phi' or 'density'"
            ))),
        }
    }

    pub fn lbfgs_options(&self) -> LbfgsOptions {
        LbfgsOptions {
            memory: self.optimizer.memory,
            grad_tol: self.optimizer.grad_tol,
            rel_f_tol: self.optimizer.rel_f_tol,
            max_iter: self.optimizer.max_iter,
            c1: self.optimizer.c1,
            c2: self.optimizer.c2,
            max_ls_evals: self.optimizer.max_ls_evals,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        self.dt_au()?;
        self.tdks_grid()?;
        self.tdse_grid()?;
        self.model_kind()?;
        if self.momenta.is_empty() {
            return fail("momenta list must not be empty".into());
        }
        for p in self.train_momenta.iter().chain(&self.test_momenta) {
            if !self.momenta.contains(p) {
                return fail(format!("momentum {p} is not in the generated momenta list"));
            }
        }
        if self.packet.width <= 0.0 {
            return fail("packet width must be positive".into());
        }
        if self.tdse.refine < 1 || self.tdse.substeps < 1 {
            return fail("tdse.refine and tdse.substeps must be at least 1".into());
        }
        if self.mu != 0.0 && !(1e-6..=1e-4).contains(&self.mu) {
            return fail(format!("mu = {} outside the accepted range [1e-6, 1e-4] (or 0)", self.mu));
        }
        if self.model.sigma <= 0.0 {
            return fail("model.sigma must be positive".into());
        }
        if self.model.hidden.is_empty() {
            return fail("model.hidden must list at least one layer width".into());
        }
        let o = &self.optimizer;
        if !(0.0 < o.c1 && o.c1 < o.c2 && o.c2 < 1.0) {
            return fail("optimizer needs 0 < c1 < c2 < 1".into());
        }
        if o.memory == 0 {
            return fail("optimizer memory must be at least 1".into());
        }
        Ok(())
    }

    /// Fingerprint of the canonical JSON serialization; embedded in every
    /// output file so artifacts from different configs cannot be mixed.
    pub fn hash(&self) -> u64 {
        crate::fnv1a(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
