//! Implementations of the CLI commands. Kept in the library so tests can
//! drive full pipelines in-process.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::simpson_weights;
use crate::io;
use crate::lbfgs::Termination;
use crate::tdks::{build_cache, CorrelationGrid};
use crate::tdse::{
    exact_ks_state, initial_wavefunction_with_atom, hydrogen_ground_state, propagate_tdse,
    KsInitialPair, PacketSpec,
};
use crate::trainer::{
    rollout_and_score, train_functional, train_pointwise, Control, EvalReport, FunctionalProblem,
    PointwiseProblem, TrajectoryCase,
};
use ndarray::{Array1, Array2};
use serde::Serialize;
use std::path::{Path, PathBuf};

fn momentum_tag(p: f64) -> String {
    format!("{p:.1}")
}

pub fn reference_path(data_dir: &Path, p: f64) -> PathBuf {
    data_dir.join(format!("reference_p{}.traj", momentum_tag(p)))
}

pub fn ks_pair_path(data_dir: &Path, p: f64) -> PathBuf {
    data_dir.join(format!("kspair_p{}.traj", momentum_tag(p)))
}

fn subsample(row: ndarray::ArrayView1<f64>, factor: usize) -> Array1<f64> {
    Array1::from_iter(row.iter().step_by(factor).copied())
}

/// Solve the two-electron reference problem for every configured momentum
/// and write density/current trajectories plus inverted Kohn-Sham initial
/// pairs on the control grid. Returns the written paths.
pub fn cmd_generate_reference(cfg: &RunConfig, data_dir: &Path) -> Result<Vec<PathBuf>> {
    let fine = cfg.tdse_grid()?;
    let coarse = cfg.tdks_grid()?;
    let refine = cfg.tdse.refine;
    let substeps = cfg.tdse.substeps;
    let hash = cfg.hash();
    let weights = simpson_weights(&coarse)?;
    let (phi_h, _) = hydrogen_ground_state(&fine)?;

    let mut written = Vec::new();
    for &p in &cfg.momenta {
        let packet =
            PacketSpec { center: cfg.packet.center, momentum: p, width: cfg.packet.width };
        let psi0 = initial_wavefunction_with_atom(&fine, &packet, &phi_h)?;
        let run = propagate_tdse(&psi0, fine.steps, substeps, &[])?;

        let frames = coarse.frames();
        let points = coarse.points();
        let mut densities = Array2::zeros((frames, points));
        let mut currents = Array2::zeros((frames, points));
        for k in 0..frames {
            densities.row_mut(k).assign(&subsample(run.densities.rows.row(k), refine));
            currents.row_mut(k).assign(&subsample(run.currents.row(k), refine));
            // Simpson quadrature of a density subsampled from a finer grid
            // carries the coarse grid's O(dx^4) quadrature error, so the
            // sanity bound must be looser than the fine-grid norm tolerance.
            let charge = weights.integrate(densities.row(k));
            if (charge - 2.0).abs() > 1e-3 {
                return Err(Error::Propagation {
                    step: k * substeps,
                    msg: format!("saved density integrates to {charge:.9}, expected 2"),
                });
            }
        }

        let rpath = reference_path(data_dir, p);
        io::save_density_trajectory(
            &rpath,
            &coarse,
            substeps,
            &densities,
            &currents,
            p,
            cfg.packet.width,
            hash,
        )?;
        written.push(rpath);

        let pair = invert_pair(&densities, &currents, &coarse)?;
        let kpath = ks_pair_path(data_dir, p);
        io::save_ks_pair(&kpath, &coarse, &pair, p, hash)?;
        written.push(kpath);
    }
    Ok(written)
}

fn invert_pair(
    densities: &Array2<f64>,
    currents: &Array2<f64>,
    spec: &crate::grid::GridSpec,
) -> Result<KsInitialPair> {
    if densities.nrows() < 2 {
        return Err(Error::Config("need at least two frames to invert the initial pair".into()));
    }
    Ok(KsInitialPair {
        phi0: exact_ks_state(densities.row(0), currents.row(0), spec)?,
        phi1: exact_ks_state(densities.row(1), currents.row(1), spec)?,
        dt_used: spec.dt,
    })
}

/// Re-invert Kohn-Sham initial pairs from existing reference files.
pub fn cmd_invert_initial(cfg: &RunConfig, data_dir: &Path) -> Result<Vec<PathBuf>> {
    let coarse = cfg.tdks_grid()?;
    let hash = cfg.hash();
    let mut written = Vec::new();
    for &p in &cfg.momenta {
        let (header, densities, currents) =
            io::load_density_trajectory(&reference_path(data_dir, p))?;
        header.expect_config(hash)?;
        expect_grid(&header, &coarse)?;
        let pair = invert_pair(&densities, &currents, &coarse)?;
        let kpath = ks_pair_path(data_dir, p);
        io::save_ks_pair(&kpath, &coarse, &pair, p, hash)?;
        written.push(kpath);
    }
    Ok(written)
}

fn expect_grid(header: &io::Header, spec: &crate::grid::GridSpec) -> Result<()> {
    match &header.grid {
        Some(g) if g == spec => Ok(()),
        Some(g) => Err(Error::Format(format!(
            "file grid (J={}, K={}) does not match the configured grid (J={}, K={})",
            g.intervals, g.steps, spec.intervals, spec.steps
        ))),
        None => Err(Error::Format("file header carries no grid".into())),
    }
}

fn load_case(cfg: &RunConfig, data_dir: &Path, p: f64) -> Result<TrajectoryCase> {
    let coarse = cfg.tdks_grid()?;
    let hash = cfg.hash();
    let (rheader, densities, _) = io::load_density_trajectory(&reference_path(data_dir, p))?;
    rheader.expect_config(hash)?;
    expect_grid(&rheader, &coarse)?;
    let (pheader, pair) = io::load_ks_pair(&ks_pair_path(data_dir, p))?;
    pheader.expect_config(hash)?;
    expect_grid(&pheader, &coarse)?;
    Ok(TrajectoryCase {
        label: momentum_tag(p),
        phi0: pair.phi0,
        phi1: pair.phi1,
        reference: densities,
    })
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub baseline_mse: f64,
    pub final_mse: f64,
    pub improvement_factor: f64,
    pub iterations: usize,
    pub termination: String,
    pub per_trajectory: Vec<crate::trainer::TrajectoryScore>,
}

fn write_report(path: &Path, report: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text.as_bytes())?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Learn pointwise correlation values for the single training momentum.
pub fn cmd_train_pointwise(
    cfg: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
    mut on_iter: impl FnMut(&crate::lbfgs::IterRecord),
) -> Result<TrainSummary> {
    let [p] = cfg.train_momenta[..] else {
        return Err(Error::Config(
            "pointwise training uses exactly one training momentum".into(),
        ));
    };
    let coarse = cfg.tdks_grid()?;
    let hash = cfg.hash();
    let cache = build_cache(&coarse)?;
    let case = load_case(cfg, data_dir, p)?;

    let init = match resume {
        Some(path) => {
            let (header, control) = io::load_checkpoint(path)?;
            header.expect_config(hash)?;
            match control {
                Control::Pointwise(vc) => Some(vc),
                _ => return Err(Error::Config("checkpoint does not hold a pointwise control".into())),
            }
        }
        None => None,
    };
    let problem =
        PointwiseProblem { phi0: case.phi0, reference: case.reference, mu: cfg.mu, init };

    std::fs::create_dir_all(out_dir)?;
    let mut trace = io::TraceWriter::create(&out_dir.join("trace-pointwise.log"))?;
    let out = train_pointwise(&problem, &cache, &cfg.lbfgs_options(), |rec| {
        trace.log(rec);
        on_iter(rec);
    })?;

    let ckpt = out_dir.join("checkpoint-pointwise.ckpt");
    io::save_checkpoint(
        &ckpt,
        &Control::Pointwise(out.vc),
        &coarse,
        out.result.trace.records.len(),
        cfg.model.seed,
        hash,
    )?;

    let summary = TrainSummary {
        baseline_mse: out.baseline_mse,
        final_mse: out.final_mse,
        improvement_factor: out.baseline_mse / out.final_mse.max(f64::MIN_POSITIVE),
        iterations: out.result.trace.records.len(),
        termination: termination_name(out.result.termination),
        per_trajectory: vec![crate::trainer::TrajectoryScore {
            label: momentum_tag(p),
            mse: out.final_mse,
        }],
    };
    write_report(&out_dir.join("report-pointwise.json"), &summary)?;
    Ok(summary)
}

fn termination_name(t: Termination) -> String {
    format!("{t}")
}

/// Learn memory-functional parameters on the configured training momenta.
pub fn cmd_train_functional(
    cfg: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
    mut on_iter: impl FnMut(&crate::lbfgs::IterRecord),
) -> Result<TrainSummary> {
    let coarse = cfg.tdks_grid()?;
    let hash = cfg.hash();
    let cache = build_cache(&coarse)?;
    let kind = cfg.model_kind()?;
    let cases = cfg
        .train_momenta
        .iter()
        .map(|&p| load_case(cfg, data_dir, p))
        .collect::<Result<Vec<_>>>()?;

    let init = match resume {
        Some(path) => {
            let (header, control) = io::load_checkpoint(path)?;
            header.expect_config(hash)?;
            match control {
                Control::Functional { params, kind: k } if k == kind => Some(params),
                Control::Functional { .. } => {
                    return Err(Error::Config("checkpoint holds a different model kind".into()))
                }
                _ => {
                    return Err(Error::Config(
                        "checkpoint does not hold a functional control".into(),
                    ))
                }
            }
        }
        None => None,
    };
    let problem = FunctionalProblem {
        cases,
        kind,
        hidden: cfg.model.hidden.clone(),
        seed: cfg.model.seed,
        sigma: cfg.model.sigma,
        init,
    };

    std::fs::create_dir_all(out_dir)?;
    let mut trace = io::TraceWriter::create(&out_dir.join("trace-functional.log"))?;
    let out = train_functional(&problem, &cache, &cfg.lbfgs_options(), |rec| {
        trace.log(rec);
        on_iter(rec);
    })?;

    let ckpt = out_dir.join("checkpoint-functional.ckpt");
    io::save_checkpoint(
        &ckpt,
        &Control::Functional { params: out.params, kind },
        &coarse,
        out.result.trace.records.len(),
        cfg.model.seed,
        hash,
    )?;

    let summary = TrainSummary {
        baseline_mse: out.baseline_report.overall,
        final_mse: out.report.overall,
        improvement_factor: out.baseline_report.overall / out.report.overall.max(f64::MIN_POSITIVE),
        iterations: out.result.trace.records.len(),
        termination: termination_name(out.result.termination),
        per_trajectory: out.report.per_trajectory,
    };
    write_report(&out_dir.join("report-functional.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct RolloutSummary {
    pub extra_steps: usize,
    pub report: EvalReport,
    /// File names relative to the output directory, so the written report
    /// does not depend on where that directory lives.
    pub files: Vec<PathBuf>,
}

/// Propagate a trained control for the requested momenta, optionally past
/// the training horizon, writing predicted-density files and a score
/// report.
pub fn cmd_rollout(
    cfg: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    checkpoint: &Path,
    momenta: &[f64],
    extra_steps: usize,
) -> Result<RolloutSummary> {
    let coarse = cfg.tdks_grid()?;
    let hash = cfg.hash();
    let (header, control) = io::load_checkpoint(checkpoint)?;
    header.expect_config(hash)?;
    expect_grid(&header, &coarse)?;
    if extra_steps > 0 && matches!(control, Control::Pointwise(_)) {
        return Err(Error::Config(
            "a pointwise control is undefined past its own grid; extra steps need a functional \
             checkpoint"
                .into(),
        ));
    }

    let extended = crate::grid::build_grid(
        coarse.x_min,
        coarse.x_max,
        coarse.intervals,
        coarse.dt * (coarse.steps + extra_steps) as f64,
        coarse.steps + extra_steps,
    )?;
    let cache = build_cache(&extended)?;
    let weights = simpson_weights(&extended)?;

    let cases =
        momenta.iter().map(|&p| load_case(cfg, data_dir, p)).collect::<Result<Vec<_>>>()?;
    let (all_densities, report) = rollout_and_score(&control, &cases, &cache)?;

    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    for (case, densities) in cases.iter().zip(&all_densities) {
        for k in 0..densities.nrows() {
            // The split step is unitary in the plain dx-weighted norm; the
            // Simpson charge differs by the O(dx^4) quadrature discrepancy,
            // so this is a sanity bound rather than a unitarity check.
            let charge = weights.integrate(densities.row(k));
            if (charge - 2.0).abs() > 1e-3 {
                return Err(Error::Propagation {
                    step: k,
                    msg: format!("predicted density integrates to {charge:.9}, expected 2"),
                });
            }
        }
        let name = format!("predicted_p{}.traj", case.label);
        let mut h = io::Header::new("predicted-trajectory", Some(extended.clone()), hash)
            .with_meta("momentum", serde_json::json!(case.label))
            .with_meta("extra_steps", serde_json::json!(extra_steps));
        h.declare("densities", &[densities.nrows(), densities.ncols()]);
        io::write_container(&out_dir.join(&name), &h, densities.as_slice().unwrap())?;
        files.push(PathBuf::from(name));
    }

    let summary = RolloutSummary { extra_steps, report, files };
    write_report(&out_dir.join("report-rollout.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct EvaluateSummary {
    pub train: EvalReport,
    pub test: EvalReport,
}

/// Score a checkpoint on the configured train and test momenta over the
/// training horizon.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    checkpoint: &Path,
) -> Result<EvaluateSummary> {
    let coarse = cfg.tdks_grid()?;
    let hash = cfg.hash();
    let (header, control) = io::load_checkpoint(checkpoint)?;
    header.expect_config(hash)?;
    expect_grid(&header, &coarse)?;
    let cache = build_cache(&coarse)?;

    let score = |momenta: &[f64]| -> Result<EvalReport> {
        if momenta.is_empty() {
            return Ok(EvalReport { per_trajectory: vec![], overall: f64::NAN });
        }
        let cases =
            momenta.iter().map(|&p| load_case(cfg, data_dir, p)).collect::<Result<Vec<_>>>()?;
        let (_, report) = rollout_and_score(&control, &cases, &cache)?;
        Ok(report)
    };

    let summary =
        EvaluateSummary { train: score(&cfg.train_momenta)?, test: score(&cfg.test_momenta)? };
    std::fs::create_dir_all(out_dir)?;
    write_report(&out_dir.join("report-evaluate.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct CsvExport {
    pub requested_time: f64,
    pub snapped_time: f64,
    pub frame: usize,
    pub path: PathBuf,
}

/// Export per-time snapshots (x, reference density, optional predicted
/// density, optional pointwise correlation row) as CSV. Times snap to the
/// nearest saved frame; times outside the horizon are rejected.
pub fn cmd_export_csv(
    reference: &Path,
    predicted: Option<&Path>,
    checkpoint: Option<&Path>,
    times_au: &[f64],
    out_dir: &Path,
) -> Result<Vec<CsvExport>> {
    let (rheader, rdens, _) = io::load_density_trajectory(reference)?;
    let grid = rheader
        .grid
        .clone()
        .ok_or_else(|| Error::Format("reference file carries no grid".into()))?;
    let pdens = match predicted {
        Some(path) => {
            let (pheader, payload) = io::read_container(path)?;
            let idx = pheader.array_index("densities")?;
            let shape = pheader.arrays[idx].shape.clone();
            Some(Array2::from_shape_vec((shape[0], shape[1]), payload).map_err(|e| {
                Error::Format(format!("predicted densities: {e}"))
            })?)
        }
        None => None,
    };
    let vc: Option<CorrelationGrid> = match checkpoint {
        Some(path) => match io::load_checkpoint(path)?.1 {
            Control::Pointwise(vc) => Some(vc),
            Control::Functional { .. } => None,
        },
        None => None,
    };

    std::fs::create_dir_all(out_dir)?;
    let x = grid.positions();
    let mut exports = Vec::new();
    for &t in times_au {
        let frame = (t / grid.dt).round();
        if frame < 0.0 || frame as usize >= rdens.nrows() {
            return Err(Error::Config(format!(
                "time {t} a.u. lies outside the trajectory horizon [0, {}]",
                grid.dt * (rdens.nrows() - 1) as f64
            )));
        }
        let frame = frame as usize;
        let snapped = frame as f64 * grid.dt;

        let n_ref = rdens.row(frame).to_owned();
        let mut columns: Vec<(&str, &Array1<f64>)> = vec![("x", &x), ("n_reference", &n_ref)];
        let n_pred = pdens.as_ref().map(|d| d.row(frame).to_owned());
        if let Some(p) = n_pred.as_ref() {
            columns.push(("n_predicted", p));
        }
        let vrow = vc.as_ref().and_then(|v| {
            (frame < v.0.nrows()).then(|| v.0.row(frame).to_owned())
        });
        if let Some(v) = vrow.as_ref() {
            columns.push(("v_correlation", v));
        }

        let path = out_dir.join(format!("snapshot_k{frame}.csv"));
        io::export_csv(&path, &columns)?;
        exports.push(CsvExport { requested_time: t, snapped_time: snapped, frame, path });
    }
    Ok(exports)
}
