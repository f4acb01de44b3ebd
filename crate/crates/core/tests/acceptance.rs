//! Acceptance suite: one test per acceptance criterion, each printing a
//! single PASS/FAIL line (run with `--nocapture` to see them; a FAIL also
//! panics with the same line).

use ndarray::Array1;
use num_complex::Complex64;
use std::time::Instant;
use tdks_learn::commands::{
    cmd_evaluate, cmd_generate_reference, cmd_invert_initial, cmd_rollout, cmd_train_functional,
    cmd_train_pointwise, ks_pair_path, reference_path,
};
use tdks_learn::config::RunConfig;
use tdks_learn::gradcheck;
use tdks_learn::grid::{build_grid, laplacian4, simpson_weights, GridSpec};
use tdks_learn::io;
use tdks_learn::lbfgs::{minimize, LbfgsOptions};
use tdks_learn::model::init_params;
use tdks_learn::tdks::{build_cache, density_of, propagate_functional, propagate_pointwise, CorrelationGrid};
use tdks_learn::tdse::{
    current_density, exact_ks_state, initial_wavefunction, one_electron_density, orbital_current,
    propagate_tdse, PacketSpec,
};
use tdks_learn::trainer::mse_against;

fn report(n: u32, what: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {n:2} {}: {what} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    println!("{line}");
    assert!(pass, "{line}");
}

#[test]
fn criterion_01_pointwise_adjoint_gradient() {
    let t0 = Instant::now();
    let rep = gradcheck::check_pointwise_gradient().unwrap();
    let secs = t0.elapsed().as_secs_f64();
    report(
        1,
        "pointwise adjoint gradient vs finite differences",
        rep.passed() && secs < 10.0,
        &format!("max rel error {:.3e} (tol {:.0e}), {secs:.1} s", rep.max_error, rep.tolerance),
    );
}

#[test]
fn criterion_02_functional_adjoint_gradient() {
    let t0 = Instant::now();
    let rep = gradcheck::check_functional_gradient().unwrap();
    let secs = t0.elapsed().as_secs_f64();
    report(
        2,
        "functional adjoint gradient vs finite differences (both kinds, incl. delayed term)",
        rep.passed() && secs < 60.0,
        &format!("max rel error {:.3e} (tol {:.0e}), {secs:.1} s", rep.max_error, rep.tolerance),
    );
}

#[test]
fn criterion_03_dense_jacobian_oracle() {
    let rep = gradcheck::check_dense_jacobian().unwrap();
    report(
        3,
        "VJP backsteps vs explicitly assembled block Jacobian",
        rep.passed(),
        &format!("max abs error {:.3e} (tol {:.0e})", rep.max_error, rep.tolerance),
    );
}

#[test]
fn criterion_04_unitarity_and_conservation() {
    // TDKS: 30000 steps at J=120 on the production domain, zero control.
    let spec = build_grid(-40.0, 20.0, 120, 30000.0 * 9.99219e-4, 30000).unwrap();
    let mut phi: Array1<Complex64> = (0..spec.points())
        .map(|j| {
            let x = spec.x(j) + 10.0;
            Complex64::new((-x * x / 8.0).exp(), 0.2 * (-x * x / 10.0).exp())
        })
        .collect();
    let w = simpson_weights(&spec).unwrap();
    let nrm = phi.iter().zip(w.0.iter()).map(|(z, wj)| z.norm_sqr() * wj).sum::<f64>().sqrt();
    phi.mapv_inplace(|z| z / nrm);
    let cache = build_cache(&spec).unwrap();
    let traj = propagate_pointwise(&phi, &CorrelationGrid::zeros(&spec), &cache).unwrap();
    let uniform = |s: &Array1<Complex64>| s.iter().map(|z| z.norm_sqr()).sum::<f64>() * spec.dx;
    let n0 = uniform(&traj.states[0]);
    let mut per_step = 0.0f64;
    let mut total = 0.0f64;
    let mut prev = n0;
    for s in traj.states.iter().skip(1) {
        let n = uniform(s);
        per_step = per_step.max((n - prev).abs());
        total = total.max((n - n0).abs());
        prev = n;
    }

    // TDSE: 1000 steps on a desk-scale 2D grid.
    let tspec = build_grid(-40.0, 20.0, 240, 1.0, 1000).unwrap();
    let psi0 = initial_wavefunction(
        &tspec,
        &PacketSpec { center: 10.0, momentum: -1.5, width: 1.0 },
    )
    .unwrap();
    let run = propagate_tdse(&psi0, 1000, 100, &[1000]).unwrap();
    let tw = simpson_weights(&tspec).unwrap();
    let mut charge_err = 0.0f64;
    for row in run.densities.rows.outer_iter() {
        charge_err = charge_err.max((tw.integrate(row) - 2.0).abs());
    }
    let swap = run.snapshots[0].1.swap_residual();

    let pass = per_step < 1e-12 && total < 1e-9 && charge_err < 1e-6 && swap < 1e-10;
    report(
        4,
        "TDKS unitarity over 30000 steps; TDSE charge and exchange symmetry over 1000 steps",
        pass,
        &format!(
            "TDKS norm drift {per_step:.1e}/step, {total:.1e} total; \
             TDSE charge error {charge_err:.1e}, swap residual {swap:.1e}"
        ),
    );
}

#[test]
fn criterion_05_discretization_orders() {
    // Interior spatial order of the Laplacian on sin(x) under grid halving.
    let interior_error = |intervals: usize| -> f64 {
        let spec = build_grid(-5.0, 5.0, intervals, 1.0, 10).unwrap();
        let lap = laplacian4(&spec).unwrap();
        let f: Array1<f64> = (0..spec.points()).map(|j| spec.x(j).sin()).collect();
        let lf = lap.apply(f.view());
        (4..spec.points() - 4)
            .map(|j| (lf[j] + spec.x(j).sin()).abs())
            .fold(0.0f64, f64::max)
    };
    let space_order = (interior_error(100) / interior_error(200)).log2();

    // Temporal order of the split step on a zero-current smooth state
    // (a current-carrying state adds an O(dt^2) Hartree-lag term).
    let base = build_grid(-5.0, 5.0, 40, 1.0, 10).unwrap();
    let mut phi: Array1<Complex64> = (0..base.points())
        .map(|j| Complex64::new((-base.x(j) * base.x(j) / 2.0).exp(), 0.0))
        .collect();
    let w = simpson_weights(&base).unwrap();
    let nrm = phi.iter().zip(w.0.iter()).map(|(z, wj)| z.norm_sqr() * wj).sum::<f64>().sqrt();
    phi.mapv_inplace(|z| z / nrm);
    let vc = Array1::zeros(base.points());
    let local_error = |dt: f64| {
        let mut cs = base.clone();
        cs.dt = dt;
        let mut fs = base.clone();
        fs.dt = dt / 2.0;
        let coarse = build_cache(&cs).unwrap();
        let fine = build_cache(&fs).unwrap();
        let one = tdks_learn::tdks::step(phi.view(), vc.view(), &coarse).unwrap();
        let half = tdks_learn::tdks::step(phi.view(), vc.view(), &fine).unwrap();
        let two = tdks_learn::tdks::step(half.view(), vc.view(), &fine).unwrap();
        one.iter().zip(two.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
    };
    let time_order = (local_error(0.02) / local_error(0.01)).log2();

    // Simpson integrates cubics exactly.
    let spec = build_grid(0.0, 1.0, 64, 1.0, 10).unwrap();
    let sw = simpson_weights(&spec).unwrap();
    let cubic: Array1<f64> = (0..spec.points()).map(|j| spec.x(j).powi(3)).collect();
    let cubic_err = (sw.integrate(cubic.view()) - 0.25).abs();

    let pass = space_order >= 3.7 && time_order >= 2.7 && cubic_err < 1e-12;
    report(
        5,
        "observed discretization orders (space >= 3.7, time >= 2.7, Simpson cubic-exact)",
        pass,
        &format!(
            "spatial order {space_order:.2}, temporal order {time_order:.2}, \
             cubic quadrature error {cubic_err:.1e}"
        ),
    );
}

#[test]
fn criterion_06_desk_scale_pointwise_learning() {
    let cfg = RunConfig::from_preset("desk-pointwise").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let t0 = Instant::now();
    cmd_generate_reference(&cfg, &data).unwrap();
    let summary = cmd_train_pointwise(&cfg, &data, &out, None, |_| {}).unwrap();
    let mins = t0.elapsed().as_secs_f64() / 60.0;

    // Objective trace must be monotone on a training run.
    let trace = std::fs::read_to_string(out.join("trace-pointwise.log")).unwrap();
    let objectives: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    let monotone = objectives.windows(2).all(|p| p[1] <= p[0]);

    let pass = summary.improvement_factor >= 1e3
        && summary.iterations <= 500
        && mins < 15.0
        && monotone;
    report(
        6,
        "desk-scale pointwise training (J=120, K=400): MSE drop >= 1000x within 500 iterations",
        pass,
        &format!(
            "MSE {:.3e} -> {:.3e} ({:.0}x) in {} iterations, {mins:.1} min, monotone={monotone}",
            summary.baseline_mse, summary.final_mse, summary.improvement_factor, summary.iterations
        ),
    );
}

#[test]
fn criterion_07_desk_scale_functional_learning() {
    let cfg = RunConfig::from_preset("desk-functional").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let t0 = Instant::now();
    cmd_generate_reference(&cfg, &data).unwrap();
    let summary = cmd_train_functional(&cfg, &data, &out, None, |_| {}).unwrap();

    // Baseline against the true zero-correlation propagation (an all-zero
    // network emits vc = 0 exactly).
    let coarse = cfg.tdks_grid().unwrap();
    let cache = build_cache(&coarse).unwrap();
    let kind = cfg.model_kind().unwrap();
    let p = cfg.train_momenta[0];
    let (_, reference, _) = io::load_density_trajectory(&reference_path(&data, p)).unwrap();
    let (_, pair) = io::load_ks_pair(&ks_pair_path(&data, p)).unwrap();
    let mut zero = init_params(0, 1.0, kind, coarse.points(), &cfg.model.hidden).unwrap();
    for (w, b) in &mut zero.layers {
        w.fill(0.0);
        b.fill(0.0);
    }
    let traj = propagate_functional(&pair.phi0, &pair.phi1, &zero, kind, &cache).unwrap();
    let zero_mse = mse_against(&traj.densities(), &reference);
    let mins = t0.elapsed().as_secs_f64() / 60.0;

    let trace = std::fs::read_to_string(out.join("trace-functional.log")).unwrap();
    let objectives: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    let monotone = objectives.windows(2).all(|p| p[1] <= p[0]);

    let improvement = zero_mse / summary.final_mse.max(f64::MIN_POSITIVE);
    let pass = improvement >= 100.0 && mins < 30.0 && monotone;
    report(
        7,
        "desk-scale functional training (J=120, K=80, hidden 64): >= 100x over zero-correlation",
        pass,
        &format!(
            "zero-correlation MSE {zero_mse:.3e} -> trained {:.3e} ({improvement:.0}x), \
             {mins:.1} min, monotone={monotone}",
            summary.final_mse
        ),
    );
}

/// Full paper-preset generalization ordering; takes hours, run explicitly:
/// `cargo test --release -p tdks-learn --test acceptance -- --ignored criterion_08`
#[test]
#[ignore = "offline: full paper-preset training for both model kinds (hours)"]
fn criterion_08_generalization_ordering_offline() {
    let mut cfg = RunConfig::from_preset("paper-functional").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_generate_reference(&cfg, &data).unwrap();

    let mut test_mse = std::collections::BTreeMap::new();
    for kind in ["phi", "density"] {
        cfg.model.kind = kind.into();
        let out = dir.path().join(format!("out-{kind}"));
        cmd_train_functional(&cfg, &data, &out, None, |_| {}).unwrap();
        let summary =
            cmd_evaluate(&cfg, &data, &out, &out.join("checkpoint-functional.ckpt")).unwrap();
        test_mse.insert(kind, summary.test.overall);
    }
    let (phi, density) = (test_mse["phi"], test_mse["density"]);
    report(
        8,
        "paper-preset generalization: DensityMemory test MSE < PhiMemory test MSE",
        density < phi,
        &format!("test MSE: density {density:.3e} vs phi {phi:.3e}"),
    );
}

#[test]
fn criterion_09_optimizer_oracle() {
    let rosenbrock = |x: &Array1<f64>| -> (f64, Array1<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = ndarray::arr1(&[
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ]);
        (f, g)
    };
    let res = minimize(
        rosenbrock,
        ndarray::arr1(&[-1.2, 1.0]),
        &LbfgsOptions { max_iter: 200, grad_tol: 1e-12, rel_f_tol: 0.0, ..Default::default() },
        |_| {},
    );
    let err = ((res.x[0] - 1.0).powi(2) + (res.x[1] - 1.0).powi(2)).sqrt();
    let iters = res.trace.records.len();
    let monotone = res
        .trace
        .records
        .windows(2)
        .all(|p| p[1].objective <= p[0].objective);
    report(
        9,
        "L-BFGS solves Rosenbrock to 1e-8 in < 200 iterations with a monotone trace",
        err < 1e-8 && iters < 200 && monotone,
        &format!("distance {err:.2e} after {iters} iterations, monotone={monotone}"),
    );
}

#[test]
fn criterion_10_ks_inversion_closure() {
    // Production-scale initial frame: atom at -10, p=-1.5 packet at +10.
    let spec: GridSpec = build_grid(-40.0, 20.0, 600, 1.0, 10).unwrap();
    let psi = initial_wavefunction(
        &spec,
        &PacketSpec { center: 10.0, momentum: -1.5, width: 1.0 },
    )
    .unwrap();
    let n = one_electron_density(&psi).unwrap();
    let j = current_density(&psi).unwrap();
    let phi = exact_ks_state(n.view(), j.view(), &spec).unwrap();

    let dens = density_of(phi.view());
    let bit_exact = dens.iter().zip(n.iter()).all(|(a, b)| a == b);

    let jr = orbital_current(phi.view(), &spec).unwrap();
    let num: f64 = jr.iter().zip(j.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = j.iter().map(|v| v * v).sum();
    let rel = (num / den).sqrt();

    report(
        10,
        "KS inversion closure: current matches to 1e-3, density reproduced bit-exactly",
        bit_exact && rel < 1e-3,
        &format!("current relative L2 error {rel:.3e}, density bit-exact={bit_exact}"),
    );
}

#[test]
fn criterion_11_command_determinism() {
    // Shrunken desk-functional configuration; every command runs twice and
    // all outputs must be byte-identical.
    let mut cfg = RunConfig::from_preset("desk-functional").unwrap();
    cfg.preset = "custom".into();
    cfg.tdks.steps = 6;
    cfg.tdks.dt_au = Some(0.05);
    cfg.tdse.substeps = 10;
    cfg.optimizer.max_iter = 4;
    cfg.validate().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let run = |root: &std::path::Path| {
        let data = root.join("data");
        let out = root.join("out");
        cmd_generate_reference(&cfg, &data).unwrap();
        cmd_invert_initial(&cfg, &data).unwrap();
        cmd_train_functional(&cfg, &data, &out, None, |_| {}).unwrap();
        let ckpt = out.join("checkpoint-functional.ckpt");
        cmd_rollout(&cfg, &data, &out, &ckpt, &cfg.train_momenta.clone(), 2).unwrap();
        cmd_evaluate(&cfg, &data, &out, &ckpt).unwrap();
        tdks_learn::commands::cmd_export_csv(
            &tdks_learn::commands::reference_path(&data, cfg.train_momenta[0]),
            None,
            Some(&ckpt),
            &[0.0, 0.1],
            &out,
        )
        .unwrap();
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&a);
    run(&b);

    let mut files_a = Vec::new();
    collect_files(&a, &mut files_a);
    files_a.sort();
    assert!(!files_a.is_empty());
    let mut differing = Vec::new();
    for fa in &files_a {
        let rel = fa.strip_prefix(&a).unwrap();
        let fb = b.join(rel);
        if std::fs::read(fa).unwrap() != std::fs::read(&fb).unwrap() {
            differing.push(rel.display().to_string());
        }
    }
    report(
        11,
        "all commands produce byte-identical outputs across reruns",
        differing.is_empty(),
        &format!("{} files compared, differing: {differing:?}", files_a.len()),
    );
}

fn collect_files(dir: &std::path::Path, out: &mut Vec<std::path::PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, out);
        } else {
            out.push(path);
        }
    }
}
