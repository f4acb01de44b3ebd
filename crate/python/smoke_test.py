#!/usr/bin/env python3
"""Smoke test for the Python bindings.

Builds the extension module with cargo, loads it, and exercises the main
surface: presets and overrides, reference generation, functional training,
rollout, evaluation and trajectory-file access, all on a deliberately tiny
configuration so the whole script finishes in well under a minute.

Run from anywhere:  python3 python/smoke_test.py
"""

import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

REPO = pathlib.Path(__file__).resolve().parent.parent


def build_and_import():
    subprocess.run(
        ["cargo", "build", "-p", "tdks-learn-py"], cwd=REPO, check=True
    )
    built = REPO / "target" / "debug" / "libtdks_learn_py.so"
    if not built.exists():  # e.g. macOS
        built = REPO / "target" / "debug" / "libtdks_learn_py.dylib"
    stage = pathlib.Path(tempfile.mkdtemp(prefix="tdks-learn-py-"))
    shutil.copy2(built, stage / "tdks_learn_py.so")
    sys.path.insert(0, str(stage))
    import tdks_learn_py

    return tdks_learn_py


def main():
    m = build_and_import()

    # Constants and a standalone eigenproblem.
    assert abs(m.FS_PER_AU - 0.02418884254) < 1e-12
    xs, orbital, energy = m.hydrogen_ground_state(-25.0, 15.0, 160)
    assert len(xs) == len(orbital) == 161
    assert -0.7 < energy < -0.6, energy
    assert all(v >= -1e-12 for v in orbital)

    # Presets, hashing and overrides.
    cfg = m.RunConfig.preset("desk-functional")
    assert len(cfg.hash) == 16
    assert cfg.train_momenta == [-1.5]
    tiny = cfg.with_overrides(
        steps=6, dt_au=0.05, substeps=10, max_iter=3, hidden=[8], seed=3
    )
    assert tiny.hash != cfg.hash
    assert abs(tiny.dt_au - 0.05) < 1e-15
    x_min, x_max, intervals, steps = tiny.control_grid
    assert (x_min, x_max, intervals, steps) == (-40.0, 20.0, 120, 6)
    try:
        cfg.with_overrides(nonsense=1)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown override accepted")

    # End-to-end pipeline on the tiny configuration.
    work = pathlib.Path(tempfile.mkdtemp(prefix="tdks-learn-smoke-"))
    data, out = work / "data", work / "out"
    written = m.generate_reference(tiny, data)
    assert written, "generate_reference wrote nothing"

    traj = m.load_density_trajectory(data / "reference_p-1.5.traj")
    n_rows = traj["densities"]
    assert len(n_rows) == steps + 1 and len(n_rows[0]) == intervals + 1
    dx = (x_max - x_min) / intervals
    charge = dx * sum(n_rows[0])  # rectangle rule is fine for a smoke test
    assert abs(charge - 2.0) < 1e-3, charge

    summary = m.train_functional(tiny, data, out)
    assert summary["iterations"] <= 3
    assert summary["final_mse"] <= summary["baseline_mse"]
    checkpoint = out / "checkpoint-functional.ckpt"
    assert checkpoint.exists()

    roll = m.rollout(tiny, data, out, checkpoint, extra_steps=2)
    assert roll["files"], "rollout produced no trajectories"
    ev = m.evaluate(tiny, data, out, checkpoint)
    assert math.isfinite(ev["train"]["overall"])

    csv = m.export_csv(
        data / "reference_p-1.5.traj",
        [0.0, 0.3],
        out,
        predicted=out / roll["files"][0],
    )
    assert csv, "export_csv produced nothing"

    print("smoke test passed")


if __name__ == "__main__":
    main()
