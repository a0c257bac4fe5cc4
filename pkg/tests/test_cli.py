import csv

import numpy as np
import pytest

import ksfem.cli as cli
from ksfem.cli import ConfigError, Scenario, ScenarioKind, main, run_scenario, sweep
from ksfem.diagnostics import read_records, records_as_arrays
from ksfem.mesh import load_mesh
from ksfem.scheme import LinearSolveError
from ksfem.vtkio import read_vtk


def small(tmp_path, **kw):
    base = dict(nsquare=4, k=1e-4, n_steps=3, output_dir=tmp_path, snapshot_steps=(0, 3))
    base.update(kw)
    return Scenario(**base)


def test_presets_fill_defaults():
    s = Scenario().resolved()
    assert (s.nsquare, s.k, s.n_steps, s.snapshot_steps) == (50, 1e-4, 50, (0, 25, 50))
    b = Scenario(kind="blowup").resolved()
    assert (b.nsquare, b.k, b.n_steps) == (100, 1e-6, 100)
    assert b.run_id == "blowup-acute-n100-cu_1000-cv_500"
    assert s.run_id == "nonblowup-acute-n50-c0_70"


def test_custom_with_zero_steps(tmp_path):
    s = Scenario(kind=ScenarioKind.CUSTOM, nsquare=2, n_steps=0, u0_expr="1 + x*x",
                 v0_expr="exp(-y)", output_dir=tmp_path)
    r = run_scenario(s)
    assert r.status == 0 and len(r.records) == 1
    out = tmp_path / r.scenario.run_id
    assert sorted(p.name for p in out.iterdir()) == [
        "config.echo", "diagnostics.csv", "mesh.ksmesh", "u_0.vtk", "v_0.vtk"]


def test_run_writes_consistent_files(tmp_path):
    r = run_scenario(small(tmp_path, c0=60))
    out = r.directory
    assert out.name == "nonblowup-acute-n4-c0_60"
    recs = read_records(out / "diagnostics.csv")
    assert [x.n for x in recs] == [0, 1, 2, 3]
    mesh = load_mesh(out / "mesh.ksmesh")
    assert mesh.n_triangles == 14 * 16
    pts, tris, data = read_vtk(out / "u_3.vtk")
    assert np.array_equal(tris, mesh.triangles)
    assert data["u"].max() == pytest.approx(recs[-1].max_u, rel=0, abs=0)
    assert "c0 = 60.0" in (out / "config.echo").read_text()


def test_rerun_is_byte_identical(tmp_path):
    a = run_scenario(small(tmp_path / "a"))
    b = run_scenario(small(tmp_path / "b"))
    for name in ("diagnostics.csv", "u_3.vtk", "v_3.vtk", "mesh.ksmesh", "config.echo"):
        assert (a.directory / name).read_bytes() == (b.directory / name).read_bytes()


def test_sweep_table(tmp_path):
    results = sweep(small(tmp_path), [40, 70])
    assert [r.status for r in results] == [0, 0]
    with open(tmp_path / "sweep_min_u.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n", "t", "min_u@C0=40", "min_u@C0=70"]
    assert len(rows) == 5
    assert float(rows[2][3]) == results[1].records[1].min_u
    assert (tmp_path / "nonblowup-acute-n4-c0_40" / "diagnostics.csv").exists()


def test_sweep_rejects_blowup_base(tmp_path):
    with pytest.raises(ConfigError):
        sweep(small(tmp_path, kind="Blowup"), [1.0])


def test_low_c0_warns(tmp_path):
    with pytest.warns(UserWarning, match="c0"):
        run_scenario(small(tmp_path, c0=20, n_steps=0, snapshot_steps=()))


def test_main_with_config_and_override(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(f"# small run\nscenario = NonBlowup\nnsquare = 3\nk = 1e-4\nsteps = 2\n"
                   f"c0 = 50\nout = {tmp_path}\n")
    assert main(["run", "--config", str(cfg), "--c0", "45", "--macro", "NonAcute"]) == 0
    out = tmp_path / "nonblowup-nonacute-n3-c0_45"
    echo = (out / "config.echo").read_text()
    assert "c0 = 45.0" in echo and "macro = NonAcute" in echo and "steps = 2" in echo
    assert "final max_u" in capsys.readouterr().out


def test_main_sweep(tmp_path):
    code = main(["sweep", "--nsquare", "2", "--steps", "1", "--values", "50,60",
                 "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "sweep_min_u.csv").exists()


@pytest.mark.parametrize("args", [
    ["run", "--scenario", "Sideways"],
    ["run", "--nsquare", "zero"],
    ["run", "--k", "-1"],
    ["run", "--macro", "External"],
    ["run", "--scenario", "Custom"],
    ["run", "--scenario", "Custom", "--u0", "__import__('os')", "--v0", "x"],
    ["run", "--steps", "2", "--snapshots", "5"],
    ["run", "--config", "/nonexistent/file.cfg"],
    ["bogus"],
])
def test_config_errors_exit_2(tmp_path, args, capsys):
    assert main(args + ["--out", str(tmp_path)] if args != ["bogus"] else args) == 2


def test_bad_config_file_exit_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nsquare = 2\nwhat = 3\n")
    assert main(["run", "--config", str(cfg)]) == 2


def test_unwritable_output_exit_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--nsquare", "2", "--steps", "1", "--out", str(blocker / "sub")]) == 2


def test_solver_failure_exit_3(tmp_path, monkeypatch):
    real_run = cli.run

    def failing(mesh, u0, v0, cfg, on_step=None):
        records, _ = real_run(mesh, u0, v0, type(cfg)(cfg.k, 1))
        exc = LinearSolveError("forced", [1.0], step=2)
        exc.records = records
        raise exc

    monkeypatch.setattr(cli, "run", failing)
    assert main(["run", "--nsquare", "2", "--steps", "3", "--out", str(tmp_path)]) == 3
    recs = read_records(tmp_path / "nonblowup-acute-n2-c0_70" / "diagnostics.csv")
    assert [r.n for r in recs] == [0, 1]


def test_module_entry_point():
    import subprocess
    import sys
    done = subprocess.run([sys.executable, "-m", "ksfem", "--help"], capture_output=True,
                          text=True)
    assert done.returncode == 0 and "sweep" in done.stdout


def test_parallel_sweep_matches_serial(tmp_path):
    serial = sweep(small(tmp_path / "s", n_steps=2, snapshot_steps=(2,)), [45, 55])
    parallel = sweep(small(tmp_path / "p", n_steps=2, snapshot_steps=(2,)), [45, 55], jobs=2)
    for a, b in zip(serial, parallel):
        cols_a, cols_b = records_as_arrays(a.records), records_as_arrays(b.records)
        for name in cols_a:
            assert np.array_equal(cols_a[name], cols_b[name], equal_nan=True), name
