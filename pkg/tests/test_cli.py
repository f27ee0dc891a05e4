import json
import os

import pytest
from click.testing import CliRunner

from mpiwave.cli import main

STATIC_MANIFEST = """\
mode = "forward"
alphas = [1.0]

[[trajectories]]
kind = "static"
point = [0.0, 0.0, 0.0]

[[packets]]
center = [4.0, 0.0, 0.0]
sigma = 0.5

[grid]
s = 0.0
t_max = 1.0
n_steps = 120

[kgrid]
extent = 10.0
points = 16

[outputs]
directory = "outdir"
"""


@pytest.fixture
def runner():
    return CliRunner()


def _write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestSolve:
    def test_minimal_static_run(self, tmp_path, runner):
        man = _write(tmp_path, STATIC_MANIFEST)
        out = str(tmp_path / "o1")
        res = runner.invoke(main, ["solve", "--manifest", man, "--out", out])
        assert res.exit_code == 0, res.output
        csv = (tmp_path / "o1" / "charges.csv").read_text().splitlines()
        assert len(csv) == 1 + 121  # header plus N+1 rows
        assert os.path.exists(tmp_path / "o1" / "resolved_manifest.json")
        assert os.path.exists(tmp_path / "o1" / "version.txt")
        report = json.loads((tmp_path / "o1" / "report.json").read_text())
        assert report["solutions"]["forward"]["residual_16"] < 1e-4

    def test_byte_identical_reruns(self, tmp_path, runner):
        man = _write(tmp_path, STATIC_MANIFEST)
        for out in ("a", "b"):
            res = runner.invoke(main, ["solve", "--manifest", man,
                                       "--out", str(tmp_path / out)])
            assert res.exit_code == 0, res.output
        for name in ("charges.csv", "report.json", "resolved_manifest.json",
                     "version.txt"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()

    def test_manifest_error_exit_code(self, tmp_path, runner):
        bad = STATIC_MANIFEST.replace('alphas = [1.0]', 'alphas = [1.0, 2.0]')
        res = runner.invoke(main, ["solve", "--manifest", _write(tmp_path, bad)])
        assert res.exit_code == 2

    def test_unknown_key_rejected(self, tmp_path, runner):
        bad = STATIC_MANIFEST + "\nunknown_table = 3\n"
        res = runner.invoke(main, ["solve", "--manifest", _write(tmp_path, bad)])
        assert res.exit_code == 2

    def test_unknown_physics_key_rejected(self, tmp_path, runner):
        bad = STATIC_MANIFEST.replace("sigma = 0.5", "sigma = 0.5\nwidht = 0.4")
        res = runner.invoke(main, ["solve", "--manifest", _write(tmp_path, bad)])
        assert res.exit_code == 2

    def test_separation_violation_exit_code(self, tmp_path, runner):
        crossing = """\
mode = "forward"
separation = 0.5
alphas = [1.0, 1.0]

[[trajectories]]
kind = "uniform"
origin = [-1.0, 0.0, 0.0]
velocity = [1.0, 0.0, 0.0]

[[trajectories]]
kind = "uniform"
origin = [1.0, 0.0, 0.0]
velocity = [-1.0, 0.0, 0.0]

[[packets]]
center = [0.0, 5.0, 0.0]
sigma = 0.5

[grid]
s = 0.0
t_max = 2.0
n_steps = 64
"""
        res = runner.invoke(main, ["solve", "--manifest", _write(tmp_path, crossing),
                                   "--out", str(tmp_path / "x")])
        assert res.exit_code == 2

    def test_missing_manifest(self, runner, tmp_path):
        res = runner.invoke(main, ["solve", "--manifest",
                                   str(tmp_path / "absent.toml")])
        assert res.exit_code == 2

    def test_backward_mode_requires_backward_packets(self, tmp_path, runner):
        bad = STATIC_MANIFEST.replace('mode = "forward"', 'mode = "backward"')
        res = runner.invoke(main, ["solve", "--manifest", _write(tmp_path, bad)])
        assert res.exit_code == 2

    def test_roundtrip_adjoint_mode(self, tmp_path, runner):
        man_text = STATIC_MANIFEST.replace('mode = "forward"',
                                           'mode = "roundtrip-adjoint"')
        man_text += """
[[backward_packets]]
center = [3.0, 1.0, 0.0]
sigma = 0.5
momentum = [-0.5, 0.0, 0.0]
"""
        man = _write(tmp_path, man_text)
        out = str(tmp_path / "rt")
        res = runner.invoke(main, ["solve", "--manifest", man, "--out", out])
        assert res.exit_code == 0, res.output
        report = json.loads((tmp_path / "rt" / "report.json").read_text())
        assert "adjoint" in report
        assert report["adjoint"]["relative_defect"] < 1e-2
        assert os.path.exists(tmp_path / "rt" / "charges_forward.csv")
        assert os.path.exists(tmp_path / "rt" / "charges_backward.csv")


class TestReconstruct:
    def test_free_case_norm_series(self, tmp_path, runner):
        free = STATIC_MANIFEST.replace("""[[trajectories]]
kind = "static"
point = [0.0, 0.0, 0.0]

""", "").replace("alphas = [1.0]", "alphas = []")
        man = _write(tmp_path, free)
        out = str(tmp_path / "r")
        res = runner.invoke(main, ["reconstruct", "--manifest", man, "--out", out,
                                   "--times", "0.0,0.5,1.0"])
        assert res.exit_code == 0, res.output
        rows = (tmp_path / "r" / "norms.csv").read_text().splitlines()[1:]
        norms = [float(r.split(",")[1]) for r in rows]
        assert max(abs(n - norms[0]) for n in norms) < 1e-6
        assert os.path.exists(tmp_path / "r" / "field_0002.mpiw")

    def test_gate_passes_at_start(self, tmp_path, runner):
        man = _write(tmp_path, STATIC_MANIFEST)
        out = str(tmp_path / "r2")
        res = runner.invoke(main, ["reconstruct", "--manifest", man, "--out", out,
                                   "--times", "0.0"])
        assert res.exit_code == 0, res.output
        report = json.loads((tmp_path / "r2" / "report.json").read_text())
        assert report["under_resolved"] == [False]

    def test_requires_times(self, tmp_path, runner):
        man = _write(tmp_path, STATIC_MANIFEST)
        res = runner.invoke(main, ["reconstruct", "--manifest", man,
                                   "--out", str(tmp_path / "r3")])
        assert res.exit_code == 2


class TestConverge:
    def test_table_and_orders(self, tmp_path, runner):
        man = _write(tmp_path, STATIC_MANIFEST)
        out = str(tmp_path / "c")
        res = runner.invoke(main, ["converge", "--manifest", man, "--out", out,
                                   "--n-list", "60,120,240"])
        assert res.exit_code == 0, res.output
        rows = (tmp_path / "c" / "converge.csv").read_text().splitlines()
        assert rows[0].startswith("n_steps,")
        first = rows[1].split(",")
        assert float(first[4]) >= 1.0  # observed order of the coarsest pair

    def test_alpha_zero_residuals_at_rounding(self, tmp_path, runner):
        free = STATIC_MANIFEST.replace("alphas = [1.0]", "alphas = [0.0]")
        man = _write(tmp_path, free)
        out = str(tmp_path / "c0")
        res = runner.invoke(main, ["converge", "--manifest", man, "--out", out,
                                   "--n-list", "60,120"])
        assert res.exit_code == 0, res.output
        rows = (tmp_path / "c0" / "converge.csv").read_text().splitlines()[1:]
        for row in rows:
            assert float(row.split(",")[1]) < 1e-14  # residual_16 column

    def test_rejects_single_n(self, tmp_path, runner):
        man = _write(tmp_path, STATIC_MANIFEST)
        res = runner.invoke(main, ["converge", "--manifest", man,
                                   "--n-list", "100"])
        assert res.exit_code == 2


class TestSweep:
    BASE = STATIC_MANIFEST + """
[sweep]
parameter = "alphas[0]"
values = [0.0, 1.0, 2.0]
"""

    def test_three_points(self, tmp_path, runner):
        man = _write(tmp_path, self.BASE)
        out = str(tmp_path / "sw")
        res = runner.invoke(main, ["sweep", "--manifest", man, "--out", out,
                                   "--threads", "2"])
        assert res.exit_code == 0, res.output
        rows = (tmp_path / "sw" / "summary.csv").read_text().splitlines()
        assert len(rows) == 4
        assert all(",ok," in r for r in rows[1:])
        for i in range(3):
            assert os.path.exists(tmp_path / "sw" / f"point_{i:03d}" / "charges.csv")

    def test_failing_point_is_isolated(self, tmp_path, runner):
        # sweeping sigma through an invalid value fails one point only
        text = STATIC_MANIFEST + """
[sweep]
parameter = "packets[0].sigma"
values = [0.5, -1.0, 0.6]
"""
        man = _write(tmp_path, text)
        out = str(tmp_path / "swf")
        res = runner.invoke(main, ["sweep", "--manifest", man, "--out", out,
                                   "--threads", "2"])
        assert res.exit_code == 0, res.output
        rows = (tmp_path / "swf" / "summary.csv").read_text().splitlines()[1:]
        statuses = [r.split(",")[2] for r in rows]
        assert statuses == ["ok", "failed", "ok"]

    def test_empty_axis_rejected(self, tmp_path, runner):
        text = STATIC_MANIFEST + """
[sweep]
parameter = "alphas[0]"
values = []
"""
        res = runner.invoke(main, ["sweep", "--manifest", _write(tmp_path, text)])
        assert res.exit_code == 2


class TestVerify:
    def test_pristine_build_passes(self, tmp_path, runner):
        man = _write(tmp_path, STATIC_MANIFEST)
        out = str(tmp_path / "v")
        res = runner.invoke(main, ["verify", "--manifest", man, "--out", out])
        assert res.exit_code == 0, res.output
        assert "all checks passed" in res.output
        report = json.loads((tmp_path / "v" / "verify_report.json").read_text())
        assert report["failures"] == 0

    def test_flipped_branch_fails(self, tmp_path, runner):
        # the negative control needs the strongly coupled configuration
        man = str("manifests/standard_circular.toml")
        man = os.path.join(os.path.dirname(__file__), "..", "manifests",
                           "standard_circular.toml")
        out = str(tmp_path / "vf")
        res = runner.invoke(main, ["verify", "--manifest", man, "--out", out,
                                   "--flip-branch"])
        assert res.exit_code == 4, res.output
        assert "FAIL norm_conservation" in res.output
