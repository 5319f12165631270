import json
import math

import numpy as np
import pytest

import cli_helpers
from magsplit import cli
from magsplit.model import ModelConfig, reference_config
from magsplit.radial import ConvergenceError, GroundState, evaluate_phi_out


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


@pytest.fixture
def ref_path(tmp_path):
    return write(tmp_path, "ref.json", reference_config(lam=10.0).to_json())


def test_landau_check_exit_zero(tmp_path, capsys):
    path = write(tmp_path, "free.json", reference_config(lam=10.0).with_well(depth=0.0).to_json())
    assert cli.run(["landau-check", "--config", path]) == 0
    out, err = capsys.readouterr()
    assert "lowest eigenvalue" in err and "|E0/lambda - 1|" in err
    assert out.splitlines()[0] == "lambda,lowest,relative_error"


def test_hopping_row_deterministic_and_manifest(tmp_path, ref_path, capsys):
    out_dir = tmp_path / "out"
    assert cli.run(["hopping", "--config", ref_path, "--out", str(out_dir)]) == 0
    first = capsys.readouterr().out
    assert cli.run(["hopping", "--config", ref_path]) == 0
    second = capsys.readouterr().out
    assert first == second
    header, row = first.splitlines()
    assert header.split(",") == list(cli.HOPPING_COLUMNS)
    assert float(row.split(",")[2]) < 0
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["config_hash"] == ModelConfig.load(ref_path).config_hash()
    for name in manifest["outputs"]:
        assert (out_dir / name).exists()
    assert manifest["checks"] == {"routes_agree": True, "ratio_bound": True}
    assert (out_dir / "hopping.csv").read_text() == first


def test_json_format(ref_path, capsys):
    assert cli.run(["ground-state", "--config", ref_path, "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows[0]["lambda"] == 10.0 and rows[0]["norm"] == pytest.approx(1.0, abs=1e-8)


def test_curve_output(ref_path, capsys):
    assert cli.run(["ground-state", "--config", ref_path, "--curve-points", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "r,log_phi" and len(lines) == 6


def test_cache_round_trip_exact(tmp_path, ref_path, capsys):
    cache = tmp_path / "cache"
    assert cli.run(["ground-state", "--config", ref_path, "--cache", str(cache)]) == 0
    first = capsys.readouterr().out
    files = list(cache.glob("gs-*.json"))
    assert len(files) == 1
    cfg = ModelConfig.load(ref_path)
    loaded = cli.GroundStateCache(cache).get(cfg)
    fresh = GroundState.from_json(files[0].read_text())
    r = np.linspace(0.55, 4.0, 25)
    assert np.array_equal(evaluate_phi_out(loaded, r), evaluate_phi_out(fresh, r))
    assert cli.run(["ground-state", "--config", ref_path, "--cache", str(cache)]) == 0
    assert capsys.readouterr().out == first


def test_cache_key_ignores_separation_and_grid():
    a = reference_config(lam=10.0)
    assert cli.cache_key(a) == cli.cache_key(a.replace(separation=3.0))
    assert cli.cache_key(a) != cli.cache_key(a.replace(lam=11.0))
    assert cli.cache_key(a) != cli.cache_key(a.replace(b=12.0))


@pytest.mark.parametrize("doc", [
    "{broken",
    '{"lambda": 10, "separation": 2, "well": {"depth": -2, "radius": 0.5}, "colour": 3}',
    '{"lambda": 10, "separation": 2, "well": {"depth": 2, "radius": 0.5}}',
    '{"lambda": 10, "separation": 2, "well": {"depth": -2, "radius": 0.5},'
    ' "grid": {"spacing": 0.2}}',
])
def test_invalid_config_exit_two(tmp_path, doc, capsys):
    path = write(tmp_path, "bad.json", doc)
    assert cli.run(["hopping", "--config", path]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_file_exit_two(tmp_path):
    assert cli.run(["hopping", "--config", str(tmp_path / "nope.json")]) == 2


def test_nonconvergence_exit_three(ref_path, monkeypatch, capsys):
    def boom(config, n_samples=1025):
        raise ConvergenceError("bisection stalled")
    monkeypatch.setattr("magsplit.radial.solve_ground_state", boom)
    assert cli.run(["ground-state", "--config", ref_path]) == 3
    assert "did not converge" in capsys.readouterr().err


def test_failed_check_exit_one(ref_path, monkeypatch):
    monkeypatch.setitem(cli.COMMANDS, "bounds",
                        lambda cfg, args, cache: ([{"x": 1}], ("x",), {"c": False}, {}))
    assert cli.run(["bounds", "--config", ref_path]) == 1


def test_desk_scale_warning(tmp_path, capsys):
    path = write(tmp_path, "far.json", reference_config(lam=10.0, separation=4.0).to_json())
    assert cli.run(["ground-state", "--config", path]) == 0
    assert "exceeds" in capsys.readouterr().err


def test_bounds_rows(ref_path, capsys):
    assert cli.run(["bounds", "--config", ref_path]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split(",")[0] for ln in lines[1:]] == [
        "decay_envelope", "normalization", "hopping_envelope", "exponent_rate"]


def test_dump_needs_out(ref_path):
    assert cli.run(["splitting", "--config", ref_path, "--levels", "1",
                    "--dump-eigenvectors"]) == 2


def test_eigenvector_dump(tmp_path, capsys):
    path = write(tmp_path, "c.json", reference_config(lam=6.0).to_json())
    out = tmp_path / "dump"
    code = cli.run(["splitting", "--config", path, "--levels", "1", "--out", str(out),
                    "--dump-eigenvectors"])
    assert code == 0
    side = json.loads((out / "psi0.json").read_text())
    data = np.fromfile(out / "psi0.bin", dtype="<c16").reshape(side["dims"])
    assert np.linalg.norm(data) == pytest.approx(1.0, rel=1e-10)
    assert side["origin"][0] < 0 and side["spacing"] > 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert {"psi0.bin", "psi0.json", "psi1.bin", "psi1.json"} <= set(manifest["outputs"])


def _sweep_file(tmp_path, **extra):
    doc = {"config": reference_config(lam=10.0).to_dict(), "lambda": [6, 8, 10, 12],
           "separation": [2.0], **extra}
    return write(tmp_path, "sweep.json", doc)


@pytest.mark.parametrize("workers", [1, 3])
def test_sweep_rows_in_config_order(tmp_path, monkeypatch, capsys, workers):
    monkeypatch.setattr(cli, "sweep_point", cli_helpers.fake_point)
    path = _sweep_file(tmp_path, workers=workers, spacing_divisor=16)
    assert cli.run(["sweep", "--config", path]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split(",") == list(cli.SWEEP_COLUMNS)
    assert [float(ln.split(",")[0]) for ln in lines[1:]] == [6, 8, 10, 12]


def test_sweep_points_use_spacing_divisor(tmp_path):
    spec = cli.load_sweep(_sweep_file(tmp_path, spacing_divisor=16))
    for cfg in spec.points():
        assert cfg.grid.spacing == pytest.approx(cfg.magnetic_length / 16)


@pytest.mark.parametrize("extra", [{"lambda": []}, {"levels": 5}, {"workers": 0},
                                   {"spacing_divisor": 2}, {"bogus": 1}])
def test_bad_sweep_file(tmp_path, extra):
    assert cli.run(["sweep", "--config", _sweep_file(tmp_path, **extra)]) == 2


def _rows(ratios, fg=None, probes=None):
    fg = fg or [1e-3 / 10 ** i for i in range(len(ratios))]
    probes = probes or [0.05] * len(ratios)
    return [{"lambda": 6.0 + 2 * i, "dist": 2.0, "ratio": q, "resolved": True,
             "gap_resolved": True, "gap_planar": 1.0, "gap_reduction": 1.01,
             "max_abs_f": f, "max_abs_g": 0.0, "resolvent_probe": p}
            for i, (q, f, p) in enumerate(zip(ratios, fg, probes))]


def test_sweep_checks_trend_allows_one_inversion():
    checks = cli.sweep_checks(_rows([1.3, 1.2, 1.25, 1.1]))
    assert checks["d=2:ratio_trend"]
    checks = cli.sweep_checks(_rows([1.3, 1.2, 1.25, 1.1, 1.15]))
    assert not checks["d=2:ratio_trend"]


def test_sweep_checks_other_criteria():
    checks = cli.sweep_checks(_rows([1.0, 1.0, 1.6], fg=[1e-3, 1e-2, 1e-4],
                                    probes=[0.05, 0.05, 0.2]))
    assert not checks["d=2:ratio_window"]
    assert not checks["d=2:ratio_final"]
    assert not checks["d=2:fg_decreasing"]
    assert not checks["d=2:probe_stable"]
    assert checks["d=2:reduction_agreement"]


def test_count_inversions():
    assert cli.count_inversions([3, 2, 2, 1]) == 0
    assert cli.count_inversions([3, 4, 2, 5]) == 2
