import json
import time

import numpy as np
import pytest

from pseudohyp.cli import config_hash, main


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def solve_cfg(out, boundary, h=0.1, **extra):
    cfg = {"seed": 3, "output": str(out), "solver": {"p": 2, "q": 1, "mesh_scale": h, "boundary": boundary}}
    cfg["solver"].update(extra)
    return cfg


@pytest.fixture(scope="module")
def flat_mesh(tmp_path_factory):
    d = tmp_path_factory.mktemp("flat")
    cfg = write(d / "c.json", solve_cfg(d / "out", {"kind": "constant"}, 0.05))
    assert main(["solve", cfg]) == 0
    return d / "out" / "mesh.json"


@pytest.fixture(scope="module")
def curved_mesh(tmp_path_factory):
    d = tmp_path_factory.mktemp("curved")
    cfg = write(d / "c.json", solve_cfg(d / "out", {"kind": "curved", "amplitude": 0.4}, 0.04))
    assert main(["solve", cfg]) == 0
    return d / "out" / "mesh.json"


class TestSolve:
    def test_constant_boundary_fast(self, tmp_path):
        cfg = write(tmp_path / "c.json", solve_cfg(tmp_path / "o", {"kind": "constant"}))
        t = time.time()
        assert main(["solve", cfg]) == 0
        assert time.time() - t < 10
        mesh = json.loads((tmp_path / "o" / "mesh.json").read_text())
        assert mesh["residual"] < 1e-10
        assert mesh["config_hash"] == config_hash(json.loads((tmp_path / "c.json").read_text()))
        assert (tmp_path / "o" / "convergence.csv").read_text().startswith("iter,residual,min_eig_g\n")
        assert (tmp_path / "o" / "curvature.csv").read_text().startswith("vertex,II_norm,ric_slack,H_norm\n")

    def test_malformed_config(self, tmp_path, capsys):
        bad = solve_cfg(tmp_path, {"kind": "constant", "bogus": 1})
        assert main(["solve", write(tmp_path / "c.json", bad)]) == 2
        assert "solver/boundary" in capsys.readouterr().err

    def test_unknown_top_level_key(self, tmp_path, capsys):
        bad = solve_cfg(tmp_path, {"kind": "constant"})
        bad["extra"] = 1
        assert main(["solve", write(tmp_path / "c.json", bad)]) == 2

    def test_invalid_boundary_is_config_error(self, tmp_path):
        cfg = solve_cfg(tmp_path, {"kind": "curved", "amplitude": 0.49})
        assert main(["solve", write(tmp_path / "c.json", cfg)]) == 2

    def test_non_convergence_exit(self, tmp_path):
        cfg = solve_cfg(tmp_path / "o", {"kind": "curved"}, 0.1, method="flow", max_iter=3)
        assert main(["solve", write(tmp_path / "c.json", cfg)]) == 3
        assert (tmp_path / "o" / "convergence.csv").exists()


class TestVerify:
    def test_flat_all_pass(self, flat_mesh, tmp_path):
        cfg = write(tmp_path / "v.json", {"output": str(tmp_path), "verify": {"p": 2, "q": 1}})
        assert main(["verify", str(flat_mesh), "--config", cfg]) == 0
        rep = json.loads((tmp_path / "verify.json").read_text())
        assert rep["pass"]
        assert abs(rep["checks"]["gradient_window"]["L"] - 1) <= 1e-3

    def test_curved_all_pass(self, curved_mesh, tmp_path):
        cfg = write(tmp_path / "v.json", {"output": str(tmp_path)})
        assert main(["verify", str(curved_mesh), "--config", cfg]) == 0
        rep = json.loads((tmp_path / "verify.json").read_text())
        assert 1 <= rep["checks"]["gradient_window"]["L"] < np.sqrt(2)

    def test_corrupted_mesh(self, flat_mesh, tmp_path, capsys):
        data = json.loads(flat_mesh.read_text())
        data["vertices"][12]["u"] = [0.3, 0.3]
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(data))
        assert main(["verify", str(bad)]) == 5
        assert "vertex 12" in capsys.readouterr().err
        rep = json.loads((tmp_path / "verify.json").read_text())
        assert rep["checks"]["unit_values"]["bad_vertices"] == [12]

    def test_signature_mismatch_refused(self, flat_mesh, tmp_path, capsys):
        cfg = write(tmp_path / "v.json", {"output": str(tmp_path), "verify": {"p": 3, "q": 1}})
        assert main(["verify", str(flat_mesh), "--config", cfg]) == 2
        assert "(p, q)" in capsys.readouterr().err


def group_cfg(out, rep, **kw):
    cfg = {"seed": 0, "output": str(out), "enumeration": {"representation": rep}}
    cfg["enumeration"].update(kw)
    return cfg


class TestGroupCommands:
    def test_entropy_is_deterministic(self, tmp_path):
        outs = []
        for k in range(2):
            cfg = group_cfg(tmp_path / "o", {"builtin": "genus2", "q": 1}, max_len=8, max_dist=7)
            assert main(["entropy", write(tmp_path / "c.json", cfg)]) == 0
            outs.append([(tmp_path / "o" / f).read_bytes() for f in ("entropy.csv", "entropy.json", "orbit.csv")])
        assert outs[0] == outs[1]
        summary = json.loads(outs[0][1])
        assert {"slope", "stderr", "window", "config_hash", "seed"} <= set(summary)

    def test_budget_exit(self, tmp_path):
        cfg = group_cfg(tmp_path, {"builtin": "genus2"}, max_len=8, cap=100)
        assert main(["entropy", write(tmp_path / "c.json", cfg)]) == 4

    def test_spectrum_cyclic(self, tmp_path):
        cfg = group_cfg(tmp_path, {"builtin": "cyclic", "length": 0.8}, max_len=1)
        assert main(["spectrum", write(tmp_path / "c.json", cfg)]) == 0
        lines = (tmp_path / "spectrum.csv").read_text().splitlines()
        assert lines[0] == "word,length,lam_max,proximal"
        assert len(lines) == 2
        assert float(lines[1].split(",")[1]) == pytest.approx(0.8)

    def test_domain(self, tmp_path):
        cfg = group_cfg(tmp_path, {"builtin": "genus2"}, max_len=12, max_dist=7)
        cfg["domain"] = {"samples": 200}
        assert main(["domain", write(tmp_path / "c.json", cfg)]) == 0
        rep = json.loads((tmp_path / "domain.json").read_text())
        assert rep["pass"] and rep["tiling"]["unique"] == 200

    def test_volume(self, tmp_path):
        cfg = group_cfg(tmp_path, {"builtin": "genus2"}, max_len=12, max_dist=7)
        cfg["tube"] = {"mc_samples": 50000}
        assert main(["volume", write(tmp_path / "c.json", cfg)]) == 0
        rep = json.loads((tmp_path / "pseudo_volume.json").read_text())
        assert abs(rep["pseudo_volume"] - 2 * np.pi ** 2) < 4 * rep["stderr"]

    def test_bent_representation(self, tmp_path):
        rep = {"builtin": "genus2", "bend": {"t": 0.4, "curve": "a1 b1 A1 B1", "side": [0, 1]}}
        cfg = group_cfg(tmp_path, rep, max_len=6, max_dist=5)
        assert main(["entropy", write(tmp_path / "c.json", cfg)]) == 0


class TestTube:
    def test_flat_tube_closed_form(self, tmp_path):
        cfg = solve_cfg(tmp_path, {"kind": "constant"}, 0.04)
        cfg["tube"] = {"mc_samples": 20000}
        assert main(["tube", write(tmp_path / "c.json", cfg)]) == 0
        rep = json.loads((tmp_path / "volume.json").read_text())
        assert rep["tube_volume"] == pytest.approx(2 * np.sin(rep["t0"]) * rep["area_M"], rel=0.01)
        assert rep["probe_failures"] == 0
        assert (tmp_path / "density_profile.csv").read_text().startswith("t,density_min,density_max\n")

    def test_tube_from_mesh_file(self, curved_mesh, tmp_path):
        cfg = {"output": str(tmp_path), "tube": {"mesh": str(curved_mesh), "mc_samples": 20000}}
        assert main(["tube", write(tmp_path / "c.json", cfg)]) == 0
        rep = json.loads((tmp_path / "volume.json").read_text())
        assert rep["mu"] * rep["area_M"] <= rep["tube_volume"] <= rep["pseudo_volume"] + 3 * rep["pseudo_stderr"]
