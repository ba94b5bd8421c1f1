import numpy as np
import pytest
from scipy.interpolate import CloughTocher2DInterpolator

from pseudohyp.core import plane_rotation
from pseudohyp.errors import InvalidBoundary, NonConvergence
from pseudohyp.graph import SpacelikeGraph, curvature_report, disk_mesh, geodesic_graph_values
from pseudohyp.solver import (
    BoundaryData,
    ConvergenceLog,
    SolverConfig,
    curved_example,
    max_principle_scan,
    relax,
    residual,
    scan_targets,
    solve_maximal,
    sphere_exp,
    tangent_basis,
)

from conftest import CTX21


def interpolate_onto(coarse, xf, Sf, rimf, boundary):
    """C^1 cubic interpolation of the S^1 angle of a coarse solve onto a finer mesh."""
    ang = np.arctan2(coarse.us[:, 0], coarse.us[:, 1])
    a = CloughTocher2DInterpolator(coarse.xs, ang)(xf)
    uf = np.stack([np.sin(a), np.cos(a)], axis=1)
    uf[rimf] = boundary.evaluate(xf[rimf])
    return SpacelikeGraph(CTX21, xf, uf, Sf, None, rimf)


class TestBoundary:
    def test_lipschitz_margin(self):
        with pytest.raises(InvalidBoundary, match="Lipschitz"):
            curved_example(CTX21, amplitude=0.49)

    def test_non_unit_sample(self):
        d = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        v = np.array([[0.0, 1.0], [0.0, 1.0], [0.0, 2.0]])
        with pytest.raises(InvalidBoundary, match="value 2"):
            BoundaryData(CTX21, d, v)

    def test_evaluate_reproduces_samples(self):
        b = curved_example(CTX21, 0.3)
        assert np.allclose(b.evaluate(b.directions), b.values, atol=1e-12)

    def test_extension_is_unit_and_matches_rim(self):
        b = curved_example(CTX21, 0.3)
        xs, _, rim = disk_mesh(2, 0.1)
        ext = b.extension(xs)
        assert np.allclose(np.linalg.norm(ext, axis=1), 1.0)
        assert np.allclose(ext[rim], b.evaluate(xs[rim]))


class TestSphere:
    def test_exp_stays_on_sphere_and_basis_is_tangent(self):
        rng = np.random.default_rng(0)
        u = rng.normal(size=(20, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        T = tangent_basis(u)
        assert np.abs(np.einsum("nab,nb->na", T, u)).max() < 1e-12
        v = np.einsum("na,nab->nb", rng.normal(size=(20, 2)), T)
        w = sphere_exp(u, v)
        assert np.allclose(np.linalg.norm(w, axis=1), 1.0)
        ang = np.arccos(np.clip(np.sum(u * w, axis=1), -1, 1))
        assert np.allclose(ang, np.linalg.norm(v, axis=1))


class TestSolve:
    def test_constant_boundary(self):
        g = solve_maximal(BoundaryData.constant(CTX21, [0.0, 1.0]), 0.1)
        assert residual(g) < 1e-10

    def test_recovers_exact_geodesic_graph(self):
        G = plane_rotation(CTX21, 0, 2, 0.4).mat
        b = BoundaryData.from_function(CTX21, lambda d: geodesic_graph_values(d, G, CTX21), 256)
        g = solve_maximal(b, 0.05, SolverConfig(tol_residual=1e-8))
        exact = geodesic_graph_values(g.xs, G, CTX21)
        core = np.linalg.norm(g.xs, axis=1) <= 0.8
        err = np.arccos(np.clip(np.sum(g.us * exact, axis=1), -1, 1))
        assert err[core].max() < 5e-3

    def test_rim_is_pinned(self, curved_solve):
        g = curved_solve(0.08)
        b = curved_example(CTX21, 0.4)
        assert np.allclose(g.us[g.rim], b.evaluate(g.xs[g.rim]), atol=1e-14)

    def test_log_is_monotone(self):
        log = ConvergenceLog()
        solve_maximal(curved_example(CTX21, 0.4), 0.08, logbook=log)
        res = [r[1] for r in log.rows]
        assert all(b <= a for a, b in zip(res, res[1:]))
        assert log.to_csv().splitlines()[0] == "iter,residual,min_eig_g"
        assert all(r[2] > 0 for r in log.rows)

    def test_flow_alone_decreases_residual(self):
        log = ConvergenceLog()
        cfg = SolverConfig(method="flow", max_iter=300, tol_residual=1e-12)
        with pytest.raises(NonConvergence) as info:
            solve_maximal(curved_example(CTX21, 0.4), 0.1, cfg, logbook=log)
        assert "residual" in str(info.value)
        assert log.rows[-1][1] < 0.5 * log.rows[0][1]

    def test_perturbation_relaxes_back(self, curved_solve):
        g = curved_solve(0.08)
        us = np.array(g.us)
        core = g.core(0.5)
        rng = np.random.default_rng(1)
        T = tangent_basis(us[core])
        us[core] = sphere_exp(us[core], 0.01 * rng.normal(size=(len(core), 1)) * T[:, 0])
        pert = g.with_values(us)
        assert residual(pert) > 100 * residual(g)
        back = relax(pert, SolverConfig(tol_residual=1e-9))
        err = np.arccos(np.clip(np.sum(back.us * g.us, axis=1), -1, 1))
        assert err.max() < 1e-6

    def test_refinement_of_interpolated_coarse_solutions(self, curved_solve):
        b = curved_example(CTX21, 0.4)
        xf, Sf, rimf = disk_mesh(2, 0.02)
        hs = [0.08, 0.04]
        res = []
        for h in hs:
            fine = interpolate_onto(curved_solve(h), xf, Sf, rimf, b)
            core = np.linalg.norm(fine.xs[fine.interior], axis=1) <= 0.8
            res.append(fine.forms.H_norm[core].max())
        order = np.log(res[0] / res[1]) / np.log(hs[0] / hs[1])
        assert order >= 1.0


class TestMaxPrinciple:
    def test_flat_graph_gradient_window_is_one(self, flat):
        g = flat(0.05)
        rep = max_principle_scan(g, scan_targets(g, 32, 16), 0.8)
        assert rep.L == pytest.approx(1.0, abs=1e-6)

    def test_curved_solve_window(self, curved_solve):
        g = curved_solve(0.04)
        rep = max_principle_scan(g, scan_targets(g), 0.8)
        assert 1.0 <= rep.L <= np.sqrt(2) + 0.02
        assert rep.lemma_slack <= 1e-3

    def test_curvature_suite_on_solve(self, curved_solve):
        rep = curvature_report(curved_solve(0.04))
        assert rep.ric_slack.min() >= -1e-2
        assert rep.II_norm.max() <= 2 + 1e-2
