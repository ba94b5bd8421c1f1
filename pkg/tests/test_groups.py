import itertools

import numpy as np
import pytest

from pseudohyp.core import FormContext, Isometry, PseudoPoint, isometry_defect, plane_rotation
from pseudohyp.errors import BadPartition, BudgetExceeded, InsufficientData, InvalidSignature, NonCommuting
from pseudohyp.groups import (
    Representation,
    axis_translation_estimate,
    bend,
    bending_generator,
    block_embed,
    block_embed_rep,
    brute_force_count,
    cyclic_example,
    diameter_estimate,
    entropy_estimate,
    enumerate_orbit,
    fermi_intrinsic_distances,
    fundamental_domain_membership,
    hull_samples,
    length_spectrum,
    load_genus2,
    schottky_example,
    systole,
    tiling_check,
    translation_length,
    wedge_generator,
)

CTX21 = FormContext(2, 1)


@pytest.fixture(scope="module")
def g2():
    return block_embed_rep(load_genus2(), 1)


class TestRepresentation:
    def test_genus2_relator_and_isometries(self):
        rep = load_genus2()
        assert rep.relator_residual() < 1e-9
        for g in rep.generators:
            assert isometry_defect(g.mat, rep.ctx) < 1e-10

    def test_json_round_trip(self, g2):
        back = Representation.from_json(g2.to_json())
        for a, b in zip(back.generators, g2.generators):
            assert np.array_equal(a.mat, b.mat)
        assert back.relator == g2.relator

    def test_bad_relator_rejected(self):
        data = load_genus2().to_json()
        # valid isometries in the wrong order break the surface relation
        data["generators"][0], data["generators"][1] = data["generators"][1], data["generators"][0]
        with pytest.raises(InvalidSignature, match="relator"):
            Representation.from_json(data)

    def test_word_parsing(self, g2):
        w = g2.parse_word("a1 B2 A1")
        assert g2.format_word(w) == "a1.B2.A1"
        with pytest.raises(ValueError):
            g2.parse_word("a1 zz")

    def test_block_embed_fixes_middle_block(self):
        base = load_genus2().generators[0]
        for q in (1, 2):
            E = block_embed(base, q)
            assert isometry_defect(E.mat, E.ctx) < 1e-10
            assert np.allclose(E.mat[2:2 + q, 2:2 + q], np.eye(q))
            # the totally geodesic H^2 block is invariant
            assert np.allclose(E.mat[2:2 + q][:, [0, 1, -1]], 0.0)

    def test_block_embed_rejects_wrong_signature(self):
        with pytest.raises(InvalidSignature):
            block_embed(Isometry(np.eye(4), CTX21), 1)


class TestEnumeration:
    def test_free_word_count(self):
        t = enumerate_orbit(schottky_example(1), max_len=3)
        assert len(t) == 1 + 4 + 12 + 36

    @pytest.mark.parametrize("max_len", [2, 3, 4])
    def test_matches_brute_force(self, g2, max_len):
        assert len(enumerate_orbit(g2, max_len=max_len)) == brute_force_count(g2, max_len)

    def test_schottky_matches_brute_force(self):
        rep = schottky_example(1)
        assert len(enumerate_orbit(rep, max_len=4)) == brute_force_count(rep, 4)

    def test_budget(self, g2):
        with pytest.raises(BudgetExceeded):
            enumerate_orbit(g2, max_len=6, cap=1000)

    def test_pruning_keeps_everything_within_radius(self, g2):
        full = enumerate_orbit(g2, max_len=6)
        pruned = enumerate_orbit(g2, max_len=6, max_dist=4.0)
        assert pruned.complete_radius <= 4.0
        inner_full = np.sort(full.dist[full.dist <= pruned.complete_radius])
        inner_pruned = np.sort(pruned.dist[pruned.dist <= pruned.complete_radius])
        assert np.allclose(inner_full, inner_pruned)

    def test_csv_export(self):
        t = enumerate_orbit(cyclic_example(CTX21), max_len=2)
        lines = t.to_csv().splitlines()
        assert lines[0] == "word,dist"
        assert len(lines) == 1 + 5


class TestEntropy:
    def test_cyclic_slope_near_zero(self):
        t = enumerate_orbit(cyclic_example(CTX21, 0.8), max_len=200)
        est = entropy_estimate(t)
        assert abs(est.slope) <= 0.05

    def test_window_and_csv(self, g2):
        t = enumerate_orbit(g2, max_len=8, max_dist=7)
        est = entropy_estimate(t)
        assert est.window[1] == pytest.approx(t.complete_radius - np.log(2))
        assert est.window[0] == pytest.approx(0.5 * est.window[1])
        assert est.to_csv().splitlines()[0] == "R,N"
        assert set(est.summary()) >= {"slope", "stderr", "window"}

    def test_strict_coverage(self, g2):
        t = enumerate_orbit(g2, max_len=6, max_dist=5)
        grid = np.linspace(0, t.complete_radius + 1, 50)
        with pytest.raises(InsufficientData):
            entropy_estimate(t, grid)
        est = entropy_estimate(t, grid, strict=False)
        assert est.R_grid[-1] == grid[-1]

    def test_intrinsic_distances_equal_pseudo_on_block(self):
        t = enumerate_orbit(schottky_example(1), max_len=5)
        assert np.allclose(fermi_intrinsic_distances(t), t.dist, atol=1e-8)

    def test_conjugation_by_rotation_preserves_counts(self, g2):
        R = plane_rotation(g2.ctx, 0, 1, 0.7).mat
        a = enumerate_orbit(g2, max_len=5)
        b = enumerate_orbit(g2.conjugated(R), max_len=5)
        assert np.allclose(np.sort(a.dist), np.sort(b.dist), atol=1e-8)


class TestSpectrum:
    def test_cyclic_boost(self):
        g = cyclic_example(CTX21, 0.8).generators[0]
        ell, prox = translation_length(g)
        assert prox and ell == pytest.approx(0.8, abs=1e-12)

    def test_axis_iteration(self, g2):
        t = enumerate_orbit(g2, max_len=3)
        for M in t.mats[1:40]:
            ell, prox = translation_length(M)
            if prox:
                assert axis_translation_estimate(M, g2.ctx) == pytest.approx(ell, abs=1e-6)

    def test_conjugation_invariance(self, g2):
        rng = np.random.default_rng(2)
        from pseudohyp.core import random_isometry
        h = random_isometry(g2.ctx, rng, 0.5).mat
        for w in [(0,), (0, 1), (1, 2, 3)]:
            M = g2.evaluate(w)
            assert translation_length(h @ M @ np.linalg.inv(h))[0] == pytest.approx(translation_length(M)[0], abs=1e-8)

    def test_identity_is_not_proximal(self):
        assert translation_length(np.eye(4)) == (0.0, False)

    def test_systole_brute_force(self, g2):
        best = np.inf
        L = g2.letters
        for n in range(1, 5):
            for w in itertools.product(range(8), repeat=n):
                M = np.eye(4)
                for k in w:
                    M = M @ L[k]
                ell, prox = translation_length(M)
                if prox:
                    best = min(best, ell)
        _, s = systole(g2, 4)
        assert s == pytest.approx(best, abs=1e-9)

    def test_spectrum_entries(self):
        t = enumerate_orbit(cyclic_example(CTX21, 0.8), max_len=2)
        spec = length_spectrum(t)
        assert spec[0].proximal is False
        assert spec[1].length == pytest.approx(0.8)


class TestBending:
    def test_relator_and_commutation(self, g2):
        c = g2.parse_word("a1 b1 A1 B1")
        K = bending_generator(g2, c)
        C = g2.evaluate(c)
        assert np.abs(K @ C - C @ K).max() < 1e-8
        for t in (0.2, 0.4, 1.0):
            b = bend(g2, c, K, t, [0, 1])
            assert b.relator_residual() < 1e-8
            for g in b.generators:
                assert isometry_defect(g.mat, g2.ctx) < 1e-9

    def test_zero_bend_is_identity(self, g2):
        c = g2.parse_word("a1 b1 A1 B1")
        assert bend(g2, c, bending_generator(g2, c), 0.0, [0, 1]) is g2

    def test_errors(self, g2):
        c = g2.parse_word("a1 b1 A1 B1")
        K = bending_generator(g2, c)
        with pytest.raises(BadPartition):
            bend(g2, c, K, 0.3, [0, 1, 2, 3])
        with pytest.raises(BadPartition):
            bend(g2, c, K, 0.3, [])
        bad = wedge_generator(g2.ctx.basis(0), g2.ctx.basis(2), g2.ctx)
        with pytest.raises(NonCommuting):
            bend(g2, c, bad, 0.3, [0, 1])
        with pytest.raises(NonCommuting):
            bend(g2, c, np.ones((4, 4)), 0.3, [0, 1])
        with pytest.raises(NonCommuting):
            bending_generator(load_genus2(), c)


@pytest.fixture(scope="module")
def table(g2):
    return enumerate_orbit(g2, max_len=12, max_dist=7)


class TestDomain:
    def test_origin_membership(self, g2, table):
        m = fundamental_domain_membership(PseudoPoint.origin(g2.ctx), g2, table=table)
        assert m.member and m.word == ()
        x = g2.evaluate((0,)) @ PseudoPoint.origin(g2.ctx).coords
        m = fundamental_domain_membership(x, g2, table=table)
        assert not m.member and m.word == (0,)

    def test_tiling(self, g2, table):
        rng = np.random.default_rng(0)
        X = hull_samples(g2.ctx, 200, g2.domain_radius, rng)
        rep = tiling_check(table, X, 2 * g2.domain_radius)
        assert rep.unique == rep.samples

    def test_cyclic_diameter_is_half_length(self):
        rep = cyclic_example(CTX21, 0.8)
        s = np.linspace(0, 0.8, 81)
        X = np.zeros((81, 4))
        X[:, 0] = np.sinh(s)
        X[:, -1] = np.cosh(s)
        est = diameter_estimate(rep, max_len=4, samples=X)
        assert est.diameter == pytest.approx(0.4, abs=0.011)

    def test_diameter_grows_with_samples(self, g2, table):
        rng = np.random.default_rng(1)
        X = hull_samples(g2.ctx, 120, g2.domain_radius, rng)
        small = diameter_estimate(g2, table=table, samples=X[:40])
        big = diameter_estimate(g2, table=table, samples=X)
        assert big.diameter >= small.diameter
        assert big.diameter <= 2 * g2.domain_radius + 1e-9
