import numpy as np
import pytest

from pseudohyp.core import FormContext, plane_rotation
from pseudohyp.graph import SpacelikeGraph, disk_mesh, geodesic_graph_values
from pseudohyp.solver import curved_example, solve_maximal

CTX21 = FormContext(2, 1)


def flat_graph(ctx, h, radius=1.0):
    xs, S, rim = disk_mesh(ctx.p, h, radius)
    us = np.zeros((len(xs), ctx.q + 1))
    us[:, -1] = 1.0
    return SpacelikeGraph(ctx, xs, us, S, h, rim)


def tilted_graph(ctx, h, angle=0.5):
    xs, S, rim = disk_mesh(ctx.p, h)
    G = plane_rotation(ctx, 0, ctx.p, angle).mat
    return SpacelikeGraph(ctx, xs, geodesic_graph_values(xs, G, ctx), S, h, rim)


class _Cache:
    def __init__(self, build):
        self.build = build
        self.store = {}

    def __call__(self, *key):
        if key not in self.store:
            self.store[key] = self.build(*key)
        return self.store[key]


@pytest.fixture(scope="session")
def ctx21():
    return CTX21


@pytest.fixture(scope="session")
def curved_solve():
    """Cached curved maximal solves keyed by mesh scale."""
    return _Cache(lambda h, amp=0.4: solve_maximal(curved_example(CTX21, amp), h))


@pytest.fixture(scope="session")
def flat():
    return _Cache(lambda h, p=2, q=1: flat_graph(FormContext(p, q), h))


@pytest.fixture(scope="session")
def tilted():
    return _Cache(lambda h: tilted_graph(CTX21, h))


@pytest.fixture(scope="session")
def genus2_tables():
    from pseudohyp.groups import block_embed_rep, enumerate_orbit, load_genus2

    def build(q, max_len, max_dist):
        rep = block_embed_rep(load_genus2(), q)
        return enumerate_orbit(rep, max_len=max_len, max_dist=max_dist)

    return _Cache(build)
