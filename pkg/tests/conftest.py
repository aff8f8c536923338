import numpy as np
import pytest

from oseen_cutfem import ElementPair, build_uniform_mesh
from oseen_cutfem import analysis as an
from oseen_cutfem import geometry as geo
from oseen_cutfem.problems import BOX

PAIRS = [ElementPair.mini(), ElementPair.taylor_hood(2), ElementPair.p3p0()]
PAIR_IDS = [p.label for p in PAIRS]


@pytest.fixture(scope="session")
def mesh16():
    return build_uniform_mesh(BOX, 16)


@pytest.fixture(scope="session")
def circle16(mesh16):
    return geo.build_geometry(geo.static_circle(radius=1.0), mesh16, 0.0, 0.0)


@pytest.fixture(scope="session")
def moving16(mesh16):
    dom = geo.translating_circle(center=(-0.2, 0.0), velocity=(1.0, 0.0), T=1.0)
    return geo.build_geometry(dom, mesh16, 0.0, 0.1)


@pytest.fixture(scope="session")
def sweep16(mesh16):
    return an.sweep_geometries(mesh16, 1.0, 10)


@pytest.fixture(scope="session")
def assemblers16(circle16):
    return {p.label: an.assembler_for(p, circle16) for p in PAIRS}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
