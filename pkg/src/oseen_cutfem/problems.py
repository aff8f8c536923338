"""Manufactured Oseen solutions and the two reference test problems."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fespace import ElementPair
from .geometry import MovingDomain, static_circle, translating_circle


def _stack(a, b):
    return np.stack([a, b], axis=-1)


@dataclass
class ManufacturedSolution:
    """``u = g(t) (sin kx cos ky, -cos kx sin ky)``, ``p = g(t) sin kx cos ky``.

    The velocity is divergence free (it is the curl of ``g sin kx sin ky / k``)
    and ``lap u = -2 k^2 u``. ``w`` is the transport field used to build the
    forcing ``f = u_t + (grad u) w - lap u + grad p``.
    """

    k: float = 1.0
    time_profile: str = "constant"  # "constant" | "cos" | "linear" | "zero"
    w: Callable | None = None
    nu: float = 1.0

    def _g(self, t):
        if self.time_profile == "constant":
            return 1.0, 0.0
        if self.time_profile == "cos":
            return np.cos(t), -np.sin(t)
        if self.time_profile == "linear":
            return t, 1.0
        if self.time_profile == "zero":
            return 0.0, 0.0
        raise ValueError(f"unknown time profile {self.time_profile!r}")

    def velocity(self, x, y, t):
        g, _ = self._g(t)
        return g * self._shape(x, y)

    def _shape(self, x, y):
        k = self.k
        return _stack(np.sin(k * x) * np.cos(k * y), -np.cos(k * x) * np.sin(k * y))

    def velocity_gradient(self, x, y, t):
        """Array (..., 2, 2) with entry [i, j] = d u_i / d x_j."""
        k = self.k
        g, _ = self._g(t)
        cc = k * np.cos(k * x) * np.cos(k * y)
        ss = k * np.sin(k * x) * np.sin(k * y)
        out = np.empty(np.shape(x) + (2, 2))
        out[..., 0, 0] = g * cc
        out[..., 0, 1] = -g * ss
        out[..., 1, 0] = g * ss
        out[..., 1, 1] = -g * cc
        return out

    def pressure(self, x, y, t):
        g, _ = self._g(t)
        return g * np.sin(self.k * x) * np.cos(self.k * y)

    def pressure_gradient(self, x, y, t):
        k = self.k
        g, _ = self._g(t)
        return g * _stack(k * np.cos(k * x) * np.cos(k * y), -k * np.sin(k * x) * np.sin(k * y))

    def forcing(self, x, y, t):
        g, dg = self._g(t)
        shape = self._shape(np.asarray(x, float), np.asarray(y, float))
        f = dg * shape + self.nu * 2 * self.k**2 * g * shape + self.pressure_gradient(x, y, t)
        if self.w is not None:
            wv = np.asarray(self.w(x, y, t), dtype=float)
            f = f + np.einsum("...ij,...j->...i", self.velocity_gradient(x, y, t), wv)
        return f

    def boundary_data(self, x, y, t):
        return self.velocity(x, y, t)


@dataclass
class Problem:
    """Everything needed to run the time stepper on one domain."""

    domain: MovingDomain
    pair: ElementPair
    f: Callable | None = None  # f(x, y, t) -> (..., 2)
    g: Callable | None = None  # Dirichlet data on the interface
    u0: Callable | None = None  # u0(x, y) -> (..., 2)
    exact: ManufacturedSolution | None = None
    name: str = "custom"
    options: dict = field(default_factory=dict)


def manufactured_problem(domain: MovingDomain, pair: ElementPair, k=1.0, time_profile="constant", nu=1.0,
                         name="manufactured") -> Problem:
    ms = ManufacturedSolution(k=k, time_profile=time_profile, w=domain.velocity, nu=nu)
    return Problem(domain=domain, pair=pair, f=ms.forcing, g=ms.boundary_data,
                   u0=lambda x, y: ms.velocity(x, y, 0.0), exact=ms, name=name)


def zero_problem(domain: MovingDomain, pair: ElementPair, u0=None, name="zero") -> Problem:
    """Zero forcing and boundary data; optional initial velocity."""
    return Problem(domain=domain, pair=pair, u0=u0, name=name)


def random_initial_problem(domain: MovingDomain, pair: ElementPair, seed: int = 0, name="random_initial") -> Problem:
    """Zero forcing and boundary data; initial velocity with i.i.d. normal coefficients."""
    return Problem(domain=domain, pair=pair, name=name, options={"random_initial_seed": int(seed)})


# reference problems -----------------------------------------------------------
BOX = ((-2.0, 2.0), (-2.0, 2.0))


def problem_a(T: float = 0.5) -> Problem:
    """Stationary unit circle, no transport, Taylor-Hood(2), steady solution."""
    dom = static_circle(center=(0.0, 0.0), radius=1.0, T=T)
    return manufactured_problem(dom, ElementPair.taylor_hood(2), time_profile="constant", name="problem_a")


def problem_b(T: float = 0.4) -> Problem:
    """Unit circle translating with ``w = (1, 0)``, Mini element, ``g(t) = cos t``."""
    dom = translating_circle(center=(-0.2, 0.0), radius=1.0, velocity=(1.0, 0.0), T=T)
    return manufactured_problem(dom, ElementPair.mini(), time_profile="cos", name="problem_b")


def spacing_to_n(box, spacing: float) -> int:
    """Subdivisions per axis giving grid spacing ``spacing`` on ``box``."""
    width = float(box[0][1] - box[0][0])
    n = int(round(width / spacing))
    return max(n, 1)
