"""Moving domains and their per-step discrete geometry on the background mesh."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from . import cutquad
from .errors import DomainOutsideBackgroundError, EvaluationError, InvalidArgumentError

INSIDE, CUT, STRIP, FAR = 0, 1, 2, 3
CLASS_NAMES = {INSIDE: "INSIDE", CUT: "CUT", STRIP: "STRIP", FAR: "FAR"}

SNAP = 1e-12
DELTA_FLOOR = 1e-14


@dataclass
class MovingDomain:
    """Level set ``phi(x, y, t)`` (negative inside) transported by ``w(x, y, t)``.

    ``w`` returns an array of shape ``x.shape + (2,)``. ``steady_w`` marks a
    transport field that does not depend on time, and ``moving`` whether
    the level set does.
    """

    levelset: Callable
    w: Callable
    T: float = 1.0
    steady_w: bool = True
    moving: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def phi(self, x, y, t):
        return self.levelset(np.asarray(x, float), np.asarray(y, float), t)

    def velocity(self, x, y, t):
        return self.w(np.asarray(x, float), np.asarray(y, float), t)


def _zero_w(x, y, t):
    return np.zeros(np.shape(x) + (2,))


def static_circle(center=(0.0, 0.0), radius=1.0, T=1.0) -> MovingDomain:
    cx, cy = map(float, center)
    r = float(radius)

    def phi(x, y, t):
        return np.hypot(x - cx, y - cy) - r

    return MovingDomain(phi, _zero_w, T=T, steady_w=True, moving=False, name="static_circle",
                        params={"center": [cx, cy], "radius": r})


def translating_circle(center=(0.0, 0.0), radius=1.0, velocity=(1.0, 0.0), T=1.0) -> MovingDomain:
    cx, cy = map(float, center)
    vx, vy = map(float, velocity)
    r = float(radius)

    def phi(x, y, t):
        return np.hypot(x - cx - vx * t, y - cy - vy * t) - r

    def w(x, y, t):
        out = np.empty(np.shape(x) + (2,))
        out[..., 0] = vx
        out[..., 1] = vy
        return out

    return MovingDomain(phi, w, T=T, steady_w=True, moving=(vx, vy) != (0.0, 0.0), name="translating_circle",
                        params={"center": [cx, cy], "radius": r, "velocity": [vx, vy]})


def rotating_ellipse(center=(0.0, 0.0), axes=(1.0, 0.6), omega=1.0, T=1.0) -> MovingDomain:
    """Ellipse rotating rigidly about its center with angular speed ``omega``."""
    cx, cy = map(float, center)
    a, b = map(float, axes)
    om = float(omega)

    def phi(x, y, t):
        c, s = np.cos(om * t), np.sin(om * t)
        dx, dy = x - cx, y - cy
        xr = c * dx + s * dy
        yr = -s * dx + c * dy
        return np.sqrt((xr / a) ** 2 + (yr / b) ** 2) - 1.0

    def w(x, y, t):
        out = np.empty(np.shape(x) + (2,))
        out[..., 0] = -om * (y - cy)
        out[..., 1] = om * (x - cx)
        return out

    return MovingDomain(phi, w, T=T, steady_w=True, moving=om != 0.0, name="rotating_ellipse",
                        params={"center": [cx, cy], "axes": [a, b], "omega": om})


DOMAIN_PRESETS = {
    "static_circle": static_circle,
    "translating_circle": translating_circle,
    "rotating_ellipse": rotating_ellipse,
}


def make_domain(preset: str, params: dict | None = None, T: float = 1.0) -> MovingDomain:
    try:
        factory = DOMAIN_PRESETS[preset]
    except KeyError:
        raise InvalidArgumentError(f"unknown domain preset {preset!r}") from None
    try:
        return factory(T=T, **(params or {}))
    except TypeError as exc:
        raise InvalidArgumentError(f"bad parameters for {preset}: {exc}") from None


def discretize_levelset(domain: MovingDomain, mesh, t: float) -> np.ndarray:
    """Vertex values of the level set at time ``t``, snapped away from zero."""
    if t < -1e-14 or t > domain.T * (1 + 1e-12) + 1e-14:
        raise InvalidArgumentError(f"time {t} outside [0, {domain.T}]")
    vals = np.asarray(domain.phi(mesh.vertices[:, 0], mesh.vertices[:, 1], t), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise EvaluationError("level set returned non-finite values")
    return snap_values(vals, mesh.h)


def snap_values(vals: np.ndarray, h: float) -> np.ndarray:
    tol = SNAP * h
    vals = vals.copy()
    vals[np.abs(vals) < tol] = -tol
    return vals


@dataclass(frozen=True)
class InterfacePreview:
    cut_cells: np.ndarray
    decomposition: dict


def preview_interface(mesh, phi_h: np.ndarray) -> InterfacePreview:
    cv = phi_h[mesh.cells]
    cut = np.flatnonzero((cv < 0).any(axis=1) & (cv > 0).any(axis=1))
    if len(cut):
        dec = cutquad.decompose_cut_cells(mesh.cell_coords[cut], cv[cut], mesh.cells[cut])
    else:
        dec = {"inside": np.zeros((0, 2, 3, 2)), "outside": np.zeros((0, 2, 3, 2)),
               "segments": np.zeros((0, 2, 2)), "normals": np.zeros((0, 2))}
    return InterfacePreview(cut, dec)


def compute_delta_h(domain: MovingDomain, mesh, phi_h, t: float, dt: float, c_delta: float = 2.0, order: int = 4):
    """Return ``(delta_h, w_inf)`` with ``delta_h = c_delta * w_inf * dt``.

    ``w_inf`` is the largest ``|w . n|`` over the interface quadrature points.
    """
    if c_delta < 1:
        raise InvalidArgumentError("c_delta must be >= 1")
    prev = phi_h if isinstance(phi_h, InterfacePreview) else preview_interface(mesh, phi_h)
    if len(prev.cut_cells) == 0:
        return 0.0, 0.0
    pts, _ = cutquad.map_segments(prev.decomposition["segments"], order)
    pts = np.concatenate([pts, prev.decomposition["segments"]], axis=1)
    wv = np.asarray(domain.velocity(pts[..., 0], pts[..., 1], t), dtype=float)
    if not np.all(np.isfinite(wv)):
        raise EvaluationError("transport field returned non-finite values")
    wn = np.abs(np.einsum("cqi,ci->cq", wv, prev.decomposition["normals"]))
    w_inf = float(wn.max())
    if w_inf * dt < DELTA_FLOOR:
        return 0.0, w_inf
    return float(c_delta * w_inf * dt), w_inf


@dataclass(eq=False)
class ActiveGeometry:
    """Classification of the background cells at one time step."""

    mesh: object
    step: int
    t: float
    phi: np.ndarray
    cell_class: np.ndarray
    in_strip: np.ndarray  # boolean mask of the strip set around the interface
    delta_h: float
    w_inf: float
    preview: InterfacePreview

    @property
    def h(self) -> float:
        return self.mesh.h

    @cached_property
    def inside_cells(self) -> np.ndarray:
        return np.flatnonzero(self.cell_class == INSIDE)

    @cached_property
    def cut_cells(self) -> np.ndarray:
        return self.preview.cut_cells

    @cached_property
    def active_cells(self) -> np.ndarray:
        return np.flatnonzero(self.cell_class != FAR)

    @cached_property
    def strip_cells(self) -> np.ndarray:
        return np.flatnonzero(self.in_strip)

    @cached_property
    def domain_cells(self) -> np.ndarray:
        """Cells meeting the discrete domain (inside or cut)."""
        return np.flatnonzero(self.cell_class <= CUT)

    @cached_property
    def active_mask(self) -> np.ndarray:
        return self.cell_class != FAR

    @cached_property
    def _face_sets(self):
        return _compute_face_sets(self)

    @property
    def faces_interior(self) -> np.ndarray:
        return self._face_sets[0]

    @property
    def faces_active(self) -> np.ndarray:
        return self._face_sets[1]

    @property
    def faces_ghost(self) -> np.ndarray:
        return self._face_sets[2]

    @cached_property
    def path_length(self) -> float:
        return _path_length(self)

    @cached_property
    def domain_area(self) -> float:
        dec = self.preview.decomposition
        area = self.mesh.cell_areas[self.inside_cells].sum()
        if len(self.cut_cells):
            area += np.abs(cutquad._double_area(dec["inside"])).sum() / 2
        return float(area)

    @cached_property
    def interior_area(self) -> float:
        return float(self.mesh.cell_areas[self.inside_cells].sum())

    def counts(self) -> dict:
        return {name: int(np.sum(self.cell_class == c)) for c, name in CLASS_NAMES.items()}

    def cell_class_names(self) -> np.ndarray:
        return np.array([CLASS_NAMES[c] for c in self.cell_class])


def vertex_distance_proxy(mesh, phi_h: np.ndarray) -> np.ndarray:
    """First-order distance of each vertex to the zero set: |phi_h(v)| / max |grad phi_h| around v."""
    grad = cutquad.linear_gradients(mesh.cell_coords, phi_h[mesh.cells])
    gnorm = np.linalg.norm(grad, axis=1)
    gmax = np.zeros(mesh.num_vertices)
    np.maximum.at(gmax, mesh.cells.ravel(), np.repeat(gnorm, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.abs(phi_h) / gmax
    d[~np.isfinite(d)] = np.inf
    return d


def cell_distance_proxy(mesh, phi_h: np.ndarray) -> np.ndarray:
    """Smallest vertex distance proxy of each cell."""
    return vertex_distance_proxy(mesh, phi_h)[mesh.cells].min(axis=1)


def _connected_to(mesh, seeds: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Cells in ``allowed`` reachable from ``seeds`` through shared faces."""
    reached = np.zeros(mesh.num_cells, dtype=bool)
    reached[seeds] = True
    queue = deque(np.flatnonzero(seeds).tolist())
    nbrs = mesh.cell_neighbors
    while queue:
        c = queue.popleft()
        for nb in nbrs[c]:
            if nb >= 0 and allowed[nb] and not reached[nb]:
                reached[nb] = True
                queue.append(nb)
    return reached


def classify(mesh, phi_h: np.ndarray, delta_h: float, step: int = 0, t: float = 0.0, w_inf: float = 0.0,
             preview: InterfacePreview | None = None) -> ActiveGeometry:
    """Sort the background cells into INSIDE / CUT / STRIP / FAR."""
    phi_h = np.asarray(phi_h, dtype=float)
    if not np.all(np.isfinite(phi_h)):
        raise EvaluationError("non-finite level set values")
    cv = phi_h[mesh.cells]
    neg = (cv < 0).all(axis=1)
    pos = (cv > 0).all(axis=1)
    cut = ~neg & ~pos
    dist = cell_distance_proxy(mesh, phi_h)
    dist[cut] = 0.0
    near = dist <= delta_h
    # strip cells must reach the cut set through faces of near cells
    near &= _connected_to(mesh, cut, near | cut)

    cls = np.full(mesh.num_cells, FAR, dtype=np.int8)
    cls[neg] = INSIDE
    cls[cut] = CUT
    cls[pos & near] = STRIP
    if not np.any(cls <= CUT):
        raise DomainOutsideBackgroundError("the discrete domain does not meet the background mesh")
    if np.any(cls[mesh.face_cells[mesh.boundary_faces, 0]] <= CUT):
        raise DomainOutsideBackgroundError("the discrete domain touches the background box boundary")
    in_strip = (cls != FAR) & near
    if preview is None:
        preview = preview_interface(mesh, phi_h)
    return ActiveGeometry(mesh=mesh, step=step, t=t, phi=phi_h, cell_class=cls, in_strip=in_strip,
                          delta_h=float(delta_h), w_inf=float(w_inf), preview=preview)


def build_geometry(domain: MovingDomain, mesh, t: float, dt: float, c_delta: float = 2.0, step: int = 0,
                   delta_scale: float = 1.0) -> ActiveGeometry:
    """Discretize, size the extension layer and classify in one go."""
    phi_h = discretize_levelset(domain, mesh, t)
    prev = preview_interface(mesh, phi_h)
    delta, w_inf = compute_delta_h(domain, mesh, prev, t, dt, c_delta)
    return classify(mesh, phi_h, delta_scale * delta, step=step, t=t, w_inf=w_inf, preview=prev)


def _compute_face_sets(geom: ActiveGeometry):
    mesh = geom.mesh
    interior = mesh.interior_faces
    c0 = mesh.face_cells[interior, 0]
    c1 = mesh.face_cells[interior, 1]
    cls = geom.cell_class
    both_inside = (cls[c0] == INSIDE) & (cls[c1] == INSIDE)
    both_active = (cls[c0] != FAR) & (cls[c1] != FAR)
    ghost = both_active & (geom.in_strip[c0] | geom.in_strip[c1])
    return interior[both_inside], interior[both_active], interior[ghost]


def face_sets(geom: ActiveGeometry, mesh=None):
    """Return the interior-mesh, active-mesh and ghost-penalty face index arrays."""
    return geom.faces_interior, geom.faces_active, geom.faces_ghost


def _path_length(geom: ActiveGeometry) -> float:
    """Largest number of faces crossed from an INSIDE cell to any other active cell."""
    mesh = geom.mesh
    active = geom.active_mask
    dist = np.full(mesh.num_cells, -1, dtype=np.int64)
    queue = deque(geom.inside_cells.tolist())
    dist[geom.inside_cells] = 0
    nbrs = mesh.cell_neighbors
    while queue:
        c = queue.popleft()
        for nb in nbrs[c]:
            if nb >= 0 and active[nb] and dist[nb] < 0:
                dist[nb] = dist[c] + 1
                queue.append(nb)
    rest = active & (geom.cell_class != INSIDE)
    if not rest.any():
        return 0.0
    if np.any(dist[rest] < 0):
        return float("inf")
    return float(dist[rest].max())


def check_time_coupling(previous: ActiveGeometry, current: ActiveGeometry) -> bool:
    """True when every cell meeting the current domain was active at the previous step."""
    return bool(np.all(previous.active_mask[current.domain_cells]))
