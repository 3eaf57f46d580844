"""System geometry of the 2x2 diffusion channel.

Coordinates (all in micrometres): the receivers sit on the plane ``x = 0``,
Rx1 at the origin and Rx2 at ``(0, h, 0)``.  Each transmitter lies on the
``+x`` axis of its receiver at centre distance ``d + R``, so ``d`` is the
transmitter to nearest-surface distance.  The optional reflecting body is an
axis-aligned box behind the receivers (``x < 0``).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np


class GeometryError(ValueError):
    """Invalid system parameters or body specification."""


class ConsistencyError(RuntimeError):
    """A molecule was found somewhere it cannot legally be."""


def _check_length(name, value, allow_zero=False):
    if not math.isfinite(value):
        raise GeometryError(f"{name} must be finite, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise GeometryError(f"{name} must be {'>= 0' if allow_zero else '> 0'}, got {value!r}")


@dataclass(frozen=True)
class SystemParams:
    """One channel configuration: distances in um, ``D`` in um^2/s."""

    d: float
    h: float
    R: float
    D: float

    def __post_init__(self):
        for name in ("d", "h", "R", "D"):
            object.__setattr__(self, name, float(getattr(self, name)))
        _check_length("d", self.d)
        _check_length("h", self.h, allow_zero=True)
        _check_length("R", self.R)
        _check_length("D", self.D)

    @property
    def overlapping(self) -> bool:
        """True when the two receiver spheres intersect (``h < 2R``)."""
        return self.h < 2.0 * self.R

    @property
    def cross_distance(self) -> float:
        return math.hypot(self.d, self.h)

    def as_tuple(self):
        return (self.d, self.h, self.R, self.D)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CuboidSpec:
    """Reflecting body behind the receivers.

    Lengths left as ``None`` are filled from the system parameters by
    :meth:`resolve`: front face tangent to the rear of the spheres,
    half-width and half-height ``5 (h + 2R)``, depth ``10 R``.
    """

    enabled: bool = False
    front_plane_offset: Optional[float] = None
    half_width: Optional[float] = None
    half_height: Optional[float] = None
    depth: Optional[float] = None

    def resolve(self, params: SystemParams) -> "CuboidSpec":
        if not self.enabled:
            return CuboidSpec(enabled=False)
        span = 5.0 * (params.h + 2.0 * params.R)
        out = CuboidSpec(
            enabled=True,
            front_plane_offset=params.R if self.front_plane_offset is None else float(self.front_plane_offset),
            half_width=span if self.half_width is None else float(self.half_width),
            half_height=span if self.half_height is None else float(self.half_height),
            depth=10.0 * params.R if self.depth is None else float(self.depth),
        )
        for name in ("front_plane_offset", "half_width", "half_height", "depth"):
            _check_length(name, getattr(out, name))
        return out

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Topology:
    params: SystemParams
    tx: np.ndarray  # (2, 3)
    rx: np.ndarray  # (n_rx, 3), n_rx in {1, 2}
    rx_ids: tuple  # receiver label for each row of ``rx``
    body: CuboidSpec
    box_lo: np.ndarray = field(default_factory=lambda: np.zeros(3))
    box_hi: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def radius(self) -> float:
        return self.params.R

    @property
    def has_body(self) -> bool:
        return self.body.enabled


def place_topology(params: SystemParams, body: CuboidSpec = CuboidSpec(),
                   receivers=(1, 2)) -> Topology:
    """Concrete coordinates for transmitters, receivers and body.

    ``receivers`` selects which spheres exist; ``(1,)`` gives the isolated
    single-receiver geometry used to check against the closed-form SISO
    response.
    """
    if not isinstance(params, SystemParams):
        raise GeometryError("params must be a SystemParams")
    d, h, R = params.d, params.h, params.R
    tx = np.array([[d + R, 0.0, 0.0], [d + R, h, 0.0]])
    centres = {1: (0.0, 0.0, 0.0), 2: (0.0, h, 0.0)}
    ids = tuple(int(i) for i in receivers)
    if not ids or any(i not in centres for i in ids) or len(set(ids)) != len(ids):
        raise GeometryError(f"receivers must be a subset of (1, 2), got {receivers!r}")
    rx = np.array([centres[i] for i in ids], dtype=float)
    body = body.resolve(params)
    lo = np.zeros(3)
    hi = np.zeros(3)
    if body.enabled:
        front = -body.front_plane_offset
        lo = np.array([front - body.depth, 0.5 * h - body.half_width, -body.half_height])
        hi = np.array([front, 0.5 * h + body.half_width, body.half_height])
    return Topology(params=params, tx=tx, rx=rx, rx_ids=ids, body=body, box_lo=lo, box_hi=hi)


@dataclass(frozen=True)
class Absorbed:
    receiver_id: int


@dataclass(frozen=True)
class Reflected:
    position: np.ndarray


@dataclass(frozen=True)
class Free:
    position: np.ndarray


Outcome = Union[Absorbed, Reflected, Free]


def _inside_receiver(point, topo: Topology) -> int:
    """Receiver label containing ``point`` (nearest centre wins, ties go to
    the lower label), or 0."""
    best, best_d2 = 0, math.inf
    r2 = topo.radius * topo.radius
    for label, c in zip(topo.rx_ids, topo.rx):
        diff = point - c
        d2 = float(diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2])
        if d2 < r2 and d2 < best_d2:
            best, best_d2 = label, d2
    return best


def reflect_into_medium(point, lo, hi):
    """Mirror a point inside the box across the face it penetrates least."""
    point = np.array(point, dtype=float)
    depth_lo = point - lo
    depth_hi = hi - point
    pen = np.concatenate([depth_lo, depth_hi])
    k = int(np.argmin(pen))
    axis = k % 3
    face = lo[axis] if k < 3 else hi[axis]
    point[axis] = 2.0 * face - point[axis]
    return point


def _inside_box(point, lo, hi) -> bool:
    return bool(np.all(point > lo) and np.all(point < hi))


def resolve_collisions(prev, nxt, topo: Topology) -> Outcome:
    """Classify the end point of one step.

    Pure geometry: absorption is tested at the end of the step only.  The
    simulation kernels add a Brownian-bridge crossing test on top of this.
    """
    prev = np.asarray(prev, dtype=float)
    nxt = np.asarray(nxt, dtype=float)
    if _inside_receiver(prev, topo):
        raise ConsistencyError(f"previous position {prev} is inside a receiver")
    hit = _inside_receiver(nxt, topo)
    if hit:
        return Absorbed(hit)
    if topo.has_body and _inside_box(nxt, topo.box_lo, topo.box_hi):
        moved = reflect_into_medium(nxt, topo.box_lo, topo.box_hi)
        hit = _inside_receiver(moved, topo)
        if hit:
            return Absorbed(hit)
        return Reflected(moved)
    return Free(nxt)
