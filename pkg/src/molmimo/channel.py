"""Closed-form channel responses and per-slot channel taps.

Units are fixed: lengths in um, time in s, D in um^2/s.  The parametric
models raise ``4D`` and ``t`` to fitted powers, so their coefficients are
only meaningful in these units.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erfc

from .geometry import SystemParams

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)

AMP_BOUNDS = (1e-6, 2.0)
EXP_BOUNDS = (0.05, 1.99)


def _finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite input")


def fhit_siso(t, d, R, D):
    """Expected fraction of molecules absorbed by an isolated sphere by ``t``.

    ``d`` is the distance from the point source to the sphere surface.
    """
    _finite(t, d, R, D)
    if d <= 0 or R <= 0 or D <= 0:
        raise ValueError("d, R and D must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    with np.errstate(divide="ignore"):
        z = np.where(t > 0, d / np.sqrt(4.0 * D * np.where(t > 0, t, 1.0)), np.inf)
    out = R / (d + R) * erfc(z)
    return out if out.ndim else float(out)


def _scaled_arg(t, dist, D, b_d, b_t):
    """``dist / ((4D)^b_d * t^b_t)``, with +inf at ``t = 0``."""
    t = np.asarray(t, dtype=float)
    pos = t > 0
    safe = np.where(pos, t, 1.0)
    z = dist / ((4.0 * D) ** b_d * safe ** b_t)
    return np.where(pos, z, np.inf), pos, safe


def parametric_response(t, amp, b_d, b_t, dist, R, D):
    """``amp * R/(dist+R) * erfc(dist / ((4D)^b_d t^b_t))``, zero at ``t=0``."""
    _finite(t, amp, b_d, b_t)
    if b_t <= 0:
        raise ValueError("time exponent must be positive for a monotone response")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    z, _, _ = _scaled_arg(t, dist, D, b_d, b_t)
    out = amp * R / (dist + R) * erfc(z)
    return out if out.ndim else float(out)


def parametric_jacobian(t, amp, b_d, b_t, dist, R, D):
    """Partial derivatives of :func:`parametric_response` w.r.t.
    ``(amp, b_d, b_t)``; shape ``(len(t), 3)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    z, pos, safe = _scaled_arg(t, dist, D, b_d, b_t)
    scale = R / (dist + R)
    zf = np.where(pos, z, 0.0)
    # d/dz erfc(z) = -2/sqrt(pi) exp(-z^2); dz/db_d = -z ln(4D), dz/db_t = -z ln t
    dfdz = np.where(pos, -amp * scale * _TWO_OVER_SQRT_PI * np.exp(-zf * zf), 0.0)
    jac = np.empty((t.size, 3))
    jac[:, 0] = scale * erfc(z)
    jac[:, 1] = dfdz * (-zf * math.log(4.0 * D))
    jac[:, 2] = dfdz * (-zf * np.log(safe))
    return jac


@dataclass(frozen=True)
class ModelParams:
    """Fitted coefficients: ``b1..b3`` for the aligned link, ``b4..b6`` for
    the cross link."""

    b1: float = 1.0
    b2: float = 0.5
    b3: float = 0.5
    b4: float = 1.0
    b5: float = 0.5
    b6: float = 0.5

    def __post_init__(self):
        for name in ("b1", "b2", "b3", "b4", "b5", "b6"):
            object.__setattr__(self, name, float(getattr(self, name)))
        _finite(self.as_array())

    @classmethod
    def from_array(cls, values):
        values = [float(v) for v in values]
        if len(values) != 6:
            raise ValueError("need six coefficients")
        return cls(*values)

    @classmethod
    def from_links(cls, rx1, rx2):
        return cls.from_array(list(rx1) + list(rx2))

    def as_array(self):
        return np.array([self.b1, self.b2, self.b3, self.b4, self.b5, self.b6])

    @property
    def link11(self):
        return (self.b1, self.b2, self.b3)

    @property
    def link21(self):
        return (self.b4, self.b5, self.b6)

    def within_bounds(self) -> bool:
        amps = (self.b1, self.b4)
        exps = (self.b2, self.b3, self.b5, self.b6)
        return all(0 < a <= 2 for a in amps) and all(0 < e < 2 for e in exps)

    def to_json(self, sys: SystemParams | None = None) -> str:
        out = asdict(self)
        if sys is not None:
            out["system"] = sys.to_dict()
        return json.dumps(out, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        sys = data.pop("system", None)
        return cls(**data), (SystemParams(**sys) if sys else None)


def f11_model(t, p: ModelParams, sys: SystemParams):
    return parametric_response(t, p.b1, p.b2, p.b3, sys.d, sys.R, sys.D)


def f21_model(t, p: ModelParams, sys: SystemParams):
    return parametric_response(t, p.b4, p.b5, p.b6, sys.cross_distance, sys.R, sys.D)


def link_distance(sys: SystemParams, which) -> float:
    which = int(which)
    if which == 11:
        return sys.d
    if which == 21:
        return sys.cross_distance
    raise ValueError(f"which must be 11 or 21, got {which!r}")


@dataclass(frozen=True)
class TapVector:
    """``taps[k]``: probability that a molecule is absorbed ``k`` slots after
    the slot it was emitted in."""

    taps: np.ndarray
    t_s: float
    receiver_id: int
    emitter_id: int

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if taps.ndim != 1 or taps.size < 1:
            raise ValueError("taps must be a non-empty 1-D array")
        if np.any(taps < 0) or np.any(taps > 1) or taps.sum() > 1 + 1e-9:
            raise ValueError("taps must be probabilities with sum <= 1")
        object.__setattr__(self, "taps", taps)

    @property
    def eta(self) -> int:
        return self.taps.size - 1


def _taps_from_cumulative(values, t_s, receiver, emitter):
    values = np.asarray(values, dtype=float)
    if np.any(values < -1e-9) or np.any(values > 1 + 1e-9):
        raise ValueError("cumulative response leaves [0, 1]")
    taps = np.clip(np.diff(values), 0.0, None)
    return TapVector(np.clip(taps, 0.0, 1.0), t_s, receiver, emitter)


def taps_from_model(p: ModelParams, sys: SystemParams, t_s, eta, which=11) -> TapVector:
    """Slot-boundary differences of the fitted cumulative response."""
    if not t_s > 0:
        raise ValueError("t_s must be positive")
    if int(eta) < 0:
        raise ValueError("eta must be >= 0")
    bounds = np.arange(int(eta) + 2) * float(t_s)
    which = int(which)
    model = f11_model if which == 11 else f21_model
    link_distance(sys, which)
    receiver = 1 if which == 11 else 2
    return _taps_from_cumulative(model(bounds, p, sys), t_s, receiver, 1)


def taps_from_curve(curve, t_s, eta) -> TapVector:
    """Taps from a simulated mean curve, linearly interpolated at slot
    boundaries (the curve is taken as 0 at ``t = 0``)."""
    if not t_s > 0:
        raise ValueError("t_s must be positive")
    end = (int(eta) + 1) * float(t_s)
    if end > curve.t_end * (1 + 1e-12):
        raise ValueError(f"curve ends at {curve.t_end} s, taps need {end} s")
    tg = np.concatenate([[0.0], curve.time_grid])
    fg = np.concatenate([[0.0], curve.mean_fraction])
    bounds = np.arange(int(eta) + 2) * float(t_s)
    return _taps_from_cumulative(np.interp(bounds, tg, fg), t_s, curve.receiver_id, curve.emitter_id)
