"""BCSK link evaluation over the 2x2 channel.

Bit vectors put the current slot first: ``bits[k]`` is the bit sent ``k``
slots ago.  A receiver decides bit-1 when its slot count is ``>= tau``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr
from scipy.stats import binom

from .channel import TapVector

MAX_ETA = 20


@dataclass(frozen=True)
class BerConfig:
    N: int
    t_s: float
    eta: int
    tau: float
    burn_in: bool = False

    def __post_init__(self):
        if int(self.N) < 1:
            raise ValueError("N must be >= 1")
        if not self.t_s > 0:
            raise ValueError("t_s must be positive")
        if int(self.eta) < 0:
            raise ValueError("eta must be >= 0")
        if not self.tau >= 0:
            raise ValueError("tau must be >= 0")

    def with_tau(self, tau) -> "BerConfig":
        return BerConfig(self.N, self.t_s, self.eta, float(tau), self.burn_in)


@dataclass(frozen=True)
class TapSet:
    """Channel taps of the aligned topology; ``F12``/``F22`` follow from
    symmetry."""

    F11: np.ndarray
    F21: np.ndarray

    def __post_init__(self):
        f11 = np.asarray(getattr(self.F11, "taps", self.F11), dtype=float)
        f21 = np.asarray(getattr(self.F21, "taps", self.F21), dtype=float)
        if f11.shape != f21.shape or f11.ndim != 1:
            raise ValueError("F11 and F21 must have the same length")
        for f in (f11, f21):
            if np.any(f < 0) or np.any(f > 1):
                raise ValueError("taps must lie in [0, 1]")
        object.__setattr__(self, "F11", f11)
        object.__setattr__(self, "F21", f21)

    @property
    def F22(self):
        return self.F11

    @property
    def F12(self):
        return self.F21

    @property
    def eta(self) -> int:
        return self.F11.size - 1

    def padded(self, eta) -> "TapSet":
        extra = int(eta) - self.eta
        if extra < 0:
            raise ValueError("cannot pad to a shorter window")
        return TapSet(np.pad(self.F11, (0, extra)), np.pad(self.F21, (0, extra)))

    @classmethod
    def from_vectors(cls, f11: TapVector, f21: TapVector) -> "TapSet":
        return cls(f11.taps, f21.taps)


@dataclass
class BerResult:
    p_e: float
    conditionals: Optional[dict] = None
    standard_error: Optional[float] = None
    meta: dict = field(default_factory=dict)


def _own_cross(taps: TapSet, rx):
    if rx == 1:
        return taps.F11, taps.F12
    if rx == 2:
        return taps.F22, taps.F21
    raise ValueError("rx must be 1 or 2")


def count_stats(bits1, bits2, taps: TapSet, N, rx=1):
    """Gaussian mean and variance of the slot count at receiver ``rx``."""
    bits1 = np.asarray(bits1, dtype=float)
    bits2 = np.asarray(bits2, dtype=float)
    n = taps.eta + 1
    if bits1.shape != (n,) or bits2.shape != (n,):
        raise ValueError(f"bit vectors must have length eta + 1 = {n}")
    own_bits, cross_bits = (bits1, bits2) if rx == 1 else (bits2, bits1)
    own, cross = _own_cross(taps, rx)
    mu = N * (own_bits @ own) + N * (cross_bits @ cross)
    var = N * (own_bits @ (own * (1 - own))) + N * (cross_bits @ (cross * (1 - cross)))
    return float(mu), float(var)


def _error_prob(sent, mu, var, tau):
    """Gaussian probability that thresholding at ``tau`` flips ``sent``."""
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (tau - mu) / sd
        below = np.where(var > 0, ndtr(z), (mu < tau).astype(float))
    return np.where(sent == 1, below, 1.0 - below)


def bit_patterns(n):
    """All ``2**n`` bit vectors of length ``n`` (row ``i`` = binary of ``i``)."""
    idx = np.arange(2 ** n)[:, None]
    return ((idx >> np.arange(n)[None, :]) & 1).astype(float)


def analytic_ber(taps: TapSet, cfg: BerConfig, conditionals=False) -> BerResult:
    """Average error probability over all equiprobable bit patterns of both
    transmitters within the ISI window, Gaussian count approximation."""
    eta = taps.eta
    if eta != int(cfg.eta):
        raise ValueError(f"taps cover eta={eta}, config says {cfg.eta}")
    if eta > MAX_ETA:
        raise ValueError(f"eta={eta} exceeds the enumeration limit {MAX_ETA}")
    B = bit_patterns(eta + 1)
    N, tau = float(cfg.N), float(cfg.tau)
    # per-pattern contributions of one transmitter through each tap vector
    m11, v11 = N * (B @ taps.F11), N * (B @ (taps.F11 * (1 - taps.F11)))
    m21, v21 = N * (B @ taps.F21), N * (B @ (taps.F21 * (1 - taps.F21)))
    sent = B[:, 0]
    total = 0.0
    cond = {} if conditionals else None
    rows = max(1, (1 << 22) // B.shape[0])
    for start in range(0, B.shape[0], rows):
        a = slice(start, start + rows)
        # rx1 sees its own tx through F11 and tx2 through F12 = F21
        e1 = _error_prob(sent[a, None], m11[a, None] + m21[None, :], v11[a, None] + v21[None, :], tau)
        e2 = _error_prob(sent[None, :], m11[None, :] + m21[a, None], v11[None, :] + v21[a, None], tau)
        pe = 0.5 * e1 + 0.5 * e2
        total += float(pe.sum())
        if cond is not None:
            for i, row in enumerate(pe, start=start):
                for j, val in enumerate(row):
                    cond[(tuple(B[i].astype(int)), tuple(B[j].astype(int)))] = float(val)
    p = total / float(B.shape[0]) ** 2
    return BerResult(min(max(p, 0.0), 1.0), cond)


def _binomial_sum_pmf(N, probs):
    pmf = np.ones(1)
    for p in probs:
        pmf = np.convolve(pmf, binom.pmf(np.arange(N + 1), N, p))
    return pmf


def exact_ber(taps: TapSet, cfg: BerConfig) -> BerResult:
    """Same pattern average as :func:`analytic_ber` but with the exact count
    distribution (a convolution of Binomials) instead of a Gaussian."""
    eta = taps.eta
    if eta > 6:
        raise ValueError("exact enumeration is limited to eta <= 6")
    B = bit_patterns(eta + 1).astype(int)
    N, tau = int(cfg.N), float(cfg.tau)
    cut = max(0, math.ceil(tau))
    total = 0.0
    for x1 in B:
        for x2 in B:
            err = 0.0
            for rx, (own_bits, cross_bits) in ((1, (x1, x2)), (2, (x2, x1))):
                own, cross = _own_cross(taps, rx)
                pmf = _binomial_sum_pmf(N, [own[k] for k in range(eta + 1) if own_bits[k]]
                                        + [cross[k] for k in range(eta + 1) if cross_bits[k]])
                upper = float(pmf[cut:].sum())
                err += 0.5 * ((1.0 - upper) if own_bits[0] else upper)
            total += err
    return BerResult(min(max(total / B.shape[0] ** 2, 0.0), 1.0))


def _binomial_counts(bits, taps, N, rng):
    """Sum over lags ``k`` of ``Binomial(N * bits[m-k], taps[k])``."""
    n = bits.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    for k, p in enumerate(taps):
        shifted = np.zeros(n, dtype=np.int64)
        shifted[k:] = bits[:n - k] if k else bits
        counts += rng.binomial(N * shifted, p)
    return counts


def sample_counts(taps: TapSet, N, n_bits, seed):
    """Bit streams and received counts for both receivers at tap level."""
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(2, n_bits), dtype=np.int64)
    c1 = _binomial_counts(bits[0], taps.F11, N, rng) + _binomial_counts(bits[1], taps.F12, N, rng)
    c2 = _binomial_counts(bits[1], taps.F22, N, rng) + _binomial_counts(bits[0], taps.F21, N, rng)
    return bits, np.stack([c1, c2])


def _score(bits, counts, tau, skip):
    decided = (counts >= tau).astype(np.int64)
    errs = decided[:, skip:] != bits[:, skip:]
    trials = errs.size
    p = float(errs.sum()) / trials
    return p, math.sqrt(p * (1.0 - p) / trials), trials


def monte_carlo_ber(taps: TapSet, cfg: BerConfig, n_bits, seed=0) -> BerResult:
    """Tap-level Monte Carlo: independent Binomial arrivals per active
    emission in the ISI window, errors counted over both receivers."""
    return monte_carlo_sweep(taps, cfg, [cfg.tau], n_bits, seed)[0]


def monte_carlo_sweep(taps: TapSet, cfg: BerConfig, taus, n_bits, seed=0):
    """One sampled stream scored at every threshold in ``taus``."""
    if n_bits < 1000:
        raise ValueError("n_bits must be >= 1000")
    if taps.eta != int(cfg.eta):
        raise ValueError(f"taps cover eta={taps.eta}, config says {cfg.eta}")
    bits, counts = sample_counts(taps, int(cfg.N), int(n_bits), seed)
    skip = int(cfg.eta) if cfg.burn_in else 0
    out = []
    for tau in taus:
        p, se, trials = _score(bits, counts, float(tau), skip)
        out.append(BerResult(p, None, se, {"trials": trials, "tau": float(tau),
                                           "burn_in_slots": skip, "seed": seed}))
    return out


def analytic_sweep(taps: TapSet, cfg: BerConfig, taus):
    return [analytic_ber(taps, cfg.with_tau(t)).p_e for t in taus]


def default_taus(taps: TapSet, N, n_points=41):
    """Half-integer thresholds spanning ``[0, N * sum(F11)]``.

    Counts are integers, so every threshold in ``(k, k+1]`` gives the same
    decision rule; the half-integer representative is where the Gaussian
    approximation is most faithful.
    """
    top = float(N) * float(np.sum(taps.F11))
    grid = np.unique(np.floor(np.linspace(0.0, top, n_points))) + 0.5
    return grid[grid <= max(top, 0.5)]


MAX_PARTICLE_MOLECULES = 50_000_000


def particle_ber(sys, cfg: BerConfig, simcfg, n_bits, seed=0, horizon_slots=None,
                 taus=None, use_numba=None):
    """Ground-truth BER from a full particle simulation of the bit streams.

    Every bit-1 releases ``N`` molecules from its transmitter at the start of
    the slot.  Each molecule diffuses until absorbed or until
    ``horizon_slots`` slots after its release (default ``2 (eta + 1)``),
    which keeps interference well beyond the ISI window.  Counts are the
    absorptions inside each slot.  Returns one :class:`BerResult` per
    threshold when ``taus`` is given, else a single result at ``cfg.tau``.
    """
    from .geometry import place_topology
    from .sim import first_passage, replication_streams, steps_for

    if n_bits < 100:
        raise ValueError("n_bits must be >= 100")
    if n_bits * int(cfg.N) > MAX_PARTICLE_MOLECULES:
        raise ValueError(f"n_bits * N exceeds the particle budget {MAX_PARTICLE_MOLECULES}")
    per_slot = steps_for(cfg.t_s, simcfg.dt)
    horizon = int(horizon_slots) if horizon_slots is not None else 2 * (int(cfg.eta) + 1)
    horizon = max(1, min(horizon, n_bits))
    topo = place_topology(sys, simcfg.body)
    sigma = math.sqrt(2.0 * sys.D * simcfg.dt)
    rng_bits = np.random.default_rng([int(seed), 0])
    bits = rng_bits.integers(0, 2, size=(2, n_bits), dtype=np.int64)
    counts = np.zeros((2, n_bits + horizon), dtype=np.int64)
    N = int(cfg.N)
    for tx in (1, 2):
        slots = np.flatnonzero(bits[tx - 1])
        if slots.size == 0:
            continue
        rng, key = replication_streams(seed, 1, tx)
        hit_rx, hit_step = first_passage(topo.tx[tx - 1], slots.size * N, horizon * per_slot,
                                         topo, sigma, rng, key, simcfg.bridge, use_numba)
        emit_slot = np.repeat(slots, N)
        got = hit_rx > 0
        arrival = emit_slot[got] + (hit_step[got] - 1) // per_slot
        np.add.at(counts, (hit_rx[got].astype(np.int64) - 1, arrival), 1)
    counts = counts[:, :n_bits]
    skip = int(cfg.eta) if cfg.burn_in else 0
    results = []
    for tau in (taus if taus is not None else [cfg.tau]):
        p, se, trials = _score(bits, counts, float(tau), skip)
        results.append(BerResult(p, None, se, {"trials": trials, "tau": float(tau),
                                               "horizon_slots": horizon, "seed": seed}))
    return results if taus is not None else results[0]
