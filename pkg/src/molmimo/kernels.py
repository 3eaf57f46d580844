"""Particle-advance kernels.

``advance`` moves a batch of live molecules through a chunk of pre-drawn
Gaussian increments, detecting absorption and applying body reflection.
Absorption is detected two ways per step: the end point lies inside a
sphere, or the Brownian bridge between the two end points crossed the
sphere surface.  The crossing probability uses the planar approximation
``exp(-2 a b / s^2)`` with ``a``, ``b`` the distances of the two end points
to the surface and ``s^2 = 2 D dt`` the per-axis step variance.

The uniform variate for the crossing test is a counter-based hash of
``(key, molecule id, step)``, so both kernel variants draw the same value
regardless of evaluation order.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def _mix(z):
    # splitmix64 finaliser; works on numpy uint64 scalars and arrays
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _uniform(key, mol, step):
    h = _mix(_mix(key ^ (mol * _GOLDEN)) ^ step)
    return (h >> _S11) * _INV53


_mix_nb = njit(cache=True, nogil=True)(_mix)


@njit(cache=True, nogil=True)
def _uniform_nb(key, mol, step):
    h = _mix_nb(_mix_nb(key ^ (np.uint64(mol) * _GOLDEN)) ^ np.uint64(step))
    return float(h >> _S11) * _INV53


def bridge_uniforms(key, mol, step):
    """Vectorised counterpart of the in-kernel uniform draw."""
    mol = np.asarray(mol, dtype=np.uint64)
    step = np.broadcast_to(np.asarray(step, dtype=np.uint64), mol.shape)
    return _uniform(np.uint64(key), mol, step).astype(np.float64)


@njit(cache=True, nogil=True)
def _advance_loop(pos, ids, incr, step0, centres, labels, radius, lo, hi,
                  has_body, sigma2, key, bridge, hit_rx, hit_step):
    n_chunk = incr.shape[0]
    m = incr.shape[1]
    nrx = centres.shape[0]
    r2 = radius * radius
    for j in range(m):
        x = pos[j, 0]
        y = pos[j, 1]
        z = pos[j, 2]
        mol = ids[j]
        for s in range(n_chunk):
            step = step0 + s + 1
            nx = x + incr[s, j, 0]
            ny = y + incr[s, j, 1]
            nz = z + incr[s, j, 2]
            hit = 0
            best = np.inf
            de0 = np.inf
            de1 = np.inf
            for q in range(nrx):
                dx = nx - centres[q, 0]
                dy = ny - centres[q, 1]
                dz = nz - centres[q, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if q == 0:
                    de0 = d2
                else:
                    de1 = d2
                if d2 < r2 and d2 < best:
                    best = d2
                    hit = labels[q]
            if hit == 0 and bridge:
                dx = x - centres[0, 0]
                dy = y - centres[0, 1]
                dz = z - centres[0, 2]
                ds0 = dx * dx + dy * dy + dz * dz
                p0 = math.exp(-2.0 * (math.sqrt(ds0) - radius) * (math.sqrt(de0) - radius) / sigma2)
                u = _uniform_nb(key, mol, step)
                if nrx == 1:
                    if u < p0:
                        hit = labels[0]
                else:
                    dx = x - centres[1, 0]
                    dy = y - centres[1, 1]
                    dz = z - centres[1, 2]
                    ds1 = dx * dx + dy * dy + dz * dz
                    p1 = math.exp(-2.0 * (math.sqrt(ds1) - radius) * (math.sqrt(de1) - radius) / sigma2)
                    if de0 <= de1:
                        if u < p0:
                            hit = labels[0]
                        elif u < p0 + (1.0 - p0) * p1:
                            hit = labels[1]
                    else:
                        if u < p1:
                            hit = labels[1]
                        elif u < p1 + (1.0 - p1) * p0:
                            hit = labels[0]
            if hit == 0 and has_body:
                if (lo[0] < nx < hi[0]) and (lo[1] < ny < hi[1]) and (lo[2] < nz < hi[2]):
                    pens = (nx - lo[0], ny - lo[1], nz - lo[2], hi[0] - nx, hi[1] - ny, hi[2] - nz)
                    k = 0
                    for c in range(1, 6):
                        if pens[c] < pens[k]:
                            k = c
                    if k == 0:
                        nx = 2.0 * lo[0] - nx
                    elif k == 1:
                        ny = 2.0 * lo[1] - ny
                    elif k == 2:
                        nz = 2.0 * lo[2] - nz
                    elif k == 3:
                        nx = 2.0 * hi[0] - nx
                    elif k == 4:
                        ny = 2.0 * hi[1] - ny
                    else:
                        nz = 2.0 * hi[2] - nz
                    best = np.inf
                    for q in range(nrx):
                        dx = nx - centres[q, 0]
                        dy = ny - centres[q, 1]
                        dz = nz - centres[q, 2]
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 < r2 and d2 < best:
                            best = d2
                            hit = labels[q]
            if hit != 0:
                hit_rx[mol] = hit
                hit_step[mol] = step
                break
            x = nx
            y = ny
            z = nz
        pos[j, 0] = x
        pos[j, 1] = y
        pos[j, 2] = z


def _nearest_inside(px, py, pz, centres, labels, r2):
    hit = np.zeros(px.shape, dtype=np.int8)
    best = np.full(px.shape, np.inf)
    d2s = []
    for q in range(centres.shape[0]):
        dx = px - centres[q, 0]
        dy = py - centres[q, 1]
        dz = pz - centres[q, 2]
        d2 = dx * dx + dy * dy + dz * dz
        d2s.append(d2)
        take = (d2 < r2) & (d2 < best)
        best = np.where(take, d2, best)
        hit = np.where(take, labels[q], hit).astype(np.int8)
    return hit, d2s


def _advance_vec(pos, ids, incr, step0, centres, labels, radius, lo, hi,
                 has_body, sigma2, key, bridge, hit_rx, hit_step):
    nrx = centres.shape[0]
    r2 = radius * radius
    idx = np.arange(ids.size)
    for s in range(incr.shape[0]):
        if idx.size == 0:
            break
        step = step0 + s + 1
        x, y, z = pos[idx, 0], pos[idx, 1], pos[idx, 2]
        inc = incr[s, idx]
        nx = x + inc[:, 0]
        ny = y + inc[:, 1]
        nz = z + inc[:, 2]
        hit, de = _nearest_inside(nx, ny, nz, centres, labels, r2)

        if bridge:
            free = hit == 0
            _, ds = _nearest_inside(x, y, z, centres, labels, r2)
            p = [np.exp(-2.0 * (np.sqrt(ds[q]) - radius) * (np.sqrt(de[q]) - radius) / sigma2)
                 for q in range(nrx)]
            u = bridge_uniforms(key, ids[idx], step)
            if nrx == 1:
                cross = np.where(u < p[0], labels[0], 0)
            else:
                first0 = de[0] <= de[1]
                pa = np.where(first0, p[0], p[1])
                pb = np.where(first0, p[1], p[0])
                la = np.where(first0, labels[0], labels[1])
                lb = np.where(first0, labels[1], labels[0])
                cross = np.where(u < pa, la, np.where(u < pa + (1.0 - pa) * pb, lb, 0))
            hit = np.where(free, cross, hit).astype(np.int8)

        if has_body:
            inbox = ((hit == 0) & (lo[0] < nx) & (nx < hi[0]) & (lo[1] < ny) & (ny < hi[1])
                     & (lo[2] < nz) & (nz < hi[2]))
            if inbox.any():
                b = np.flatnonzero(inbox)
                pts = np.stack([nx[b], ny[b], nz[b]], axis=1)
                pens = np.concatenate([pts - lo, hi - pts], axis=1)
                k = np.argmin(pens, axis=1)
                axis = k % 3
                face = np.where(k < 3, lo[axis], hi[axis])
                rows = np.arange(b.size)
                pts[rows, axis] = 2.0 * face - pts[rows, axis]
                nx[b], ny[b], nz[b] = pts[:, 0], pts[:, 1], pts[:, 2]
                rehit, _ = _nearest_inside(pts[:, 0], pts[:, 1], pts[:, 2], centres, labels, r2)
                hit[b] = rehit

        absorbed = hit != 0
        if absorbed.any():
            gone = idx[absorbed]
            hit_rx[ids[gone]] = hit[absorbed]
            hit_step[ids[gone]] = step
        keep = ~absorbed
        live = idx[keep]
        pos[live, 0] = nx[keep]
        pos[live, 1] = ny[keep]
        pos[live, 2] = nz[keep]
        idx = live


def advance(pos, ids, incr, step0, centres, labels, radius, lo, hi,
            has_body, sigma2, key, bridge, hit_rx, hit_step, use_numba=None):
    """Advance molecules ``ids`` (current positions ``pos``) by ``incr``.

    ``incr`` has shape ``(n_steps, len(ids), 3)``.  Absorptions are written to
    ``hit_rx`` (receiver label) and ``hit_step`` (1-based global step index),
    both indexed by molecule id.  ``pos`` is updated in place for molecules
    still free at the end of the chunk.
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    fn = _advance_loop if use_numba else _advance_vec
    fn(pos, ids, incr, int(step0), centres, labels, float(radius), lo, hi,
       bool(has_body), float(sigma2), np.uint64(key), bool(bridge), hit_rx, hit_step)
