"""Reference nowcasters: Eulerian persistence and block-matching advection.

Conventions: ``u`` is the displacement along columns and ``v`` along rows, in
pixels per 5-minute step. A feature at ``x`` in one frame is expected at
``x + (v, u)`` in the next.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .gridio import CADENCE_S, GridFrame

MIN_CORRELATION = 0.3
MIN_VARIANCE = 1e-10


@dataclass(frozen=True)
class MotionField:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.shape != v.shape or u.ndim != 2:
            raise ArgumentError(f"motion components must be equal 2D shapes, got {u.shape} and {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ArgumentError("motion field must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def shape(self):
        return self.u.shape

    @classmethod
    def uniform(cls, shape, u, v):
        return cls(np.full(shape, float(u)), np.full(shape, float(v)))

    @classmethod
    def zeros(cls, shape):
        return cls.uniform(shape, 0.0, 0.0)


def _values(frame):
    """Frame values as float64 with nodata set to zero."""
    if isinstance(frame, GridFrame):
        return np.where(frame.valid, frame.values, 0).astype(np.float64)
    a = np.asarray(frame, dtype=np.float64)
    if a.ndim != 2:
        raise ArgumentError(f"expected a 2D field, got shape {a.shape}")
    return a


def persistence(frame, n=18):
    """``n`` copies of ``frame``, stamped one cadence step apart."""
    return [
        GridFrame(frame.variable, frame.timestamp + CADENCE_S * (k + 1), frame.values,
                  pixel_km=frame.pixel_km, nodata=frame.nodata)
        for k in range(n)
    ]


# -- block matching ------------------------------------------------------------


def _block_edges(n, block):
    edges = list(range(0, n, block))
    return np.asarray(edges), np.asarray(edges[1:] + [n])


def _block_sum(a, r_starts, c_starts):
    return np.add.reduceat(np.add.reduceat(a, r_starts, axis=0), c_starts, axis=1)


def _search_order(radius):
    """Displacements (dv, du) sorted by tie-break priority (|d|^2, v, u)."""
    ds = [(dv, du) for dv in range(-radius, radius + 1) for du in range(-radius, radius + 1)]
    return sorted(ds, key=lambda d: (d[0] ** 2 + d[1] ** 2, d[0], d[1]))


def _match_pair(a, b, block, radius):
    """Per-block (v, u, valid) for the displacement best explaining a -> b.

    The correlation for a displacement uses only the block pixels whose
    displaced position lies inside the grid; overlaps smaller than a quarter
    of the block are skipped.
    """
    rows, cols = a.shape
    r0, r1 = _block_edges(rows, block)
    c0, c1 = _block_edges(cols, block)
    n_full = np.outer(r1 - r0, c1 - c0).astype(np.float64)
    a2 = a * a

    bp = np.pad(b, radius)
    inside = np.pad(np.ones_like(b), radius)
    best = np.full(n_full.shape, -np.inf)
    best_v = np.zeros(n_full.shape)
    best_u = np.zeros(n_full.shape)
    a_ok = np.zeros(n_full.shape, dtype=bool)
    for dv, du in _search_order(radius):
        win = (slice(radius + dv, radius + dv + rows), slice(radius + du, radius + du + cols))
        bs, m = bp[win], inside[win]
        n = _block_sum(m, r0, c0)
        sa = _block_sum(a * m, r0, c0)
        sb = _block_sum(bs, r0, c0)
        with np.errstate(divide="ignore", invalid="ignore"):
            a_var = _block_sum(a2 * m, r0, c0) - sa * sa / n
            b_var = _block_sum(bs * bs, r0, c0) - sb * sb / n
            cov = _block_sum(a * bs, r0, c0) - sa * sb / n
        usable = 4 * n >= n_full
        if dv == 0 and du == 0:
            a_ok = a_var > MIN_VARIANCE
        ok = usable & (a_var > MIN_VARIANCE) & (b_var > MIN_VARIANCE)
        ncc = np.full(n.shape, -np.inf)
        ncc[ok] = cov[ok] / np.sqrt(a_var[ok] * b_var[ok])
        better = ncc > best  # strict: earlier (higher-priority) displacements win ties
        best[better] = ncc[better]
        best_v[better] = dv
        best_u[better] = du
    valid = a_ok & (best >= MIN_CORRELATION)
    return best_v, best_u, valid


def _fill_invalid(field, valid):
    """Invalid cells take the median of valid 8-neighbours, or 0 if none."""
    out = field.copy()
    nr, nc = field.shape
    for i, j in zip(*np.nonzero(~valid)):
        nb = [
            field[p, q]
            for p in range(max(i - 1, 0), min(i + 2, nr))
            for q in range(max(j - 1, 0), min(j + 2, nc))
            if (p, q) != (i, j) and valid[p, q]
        ]
        out[i, j] = float(np.median(nb)) if nb else 0.0
    return out


def _interp_blocks(grid, centers_r, centers_c, rows, cols):
    """Separable bilinear interpolation of a block grid, clamped at the edges."""
    rr = np.arange(rows, dtype=np.float64)
    cc = np.arange(cols, dtype=np.float64)
    tmp = np.stack([np.interp(cc, centers_c, g) for g in grid])
    return np.stack([np.interp(rr, centers_r, tmp[:, j]) for j in range(cols)], axis=1)


def estimate_motion(frames, block=16, search_radius=8):
    """Block-matching motion from two or more consecutive frames.

    Each block of frame t is compared, by normalized cross-correlation, with
    frame t+1 displaced by every integer offset within ``search_radius``,
    over the part of the block that stays inside the grid. Blocks with flat texture or best
    correlation below 0.3 take the median of their valid neighbours. With more
    than two frames the block displacements are averaged over pairs.
    """
    if len(frames) < 2:
        raise ArgumentError(f"motion estimation needs at least 2 frames, got {len(frames)}")
    if block < 1 or search_radius < 0:
        raise ArgumentError("block must be >= 1 and search_radius >= 0")
    arrays = [_values(f) for f in frames]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ArgumentError(f"frame shapes differ: {shape} vs {a.shape}")

    vs, us = [], []
    for a, b in zip(arrays[:-1], arrays[1:]):
        bv, bu, ok = _match_pair(a, b, block, search_radius)
        vs.append(_fill_invalid(bv, ok))
        us.append(_fill_invalid(bu, ok))
    v_blk = np.mean(vs, axis=0)
    u_blk = np.mean(us, axis=0)

    rows, cols = shape
    r0, r1 = _block_edges(rows, block)
    c0, c1 = _block_edges(cols, block)
    cr = (r0 + r1 - 1) / 2.0
    cc = (c0 + c1 - 1) / 2.0
    return MotionField(_interp_blocks(u_blk, cr, cc, rows, cols),
                       _interp_blocks(v_blk, cr, cc, rows, cols))


# -- advection -------------------------------------------------------------------


def bilinear_sample(field, rows, cols):
    """Sample ``field`` at fractional (rows, cols); outside the grid reads 0."""
    nr, nc = field.shape
    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = rows - r0
    fc = cols - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    out = np.zeros(np.shape(rows), dtype=np.float64)
    for dr, wr in ((0, 1.0 - fr), (1, fr)):
        for dc, wc in ((0, 1.0 - fc), (1, fc)):
            r = r0 + dr
            c = c0 + dc
            inside = (r >= 0) & (r < nr) & (c >= 0) & (c < nc)
            vals = np.zeros(out.shape)
            vals[inside] = field[r[inside], c[inside]]
            out += wr * wc * vals
    return out


def extrapolate(frame, motion, n=18):
    """Backward semi-Lagrangian advection: out_k(x) = frame(x - k d(x)).

    Nodata pixels are read as zero. Zero motion reproduces the input exactly.
    """
    values = _values(frame)
    if motion.shape != values.shape:
        raise ArgumentError(f"motion shape {motion.shape} != frame shape {values.shape}")
    rows, cols = np.indices(values.shape, dtype=np.float64)
    out = []
    for k in range(1, n + 1):
        adv = bilinear_sample(values, rows - k * motion.v, cols - k * motion.u)
        out.append(GridFrame(frame.variable, frame.timestamp + CADENCE_S * k, adv.astype(np.float32),
                             pixel_km=frame.pixel_km, nodata=frame.nodata))
    return out


def advection_nowcast(frames, n=18, block=16, search_radius=8):
    """Estimate motion from ``frames`` and advect the last one."""
    motion = estimate_motion(frames, block=block, search_radius=search_radius)
    return extrapolate(frames[-1], motion, n)
