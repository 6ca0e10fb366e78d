"""Marginal estimators and distances built from occupation numbers.

The k-particle marginal of the N-particle law is estimated through cell
occupation products: for distinct cells,

    f_k_hat(D1..Dk) = <n(D1) ... n(Dk)> / (N(N-1)...(N-k+1) delta^{3k}),

the average running over independent snapshots (replicas).  Dividing by
the falling factorial rather than N^k keeps the a-priori bound
f_k_hat <= T_{k,N} / alpha^k < e^{2k} / alpha^k valid with the explicit
T_{k,N} = N^k / (N(N-1)...(N-k+1)).

All estimates are sparse over packed int64 cell keys so replica sets
merge by exact integer count addition.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError
from .grid import cell_keys, pack_cells, unpack_cells


@dataclass(frozen=True)
class CompactBox:
    """Axis-aligned box in velocity space (componentwise lower < upper)."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,) or not np.all(lo < hi):
            raise ConfigError("box needs componentwise lower < upper")

    @classmethod
    def cube(cls, half_width, center=(0.0, 0.0, 0.0)):
        c = np.asarray(center, dtype=np.float64)
        return cls(tuple(c - half_width), tuple(c + half_width))

    def cell_range(self, delta):
        """Inclusive index range of cells [i delta, (i+1) delta) meeting the box."""
        lo = np.asarray(self.lower) / delta
        hi = np.asarray(self.upper) / delta
        imin = np.floor(lo).astype(np.int64)
        imax = np.ceil(hi).astype(np.int64) - 1
        return imin, np.maximum(imax, imin)

    def n_cells(self, delta):
        imin, imax = self.cell_range(delta)
        return int(np.prod(imax - imin + 1))

    def mask_keys(self, keys, delta):
        """Boolean mask of packed cell keys whose cells intersect the box."""
        idx = unpack_cells(np.asarray(keys, dtype=np.int64))
        imin, imax = self.cell_range(delta)
        return np.all((idx >= imin) & (idx <= imax), axis=-1)


@dataclass
class MarginalEstimate:
    """Sparse k-particle marginal estimate on the delta grid.

    For k=1, cells holds packed cell keys of shape (n,); for k=2 it
    holds ordered distinct-cell key pairs of shape (n, 2) (both orders
    stored, so the estimate is symmetric by construction).  values are
    the estimates, counts the raw integer occupation-product counts.
    """

    k: int
    delta: float
    n_particles: int
    alpha: float
    n_samples: int
    cells: np.ndarray
    values: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.k not in (1, 2):
            raise ConfigError("only k in {1, 2} marginals are supported")

    @property
    def falling_factorial(self):
        n = self.n_particles
        return float(n) if self.k == 1 else float(n) * (n - 1)

    @property
    def t_correction(self):
        """T_{k,N} = N^k / falling factorial (>= 1)."""
        return self.n_particles**self.k / self.falling_factorial

    def value_at(self, cell):
        """Estimate at a cell (k=1) or ordered cell pair (k=2); 0 if absent."""
        if self.k == 1:
            key = pack_cells(np.asarray(cell, dtype=np.int64)[None, :])[0]
            pos = np.searchsorted(self.cells, key)
            if pos < self.cells.size and self.cells[pos] == key:
                return float(self.values[pos])
            return 0.0
        k1 = pack_cells(np.asarray(cell[0], dtype=np.int64)[None, :])[0]
        k2 = pack_cells(np.asarray(cell[1], dtype=np.int64)[None, :])[0]
        pos = np.searchsorted(self.cells[:, 0], k1, side="left")
        while pos < self.cells.shape[0] and self.cells[pos, 0] == k1:
            if self.cells[pos, 1] == k2:
                return float(self.values[pos])
            pos += 1
        return 0.0

    def total_mass(self):
        """sum values * delta^{3k}; equals 1 for an unrestricted k=1 estimate."""
        return float(np.sum(self.values)) * self.delta ** (3 * self.k)


def delta_norm(est: MarginalEstimate):
    """Sup over stored distinct-cell tuples of the cell-averaged estimate."""
    if est.values.size == 0:
        return 0.0
    return float(np.max(est.values))


def _ensemble_keys(ens, box=None):
    keys = cell_keys(ens.grid, ens.velocities)
    if box is not None:
        keys = keys[box.mask_keys(keys, ens.grid.delta)]
    return np.sort(keys)


def estimate_marginal(snapshots, k, box=None):
    """Occupation-product marginal estimate from ensemble snapshots.

    All snapshots must share (N, delta).  For k=2 a box restriction is
    strongly advised at large N: the empirical pair support has
    ~N(N-1) entries per snapshot.
    """
    if not snapshots:
        raise ConfigError("need at least one snapshot")
    g0 = snapshots[0].grid
    for s in snapshots:
        if (s.grid.n_particles, s.grid.delta) != (g0.n_particles, g0.delta):
            raise ConfigError("snapshots mix grids")
    key_lists = [_ensemble_keys(s, box) for s in snapshots]
    if k == 1:
        return estimate_k1_from_keys(
            key_lists, g0.n_particles, g0.delta, g0.alpha
        )
    return estimate_k2_from_keys(key_lists, g0.n_particles, g0.delta, g0.alpha)


def estimate_k1_from_keys(key_lists, n_particles, delta, alpha):
    """k=1 estimate from per-replica sorted key arrays."""
    r = len(key_lists)
    allk = np.concatenate(key_lists) if key_lists else np.empty(0, np.int64)
    cells, counts = np.unique(allk, return_counts=True)
    values = counts / (r * n_particles * delta**3)
    return MarginalEstimate(
        k=1, delta=delta, n_particles=n_particles, alpha=alpha,
        n_samples=r, cells=cells, values=values, counts=counts,
    )


def estimate_k2_from_keys(key_lists, n_particles, delta, alpha):
    """k=2 estimate from per-replica sorted key arrays (box-restricted)."""
    r = len(key_lists)
    union = np.unique(np.concatenate(key_lists)) if key_lists else np.empty(0, np.int64)
    n_u = union.size
    if n_u > (1 << 26):
        raise ConfigError("k=2 support too large; restrict with a box")
    enc_list = []
    for keys in key_lists:
        ranks = np.searchsorted(union, keys)
        if ranks.size >= 2:
            a = np.repeat(ranks, ranks.size)
            b = np.tile(ranks, ranks.size)
            mask = a != b
            enc_list.append(a[mask] * np.int64(n_u) + b[mask])
    if enc_list:
        enc = np.concatenate(enc_list)
        uniq, counts = np.unique(enc, return_counts=True)
        c1 = union[(uniq // n_u).astype(np.int64)]
        c2 = union[(uniq % n_u).astype(np.int64)]
        cells = np.stack([c1, c2], axis=1)
    else:
        cells = np.empty((0, 2), dtype=np.int64)
        counts = np.empty(0, dtype=np.int64)
    values = counts / (r * n_particles * (n_particles - 1) * delta**6)
    return MarginalEstimate(
        k=2, delta=delta, n_particles=n_particles, alpha=alpha,
        n_samples=r, cells=cells, values=values, counts=counts,
    )


def merge_estimates(estimates):
    """Combine estimates over disjoint replica sets (exact count addition)."""
    if not estimates:
        raise ConfigError("nothing to merge")
    e0 = estimates[0]
    for e in estimates[1:]:
        if (e.k, e.delta, e.n_particles) != (e0.k, e0.delta, e0.n_particles):
            raise ConfigError("estimates mix grids or orders")
    r = sum(e.n_samples for e in estimates)
    if e0.k == 1:
        allk = np.concatenate([e.cells for e in estimates])
        allc = np.concatenate([e.counts for e in estimates])
        cells, inv = np.unique(allk, return_inverse=True)
        counts = np.zeros(cells.size, dtype=np.int64)
        np.add.at(counts, inv, allc)
        values = counts / (r * e0.n_particles * e0.delta**3)
    else:
        allk = np.concatenate([e.cells for e in estimates], axis=0)
        allc = np.concatenate([e.counts for e in estimates])
        cells, inv = np.unique(allk, axis=0, return_inverse=True)
        counts = np.zeros(cells.shape[0], dtype=np.int64)
        np.add.at(counts, inv.ravel(), allc)
        values = counts / (
            r * e0.n_particles * (e0.n_particles - 1) * e0.delta**6
        )
    return MarginalEstimate(
        k=e0.k, delta=e0.delta, n_particles=e0.n_particles, alpha=e0.alpha,
        n_samples=r, cells=cells, values=values, counts=counts,
    )


# ---------------------------------------------------------------------------
# distances against a continuum field


@njit(cache=True)
def _trilinear_batch(values, box_l, h, pts, out):
    nv = values.shape[0]
    for m in range(pts.shape[0]):
        ux = (pts[m, 0] + box_l) / h
        uy = (pts[m, 1] + box_l) / h
        uz = (pts[m, 2] + box_l) / h
        bx = int(np.floor(ux))
        by = int(np.floor(uy))
        bz = int(np.floor(uz))
        fx = ux - bx
        fy = uy - by
        fz = uz - bz
        acc = 0.0
        for cx in range(2):
            ix = bx + cx
            if ix < 0 or ix >= nv:
                continue
            wx = fx if cx == 1 else 1.0 - fx
            for cy in range(2):
                iy = by + cy
                if iy < 0 or iy >= nv:
                    continue
                wy = fy if cy == 1 else 1.0 - fy
                for cz in range(2):
                    iz = bz + cz
                    if iz < 0 or iz >= nv:
                        continue
                    wz = fz if cz == 1 else 1.0 - fz
                    acc += wx * wy * wz * values[ix, iy, iz]
        out[m] = acc
    return out


def field_cell_averages(field, cell_idx, delta):
    """Cell averages of a DensityField by the fixed 2^3 midpoint rule.

    cell_idx: (n, 3) integer cell indices; returns (n,) averages from
    the 8 sub-points at the cell center +/- delta/4.
    """
    cell_idx = np.asarray(cell_idx, dtype=np.int64)
    n = cell_idx.shape[0]
    if n == 0:
        return np.zeros(0)
    centers = (cell_idx + 0.5) * delta
    offs = np.array(
        [[sx, sy, sz] for sx in (-0.25, 0.25) for sy in (-0.25, 0.25)
         for sz in (-0.25, 0.25)]
    ) * delta
    pts = (centers[:, None, :] + offs[None, :, :]).reshape(-1, 3)
    out = np.empty(pts.shape[0])
    _trilinear_batch(field.values, field.box_l, field.h, pts, out)
    return out.reshape(n, 8).mean(axis=1)


def l1_distance(est: MarginalEstimate, field, box: CompactBox, chunk=1 << 18):
    """L1 distance between a k=1 estimate and a continuum field over a box.

    sum over cells intersecting the box of |f1_hat(D) - avg_D field| * delta^3,
    the field's cell average taken by the fixed 2^3 midpoint sub-sample.
    Cells without estimate entries contribute |avg| * delta^3.
    """
    if est.k != 1:
        raise ConfigError("l1_distance expects a k=1 estimate")
    delta = est.delta
    imin, imax = box.cell_range(delta)
    ny, nz = int(imax[1] - imin[1] + 1), int(imax[2] - imin[2] + 1)
    in_box = box.mask_keys(est.cells, delta)
    est_keys = est.cells[in_box]
    est_vals = est.values[in_box]

    total = 0.0
    # slab over x so memory stays bounded
    per_slab = max(1, int(np.ceil(chunk / (ny * nz))))
    x0 = imin[0]
    while x0 <= imax[0]:
        x1 = min(x0 + per_slab - 1, imax[0])
        xs = np.arange(x0, x1 + 1)
        gx, gy, gz = np.meshgrid(
            xs, np.arange(imin[1], imax[1] + 1),
            np.arange(imin[2], imax[2] + 1), indexing="ij",
        )
        idx = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        avg = field_cell_averages(field, idx, delta)
        keys = pack_cells(idx)
        pos = np.searchsorted(est_keys, keys)
        vals = np.zeros(keys.size)
        ok = (pos < est_keys.size)
        ok[ok] &= est_keys[pos[ok]] == keys[ok]
        vals[ok] = est_vals[pos[ok]]
        total += float(np.sum(np.abs(vals - avg))) * delta**3
        x0 = x1 + 1
    return total


def l1_between(est_a: MarginalEstimate, est_b: MarginalEstimate, box: CompactBox):
    """L1 distance between two k=1 estimates over cells in the box."""
    if est_a.k != 1 or est_b.k != 1:
        raise ConfigError("l1_between expects k=1 estimates")
    if abs(est_a.delta - est_b.delta) > 1e-15 * est_a.delta:
        raise ConfigError("estimates mix grids")
    delta = est_a.delta
    ka = est_a.cells[box.mask_keys(est_a.cells, delta)]
    va = est_a.values[box.mask_keys(est_a.cells, delta)]
    kb = est_b.cells[box.mask_keys(est_b.cells, delta)]
    vb = est_b.values[box.mask_keys(est_b.cells, delta)]
    union = np.union1d(ka, kb)
    a = np.zeros(union.size)
    b = np.zeros(union.size)
    a[np.searchsorted(union, ka)] = va
    b[np.searchsorted(union, kb)] = vb
    return float(np.sum(np.abs(a - b))) * delta**3


def chaos_defect(est2: MarginalEstimate, est1: MarginalEstimate, box: CompactBox):
    """L1 factorization defect over distinct cell pairs in the box:

    sum_{D1 != D2 in box} |f2_hat(D1,D2) - f1_hat(D1) f1_hat(D2)| delta^6.

    The sum is evaluated exactly via the empirical pair support plus the
    closed form for the pure product part outside it.
    """
    if est2.k != 2 or est1.k != 1:
        raise ConfigError("chaos_defect expects (k=2, k=1) estimates")
    if abs(est2.delta - est1.delta) > 1e-15 * est1.delta:
        raise ConfigError("estimates mix grids")
    delta = est1.delta
    m1 = box.mask_keys(est1.cells, delta)
    b_keys = est1.cells[m1]
    b_vals = est1.values[m1]
    s1 = float(np.sum(b_vals)) * delta**3
    s2 = float(np.sum(b_vals**2)) * delta**6
    product_total = s1 * s1 - s2  # sum over distinct pairs of B1 B2 delta^6

    if est2.cells.shape[0]:
        in_box = box.mask_keys(est2.cells[:, 0], delta) & box.mask_keys(
            est2.cells[:, 1], delta
        )
        pk = est2.cells[in_box]
        pv = est2.values[in_box]
        pos1 = np.searchsorted(b_keys, pk[:, 0])
        pos2 = np.searchsorted(b_keys, pk[:, 1])
        b1 = np.zeros(pk.shape[0])
        b2 = np.zeros(pk.shape[0])
        ok1 = pos1 < b_keys.size
        ok1[ok1] &= b_keys[pos1[ok1]] == pk[ok1, 0]
        b1[ok1] = b_vals[pos1[ok1]]
        ok2 = pos2 < b_keys.size
        ok2[ok2] &= b_keys[pos2[ok2]] == pk[ok2, 1]
        b2[ok2] = b_vals[pos2[ok2]]
        prod = b1 * b2
        corr = float(np.sum(np.abs(pv - prod) - prod)) * delta**6
    else:
        corr = 0.0
    return product_total + corr


def fermi_entropy(values, alpha, volume_element):
    """- sum [f ln f + (1/alpha)(1 - alpha f) ln(1 - alpha f)] dv.

    Diagnostic only; terms with f = 0 or f = 1/alpha contribute zero.
    """
    f = np.asarray(values, dtype=np.float64).ravel()
    f = f[f > 0.0]
    s = -np.sum(f * np.log(f)) * volume_element
    g = 1.0 - alpha * f
    pos = g > 0.0
    s -= np.sum(g[pos] * np.log(g[pos])) / alpha * volume_element
    return float(s)
