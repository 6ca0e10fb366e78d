"""Velocity-space cell grid, occupation numbers and admissibility.

Cells are half-open cubes [k*delta, (k+1)*delta)^3 anchored at the
origin, so every velocity lies in exactly one cell.  A configuration is
admissible when no two particles share a cell (every occupation number
is 0 or 1).  The occupancy index is sparse: velocity space is unbounded
and an admissible state occupies exactly N cells.

Cell indices are packed into a single int64 (21 bits + sign per axis)
so the event-loop cores can use flat integer hash maps.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AdmissibilityError

# signed 21-bit range per axis; |index| < 2^20 velocities are far beyond
# anything the bounded-speed dynamics can reach
_PACK_BITS = 21
_PACK_OFF = 1 << (_PACK_BITS - 1)
_PACK_MASK = (1 << _PACK_BITS) - 1


@dataclass(frozen=True)
class CellGrid:
    """delta-cell partition carrying the mean-field constraint N delta^3 = alpha."""

    delta: float
    alpha: float
    n_particles: int

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if abs(self.n_particles * self.delta**3 - self.alpha) > 1e-12 * self.alpha:
            raise ValueError("grid requires n_particles * delta^3 == alpha")

    @classmethod
    def from_alpha(cls, n_particles, alpha):
        """Derive delta from the scaling N delta^3 = alpha."""
        delta = (alpha / n_particles) ** (1.0 / 3.0)
        # recompute alpha from the rounded delta so the invariant is exact
        return cls(delta=delta, alpha=n_particles * delta**3, n_particles=n_particles)


def cell_of(grid, v):
    """Integer cell index triple (floor(v/delta) per axis).

    v of shape (3,) returns a 3-tuple of ints; shape (n, 3) returns an
    (n, 3) int64 array.
    """
    v = np.asarray(v, dtype=np.float64)
    idx = np.floor(v / grid.delta).astype(np.int64)
    if idx.ndim == 1:
        return (int(idx[0]), int(idx[1]), int(idx[2]))
    return idx


def pack_cells(idx):
    """Pack (n, 3) int64 cell indices into (n,) int64 keys."""
    idx = np.asarray(idx, dtype=np.int64)
    if np.any(np.abs(idx) >= _PACK_OFF):
        raise OverflowError("cell index outside packable range")
    shifted = idx + _PACK_OFF
    return (
        (shifted[..., 0] << (2 * _PACK_BITS))
        | (shifted[..., 1] << _PACK_BITS)
        | shifted[..., 2]
    )


def unpack_cells(keys):
    """Inverse of pack_cells; returns (n, 3) int64 indices."""
    keys = np.asarray(keys, dtype=np.int64)
    iz = (keys & _PACK_MASK) - _PACK_OFF
    iy = ((keys >> _PACK_BITS) & _PACK_MASK) - _PACK_OFF
    ix = ((keys >> (2 * _PACK_BITS)) & _PACK_MASK) - _PACK_OFF
    return np.stack([ix, iy, iz], axis=-1)


def cell_keys(grid, velocities):
    """Packed int64 cell keys for an (n, 3) velocity array."""
    velocities = np.asarray(velocities, dtype=np.float64)
    return pack_cells(np.floor(velocities / grid.delta).astype(np.int64))


def is_admissible(grid, velocities):
    """True iff all particles occupy pairwise distinct cells."""
    velocities = np.asarray(velocities, dtype=np.float64).reshape(-1, 3)
    if velocities.shape[0] == 0:
        return True
    keys = cell_keys(grid, velocities)
    return np.unique(keys).size == keys.size


def build_occupancy(grid, velocities):
    """Map cell index triple -> particle id for an admissible configuration.

    Raises AdmissibilityError when two particles share a cell.
    """
    velocities = np.asarray(velocities, dtype=np.float64).reshape(-1, 3)
    occ = {}
    for i in range(velocities.shape[0]):
        c = cell_of(grid, velocities[i])
        if c in occ:
            raise AdmissibilityError(
                f"particles {occ[c]} and {i} share cell {c}"
            )
        occ[c] = i
    return occ


def occupation_numbers(grid, velocities):
    """Sparse map cell -> count, without the admissibility requirement."""
    velocities = np.asarray(velocities, dtype=np.float64).reshape(-1, 3)
    counts = {}
    for i in range(velocities.shape[0]):
        c = cell_of(grid, velocities[i])
        counts[c] = counts.get(c, 0) + 1
    return counts
