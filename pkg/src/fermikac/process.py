"""Continuous-time Kac jump process with Pauli exclusion.

The generator acts on observables as

    (1/N) sum_{i<j} int domega B(v_i - v_j; omega)
          xbar(v_i', v_j') (1 - N_{cell(v_i')}) (1 - N_{cell(v_j')})
          [phi(V') - phi(V)]

where the occupation numbers are taken in the *current* configuration,
so a candidate landing in either departure cell is blocked (in
particular the two trivial same-cell transitions never fire).

Simulation uses a null-collision (majorant) scheme: proposals arrive at
the constant rate Lambda = 2 pi (N-1) C1, each picks a uniform unordered
pair, a uniform scattering vector and a thinning uniform u; u >= B/C1 is
a null event, otherwise the elastic candidate is applied iff the two
target cells are distinct and unoccupied.  Thinning a bounded-intensity
jump process at its majorant rate reproduces the exact law of the
process; boundedness of the cross-section is what makes the majorant
exist.

The event loop consumes pre-drawn random blocks from a numpy Generator,
so runs are reproducible bit-for-bit for a fixed seed.  Smooth-ramp
kernels run in a compiled loop; custom kernels fall back to a python
loop that consumes the identical stream.
"""

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
from numba import njit

from .errors import AdmissibilityError, ConfigError
from .grid import (
    _PACK_BITS,
    _PACK_OFF,
    CellGrid,
    build_occupancy,
    cell_keys,
    is_admissible,
    pack_cells,
)
from .kernel import CrossSectionSpec, collide, eval_kernel, sample_omega
from .uu import sphere_quadrature

_EMPTY = np.int64(-1)
_MIX = np.int64(np.uint64(0x9E3779B97F4A7C15))


# ---------------------------------------------------------------------------
# open-addressing occupancy table (int64 packed cell -> particle id);
# linear probing with backshift deletion, so probe chains always
# terminate at an empty slot and no tombstones accumulate


@njit(cache=True)
def _tbl_lookup(keys, vals, key):
    cap = keys.shape[0]
    h = (key * _MIX) & (cap - 1)
    while True:
        k = keys[h]
        if k == key:
            return vals[h]
        if k == _EMPTY:
            return np.int64(-1)
        h = (h + 1) & (cap - 1)


@njit(cache=True)
def _tbl_insert(keys, vals, key, val):
    cap = keys.shape[0]
    h = (key * _MIX) & (cap - 1)
    while True:
        k = keys[h]
        if k == _EMPTY or k == key:
            keys[h] = key
            vals[h] = val
            return
        h = (h + 1) & (cap - 1)


@njit(cache=True)
def _tbl_delete(keys, vals, key):
    cap = keys.shape[0]
    mask = cap - 1
    i = (key * _MIX) & mask
    while True:
        k = keys[i]
        if k == key:
            break
        if k == _EMPTY:
            return
        i = (i + 1) & mask
    # backshift: pull later entries of the probe chain into the gap
    j = i
    while True:
        keys[i] = _EMPTY
        vals[i] = -1
        while True:
            j = (j + 1) & mask
            if keys[j] == _EMPTY:
                return
            home = (keys[j] * _MIX) & mask
            if ((j - home) & mask) >= ((j - i) & mask):
                break
        keys[i] = keys[j]
        vals[i] = vals[j]
        i = j


@njit(cache=True)
def _tbl_build(cell_key_arr, cap):
    keys = np.full(cap, _EMPTY, dtype=np.int64)
    vals = np.full(cap, -1, dtype=np.int64)
    for i in range(cell_key_arr.shape[0]):
        _tbl_insert(keys, vals, cell_key_arr[i], i)
    return keys, vals


def _capacity_for(n):
    cap = 1
    while cap < 4 * max(n, 2):
        cap *= 2
    return cap


# ---------------------------------------------------------------------------
# configuration and ensemble


def majorant_rate(n, c1):
    """Upper bound on the total jump intensity of (1/N) L_N:

    (1/N) * (N(N-1)/2) * 4 pi * C1 = 2 pi (N-1) C1.
    """
    if n < 2:
        raise ConfigError("need at least two particles")
    if c1 < 0:
        raise ConfigError("kernel bound must be >= 0")
    return 2.0 * np.pi * (n - 1) * c1


@dataclass
class SimConfig:
    n_particles: int
    alpha: float
    t_final: float
    seed: int
    snapshot_times: list = dc_field(default_factory=list)
    kernel: CrossSectionSpec = dc_field(default_factory=CrossSectionSpec)

    def __post_init__(self):
        if self.n_particles < 2:
            raise ConfigError("sim.n_particles must be >= 2")
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError("sim.alpha must lie in (0, 1)")
        if self.t_final < 0:
            raise ConfigError("sim.t_final must be >= 0")
        if any(t < -1e-12 or t > self.t_final + 1e-12 for t in self.snapshot_times):
            raise ConfigError("snapshot_times must lie in [0, t_final]")

    @property
    def grid(self):
        return CellGrid.from_alpha(self.n_particles, self.alpha)


@dataclass(frozen=True)
class EventOutcome:
    kind: str  # "null_kernel" | "exclusion_blocked" | "accepted"
    i: Optional[int] = None
    j: Optional[int] = None
    omega: Optional[np.ndarray] = None


NULL_KERNEL = "null_kernel"
EXCLUSION_BLOCKED = "exclusion_blocked"
ACCEPTED = "accepted"


class ParticleEnsemble:
    """One sample of the N-particle state, with a sparse occupancy index.

    Mutated only through accepted collision events, so the configuration
    stays admissible and total momentum/energy stay constant up to
    floating-point accumulation.
    """

    def __init__(self, velocities, grid: CellGrid, kernel: CrossSectionSpec = None,
                 time=0.0):
        self.velocities = np.ascontiguousarray(velocities, dtype=np.float64)
        if self.velocities.shape != (grid.n_particles, 3):
            raise ConfigError("velocities must have shape (n_particles, 3)")
        self.grid = grid
        self.kernel = kernel if kernel is not None else CrossSectionSpec()
        self.time = float(time)
        self.counters = {
            "proposed": 0,
            "kernel_rejected": 0,
            "exclusion_blocked": 0,
            "accepted": 0,
        }
        self._pcell = cell_keys(grid, self.velocities)
        if np.unique(self._pcell).size != grid.n_particles:
            raise AdmissibilityError("initial configuration is not admissible")
        cap = _capacity_for(grid.n_particles)
        self._tbl_keys, self._tbl_vals = _tbl_build(self._pcell, cap)

    @property
    def n_particles(self):
        return self.grid.n_particles

    @property
    def occupancy(self):
        """Cell index triple -> particle id (fresh dict)."""
        return build_occupancy(self.grid, self.velocities)

    def is_admissible(self):
        return is_admissible(self.grid, self.velocities)

    def momentum(self):
        return self.velocities.sum(axis=0)

    def energy(self):
        return float(np.sum(self.velocities * self.velocities))

    def _counter_array(self):
        c = self.counters
        return np.array(
            [c["proposed"], c["kernel_rejected"], c["exclusion_blocked"],
             c["accepted"]],
            dtype=np.int64,
        )

    def _set_counters(self, arr):
        self.counters = {
            "proposed": int(arr[0]),
            "kernel_rejected": int(arr[1]),
            "exclusion_blocked": int(arr[2]),
            "accepted": int(arr[3]),
        }


# ---------------------------------------------------------------------------
# single proposal (python reference path)


def attempt_event(ens: ParticleEnsemble, rng):
    """Draw one majorant proposal and apply it; returns an EventOutcome.

    Draw order (pair indices, omega, thinning uniform) matches the
    compiled event loop.
    """
    n = ens.n_particles
    i = int(rng.integers(0, n))
    j = int(rng.integers(0, n - 1))
    if j >= i:
        j += 1
    omega = sample_omega(rng)
    u = float(rng.random())
    return _apply_proposal(ens, i, j, omega, u)


def _apply_proposal(ens, i, j, omega, u):
    ens.counters["proposed"] += 1
    v_i, v_j = ens.velocities[i], ens.velocities[j]
    b = float(eval_kernel(ens.kernel, v_i - v_j, omega))
    if ens.kernel.b0 == 0.0 or u >= b / ens.kernel.b0:
        ens.counters["kernel_rejected"] += 1
        return EventOutcome(NULL_KERNEL)
    vpi, vpj = collide(v_i, v_j, omega)
    ci = pack_cells(np.floor(vpi / ens.grid.delta).astype(np.int64)[None, :])[0]
    cj = pack_cells(np.floor(vpj / ens.grid.delta).astype(np.int64)[None, :])[0]
    if ci == cj or _tbl_lookup(ens._tbl_keys, ens._tbl_vals, ci) >= 0 \
            or _tbl_lookup(ens._tbl_keys, ens._tbl_vals, cj) >= 0:
        ens.counters["exclusion_blocked"] += 1
        return EventOutcome(EXCLUSION_BLOCKED)
    _tbl_delete(ens._tbl_keys, ens._tbl_vals, ens._pcell[i])
    _tbl_delete(ens._tbl_keys, ens._tbl_vals, ens._pcell[j])
    _tbl_insert(ens._tbl_keys, ens._tbl_vals, ci, i)
    _tbl_insert(ens._tbl_keys, ens._tbl_vals, cj, j)
    ens.velocities[i] = vpi
    ens.velocities[j] = vpj
    ens._pcell[i] = ci
    ens._pcell[j] = cj
    ens.counters["accepted"] += 1
    return EventOutcome(ACCEPTED, i=i, j=j, omega=omega)


# ---------------------------------------------------------------------------
# compiled event loop (smooth-ramp kernels)


@njit(cache=True)
def _advance_core(vel, pcell, tbl_keys, tbl_vals, counters,
                  t_now, t_target, lam, inv_delta, pack_off, pack_bits,
                  m_cut, exp_blk, i_blk, j_blk, om_blk, u_blk):
    """Consume proposals from one random block; returns (t, done)."""
    n_blk = exp_blk.shape[0]
    done = False
    for k in range(n_blk):
        dt = exp_blk[k] / lam
        if t_now + dt > t_target:
            t_now = t_target
            done = True
            break
        t_now += dt
        counters[0] += 1
        i = i_blk[k]
        j = j_blk[k]
        if j >= i:
            j += 1
        wx = om_blk[k, 0]
        wy = om_blk[k, 1]
        wz = om_blk[k, 2]
        wn = np.sqrt(wx * wx + wy * wy + wz * wz)
        if wn < 1e-300:
            counters[1] += 1
            continue
        wx /= wn
        wy /= wn
        wz /= wn
        rx = vel[i, 0] - vel[j, 0]
        ry = vel[i, 1] - vel[j, 1]
        rz = vel[i, 2] - vel[j, 2]
        speed = np.sqrt(rx * rx + ry * ry + rz * rz)
        bratio = 1.0 - speed / m_cut
        if bratio <= 0.0 or u_blk[k] >= bratio:
            counters[1] += 1
            continue
        proj = rx * wx + ry * wy + rz * wz
        vix = vel[i, 0] - wx * proj
        viy = vel[i, 1] - wy * proj
        viz = vel[i, 2] - wz * proj
        vjx = vel[j, 0] + wx * proj
        vjy = vel[j, 1] + wy * proj
        vjz = vel[j, 2] + wz * proj
        ci = (
            ((np.int64(np.floor(vix * inv_delta)) + pack_off) << (2 * pack_bits))
            | ((np.int64(np.floor(viy * inv_delta)) + pack_off) << pack_bits)
            | (np.int64(np.floor(viz * inv_delta)) + pack_off)
        )
        cj = (
            ((np.int64(np.floor(vjx * inv_delta)) + pack_off) << (2 * pack_bits))
            | ((np.int64(np.floor(vjy * inv_delta)) + pack_off) << pack_bits)
            | (np.int64(np.floor(vjz * inv_delta)) + pack_off)
        )
        if ci == cj:
            counters[2] += 1
            continue
        if _tbl_lookup(tbl_keys, tbl_vals, ci) >= 0:
            counters[2] += 1
            continue
        if _tbl_lookup(tbl_keys, tbl_vals, cj) >= 0:
            counters[2] += 1
            continue
        _tbl_delete(tbl_keys, tbl_vals, pcell[i])
        _tbl_delete(tbl_keys, tbl_vals, pcell[j])
        _tbl_insert(tbl_keys, tbl_vals, ci, i)
        _tbl_insert(tbl_keys, tbl_vals, cj, j)
        vel[i, 0] = vix
        vel[i, 1] = viy
        vel[i, 2] = viz
        vel[j, 0] = vjx
        vel[j, 1] = vjy
        vel[j, 2] = vjz
        pcell[i] = ci
        pcell[j] = cj
        counters[3] += 1
    return t_now, done


_BLOCK = 1 << 16


def _block_size(lam, horizon):
    """Draw blocks sized to the expected proposal count (plus slack)."""
    expect = lam * max(horizon, 0.0)
    return int(min(_BLOCK, max(64, expect * 1.25 + 8.0 * np.sqrt(expect) + 64)))


def _draw_block(rng, n, size):
    return (
        rng.standard_exponential(size),
        rng.integers(0, n, size=size).astype(np.int64),
        rng.integers(0, n - 1, size=size).astype(np.int64),
        rng.standard_normal((size, 3)),
        rng.random(size),
    )


def advance(ens: ParticleEnsemble, t_target, rng):
    """Advance the ensemble to t_target under the null-collision scheme."""
    kernel = ens.kernel
    if t_target < ens.time - 1e-15:
        raise ConfigError("t_target must be >= current ensemble time")
    if t_target <= ens.time or kernel.b0 == 0.0:
        ens.time = max(ens.time, float(t_target))
        return ens

    n = ens.n_particles
    lam = majorant_rate(n, kernel.b0)

    if kernel.omega_independent:
        counters = ens._counter_array()
        t_now = ens.time
        while True:
            blk = _block_size(lam, t_target - t_now)
            exp_b, i_b, j_b, om_b, u_b = _draw_block(rng, n, blk)
            t_now, done = _advance_core(
                ens.velocities, ens._pcell, ens._tbl_keys, ens._tbl_vals,
                counters, t_now, t_target, lam,
                1.0 / ens.grid.delta, np.int64(_PACK_OFF), np.int64(_PACK_BITS),
                kernel.m_cut, exp_b, i_b, j_b, om_b, u_b,
            )
            if done:
                break
        ens.time = t_now
        ens._set_counters(counters)
        return ens

    # custom kernels: python loop consuming the same stream layout
    t_now = ens.time
    while True:
        blk = _block_size(lam, t_target - t_now)
        exp_b, i_b, j_b, om_b, u_b = _draw_block(rng, n, blk)
        for k in range(blk):
            dt = exp_b[k] / lam
            if t_now + dt > t_target:
                ens.time = float(t_target)
                return ens
            t_now += dt
            i = int(i_b[k])
            j = int(j_b[k])
            if j >= i:
                j += 1
            om = om_b[k]
            # scalar accumulation matches the compiled core bit-for-bit
            norm = float(np.sqrt(om[0] * om[0] + om[1] * om[1] + om[2] * om[2]))
            if norm < 1e-300:
                ens.counters["proposed"] += 1
                ens.counters["kernel_rejected"] += 1
                continue
            _apply_proposal(ens, i, j, om / norm, float(u_b[k]))
        ens.time = t_now


# ---------------------------------------------------------------------------
# k = N = 2 generator quadrature (drift oracle)


def generator_apply_k2(phi, v1, v2, grid: CellGrid, kernel: CrossSectionSpec,
                       n_omega):
    """(1/N) L_N^G phi at N = k = 2 by spherical quadrature.

    phi maps (v1, v2) -> real.  Exclusion factors use the occupation
    numbers of the current pair: a candidate contributes only when its
    target cells are distinct and differ from both departure cells.
    """
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if not is_admissible(grid, np.stack([v1, v2])):
        raise AdmissibilityError("input pair shares a cell")
    quad = sphere_quadrature(n_omega)
    nodes, weights = quad.nodes, quad.weights
    c1 = pack_cells(np.floor(v1[None, :] / grid.delta).astype(np.int64))[0]
    c2 = pack_cells(np.floor(v2[None, :] / grid.delta).astype(np.int64))[0]
    base = float(np.asarray(phi(v1[None, :], v2[None, :])).ravel()[0])
    b = np.asarray(eval_kernel(kernel, np.broadcast_to(v1 - v2, nodes.shape),
                               nodes), dtype=np.float64)
    vp1, vp2 = collide(v1[None, :], v2[None, :], nodes)
    cp1 = pack_cells(np.floor(vp1 / grid.delta).astype(np.int64))
    cp2 = pack_cells(np.floor(vp2 / grid.delta).astype(np.int64))
    open_ch = (cp1 != cp2) & (cp1 != c1) & (cp1 != c2) & (cp2 != c1) & (cp2 != c2)
    vals = np.asarray(phi(vp1, vp2), dtype=np.float64) - base
    return 0.5 * float(np.sum(weights * b * open_ch * vals))


def drift_estimate_n2(v1, v2, phi_list, grid: CellGrid, kernel: CrossSectionSpec,
                      t_horizon, n_replicas, rng):
    """Monte Carlo estimate of d/dt E[phi(V(t))] at t = 0 for a fixed pair.

    Runs n_replicas independent copies of the two-particle process to
    t_horizon and returns, per observable, arrays (estimate, stderr) of
    (E[phi(V_t)] - phi(V_0)) / t_horizon.  Observables must accept
    batched inputs of shape (m, 3).
    """
    if not kernel.omega_independent:
        raise ConfigError("drift estimator supports smooth-ramp kernels only")
    lam = majorant_rate(2, kernel.b0)
    v0 = np.stack([np.asarray(v1, float), np.asarray(v2, float)])
    sums = np.zeros(len(phi_list))
    sqs = np.zeros(len(phi_list))
    base = np.array(
        [float(np.asarray(phi(v0[None, 0], v0[None, 1])).ravel()[0])
         for phi in phi_list]
    )

    chunk = 1 << 16
    done = 0
    while done < n_replicas:
        m = min(chunk, n_replicas - done)
        vends = _n2_batch(v0, lam, grid.delta, kernel.m_cut, m, rng, t_horizon)
        for p, phi in enumerate(phi_list):
            vals = (np.asarray(phi(vends[:, 0, :], vends[:, 1, :])) - base[p]) \
                / t_horizon
            sums[p] += vals.sum()
            sqs[p] += (vals * vals).sum()
        done += m
    mean = sums / n_replicas
    var = np.maximum(sqs / n_replicas - mean**2, 0.0)
    se = np.sqrt(var / n_replicas)
    return mean, se


def _n2_batch(v0, lam, delta, m_cut, n_rep, rng, t_h):
    # expected proposals per replica is lam * t_h; draw with headroom
    budget = max(
        64, int(n_rep * (lam * t_h * 1.5 + 1.0)) + 32 * int(np.sqrt(n_rep) + 64)
    )
    out = np.empty((n_rep, 2, 3))
    while True:
        exp_b = rng.standard_exponential(budget)
        om_b = rng.standard_normal((budget, 3))
        u_b = rng.random(budget)
        ok = _n2_core(v0, lam, delta, m_cut, t_h, exp_b, om_b, u_b, out)
        if ok:
            return out
        budget *= 2


@njit(cache=True)
def _n2_core(v0, lam, delta, m_cut, t_h, exp_b, om_b, u_b, out):
    n_rep = out.shape[0]
    cursor = 0
    n_draw = exp_b.shape[0]
    inv_delta = 1.0 / delta
    for r in range(n_rep):
        ax, ay, az = v0[0, 0], v0[0, 1], v0[0, 2]
        bx, by, bz = v0[1, 0], v0[1, 1], v0[1, 2]
        t = 0.0
        while True:
            if cursor >= n_draw:
                return False
            dt = exp_b[cursor] / lam
            if t + dt > t_h:
                cursor += 1
                break
            t += dt
            wx = om_b[cursor, 0]
            wy = om_b[cursor, 1]
            wz = om_b[cursor, 2]
            u = u_b[cursor]
            cursor += 1
            wn = np.sqrt(wx * wx + wy * wy + wz * wz)
            if wn < 1e-300:
                continue
            wx /= wn
            wy /= wn
            wz /= wn
            rx = ax - bx
            ry = ay - by
            rz = az - bz
            speed = np.sqrt(rx * rx + ry * ry + rz * rz)
            bratio = 1.0 - speed / m_cut
            if bratio <= 0.0 or u >= bratio:
                continue
            proj = rx * wx + ry * wy + rz * wz
            nax = ax - wx * proj
            nay = ay - wy * proj
            naz = az - wz * proj
            nbx = bx + wx * proj
            nby = by + wy * proj
            nbz = bz + wz * proj
            ca = (
                (np.int64(np.floor(nax * inv_delta)) + _PACK_OFF) << (2 * _PACK_BITS)
            ) | (
                (np.int64(np.floor(nay * inv_delta)) + _PACK_OFF) << _PACK_BITS
            ) | (np.int64(np.floor(naz * inv_delta)) + _PACK_OFF)
            cb = (
                (np.int64(np.floor(nbx * inv_delta)) + _PACK_OFF) << (2 * _PACK_BITS)
            ) | (
                (np.int64(np.floor(nby * inv_delta)) + _PACK_OFF) << _PACK_BITS
            ) | (np.int64(np.floor(nbz * inv_delta)) + _PACK_OFF)
            if ca == cb:
                continue
            oa = (
                (np.int64(np.floor(ax * inv_delta)) + _PACK_OFF) << (2 * _PACK_BITS)
            ) | (
                (np.int64(np.floor(ay * inv_delta)) + _PACK_OFF) << _PACK_BITS
            ) | (np.int64(np.floor(az * inv_delta)) + _PACK_OFF)
            ob = (
                (np.int64(np.floor(bx * inv_delta)) + _PACK_OFF) << (2 * _PACK_BITS)
            ) | (
                (np.int64(np.floor(by * inv_delta)) + _PACK_OFF) << _PACK_BITS
            ) | (np.int64(np.floor(bz * inv_delta)) + _PACK_OFF)
            if ca == oa or ca == ob or cb == oa or cb == ob:
                continue
            ax, ay, az = nax, nay, naz
            bx, by, bz = nbx, nby, nbz
        out[r, 0, 0] = ax
        out[r, 0, 1] = ay
        out[r, 0, 2] = az
        out[r, 1, 0] = bx
        out[r, 1, 1] = by
        out[r, 1, 2] = bz
    return True
