"""Experiment orchestration, flat-text configuration and the CLI.

Config format: one `key = value` per line, dotted namespaces, `#`
comments.  Values parse as bool/int/float, comma lists of numbers, or
strings; serialization round-trips exactly.

Experiments
  relax           single-N run: marginal snapshots, conservation and
                  exclusion diagnostics, acceptance ratios, entropy
  converge        N-sweep of the L1 distance between the empirical
                  one-particle marginal and the deterministic U-U
                  solution (bootstrap error bars, monotonicity verdict)
  chaos           N-sweep of the two-particle factorization defect for
                  two-scale initial data
  hierarchy-check hierarchy-operator identities on random fields
  uu-solve        deterministic solver run with field snapshots

Exit codes: 0 success, 2 config error, 3 numerical error, 4 acceptance
failure in --check mode.
"""

import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FermikacError, NumericalError
from .grid import unpack_cells
from .hierarchy import (
    ProductGridFunction,
    apply_C1,
    check_C3_nullity,
    factorization_consistency,
)
from .initdata import (
    profile_by_name,
    sample_conditioned_product,
    sample_two_scale,
    solve_a,
)
from .kernel import CrossSectionSpec
from .observables import (
    CompactBox,
    MarginalEstimate,
    chaos_defect,
    estimate_k1_from_keys,
    estimate_k2_from_keys,
    fermi_entropy,
    field_cell_averages,
    l1_between,
    l1_distance,
)
from .process import SimConfig, advance
from .seeding import replica_rng
from .uu import (
    DensityField,
    collision_operator,
    fermi_dirac,
    field_from_function,
    solve,
    sphere_quadrature,
)

EXPERIMENTS = ("relax", "converge", "chaos", "hierarchy-check", "uu-solve")

DEFAULTS = {
    "experiment": "relax",
    "sim.n_particles": 2000,
    "sim.alpha": 0.2,
    "sim.t_final": 1.0,
    "sim.seed": 12345,
    "sim.snapshot_times": [0.0, 1.0],
    "kernel.b0": 1.0,
    "kernel.m_cut": 1.0,
    "kernel.form": "smooth_ramp",
    "init.family": "conditioned_product",
    "init.profile": "maxwellian",
    "init.burn_in": -1,  # -1 -> 10 N proposals
    "init.sigma": 0.6,
    "init.cutoff": 1.8,
    "init.separation": 2.0,
    "init.lower": [0.0, 0.0, 0.0],
    "init.upper": [1.0, 1.0, 1.0],
    "uu.grid_n": 19,
    "uu.grid_l": 2.85,
    "uu.n_omega": 32,
    "uu.dt": 2e-3,
    "uu.conserve": True,
    "uu.beta": 1.0,
    "uu.init": "profile",  # "profile" | "fermi_dirac"
    "replicas": 16,
    "box.half_width": 1.2,
    "chaos.half_width": 0.2,
    "converge.resolution": 0.15,
    "n_sweep": [2000, 8000, 32000],
    "bootstrap": 64,
    "out_dir": "out",
}


# ---------------------------------------------------------------------------
# config text format


def _parse_value(raw):
    raw = raw.strip()
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    if "," in raw:
        return [_parse_scalar(p) for p in raw.split(",") if p.strip()]
    return _parse_scalar(raw)


def _parse_scalar(raw):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text):
    """Parse flat key=value text into a dict (later keys win)."""
    out = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value")
        key, raw = line.split("=", 1)
        out[key.strip()] = _parse_value(raw)
    return out


def serialize_config(cfg):
    return "\n".join(f"{k} = {_format_value(cfg[k])}" for k in sorted(cfg)) + "\n"


def load_config(path=None, overrides=None):
    cfg = dict(DEFAULTS)
    if path is not None:
        cfg.update(parse_config(Path(path).read_text()))
    if overrides:
        cfg.update(overrides)
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    return cfg


# ---------------------------------------------------------------------------
# pieces assembled from a config dict


def kernel_from(cfg):
    return CrossSectionSpec(
        b0=float(cfg["kernel.b0"]),
        m_cut=float(cfg["kernel.m_cut"]),
        form=str(cfg["kernel.form"]),
    )


def profile_from(cfg):
    name = cfg["init.profile"]
    if name == "maxwellian":
        return profile_by_name(
            name, sigma=float(cfg["init.sigma"]), cutoff=float(cfg["init.cutoff"])
        )
    if name == "double_bump":
        return profile_by_name(
            name,
            sigma=float(cfg["init.sigma"]),
            cutoff=float(cfg["init.cutoff"]),
            separation=float(cfg["init.separation"]),
        )
    if name == "uniform":
        return profile_by_name(
            name, lower=tuple(cfg["init.lower"]), upper=tuple(cfg["init.upper"])
        )
    raise ConfigError(f"unknown init.profile {name!r}")


def sim_config(cfg, n_particles=None, seed=None):
    times = cfg["sim.snapshot_times"]
    if not isinstance(times, list):
        times = [times]
    return SimConfig(
        n_particles=int(n_particles or cfg["sim.n_particles"]),
        alpha=float(cfg["sim.alpha"]),
        t_final=float(cfg["sim.t_final"]),
        seed=int(seed if seed is not None else cfg["sim.seed"]),
        snapshot_times=[float(t) for t in times],
        kernel=kernel_from(cfg),
    )


def sample_initial(cfg, scfg, rng, profile):
    family = cfg["init.family"]
    if family == "conditioned_product":
        burn = int(cfg["init.burn_in"])
        return sample_conditioned_product(
            profile, scfg, rng, burn_in=None if burn < 0 else burn
        )
    if family == "two_scale":
        return sample_two_scale(profile, scfg, rng)
    raise ConfigError(f"unknown init.family {family!r}")


def analysis_box(cfg):
    return CompactBox.cube(float(cfg["box.half_width"]))


def chaos_box(cfg):
    return CompactBox.cube(float(cfg["chaos.half_width"]))


@dataclass
class RunSummary:
    experiment: str
    metrics: dict
    config: dict

    def to_json(self):
        def clean(x):
            if isinstance(x, dict):
                return {str(k): clean(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            if isinstance(x, (np.integer,)):
                return int(x)
            if isinstance(x, (np.floating,)):
                return float(x)
            if isinstance(x, np.ndarray):
                return [clean(v) for v in x.tolist()]
            return x

        for k, v in self.metrics.items():
            if isinstance(v, float) and not np.isfinite(v):
                raise NumericalError(f"non-finite metric {k}")
        return json.dumps(
            {
                "experiment": self.experiment,
                "metrics": clean(self.metrics),
                "config": clean(self.config),
            },
            indent=2,
            sort_keys=True,
        )


# ---------------------------------------------------------------------------
# output files


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_csv(path, header, columns, fmts):
    path.parent.mkdir(parents=True, exist_ok=True)
    arrs = [np.asarray(c) for c in columns]
    n = arrs[0].shape[0] if arrs else 0
    with open(path, "w") as fh:
        fh.write(header + "\n")
        if n:
            body = np.empty(n, dtype=object)
            parts = [
                np.char.mod(fmt, a.astype(np.float64 if "g" in fmt else np.int64))
                for fmt, a in zip(fmts, arrs)
            ]
            body = parts[0]
            for p in parts[1:]:
                body = np.char.add(np.char.add(body, ","), p)
            fh.write("\n".join(body.tolist()) + "\n")


def write_marginal_k1(path, est: MarginalEstimate, t):
    idx = unpack_cells(est.cells)
    _write_csv(
        path, "t,ix,iy,iz,f1_hat",
        [np.full(est.cells.size, t), idx[:, 0], idx[:, 1], idx[:, 2],
         est.values],
        ["%g", "%d", "%d", "%d", "%.17g"],
    )


def write_marginal_k2(path, est: MarginalEstimate, t):
    i1 = unpack_cells(est.cells[:, 0]) if est.cells.shape[0] else \
        np.empty((0, 3), np.int64)
    i2 = unpack_cells(est.cells[:, 1]) if est.cells.shape[0] else \
        np.empty((0, 3), np.int64)
    _write_csv(
        path, "t,ix1,iy1,iz1,ix2,iy2,iz2,f2_hat",
        [np.full(est.cells.shape[0], t), i1[:, 0], i1[:, 1], i1[:, 2],
         i2[:, 0], i2[:, 1], i2[:, 2], est.values],
        ["%g", "%d", "%d", "%d", "%d", "%d", "%d", "%.17g"],
    )


def write_uu_field(path, field: DensityField, t):
    pts = field.nodes()
    _write_csv(
        path, "vx,vy,vz,f",
        [pts[:, 0], pts[:, 1], pts[:, 2], field.values.ravel()],
        ["%.17g", "%.17g", "%.17g", "%.17g"],
    )


def write_events(path, rows):
    head = "t,replica,proposed,kernel_rejected,exclusion_blocked,accepted"
    body = [head] + [
        f"{t:g},{r},{c['proposed']},{c['kernel_rejected']},"
        f"{c['exclusion_blocked']},{c['accepted']}"
        for t, r, c in rows
    ]
    _write(path, "\n".join(body) + "\n")


# ---------------------------------------------------------------------------
# replica running and bootstrap machinery


def _coarse_keys(velocities, side, box):
    """Packed cell keys of velocities on a grid of the given side."""
    from .grid import pack_cells

    idx = np.floor(np.asarray(velocities) / side).astype(np.int64)
    keys = pack_cells(idx)
    if box is not None:
        keys = keys[box.mask_keys(keys, side)]
    return np.sort(keys)


def _run_replicas(cfg, scfg, profile, box, times, master, stream,
                  collect_pairs=False, pair_box=None, side=None,
                  collect_delta=False):
    """Run `replicas` independent ensembles; returns per-time key lists.

    keys[t_index][replica] holds sorted box-restricted cell keys at
    resolution `side` (the exclusion grid delta when side is None);
    delta-grid keys for the final time are returned separately when
    collect_delta is set.  pairs[t_index][replica] holds occupied-cell
    keys in pair_box when collect_pairs.  Event counter rows and
    conservation diagnostics come along.
    """
    n_rep = int(cfg["replicas"])
    keys = [[] for _ in times]
    pairs = [[] for _ in times] if collect_pairs else None
    dkeys = [] if collect_delta else None
    events = []
    cons = {"momentum": 0.0, "energy": 0.0, "violations": 0}
    for r in range(n_rep):
        rng = replica_rng(master, r, stream)
        ens = sample_initial(cfg, scfg, rng, profile)
        p0 = ens.momentum()
        e0 = ens.energy()
        for ti, t in enumerate(times):
            advance(ens, t, rng)
            if side is None:
                k = np.sort(ens._pcell[box.mask_keys(ens._pcell, ens.grid.delta)])
            else:
                k = _coarse_keys(ens.velocities, side, box)
            keys[ti].append(k)
            if collect_pairs:
                kp = np.sort(
                    ens._pcell[pair_box.mask_keys(ens._pcell, ens.grid.delta)]
                )
                pairs[ti].append(kp)
            if not ens.is_admissible():
                cons["violations"] += 1
        if collect_delta:
            dkeys.append(np.sort(ens._pcell.copy()))
        cons["momentum"] = max(
            cons["momentum"], float(np.max(np.abs(ens.momentum() - p0)))
        )
        cons["energy"] = max(cons["energy"], abs(ens.energy() - e0))
        events.append((times[-1], r, dict(ens.counters)))
    return keys, pairs, dkeys, events, cons


def _box_field_integral(field, box, delta):
    """sum over box cells of |cell average| * delta^3 (zero-estimate L1)."""
    empty = MarginalEstimate(
        k=1, delta=delta, n_particles=2, alpha=0.5, n_samples=1,
        cells=np.empty(0, dtype=np.int64), values=np.empty(0),
        counts=np.empty(0, dtype=np.int64),
    )
    return l1_distance(empty, field, box)


def _l1_with_bootstrap(key_lists, field, box, n_particles, delta, n_boot, rng):
    """Point estimate and bootstrap sigma of the marginal-field L1 distance.

    Works on per-replica rank arrays against the union support, so memory
    stays O(occupied cells) rather than O(replicas x cells).
    """
    r = len(key_lists)
    union = np.unique(np.concatenate(key_lists)) if key_lists else np.empty(
        0, np.int64
    )
    pos = [np.searchsorted(union, k).astype(np.int64) for k in key_lists]
    avg = field_cell_averages(field, unpack_cells(union), delta)
    t_box = _box_field_integral(field, box, delta)
    rest = t_box - float(np.sum(avg)) * delta**3

    def dist(indices):
        cat = (
            np.concatenate([pos[i] for i in indices])
            if indices else np.empty(0, np.int64)
        )
        cnt = np.bincount(cat, minlength=union.size).astype(np.float64)
        est = cnt / (len(indices) * n_particles * delta**3)
        return float(np.sum(np.abs(est - avg))) * delta**3 + rest

    point = dist(list(range(r)))
    boots = np.empty(n_boot)
    for b in range(n_boot):
        boots[b] = dist(list(rng.integers(0, r, size=r)))
    return point, float(np.std(boots))


def _chaos_with_bootstrap(pair_lists, box, n_particles, delta, alpha, n_boot,
                          rng):
    """Point estimate and bootstrap sigma of the factorization defect.

    Per-replica pair supports are rank-encoded against the global union
    once, so resamples reduce to bincounts plus the closed-form product
    part of the defect sum.
    """
    r = len(pair_lists)
    cell_union = np.unique(np.concatenate(pair_lists)) if pair_lists else \
        np.empty(0, np.int64)
    n_u = cell_union.size
    cell_pos = [np.searchsorted(cell_union, k).astype(np.int64)
                for k in pair_lists]
    enc_lists = []
    for ranks in cell_pos:
        if ranks.size >= 2:
            a = np.repeat(ranks, ranks.size)
            b = np.tile(ranks, ranks.size)
            mask = a != b
            enc_lists.append(a[mask] * np.int64(max(n_u, 1)) + b[mask])
        else:
            enc_lists.append(np.empty(0, np.int64))
    pair_union = np.unique(np.concatenate(enc_lists)) if enc_lists else \
        np.empty(0, np.int64)
    pair_pos = [np.searchsorted(pair_union, e).astype(np.int64)
                for e in enc_lists]
    p1 = (pair_union // max(n_u, 1)).astype(np.int64)
    p2 = (pair_union % max(n_u, 1)).astype(np.int64)

    def defect(indices):
        ccat = np.concatenate([cell_pos[i] for i in indices])
        bvals = np.bincount(ccat, minlength=n_u).astype(np.float64)
        bvals /= len(indices) * n_particles * delta**3
        pcat = (
            np.concatenate([pair_pos[i] for i in indices])
            if indices else np.empty(0, np.int64)
        )
        acnt = np.bincount(pcat, minlength=pair_union.size).astype(np.float64)
        avals = acnt / (len(indices) * n_particles * (n_particles - 1)
                        * delta**6)
        s1 = float(np.sum(bvals)) * delta**3
        s2 = float(np.sum(bvals**2)) * delta**6
        prod = bvals[p1] * bvals[p2]
        corr = float(np.sum(np.abs(avals - prod) - prod)) * delta**6
        return s1 * s1 - s2 + corr

    point = defect(list(range(r)))
    boots = np.empty(n_boot)
    for b in range(n_boot):
        boots[b] = defect(list(rng.integers(0, r, size=r)))
    return point, float(np.std(boots))


def decreasing_beyond_sigma(values, sigmas):
    """True iff each step down exceeds the combined 1-sigma intervals."""
    for a, b, sa, sb in zip(values, values[1:], sigmas, sigmas[1:]):
        if not (a - b > np.hypot(sa, sb)):
            return False
    return True


# ---------------------------------------------------------------------------
# experiments


def run_relax(cfg, out_dir):
    t0 = time.time()
    scfg = sim_config(cfg)
    profile = profile_from(cfg)
    box = analysis_box(cfg)
    times = sorted(set(scfg.snapshot_times) | {scfg.t_final})
    master = scfg.seed
    keys, _, _, events, cons = _run_replicas(
        cfg, scfg, profile, box, times, master, stream=0
    )
    grid = scfg.grid
    ests = [
        estimate_k1_from_keys(keys[ti], grid.n_particles, grid.delta, grid.alpha)
        for ti in range(len(times))
    ]
    for ti, t in enumerate(times):
        write_marginal_k1(out_dir / f"marginal_k1_t{t:g}.csv", ests[ti], t)
    write_events(out_dir / "events.csv", events)

    # stationarity diagnostics: half the replicas at t=0 against the other
    # half at t=T has the same statistical structure as the equal-time
    # split, so a physical drift shows up as cross - null
    drift = l1_between(ests[0], ests[-1], box)
    n_rep = len(keys[0])
    half = n_rep // 2
    g = grid
    boot_rng = np.random.default_rng(scfg.seed ^ 0xB0057)
    n_boot = int(cfg["bootstrap"])
    null_boots = np.empty(n_boot)
    cross_boots = np.empty(n_boot)
    for b in range(n_boot):
        pick = boot_rng.permutation(n_rep)
        ea0 = estimate_k1_from_keys(
            [keys[0][i] for i in pick[:half]], g.n_particles, g.delta, g.alpha
        )
        eb0 = estimate_k1_from_keys(
            [keys[0][i] for i in pick[half:]], g.n_particles, g.delta, g.alpha
        )
        ebT = estimate_k1_from_keys(
            [keys[-1][i] for i in pick[half:]], g.n_particles, g.delta, g.alpha
        )
        null_boots[b] = l1_between(ea0, eb0, box)
        cross_boots[b] = l1_between(ea0, ebT, box)
    null_split = float(np.mean(null_boots))
    cross_split = float(np.mean(cross_boots))

    total = sum(e[2]["proposed"] for e in events)
    acc = sum(e[2]["accepted"] for e in events)
    entropy = fermi_entropy(ests[-1].values, g.alpha, g.delta**3)
    metrics = {
        "exclusion_violations": cons["violations"],
        "momentum_drift": cons["momentum"],
        "energy_drift": cons["energy"],
        "acceptance_ratio": acc / max(1, total),
        "l1_drift_0_to_T": drift,
        "null_split_mean": null_split,
        "null_split_sigma": float(np.std(null_boots)),
        "cross_split_mean": cross_split,
        "cross_split_sigma": float(np.std(cross_boots)),
        "stationarity_excess": cross_split - null_split,
        "entropy_final": entropy,
        "wall_time": time.time() - t0,
    }
    # near-stationary init should drift no further than null resolution allows
    ok = cons["violations"] == 0 and cons["momentum"] <= 1e-9
    return RunSummary("relax", metrics, cfg), ok


def _uu_target(cfg, profile, family):
    """Deterministic solver target: f1_inf for sampler A, f_in for B."""
    alpha = float(cfg["sim.alpha"])
    n_v = int(cfg["uu.grid_n"])
    box_l = float(cfg["uu.grid_l"])
    if family == "conditioned_product":
        lm = solve_a(profile, alpha)
        f0 = field_from_function(lm, n_v, box_l, alpha)
    else:
        f0 = field_from_function(profile, n_v, box_l, alpha)
    quad = sphere_quadrature(int(cfg["uu.n_omega"]))
    kern = kernel_from(cfg)
    t_final = float(cfg["sim.t_final"])
    times = sorted(set(float(t) for t in cfg["sim.snapshot_times"]) | {t_final})
    snaps, diag = solve(
        f0, t_final, float(cfg["uu.dt"]), kern, quad,
        snapshot_times=times, conserve=bool(cfg["uu.conserve"]),
    )
    return {t: fld for t, fld in snaps}, diag


def run_converge(cfg, out_dir):
    t0 = time.time()
    sweep = [int(n) for n in cfg["n_sweep"]]
    if sweep != sorted(sweep):
        raise ConfigError("n_sweep must be ascending")
    profile = profile_from(cfg)
    family = cfg["init.family"]
    box = analysis_box(cfg)
    master = int(cfg["sim.seed"])
    n_boot = int(cfg["bootstrap"])
    t_final = float(cfg["sim.t_final"])
    times = sorted(set(float(t) for t in cfg["sim.snapshot_times"]) | {t_final})

    targets, _ = _uu_target(cfg, profile, family)

    side = float(cfg["converge.resolution"])
    table = []
    for ni, n in enumerate(sweep):
        scfg = sim_config(cfg, n_particles=n)
        grid = scfg.grid
        keys, _, dkeys, events, cons = _run_replicas(
            cfg, scfg, profile, box, times, master, stream=ni,
            side=side, collect_delta=True,
        )
        if cons["violations"]:
            raise NumericalError("admissibility violated during converge run")
        boot_rng = np.random.default_rng(master ^ (0xD15C << ni))
        for ti, t in enumerate(times):
            tgt = targets[min(targets, key=lambda tt: abs(tt - t))]
            d, sig = _l1_with_bootstrap(
                keys[ti], tgt, box, n, side, n_boot, boot_rng
            )
            table.append({"N": n, "t": t, "D": d, "sigma": sig})
        est = estimate_k1_from_keys(dkeys, n, grid.delta, grid.alpha)
        write_marginal_k1(out_dir / f"marginal_k1_t{t_final:g}_N{n}.csv",
                          est, t_final)
        write_events(out_dir / f"events_N{n}.csv", events)

    for t, fld in targets.items():
        write_uu_field(out_dir / f"uu_field_t{t:g}.csv", fld, t)

    verdicts = {}
    for t in times:
        rows = [row for row in table if row["t"] == t]
        verdicts[f"decreasing_t{t:g}"] = decreasing_beyond_sigma(
            [r["D"] for r in rows], [r["sigma"] for r in rows]
        )
    metrics = {
        "family": family,
        "resolution": side,
        "D_table": table,
        **verdicts,
        "wall_time": time.time() - t0,
    }
    ok = all(verdicts.values())
    return RunSummary("converge", metrics, cfg), ok


def run_chaos(cfg, out_dir):
    t0 = time.time()
    if cfg["init.family"] != "two_scale":
        raise ConfigError("chaos experiment requires init.family = two_scale")
    sweep = [int(n) for n in cfg["n_sweep"]]
    profile = profile_from(cfg)
    cbox = chaos_box(cfg)
    master = int(cfg["sim.seed"])
    n_boot = int(cfg["bootstrap"])
    t_final = float(cfg["sim.t_final"])
    times = sorted({0.0, t_final})

    table = []
    for ni, n in enumerate(sweep):
        scfg = sim_config(cfg, n_particles=n)
        grid = scfg.grid
        _, pairs, _, events, cons = _run_replicas(
            cfg, scfg, profile, cbox, times, master, stream=64 + ni,
            collect_pairs=True, pair_box=cbox,
        )
        if cons["violations"]:
            raise NumericalError("admissibility violated during chaos run")
        boot_rng = np.random.default_rng(master ^ (0xCAFE << ni))
        for ti, t in enumerate(times):
            d, sig = _chaos_with_bootstrap(
                pairs[ti], cbox, n, grid.delta, grid.alpha, n_boot, boot_rng
            )
            table.append({"N": n, "t": t, "defect": d, "sigma": sig})
        est2 = estimate_k2_from_keys(pairs[-1], n, grid.delta, grid.alpha)
        write_marginal_k2(out_dir / f"marginal_k2_t{t_final:g}_N{n}.csv",
                          est2, t_final)

    verdicts = {}
    for t in times:
        rows = [row for row in table if row["t"] == t]
        verdicts[f"decreasing_t{t:g}"] = decreasing_beyond_sigma(
            [r["defect"] for r in rows], [r["sigma"] for r in rows]
        )
    metrics = {
        "defect_table": table,
        **verdicts,
        "wall_time": time.time() - t0,
    }
    ok = all(verdicts.values())
    return RunSummary("chaos", metrics, cfg), ok


def _random_field(n_v, box_l, alpha, rng):
    """Smooth random positive field: a few gaussian bumps, normalized."""
    n_bumps = 3
    centers = rng.uniform(-0.4 * box_l, 0.4 * box_l, size=(n_bumps, 3))
    widths = rng.uniform(0.5, 1.2, size=n_bumps)
    amps = rng.uniform(0.3, 1.0, size=n_bumps)

    def fn(pts):
        out = np.zeros(pts.shape[0])
        for c, w, a in zip(centers, widths, amps):
            out += a * np.exp(-np.sum((pts - c) ** 2, axis=1) / (2 * w * w))
        return out

    return field_from_function(fn, n_v, box_l, alpha)


def run_hierarchy_check(cfg, out_dir):
    t0 = time.time()
    alpha = float(cfg["sim.alpha"])
    n_v = int(cfg["uu.grid_n"])
    box_l = float(cfg["uu.grid_l"])
    quad = sphere_quadrature(int(cfg["uu.n_omega"]))
    kern = kernel_from(cfg)
    rng = np.random.default_rng(int(cfg["sim.seed"]))

    nullity = []
    residuals = []
    scaling = []
    for _ in range(5):
        f = _random_field(n_v, box_l, alpha, rng)
        val, scale = check_C3_nullity(f, 1, kern, quad)
        nullity.append(val / max(scale, 1e-300))
        residuals.append(factorization_consistency(f, kern, quad))
        c1 = apply_C1(ProductGridFunction.power(f, 2), 1, kern, quad)
        fmax = float(np.max(np.abs(f.values)))
        scaling.append(float(np.max(np.abs(c1.values))) / max(fmax**2, 1e-300))

    f = _random_field(n_v, box_l, alpha, rng)
    g = _random_field(n_v, box_l, alpha, rng)
    broken_val, broken_scale = check_C3_nullity(
        f, 1, kern, quad, factors=[f, g, f, g]
    )

    metrics = {
        "c3_nullity": {
            "relative_max": float(np.max(nullity)),
            "per_field": nullity,
            "broken_value": broken_val,
            "broken_scale": broken_scale,
        },
        "factorization_residual": {
            "max": float(np.max(residuals)),
            "per_field": residuals,
        },
        "norm_scaling_table": {
            "k1_C1_ratio": scaling,
            "spread": float(np.max(scaling) / max(np.min(scaling), 1e-300)),
        },
        "wall_time": time.time() - t0,
    }
    ok = (
        float(np.max(nullity)) <= 1e-12
        and broken_val > 0
        and float(np.max(residuals)) <= 1e-10
    )
    return RunSummary("hierarchy-check", metrics, cfg), ok


def run_uu_solve(cfg, out_dir):
    t0 = time.time()
    alpha = float(cfg["sim.alpha"])
    n_v = int(cfg["uu.grid_n"])
    box_l = float(cfg["uu.grid_l"])
    quad = sphere_quadrature(int(cfg["uu.n_omega"]))
    kern = kernel_from(cfg)
    if cfg["uu.init"] == "fermi_dirac":
        f0 = fermi_dirac(alpha, float(cfg["uu.beta"]), 0.0, n_v, box_l,
                         solve_mu=True)
    else:
        f0 = field_from_function(profile_from(cfg), n_v, box_l, alpha)
    t_final = float(cfg["sim.t_final"])
    times = sorted(set(float(t) for t in cfg["sim.snapshot_times"]) | {t_final})
    snaps, diag = solve(
        f0, t_final, float(cfg["uu.dt"]), kern, quad, snapshot_times=times,
        conserve=bool(cfg["uu.conserve"]),
    )
    for t, fld in snaps:
        write_uu_field(out_dir / f"uu_field_t{t:g}.csv", fld, t)
    m0, p0, e0 = f0.moments()
    mT, pT, eT = snaps[-1][1].moments()
    q0 = collision_operator(f0, kern, quad)
    steps = sorted(diag)
    metrics = {
        "mass_drift": abs(mT - m0) / abs(m0),
        "momentum_drift": float(np.max(np.abs(pT - p0))),
        "energy_drift": abs(eT - e0) / max(abs(e0), 1e-300),
        "max_f_over_run": max(diag[k][3] for k in steps) if steps else
        float(np.max(f0.values)),
        "bound_violations": sum(diag[k][4] for k in steps),
        "initial_residual": float(np.max(np.abs(q0.values))),
        "wall_time": time.time() - t0,
    }
    ok = np.isfinite(metrics["mass_drift"])
    return RunSummary("uu-solve", metrics, cfg), ok


RUNNERS = {
    "relax": run_relax,
    "converge": run_converge,
    "chaos": run_chaos,
    "hierarchy-check": run_hierarchy_check,
    "uu-solve": run_uu_solve,
}


def run_experiment(cfg, out_dir=None):
    out = Path(out_dir if out_dir is not None else cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    summary, ok = RUNNERS[cfg["experiment"]](cfg, out)
    _write(out / "summary.json", summary.to_json() + "\n")
    _write(out / "config.txt", serialize_config(cfg))
    return summary, ok


# ---------------------------------------------------------------------------
# CLI


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    import argparse

    parser = argparse.ArgumentParser(
        prog="fermikac",
        description="exclusion-Kac particle simulator and U-U solver",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", default=None, help="flat key=value file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument(
        "--check", action="store_true",
        help="exit 4 unless the experiment's acceptance verdict passes",
    )
    args = parser.parse_args(argv)

    overrides = {"experiment": args.experiment}
    if args.seed is not None:
        overrides["sim.seed"] = args.seed
    try:
        cfg = load_config(args.config, overrides)
        summary, ok = run_experiment(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except FermikacError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(summary.to_json())
    if args.check and not ok:
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
