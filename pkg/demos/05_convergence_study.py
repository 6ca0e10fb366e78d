"""Miniature kinetic-limit study: empirical marginal vs U-U solution.

Runs the converge experiment at reduced scale (small N sweep, few
replicas, short horizon) for both initial-data families, printing the
L1 distance table with bootstrap error bars.  The full desk-scale sweep
(N up to 3.2e4 at T = 1) lives in tests/test_acceptance.py and in the
`fermikac converge` CLI with default parameters.
"""

import json
import tempfile

from fermikac.harness import load_config, run_experiment

for family in ("conditioned_product", "two_scale"):
    cfg = load_config(overrides={
        "experiment": "converge",
        "init.family": family,
        "n_sweep": [500, 2000, 8000],
        "replicas": 24,
        "bootstrap": 32,
        "sim.t_final": 0.25,
        "sim.snapshot_times": [0.0, 0.25],
        "uu.dt": 5e-3,
        "sim.seed": 2024,
        "out_dir": tempfile.mkdtemp(prefix="fermikac_demo_"),
    })
    summary, ok = run_experiment(cfg)
    print(f"\n=== family: {family} (outputs in {cfg['out_dir']})")
    for row in summary.metrics["D_table"]:
        print(f"  N = {row['N']:5d}  t = {row['t']:5.2f}  "
              f"D = {row['D']:.4f} +- {row['sigma']:.4f}")
    verdicts = {k: v for k, v in summary.metrics.items()
                if k.startswith("decreasing")}
    print(f"  monotone beyond 1-sigma: {verdicts}  -> ok = {ok}")
    print(json.dumps({"wall_time": round(summary.metrics['wall_time'], 1)}))
