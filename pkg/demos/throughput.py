"""Batch throughput: ideal system, calibrated noise, and the optimized-cycle projection.

Usage: python demos/throughput.py [N]
"""
import sys

from mosquito_pnp.config import load_config
from mosquito_pnp.controller import default_calibration, run_batch
from mosquito_pnp.metrics import project_optimized, table1_mean_published, throughput_from_cycles


def batch(preset, n):
    cfg = load_config(preset)
    calib = default_calibration(cfg.layout, cfg.motion)
    return run_batch(n, cfg.controller, cfg.noise, 1, layout=cfg.layout, profile=cfg.motion, calib=calib)


def main(n=200):
    print(f"manual fixture (8 operators): {table1_mean_published():.2f} Mdph")
    for preset in ("default", "calibrated"):
        records, s = batch(preset, n)
        print(f"{preset:10s} grasp {s.grasp_rate:.1%}  placement {s.placement_rate:.1%}  "
              f"cycle {s.mean_cycle:.2f} s (movement {s.mean_movement:.2f} s)  {s.mdph:.0f} +- {s.mdph_std:.0f} Mdph")
        print(f"{'':10s} outcomes {s.outcomes}")
    tp = throughput_from_cycles([r.total_time for r in records if r.grasp_success])
    proj = project_optimized(tp, 2.5)
    print(f"2.5 s shorter cycle: {proj.mean_cycle:.2f} s -> {proj.mdph:.0f} Mdph")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:2]))
