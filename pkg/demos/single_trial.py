"""One pick-and-place cycle with rendered frames and the classical overhead pipeline.

Usage: python demos/single_trial.py [OUT_DIR] [SEED]
"""
import dataclasses
import sys
from pathlib import Path

from mosquito_pnp.controller import PHASES, ControllerConfig, NoiseProfile, default_calibration, run_trial
from mosquito_pnp.render import save_pgm, save_png
from mosquito_pnp.robot import MotionProfile
from mosquito_pnp.scene import make_scene


def main(out="demo_out/trial", seed=3):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    scene = make_scene(seed)
    cfg = dataclasses.replace(ControllerConfig(), vision_mode="pipeline")
    calib = default_calibration(scene.layout, MotionProfile())
    frames = {}
    rec, robot, final = run_trial(scene, cfg, NoiseProfile(), calib, seed=seed, frames=frames)
    for name, img in frames.items():
        (save_png if img.ndim == 3 else save_pgm)(out / f"{name}.{'png' if img.ndim == 3 else 'pgm'}", img)
    print(f"outcome: {rec.outcome}  (neck {rec.neck_error_x_mm * 1000:+.1f} um from the cut plane)")
    for p in PHASES:
        print(f"  {p:16s} {rec.phase_times[p]:6.3f} s")
    print(f"  {'total':16s} {rec.total_time:6.3f} s over {len(robot.log)} commands")
    print(f"frames written to {out}/")


if __name__ == "__main__":
    main(*(sys.argv[1:2] or ["demo_out/trial"]), *(int(a) for a in sys.argv[2:3]))
