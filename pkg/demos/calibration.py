"""Overhead camera-to-robot map and onboard scale from simulated sweeps.

Usage: python demos/calibration.py
"""
import numpy as np

from mosquito_pnp.calibration import calibrate_onboard, calibrate_overhead, map_camera_to_robot
from mosquito_pnp.render import overhead_camera
from mosquito_pnp.scene import WorkcellLayout


def main():
    layout = WorkcellLayout()
    cmap, acq, robot = calibrate_overhead(layout, occluded=[10])
    print(f"grid sweep: {len(acq.pairs)} sightings, {len(acq.failures)} occluded, {robot.clock:.1f} s of motion")
    print(f"degree-{cmap.degree} Bernstein fit: residual max {cmap.residual_max:.2f}, rms {cmap.residual_rms:.2f} counts")

    cam = overhead_camera(layout)
    rng = np.random.default_rng(0)
    world = np.asarray(layout.cup_center) + rng.uniform(-8, 8, (500, 2))
    d = (cmap.evaluate(cam.world_to_pixel(world)) / 100.0 - world) * 1000
    bias = d.mean(axis=0)
    spread = np.hypot(*(d - bias).T)
    # the lowest-then-leftmost tooltip pixel sits about one pixel off the tool axis
    print(f"500 random cup points: constant offset ({bias[0]:.1f}, {bias[1]:.1f}) um, "
          f"scatter about it max {spread.max():.1f} um")

    far = map_camera_to_robot(cmap, (100.0, 100.0))
    print(f"far corner pixel: extrapolated={far.extrapolated} ({far.warning})")

    scale = calibrate_onboard(layout)
    print(f"onboard scale: {scale.counts_per_px_x:.4f}, {scale.counts_per_px_y:.4f} counts/px (optics: -1.2)")


if __name__ == "__main__":
    main()
