"""
Camera pose from 2D-3D correspondences
======================================

Three correspondences give up to four P3P poses; RANSAC picks the one most
points agree with and Levenberg-Marquardt polishes it.
"""

import numpy as np

from airloc.geometry import Camera, look_at, project_points, rotation_error, translation_error
from airloc.pnp import Correspondences, RansacConfig, p3p_solve, ransac_pnp

rng = np.random.default_rng(0)
cam = Camera(500.0, 500.0, 320.0, 240.0, 640, 480)
truth = look_at([3.0, -2.0, 1.0], [0.0, 0.0, 0.5])

# 100 points in front of the camera
uv = rng.uniform([0, 0], [640, 480], size=(100, 2))
rays = cam.bearings(uv)
Xw = (rays / rays[:, 2:3] * rng.uniform(2, 10, (100, 1)) - truth.t) @ truth.R
pixels, _ = project_points(cam, truth, Xw)

# minimal case
for pose in p3p_solve(pixels[:3], Xw[:3], cam):
    print(f"P3P candidate: ATE {translation_error(pose, truth):.2e} m")

# 1 px noise and 30% gross outliers
noisy = pixels + rng.normal(scale=1.0, size=pixels.shape)
bad = rng.choice(100, 30, replace=False)
noisy[bad] = rng.uniform([0, 0], [640, 480], size=(30, 2))
est = ransac_pnp(Correspondences.from_arrays(noisy, Xw), cam, RansacConfig(seed=1))
print(f"RANSAC: {est.num_inliers} inliers after {est.iterations_used} iterations, "
      f"mean reprojection error {est.mean_reprojection_error:.2f} px")
print(f"ATE {translation_error(est.pose, truth) * 100:.2f} cm, ARE {rotation_error(est.pose, truth):.3f} deg")
