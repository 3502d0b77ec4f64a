"""Constants shared by every rendering path. Both kernel implementations must
use identical thresholds so their outputs agree pixel for pixel."""

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199

CUTOFF = 1.0 / 255.0  # Gaussian weights below this render as zero
R2_MAX = 2.0 * np.log(255.0)  # u^2+v^2 bound equivalent to the cutoff
A_MAX = 0.9999  # per-hit alpha clamp keeping 1-a away from zero
T_STOP = 1e-4  # stop compositing once transmittance drops below this
RAY_T_MIN = 1e-6  # hits closer than this along the ray are misses
DENOM_EPS = 1e-8  # |d.n| below this counts as plane-parallel
DEPTH_EPS = 1e-6  # alpha clamp when normalizing accumulated depth

N_CHANNELS = 9  # packed output: rgb 3, alpha 1, depth sum 1, normal 3, distortion 1


def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Degree-1 real SH basis row per unit direction: (..., 4)."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    one = np.ones_like(x)
    return np.stack([SH_C0 * one, -SH_C1 * y, SH_C1 * z, -SH_C1 * x], axis=-1)
