"""Face quantities shared by the finite-volume scheme and its dissipation monitor.

Face a+1/2 of cell i along ``axis`` sits between i and i+1 (periodic).
"""

import numpy as np

UPWIND_MODES = ("full_upwind", "central")


def face_velocities(mu: np.ndarray, h: float) -> list[np.ndarray]:
    return [-(np.roll(mu, -1, axis=a) - mu) / h for a in range(mu.ndim)]


def face_mobilities(m: np.ndarray, velocities: list[np.ndarray], upwind: str) -> list[np.ndarray]:
    out = []
    for a, v in enumerate(velocities):
        right = np.roll(m, -1, axis=a)
        if upwind == "full_upwind":
            out.append(np.where(v >= 0.0, m, right))
        elif upwind == "central":
            out.append(0.5 * (m + right))
        else:
            raise ValueError(f"unknown upwind mode {upwind!r}")
    return out


def flux_divergence(fluxes: list[np.ndarray], h: float) -> np.ndarray:
    """-(J_{i+1/2} - J_{i-1/2}) / h summed over axes."""
    out = np.zeros_like(fluxes[0])
    for a, j in enumerate(fluxes):
        out -= (j - np.roll(j, 1, axis=a)) / h
    return out
