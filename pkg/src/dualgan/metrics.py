"""Mode coverage on ring mixtures and histograms of rescaled dual variables."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CoverageReport:
    covered_modes: frozenset
    counts: tuple
    threshold: int
    radius_multiplier: float

    @property
    def n_covered(self):
        return len(self.covered_modes)

    def to_dict(self):
        return {
            "covered_modes": sorted(int(m) for m in self.covered_modes),
            "n_covered": self.n_covered,
            "counts": [int(c) for c in self.counts],
            "threshold": self.threshold,
            "radius_multiplier": self.radius_multiplier,
        }


def mode_coverage(samples, spec, threshold=100, k_sigma=3.0):
    """A mode is covered when strictly more than ``threshold`` samples lie
    within ``k_sigma`` standard deviations of its center.

    Balls of neighbouring modes may overlap, in which case a sample counts
    for each of them.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] < 1 or samples.shape[1] != 2:
        raise ValueError(f"expected an (m, 2) sample matrix, got {samples.shape}")
    dist = np.linalg.norm(samples[:, None, :] - spec.centers[None, :, :], axis=2)
    counts = np.sum(dist <= k_sigma * spec.std, axis=0)
    covered = frozenset(int(j) for j in np.flatnonzero(counts > threshold))
    return CoverageReport(covered, tuple(int(c) for c in counts), int(threshold), float(k_sigma))


def lambda_histogram(lam, n, bins=20):
    """Normalized histogram of 2n * lam over [0, 1]; returns ``(mass, edges)``."""
    lam = np.asarray(lam, dtype=np.float64).ravel()
    if lam.size == 0:
        raise ValueError("no dual variables given")
    hi = 1.0 / (2 * n)
    if np.any(~np.isfinite(lam)) or np.any(lam < 0) or np.any(lam > hi * (1 + 1e-12)):
        raise ValueError(f"dual variables must lie in [0, 1/(2n)] = [0, {hi:g}]")
    u = np.clip(2 * n * lam, 0.0, 1.0)
    counts, edges = np.histogram(u, bins=bins, range=(0.0, 1.0))
    return counts / lam.size, edges
