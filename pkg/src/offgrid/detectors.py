"""Classical normalized matched filter statistics and their batch detectors."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidInputError
from .numerics import hermitian_inv_sqrt
from .scenario import steering

UNIT_TOL = 1e-6


@dataclass(frozen=True)
class DetectorScore:
    value: float
    correlations_used: int = 1


@dataclass(frozen=True)
class ScanGrid:
    """K points covering a Doppler cell edge to edge."""

    points: np.ndarray
    center: float
    half_width: float

    @classmethod
    def for_cell(cls, cell, K=64):
        if K < 1:
            raise InvalidInputError("scan grid needs at least one point")
        xi = np.zeros(1) if K == 1 else np.linspace(-1.0, 1.0, K)
        return cls(cell.center + xi * cell.half_width, cell.center, cell.half_width)

    @property
    def K(self):
        return len(self.points)

    def nearest_to_center(self):
        return int(np.argmin(np.abs(self.points - self.center)))


def _check_unit(x, what):
    nrm = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(nrm - 1.0) > UNIT_TOL):
        raise InvalidInputError(f"{what} must have unit norm (got {np.ravel(nrm)[:3]})")


def nmf_score(u, v):
    """``|v^H u|^2`` for two unit vectors."""
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    _check_unit(u, "observation")
    _check_unit(v, "template")
    return DetectorScore(float(abs(np.vdot(v, u)) ** 2), 1)


def nmf_raw_domain(z, sigma, theta):
    """NMF evaluated directly from raw data and a covariance (no square roots)."""
    z = np.asarray(z, dtype=complex)
    p = steering(theta, len(z))
    a = np.linalg.solve(sigma, p)
    b = np.linalg.solve(sigma, z)
    return float(abs(np.vdot(p, b)) ** 2 / (np.real(np.vdot(p, a)) * np.real(np.vdot(z, b))))


def nmf_on_grid(u, w, cell):
    return nmf_score(u, w.template(cell.center))


def nmf_local_scan(u, w, grid):
    u = np.asarray(u, dtype=complex)
    _check_unit(u, "observation")
    best, _ = kernels.scan_max(u[None, :], w.template(grid.points))
    return DetectorScore(float(best[0]), grid.K)


def oracle_score(z, theta0, sigma_true):
    A = hermitian_inv_sqrt(sigma_true)
    x = A @ np.asarray(z, dtype=complex)
    a = A @ steering(theta0, A.shape[0])
    return DetectorScore(float(abs(np.vdot(a, x)) ** 2 / (np.vdot(a, a).real * np.vdot(x, x).real)), 1)


def closed_form_pfa(w2, m):
    """Single-test false-alarm probability ``(1 - w2)^(m-1)``."""
    if not 0.0 <= w2 <= 1.0:
        raise InvalidInputError(f"threshold must lie in [0, 1], got {w2}")
    return (1.0 - w2) ** (m - 1)


def invert_pfa(pfa, m):
    if not 0.0 < pfa <= 1.0:
        raise InvalidInputError(f"pfa must lie in (0, 1], got {pfa}")
    return 1.0 - pfa ** (1.0 / (m - 1))


# --------------------------------------------------------------------------
# Batch detectors used by the harness. ``U`` holds the shared whitened,
# normalized observations (one per row) for ``obs``.
# --------------------------------------------------------------------------

class OnGridNMF:
    name = "on-grid"
    correlations_per_test = 1
    templates_per_test = 0

    def __init__(self, whitener, cell):
        self.whitener = whitener
        self.cell = cell
        self._v = whitener.template(cell.center)

    def score_batch(self, obs, U):
        return kernels.row_energy(U, self._v)


class LocalScanNMF:
    name = "scan"
    templates_per_test = 0

    def __init__(self, whitener, grid):
        self.whitener = whitener
        self.grid = grid
        self._V = whitener.template(grid.points)

    @property
    def correlations_per_test(self):
        return self.grid.K

    def score_batch(self, obs, U):
        return kernels.scan_max(U, self._V)[0]


class OracleDetector:
    """True covariance and true Doppler; H0 rows (no Doppler) use the cell center."""

    name = "oracle"
    correlations_per_test = 1
    templates_per_test = 1

    def __init__(self, sigma_true, cell):
        from .whitening import Whitener

        self.whitener = Whitener.from_covariance(sigma_true, "true-covariance")
        self.cell = cell

    def score_batch(self, obs, U=None):
        theta = np.where(np.isnan(obs.theta0), self.cell.center, obs.theta0)
        return kernels.row_energy(self.whitener.whiten_normalize(obs.z), self.whitener.template(theta))
