"""Empirical CFAR calibration and Monte Carlo Pd-vs-SNR sweeps.

Every Monte Carlo draw comes from a child stream keyed by
``(seed, purpose, ..., chunk)`` with a fixed chunk size, so results do not
depend on how chunks are spread over workers.
"""

import logging
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .detectors import LocalScanNMF, OnGridNMF, OracleDetector, ScanGrid
from .errors import InsufficientSamplesError, InvalidInputError
from .numerics import empirical_quantile, rng_stream, stream_key
from .scenario import SNR_GRID_DB, base_covariance, draw_batch

log = logging.getLogger(__name__)

CHUNK = 1000
DETECTOR_IDS = ("on-grid", "scan", "amortized", "oracle")


def _snr_key(snr_db):
    return int(round((snr_db + 1000.0) * 1000.0))


def _chunks(n):
    return [(c, min(CHUNK, n - c * CHUNK)) for c in range(math.ceil(n / CHUNK))]


def _map(fn, items, workers):
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def build_detectors(scenario, whitener, params=None, names=DETECTOR_IDS, K=64, network_input="u"):
    """Detectors sharing one whitener; the oracle uses the true base covariance."""
    cell = scenario.cell
    out = []
    for name in names:
        if name == "on-grid":
            out.append(OnGridNMF(whitener, cell))
        elif name == "scan":
            out.append(LocalScanNMF(whitener, ScanGrid.for_cell(cell, K)))
        elif name == "oracle":
            out.append(OracleDetector(base_covariance(scenario), cell))
        elif name == "amortized":
            if params is None:
                continue
            from .net import AmortizedDetector

            out.append(AmortizedDetector(params, whitener, cell, network_input))
        else:
            raise InvalidInputError(f"unknown detector {name!r}; choose from {DETECTOR_IDS}")
    return out


def score_chunk(detectors, whitener, scenario, rng, n, snr_db=None):
    """Draw ``n`` observations from ``rng`` and score them with every detector."""
    obs = draw_batch(scenario, n, rng, snr_db=snr_db)
    U = whitener.whiten_normalize(obs.z)
    return {d.name: d.score_batch(obs, U) for d in detectors}


def score_h0(detectors, whitener, scenario, n, seed, purpose, workers=1):
    def work(item):
        c, size = item
        return score_chunk(detectors, whitener, scenario, rng_stream(seed, purpose, c), size)

    parts = _map(work, _chunks(n), workers)
    return {d.name: np.concatenate([p[d.name] for p in parts]) for d in detectors}


# --------------------------------------------------------------------------
# Calibration
# --------------------------------------------------------------------------

@dataclass
class CalibrationResult:
    detector: str
    tau: float
    target_pfa: float
    n_h0: int
    achieved_pfa: float = float("nan")
    achieved_pfa_se: float = float("nan")
    n_test: int = 0

    def interval(self, z=3.0):
        return self.achieved_pfa - z * self.achieved_pfa_se, self.achieved_pfa + z * self.achieved_pfa_se


def threshold_from_scores(scores, pfa):
    return empirical_quantile(scores, 1.0 - pfa)


def calibrate_all(detectors, whitener, scenario, pfa, n_h0, seed, n_test=None, workers=1):
    """Thresholds from one shared H0 calibration set; Pfa checked on a disjoint held-out set.

    ``n_test=0`` skips the held-out check.
    """
    if not 0.0 < pfa <= 1.0:
        raise InvalidInputError(f"pfa must lie in (0, 1], got {pfa}")
    floor = math.ceil(10.0 / pfa)
    if n_h0 < floor:
        raise InsufficientSamplesError(f"n_h0={n_h0} is below the floor 10/pfa = {floor}")
    n_test = n_h0 if n_test is None else n_test
    cal = score_h0(detectors, whitener, scenario, n_h0, seed, "calibration", workers)
    held = score_h0(detectors, whitener, scenario, n_test, seed, "heldout", workers) if n_test else None
    out = {}
    for d in detectors:
        s = cal[d.name]
        if np.all(s == s[0]):
            warnings.warn(f"detector {d.name!r} returned a constant score; its threshold is degenerate",
                          RuntimeWarning, stacklevel=2)
        tau = threshold_from_scores(s, pfa)
        res = CalibrationResult(d.name, tau, pfa, n_h0)
        if held is not None:
            p = float(np.mean(held[d.name] > tau))
            res.achieved_pfa = p
            res.achieved_pfa_se = math.sqrt(max(p * (1.0 - p), 1e-300) / n_test)
            res.n_test = n_test
        out[d.name] = res
    return out


def calibrate(detector, whitener, scenario, pfa, n_h0, seed, n_test=None, workers=1):
    return calibrate_all([detector], whitener, scenario, pfa, n_h0, seed, n_test, workers)[detector.name]


def calibration_stream_keys(seed, n_h0, n_test):
    """Entropy tuples of the calibration and held-out chunks (for disjointness checks)."""
    cal = {stream_key(seed, "calibration", c) for c, _ in _chunks(n_h0)}
    held = {stream_key(seed, "heldout", c) for c, _ in _chunks(n_test)}
    return cal, held


def evaluation_stream_keys(seed, snr_grid, n_trials):
    return {stream_key(seed, "evaluate", _snr_key(s), c) for s in snr_grid for c, _ in _chunks(n_trials)}


# --------------------------------------------------------------------------
# Pd estimation
# --------------------------------------------------------------------------

@dataclass
class SweepResult:
    scenario_id: str
    pfa: float
    seed: int
    snr_grid: tuple
    curves: dict
    taus: dict
    correlations: dict = field(default_factory=dict)
    templates: dict = field(default_factory=dict)
    scores: dict = None

    def pd(self, detector):
        return np.array([pd for _, pd, _ in self.curves[detector]])

    def rows(self):
        for name, curve in self.curves.items():
            for snr, pd, n in curve:
                yield {"scenario": self.scenario_id, "detector": name, "snr_db": snr,
                       "pd": pd, "n_trials": n, "pfa_target": self.pfa}


def _eval_work(detectors, whitener, scenario, seed):
    def work(item):
        snr, c, size = item
        rng = rng_stream(seed, "evaluate", _snr_key(snr), c)
        return score_chunk(detectors, whitener, scenario, rng, size, snr_db=snr)
    return work


def estimate_pd(detector, tau, whitener, scenario, snr_db, n_trials, seed, workers=1):
    """Fraction of fresh H1 draws with score strictly above ``tau``."""
    work = _eval_work([detector], whitener, scenario, seed)
    parts = _map(work, [(snr_db, c, size) for c, size in _chunks(n_trials)], workers)
    scores = np.concatenate([p[detector.name] for p in parts])
    return float(np.mean(scores > tau)), int(n_trials)


def run_sweep(scenario, detectors, taus, whitener, snr_grid=SNR_GRID_DB, n_trials=5000, seed=0,
              pfa=1e-2, workers=1, scenario_id="custom", keep_scores=False):
    """Pd curves for all detectors on paired draws (same observations per trial index)."""
    snr_grid = tuple(float(s) for s in snr_grid)
    missing = [d.name for d in detectors if d.name not in taus]
    if missing:
        raise InvalidInputError(f"no threshold for detectors {missing}")
    items = [(snr, c, size) for snr in snr_grid for c, size in _chunks(n_trials)]
    parts = _map(_eval_work(detectors, whitener, scenario, seed), items, workers)
    per_snr = {snr: [] for snr in snr_grid}
    for (snr, _, _), part in zip(items, parts):
        per_snr[snr].append(part)
    curves, scores = {}, {}
    for d in detectors:
        tau = float(taus[d.name].tau if isinstance(taus[d.name], CalibrationResult) else taus[d.name])
        curve = []
        for snr in snr_grid:
            s = np.concatenate([p[d.name] for p in per_snr[snr]])
            curve.append((snr, float(np.mean(s > tau)), int(s.size)))
            if keep_scores:
                scores[(d.name, snr)] = s
        curves[d.name] = curve
    return SweepResult(
        scenario_id, pfa, seed, snr_grid, curves,
        {d.name: float(getattr(taus[d.name], "tau", taus[d.name])) for d in detectors},
        {d.name: d.correlations_per_test for d in detectors},
        {d.name: d.templates_per_test for d in detectors},
        scores if keep_scores else None)


# --------------------------------------------------------------------------
# Complexity
# --------------------------------------------------------------------------

def complexity_report(sweep, timings=None):
    """Per detector: correlations and template generations per test vector."""
    rows = []
    for name in sweep.curves:
        row = {"detector": name,
               "correlations_per_test": sweep.correlations.get(name),
               "template_generations_per_test": sweep.templates.get(name, 0)}
        if timings and name in timings:
            row["correlation_seconds_per_test"] = timings[name]
        rows.append(row)
    return rows


def _best_time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def scoring_timings(whitener, cell, params=None, n=20000, K=64, repeats=5, seed=0):
    """Wall-clock per test vector of each scoring stage.

    ``scan`` and ``amortized`` time the correlation stage alone (K templates vs
    one template per vector); template generation and the regressor forward
    pass are reported separately.
    """
    from .net import predict_offset

    rng = rng_stream(seed, "timing")
    m = whitener.m
    Z = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
    U = whitener.whiten_normalize(Z)
    V = whitener.template(ScanGrid.for_cell(cell, K).points)
    if params is not None:
        theta_hat = cell.center + predict_offset(params, U)[1] * cell.half_width
    else:
        theta_hat = rng.uniform(*cell.bounds, size=n)
    W = whitener.template(theta_hat)
    out = {
        "scan": _best_time(lambda: kernels.scan_max(U, V), repeats) / n,
        "amortized": _best_time(lambda: kernels.row_energy(U, W), repeats) / n,
        "on-grid": _best_time(lambda: kernels.row_energy(U, V[:1]), repeats) / n,
        "amortized_template_generation": _best_time(lambda: whitener.template(theta_hat), repeats) / n,
    }
    if params is not None:
        out["amortized_regressor_forward"] = _best_time(lambda: predict_offset(params, U), repeats) / n
    out["scan_over_amortized"] = out["scan"] / out["amortized"]
    return out
