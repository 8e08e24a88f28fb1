"""End-to-end steps shared by the CLI and the acceptance suite."""

import logging

import numpy as np

from .harness import build_detectors, calibrate_all, run_sweep
from .net import train
from .numerics import rng_stream
from .scenario import draw_batch
from .whitening import Whitener

log = logging.getLogger(__name__)


def fit_whitener(cfg):
    """Global covariance estimate from a dedicated H0 pool."""
    h = cfg.harness
    if h.estimator == "identity":
        return Whitener.identity(cfg.scenario.m)
    pool = draw_batch(cfg.scenario, h.n_scm, rng_stream(cfg.training.seed, "whitener"))
    return Whitener.fit(pool.z, h.estimator)


def probe_inputs(cfg, whitener, n=16):
    rng = rng_stream(cfg.training.seed, "probe")
    h0 = draw_batch(cfg.scenario, n // 2, rng)
    h1 = draw_batch(cfg.scenario, n - n // 2, rng, snr_db=10.0)
    return whitener.whiten_normalize(np.concatenate([h0.z, h1.z]))


def train_model(cfg):
    whitener = fit_whitener(cfg)
    result = train(cfg.scenario, cfg.training, whitener)
    return result, whitener


def workers_of(cfg):
    return cfg.harness.workers or None


def calibrate_detectors(cfg, whitener, params=None, network_input="u", n_h0=None, n_test=None):
    h = cfg.harness
    dets = build_detectors(cfg.scenario, whitener, params, cfg.detectors, h.scan_points, network_input)
    cal = calibrate_all(dets, whitener, cfg.scenario, h.pfa, h.n_h0 if n_h0 is None else n_h0, h.seed,
                        h.n_test if n_test is None else n_test, workers_of(cfg))
    return dets, cal


def sweep_detectors(cfg, detectors, taus, whitener, n_trials=None, snr_grid=None, workers=None):
    h = cfg.harness
    return run_sweep(cfg.scenario, detectors, taus, whitener,
                     snr_grid=h.snr_grid if snr_grid is None else snr_grid,
                     n_trials=h.n_trials if n_trials is None else n_trials,
                     seed=h.seed, pfa=h.pfa,
                     workers=workers_of(cfg) if workers is None else workers,
                     scenario_id=cfg.scenario_id)
