"""Slow-time H0/H1 observation generator for the three clutter scenarios."""

from dataclasses import dataclass, field, asdict
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .numerics import (
    hermitian_sqrt,
    sample_gamma_texture,
    standard_complex_normal,
)

SNR_GRID_DB = tuple(float(s) for s in range(-20, 21))

CLUTTER_KINDS = ("gaussian", "compound")


@dataclass(frozen=True)
class ScenarioConfig:
    m: int = 16
    rho: float = 0.5
    sigma2: float = 1.0
    clutter_kind: str = "gaussian"
    texture_shape: float = 1.0
    include_awgn: bool = True
    cell_index: int = 0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ConfigurationError(f"m must be an integer >= 2, got {self.m}")
        if self.clutter_kind not in CLUTTER_KINDS:
            raise ConfigurationError(f"clutter_kind must be one of {CLUTTER_KINDS}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigurationError(f"rho must lie in [0, 1), got {self.rho}")
        if self.sigma2 < 0:
            raise ConfigurationError("sigma2 must be non-negative")
        if self.texture_shape <= 0:
            raise ConfigurationError("texture_shape must be positive")
        if self.clutter_kind == "gaussian" and not self.include_awgn:
            raise ConfigurationError("gaussian clutter requires include_awgn=True")
        if not 0 <= self.cell_index < self.m:
            raise ConfigurationError(f"cell_index must lie in [0, {self.m - 1}]")

    @property
    def cell(self):
        return DopplerCell.for_index(self.cell_index, self.m)

    @property
    def noise_power(self):
        return self.sigma2 if self.include_awgn else 0.0

    def fingerprint(self):
        return {k: v for k, v in asdict(self).items()}


SCENARIOS = {
    "a": ScenarioConfig(clutter_kind="gaussian", include_awgn=True),
    "b": ScenarioConfig(clutter_kind="compound", include_awgn=False),
    "c": ScenarioConfig(clutter_kind="compound", include_awgn=True),
}


def scenario_preset(name, **overrides):
    """Scenario (a) Gaussian+AWGN, (b) compound only, (c) compound+AWGN."""
    try:
        base = SCENARIOS[name]
    except KeyError:
        raise ConfigurationError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    return ScenarioConfig(**{**asdict(base), **overrides})


@dataclass(frozen=True)
class DopplerCell:
    center: float
    half_width: float

    @classmethod
    def for_index(cls, k0, m):
        return cls(center=k0 / m, half_width=1.0 / (2 * m))

    @property
    def m(self):
        return int(round(1.0 / (2 * self.half_width)))

    @property
    def bounds(self):
        return self.center - self.half_width, self.center + self.half_width

    def contains(self, theta, atol=0.0):
        lo, hi = self.bounds
        theta = np.asarray(theta)
        return (theta >= lo - atol) & (theta <= hi + atol)

    def theta_from_offset(self, delta):
        return self.center + np.asarray(delta) * self.half_width

    def offset_from_theta(self, theta):
        return 2 * self.m * (np.asarray(theta) - self.center)


@dataclass
class TargetParams:
    theta0: float
    snr_db: float
    alpha: complex


@dataclass
class LabeledObservation:
    z: np.ndarray
    y: int
    target: Optional[TargetParams] = None
    delta: Optional[float] = None


@dataclass
class ObservationBatch:
    """Rows of ``z`` are observations; target columns are NaN for H0 rows."""

    z: np.ndarray
    y: np.ndarray
    theta0: np.ndarray
    snr_db: np.ndarray
    delta: np.ndarray
    alpha: np.ndarray = field(default=None)

    def __len__(self):
        return self.z.shape[0]

    @classmethod
    def concat(cls, batches):
        return cls(*(np.concatenate([getattr(b, f) for b in batches]) for f in
                     ("z", "y", "theta0", "snr_db", "delta", "alpha")))

    def take(self, idx):
        return ObservationBatch(self.z[idx], self.y[idx], self.theta0[idx],
                                self.snr_db[idx], self.delta[idx], self.alpha[idx])

    def observation(self, i):
        if self.y[i] == 0:
            return LabeledObservation(z=self.z[i], y=0)
        return LabeledObservation(
            z=self.z[i], y=1,
            target=TargetParams(float(self.theta0[i]), float(self.snr_db[i]), complex(self.alpha[i])),
            delta=float(self.delta[i]))


# --------------------------------------------------------------------------
# Model quantities
# --------------------------------------------------------------------------

def steering(theta, m):
    """Unit-norm Doppler steering vector(s); array ``theta`` gives one row per value."""
    if m < 2:
        raise InvalidInputError(f"m must be >= 2, got {m}")
    theta = np.asarray(theta, dtype=float)
    # reduce modulo 1 so p(theta) == p(theta + 1) exactly
    phase = np.mod(theta, 1.0)[..., None] * np.arange(m)
    return np.exp(2j * np.pi * phase) / np.sqrt(m)


def steering_derivative(theta, m):
    """Entrywise d p / d theta = j 2 pi k p_k."""
    return 2j * np.pi * np.arange(m) * steering(theta, m)


def clutter_covariance(cfg):
    if not 0.0 <= cfg.rho < 1.0:
        raise InvalidInputError(f"rho must lie in [0, 1), got {cfg.rho}")
    idx = np.arange(cfg.m)
    return (cfg.rho ** np.abs(idx[:, None] - idx[None, :])).astype(complex)


def base_covariance(cfg):
    sigma = clutter_covariance(cfg) + cfg.noise_power * np.eye(cfg.m)
    lam = np.linalg.eigvalsh(sigma)
    if lam[0] <= 1e-10 * lam[-1]:
        raise ConfigurationError("base covariance is not positive definite")
    return sigma


@lru_cache(maxsize=32)
def _cached_model(cfg):
    sigma_c = clutter_covariance(cfg)
    sigma = base_covariance(cfg)
    return hermitian_sqrt(sigma_c), np.linalg.inv(sigma)


def mf_gain(theta, sigma_inv, m):
    """``p^H(theta) Sigma^{-1} p(theta)`` for scalar or array theta."""
    p = steering(theta, m)
    return np.real(np.einsum("...i,ij,...j->...", p.conj(), sigma_inv, p))


def amplitude_modulus(theta0, snr_db, sigma_inv, m):
    return np.sqrt(10.0 ** (np.asarray(snr_db) / 10.0) / mf_gain(theta0, sigma_inv, m))


def calibrate_amplitude(theta0, snr_db, sigma_true, rng):
    """Complex amplitude hitting the requested matched-filter SNR with a uniform phase."""
    sigma_inv = np.linalg.inv(np.asarray(sigma_true))
    m = sigma_inv.shape[0]
    mag = float(amplitude_modulus(theta0, snr_db, sigma_inv, m))
    return mag * np.exp(1j * rng.uniform(0.0, 2 * np.pi))


# --------------------------------------------------------------------------
# Draws
# --------------------------------------------------------------------------

def _draw_components(cfg, n, rng):
    """Disturbance pieces in a fixed draw order: clutter, noise, texture."""
    sqrt_c, _ = _cached_model(cfg)
    g = standard_complex_normal(rng, (n, cfg.m)) @ sqrt_c.T
    noise = None
    if cfg.include_awgn:
        noise = np.sqrt(cfg.sigma2) * standard_complex_normal(rng, (n, cfg.m))
    texture = None
    if cfg.clutter_kind == "compound":
        texture = sample_gamma_texture(rng, cfg.texture_shape, size=n)
    return g, noise, texture


def draw_disturbance(cfg, n, rng):
    g, noise, texture = _draw_components(cfg, n, rng)
    z = g if texture is None else np.sqrt(texture)[:, None] * g
    if noise is not None:
        z = z + noise
    return z


def draw_batch(cfg, n, rng, snr_db=None):
    """Draw ``n`` observations; ``snr_db=None`` gives H0, else H1.

    ``snr_db`` may be a scalar or a length-``n`` array of per-row SNRs.
    """
    z = draw_disturbance(cfg, n, rng)
    nan = np.full(n, np.nan)
    if snr_db is None:
        return ObservationBatch(z, np.zeros(n, dtype=np.int8), nan, nan.copy(), nan.copy(),
                                np.zeros(n, dtype=complex))
    snr = np.broadcast_to(np.asarray(snr_db, dtype=float), (n,)).copy()
    cell = cfg.cell
    lo, hi = cell.bounds
    theta0 = rng.uniform(lo, hi, size=n)
    phase = rng.uniform(0.0, 2 * np.pi, size=n)
    _, sigma_inv = _cached_model(cfg)
    alpha = amplitude_modulus(theta0, snr, sigma_inv, cfg.m) * np.exp(1j * phase)
    z = z + alpha[:, None] * steering(theta0, cfg.m)
    delta = cell.offset_from_theta(theta0)
    return ObservationBatch(z, np.ones(n, dtype=np.int8), theta0, snr, delta, alpha)


def draw_observation(cfg, hypothesis, snr_db, rng):
    """Single labeled observation; ``hypothesis`` is ``"H0"``/``"H1"`` (or 0/1)."""
    h1 = hypothesis in ("H1", 1, True)
    if not h1 and hypothesis not in ("H0", 0, False):
        raise InvalidInputError(f"hypothesis must be H0 or H1, got {hypothesis!r}")
    if h1 == (snr_db is None):
        raise InvalidInputError("snr_db must be given for H1 and only for H1")
    return draw_batch(cfg, 1, rng, snr_db=snr_db if h1 else None).observation(0)


def draw_balanced(cfg, n, rng, snr_grid=SNR_GRID_DB):
    """Balanced H0/H1 set, H1 SNRs drawn uniformly from ``snr_grid``, rows shuffled."""
    if n % 2:
        raise ConfigurationError(f"balanced sets need an even size, got {n}")
    half = n // 2
    h0 = draw_batch(cfg, half, rng)
    snr = rng.choice(np.asarray(snr_grid, dtype=float), size=half)
    h1 = draw_batch(cfg, half, rng, snr_db=snr)
    both = ObservationBatch.concat([h0, h1])
    return both.take(rng.permutation(n))
