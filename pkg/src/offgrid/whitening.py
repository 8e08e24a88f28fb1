"""Covariance estimation and the whiten-then-normalize transform."""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, IllConditionedError, InvalidInputError
from .numerics import EIG_RTOL, hermitian_inv_sqrt
from .scenario import steering

ESTIMATOR_KINDS = ("identity", "scm", "tyler", "true-covariance")


def _as_samples(samples):
    Z = np.atleast_2d(np.asarray(samples, dtype=complex))
    if Z.shape[0] < 1 or Z.size == 0:
        raise InvalidInputError("need at least one sample")
    return Z


def _check_conditioning(S, n):
    lam = np.linalg.eigvalsh(S)
    if lam[-1] <= 0 or lam[0] <= EIG_RTOL * lam[-1]:
        raise IllConditionedError(
            f"covariance estimate from {n} samples is singular; increase the number of "
            f"H0 samples (need at least m={S.shape[0]})")


def estimate_scm(samples, check=True):
    """Sample covariance ``(1/N) sum z z^H`` of the rows of ``samples``."""
    Z = _as_samples(samples)
    S = Z.T @ Z.conj() / Z.shape[0]
    S = 0.5 * (S + S.conj().T)
    if check:
        _check_conditioning(S, Z.shape[0])
    return S


def estimate_tyler(samples, max_iter=100, tol=1e-8):
    """Tyler's fixed-point scatter estimate, normalized to trace m."""
    Z = _as_samples(samples)
    n, m = Z.shape
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0):
        raise InvalidInputError("Tyler's estimator is undefined for zero samples")
    if n <= m:
        raise InvalidInputError(f"Tyler's estimator needs N > m samples (N={n}, m={m})")
    S = np.eye(m, dtype=complex)
    for _ in range(max_iter):
        Sinv = np.linalg.inv(S)
        q = np.real(np.einsum("ni,ij,nj->n", Z.conj(), Sinv, Z))
        W = Z / np.sqrt(q)[:, None]
        S_new = (m / n) * (W.T @ W.conj())
        S_new = 0.5 * (S_new + S_new.conj().T)
        S_new *= m / np.real(np.trace(S_new))
        step = np.linalg.norm(S_new - S) / np.linalg.norm(S)
        S = S_new
        if step < tol:
            return S
    raise ConvergenceError(f"Tyler iteration did not converge in {max_iter} iterations", S)


@dataclass(frozen=True, eq=False)
class Whitener:
    """Covariance estimate with its cached inverse Hermitian square root."""

    sigma_hat: np.ndarray
    inv_sqrt: np.ndarray
    estimator_kind: str

    @classmethod
    def from_covariance(cls, sigma_hat, estimator_kind="scm"):
        if estimator_kind not in ESTIMATOR_KINDS:
            raise InvalidInputError(f"unknown estimator kind {estimator_kind!r}")
        sigma_hat = np.array(sigma_hat, dtype=complex)
        sigma_hat.setflags(write=False)
        inv_sqrt = hermitian_inv_sqrt(sigma_hat)
        inv_sqrt.setflags(write=False)
        return cls(sigma_hat, inv_sqrt, estimator_kind)

    @classmethod
    def identity(cls, m):
        return cls.from_covariance(np.eye(m), "identity")

    @classmethod
    def fit(cls, samples, estimator_kind="scm", **kwargs):
        if estimator_kind == "scm":
            return cls.from_covariance(estimate_scm(samples), "scm")
        if estimator_kind == "tyler":
            return cls.from_covariance(estimate_tyler(samples, **kwargs), "tyler")
        raise InvalidInputError(f"cannot fit a whitener of kind {estimator_kind!r} from samples")

    @property
    def m(self):
        return self.sigma_hat.shape[0]

    def whiten_normalize(self, z):
        """Rows (or a single vector) mapped to unit-norm whitened vectors."""
        z = np.asarray(z, dtype=complex)
        if z.shape[-1] != self.m:
            raise InvalidInputError(f"expected length {self.m}, got {z.shape[-1]}")
        x = z @ self.inv_sqrt.T
        nrm = np.linalg.norm(x, axis=-1, keepdims=True)
        if np.any(nrm == 0):
            raise InvalidInputError("cannot normalize a zero observation")
        return x / nrm

    def raw_template(self, theta):
        """Unnormalized whitened steering ``Sigma^{-1/2} p(theta)``."""
        return steering(theta, self.m) @ self.inv_sqrt.T

    def template(self, theta):
        a = self.raw_template(theta)
        return a / np.linalg.norm(a, axis=-1, keepdims=True)


def whiten_normalize(w, z):
    return w.whiten_normalize(z)


def whitened_template(w, theta, m=None):
    if m is not None and m != w.m:
        raise InvalidInputError(f"whitener is {w.m}-dimensional, template requested for m={m}")
    return w.template(theta)
