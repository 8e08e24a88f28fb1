"""Complex linear algebra and random sampling primitives.

All random functions take an explicit :class:`numpy.random.Generator`;
nothing here touches global state.
"""

import math
import zlib

import numpy as np

from .errors import InvalidInputError, NotInvertibleError, NotPSDError

EIG_RTOL = 1e-10
HERMITIAN_TOL = 1e-12


# --------------------------------------------------------------------------
# RNG streams
# --------------------------------------------------------------------------

def _key_int(key):
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise InvalidInputError(f"stream keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise InvalidInputError(f"unsupported stream key {key!r}")


def stream_key(seed, *keys):
    """Entropy tuple identifying a child stream (used for disjointness checks)."""
    return (_key_int(seed),) + tuple(_key_int(k) for k in keys)


def rng_stream(seed, *keys):
    """Child generator derived from ``seed`` and a path of keys.

    Keys may be non-negative ints or strings; the same path always yields
    the same stream, different paths yield statistically independent ones.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(stream_key(seed, *keys)))))


# --------------------------------------------------------------------------
# Hermitian factorizations
# --------------------------------------------------------------------------

def _as_hermitian(M):
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.conj().T)) > HERMITIAN_TOL * scale:
        raise InvalidInputError("matrix is not Hermitian")
    return M


def _eigh(M):
    M = _as_hermitian(M)
    # symmetrize so eigh sees exactly what we validated
    lam, V = np.linalg.eigh(0.5 * (M + M.conj().T))
    return lam, V


def hermitian_sqrt(M):
    """Unique PSD square root of a Hermitian PSD matrix.

    Eigenvalues below ``EIG_RTOL * lambda_max`` are clamped to zero; anything
    more negative than that raises :class:`NotPSDError`.
    """
    lam, V = _eigh(M)
    lam_max = float(lam[-1])
    if lam_max <= 0.0:
        if lam_max < 0.0 or np.any(lam < 0.0):
            raise NotPSDError("matrix has no positive eigenvalue")
        return np.zeros_like(V)
    if lam[0] < -EIG_RTOL * lam_max:
        raise NotPSDError(f"negative eigenvalue {lam[0]:.3e} (lambda_max={lam_max:.3e})")
    lam = np.where(lam < EIG_RTOL * lam_max, 0.0, lam)
    S = (V * np.sqrt(lam)) @ V.conj().T
    return 0.5 * (S + S.conj().T)


def hermitian_inv_sqrt(M):
    """Inverse PSD square root ``S`` with ``S @ M @ S = I``."""
    lam, V = _eigh(M)
    lam_max = float(lam[-1])
    if lam_max <= 0.0 or lam[0] <= EIG_RTOL * lam_max:
        raise NotInvertibleError(
            f"matrix is singular or indefinite (eigenvalues in [{lam[0]:.3e}, {lam_max:.3e}])")
    S = (V / np.sqrt(lam)) @ V.conj().T
    return 0.5 * (S + S.conj().T)


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------

def standard_complex_normal(rng, size):
    """i.i.d. CN(0, 1) entries: real and imaginary parts each N(0, 1/2)."""
    w = rng.standard_normal(size=tuple(np.atleast_1d(size)) + (2,))
    return (w[..., 0] + 1j * w[..., 1]) * np.sqrt(0.5)


def sample_complex_gaussian(rng, cov, size=None, sqrt_cov=None):
    """Draw from CN(0, cov).

    With ``size=None`` a single length-m vector is returned, otherwise an
    array of shape ``(size, m)``. ``sqrt_cov`` lets callers pass a cached
    Hermitian square root.
    """
    S = hermitian_sqrt(cov) if sqrt_cov is None else sqrt_cov
    m = S.shape[0]
    if size is None:
        return S @ standard_complex_normal(rng, m)
    w = standard_complex_normal(rng, (size, m))
    # rows are samples: z_n = S w_n  <=>  Z = W S^T
    return w @ S.T


def sample_gamma_texture(rng, shape, size=None):
    """Unit-mean Gamma texture with shape ``mu`` and scale ``1/mu``."""
    if not (shape > 0) or not math.isfinite(shape):
        raise InvalidInputError(f"texture shape must be positive, got {shape}")
    return rng.gamma(shape, 1.0 / shape, size=size)


# --------------------------------------------------------------------------
# Order statistics
# --------------------------------------------------------------------------

def quantile_rank(n, q):
    """1-based rank ``ceil(q * n)`` (at least 1) used by :func:`empirical_quantile`."""
    # round away float noise such as 0.07 * 100 = 7.000000000000001
    k = math.ceil(round(q * n, 9))
    return min(max(k, 1), n)


def empirical_quantile(values, q):
    """``ceil(q*N)``-th smallest value; ``q = 1`` gives the maximum."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise InvalidInputError("empirical_quantile needs at least one value")
    if not 0.0 <= q <= 1.0:
        raise InvalidInputError(f"q must lie in [0, 1], got {q}")
    k = quantile_rank(values.size, q)
    return float(np.partition(values, k - 1)[k - 1])
