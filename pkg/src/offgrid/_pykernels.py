"""numpy implementations of the scoring loops (fallback backend)."""

import numpy as np


def scan_max(U, V):
    """Per row of U: max over rows v of V of |v^H u|^2, and the first argmax."""
    if V.shape[0] == 0:
        raise ValueError("empty template grid")
    if V.shape[1] != U.shape[1]:
        raise ValueError("template length does not match observation length")
    P = U @ V.conj().T
    E = P.real ** 2 + P.imag ** 2
    idx = np.argmax(E, axis=1)
    return E[np.arange(E.shape[0]), idx], idx


def row_energy(U, W):
    """Per row: |w_i^H u_i|^2."""
    if W.shape != U.shape:
        raise ValueError("template array must match observation array shape")
    c = np.einsum("ij,ij->i", W.conj(), U)
    return c.real ** 2 + c.imag ** 2
