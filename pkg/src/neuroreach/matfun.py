"""Dense matrix kernels for the reachset recursion: e^{Mt} and its integral."""

from __future__ import annotations

import numpy as np

# Padé-13 numerator coefficients (Higham 2005, "The scaling and squaring
# method for the matrix exponential revisited").
_PADE13_B = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_THETA13 = 5.371920351148152


def matrix_exponential(M, t: float = 1.0) -> np.ndarray:
    """e^{M t} by scaling-and-squaring with the degree-13 Padé approximant."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got shape {M.shape}")
    if not np.isfinite(t):
        raise ValueError("time must be finite")
    A = M * t
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    norm = np.linalg.norm(A, 1)
    n_squarings = 0
    if norm > _THETA13:
        n_squarings = int(np.ceil(np.log2(norm / _THETA13)))
        A = A / (2.0**n_squarings)

    b = _PADE13_B
    ident = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(n_squarings):
        R = R @ R
    return R


def exponential_integral(M, delta: float) -> np.ndarray:
    """E = integral_0^delta e^{M tau} dtau.

    Computed from the augmented exponential exp([[M, I], [0, 0]] * delta),
    whose upper-right block is E; this avoids special-casing singular M.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got shape {M.shape}")
    n = M.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = M
    aug[:n, n:] = np.eye(n)
    full = matrix_exponential(aug, delta)
    return full[:n, n:]


class ExpmCache:
    """Memoizes (e^{J delta}, integral) per (J bytes, delta).

    J changes at every reachability step for nonlinear systems, so this only
    pays off for linear systems and repeated fault-window steps; it is cheap
    insurance either way.
    """

    def __init__(self, maxsize: int = 64):
        self._store: dict = {}
        self._maxsize = maxsize

    def propagators(self, J: np.ndarray, delta: float):
        key = (hash(J.tobytes()), float(delta))
        hit = self._store.get(key)
        if hit is not None:
            return hit
        phi = matrix_exponential(J, delta)
        E = exponential_integral(J, delta)
        if len(self._store) >= self._maxsize:
            self._store.clear()
        self._store[key] = (phi, E)
        return phi, E
