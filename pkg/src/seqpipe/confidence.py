"""Per-arm confidence matrix ``Z = lambda I + sum g g^T / n`` and its inverse.

The inverse is maintained incrementally with the Sherman-Morrison identity so
that each update costs O(p^2).  ``Z`` itself is only needed for inspection, so
in exact mode its rank-one updates are buffered and applied in batches when
``z`` is read.  Only the lower triangle of the inverse is stored; symmetric
BLAS kernels read and update half the matrix.
"""

import numpy as np
from scipy.linalg import blas

from ._validation import check_positive_float, check_positive_int, check_vector

MODES = ("exact", "diagonal")
_PENDING_FLUSH = 256


class ConfidenceState:
    def __init__(self, dim, lam=1.0, mode="exact"):
        self.dim = check_positive_int(dim, "dim")
        self.lam = check_positive_float(lam, "lambda")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        self.n_updates = 0
        if mode == "exact":
            self._z = self.lam * np.eye(dim)
            self._z_inv_lower = np.asfortranarray(np.eye(dim) / self.lam)
            self._pending = []
        else:
            self._z_diag = np.full(dim, self.lam)
            self._z_inv_diag = np.full(dim, 1.0 / self.lam)

    @property
    def z(self):
        if self.mode == "diagonal":
            return np.diag(self._z_diag)
        self._flush()
        return self._z

    @property
    def z_inv(self):
        if self.mode == "diagonal":
            return np.diag(self._z_inv_diag)
        lower = np.tril(self._z_inv_lower)
        return lower + np.tril(lower, -1).T

    def _flush(self):
        if not self._pending:
            return
        G = np.array([g for g, _ in self._pending])
        scale = np.array([1.0 / n for _, n in self._pending])
        self._z += (G * scale[:, None]).T @ G
        self._z += self._z.T
        self._z *= 0.5
        self._pending.clear()

    def apply_inverse(self, g):
        """``Z^{-1} g`` for a vector of matching dimension."""
        if self.mode == "diagonal":
            return self._z_inv_diag * g
        return blas.dsymv(1.0, self._z_inv_lower, g, lower=1)

    def bonus(self, g, n=1, z_inv_g=None):
        g = check_vector(g, self.dim, name="g")
        n = check_positive_int(n, "n")
        if z_inv_g is None:
            z_inv_g = self.apply_inverse(g)
        return float(np.sqrt(max(float(g @ z_inv_g), 0.0) / n))

    def update(self, g, n=1, z_inv_g=None):
        """In-place ``Z += g g^T / n``; returns ``self``.

        ``z_inv_g`` may be passed when ``Z^{-1} g`` was already computed
        against the current state (e.g. for the bonus at selection time).
        """
        g = check_vector(g, self.dim, name="g")
        n = check_positive_int(n, "n")
        if not np.any(g):
            return self
        self.n_updates += 1
        if self.mode == "diagonal":
            self._z_diag += g * g / n
            self._z_inv_diag = 1.0 / self._z_diag
            return self
        if z_inv_g is None:
            z_inv_g = self.apply_inverse(g)
        denom = n + float(g @ z_inv_g)
        out = blas.dsyr(-1.0 / denom, z_inv_g, a=self._z_inv_lower, lower=1, overwrite_a=1)
        if not np.shares_memory(out, self._z_inv_lower):
            self._z_inv_lower = np.asfortranarray(out)
        self._pending.append((g.copy(), n))
        if len(self._pending) >= _PENDING_FLUSH:
            self._flush()
        return self

    def inverse_error(self):
        """max |Z Z^{-1} - I|; cheap sanity check of the maintained inverse."""
        return float(np.max(np.abs(self.z @ self.z_inv - np.eye(self.dim))))

    def copy(self):
        other = ConfidenceState.__new__(ConfidenceState)
        other.dim, other.lam, other.mode, other.n_updates = (
            self.dim, self.lam, self.mode, self.n_updates)
        if self.mode == "exact":
            self._flush()
            other._z, other._pending = self._z.copy(), []
            other._z_inv_lower = self._z_inv_lower.copy(order="F")
        else:
            other._z_diag, other._z_inv_diag = self._z_diag.copy(), self._z_inv_diag.copy()
        return other


def init_confidence(dim, lam=1.0, mode="exact"):
    return ConfidenceState(dim, lam, mode)


def rank_one_update(state, g, n=1):
    return state.update(g, n)


def exploration_bonus(state, g, n=1):
    """``sqrt(g^T Z^{-1} g / n)``, the width of the confidence interval."""
    return state.bonus(g, n)
