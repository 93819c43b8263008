"""Small dense matrix kernel.

Matrices of order d are plain ``(d, d)`` float arrays.  The norm used
throughout is the operator norm induced by the max-norm on vectors, i.e.
the maximum absolute row sum.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NearSingularError

MAX_ORDER = 16
RESOLVENT_MARGIN = 1e-10


def as_square(a, name="matrix"):
    """Return ``a`` as a finite float array of shape (d, d)."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if a.shape[0] > MAX_ORDER:
        raise ValueError(f"{name} has order {a.shape[0]} > {MAX_ORDER}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def mat_norm(a):
    """Maximum absolute row sum; works on stacks ``(..., d, d)``."""
    a = np.asarray(a, dtype=float)
    return np.abs(a).sum(axis=-1).max(axis=-1)


def resolvent(q, eta_prev, r):
    """Return ``(I - q @ eta_prev - r)^{-1}``.

    Parameters
    ----------
    q, eta_prev, r : (d, d) array_like
        Left-step weights, exit matrix of the layer to the left and
        within-layer weights.

    Raises
    ------
    NearSingularError
        If ``||q @ eta_prev + r|| >= 1 - 1e-10``; the Neumann series is then
        not guaranteed to converge.
    """
    q = as_square(q, "q")
    eta_prev = as_square(eta_prev, "eta_prev")
    r = as_square(r, "r")
    m = q @ eta_prev + r
    nrm = mat_norm(m)
    if nrm >= 1.0 - RESOLVENT_MARGIN:
        raise NearSingularError(f"||q eta + r|| = {nrm:.3e} is not below 1")
    d = q.shape[0]
    return np.linalg.solve(np.eye(d) - m, np.eye(d))


@dataclass(frozen=True)
class ScaledProduct:
    """A matrix product stored as ``exp(log_scale) * core`` with ``||core|| = 1``.

    ``direction='right'`` appends new factors on the right (``acc @ A``),
    ``direction='left'`` on the left (``A @ acc``).
    """

    direction: str
    log_scale: float
    core: np.ndarray
    zero: bool = False

    @classmethod
    def identity(cls, d, direction="left"):
        if direction not in ("left", "right"):
            raise ValueError("direction must be 'left' or 'right'")
        return cls(direction, 0.0, np.eye(d))

    @property
    def log_norm(self):
        if self.zero:
            return -np.inf
        return self.log_scale + np.log(mat_norm(self.core))

    def value(self):
        """Recompose the product; may under/overflow for long products."""
        if self.zero:
            return np.zeros_like(self.core)
        return np.exp(self.log_scale) * self.core


def scaled_multiply(acc, a):
    """Multiply ``acc`` by ``a`` on its configured side and renormalise."""
    a = np.asarray(a, dtype=float)
    if a.shape != acc.core.shape:
        raise ValueError(f"incompatible orders {acc.core.shape} and {a.shape}")
    if acc.zero:
        return acc
    core = a @ acc.core if acc.direction == "left" else acc.core @ a
    nrm = mat_norm(core)
    if nrm == 0.0:
        return ScaledProduct(acc.direction, -np.inf, np.zeros_like(core), zero=True)
    return ScaledProduct(acc.direction, acc.log_scale + np.log(nrm), core / nrm)


def log_norm_of_products(factors, direction="left"):
    """Running ``log ||product||`` over a stack of factors ``(n, d, d)``.

    Returns an array of length n whose k-th entry is the log-norm of the
    product of the first k+1 factors, accumulated in ``direction``.
    """
    factors = np.asarray(factors, dtype=float)
    out = np.empty(len(factors))
    acc = ScaledProduct.identity(factors.shape[-1], direction)
    for k, a in enumerate(factors):
        acc = scaled_multiply(acc, a)
        out[k] = acc.log_norm
    return out


def cumulative_log_norms(factors, direction="left"):
    """Batched running log-norms of products along axis -3.

    ``factors`` is ``(..., n, d, d)``.  Entry ``[..., k]`` of the result is
    ``log ||A_k ... A_0||`` (``direction='left'``) or ``log ||A_0 ... A_k||``
    (``'right'``).  A product that vanishes gives ``-inf`` from then on.
    """
    factors = np.asarray(factors, dtype=float)
    n, d = factors.shape[-3], factors.shape[-1]
    batch = factors.shape[:-3]
    acc = np.broadcast_to(np.eye(d), batch + (d, d)).copy()
    log_acc = np.zeros(batch)
    out = np.empty(batch + (n,))
    for k in range(n):
        a = factors[..., k, :, :]
        acc = a @ acc if direction == "left" else acc @ a
        s = mat_norm(acc)
        with np.errstate(divide="ignore"):
            log_acc = log_acc + np.log(s)
        acc = acc / np.where(s > 0, s, 1.0)[..., None, None]
        out[..., k] = log_acc
    return out
