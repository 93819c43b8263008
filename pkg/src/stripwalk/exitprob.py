"""Exit-probability matrices and their derived quantities.

For a layer n, ``eta[n][i, j]`` is the probability that the walk started at
``(n, i)`` first enters layer ``n + 1`` at height ``j``.  The sequence solves

    eta_n = (I - q_n eta_{n-1} - r_n)^{-1} p_n = gamma_n p_n

and is obtained by running this recursion left to right from an arbitrary
stochastic seed.  Two runs from seeds S and S' differ by exactly

    eta_n - eta'_n = a_n ... a_L (S - S') eta'_L ... eta'_n,

with ``a_n = gamma_n q_n``, so ``2 ||a_n ... a_L||`` bounds the influence of
the seed and is used to choose the burn-in.

Heights are 0-based throughout the Python API.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, identity
from scipy.sparse.linalg import splu

from . import _kernels
from .errors import (
    DegeneracyError,
    InsufficientWindow,
    NearSingularError,
    NumericalFailure,
    TruncationError,
)
from .smallmat import RESOLVENT_MARGIN, mat_norm

BURN_IN_FLOOR = 100
SEED_TOL = 1e-12
STOCHASTIC_TOL = 1e-10
C4_FLOOR = 1e-14
LEAK_TOL = 1e-10
MAX_ORACLE_DEPTH = 2**14


# --------------------------------------------------------------------------
# batched kernels


def eta_recursion(P, R, Q, seed):
    """Run the exit-matrix recursion along axis -3.

    Parameters
    ----------
    P, R, Q : (..., n, d, d) arrays
    seed : (d, d) or (..., d, d) array
        Exit matrix assumed for the layer left of the first one.

    Returns
    -------
    eta, gamma, a : (..., n, d, d) arrays
    log_seed_bound : (..., n) array
        ``log(2 ||a_k ... a_0||)``, a bound on the seed's influence on
        ``eta[..., k, :, :]``.
    """
    P, R, Q = (np.asarray(x, dtype=float) for x in (P, R, Q))
    n, d = P.shape[-3], P.shape[-1]
    batch = P.shape[:-3]
    B = int(np.prod(batch, dtype=np.int64))

    def flat(x):
        return np.ascontiguousarray(x).reshape((B, n, d, d))

    seed = np.ascontiguousarray(np.broadcast_to(np.asarray(seed, dtype=float), batch + (d, d)).reshape(B, d, d))
    eta, gamma, a = (np.empty((B, n, d, d)) for _ in range(3))
    log_bound = np.empty((B, n))
    k, nrm = _kernels.eta_layers(flat(P), flat(R), flat(Q), seed, RESOLVENT_MARGIN, eta, gamma, a, log_bound)
    if k >= 0:
        raise NearSingularError(
            f"||q eta + r|| = {nrm:.3e} at layer offset {k}; some p row sum is (numerically) zero"
        )
    shape = batch + (n, d, d)
    return eta.reshape(shape), gamma.reshape(shape), a.reshape(shape), log_bound.reshape(batch + (n,))


def c_coefficients(eta):
    """``c = 1 - max_i min_j eta(i, j)`` for a stack of exit matrices.

    Clipped at 0: for d = 1 the row minimum is a roundoff away from 1.
    """
    return np.maximum(1.0 - np.min(eta, axis=-1).max(axis=-1), 0.0)


def column_spread(M):
    """Largest difference between two entries of one column."""
    return np.max(M.max(axis=-2) - M.min(axis=-2), axis=-1)


def pi_from_products(eta, tol=1e-10):
    """Collapse ``eta[..., 0] @ ... @ eta[..., m-1]`` for batched stacks.

    ``eta`` is ``(..., m, d, d)`` ordered left to right, the last factor being
    the layer just left of the target index.  Factors are added from the
    right end leftwards and the loop stops once every batch member's column
    spread is below ``tol``.  Returns ``(pi, spread)``; ``pi`` is row 0.
    """
    m = eta.shape[-3]
    M = eta[..., m - 1, :, :].copy()
    spread = column_spread(M)
    k = m - 2
    while k >= 0 and np.max(spread) > tol:
        M = eta[..., k, :, :] @ M
        spread = column_spread(M)
        k -= 1
    return M[..., 0, :], spread


# --------------------------------------------------------------------------
# records


@dataclass
class LayerAnalysis:
    index: int
    eta: np.ndarray
    gamma: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: float


@dataclass
class EtaSequence:
    """Exit matrices and derived quantities for layers ``start .. window.R``."""

    window: object
    burn_in: int
    seed_matrix_id: str
    eta: np.ndarray
    gamma: np.ndarray
    a: np.ndarray
    seed_bound: float
    certified: bool

    @property
    def start(self):
        return self.window.L + self.burn_in

    @property
    def stop(self):
        return self.window.R

    @property
    def b(self):
        return self.gamma.sum(axis=-1)

    @property
    def c(self):
        return c_coefficients(self.eta)

    def __len__(self):
        return len(self.eta)

    def offset(self, n):
        if not self.start <= n <= self.stop:
            raise IndexError(f"layer {n} has no record (records cover [{self.start}, {self.stop}])")
        return n - self.start

    def at(self, n):
        o = self.offset(n)
        g = self.gamma[o]
        return LayerAnalysis(n, self.eta[o], g, self.a[o], g.sum(axis=1), float(c_coefficients(self.eta[o])))

    @property
    def records(self):
        return [self.at(n) for n in range(self.start, self.stop + 1)]

    def to_csv(self, path):
        d = self.eta.shape[-1]
        ij = [(i + 1, j + 1) for i in range(d) for j in range(d)]
        header = (
            ["index"]
            + [f"eta{i}{j}" for i, j in ij]
            + [f"gamma{i}{j}" for i, j in ij]
            + [f"a{i}{j}" for i, j in ij]
            + [f"b{i + 1}" for i in range(d)]
            + ["c"]
        )
        b, c = self.b, self.c
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for o in range(len(self)):
                row = [self.start + o]
                for arr in (self.eta[o], self.gamma[o], self.a[o], b[o]):
                    row.extend(repr(float(x)) for x in np.ravel(arr))
                row.append(repr(float(c[o])))
                w.writerow(row)


def _check_seed(seed_matrix, d):
    if seed_matrix is None:
        return np.full((d, d), 1.0 / d), "uniform"
    S = np.asarray(seed_matrix, dtype=float)
    if S.shape != (d, d) or np.any(S < 0) or np.max(np.abs(S.sum(axis=1) - 1)) > STOCHASTIC_TOL:
        raise ValueError("seed_matrix must be a stochastic d x d matrix")
    if np.allclose(S, np.eye(d)):
        return S, "identity"
    if np.allclose(S, 1.0 / d):
        return S, "uniform"
    return S, "custom"


def adaptive_burn_in(log_seed_bound, floor=BURN_IN_FLOOR, tol=SEED_TOL):
    """Smallest offset >= floor whose seed bound is <= tol, or None."""
    ok = np.nonzero(log_seed_bound <= np.log(tol))[0]
    ok = ok[ok >= floor]
    return int(ok[0]) if len(ok) else None


def solve_eta(window, burn_in=None, seed_matrix=None):
    """Exit matrices for every layer of ``window`` after a burn-in.

    Parameters
    ----------
    window : EnvironmentWindow
    burn_in : int, optional
        Number of leading layers to discard.  By default the smallest
        offset >= 100 at which ``2 ||a_n ... a_L|| <= 1e-12``.  If no such
        offset exists, half the window is discarded and the result is
        flagged ``certified=False``.
    seed_matrix : (d, d) stochastic array, optional
        Exit matrix assumed at layer ``L - 1``; uniform by default.
    """
    d = window.d
    seed, seed_id = _check_seed(seed_matrix, d)
    P, R, Q = window.arrays
    eta, gamma, a, log_bound = eta_recursion(P, R, Q, seed)
    n = len(window)
    certified = True
    if burn_in is None:
        burn_in = adaptive_burn_in(log_bound)
        if burn_in is None:
            burn_in = n // 2
            certified = False
    if not 1 <= burn_in < n:
        raise InsufficientWindow(f"burn_in={burn_in} leaves no records in a window of {n} layers")
    bound = float(np.exp(log_bound[burn_in]))
    if bound > SEED_TOL:
        certified = False
    rows = eta.sum(axis=-1)
    if np.max(np.abs(rows - 1.0)) > STOCHASTIC_TOL:
        raise NumericalFailure(f"exit matrices not stochastic: max row error {np.max(np.abs(rows - 1)):.2e}")
    s = slice(burn_in, None)
    return EtaSequence(window, burn_in, seed_id, eta[s], gamma[s], a[s], bound, certified)


# --------------------------------------------------------------------------
# absorbing-chain oracle


@dataclass
class OracleResult:
    exit_dist: np.ndarray
    leak_left: np.ndarray
    mean_time: np.ndarray
    second_moment_time: np.ndarray
    depth: int
    certified: bool


def _strip_generator(window, lo, hi):
    """Sparse substochastic kernel on levels lo..hi plus boundary pieces."""
    d = window.d
    nl = hi - lo + 1
    P, R, Q = window.restrict(lo, hi).arrays
    rows, cols, vals = [], [], []
    ii, jj = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    for o in range(nl):
        base = o * d
        rows.append(base + ii)
        cols.append(base + jj)
        vals.append(R[o].ravel())
        if o + 1 < nl:
            rows.append(base + ii)
            cols.append(base + d + jj)
            vals.append(P[o].ravel())
        if o >= 1:
            rows.append(base + ii)
            cols.append(base - d + jj)
            vals.append(Q[o].ravel())
    N = nl * d
    K = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    ).tocsc()
    return K, P, Q


def _oracle_solve(window, target_layer, depth):
    d = window.d
    lo, hi = target_layer - depth, target_layer - 1
    K, P, Q = _strip_generator(window, lo, hi)
    N = K.shape[0]
    A = (identity(N, format="csc") - K).tocsc()
    try:
        lu = splu(A)
    except RuntimeError as exc:
        raise DegeneracyError(f"absorbing system singular on [{lo}, {hi}]: {exc}") from exc
    rhs = np.zeros((N, d + 2))
    rhs[N - d :, :d] = P[-1]
    rhs[:d, d] = Q[0].sum(axis=1)
    rhs[:, d + 1] = 1.0
    sol = lu.solve(rhs)
    t = sol[:, d + 1]
    second = 2.0 * lu.solve(t) - t
    if not np.all(np.isfinite(sol)) or not np.all(np.isfinite(second)):
        raise DegeneracyError("absorbing system produced non-finite values")
    return lo, sol[:, :d], sol[:, d], t, second


def absorption_oracle(window, target_layer, start, truncation_depth=None):
    """Hitting law and time moments of ``target_layer`` by exact linear solve.

    The strip is cut to levels ``[target_layer - depth, target_layer - 1]``;
    stepping left of the cut is absorbed and reported as ``leak_left``.  With
    ``truncation_depth=None`` the depth doubles from 32 until the leak is at
    most 1e-10 and the results move by at most 1e-10 (relative) between
    doublings (cap 2**14 layers or the window's left edge).

    Parameters
    ----------
    start : (layer, height)
        ``height=None`` returns arrays for all heights of ``layer``.
    """
    layer, height = start
    if layer >= target_layer:
        raise ValueError("target_layer must lie to the right of the start layer")
    available = target_layer - window.L
    if window.R < target_layer - 1:
        raise InsufficientWindow("window does not reach the layer left of the target")

    def pick(res):
        lo, X, leak, t, s = res
        o = (layer - lo) * window.d
        sl = slice(o, o + window.d) if height is None else o + height
        return X[sl], leak[sl], t[sl], s[sl]

    if truncation_depth is not None:
        depth = int(truncation_depth)
        if depth < target_layer - layer or depth > available:
            raise InsufficientWindow(f"truncation depth {depth} incompatible with start/window")
        X, leak, t, s = pick(_oracle_solve(window, target_layer, depth))
        return OracleResult(X, leak, t, s, depth, bool(np.max(leak) <= LEAK_TOL))

    depth = max(32, target_layer - layer)
    prev = None
    while True:
        depth = min(depth, available, MAX_ORACLE_DEPTH)
        if depth < target_layer - layer:
            raise InsufficientWindow("window does not contain the start layer")
        X, leak, t, s = pick(_oracle_solve(window, target_layer, depth))
        cur = np.concatenate([np.ravel(X), np.ravel(t), np.ravel(s)])
        # killed paths bias the time moments far more than the exit law
        stable = prev is not None and np.max(np.abs(cur - prev) / np.maximum(np.abs(cur), 1.0)) <= LEAK_TOL
        at_cap = depth >= available or depth >= MAX_ORACLE_DEPTH
        if np.max(leak) <= LEAK_TOL and (stable or at_cap):
            return OracleResult(X, leak, t, s, depth, True)
        prev = cur
        if at_cap:
            raise TruncationError(
                f"leak {np.max(leak):.2e} > {LEAK_TOL} at depth {depth}; "
                "widen the window or check transience"
            )
        depth *= 2


# --------------------------------------------------------------------------
# pi, left exits, C4


@dataclass
class PiVector:
    pi: np.ndarray
    collapse_residual: float
    factors: int
    c_bound: float


def compute_pi(etaseq, at_index, tol=1e-10, start=0):
    """Limit of ``e_start eta_{at-m} ... eta_{at-1}`` as m grows.

    Factors are prepended until the column spread of the product is at most
    ``tol``; the returned row is then independent of ``start`` within tol.
    """
    hi = at_index - 1
    if hi > etaseq.stop or hi < etaseq.start:
        raise InsufficientWindow(f"no exit record at layer {hi}")
    o = etaseq.offset(hi)
    M = etaseq.eta[o].copy()
    cs = etaseq.c
    c_bound = float(cs[o])
    spread = float(column_spread(M))
    m = 1
    while spread > tol:
        o -= 1
        if o < 0:
            raise InsufficientWindow(
                f"product did not collapse: column spread {spread:.2e} after {m} factors",
                achieved=spread,
            )
        M = etaseq.eta[o] @ M
        c_bound *= float(cs[o])
        spread = float(column_spread(M))
        m += 1
    return PiVector(M[start].copy(), spread, m, c_bound)


@dataclass
class LeftExit:
    eta_minus: np.ndarray
    f: np.ndarray
    stack: np.ndarray = field(repr=False)
    boundary: int = 0


def _left_exit_sweep(window, lo, boundary):
    """eta^- for layers lo..boundary-1 with absorption at ``boundary``."""
    d = window.d
    P, R, Q = window.restrict(lo, boundary - 1).arrays
    n = len(P)
    out = np.empty((n, d, d))
    E = np.zeros((d, d))
    eye = np.eye(d)
    for o in range(n - 1, -1, -1):
        E = np.linalg.solve(eye - R[o] - P[o] @ E, Q[o])
        out[o] = E
    return out


def left_exit(window, at_index, depth, tol=1e-10):
    """Probability of descending from ``at_index`` to ``at_index - 1`` (``eta_minus``)
    and of ever reaching ``at_index - depth`` (``f``, per start height).

    The strip is cut on the right by an absorbing boundary at
    ``at_index + k``; k doubles from 16 until the results move by at most
    ``tol``.  ``stack[m]`` holds eta^- of layer ``at_index - m``.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    lo = at_index - depth + 1
    if not window.covers(at_index - depth, at_index):
        raise InsufficientWindow(f"window must cover [{at_index - depth}, {at_index}]")
    prev = None
    k = 16
    while True:
        boundary = at_index + k
        if boundary - 1 > window.R:
            raise TruncationError(
                f"right boundary needs layer {boundary - 1} beyond window end {window.R}"
            )
        sweep = _left_exit_sweep(window, lo, boundary)
        stack = sweep[:depth][::-1]
        prod = stack[0].copy()
        for E in stack[1:]:
            prod = prod @ E
        f = prod.sum(axis=1)
        cur = np.concatenate([stack[0].ravel(), f])
        if prev is not None and np.max(np.abs(cur - prev)) <= tol:
            return LeftExit(stack[0].copy(), f, stack.copy(), boundary)
        prev = cur
        k *= 2


@dataclass
class C4Result:
    passed: bool
    min_entry: float

    def __bool__(self):
        return self.passed


def verify_C4(etaseq, floor=C4_FLOOR):
    m = float(np.min(etaseq.eta))
    return C4Result(m > floor, m)
