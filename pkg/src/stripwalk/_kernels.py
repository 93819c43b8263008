"""Compiled inner loops for walk simulation.

Outcome tables have shape ``(..., d, 3d)``: cumulative probabilities of the
outcomes ``[right to 0..d-1, stay at 0..d-1, left to 0..d-1]`` per height.
"""

import numpy as np
from numba import njit

OK_EXHAUSTED = 0
HIT_HIGH = 1
LEFT_WINDOW = 2
HIT_LOW = 3


def outcome_table(P, R, Q):
    """Cumulative outcome table for stacks of letters ``(..., d, d)``."""
    cum = np.cumsum(np.concatenate([P, R, Q], axis=-1), axis=-1)
    cum[..., -1] = 1.0
    return cum


@njit(cache=True)
def _draw(row, u):
    m = row.shape[0]
    for j in range(m - 1):
        if u < row[j]:
            return j
    return m - 1


@njit(cache=True)
def walk(letters, cum_support, base, xi, y, uniforms, stop_high, stop_low, out_xi, out_y):
    """Advance one walker using pre-drawn uniforms.

    ``letters`` indexes ``cum_support`` for layers ``base .. base + n - 1``.
    Positions after each step are written to ``out_xi``/``out_y``.  Returns
    ``(steps, status, xi, y)``.
    """
    n = letters.shape[0]
    d = cum_support.shape[1]
    steps = 0
    status = OK_EXHAUSTED
    for t in range(uniforms.shape[0]):
        off = xi - base
        if off < 0 or off >= n:
            status = LEFT_WINDOW
            break
        j = _draw(cum_support[letters[off], y], uniforms[t])
        if j < d:
            xi += 1
            y = j
        elif j < 2 * d:
            y = j - d
        else:
            xi -= 1
            y = j - 2 * d
        out_xi[t] = xi
        out_y[t] = y
        steps += 1
        if xi >= stop_high:
            status = HIT_HIGH
            break
        if xi <= stop_low:
            status = HIT_LOW
            break
    return steps, status, xi, y


@njit(cache=True)
def escapes(letters, cum_support, start_y, guard, max_steps, seed):
    """For each replica, does a walk from ``(0, start_y)`` reach ``guard``
    before revisiting a level <= 0?  ``letters[b]`` covers layers 0..guard-1.

    Returns 1 (escaped), 0 (returned) or -1 (step cap hit).
    """
    np.random.seed(seed)
    B = letters.shape[0]
    d = cum_support.shape[1]
    out = np.empty(B, dtype=np.int64)
    for b in range(B):
        xi = 0
        y = start_y
        res = -1
        for _ in range(max_steps):
            j = _draw(cum_support[letters[b, xi], y], np.random.random())
            if j < d:
                xi += 1
                y = j
            elif j < 2 * d:
                y = j - d
            else:
                xi -= 1
                y = j - 2 * d
            if xi <= 0:
                res = 0
                break
            if xi >= guard:
                res = 1
                break
        out[b] = res
    return out


@njit(cache=True)
def excursion_counts(letters, base, cum_support, start_y, radius, k, max_steps, seed, counts):
    """Occupation counts of (letter block around the walker, height) over
    excursions from level 0 to the first hit of level 1.

    ``letters[b]`` covers layers ``base .. base + n - 1`` and must reach
    layer ``radius``.  An excursion that needs a layer outside the row or
    exceeds ``max_steps`` is discarded entirely.  ``counts`` has shape
    ``(k ** (2 radius + 1), d)`` and is updated in place.  Returns
    ``(discarded, total_steps)``.
    """
    np.random.seed(seed)
    B, n = letters.shape
    d = cum_support.shape[1]
    buf_code = np.empty(max_steps, dtype=np.int64)
    buf_y = np.empty(max_steps, dtype=np.int64)
    discarded = 0
    total = 0
    for b in range(B):
        xi = 0
        y = start_y[b]
        t = 0
        ok = True
        while xi < 1:
            lo = xi - radius - base
            if lo < 0 or t >= max_steps:
                ok = False
                break
            code = 0
            mult = 1
            for j in range(2 * radius + 1):
                code += letters[b, lo + j] * mult
                mult *= k
            buf_code[t] = code
            buf_y[t] = y
            t += 1
            jj = _draw(cum_support[letters[b, xi - base], y], np.random.random())
            if jj < d:
                xi += 1
                y = jj
            elif jj < 2 * d:
                y = jj - d
            else:
                xi -= 1
                y = jj - 2 * d
        if not ok:
            discarded += 1
            continue
        for s in range(t):
            counts[buf_code[s], buf_y[s]] += 1
        total += t
    return discarded, total


@njit(cache=True)
def _solve_into(A, B, X):
    """Solve ``A X = B`` by Gaussian elimination with partial pivoting.

    ``A`` (d, d) and ``B`` (d, m) are overwritten.
    """
    d = A.shape[0]
    m = B.shape[1]
    for col in range(d):
        piv = col
        best = abs(A[col, col])
        for i in range(col + 1, d):
            if abs(A[i, col]) > best:
                best = abs(A[i, col])
                piv = i
        if piv != col:
            for j in range(d):
                A[col, j], A[piv, j] = A[piv, j], A[col, j]
            for j in range(m):
                B[col, j], B[piv, j] = B[piv, j], B[col, j]
        inv = 1.0 / A[col, col]
        for i in range(col + 1, d):
            f = A[i, col] * inv
            if f != 0.0:
                for j in range(col, d):
                    A[i, j] -= f * A[col, j]
                for j in range(m):
                    B[i, j] -= f * B[col, j]
    for i in range(d - 1, -1, -1):
        for j in range(m):
            s = B[i, j]
            for k in range(i + 1, d):
                s -= A[i, k] * X[k, j]
            X[i, j] = s / A[i, i]


@njit(cache=True)
def eta_layers(P, R, Q, seed, margin, eta, gamma, a, log_bound):
    """Exit-matrix recursion for ``B`` independent letter rows.

    Inputs are ``(B, n, d, d)``; ``seed`` is ``(B, d, d)``.
    Fills ``eta``, ``gamma``, ``a`` and ``log_bound[b, k] = log(2 ||a_k..a_0||)``.
    Returns ``(k, norm)`` for the first layer where ``||q eta + r|| >= 1 - margin``,
    or ``(-1, 0.0)``.
    """
    B, n, d = P.shape[0], P.shape[1], P.shape[2]
    M = np.empty((d, d))
    rhs = np.empty((d, 3 * d))
    X = np.empty((d, 3 * d))
    prev = np.empty((d, d))
    acc = np.empty((d, d))
    tmp = np.empty((d, d))
    for b in range(B):
        prev[:, :] = seed[b]
        acc[:, :] = 0.0
        for i in range(d):
            acc[i, i] = 1.0
        log_acc = np.log(2.0)
        for k in range(n):
            nrm = 0.0
            for i in range(d):
                row = 0.0
                for j in range(d):
                    s = R[b, k, i, j]
                    for l in range(d):
                        s += Q[b, k, i, l] * prev[l, j]
                    M[i, j] = -s
                    row += abs(s)
                M[i, i] += 1.0
                if row > nrm:
                    nrm = row
            if nrm >= 1.0 - margin:
                return k, nrm
            for i in range(d):
                for j in range(d):
                    rhs[i, j] = P[b, k, i, j]
                    rhs[i, d + j] = Q[b, k, i, j]
                    rhs[i, 2 * d + j] = 1.0 if i == j else 0.0
            _solve_into(M, rhs, X)
            # the exit matrices are stochastic; renormalising keeps roundoff
            # from pushing the recursion onto a substochastic branch, which
            # is attracting when the walk drifts left
            for i in range(d):
                row = 0.0
                for j in range(d):
                    row += X[i, j]
                for j in range(d):
                    X[i, j] /= row
            for i in range(d):
                for j in range(d):
                    eta[b, k, i, j] = X[i, j]
                    a[b, k, i, j] = X[i, d + j]
                    gamma[b, k, i, j] = X[i, 2 * d + j]
                    prev[i, j] = X[i, j]
            s_max = 0.0
            for i in range(d):
                row = 0.0
                for j in range(d):
                    s = 0.0
                    for l in range(d):
                        s += X[i, d + l] * acc[l, j]
                    tmp[i, j] = s
                    row += abs(s)
                if row > s_max:
                    s_max = row
            if s_max > 0.0:
                log_acc += np.log(s_max)
                for i in range(d):
                    for j in range(d):
                        acc[i, j] = tmp[i, j] / s_max
            else:
                log_acc = -np.inf
                acc[:, :] = 0.0
            log_bound[b, k] = log_acc
    return -1, 0.0
