"""Quenched simulation, renewal times and the environment seen from the walker.

Heights are 0-based.  A :class:`Trajectory` stores the positions at times
``0..H`` with ``xi[0] = 0``.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .env import EnvironmentWindow, draw_letters, sample_window
from .errors import InsufficientWindow, NotTransient, WindowExhausted
from .exitprob import SEED_TOL, compute_pi, eta_recursion, pi_from_products, solve_eta
from .seeding import derive_seed, rng_for

BLOCK = 1 << 16
DEFAULT_GUARD = 50
PI_LEFT = 256


def _support_table(support):
    P = np.stack([t.p for t in support])
    R = np.stack([t.r for t in support])
    Q = np.stack([t.q for t in support])
    return _kernels.outcome_table(P, R, Q)


@dataclass
class Trajectory:
    xi: np.ndarray
    Y: np.ndarray
    start_law: str
    seed: int
    window_id: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.xi)

    @property
    def horizon(self):
        return len(self.xi) - 1

    @property
    def max_level(self):
        return int(self.xi.max())

    @property
    def hitting(self):
        """``T[n]`` for levels ``n = 0 .. max_level`` (first hitting times)."""
        runmax = np.maximum.accumulate(self.xi)
        levels = np.arange(0, self.max_level + 1)
        return np.searchsorted(runmax, levels, side="left")

    @property
    def crossings(self):
        """``tau[n-1] = T_n - T_{n-1}`` for ``n = 1 .. max_level``."""
        return np.diff(self.hitting)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "xi", "Y"])
            for t, (x, y) in enumerate(zip(self.xi, self.Y)):
                w.writerow([t, int(x), int(y)])


def _start_height(window, start_law, rng, etaseq=None):
    d = window.d
    if isinstance(start_law, str):
        if start_law != "pi":
            raise ValueError(f"unknown start law {start_law!r}")
        if etaseq is None:
            if window.L > -2:
                raise InsufficientWindow("a pi start needs layers to the left of 0")
            etaseq = solve_eta(window.restrict(window.L, -1))
        pi = compute_pi(etaseq, 0).pi
        pi = np.clip(pi, 0, None)
        return int(rng.choice(d, p=pi / pi.sum())), "pi"
    h = int(start_law)
    if not 0 <= h < d:
        raise ValueError(f"start height {h} outside 0..{d - 1}")
    return h, f"delta:{h}"


def simulate(window, start_law=0, *, horizon=None, target=None, seed=0, etaseq=None):
    """Simulate the walk in a fixed environment window.

    Parameters
    ----------
    window : EnvironmentWindow
    start_law : int or 'pi'
        Start height, or ``'pi'`` to draw it from the limit law of the
        exit-matrix products at layer 0 (needs layers left of 0).
    horizon : int, optional
        Number of steps.
    target : int, optional
        Stop at the first hit of this level.  Exactly one of ``horizon`` and
        ``target`` must be given.
    seed : int
        Seeds the start-height draw and the step uniforms.

    Raises
    ------
    WindowExhausted
        If the walker steps onto a layer outside the window.
    """
    if (horizon is None) == (target is None):
        raise ValueError("give exactly one of horizon and target")
    if not window.L <= 0 <= window.R:
        raise InsufficientWindow("window must contain layer 0")
    rng = np.random.default_rng(seed)
    y0, law = _start_height(window, start_law, rng, etaseq)
    cum = _support_table(window.support)
    letters = np.ascontiguousarray(window.letters)
    stop_high = np.iinfo(np.int64).max if target is None else int(target)
    xs, ys = [np.array([0])], [np.array([y0])]
    xi, y = 0, y0
    remaining = horizon
    if target is not None and target <= 0:
        return Trajectory(xs[0], ys[0], law, seed, window.model_id)
    while True:
        n = BLOCK if remaining is None else min(BLOCK, remaining)
        u = rng.random(n)
        out_x = np.empty(n, dtype=np.int64)
        out_y = np.empty(n, dtype=np.int64)
        steps, status, xi, y = _kernels.walk(
            letters, cum, window.L, xi, y, u, stop_high, np.iinfo(np.int64).min, out_x, out_y
        )
        xs.append(out_x[:steps])
        ys.append(out_y[:steps])
        if status == _kernels.LEFT_WINDOW:
            raise WindowExhausted(
                f"walker reached layer {xi} outside [{window.L}, {window.R}]",
                level=int(xi),
                steps=int(sum(len(a) for a in xs) - 1),
            )
        if remaining is not None:
            remaining -= steps
            if remaining == 0:
                break
        if status == _kernels.HIT_HIGH:
            break
    return Trajectory(np.concatenate(xs), np.concatenate(ys), law, seed, window.model_id)


def simulate_model(model, seed, start_law=0, *, horizon=None, target=None, left=PI_LEFT, right=None):
    """Simulate in the realization ``(model, derive_seed(seed, 'env'))``,
    widening the window on demand.  The walk uses ``derive_seed(seed, 'walk')``.

    Returns ``(trajectory, window)``.
    """
    env_seed = derive_seed(seed, "env")
    walk_seed = derive_seed(seed, "walk")
    if right is None:
        right = (target if target is not None else horizon) + 1
    right = max(int(right), 1)
    while True:
        window = sample_window(model, -int(left), right, env_seed)
        try:
            traj = simulate(window, start_law, horizon=horizon, target=target, seed=walk_seed)
            return traj, window
        except WindowExhausted as exc:
            if exc.level is not None and exc.level < window.L:
                left *= 2
            else:
                right *= 2


# --------------------------------------------------------------------------
# renewals


@dataclass
class RenewalRecord:
    i_star: int
    guard: int
    rho: np.ndarray
    xi: np.ndarray

    @property
    def renewals(self):
        return list(zip(self.rho.tolist(), self.xi.tolist()))

    @property
    def increments(self):
        """``(d_xi, d_rho)`` rows between consecutive renewals."""
        return np.column_stack([np.diff(self.xi), np.diff(self.rho)])

    def __len__(self):
        return len(self.rho)

    def to_csv(self, path):
        inc = self.increments
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "rho", "xi", "d_xi", "d_rho"])
            for k, (r, x) in enumerate(zip(self.rho, self.xi)):
                dx, dr = ("", "") if k == 0 else (int(inc[k - 1, 0]), int(inc[k - 1, 1]))
                w.writerow([k, int(r), int(x), dx, dr])


def renewal_mask(xi, Y, i_star, guard):
    """Times m with Y_m = i_star, xi_m a running maximum, xi_j > xi_m for all
    later j, and xi_m at least ``guard`` below the trajectory's top level."""
    xi = np.asarray(xi)
    runmax = np.maximum.accumulate(xi)
    later_min = np.empty_like(xi)
    later_min[-1] = np.iinfo(xi.dtype).max
    later_min[:-1] = np.minimum.accumulate(xi[::-1])[::-1][1:]
    return (np.asarray(Y) == i_star) & (xi == runmax) & (later_min > xi) & (xi <= xi.max() - guard)


def extract_renewals(traj, i_star, guard=DEFAULT_GUARD):
    """Post-hoc renewal times of a finite trajectory.

    "Never returns" can only be certified up to the trajectory's end, so
    renewals within ``guard`` levels of the top level reached are dropped.
    """
    m = np.nonzero(renewal_mask(traj.xi, traj.Y, i_star, guard))[0]
    return RenewalRecord(int(i_star), int(guard), m.astype(np.int64), traj.xi[m].astype(np.int64))


def select_istar(model, budget, seed, guard=DEFAULT_GUARD, max_steps=100_000):
    """Pick the start height most likely to escape to the right for good.

    For each height i, ``budget`` annealed walks start at ``(0, i)``; an
    escape is reaching level ``guard`` without revisiting a level <= 0.
    Heights whose estimate is within three joint standard errors of the
    best are treated as tied and the smallest such height is returned.

    Returns ``(i_star, estimates, stderrs)``.
    """
    d = model.d
    cum = _support_table(model.support)
    est = np.empty(d)
    se = np.empty(d)
    for i in range(d):
        letters = draw_letters(model, rng_for(seed, "istar-env", i), (budget, guard))
        res = _kernels.escapes(letters, cum, i, guard, max_steps, derive_seed(seed, "istar-walk", i) % (2**32))
        est[i] = np.mean(res == 1)
        se[i] = np.sqrt(max(est[i] * (1 - est[i]), 1.0 / budget) / budget)
    if np.all(est <= 3 * se):
        raise NotTransient(f"escape probabilities {est} are all ~0; inconsistent with transience")
    best = int(np.argmax(est))
    tied = np.nonzero(est >= est[best] - 3 * np.sqrt(se**2 + se[best] ** 2))[0]
    return int(tied.min()), est, se


# --------------------------------------------------------------------------
# environment viewed from the particle


def _block_hash(support, block):
    h = hashlib.sha1()
    for idx in block:
        h.update(support[int(idx)].signature_bytes())
    return h.hexdigest()[:16]


@dataclass
class EvfpHistogram:
    """Counts keyed by (hash of the letter block around the walker, height).

    Signature: every matrix entry of the 2W+1 letters at levels
    ``xi - W .. xi + W`` is rounded to 6 decimals and the block's bytes are
    hashed with SHA-1 (first 16 hex digits).
    """

    radius: int
    counts: dict = field(default_factory=dict)
    blocks: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def total(self):
        return int(sum(self.counts.values()))

    def add(self, key, n, block=None):
        self.counts[key] = self.counts.get(key, 0) + int(n)
        if block is not None:
            self.blocks.setdefault(key[0], block)

    def merge(self, other):
        if other.radius != self.radius:
            raise ValueError("cannot merge histograms of different radius")
        out = EvfpHistogram(self.radius, dict(self.counts), dict(self.blocks), dict(self.meta))
        for key, n in other.counts.items():
            out.add(key, n)
        for sig, block in other.blocks.items():
            out.blocks.setdefault(sig, block)
        return out

    def distribution(self):
        tot = self.total
        return {key: n / tot for key, n in self.counts.items()}

    def height_marginal(self, d):
        m = np.zeros(d)
        for (_, y), n in self.counts.items():
            m[y] += n
        return m / m.sum()

    def tv(self, other):
        """Total-variation distance between the normalised histograms."""
        p, q = self.distribution(), other.distribution()
        return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in set(p) | set(q))

    def to_csv(self, path, sidecar=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["signature_hash", "height", "count"])
            for (sig, y), n in sorted(self.counts.items()):
                w.writerow([sig, y, n])
        if sidecar is not None:
            with open(sidecar, "w") as fh:
                json.dump(self.blocks, fh, indent=1, sort_keys=True)


def _signature_codes(letters, base, xi, radius, k):
    code = np.zeros(len(xi), dtype=np.int64)
    mult = 1
    for j in range(-radius, radius + 1):
        code += letters[xi + j - base] * mult
        mult *= k
    return code


def _decode(code, radius, k):
    block = []
    for _ in range(2 * radius + 1):
        block.append(code % k)
        code //= k
    return block


def _histogram_from_codes(codes, heights, counts_per, support, radius, hist):
    k = len(support)
    for code, y, n in zip(codes, heights, counts_per):
        block = _decode(int(code), radius, k)
        sig = _block_hash(support, block)
        hist.add(
            (sig, int(y)),
            n,
            [[support[b].quantized()[m].tolist() for m in range(3)] for b in block],
        )
    return hist


def evfp_accumulate(traj, window, radius, time_range=None):
    """Empirical law of (letters around the walker, height) over a time range.

    ``time_range`` is a half-open ``(start, stop)`` pair of times.
    """
    t0, t1 = (0, len(traj)) if time_range is None else time_range
    if not 0 <= t0 < t1 <= len(traj):
        raise ValueError(f"time range {time_range} outside trajectory of length {len(traj)}")
    xi = traj.xi[t0:t1]
    if xi.min() - radius < window.L or xi.max() + radius > window.R:
        raise InsufficientWindow(f"window [{window.L}, {window.R}] too narrow for radius {radius}")
    k = len(window.support)
    codes = _signature_codes(window.letters, window.L, xi, radius, k)
    key = codes * window.d + traj.Y[t0:t1]
    uniq, cnt = np.unique(key, return_counts=True)
    hist = EvfpHistogram(radius, meta={"time_range": [int(t0), int(t1)]})
    return _histogram_from_codes(uniq // window.d, uniq % window.d, cnt, window.support, radius, hist)


def q_reference(model, radius, replicas, seed, left=128, batch=4096, max_steps=100_000):
    """Excursion-weighted reference for the limit law of the environment seen
    from the walker.

    Each replica draws an environment, starts at level 0 with height drawn
    from the collapse of the exit-matrix products to the left, and counts
    every (signature, height) visited before the first hit of level 1.
    Normalising by the total count realises the excursion formula because
    the mean excursion length is the inverse speed.  Excursions longer than
    ``max_steps`` or leaving the drawn letters are discarded and counted in
    ``meta['discarded']``.
    """
    k, d = model.k, model.d
    if k ** (2 * radius + 1) > 10**7:
        raise ValueError("signature space too large for exact binning")
    cum = _support_table(model.support)
    P, R, Q = model.stacks
    counts = np.zeros((k ** (2 * radius + 1), d), dtype=np.int64)
    discarded = 0
    total = 0
    done = 0
    b = 0
    while done < replicas:
        n = min(batch, replicas - done)
        rng = rng_for(seed, "qref-env", b)
        spread = np.inf
        while True:
            letters = draw_letters(model, rng, (n, left + radius + 1))
            lp = letters[:, :left]
            eta, _, _, log_bound = eta_recursion(P[lp], R[lp], Q[lp], np.full((d, d), 1.0 / d))
            ok = np.nonzero(np.max(log_bound, axis=0) <= np.log(SEED_TOL))[0]
            if len(ok) and ok[0] < left - 1:
                pi, spread = pi_from_products(eta[:, ok[0] :])
                if np.max(spread) <= 1e-10:
                    break
            if left >= 1 << 14:
                raise InsufficientWindow("exit-matrix products did not collapse", achieved=float(np.max(spread)))
            left *= 2
        pi = np.clip(pi, 0, None)
        cpi = np.cumsum(pi / pi.sum(axis=1, keepdims=True), axis=1)
        u = rng.random(n)
        start = np.minimum((u[:, None] >= cpi).sum(axis=1), d - 1).astype(np.int64)
        ds, ts = _kernels.excursion_counts(
            np.ascontiguousarray(letters), -left, cum, start, radius, k, max_steps,
            derive_seed(seed, "qref-walk", b) % (2**32), counts,
        )
        discarded += ds
        total += ts
        done += n
        b += 1
    nz = np.argwhere(counts > 0)
    hist = EvfpHistogram(radius)
    hist = _histogram_from_codes(nz[:, 0], nz[:, 1], counts[nz[:, 0], nz[:, 1]], model.support, radius, hist)
    accepted = replicas - discarded
    hist.meta = {
        "replicas": replicas,
        "discarded": int(discarded),
        "mean_excursion": total / accepted if accepted else float("nan"),
    }
    return hist


def evfp_replicas(model, radius, time_range, replicas, seed, start_law=0):
    """Pool :func:`evfp_accumulate` over independent (environment, walk) replicas."""
    t0, t1 = time_range
    hist = EvfpHistogram(radius)
    for i in range(replicas):
        traj, window = simulate_model(model, derive_seed(seed, "evfp", i), start_law, horizon=t1, right=t1 + radius + 2)
        hist = hist.merge(evfp_accumulate(traj, window, radius, (t0, t1)))
    hist.meta = {"replicas": replicas, "time_range": [t0, t1]}
    return hist
