"""Environment letters, environment laws and realized windows.

An environment letter is a triple of nonnegative (d, d) matrices
``(p, r, q)`` whose sum is stochastic: ``p`` moves one layer to the right,
``r`` stays in the layer and ``q`` moves one layer to the left.  Only
finitely supported laws are representable: i.i.d., periodic and
stationary finite-state Markov sequences of letters.

Realizations are addressed by absolute layer index.  Letters are generated
in chunks of ``CHUNK`` layers keyed by ``(seed, chunk index)``, so any
window ``[L, R]`` is the restriction of one two-sided sequence determined
by ``(model, seed)`` and windows can be widened without changing the
letters already seen.
"""

import csv
import hashlib
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import EmbeddingError, ModelError
from .seeding import rng_for
from .smallmat import mat_norm

KINDS = ("iid", "periodic", "finite-markov")
CHUNK = 4096
ROW_TOL = 1e-12
QUANT_DIGITS = 6


@dataclass(frozen=True, eq=False)
class LayerTriple:
    """One environment letter ``(p, r, q)``."""

    p: np.ndarray
    r: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        mats = []
        for name in ("p", "r", "q"):
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim == 0:
                a = a.reshape(1, 1)
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise ModelError(f"{name} must be a square matrix, got {a.shape}")
            if not np.all(np.isfinite(a)) or np.any(a < 0):
                raise ModelError(f"{name} must be finite and nonnegative")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            mats.append(a)
        if len({m.shape for m in mats}) != 1:
            raise ModelError("p, r, q must share one order")
        rows = (mats[0] + mats[1] + mats[2]).sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > ROW_TOL:
            raise ModelError(f"row sums of p + r + q are {rows}, not 1")

    @property
    def d(self):
        return self.p.shape[0]

    def quantized(self):
        return np.round(np.stack([self.p, self.r, self.q]), QUANT_DIGITS)

    def signature_bytes(self):
        # +0.0 normalises negative zeros produced by rounding
        return (self.quantized() + 0.0).tobytes()


def _as_triple(x):
    if isinstance(x, LayerTriple):
        return x
    if isinstance(x, dict):
        return LayerTriple(x["p"], x["r"], x["q"])
    p, r, q = x
    return LayerTriple(p, r, q)


@dataclass(frozen=True, eq=False)
class EnvironmentModel:
    """A finitely supported stationary law of environment letters.

    Parameters
    ----------
    kind : {'iid', 'periodic', 'finite-markov'}
    support : sequence of LayerTriple
    weights : array_like
        Probability vector over ``support`` (iid), transition matrix over
        support indices (finite-markov) or the cyclic order of support
        indices (periodic, default ``range(len(support))``).
    epsilon_floor : float
        Declared lower bound on the row sums of every ``p``.
    """

    kind: str
    support: tuple
    weights: np.ndarray = None
    epsilon_floor: float = 0.0
    name: str = ""
    note: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        support = tuple(_as_triple(t) for t in self.support)
        if not support:
            raise ModelError("support must be nonempty")
        if len({t.d for t in support}) != 1:
            raise ModelError("all support letters must share the same d")
        object.__setattr__(self, "support", support)
        k = len(support)
        if self.epsilon_floor < 0:
            raise ModelError("epsilon_floor must be >= 0")

        w = self.weights
        if self.kind == "iid":
            w = np.full(k, 1.0 / k) if w is None else np.asarray(w, dtype=float)
            if w.shape != (k,) or np.any(w < 0) or abs(w.sum() - 1.0) > ROW_TOL:
                raise ModelError("iid weights must be a probability vector over the support")
        elif self.kind == "finite-markov":
            if w is None:
                raise ModelError("finite-markov needs a transition matrix")
            w = np.asarray(w, dtype=float)
            if w.shape != (k, k) or np.any(w < 0) or np.max(np.abs(w.sum(axis=1) - 1)) > ROW_TOL:
                raise ModelError("finite-markov weights must be a stochastic k x k matrix")
            ncomp, _ = connected_components(w > 0, directed=True, connection="strong")
            if ncomp != 1:
                raise ModelError("finite-markov transition matrix is not irreducible")
        else:
            w = np.arange(k) if w is None else np.asarray(w)
            if w.ndim != 1 or len(w) == 0 or not np.issubdtype(w.dtype, np.integer):
                raise ModelError("periodic weights must be a sequence of support indices")
            if np.any(w < 0) or np.any(w >= k):
                raise ModelError("periodic order refers to a missing support index")
        w = np.array(w)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def d(self):
        return self.support[0].d

    @property
    def k(self):
        return len(self.support)

    @cached_property
    def stacks(self):
        """Support matrices stacked as three ``(k, d, d)`` arrays."""
        P = np.stack([t.p for t in self.support])
        R = np.stack([t.r for t in self.support])
        Q = np.stack([t.q for t in self.support])
        return P, R, Q

    @cached_property
    def stationary(self):
        """Stationary probability of each support letter."""
        k = self.k
        if self.kind == "iid":
            return np.array(self.weights, dtype=float)
        if self.kind == "periodic":
            counts = np.bincount(self.weights, minlength=k).astype(float)
            return counts / counts.sum()
        # solve pi (T - I) = 0 with sum(pi) = 1
        A = np.vstack([(self.weights - np.eye(k)).T, np.ones(k)])
        b = np.zeros(k + 1)
        b[-1] = 1.0
        pi = np.linalg.lstsq(A, b, rcond=None)[0]
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()

    def to_dict(self):
        return {
            "kind": self.kind,
            "d": self.d,
            "name": self.name,
            "support": [
                {"p": t.p.tolist(), "r": t.r.tolist(), "q": t.q.tolist()} for t in self.support
            ],
            "weights": np.asarray(self.weights).tolist(),
            "epsilon_floor": float(self.epsilon_floor),
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            support = [_as_triple(s) for s in doc["support"]]
            kind = doc["kind"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"malformed model document: {exc}") from exc
        if "d" in doc and any(t.d != int(doc["d"]) for t in support):
            raise ModelError("declared d does not match support matrices")
        weights = doc.get("weights")
        if kind == "periodic" and weights is not None:
            weights = np.asarray(weights, dtype=int)
        return cls(
            kind=kind,
            support=tuple(support),
            weights=weights,
            epsilon_floor=float(doc.get("epsilon_floor", 0.0)),
            name=doc.get("name", ""),
            note=doc.get("note", ""),
        )

    @cached_property
    def model_hash(self):
        doc = self.to_dict()
        doc.pop("name")
        doc.pop("note")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_model(path):
    """Read an environment model from a YAML (or JSON) document."""
    import yaml

    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if isinstance(doc, dict) and "model" in doc and "support" not in doc:
        doc = doc["model"]
    return EnvironmentModel.from_dict(doc)


def save_model(model, path):
    import yaml

    with open(path, "w") as fh:
        yaml.safe_dump(model.to_dict(), fh, sort_keys=False)


# --------------------------------------------------------------------------
# realizations


def _markov_run(T, start, n, rng):
    cum = np.cumsum(T, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(n)
    out = np.empty(n, dtype=np.int64)
    s = start
    for t in range(n):
        s = int(np.searchsorted(cum[s], u[t], side="right"))
        out[t] = s
    return out


def _chunk_letters(model, seed, c):
    k = model.k
    if model.kind == "periodic":
        idx = np.arange(c * CHUNK, (c + 1) * CHUNK)
        return model.weights[idx % len(model.weights)].astype(np.int64)
    if model.kind == "iid":
        if k == 1:
            return np.zeros(CHUNK, dtype=np.int64)
        return rng_for(seed, "env-chunk", c).choice(k, size=CHUNK, p=model.weights)
    # finite-markov: chunk 0 starts from the stationary law at index 0,
    # chunks to the right continue forward, chunks to the left run the
    # time-reversed chain backwards from index 0.
    T = model.weights
    pi = model.stationary
    rng0 = rng_for(seed, "env-chunk", 0)
    first = int(rng0.choice(k, p=pi))
    chunk = np.concatenate([[first], _markov_run(T, first, CHUNK - 1, rng0)])
    if c == 0:
        return chunk
    if c > 0:
        for j in range(1, c + 1):
            chunk = _markov_run(T, int(chunk[-1]), CHUNK, rng_for(seed, "env-chunk", j))
        return chunk
    with np.errstate(divide="ignore", invalid="ignore"):
        Trev = (T.T * pi[None, :]) / pi[:, None]
    for j in range(-1, c - 1, -1):
        back = _markov_run(Trev, int(chunk[0]), CHUNK, rng_for(seed, "env-chunk", j))
        chunk = back[::-1].copy()
    return chunk


def sample_letters(model, L, R, seed):
    """Support indices of the letters at layers ``L..R`` of realization ``seed``."""
    if L > R:
        raise ValueError(f"empty range [{L}, {R}]")
    c0, c1 = L // CHUNK, R // CHUNK
    parts = [_chunk_letters(model, seed, c) for c in range(c0, c1 + 1)]
    full = np.concatenate(parts)
    off = L - c0 * CHUNK
    return full[off : off + (R - L + 1)]


def draw_letters(model, rng, shape):
    """Independent stationary letter sequences along the last axis of ``shape``.

    Used by ensemble estimators; a periodic law is drawn with a uniformly
    random phase so that the result is stationary.
    """
    shape = tuple(np.atleast_1d(shape))
    k = model.k
    if model.kind == "iid":
        if k == 1:
            return np.zeros(shape, dtype=np.int64)
        return rng.choice(k, size=shape, p=model.weights)
    if model.kind == "periodic":
        order = model.weights
        phase = rng.integers(0, len(order), size=shape[:-1] + (1,))
        return order[(phase + np.arange(shape[-1])) % len(order)]
    cum = np.cumsum(model.weights, axis=1)
    cum[:, -1] = 1.0
    n = shape[-1]
    batch = int(np.prod(shape[:-1], dtype=np.int64))
    out = np.empty((batch, n), dtype=np.int64)
    out[:, 0] = rng.choice(k, size=batch, p=model.stationary)
    u = rng.random((batch, n))
    for t in range(1, n):
        c = cum[out[:, t - 1]]
        out[:, t] = np.minimum((u[:, t, None] >= c).sum(axis=1), k - 1)
    return out.reshape(shape)


@dataclass(frozen=True, eq=False)
class EnvironmentWindow:
    """Letters for the layers ``base .. base + len - 1``.

    ``letters`` are indices into ``support`` (a tuple of LayerTriple).
    """

    base: int
    letters: np.ndarray
    support: tuple
    model_id: str = ""
    seed: int = None

    def __post_init__(self):
        letters = np.asarray(self.letters, dtype=np.int64)
        if letters.ndim != 1 or len(letters) == 0:
            raise ValueError("a window needs at least one letter")
        letters.setflags(write=False)
        object.__setattr__(self, "letters", letters)
        object.__setattr__(self, "support", tuple(_as_triple(t) for t in self.support))

    @classmethod
    def from_triples(cls, triples, base=0, model_id="", seed=None):
        """Build a window from explicit letters, deduplicating equal ones."""
        support, index, letters = [], {}, []
        for t in triples:
            t = _as_triple(t)
            key = t.signature_bytes()
            if key not in index:
                index[key] = len(support)
                support.append(t)
            letters.append(index[key])
        return cls(base, np.array(letters), tuple(support), model_id, seed)

    @property
    def L(self):
        return self.base

    @property
    def R(self):
        return self.base + len(self.letters) - 1

    @property
    def d(self):
        return self.support[0].d

    def __len__(self):
        return len(self.letters)

    def covers(self, lo, hi):
        return self.L <= lo and hi <= self.R

    def triple(self, n):
        if not self.L <= n <= self.R:
            raise IndexError(f"layer {n} outside window [{self.L}, {self.R}]")
        return self.support[self.letters[n - self.base]]

    __getitem__ = triple

    @property
    def triples(self):
        return [self.support[i] for i in self.letters]

    @cached_property
    def arrays(self):
        """``(p, r, q)`` stacked per layer, each ``(n, d, d)``."""
        P = np.stack([t.p for t in self.support])
        R = np.stack([t.r for t in self.support])
        Q = np.stack([t.q for t in self.support])
        return P[self.letters], R[self.letters], Q[self.letters]

    def restrict(self, lo, hi):
        if not self.covers(lo, hi):
            raise IndexError(f"[{lo}, {hi}] not inside [{self.L}, {self.R}]")
        return EnvironmentWindow(
            lo, self.letters[lo - self.base : hi - self.base + 1], self.support, self.model_id, self.seed
        )

    def to_csv(self, path):
        d = self.d
        header = ["n"] + [f"{m}{i + 1}{j + 1}" for m in "prq" for i in range(d) for j in range(d)]
        P, R, Q = self.arrays
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for off in range(len(self)):
                row = [self.base + off]
                for m in (P, R, Q):
                    row.extend(repr(float(x)) for x in m[off].ravel())
                w.writerow(row)


def sample_window(model, L, R, seed):
    """Realize layers ``L..R`` of the environment determined by ``(model, seed)``.

    Deterministic in ``(model, L, R, seed)``; overlapping windows with the
    same seed agree on their common layers.
    """
    if not isinstance(model, EnvironmentModel):
        raise ModelError("sample_window needs an EnvironmentModel")
    if L > R:
        raise ValueError(f"need L <= R, got {L} > {R}")
    letters = sample_letters(model, L, R, seed)
    return EnvironmentWindow(L, letters, model.support, model.model_hash, seed)


# --------------------------------------------------------------------------
# Condition C


@dataclass
class ConditionReport:
    C1: str
    C2: bool
    C3: bool
    epsilon_floor_verified: bool
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.C2 and self.C3 and self.epsilon_floor_verified

    def as_dict(self):
        return {
            "C1": self.C1,
            "C2": self.C2,
            "C3": self.C3,
            "epsilon_floor_verified": self.epsilon_floor_verified,
            "details": self.details,
        }


def check_condition_C(model):
    """Structural checks of the letters of a finitely supported law.

    C2 reduces to ``||r + p|| < 1`` and ``||r + q|| < 1`` for every atom,
    C3 to positive column sums of ``p`` and ``q``.  C4 needs the exit
    matrices and is checked by :func:`stripwalk.exitprob.verify_C4`.
    """
    c1 = {
        "iid": "iid (stationary, ergodic)",
        "periodic": "periodic with uniform phase (stationary, ergodic)",
        "finite-markov": "irreducible finite-state Markov from stationary law (stationary, ergodic)",
    }[model.kind]
    P, R, Q = model.stacks
    rp = mat_norm(R + P)
    rq = mat_norm(R + Q)
    c2 = bool(np.all(rp < 1.0) and np.all(rq < 1.0))
    c3 = bool(np.all(P.sum(axis=1) > 0) and np.all(Q.sum(axis=1) > 0))
    prow = P.sum(axis=2)
    eps_ok = bool(np.all(prow > model.epsilon_floor))
    details = {
        "norm_r_plus_p": rp.tolist(),
        "norm_r_plus_q": rq.tolist(),
        "min_p_column_sum": float(P.sum(axis=1).min()),
        "min_q_column_sum": float(Q.sum(axis=1).min()),
        "min_p_row_sum": float(prow.min()),
    }
    return ConditionReport(c1, c2, c3, eps_ok, details)


# --------------------------------------------------------------------------
# classical models on the strip


def embed_nearest_neighbor(p_vals, r_vals=None, q_vals=None, weights=None, epsilon_floor=0.0):
    """d = 1 model of the nearest-neighbour walk on Z with i.i.d. site letters.

    ``q_vals`` defaults to ``1 - p - r``.
    """
    p = np.atleast_1d(np.asarray(p_vals, dtype=float))
    r = np.zeros_like(p) if r_vals is None else np.atleast_1d(np.asarray(r_vals, dtype=float))
    q = 1.0 - p - r if q_vals is None else np.atleast_1d(np.asarray(q_vals, dtype=float))
    if not p.shape == r.shape == q.shape:
        raise ModelError("p, r, q must have one value per atom")
    if np.any(p <= 0) or np.any(q <= 0):
        raise ModelError("nearest-neighbour atoms need p > 0 and q > 0 (Condition C2/C3)")
    if np.any(r < 0) or np.max(np.abs(p + r + q - 1.0)) > ROW_TOL:
        raise ModelError("each atom needs p + r + q = 1 with r >= 0")
    support = tuple(LayerTriple([[pi]], [[ri]], [[qi]]) for pi, ri, qi in zip(p, r, q))
    return EnvironmentModel("iid", support, weights, epsilon_floor, name="nearest-neighbor")


def embed_bounded_jump(jump_laws, weights=None, block=None, epsilon_floor=0.0):
    """Embed a walk on Z with bounded jumps into a strip of width ``block``.

    Parameters
    ----------
    jump_laws : (k, 2J+1) array_like
        Row ``a`` is the jump distribution of site atom ``a`` on
        ``-J, ..., J``.
    weights : (k,) array_like, optional
        i.i.d. law of the site atoms.
    block : int, optional
        Block width L, defaults to J.  Site ``m = k L + i`` maps to strip
        state ``(k, i + 1)``; one strip step is one walk step.  The strip
        letter of a block is the L-tuple of its site atoms, so the support
        has ``k**L`` letters with product weights.
    """
    laws = np.atleast_2d(np.asarray(jump_laws, dtype=float))
    if laws.shape[1] % 2 != 1:
        raise EmbeddingError("jump laws need odd length 2J + 1")
    J = laws.shape[1] // 2
    if J < 1:
        raise EmbeddingError("jump range must be at least 1")
    L = J if block is None else int(block)
    if np.any(laws < 0) or np.max(np.abs(laws.sum(axis=1) - 1.0)) > ROW_TOL:
        raise EmbeddingError("each jump law must be a probability vector")
    if L < J:
        # a jump of size > L would skip a whole block
        far = np.abs(np.arange(-J, J + 1)) > L
        if np.any(laws[:, far] > 0):
            raise EmbeddingError(f"jump mass beyond +-{L} escapes adjacent blocks")
        laws = laws[:, J - L : J + L + 1]
        J = L
    k = len(laws)
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    jumps = np.arange(-J, J + 1)

    support, probs = [], []
    for combo in itertools.product(range(k), repeat=L):
        p = np.zeros((L, L))
        r = np.zeros((L, L))
        q = np.zeros((L, L))
        for i, atom in enumerate(combo):
            for jump, mass in zip(jumps, laws[atom]):
                if mass == 0:
                    continue
                shift, j = divmod(i + int(jump), L)
                target = {1: p, 0: r, -1: q}[shift]
                target[i, j] += mass
        support.append(LayerTriple(p, r, q))
        probs.append(float(np.prod(w[list(combo)])))
    probs = np.array(probs)
    return EnvironmentModel(
        "iid",
        tuple(support),
        probs / probs.sum(),
        epsilon_floor,
        name="nearest-neighbor" if L == 1 else f"bounded-jump(L={L})",
        note="" if L == 1 else "blocking of width L is one admissible embedding choice",
    )


def persistent_walk_model(alpha_right, alpha_left):
    """Persistent walk on Z as a homogeneous d = 2 strip walk.

    Height 1 means the last move was to the right (continue right with
    probability ``alpha_right``), height 2 that it was to the left
    (continue left with probability ``alpha_left``).  A layer is always
    entered from the left at height 1, so the letter has a zero column in
    ``p`` and Condition C3/C4 fail structurally; the exit recursion and the
    Lyapunov exponent ``log(alpha_left / alpha_right)`` remain well defined.
    """
    for a in (alpha_right, alpha_left):
        if not 0.0 < a < 1.0:
            raise ModelError("persistence parameters must lie strictly inside (0, 1)")
    p = [[alpha_right, 0.0], [1.0 - alpha_left, 0.0]]
    q = [[0.0, 1.0 - alpha_right], [0.0, alpha_left]]
    r = [[0.0, 0.0], [0.0, 0.0]]
    return EnvironmentModel(
        "iid",
        (LayerTriple(p, r, q),),
        name=f"persistent({alpha_right},{alpha_left})",
        note="direction-memory encoding; one admissible choice",
    )
