"""Group of visual dictionaries: training, scoring, pools and online updates.

A word ``x`` (length ``T``) is coded against a dictionary ``D`` (``T x d``,
unit columns) by ordinary least squares, and its reconstruction error is the
unsquared residual norm ``||x - D beta||``. A group is an ordered list of
dictionaries sharing one error bound ``lam``: a word is normal if some
dictionary reconstructs it with error below ``lam``, and the first such
dictionary (in training order) claims it.

Training is a greedy cover. Each new dictionary is fitted to the words that
no earlier dictionary covers, using trimmed block-coordinate descent so that
it locks onto one coherent group of words rather than the average of all of
them. Training stops once ``coverage`` of the words are covered or ``s_max``
dictionaries exist.

Online maintenance follows the detect/update split: accepted words go to
their dictionary's pool; a full pool triggers a projected gradient step on
that dictionary; a word accepted by two dictionaries latches a global
retrain from all pooled words. New dictionaries are built off to the side
and installed by swapping in a fresh immutable group.
"""

from __future__ import annotations

import io
import math
import warnings
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import CoverageWarning, InsufficientWords, ModelMismatch, PoolNotReady, TokenMismatch
from .features import VisualWord

RIDGE = 1e-8
COND_LIMIT = 1e10
MODEL_MAGIC = "crowdflux-model"
MODEL_VERSION = 1
CLASSIFY_BLOCK = 64


def _as_matrix(words) -> np.ndarray:
    if isinstance(words, np.ndarray):
        return np.atleast_2d(np.asarray(words, dtype=float))
    rows = [w.values if isinstance(w, VisualWord) else np.asarray(w, dtype=float) for w in words]
    if not rows:
        return np.zeros((0, 0))
    return np.vstack(rows)


def normalize_columns(atoms: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(atoms, axis=0)
    out = atoms.copy()
    ok = norms > 0
    out[:, ok] /= norms[ok]
    return out


class Dictionary:
    """Immutable ``T x d`` dictionary with unit-norm columns."""

    __slots__ = ("id", "atoms", "_factor")

    def __init__(self, atoms: np.ndarray, id: int = 0, normalize: bool = True):
        atoms = np.array(atoms, dtype=float)
        if atoms.ndim != 2:
            raise ValueError("atoms must be a T x d matrix")
        if normalize:
            atoms = normalize_columns(atoms)
        norms = np.linalg.norm(atoms, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("dictionary columns must have unit norm")
        atoms.setflags(write=False)
        self.atoms = atoms
        self.id = int(id)
        self._factor = None

    @property
    def T(self) -> int:
        return self.atoms.shape[0]

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    def with_id(self, new_id: int) -> "Dictionary":
        return Dictionary(self.atoms, new_id, normalize=False)

    def _gram_factor(self):
        if self._factor is None:
            gram = self.atoms.T @ self.atoms
            w = np.linalg.eigvalsh(gram)
            if w[0] <= 0 or w[-1] / w[0] > COND_LIMIT:
                gram = gram + RIDGE * np.eye(self.d)
            self._factor = cho_factor(gram)
        return self._factor

    def code(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Least-squares coefficients (N, d) and residual norms (N,) for rows of ``X``."""
        X = np.atleast_2d(X)
        beta = cho_solve(self._gram_factor(), self.atoms.T @ X.T).T
        resid = X - beta @ self.atoms.T
        return beta, np.linalg.norm(resid, axis=1)

    def __repr__(self):
        return f"Dictionary(id={self.id}, T={self.T}, d={self.d})"


@dataclass(frozen=True)
class SparseCode:
    dictionary_id: int
    beta: np.ndarray
    error: float


def least_squares_code(word, D: Dictionary) -> SparseCode:
    x = word.values if isinstance(word, VisualWord) else np.asarray(word, dtype=float)
    if x.shape != (D.T,):
        raise ValueError(f"word length {x.shape} does not match dictionary T={D.T}")
    beta, err = D.code(x[None, :])
    return SparseCode(D.id, beta[0], float(err[0]))


@dataclass(frozen=True)
class TrainingParams:
    lam: float = 0.08
    d: int = 10
    s_max: int = 100
    epochs: int = 15
    seed: int = 0
    coverage: float = 0.99
    restarts: int = 4
    trim: float = 0.5


class GroupDictionary:
    """Ordered, immutable collection of dictionaries plus the error bound."""

    def __init__(self, dictionaries: Sequence[Dictionary], lam: float, meta: dict | None = None):
        if not dictionaries:
            raise ValueError("a group needs at least one dictionary")
        Ts = {D.T for D in dictionaries}
        if len(Ts) != 1:
            raise ValueError("all dictionaries must share T")
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.dictionaries = tuple(dictionaries)
        self.lam = float(lam)
        self.meta = dict(meta or {})
        self.uncovered = int(self.meta.get("uncovered", 0))

    @property
    def s(self) -> int:
        return len(self.dictionaries)

    @property
    def T(self) -> int:
        return self.dictionaries[0].T

    @property
    def d(self) -> int:
        return self.dictionaries[0].d

    def ids(self) -> list[int]:
        return [D.id for D in self.dictionaries]

    def errors(self, X: np.ndarray) -> np.ndarray:
        """Reconstruction errors of rows of ``X`` under every dictionary, shape (N, s)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.T:
            raise ValueError(f"words have length {X.shape[1]}, group expects T={self.T}")
        return np.column_stack([D.code(X)[1] for D in self.dictionaries])

    def __repr__(self):
        return f"GroupDictionary(s={self.s}, T={self.T}, d={self.d}, lam={self.lam})"


@dataclass(frozen=True)
class Classification:
    normal: bool
    dictionary_id: int | None
    error: float  # smallest error over the group
    overlap: bool  # a second dictionary also accepts the word
    second_id: int | None = None

    @property
    def label(self) -> str:
        return "Normal" if self.normal else "Abnormal"


def classify_errors(errs: np.ndarray, lam: float, ids: Sequence[int]) -> list[Classification]:
    """Scan each row of an (N, s) error table in dictionary order."""
    passing = errs < lam
    out = []
    for row, ok in zip(errs, passing):
        hits = np.flatnonzero(ok)
        best = float(row.min())
        if hits.size == 0:
            out.append(Classification(False, None, best, False))
        else:
            second = ids[hits[1]] if hits.size > 1 else None
            out.append(Classification(True, ids[hits[0]], best, hits.size > 1, second))
    return out


def classify_words(words, group: GroupDictionary) -> list[Classification]:
    X = _as_matrix(words)
    return classify_errors(group.errors(X), group.lam, group.ids())


def classify_word(word, group: GroupDictionary) -> Classification:
    return classify_words([word], group)[0]


# -- training -------------------------------------------------------------------

def _bcd_sweep(D: np.ndarray, X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """One block-coordinate pass of the projected gradient step, one column at a time.

    Column ``j`` moves along minus the gradient of ``sum ||x - D beta||^2`` with
    step ``1 / (2 A_jj)`` (the exact minimiser along that block), then is
    projected back to unit norm.
    """
    A = beta.T @ beta
    B = X.T @ beta
    D = D.copy()
    for j in range(D.shape[1]):
        if A[j, j] <= 1e-12:
            continue
        u = D[:, j] + (B[:, j] - D @ A[:, j]) / A[j, j]
        nrm = np.linalg.norm(u)
        if nrm > 0:
            D[:, j] = u / nrm
    return D


def _init_atoms(X: np.ndarray, d: int, rng: np.random.Generator) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    candidates = np.flatnonzero(norms > 1e-12)
    if candidates.size:
        _, first = np.unique(X[candidates], axis=0, return_index=True)
        candidates = candidates[np.sort(first)]
    take = min(d, candidates.size)
    picked = rng.choice(candidates, size=take, replace=False) if take else np.array([], dtype=int)
    atoms = X[picked].T if take else np.zeros((X.shape[1], 0))
    if take < d:
        atoms = np.column_stack([atoms, rng.standard_normal((X.shape[1], d - take))])
    return normalize_columns(atoms)


def _fit_one(X: np.ndarray, params: TrainingParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Fit one dictionary to the residual words; returns (atoms, errors)."""
    M = X.shape[0]
    floor = min(M, max(2 * params.d, math.ceil(params.trim * M)))
    best = None
    for _ in range(max(1, params.restarts)):
        atoms = _init_atoms(X, params.d, rng)
        for _ in range(params.epochs):
            D = Dictionary(atoms, normalize=False)
            beta, errs = D.code(X)
            m = max(int((errs < params.lam).sum()), floor)
            inl = np.argsort(errs, kind="stable")[:m]
            atoms = _bcd_sweep(atoms, X[inl], beta[inl])
        errs = Dictionary(atoms, normalize=False).code(X)[1]
        score = int((errs < params.lam).sum())
        if best is None or score > best[0]:
            best = (score, atoms, errs)
    return best[1], best[2]


def train_group(words, lam: float | None = None, d: int | None = None, s_max: int | None = None,
                epochs: int | None = None, seed: int | None = None,
                params: TrainingParams | None = None) -> GroupDictionary:
    """Greedy sparse-cover training of a dictionary group.

    Keyword arguments override the matching fields of ``params``. Emits a
    :class:`CoverageWarning` when ``s_max`` is reached (or no further
    dictionary makes progress) with more than ``1 - coverage`` of the words
    still uncovered; the count is stored on ``group.uncovered``.
    """
    params = params or TrainingParams()
    overrides = {k: v for k, v in dict(lam=lam, d=d, s_max=s_max, epochs=epochs, seed=seed).items()
                 if v is not None}
    params = replace(params, **overrides)
    X = _as_matrix(words)
    N = X.shape[0]
    if params.lam <= 0:
        raise ValueError("lambda must be positive")
    if N < params.d or N == 0:
        raise InsufficientWords(f"need at least d={params.d} words, got {N}")
    T = X.shape[1]
    if params.d > T // 2:
        raise ValueError(f"d={params.d} exceeds T/2={T // 2}")

    rng = np.random.default_rng(params.seed)
    remaining = np.arange(N)
    dictionaries: list[Dictionary] = []
    target = math.ceil(params.coverage * N)
    while remaining.size and len(dictionaries) < params.s_max:
        atoms, errs = _fit_one(X[remaining], params, rng)
        covered = errs < params.lam
        if not covered.any() and dictionaries:
            break
        dictionaries.append(Dictionary(atoms, len(dictionaries), normalize=False))
        remaining = remaining[~covered]
        if N - remaining.size >= target:
            break

    uncovered = int(remaining.size)
    if N - uncovered < target:
        warnings.warn(f"training stopped with {uncovered} of {N} words uncovered "
                      f"(s={len(dictionaries)}, s_max={params.s_max})", CoverageWarning, stacklevel=2)
    meta = {"seed": params.seed, "uncovered": uncovered, "words": N, "training": asdict(params)}
    return GroupDictionary(dictionaries, params.lam, meta)


# -- pools and updates ---------------------------------------------------------------

@dataclass(frozen=True)
class PoolState:
    count: int
    ready: bool


@dataclass
class WordPool:
    """Bounded buffer of accepted words for one dictionary (oldest evicted first)."""

    dictionary_id: int
    capacity: int
    words: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("pool capacity must be >= 1")
        self.words = deque(self.words, maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.words)

    @property
    def ready(self) -> bool:
        return len(self.words) >= self.capacity

    def matrix(self) -> np.ndarray:
        return _as_matrix(list(self.words))

    def drain(self) -> list[VisualWord]:
        out = list(self.words)
        self.words.clear()
        return out


def deposit_word(pool: WordPool, word: VisualWord) -> PoolState:
    if word.token != pool.dictionary_id:
        raise TokenMismatch(f"word tagged {word.token} offered to pool of dictionary {pool.dictionary_id}")
    pool.words.append(word)
    return PoolState(len(pool.words), pool.ready)


def pool_loss(D: Dictionary, X: np.ndarray) -> float:
    """Sum of squared least-squares residuals of rows of ``X``."""
    if X.size == 0:
        return 0.0
    return float(np.sum(D.code(X)[1] ** 2))


def gradient_step(D: Dictionary, X: np.ndarray, delta: float) -> Dictionary:
    """``Pi[D - delta * grad L]`` with codes refreshed for ``D`` first."""
    beta, _ = D.code(X)
    resid = X - beta @ D.atoms.T
    grad = -2.0 * resid.T @ beta
    return Dictionary(D.atoms - delta * grad, D.id, normalize=True)


def refine_dictionary(D: Dictionary, X: np.ndarray, delta: float = 1e-4, passes: int = 1,
                      max_halvings: int = 30) -> Dictionary:
    """Apply ``passes`` projected gradient steps, halving the step whenever one would raise the loss."""
    current = D
    for _ in range(passes):
        before = pool_loss(current, X)
        step = delta
        for _ in range(max_halvings + 1):
            candidate = gradient_step(current, X, step)
            if pool_loss(candidate, X) <= before:
                current = candidate
                break
            step /= 2.0
    return current


def local_update(D: Dictionary, pool: WordPool, delta: float = 1e-4, passes: int = 1,
                 force: bool = False) -> Dictionary:
    """Refine ``D`` on its pool and drain the pool.

    Raises :class:`PoolNotReady` unless the pool is full (or ``force``).
    The returned dictionary replaces ``D`` wholesale; ``D`` is untouched.
    """
    if pool.dictionary_id != D.id:
        raise TokenMismatch(f"pool belongs to dictionary {pool.dictionary_id}, not {D.id}")
    if not (pool.ready or force):
        raise PoolNotReady(f"pool holds {len(pool)} of {pool.capacity} words")
    X = pool.matrix()
    new = refine_dictionary(D, X, delta, passes) if X.size else D
    pool.drain()
    return new


def global_update(group: GroupDictionary, pools: Iterable[WordPool], params: TrainingParams,
                  extra_words: Sequence[VisualWord] = (), min_words: int | None = None) -> GroupDictionary:
    """Retrain the whole group from every pooled word plus ``extra_words``.

    Raises :class:`InsufficientWords` (leaving pools untouched) when fewer
    than ``max(d, min_words)`` words are available; otherwise drains every
    pool and returns the new group.
    """
    pools = list(pools)
    words = [w for p in pools for w in p.words] + list(extra_words)
    need = max(params.d, min_words or 0)
    if len(words) < need:
        raise InsufficientWords(f"global update needs {need} pooled words, have {len(words)}")
    params = replace(params, lam=group.lam)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoverageWarning)
        new = train_group(words, params=params)
    for p in pools:
        p.drain()
    return new


# -- online maintenance ----------------------------------------------------------------

@dataclass
class UpdateStats:
    local: int = 0
    global_: int = 0
    deferred: int = 0
    overlaps: int = 0


class OnlineCodebook:
    """Detection against a group snapshot with pooled local and latched global updates.

    ``classify`` only reads the current snapshot and may fan out over worker
    threads. ``absorb`` routes results into pools and latches the overlap
    signal; ``maintain`` is the safe point where full pools are refined and a
    latched global retrain runs. Both install their result by swapping in a
    new :class:`GroupDictionary`, so a concurrent reader always sees a
    complete group.
    """

    def __init__(self, group: GroupDictionary, n_pool: int, params: TrainingParams,
                 delta: float = 1e-4, passes: int = 1, update: bool = True, workers: int = 1,
                 min_global_words: int = 0):
        self.group = group
        self.n_pool = int(n_pool)
        self.params = replace(params, lam=group.lam, d=group.d)
        self.delta = delta
        self.passes = passes
        self.update = update
        self.workers = max(1, int(workers))
        self.min_global_words = min_global_words
        self.pools = {i: WordPool(i, self.n_pool) for i in group.ids()}
        self.latched = False
        self.trigger: list[VisualWord] = []
        self.stats = UpdateStats()
        self._generation = 0

    @property
    def generation(self) -> int:
        """Count of snapshot swaps so far."""
        return self._generation

    def classify(self, words: Sequence[VisualWord]) -> list[Classification]:
        group = self.group  # snapshot
        X = _as_matrix(words)
        if len(words) == 0:
            return []
        # fixed-size blocks keep the arithmetic identical for any worker count
        blocks = [X[i:i + CLASSIFY_BLOCK] for i in range(0, len(X), CLASSIFY_BLOCK)]
        if self.workers == 1 or len(blocks) == 1:
            parts = [group.errors(b) for b in blocks]
        else:
            with ThreadPoolExecutor(self.workers) as ex:
                parts = list(ex.map(group.errors, blocks))
        return classify_errors(np.vstack(parts), group.lam, group.ids())

    def absorb(self, words: Sequence[VisualWord], results: Sequence[Classification]) -> None:
        if not self.update:
            return
        for word, res in zip(words, results):
            if not res.normal:
                continue
            # a word shorter than lam passes every dictionary trivially and says nothing about drift
            if res.overlap and np.linalg.norm(word.values) >= self.group.lam:
                self.stats.overlaps += 1
                self.latched = True
                self.trigger.append(word)
            else:
                deposit_word(self.pools[res.dictionary_id], word.tagged(res.dictionary_id))

    def maintain(self) -> None:
        if not self.update:
            return
        ready = [D for D in self.group.dictionaries if self.pools[D.id].ready]
        if ready:
            jobs = [(D, self.pools[D.id]) for D in ready]
            if self.workers > 1 and len(jobs) > 1:
                with ThreadPoolExecutor(self.workers) as ex:
                    new = list(ex.map(lambda job: local_update(job[0], job[1], self.delta, self.passes), jobs))
            else:
                new = [local_update(D, p, self.delta, self.passes) for D, p in jobs]
            replaced = {D.id: D for D in new}
            dicts = [replaced.get(D.id, D) for D in self.group.dictionaries]
            self._swap(GroupDictionary(dicts, self.group.lam, self.group.meta))
            self.stats.local += len(new)
        if self.latched:
            try:
                new_group = global_update(self.group, self.pools.values(), self.params,
                                          self.trigger, self.min_global_words)
            except InsufficientWords:
                self.stats.deferred += 1
                return
            self.pools = {i: WordPool(i, self.n_pool) for i in new_group.ids()}
            self.latched = False
            self.trigger = []
            self.stats.global_ += 1
            self._swap(new_group)

    def _swap(self, group: GroupDictionary) -> None:
        self.group = group
        self._generation += 1


# -- model file -------------------------------------------------------------------------

def dumps_model(group: GroupDictionary, config: dict | None = None) -> str:
    """Text model container.

    Layout::

        crowdflux-model 1
        lambda=<float>
        T=<int>
        d=<int>
        s=<int>
        seed=<int>
        config.<key>=<value>        (zero or more)
        dictionary <id>
        <T lines of d space-separated floats, row-major>
        ...
        end

    Floats are written with ``repr`` and therefore round-trip exactly.
    """
    buf = io.StringIO()
    buf.write(f"{MODEL_MAGIC} {MODEL_VERSION}\n")
    buf.write(f"lambda={group.lam!r}\nT={group.T}\nd={group.d}\ns={group.s}\n")
    buf.write(f"seed={int(group.meta.get('seed', 0))}\n")
    for key, value in sorted((config or {}).items()):
        buf.write(f"config.{key}={value}\n")
    for D in group.dictionaries:
        buf.write(f"dictionary {D.id}\n")
        for row in D.atoms:
            buf.write(" ".join(repr(float(x)) for x in row) + "\n")
    buf.write("end\n")
    return buf.getvalue()


def loads_model(text: str) -> tuple[GroupDictionary, dict]:
    lines = text.splitlines()
    if not lines or lines[0].split() != [MODEL_MAGIC, str(MODEL_VERSION)]:
        raise ModelMismatch("not a crowdflux model file (or unsupported version)")
    header: dict[str, str] = {}
    config: dict[str, str] = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("dictionary") and lines[i] != "end":
        key, value = lines[i].split("=", 1)
        if key.startswith("config."):
            config[key[len("config."):]] = value
        else:
            header[key] = value
        i += 1
    T, d, s = int(header["T"]), int(header["d"]), int(header["s"])
    dicts = []
    for _ in range(s):
        tag, did = lines[i].split()
        if tag != "dictionary":
            raise ModelMismatch(f"expected dictionary block at line {i + 1}")
        rows = [np.array(lines[i + 1 + r].split(), dtype=float) for r in range(T)]
        atoms = np.vstack(rows)
        if atoms.shape != (T, d):
            raise ModelMismatch(f"dictionary {did} has shape {atoms.shape}, expected {(T, d)}")
        dicts.append(Dictionary(atoms, int(did), normalize=False))
        i += 1 + T
    if i >= len(lines) or lines[i] != "end":
        raise ModelMismatch("model file truncated")
    meta = {"seed": int(header.get("seed", 0))}
    return GroupDictionary(dicts, float(header["lambda"]), meta), config


def save_model(path, group: GroupDictionary, config: dict | None = None) -> None:
    Path(path).write_text(dumps_model(group, config))


def load_model(path) -> tuple[GroupDictionary, dict]:
    return loads_model(Path(path).read_text())
