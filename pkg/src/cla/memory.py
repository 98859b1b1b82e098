"""Explicit model memory: columns, the remember rule and threshold learning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base_model import BaseParams, predict
from .data import apply_zscore
from .recall import balance
from .similarity import DtwConfig, expected_distance

JGRID_POINTS = 20


@dataclass
class ModelMemory:
    """A model column: parameters plus the raw training context and the
    normalization statistics the parameters were fitted under."""

    params: BaseParams
    context: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    trained_on: object
    created_at: object = None
    name: str = "base"
    recall_weight: float = 0.0
    version: int = -1  # training counter of the base this column came from

    def __post_init__(self):
        self.context = np.asarray(self.context, dtype=float)
        if self.context.ndim != 2 or self.context.shape[0] == 0:
            raise ValueError("memory context must be a nonempty matrix")
        if self.context.shape[1] != self.params.n_inputs:
            raise ValueError(
                f"context has {self.context.shape[1]} columns, params expect {self.params.n_inputs}"
            )
        self._normalized = None

    @property
    def normalized_context(self) -> np.ndarray:
        if self._normalized is None:
            self._normalized = apply_zscore(self.context, self.center, self.scale)
        return self._normalized

    def forecast(self, features) -> np.ndarray:
        return predict(self.params, apply_zscore(features, self.center, self.scale))

    def distance_to(self, features, cfg: DtwConfig, rng=None) -> float:
        """Expected DTW distance between this context and ``features``, both
        normalized with this column's statistics."""
        current = apply_zscore(features, self.center, self.scale)
        return expected_distance(self.normalized_context, current, cfg, rng)

    def snapshot(self, name: str, created_at) -> "ModelMemory":
        return ModelMemory(
            params=self.params.copy(),
            context=self.context.copy(),
            center=self.center.copy(),
            scale=self.scale.copy(),
            trained_on=self.trained_on,
            created_at=created_at,
            name=name,
            version=self.version,
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "created_at": self.created_at,
            "trained_on": self.trained_on,
            "recall_weight": self.recall_weight,
            "version": self.version,
            "params": self.params.to_dict(),
            "context": self.context.tolist(),
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelMemory":
        return cls(
            params=BaseParams.from_dict(d["params"]),
            context=np.asarray(d["context"], dtype=float),
            center=np.asarray(d["center"], dtype=float),
            scale=np.asarray(d["scale"], dtype=float),
            trained_on=d["trained_on"],
            created_at=d["created_at"],
            name=d["name"],
            recall_weight=d["recall_weight"],
            version=d.get("version", -1),
        )


@dataclass
class MemoryStore:
    base: ModelMemory
    memories: list[ModelMemory] = field(default_factory=list)
    capacity: int | None = None
    created: int = 0

    @property
    def columns(self) -> list[ModelMemory]:
        """Stored memories oldest first, then the live base column."""
        return [*self.memories, self.base]

    def __len__(self):
        return len(self.memories)

    def append(self, memory: ModelMemory) -> None:
        if self.memories and not _after(memory.created_at, self.memories[-1].created_at):
            raise ValueError(
                f"memory created at {memory.created_at!r} does not follow {self.memories[-1].created_at!r}"
            )
        self.memories.append(memory)
        self.created += 1

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "memories": [m.to_dict() for m in self.memories],
            "base": self.base.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryStore":
        mems = [ModelMemory.from_dict(m) for m in d["memories"]]
        return cls(ModelMemory.from_dict(d["base"]), mems, d["capacity"], len(mems))


def _after(a, b) -> bool:
    try:
        return a > b
    except TypeError:
        return str(a) > str(b)


def maybe_remember(store: MemoryStore, eps: float, j_crit: float, created_at) -> bool:
    """Append a copy of the base column when ``|eps| >= j_crit``.

    Returns whether a memory was formed. The copy is deep, so retraining the
    base afterwards leaves the stored memory untouched.
    """
    if abs(eps) >= j_crit:
        store.append(store.base.snapshot(f"m{store.created + 1}", created_at))
        return True
    return False


def forget(store: MemoryStore) -> list[ModelMemory]:
    """Evict memories with the lowest cumulative recall weight (oldest first
    on ties) until the store fits its capacity. Returns the evicted ones."""
    evicted = []
    if store.capacity is None:
        return evicted
    while len(store.memories) > store.capacity:
        weights = np.array([m.recall_weight for m in store.memories])
        evicted.append(store.memories.pop(int(np.argmin(weights))))
    return evicted


def build_jgrid(errors) -> tuple[np.ndarray, bool]:
    """Twenty equidistant thresholds spanning the observed error range.

    Returns (grid, degenerate); a constant series yields a single point.
    """
    e = np.asarray(errors, dtype=float)
    e = e[np.isfinite(e)]
    if e.size == 0:
        raise ValueError("error series is empty")
    lo, hi = float(e.min()), float(e.max())
    if lo == hi:
        return np.array([lo]), True
    return np.linspace(lo, hi, JGRID_POINTS), False


@dataclass
class HistoryEntry:
    """One backward pass: the base error on a newly observable window plus
    every base version's forecast and distance on that window."""

    period: object
    eps: float
    realized: np.ndarray
    forecasts: np.ndarray  # (index + 1, n): versions of earlier entries, then this entry's base
    distances: np.ndarray  # (index + 1,)

    @property
    def index(self) -> int:
        return self.distances.size - 1


@dataclass
class ErrorHistory:
    entries: list[HistoryEntry] = field(default_factory=list)
    # (entry index, mode, eligible columns) -> that entry's balanced MAE
    replay_cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.entries)

    @property
    def periods(self) -> list:
        return [e.period for e in self.entries]

    @property
    def eps(self) -> np.ndarray:
        return np.array([e.eps for e in self.entries])

    def add(self, entry: HistoryEntry) -> None:
        if entry.index != len(self.entries):
            raise ValueError(f"entry carries {entry.index} prior versions, history has {len(self.entries)}")
        if entry.forecasts.shape[0] != entry.distances.size:
            raise ValueError("forecast rows and distances disagree")
        self.entries.append(entry)


def replay_error(history: ErrorHistory, j_crit: float, mode: str, window: int | None = None) -> float:
    """Mean absolute error of the balanced forecast over past entries, had
    ``j_crit`` governed remembering throughout.

    At entry ``u`` the available memories are the bases of earlier entries
    whose error reached ``j_crit``; the base that produced entry ``u``'s own
    error is the live column.
    """
    eps = history.eps
    entries = history.entries if window is None else history.entries[-window:]
    cache = history.replay_cache
    errs = []
    for e in entries:
        cols = (*np.flatnonzero(eps[:e.index] >= j_crit).tolist(), e.index)
        key = (e.index, mode, cols)
        err = cache.get(key)
        if err is None:
            blended, _ = balance(mode, e.forecasts[list(cols)], e.distances[list(cols)])
            err = cache[key] = float(np.mean(np.abs(blended - e.realized)))
        errs.append(err)
    return float(np.mean(errs))


@dataclass
class JCritChoice:
    value: float
    grid: np.ndarray
    errors: np.ndarray
    degenerate: bool


def select_jcrit(grid, errors) -> float:
    """Grid member with the lowest replay error; ties go to the smallest."""
    grid = np.asarray(grid, dtype=float)
    errors = np.asarray(errors, dtype=float)
    best = errors.min()
    return float(grid[errors == best].min())


def learn_jcrit(history: ErrorHistory, mode: str = "simweight", window: int | None = None) -> JCritChoice:
    """Pick the remember threshold minimizing replayed forecast error."""
    if len(history) < 2:
        raise ValueError("need at least two observed errors to learn a threshold")
    grid, degenerate = build_jgrid(history.eps)
    if degenerate:
        return JCritChoice(float(grid[0]), grid, np.array([np.nan]), True)
    errors = np.array([replay_error(history, j, mode, window) for j in grid])
    return JCritChoice(select_jcrit(grid, errors), grid, errors, False)

