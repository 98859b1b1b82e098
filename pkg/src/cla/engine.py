"""Walk-forward driver: recall and blend forward, remember and retrain backward.

At step ``t`` the targets of period ``t - horizon`` become observable. The
step first runs the backward pass on that window (base error, remember cue,
retrain, threshold update, forgetting) and then forecasts period ``t`` from
every column in memory. Targets are never read before they are observable.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .base_model import TrainConfig, TrainingError, absolute_error, train
from .data import Dataset, PanelWindow, winsorize, zscore_normalize
from .memory import (
    ErrorHistory,
    HistoryEntry,
    MemoryStore,
    ModelMemory,
    forget,
    learn_jcrit,
    maybe_remember,
)
from .recall import MODES, balance
from .similarity import DtwConfig

_TRAIN_STREAM = 1
_DISTANCE_STREAM = 2


class EngineError(RuntimeError):
    pass


def derive_seed(master: int, stream: int, *key: int) -> int:
    """Seed for one independent random stream of a run."""
    return int(np.random.SeedSequence([master, stream, *key]).generate_state(1)[0])


def train_seed(master: int, s: int) -> int:
    """Seed of the base model trained on the window ending at index ``s``."""
    return derive_seed(master, _TRAIN_STREAM, s)


@dataclass
class EngineConfig:
    mode: str = "simweight"
    train: TrainConfig = field(default_factory=TrainConfig)
    dtw: DtwConfig = field(default_factory=DtwConfig)
    horizon: int = 12
    stride: int = 6
    train_window: int = 1
    burn_in: int = 0
    replay_window: int | None = None
    capacity: int | None = None
    winsor: tuple[float, float] = (0.01, 0.99)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.horizon < 1 or self.stride < 1 or self.train_window < 1:
            raise ValueError("horizon, stride and train_window must be >= 1")
        if self.capacity is not None and self.capacity < 0:
            raise ValueError("capacity must be >= 0")
        if self.replay_window is not None and self.replay_window < 1:
            raise ValueError("replay_window must be >= 1")

    @property
    def min_periods(self) -> int:
        return self.horizon + self.train_window

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class StepTrace:
    step: int
    period: object
    eps: float | None
    remembered: bool
    memory: str | None
    evicted: list[str]
    j_crit: float | None
    columns: list[str] = field(default_factory=list)
    distances: np.ndarray | None = None
    weights: np.ndarray | None = None
    winner: str | None = None
    securities: np.ndarray | None = None
    forecast: np.ndarray | None = None
    base_forecast: np.ndarray | None = None

    @property
    def forecasting(self) -> bool:
        return self.forecast is not None

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else [_num(v) for v in a]

        return {
            "step": self.step,
            "period": self.period,
            "eps": _num(self.eps),
            "remembered": self.remembered,
            "memory": self.memory,
            "evicted": list(self.evicted),
            "j_crit": _num(self.j_crit),
            "columns": list(self.columns),
            "distances": arr(self.distances),
            "weights": arr(self.weights),
            "winner": self.winner,
            "securities": None if self.securities is None else [str(s) for s in self.securities],
            "forecast": arr(self.forecast),
            "base_forecast": arr(self.base_forecast),
        }


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _winner(columns, weights, distances) -> str:
    # highest weight, then lowest distance, then most recent
    order = sorted(range(len(columns)), key=lambda i: (-weights[i], distances[i], -i))
    return columns[order[0]]


class Engine:
    """Stateful CLA loop. Feed windows in period order with :meth:`step`."""

    def __init__(self, cfg: EngineConfig):
        self.cfg = cfg
        self.windows: list[PanelWindow] = []
        self.store: MemoryStore | None = None
        self.history = ErrorHistory()
        self.j_crit = math.inf
        self._versions: list[ModelMemory] = []  # base behind each history entry
        self._n_trained = 0
        self._cache: dict[tuple[int, int], tuple[np.ndarray, float]] = {}

    # -- helpers

    def _column_output(self, column: ModelMemory, t: int) -> tuple[np.ndarray, float]:
        key = (column.version, t)
        hit = self._cache.get(key)
        if hit is None:
            x = self.windows[t].features
            rng = np.random.default_rng(derive_seed(self.cfg.seed, _DISTANCE_STREAM, column.version, t))
            hit = (column.forecast(x), column.distance_to(x, self.cfg.dtw, rng))
            self._cache[key] = hit
        return hit

    def _train_base(self, s: int) -> ModelMemory:
        lo = s - self.cfg.train_window + 1
        x = np.vstack([self.windows[i].features for i in range(lo, s + 1)])
        y = np.concatenate([self.windows[i].targets for i in range(lo, s + 1)])
        ok = np.isfinite(y)
        x, y = x[ok], y[ok]
        xn, center, scale = zscore_normalize(x)
        cfg = dataclasses.replace(self.cfg.train, seed=train_seed(self.cfg.seed, s))
        try:
            fit = train(xn, y, cfg)
        except TrainingError as exc:
            raise TrainingError(f"training on window ending at period {self.windows[s].period!r}: {exc}") from exc
        column = ModelMemory(fit.params, x, center, scale, trained_on=self.windows[s].period)
        column.version = self._n_trained
        self._n_trained += 1
        return column

    # -- the step

    def step(self, window: PanelWindow) -> StepTrace:
        t = len(self.windows)
        try:
            return self._step(t, window)
        except EngineError:
            raise
        except Exception as exc:
            raise EngineError(f"period {window.period!r} (step {t}): {exc}") from exc

    def _step(self, t: int, window: PanelWindow) -> StepTrace:
        cfg = self.cfg
        if cfg.winsor != (0.0, 1.0):
            window = dataclasses.replace(window, features=winsorize(window.features, *cfg.winsor))
        self.windows.append(window)

        eps = None
        remembered = False
        memory = None
        evicted: list[str] = []
        s = t - cfg.horizon
        if s >= 0:
            obs = self.windows[s]
            if self.store is not None:
                base = self.store.base
                outputs = [self._column_output(v, s) for v in (*self._versions, base)]
                forecasts = np.array([o[0] for o in outputs])
                ok = np.isfinite(obs.targets)
                _, eps = absolute_error(forecasts[-1][ok], obs.targets[ok])
                self.history.add(
                    HistoryEntry(
                        obs.period,
                        eps,
                        obs.targets[ok],
                        forecasts[:, ok],
                        np.array([o[1] for o in outputs]),
                    )
                )
                self._versions.append(base)
                if cfg.mode != "base":
                    remembered = maybe_remember(self.store, eps, self.j_crit, window.period)
                    if remembered:
                        memory = self.store.memories[-1].name
            if s >= cfg.train_window - 1:
                new_base = self._train_base(s)
                if self.store is None:
                    self.store = MemoryStore(new_base, capacity=cfg.capacity)
                else:
                    self.store.base = new_base
            if cfg.mode != "base" and len(self.history) >= 2:
                self.j_crit = learn_jcrit(self.history, cfg.mode, cfg.replay_window).value
            if self.store is not None:
                evicted = [m.name for m in forget(self.store)]

        trace = StepTrace(
            step=t,
            period=window.period,
            eps=eps,
            remembered=remembered,
            memory=memory,
            evicted=evicted,
            j_crit=None if cfg.mode == "base" else self.j_crit,
        )
        if self.store is None or t < cfg.burn_in:
            return trace

        columns = [self.store.base] if cfg.mode == "base" else self.store.columns
        outputs = [self._column_output(c, t) for c in columns]
        forecasts = np.array([o[0] for o in outputs])
        distances = np.array([o[1] for o in outputs])
        blended, weights = balance(cfg.mode, forecasts, distances)
        for c, w in zip(columns, weights):
            c.recall_weight += float(w)
        names = [c.name for c in columns]
        trace.columns = names
        trace.distances = distances
        trace.weights = weights
        trace.winner = _winner(names, weights, distances)
        trace.securities = window.securities
        trace.forecast = blended
        trace.base_forecast = forecasts[-1]
        return trace


@dataclass
class RunResult:
    config: EngineConfig
    traces: list[StepTrace]
    store: MemoryStore | None
    periods: list
    targets: list[np.ndarray]

    @property
    def forecast_traces(self) -> list[StepTrace]:
        return [tr for tr in self.traces if tr.forecasting]

    def error_series(self, which: str = "cla") -> tuple[list, np.ndarray]:
        """Cross-sectional MAE per forecast period with realized targets."""
        periods, errs = [], []
        for tr in self.forecast_traces:
            y = self.targets[tr.step]
            ok = np.isfinite(y)
            if not ok.any():
                continue
            f = tr.forecast if which == "cla" else tr.base_forecast
            periods.append(tr.period)
            errs.append(float(np.mean(np.abs(f[ok] - y[ok]))))
        return periods, np.array(errs)

    def mae(self, which: str = "cla") -> float:
        return float(np.mean(self.error_series(which)[1]))

    @property
    def memory_count(self) -> int:
        return sum(tr.remembered for tr in self.traces)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "steps": [tr.to_dict() for tr in self.traces],
            "memories": None if self.store is None else self.store.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return _num(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def run(dataset: Dataset, cfg: EngineConfig) -> RunResult:
    """Step the engine over every period of ``dataset``."""
    if len(dataset) < cfg.min_periods:
        raise EngineError(
            f"dataset has {len(dataset)} periods; need at least {cfg.min_periods} "
            f"(horizon {cfg.horizon} + training window {cfg.train_window})"
        )
    engine = Engine(cfg)
    traces = [engine.step(w) for w in dataset.windows]
    return RunResult(cfg, traces, engine.store, dataset.periods, [w.targets for w in dataset.windows])
