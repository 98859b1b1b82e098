"""Decile long/short portfolios, holding-span returns and performance stats."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats


@dataclass
class Portfolio:
    period: object
    longs: list[str]
    shorts: list[str]

    def __post_init__(self):
        if not self.longs or not self.shorts:
            raise ValueError("both portfolio sides must be nonempty")
        if set(self.longs) & set(self.shorts):
            raise ValueError("long and short sides overlap")

    def weights(self) -> dict[str, float]:
        w = {s: 1.0 / len(self.longs) for s in self.longs}
        w.update({s: -1.0 / len(self.shorts) for s in self.shorts})
        return w


def construct_portfolio(securities, forecasts, period=None, decile: float = 0.1) -> Portfolio:
    """Go long the top ``decile`` of forecasts and short the bottom one.

    Side size is ``ceil(n * decile)``. Securities are ranked by (forecast, id)
    so ties at the cut are resolved by identifier.
    """
    ids = [str(s) for s in securities]
    f = np.asarray(forecasts, dtype=float)
    if len(ids) != f.size:
        raise ValueError(f"{len(ids)} securities but {f.size} forecasts")
    if f.size < 10:
        raise ValueError(f"need at least 10 securities to form deciles, got {f.size}")
    if not np.isfinite(f).all():
        raise ValueError("forecasts must be finite")
    k = math.ceil(f.size * decile)
    order = sorted(range(f.size), key=lambda i: (f[i], ids[i]))
    return Portfolio(period, longs=[ids[i] for i in order[-k:]], shorts=[ids[i] for i in order[:k]])


def compute_returns(portfolios, realized) -> np.ndarray:
    """Equal-weight long minus equal-weight short return per holding span.

    ``realized`` maps each portfolio's period to {security: span return}.
    """
    out = []
    for p in portfolios:
        span = realized[p.period]
        missing = [s for s in (*p.longs, *p.shorts) if s not in span or not np.isfinite(span[s])]
        if missing:
            raise KeyError(f"no realized return for {missing[0]!r} in period {p.period!r}")
        out.append(np.mean([span[s] for s in p.longs]) - np.mean([span[s] for s in p.shorts]))
    return np.array(out, dtype=float)


def span_returns(window_returns, stride: int) -> dict:
    """Compound one-period returns over each holding span.

    ``window_returns`` is an ordered list of (period, {security: return})
    for consecutive periods; the span starting at index ``i`` covers
    indices ``i+1 .. i+stride``.
    """
    out = {}
    for i, (period, _) in enumerate(window_returns):
        if i + stride >= len(window_returns):
            break
        growth: dict[str, float] = {}
        for _, rets in window_returns[i + 1:i + stride + 1]:
            for sec, r in rets.items():
                growth[sec] = growth.get(sec, 1.0) * (1.0 + r)
        out[period] = {sec: g - 1.0 for sec, g in growth.items()}
    return out


def sign_test(hits: int, trials: int) -> float:
    """One-sided exact binomial tail P(X >= hits) for X ~ Bin(trials, 1/2)."""
    if trials < 1 or not 0 <= hits <= trials:
        raise ValueError(f"need 0 <= hits <= trials and trials >= 1, got {hits}/{trials}")
    return sum(math.comb(trials, k) for k in range(hits, trials + 1)) / 2 ** trials


def annualized_return(returns, periods_per_year: float) -> float:
    r = np.asarray(returns, dtype=float)
    growth = float(np.prod(1.0 + r))
    if growth <= 0:
        return -1.0
    return growth ** (periods_per_year / r.size) - 1.0


@dataclass
class PerfStats:
    tr: float
    sd: float
    sharpe: float
    rr: float
    tracking_sd: float
    ir: float
    hit_rate: float
    hits: int
    trials: int
    sign_test_p: float
    sharpe_t_p: float
    ir_t_p: float
    undefined: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in asdict(self).items()}


def _t_pvalue(x: np.ndarray) -> float:
    if x.size < 2 or np.std(x, ddof=1) == 0:
        return math.nan
    return float(stats.ttest_1samp(x, 0.0, alternative="greater").pvalue)


def perf_stats(strategy, benchmark, periods_per_year: float) -> PerfStats:
    """Annualized return/risk statistics of ``strategy`` and of its active
    return over ``benchmark``.

    TR compounds geometrically; SD scales the per-period sample sd by
    sqrt(periods_per_year). Ratios with a zero denominator are NaN and listed
    in ``undefined``. Significance uses one-sided one-sample t-tests and the
    exact sign test on positive spans.
    """
    s = np.asarray(strategy, dtype=float)
    b = np.asarray(benchmark, dtype=float)
    if s.size < 2:
        raise ValueError("need at least two observations")
    if s.shape != b.shape:
        raise ValueError(f"strategy {s.shape} and benchmark {b.shape} are not aligned")
    undefined = []
    root = math.sqrt(periods_per_year)
    active = s - b

    tr = annualized_return(s, periods_per_year)
    sd = float(np.std(s, ddof=1)) * root
    if sd > 0:
        sharpe = tr / sd
    else:
        sharpe = math.nan
        undefined.append("sharpe")
    rr = annualized_return(active, periods_per_year)
    tsd = float(np.std(active, ddof=1)) * root
    if tsd > 0:
        ir = rr / tsd
    else:
        ir = math.nan
        undefined.append("ir")
    sharpe_p = _t_pvalue(s)
    ir_p = _t_pvalue(active)
    if math.isnan(sharpe_p):
        undefined.append("sharpe_t_p")
    if math.isnan(ir_p):
        undefined.append("ir_t_p")
    hits = int((s > 0).sum())
    return PerfStats(
        tr=tr,
        sd=sd,
        sharpe=sharpe,
        rr=rr,
        tracking_sd=tsd,
        ir=ir,
        hit_rate=hits / s.size,
        hits=hits,
        trials=int(s.size),
        sign_test_p=sign_test(hits, s.size),
        sharpe_t_p=sharpe_p,
        ir_t_p=ir_p,
        undefined=undefined,
    )


@dataclass
class BacktestResult:
    periods: list
    cla: np.ndarray
    base: np.ndarray
    stats: PerfStats
    base_stats: PerfStats


def backtest_run(result, dataset, stride: int, periods_per_year: float, decile: float = 0.1) -> BacktestResult:
    """Rebalance every ``stride`` forecast periods into CLA and base-model
    decile portfolios and score CLA against the base strategy.

    Span returns come from the panel's one-period returns when present,
    otherwise from its recorded forward return.
    """
    traces = result.forecast_traces[::stride]
    has_returns = all(w.returns is not None for w in dataset.windows)
    if has_returns:
        seq = [(w.period, dict(zip(w.securities, w.returns))) for w in dataset.windows]
        realized = span_returns(seq, stride)
    else:
        realized = {w.period: dict(zip(w.securities, w.targets)) for w in dataset.windows}

    periods, cla_p, base_p = [], [], []
    for tr in traces:
        span = realized.get(tr.period)
        if span is None or not all(np.isfinite(span.get(s, np.nan)) for s in tr.securities):
            continue
        periods.append(tr.period)
        cla_p.append(construct_portfolio(tr.securities, tr.forecast, tr.period, decile))
        base_p.append(construct_portfolio(tr.securities, tr.base_forecast, tr.period, decile))
    if len(periods) < 2:
        raise ValueError(f"only {len(periods)} scorable rebalance periods; need at least 2")
    cla = compute_returns(cla_p, realized)
    base = compute_returns(base_p, realized)
    ppy = periods_per_year / stride
    return BacktestResult(periods, cla, base, perf_stats(cla, base, ppy), perf_stats(base, base, ppy))
