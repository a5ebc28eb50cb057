"""Statistical diagnostics of simulated price series.

Covers the tail exponent of absolute returns, autocorrelation of signed and
absolute returns, supercritical bubble episodes with their drawdowns, a
super-exponential fit of log-price over an episode, and simple return and
wealth tables.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .deterministic import SuperExpFit
from .errors import DegenerateTail, NoConvexity, TooShort, ZeroVariance

TAIL_FRACTION = 0.05
MAX_LAG = 100
MIN_EPISODE = 5
ALPHA_GRID = (1.0005, 1.5)


@dataclass
class BubbleEpisode:
    t_start: int
    t_end: int
    peak_price: float
    t_peak: int
    drawdown: float
    oscillations: int = 0
    superexp: SuperExpFit | None = None

    @property
    def length(self) -> int:
        return self.t_end - self.t_start + 1


@dataclass
class AnalysisReport:
    tail_alpha: float | None
    acf_signed: np.ndarray
    acf_abs: np.ndarray
    episodes: list[BubbleEpisode] = field(default_factory=list)
    wealth_ratio_end: float | None = None

    def to_dict(self) -> dict:
        return {
            "tail_alpha": self.tail_alpha,
            "acf_signed": [float(v) for v in self.acf_signed],
            "acf_abs": [float(v) for v in self.acf_abs],
            "episodes": [_episode_dict(e) for e in self.episodes],
            "wealth_ratio_end": self.wealth_ratio_end,
        }


def _episode_dict(ep: BubbleEpisode) -> dict:
    d = asdict(ep)
    if ep.superexp is not None:
        d["superexp"]["window"] = list(ep.superexp.window)
    return d


def returns_from_prices(prices, log: bool = False) -> np.ndarray:
    """Simple returns ``P[t+1]/P[t] - 1`` (or log returns)."""
    prices = np.asarray(prices, dtype=float)
    if prices.ndim != 1 or len(prices) < 2:
        raise TooShort("need at least two prices")
    if np.any(prices <= 0):
        raise ValueError("prices must be positive")
    if log:
        return np.diff(np.log(prices))
    return prices[1:] / prices[:-1] - 1.0


def hill_tail_exponent(values, tail_fraction: float = TAIL_FRACTION, k: int | None = None) -> float:
    """Hill estimate of the tail exponent over the ``k`` largest values.

    ``k`` defaults to ``ceil(tail_fraction * n)``, in which case at least 50
    values are required.  Pass absolute returns for a two-sided tail.
    """
    x = np.sort(np.asarray(values, dtype=float))[::-1]
    n = len(x)
    if k is None:
        if n < 50:
            raise TooShort(f"need at least 50 values, got {n}")
        if not 0.0 < tail_fraction <= 0.5:
            raise ValueError("tail_fraction must lie in (0, 0.5]")
        k = math.ceil(tail_fraction * n)
    if not 1 <= k < n:
        raise TooShort(f"need more than k={k} values, got {n}")
    threshold = x[k]
    if threshold <= 0:
        raise DegenerateTail(f"order statistic x[{k + 1}] = {threshold!r} is not positive")
    logs = np.log(x[:k] / threshold)
    total = logs.sum()
    if total <= 0:
        raise DegenerateTail("all tail values are equal")
    return float(k / total)


def autocorrelation(series, max_lag: int = MAX_LAG) -> np.ndarray:
    """Sample ACF at lags ``0..max_lag``, normalised by the lag-0 sum of squares."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n <= max_lag + 1:
        raise TooShort(f"series of length {n} too short for max_lag={max_lag}")
    x = x - x.mean()
    denom = np.dot(x, x)
    if denom == 0.0:
        raise ZeroVariance("series has zero variance")
    # zero-padded FFT gives the full linear autocovariance
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1]
    acf = acov / denom
    acf[0] = 1.0
    return acf


def supercritical_runs(kappa, p: float, min_length: int = MIN_EPISODE) -> list[tuple[int, int]]:
    """Maximal index runs ``[start, end]`` with ``kappa > p`` of at least ``min_length``."""
    above = np.asarray(kappa, dtype=float) > p
    if not above.any():
        return []
    edges = np.diff(np.concatenate(([0], above.view(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [(int(a), int(b)) for a, b in zip(starts, ends) if b - a + 1 >= min_length]


def count_oscillations(log_prices) -> int:
    """Sign changes of the linearly detrended series; a rough log-periodicity cue."""
    y = np.asarray(log_prices, dtype=float)
    if len(y) < 3:
        return 0
    t = np.arange(len(y))
    resid = y - np.polyval(np.polyfit(t, y, 1), t)
    signs = np.sign(resid[resid != 0])
    return int(np.count_nonzero(np.diff(signs)))


def detect_bubbles(
    kappa,
    p: float,
    prices,
    min_length: int = MIN_EPISODE,
    opinion=None,
    fit: bool = False,
) -> list[BubbleEpisode]:
    """Supercritical episodes annotated with peak price and post-peak drawdown.

    The drawdown is measured from the in-window price peak to the lowest
    price before the next episode starts (or the series ends).  With
    ``fit=True`` a super-exponential fit is attempted over the start of each
    episode up to its peak; windows too short or not convex get ``None``.
    """
    prices = np.asarray(prices, dtype=float)
    if len(prices) != len(kappa):
        raise ValueError("kappa and prices must be aligned")
    runs = supercritical_runs(kappa, p, min_length)
    episodes = []
    for i, (a, b) in enumerate(runs):
        t_peak = a + int(np.argmax(prices[a : b + 1]))
        peak = float(prices[t_peak])
        stop = runs[i + 1][0] if i + 1 < len(runs) else len(prices)
        trough = float(prices[t_peak:stop].min())
        logp = np.log(prices[a : b + 1])
        ep = BubbleEpisode(
            t_start=a,
            t_end=b,
            peak_price=peak,
            t_peak=t_peak,
            drawdown=1.0 - trough / peak,
            oscillations=count_oscillations(logp),
        )
        if fit and t_peak - a + 1 >= 10:
            s1 = None if opinion is None else float(opinion[a])
            try:
                ep.superexp = fit_superexponential(np.log(prices), (a, t_peak + 1), s1=s1)
            except NoConvexity:
                pass
        episodes.append(ep)
    return episodes


def _linear_fit(tau, y, alpha):
    basis = np.column_stack((np.expm1(tau * math.log(alpha)), np.ones_like(tau)))
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    resid = y - basis @ coef
    return coef, float(np.dot(resid, resid))


def fit_superexponential(log_prices, window: tuple[int, int] | None = None, s1: float | None = None) -> SuperExpFit:
    """Fit ``log P = A (alpha1**tau - 1) + log P0`` over ``log_prices[window[0]:window[1]]``.

    ``alpha1`` is searched on a log-spaced grid and then refined; ``A`` and
    ``log P0`` are linear least squares for each candidate.  Raises
    :class:`NoConvexity` when the second difference of the window is
    non-positive at more than half its points.
    """
    y_all = np.asarray(log_prices, dtype=float)
    a, b = (0, len(y_all)) if window is None else window
    y = y_all[a:b]
    if len(y) < 10:
        raise TooShort("fit window needs at least 10 points")
    d2 = np.diff(y, 2)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(y))))
    if np.mean(d2 <= tol) > 0.5:
        raise NoConvexity(f"log-price not convex on window [{a}, {b})")

    tau = np.arange(len(y), dtype=float)
    grid = np.geomspace(*ALPHA_GRID, 400)
    sse = np.array([_linear_fit(tau, y, g)[1] for g in grid])
    i = int(np.argmin(sse))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if hi > lo:
        opt = minimize_scalar(lambda g: _linear_fit(tau, y, g)[1], bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10})
        alpha = float(opt.x) if opt.fun <= sse[i] else float(grid[i])
    else:
        alpha = float(grid[i])
    (amp, c), sse_best = _linear_fit(tau, y, alpha)
    b1 = None if not s1 else float(amp) / s1
    return SuperExpFit(
        alpha1=alpha,
        amplitude=float(amp),
        log_p0=float(c),
        t1=a,
        window=(a, b),
        rms=math.sqrt(sse_best / len(y)),
        s1=s1,
        b1=b1,
    )


def window_returns(prices, window_len: int) -> np.ndarray:
    """Cumulative return over consecutive disjoint windows of ``window_len`` steps."""
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    prices = np.asarray(prices, dtype=float)
    if len(prices) < window_len + 1:
        raise TooShort(f"need at least {window_len + 1} prices")
    sampled = prices[::window_len]
    return sampled[1:] / sampled[:-1] - 1.0


def wealth_ratio_series(w_noise, w_rational) -> np.ndarray:
    w_noise = np.asarray(w_noise, dtype=float)
    w_rational = np.asarray(w_rational, dtype=float)
    if w_noise.shape != w_rational.shape:
        raise ValueError("wealth series must be aligned")
    return w_noise / w_rational


def analyze(
    prices,
    kappa,
    p: float,
    w_noise=None,
    w_rational=None,
    returns=None,
    opinion=None,
    max_lag: int = MAX_LAG,
    tail_fraction: float = TAIL_FRACTION,
    min_length: int = MIN_EPISODE,
    log_returns: bool = False,
) -> AnalysisReport:
    """Build an :class:`AnalysisReport` from aligned per-step series.

    ``returns`` may be given directly (e.g. read from a trajectory file);
    otherwise they are derived from ``prices``.
    """
    if returns is None:
        returns = returns_from_prices(prices, log=log_returns)
    returns = np.asarray(returns, dtype=float)
    try:
        alpha = hill_tail_exponent(np.abs(returns), tail_fraction)
    except (DegenerateTail, TooShort):
        alpha = None
    lag = min(max_lag, len(returns) - 2)
    acf_s = autocorrelation(returns, lag)[1:]
    acf_a = autocorrelation(np.abs(returns), lag)[1:]
    episodes = detect_bubbles(kappa, p, prices, min_length, opinion=opinion, fit=True)
    ratio_end = None
    if w_noise is not None and w_rational is not None:
        ratio_end = float(wealth_ratio_series(w_noise, w_rational)[-1])
    return AnalysisReport(alpha, acf_s, acf_a, episodes, ratio_end)
