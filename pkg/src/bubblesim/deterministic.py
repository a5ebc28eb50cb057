"""Deterministic reduction of the market and its analytical consequences.

Dividend shocks are switched off and the opinion index follows its
conditional mean, with the coupling held fixed.  The reduced (s, H) map
obtained by additionally freezing the wealth ratio has fixed points given
by a cubic in ``s``; their stability is read off the Jacobian of that map.

Everything here is written out independently of :mod:`bubblesim.market`
so that the two can be checked against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCoupling, NonPositivePrice, NonPositiveWealth, NotSupercritical
from .market import SimState
from .params import ModelParams

MARGINAL_TOL = 1e-9


@dataclass(frozen=True)
class FixedPoint:
    s_star: float
    h_star: float
    stability: str | None = None  # "stable", "unstable" or "marginal"
    spectral_radius: float | None = None
    residual: float = 0.0

    @property
    def admissible(self) -> bool:
        return -1.0 <= self.s_star <= 1.0


@dataclass(frozen=True)
class SuperExpFit:
    """Least-squares fit of ``log P = A * (alpha1**tau - 1) + log P0``.

    ``amplitude`` is the product ``b1 * s1``; the two factors are only
    separated when the opinion at the window start is known.
    """

    alpha1: float
    amplitude: float
    log_p0: float
    t1: int
    window: tuple[int, int]
    rms: float
    s1: float | None = None
    b1: float | None = None


@dataclass
class DeterministicPath:
    t: np.ndarray
    price: np.ndarray
    s: np.ndarray
    h: np.ndarray
    w_rational: np.ndarray
    w_noise: np.ndarray
    kappa: float
    extra: dict = field(default_factory=dict)


def _opinion_update(s: float, h: float, kappa: float, p: float) -> float:
    # linear rule while both flip probabilities are valid, saturating otherwise
    sig = kappa * (s + h)
    if abs(sig) <= p and p + abs(sig) <= 2.0:
        return (1.0 + kappa - p) * s + kappa * h
    buy = min(max(0.5 * (p + sig), 0.0), 1.0)
    sell = min(max(0.5 * (p - sig), 0.0), 1.0)
    return s + buy * (1.0 - s) - sell * (1.0 + s)


def _price_ratio(s_new: float, s_old: float, w: float, wn: float, x: float, r: float, r_f: float) -> float:
    g = 1.0 + r_f
    top = wn * (1.0 + s_new) * (g * (1.0 - s_old) + r * (1.0 + s_old)) + 4.0 * x * w * (g * (1.0 - x) + r * x)
    bottom = wn * (1.0 + s_old) * (1.0 - s_new) + 4.0 * x * (1.0 - x) * w
    return top / bottom


def deterministic_step(state: SimState, params: ModelParams, kappa: float | None = None) -> SimState:
    """One step of the shock-free system with fixed coupling.

    ``kappa`` defaults to ``state.kappa``.
    """
    k = state.kappa if kappa is None else kappa
    x, r, r_f = params.x, params.r, params.r_f
    s_new = _opinion_update(state.s, state.h, k, params.p)
    ratio = _price_ratio(s_new, state.s, state.w_rational, state.w_noise, x, r, r_f)
    if not ratio > 0.0:
        raise NonPositivePrice(f"price ratio {ratio!r} <= 0", t=state.t + 1)
    gr = x * (ratio + r) + (1.0 - x) * (1.0 + r_f)
    half = 0.5 * (1.0 + state.s)
    gn = half * (ratio + r) + (1.0 - half) * (1.0 + r_f)
    if not (gr > 0.0 and gn > 0.0):
        raise NonPositiveWealth("wealth growth factor <= 0", t=state.t + 1)
    return SimState(
        t=state.t + 1,
        price=state.price * ratio,
        s=s_new,
        h=params.theta * state.h + (1.0 - params.theta) * (ratio - 1.0),
        kappa=k,
        w_rational=state.w_rational * gr,
        w_noise=state.w_noise * gn,
        n_plus=0.5 * (1.0 + s_new) * params.n_noise,
    )


def deterministic_trajectory(
    params: ModelParams,
    kappa: float,
    steps: int | None = None,
    s0: float = 0.0,
    h0: float = 0.0,
    freeze_wealth_ratio: bool = False,
    start: SimState | None = None,
) -> DeterministicPath:
    """Iterate :func:`deterministic_step` from an initial state.

    The default start is P0 = 1, W0 = 1, Wn0 = nu.  With
    ``freeze_wealth_ratio`` both wealths are rescaled after every step so
    that ``Wn / W`` stays at its initial value, which is the reduced (s, H)
    map whose fixed points :func:`find_fixed_points` solves for.
    """
    n = params.t_max if steps is None else steps
    if start is None:
        start = SimState(0, 1.0, s0, h0, kappa, 1.0, params.nu, 0.5 * (1.0 + s0) * params.n_noise)
    cols = np.empty((6, n + 1))
    st = start
    ratio0 = st.w_noise / st.w_rational
    cols[:, 0] = (st.t, st.price, st.s, st.h, st.w_rational, st.w_noise)
    for i in range(1, n + 1):
        st = deterministic_step(st, params, kappa)
        if freeze_wealth_ratio:
            st = st.replace(w_noise=st.w_rational * ratio0)
        cols[:, i] = (st.t, st.price, st.s, st.h, st.w_rational, st.w_noise)
    return DeterministicPath(
        t=cols[0].astype(int), price=cols[1], s=cols[2], h=cols[3], w_rational=cols[4], w_noise=cols[5], kappa=kappa
    )


def momentum_at(s: float, params: ModelParams, wealth_ratio: float = 1.0) -> float:
    """Steady momentum for a constant opinion ``s`` (noise/rational wealth ratio fixed)."""
    x, nu = params.x, wealth_ratio
    num = nu * (1.0 + s) ** 2 + 4.0 * x * x
    den = nu * (1.0 - s * s) + 4.0 * x * (1.0 - x)
    return params.r_f + params.r * num / den


def fixed_point_cubic(params: ModelParams, kappa: float, wealth_ratio: float = 1.0) -> np.ndarray:
    """Coefficients (highest power first) of the cubic satisfied by ``s*``.

    Obtained by clearing the denominator in ``s = c * H(s)`` with
    ``c = kappa / (p - kappa)``.
    """
    c = kappa / (params.p - kappa)
    x, r, r_f, nu = params.x, params.r, params.r_f, wealth_ratio
    a = 4.0 * x * (1.0 - x)
    return np.array(
        [
            -nu,
            c * nu * (r_f - r),
            nu + a - 2.0 * c * r * nu,
            -c * (r_f * (nu + a) + r * (nu + 4.0 * x * x)),
        ]
    )


def fixed_point_residuals(s: float, h: float, params: ModelParams, kappa: float, wealth_ratio: float = 1.0):
    """Residuals of the two fixed-point equations at ``(s, h)``."""
    return (h - momentum_at(s, params, wealth_ratio), s - kappa / (params.p - kappa) * h)


def find_fixed_points(
    params: ModelParams,
    kappa: float,
    wealth_ratio: float = 1.0,
    classify: bool = True,
) -> list[FixedPoint]:
    """All real fixed points of the reduced (s, H) map, admissible ones first.

    Roots come from the companion matrix of the cubic and are polished by a
    few Newton steps on the cubic itself.
    """
    if abs(params.p - kappa) < 1e-12:
        raise DegenerateCoupling(f"kappa={kappa!r} equals p={params.p!r}")
    coeffs = fixed_point_cubic(params, kappa, wealth_ratio)
    dcoeffs = np.polyder(coeffs)
    roots = np.roots(coeffs)
    scale = max(1.0, float(np.max(np.abs(roots))))
    real = sorted(float(z.real) for z in roots if abs(z.imag) <= 1e-9 * scale)

    x, nu = params.x, wealth_ratio
    out = []
    for s in real:
        for _ in range(4):
            d = np.polyval(dcoeffs, s)
            if d == 0.0:
                break
            s -= np.polyval(coeffs, s) / d
        s = float(s)
        # clearing the denominator adds its zeros as roots when kappa = 0
        if abs(nu * (1.0 - s * s) + 4.0 * x * (1.0 - x)) < 1e-9:
            continue
        h = momentum_at(s, params, wealth_ratio)
        res = max(abs(v) for v in fixed_point_residuals(s, h, params, kappa, wealth_ratio))
        fp = FixedPoint(s_star=s, h_star=h, residual=res)
        if classify:
            stab, rad = classify_stability(fp, params, kappa, wealth_ratio)
            fp = FixedPoint(s, h, stab, rad, res)
        out.append(fp)
    out.sort(key=lambda f: (not f.admissible, abs(f.s_star)))
    return out


def reduced_jacobian(s: float, h: float, params: ModelParams, kappa: float, wealth_ratio: float = 1.0) -> np.ndarray:
    """Jacobian of ``(s, H) -> (s', H')`` with a frozen wealth ratio."""
    x, r, nu, theta = params.x, params.r, wealth_ratio, params.theta
    g = 1.0 + params.r_f
    a = (1.0 + kappa - params.p) * s + kappa * h  # s'
    b = s
    inner = g * (1.0 - b) + r * (1.0 + b)
    num = nu * (1.0 + a) * inner + 4.0 * x * (g * (1.0 - x) + r * x)
    den = nu * (1.0 + b) * (1.0 - a) + 4.0 * x * (1.0 - x)
    dr_da = (nu * inner * den + num * nu * (1.0 + b)) / den**2
    dr_db = (nu * (1.0 + a) * (r - g) * den - num * nu * (1.0 - a)) / den**2
    ds_ds, ds_dh = 1.0 + kappa - params.p, kappa
    return np.array(
        [
            [ds_ds, ds_dh],
            [(1.0 - theta) * (dr_da * ds_ds + dr_db), theta + (1.0 - theta) * dr_da * ds_dh],
        ]
    )


def classify_stability(
    fp: FixedPoint,
    params: ModelParams,
    kappa: float,
    wealth_ratio: float = 1.0,
    tol: float = MARGINAL_TOL,
) -> tuple[str, float]:
    jac = reduced_jacobian(fp.s_star, fp.h_star, params, kappa, wealth_ratio)
    radius = float(np.max(np.abs(np.linalg.eigvals(jac))))
    if abs(radius - 1.0) <= tol:
        return "marginal", radius
    return ("stable" if radius < 1.0 else "unstable"), radius


def price_coupling(x: float, rational_to_noise: float, s0: float) -> float:
    """Constant ``b`` in ``P_t / P_{t-1} ~ 1 + b (s_t - s_{t-1})``."""
    return 2.0 / (1.0 + 4.0 * x * (1.0 - x) * rational_to_noise - s0 * s0)


def predict_superexp_logprice(s1: float, alpha1: float, b1: float, p0: float, t) -> np.ndarray:
    """``log P(t) = b1 * s1 * (alpha1**t - 1) + log P0``."""
    if not alpha1 > 0.0:
        raise ValueError("alpha1 must be positive")
    t = np.asarray(t, dtype=float)
    return b1 * s1 * (alpha1**t - 1.0) + math.log(p0)


def ou_stationary_moments(params: ModelParams) -> tuple[float, float]:
    return params.mu_kappa, params.sigma_kappa / math.sqrt(2.0 * params.eta)


def ou_mean(kappa0: float, params: ModelParams, t) -> np.ndarray:
    """Continuous-time approximation of ``E[kappa_t]``."""
    decay = np.exp(-params.eta * np.asarray(t, dtype=float))
    return kappa0 * decay + params.mu_kappa * (1.0 - decay)


def ou_reversion_time(kappa0: float, params: ModelParams) -> float:
    """Steps for the mean coupling to fall from ``kappa0`` back to ``p``."""
    if not (kappa0 >= params.p > params.mu_kappa):
        raise NotSupercritical(f"need kappa0 >= p > mu_kappa, got {kappa0!r}, {params.p!r}, {params.mu_kappa!r}")
    return math.log((kappa0 - params.mu_kappa) / (params.p - params.mu_kappa)) / params.eta


def rational_only_price(p_prev: float, dividend: float, params: ModelParams) -> float:
    """Clearing price when only rational investors trade."""
    return (1.0 + params.r_f) * p_prev + params.x / (1.0 - params.x) * dividend
