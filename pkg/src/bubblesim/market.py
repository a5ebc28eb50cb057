"""Stochastic dynamics of the rational / noise-trader market.

One call to :func:`step` advances the complete system by one period:

1. the coupling ``kappa`` takes a discrete Ornstein-Uhlenbeck step,
2. transition probabilities are formed from the previous opinion and momentum,
3. every noise trader decides independently (exact binomial sampling),
4. a dividend-price ratio is drawn,
5. the price clears the market given the new and old opinion,
6. both groups' wealth is updated,
7. momentum absorbs the new return.

All per-step arithmetic uses Python floats; numpy is only used for the
random generator.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import ClearingViolation, NonPositivePrice, NonPositiveWealth
from .params import ModelParams

KAPPA_MIN = 0.0
KAPPA_MAX = 1.0
CLEARING_TOL = 1e-9


@dataclass(frozen=True)
class SimState:
    t: int
    price: float
    s: float
    h: float
    kappa: float
    w_rational: float
    w_noise: float
    # int for the stochastic engine; a float in mean-field mode
    n_plus: int | float

    @classmethod
    def initial(cls, params: ModelParams, kappa0: float | None = None) -> "SimState":
        """P0 = 1, half the noise traders invested, no momentum, W0 = 1, Wn0 = nu."""
        n_plus = params.n_noise // 2
        return cls(
            t=0,
            price=1.0,
            s=2.0 * n_plus / params.n_noise - 1.0,
            h=0.0,
            kappa=params.mu_kappa if kappa0 is None else kappa0,
            w_rational=1.0,
            w_noise=params.nu,
            n_plus=n_plus,
        )

    def replace(self, **changes) -> "SimState":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class StepDraws:
    """Random inputs of one step.

    ``u`` drives the dividend ratio, ``v`` the coupling; the flip counts are
    the numbers of invested traders that sell and uninvested ones that buy.
    """

    u: float = 0.0
    v: float = 0.0
    flips_out: int = 0
    flips_in: int = 0


@dataclass(frozen=True)
class TrajectoryFrame:
    t: int
    price: float
    s: float
    h: float
    kappa: float
    w_rational: float
    w_noise: float
    n_plus: int | float
    ret: float
    div_ratio: float
    p_plus: float
    p_minus: float
    draws: StepDraws


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def transition_probs(s: float, h: float, kappa: float, p: float) -> tuple[float, float]:
    """Return ``(p_plus, p_minus)``.

    ``p_plus`` is the per-step probability that an invested trader sells,
    ``p_minus`` that an uninvested one buys.  Both are clamped to [0, 1].
    """
    signal = kappa * (s + h)
    p_minus = _clamp(0.5 * (p + signal), 0.0, 1.0)
    p_plus = _clamp(0.5 * (p - signal), 0.0, 1.0)
    return p_plus, p_minus


def expected_opinion(s: float, p_plus: float, p_minus: float) -> float:
    return s + p_minus * (1.0 - s) - p_plus * (1.0 + s)


def sample_opinion(
    n_plus: int,
    n_noise: int,
    p_plus: float,
    p_minus: float,
    rng: np.random.Generator,
) -> tuple[int, float, int, int]:
    """Sample every noise trader's decision.

    Returns ``(new_n_plus, new_s, flips_out, flips_in)``.
    """
    flips_out = int(rng.binomial(n_plus, p_plus)) if n_plus > 0 else 0
    n_minus = n_noise - n_plus
    flips_in = int(rng.binomial(n_minus, p_minus)) if n_minus > 0 else 0
    new_n_plus = n_plus - flips_out + flips_in
    return new_n_plus, 2.0 * new_n_plus / n_noise - 1.0, flips_out, flips_in


def draw_dividend_ratio(params: ModelParams, rng: np.random.Generator | None = None, u: float | None = None) -> float:
    """Dividend paid at t divided by P_{t-1}: ``r + sigma_r * u``."""
    if u is None:
        u = float(rng.standard_normal())
    return params.r + params.sigma_r * u


def clearing_price(
    s_new: float,
    s_old: float,
    div_ratio: float,
    w_rational: float,
    w_noise: float,
    params: ModelParams,
) -> float:
    """Price ratio ``P_t / P_{t-1}`` that makes total excess demand vanish.

    Wealths are those at ``t-1``.
    """
    x, gross_f = params.x, 1.0 + params.r_f
    num = (1.0 + s_new) * (gross_f * (1.0 - s_old) + div_ratio * (1.0 + s_old)) * w_noise + 4.0 * x * (
        gross_f * (1.0 - x) + div_ratio * x
    ) * w_rational
    den = (1.0 + s_old) * (1.0 - s_new) * w_noise + 4.0 * x * (1.0 - x) * w_rational
    ratio = num / den
    if not ratio > 0.0:
        raise NonPositivePrice(f"clearing price ratio {ratio!r} <= 0 (div_ratio={div_ratio!r})")
    return ratio


def excess_demand_rational(price_ratio: float, div_ratio: float, w_rational_prev: float, params: ModelParams) -> float:
    x = params.x
    return x * w_rational_prev * ((1.0 - x) * ((1.0 + params.r_f) - price_ratio) + x * div_ratio)


def excess_demand_noise(
    s_new: float,
    s_old: float,
    price_ratio: float,
    div_ratio: float,
    w_noise_prev: float,
    params: ModelParams,
) -> float:
    gross_f = 1.0 + params.r_f
    return 0.25 * w_noise_prev * (
        (1.0 + s_new) * (1.0 - s_old) * gross_f
        - (1.0 - s_new) * (1.0 + s_old) * price_ratio
        + (1.0 + s_new) * (1.0 + s_old) * div_ratio
    )


def update_wealth_rational(price_ratio: float, div_ratio: float, w_prev: float, params: ModelParams) -> float:
    x = params.x
    factor = x * (price_ratio + div_ratio) + (1.0 - x) * (1.0 + params.r_f)
    if not factor > 0.0:
        raise NonPositiveWealth(f"rational wealth factor {factor!r} <= 0")
    return w_prev * factor


def update_wealth_noise(s_old: float, price_ratio: float, div_ratio: float, w_prev: float, params: ModelParams) -> float:
    invested = 0.5 * (1.0 + s_old)
    factor = invested * (price_ratio + div_ratio) + (1.0 - invested) * (1.0 + params.r_f)
    if not factor > 0.0:
        raise NonPositiveWealth(f"noise wealth factor {factor!r} <= 0")
    return w_prev * factor


def update_momentum(h_prev: float, price_ratio: float, theta: float) -> float:
    return theta * h_prev + (1.0 - theta) * (price_ratio - 1.0)


def ou_step_kappa(
    kappa_prev: float,
    params: ModelParams,
    rng: np.random.Generator | None = None,
    v: float | None = None,
) -> float:
    """Discrete OU step for the coupling, clamped to [0, 1]."""
    if v is None:
        v = float(rng.standard_normal())
    k = kappa_prev + params.eta * (params.mu_kappa - kappa_prev) + params.sigma_kappa * v
    return _clamp(k, KAPPA_MIN, KAPPA_MAX)


def clearing_residual(
    s_new: float,
    s_old: float,
    price_ratio: float,
    div_ratio: float,
    w_rational_prev: float,
    w_noise_prev: float,
    params: ModelParams,
) -> float:
    return excess_demand_rational(price_ratio, div_ratio, w_rational_prev, params) + excess_demand_noise(
        s_new, s_old, price_ratio, div_ratio, w_noise_prev, params
    )


def step(
    state: SimState,
    params: ModelParams,
    rng: np.random.Generator | None = None,
    draws: StepDraws | None = None,
    mean_field: bool = False,
) -> tuple[SimState, TrajectoryFrame]:
    """Advance the market by one period.

    Pass ``draws`` to force every random input (``rng`` is then unused).
    With ``mean_field=True`` the opinion moves to its conditional
    expectation instead of being sampled, and ``n_plus`` becomes fractional.

    Raises :class:`NonPositivePrice`, :class:`NonPositiveWealth` or
    :class:`ClearingViolation`; the exception's ``frame`` carries what was
    computed before the failure.
    """
    t = state.t + 1
    partial: dict = {"t": t}
    try:
        if draws is None:
            v = float(rng.standard_normal())
        else:
            v = draws.v
        kappa = ou_step_kappa(state.kappa, params, v=v)
        p_plus, p_minus = transition_probs(state.s, state.h, kappa, params.p)
        partial.update(kappa=kappa, p_plus=p_plus, p_minus=p_minus)

        if mean_field:
            flips_out = flips_in = 0
            s_new = expected_opinion(state.s, p_plus, p_minus)
            n_plus = 0.5 * (1.0 + s_new) * params.n_noise
        elif draws is None:
            n_plus, s_new, flips_out, flips_in = sample_opinion(state.n_plus, params.n_noise, p_plus, p_minus, rng)
        else:
            flips_out, flips_in = draws.flips_out, draws.flips_in
            if not (0 <= flips_out <= state.n_plus and 0 <= flips_in <= params.n_noise - state.n_plus):
                raise ValueError(f"forced flips ({flips_out}, {flips_in}) out of range for n_plus={state.n_plus}")
            n_plus = state.n_plus - flips_out + flips_in
            s_new = 2.0 * n_plus / params.n_noise - 1.0
        partial.update(s=s_new)

        u = float(rng.standard_normal()) if draws is None else draws.u
        div_ratio = draw_dividend_ratio(params, u=u)
        partial.update(div_ratio=div_ratio)

        ratio = clearing_price(s_new, state.s, div_ratio, state.w_rational, state.w_noise, params)
        partial.update(ret=ratio - 1.0)
        residual = clearing_residual(s_new, state.s, ratio, div_ratio, state.w_rational, state.w_noise, params)
        if abs(residual) > CLEARING_TOL * (state.w_rational + state.w_noise):
            raise ClearingViolation(f"excess demand residual {residual!r} at step {t}")

        w_r = update_wealth_rational(ratio, div_ratio, state.w_rational, params)
        w_n = update_wealth_noise(state.s, ratio, div_ratio, state.w_noise, params)
        h = update_momentum(state.h, ratio, params.theta)
    except (NonPositivePrice, NonPositiveWealth, ClearingViolation) as exc:
        exc.t = t
        exc.frame = partial
        raise

    new_state = SimState(
        t=t,
        price=state.price * ratio,
        s=s_new,
        h=h,
        kappa=kappa,
        w_rational=w_r,
        w_noise=w_n,
        n_plus=n_plus,
    )
    frame = TrajectoryFrame(
        t=t,
        price=new_state.price,
        s=s_new,
        h=h,
        kappa=kappa,
        w_rational=w_r,
        w_noise=w_n,
        n_plus=n_plus,
        ret=ratio - 1.0,
        div_ratio=div_ratio,
        p_plus=p_plus,
        p_minus=p_minus,
        draws=StepDraws(u=u, v=v, flips_out=flips_out, flips_in=flips_in),
    )
    return new_state, frame
