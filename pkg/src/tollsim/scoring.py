"""Plan scoring with an income-dependent marginal utility of money.

A plan's score is the sum of activity utilities and travel disutilities.
Monetary items (tolls) enter each leg through the agent-specific marginal
utility of money, which scales a global rate by the population average
income over the agent's income. Activity utility uses the standard
logarithmic duration term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

MIN_ACTIVITY_DURATION_S = 1
SHORT_DURATION_PENALTY = -100.0   # added when realized duration falls below the minimum


class ScoringError(ValueError):
    pass


@dataclass
class ScoringParams:
    """Utility rates. Time rates are utils/h, money utils/currency, distance per meter."""
    beta_perf: float = 6.0
    beta_wait: float = -3.0
    beta_late: float = -18.0
    beta_early: float = -6.0
    beta_short: float = 0.0          # kept at zero; no defensible calibration exists
    beta_m: float = 1.0              # global marginal utility of money, utils/currency
    beta_transfer: float = -1.0
    zeta_h: float = 10.0             # activity priority parameter, hours
    beta_trav: dict = field(default_factory=lambda: {
        "car": -6.0, "ride": -6.0, "pt": -3.0, "bicycle": -6.0, "walk": -6.0, "freight": -6.0,
    })
    mode_constant: dict = field(default_factory=lambda: {
        "car": -1.0, "ride": -1.5, "pt": -2.0, "bicycle": -0.5, "walk": 0.0, "freight": 0.0,
    })
    beta_d: dict = field(default_factory=lambda: {
        "car": 0.0, "ride": 0.0, "pt": 0.0, "bicycle": 0.0, "walk": 0.0, "freight": 0.0,
    })
    gamma_d: dict = field(default_factory=lambda: {
        "car": -0.0002, "ride": -0.0004, "pt": 0.0, "bicycle": 0.0, "walk": 0.0, "freight": -0.0002,
    })
    population_average_income: float | None = None   # filled from the population unless overridden

    def validate(self) -> None:
        if self.beta_m <= 0:
            raise ScoringError("beta_m must be > 0")
        if self.beta_short != 0.0:
            raise ScoringError("beta_short is fixed at zero")
        if self.population_average_income is not None and self.population_average_income <= 0:
            raise ScoringError("population average income must be > 0")


def marginal_utility_of_money(beta_m: float, population_average_income: float,
                              income: float) -> float:
    """Agent-specific marginal utility of money.

    Scales the global rate by the population average income relative to the
    agent's own income, so poorer agents value a currency unit more.
    """
    if income <= 0:
        raise ScoringError(
            f"income must be > 0, got {income!r}: the marginal utility of money "
            "divides by income")
    return beta_m * population_average_income / income


def money_to_utility(amount: float, beta_m_n: float) -> float:
    """Convert a money amount (negative = payment) into utility units."""
    return beta_m_n * amount


def utility_to_money(utils: float, beta_m_n: float) -> float:
    return utils / beta_m_n


@dataclass
class ActivityScore:
    performing: float = 0.0
    waiting: float = 0.0
    late_arrival: float = 0.0
    early_departure: float = 0.0
    too_short: float = 0.0

    @property
    def total(self) -> float:
        return (self.performing + self.waiting + self.late_arrival
                + self.early_departure + self.too_short)


@dataclass
class LegScore:
    constant: float = 0.0
    travel_time: float = 0.0
    money: float = 0.0
    distance: float = 0.0
    transfers: float = 0.0
    money_amount: float = 0.0     # raw currency change of the leg (tolls negative)

    @property
    def total(self) -> float:
        return self.constant + self.travel_time + self.money + self.distance + self.transfers


@dataclass
class ScoredPlan:
    total: float
    activity_scores: list
    leg_scores: list
    money_total: float            # summed currency change over all legs


def performing_utility(duration_s: float, typical_duration_s: float,
                       params: ScoringParams) -> float:
    """Logarithmic performing utility; the zero crossing sits at
    t0 = t_typ * exp(-zeta / t_typ)."""
    t_typ_h = typical_duration_s / 3600.0
    t_dur_h = max(duration_s, MIN_ACTIVITY_DURATION_S) / 3600.0
    t0_h = t_typ_h * math.exp(-params.zeta_h / t_typ_h)
    value = params.beta_perf * t_typ_h * math.log(t_dur_h / t0_h)
    if duration_s < MIN_ACTIVITY_DURATION_S:
        value += SHORT_DURATION_PENALTY
    return value


def score_activity(activity, realized_start_s: float, realized_end_s: float,
                   params: ScoringParams, opening_time_s: float | None = None) -> ActivityScore:
    """Score one activity instance from its realized start and end times.

    ``opening_time_s`` delays the performable period and accrues waiting
    disutility; scenario activities carry no opening hours, so the default
    leaves the waiting term at zero.
    """
    if realized_end_s < realized_start_s:
        raise ScoringError("activity must end at or after its start")
    terms = ActivityScore()
    effective_start = realized_start_s
    if opening_time_s is not None and opening_time_s > realized_start_s:
        waiting_s = min(opening_time_s, realized_end_s) - realized_start_s
        terms.waiting = params.beta_wait * waiting_s / 3600.0
        effective_start = min(opening_time_s, realized_end_s)
    duration_s = realized_end_s - effective_start
    terms.performing = performing_utility(duration_s, activity.typical_duration_s, params)
    latest_start = getattr(activity, "latest_start_s", None)
    if latest_start is not None and realized_start_s > latest_start:
        terms.late_arrival = params.beta_late * (realized_start_s - latest_start) / 3600.0
    earliest_end = getattr(activity, "earliest_end_s", None)
    if earliest_end is not None and realized_end_s < earliest_end:
        terms.early_departure = params.beta_early * (earliest_end - realized_end_s) / 3600.0
    return terms


def score_leg(mode: str, travel_time_s: float, distance_m: float, money_amount: float,
              transfers: int, params: ScoringParams, beta_m_n: float) -> LegScore:
    """Score one executed leg. ``money_amount`` sums the leg's money events,
    with tolls entering as negative amounts."""
    t_h = travel_time_s / 3600.0
    return LegScore(
        constant=params.mode_constant[mode],
        travel_time=params.beta_trav[mode] * t_h,
        money=beta_m_n * money_amount,
        distance=(params.beta_d[mode] + beta_m_n * params.gamma_d[mode]) * distance_m,
        transfers=params.beta_transfer * transfers,
        money_amount=money_amount,
    )


@dataclass
class ExecutedLeg:
    """Realized outcome of one leg, as reported by the mobility simulation."""
    mode: str
    departure_s: int
    arrival_s: int
    distance_m: float
    money_amount: float = 0.0     # negative = payment
    transfers: int = 0


def score_plan(plan, executed_legs: list, params: ScoringParams, beta_m_n: float,
               day_s: int = 86400) -> ScoredPlan:
    """Score an executed plan: activity terms plus leg terms.

    The first and the last activity are merged into a single wrapped activity
    whose duration spans the day boundary, the usual closed-day treatment.
    """
    activities = plan.activities
    if len(executed_legs) != len(activities) - 1:
        raise ScoringError(
            f"plan has {len(activities) - 1} legs but {len(executed_legs)} were executed")
    activity_scores = []
    if not executed_legs:
        activity_scores.append(score_activity(activities[0], 0.0, float(day_s), params))
    else:
        # wrapped overnight activity: duration before the first departure plus
        # duration after the last arrival; the morning segment keeps the first
        # activity's schedule bounds
        wrap_duration = executed_legs[0].departure_s + max(0, day_s - executed_legs[-1].arrival_s)
        wrapped = ActivityScore(
            performing=performing_utility(wrap_duration, activities[0].typical_duration_s, params))
        earliest_end = activities[0].earliest_end_s
        if earliest_end is not None and executed_legs[0].departure_s < earliest_end:
            wrapped.early_departure = params.beta_early * \
                (earliest_end - executed_legs[0].departure_s) / 3600.0
        latest_start = activities[0].latest_start_s
        if latest_start is not None and executed_legs[-1].arrival_s > latest_start:
            wrapped.late_arrival = params.beta_late * \
                (executed_legs[-1].arrival_s - latest_start) / 3600.0
        activity_scores.append(wrapped)
        for i, act in enumerate(activities[1:-1], start=1):
            start = executed_legs[i - 1].arrival_s
            end = executed_legs[i].departure_s
            activity_scores.append(score_activity(act, start, end, params))
    leg_scores = [
        score_leg(leg.mode, leg.arrival_s - leg.departure_s, leg.distance_m,
                  leg.money_amount, leg.transfers, params, beta_m_n)
        for leg in executed_legs
    ]
    total = sum(a.total for a in activity_scores) + sum(l.total for l in leg_scores)
    money_total = sum(l.money_amount for l in executed_legs)
    return ScoredPlan(total=total, activity_scores=activity_scores,
                      leg_scores=leg_scores, money_total=money_total)
