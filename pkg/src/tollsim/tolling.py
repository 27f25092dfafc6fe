"""Interval-based decongestion tolling.

Each iteration measures the average queueing delay per link and time
interval; the controller converts those delays into the next iteration's
toll schedule: tolls are proportional to the average delay once it clears a
minimum threshold, and can never be negative. The schedule produced from
iteration k applies in iteration k+1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DAY_S = 86400


class TollingError(ValueError):
    pass


@dataclass
class TollControllerParams:
    interval_s: int = 900
    k_p: float = 0.0005          # currency per second of average delay; the default
                                 # prices a 60 s delay at 0.03 currency per traversal
    d_min_s: float = 1.0
    smoothing_alpha: float = 1.0  # 1.0 = pure proportional control
    exempt_modes: list = field(default_factory=list)

    def validate(self) -> None:
        if self.interval_s <= 0 or DAY_S % self.interval_s != 0:
            raise TollingError("interval must be positive and divide the day")
        if self.k_p < 0:
            raise TollingError("controller gain must be >= 0")
        if self.d_min_s < 0:
            raise TollingError("delay threshold must be >= 0")
        if not (0.0 < self.smoothing_alpha <= 1.0):
            raise TollingError("smoothing alpha must lie in (0, 1]")


def n_intervals(interval_s: int) -> int:
    return DAY_S // interval_s


@dataclass
class DelayTable:
    """Average delay (s) and vehicle count per link and interval."""
    d0: np.ndarray        # float, (n_links, n_intervals)
    counts: np.ndarray    # int, same shape
    interval_s: int

    @classmethod
    def empty(cls, n_links: int, interval_s: int) -> "DelayTable":
        bins = n_intervals(interval_s)
        return cls(d0=np.zeros((n_links, bins)), counts=np.zeros((n_links, bins), dtype=np.int64),
                   interval_s=interval_s)

    @classmethod
    def from_observations(cls, link_idx: np.ndarray, leave_time: np.ndarray,
                          delay_s: np.ndarray, n_links: int, interval_s: int) -> "DelayTable":
        """Aggregate per-vehicle delays, assigning each vehicle to the interval
        containing its link-leave time."""
        table = cls.empty(n_links, interval_s)
        if len(link_idx) == 0:
            return table
        bins = np.minimum(leave_time // interval_s, n_intervals(interval_s) - 1).astype(np.int64)
        np.add.at(table.counts, (link_idx, bins), 1)
        np.add.at(table.d0, (link_idx, bins), delay_s)
        observed = table.counts > 0
        table.d0[observed] /= table.counts[observed]
        return table


def average_delay(delays_s) -> float:
    """Average of the per-vehicle delays observed in one (link, interval) cell."""
    delays = np.asarray(delays_s, dtype=float)
    if delays.size == 0:
        raise TollingError("average delay of an empty cell is undefined")
    return float(delays.mean())


def threshold_delay(d0, d_min: float):
    """Zero out average delays below the threshold; the boundary is inclusive."""
    d0 = np.asarray(d0, dtype=float)
    out = np.where(d0 >= d_min, d0, 0.0)
    return out if out.ndim else float(out)


@dataclass
class TollSchedule:
    """Per-link, per-interval charge at link exit. Zero everywhere by default."""
    m: np.ndarray         # float, (n_links, n_intervals), currency per traversal
    interval_s: int

    @classmethod
    def zero(cls, n_links: int, interval_s: int) -> "TollSchedule":
        return cls(m=np.zeros((n_links, n_intervals(interval_s))), interval_s=interval_s)

    def toll_for(self, link_idx: int, time_s: float) -> float:
        """Charge for leaving ``link_idx`` at ``time_s``; times beyond the day
        fall into the last interval."""
        b = min(int(time_s) // self.interval_s, self.m.shape[1] - 1)
        return float(self.m[link_idx, b])

    @property
    def total_cells(self) -> int:
        return int(np.count_nonzero(self.m))

    def __eq__(self, other) -> bool:
        return (isinstance(other, TollSchedule) and self.interval_s == other.interval_s
                and np.array_equal(self.m, other.m))


def update_tolls(delay_table: DelayTable, params: TollControllerParams,
                 previous: TollSchedule | None = None) -> TollSchedule:
    """Next iteration's schedule from this iteration's measured delays.

    raw = max(0, k_p * thresholded delay); with smoothing alpha < 1 the new
    schedule blends the raw value with the previous one.
    """
    params.validate()
    d = threshold_delay(delay_table.d0, params.d_min_s)
    raw = np.maximum(0.0, params.k_p * d)
    alpha = params.smoothing_alpha
    if previous is not None and alpha < 1.0:
        if previous.m.shape != raw.shape:
            raise TollingError("previous schedule shape mismatch")
        m = alpha * raw + (1.0 - alpha) * previous.m
    else:
        m = raw
    return TollSchedule(m=m, interval_s=delay_table.interval_s)


def toll_for(link_idx: int, time_s: float, schedule: TollSchedule | None) -> float:
    """Module-level lookup used by the mobility simulation and the router."""
    if schedule is None:
        return 0.0
    return schedule.toll_for(link_idx, time_s)


# ---------------------------------------------------------------------------
# persistence: one delimited file per iteration for audit and replay

TOLL_FILE_HEADER = "link,interval_start_s,toll_currency"


def write_schedule(schedule: TollSchedule, link_ids: list, path: str | Path) -> None:
    lines = [TOLL_FILE_HEADER]
    rows, cols = np.nonzero(schedule.m)
    for r, c in zip(rows, cols):
        lines.append(f"{link_ids[r]},{int(c) * schedule.interval_s},"
                     f"{float(schedule.m[r, c])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_schedule(path: str | Path, link_index: dict, n_links: int,
                  interval_s: int) -> TollSchedule:
    schedule = TollSchedule.zero(n_links, interval_s)
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != TOLL_FILE_HEADER:
        raise TollingError(f"not a toll schedule file: {path}")
    for line in lines[1:]:
        link_id, start, value = line.split(",")
        schedule.m[link_index[link_id], int(start) // interval_s] = float(value)
    return schedule
