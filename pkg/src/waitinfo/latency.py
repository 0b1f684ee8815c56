"""Latency metrics over a :class:`~waitinfo.policy.Schedule`.

``n`` and ``m`` both count the end-of-sequence token.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .policy import Schedule, detect_early_stop


class DegenerateSchedule(ValueError):
    pass


def average_lagging(schedule: Schedule) -> float:
    # tau is the first target index that has read the whole source
    g, n, m = schedule.g, schedule.n, schedule.m
    rate = m / n
    total, tau = 0.0, 0
    for i, gi in enumerate(g, start=1):
        total += gi - (i - 1) / rate
        tau = i
        if gi >= n:
            break
    return total / tau


def consecutive_wait(schedule: Schedule) -> float:
    prev, total, bursts = 0, 0, 0
    for gi in schedule.g:
        step = gi - prev
        total += step
        bursts += step > 0
        prev = gi
    if bursts == 0:
        raise DegenerateSchedule("consecutive wait undefined: no READ precedes any WRITE")
    return total / bursts


def average_proportion(schedule: Schedule) -> float:
    return sum(schedule.g) / (schedule.n * schedule.m)


def differentiable_average_lagging(schedule: Schedule) -> float:
    g, n, m = schedule.g, schedule.n, schedule.m
    step = n / m
    total, prev = 0.0, None
    for i, gi in enumerate(g, start=1):
        cur = gi if prev is None else max(gi, prev + step)
        total += cur - (i - 1) * step
        prev = cur
    return total / m


@dataclass
class LatencyReport:
    al: float
    cw: float
    ap: float
    dal: float
    early_stop: float
    n: float
    m: float

    @classmethod
    def from_schedule(cls, schedule: Schedule) -> "LatencyReport":
        return cls(
            al=average_lagging(schedule),
            cw=consecutive_wait(schedule),
            ap=average_proportion(schedule),
            dal=differentiable_average_lagging(schedule),
            early_stop=float(detect_early_stop(schedule)),
            n=float(schedule.n),
            m=float(schedule.m),
        )


def corpus_report(reports: Iterable[LatencyReport]) -> LatencyReport:
    """Unweighted mean of every field; ``early_stop`` becomes the proportion."""
    reports = list(reports)
    if not reports:
        raise ValueError("corpus_report of an empty corpus")
    fields = asdict(reports[0]).keys()
    return LatencyReport(**{f: sum(getattr(r, f) for r in reports) / len(reports) for f in fields})


CSV_HEADER = ["policy", "param", "BLEU", "AL", "CW", "AP", "DAL", "early_stop_pct"]


def csv_row(policy: str, param, bleu: float, report: LatencyReport) -> list[str]:
    return [
        policy, str(param), f"{bleu:.2f}", f"{report.al:.2f}", f"{report.cw:.2f}",
        f"{report.ap:.2f}", f"{report.dal:.2f}", f"{100.0 * report.early_stop:.2f}",
    ]


def format_csv(rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(rows)
    return buf.getvalue()
