"""Performance measures from event logs and fluid trajectories.

Mean queue lengths are time integrals of the queue step function divided by
the elapsed time after warm-up. Delay is time in queue per vehicle hop;
hops still queued at the horizon are censored and counted separately.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .des import ARRIVAL, BLOCK, DEPART, DROP, JOIN, MP_DECISION, PHASE_CHANGE, EventLog
from .network import MovementId, Network, TurnKind

DEFAULT_WARMUP = 600.0

# processing class of each logged kind, for re-sorting permuted logs
_CLASS = {MP_DECISION: 0, PHASE_CHANGE: 1, ARRIVAL: 2, DROP: 2, JOIN: 3, BLOCK: 3, DEPART: 4}


@dataclass
class QueueStats:
    mean_queue: float = 0.0
    mean_delay: float = 0.0
    served: int = 0
    arrivals: int = 0
    censored: int = 0
    delay_sum: float = 0.0
    window: float = 0.0

    @property
    def arrival_rate(self) -> float:
        """Joins per hour inside the measurement window."""
        return 3600.0 * self.arrivals / self.window if self.window > 0 else 0.0

    @property
    def little_residual(self) -> float:
        """``|N - lambda_e D| / N`` with lambda_e in vehicles per second."""
        if self.mean_queue <= 0:
            return 0.0
        lam = self.arrivals / self.window
        return abs(self.mean_queue - lam * self.mean_delay) / self.mean_queue


@dataclass
class Summary:
    movements: dict[MovementId, QueueStats]
    warmup: float
    duration: float
    dropped: int = 0

    @property
    def total_mean_queue(self) -> float:
        return sum(s.mean_queue for s in self.movements.values())

    @property
    def censored(self) -> int:
        return sum(s.censored for s in self.movements.values())

    def delay_totals(self, keep: Optional[Callable[[MovementId], bool]] = None) -> tuple[float, int]:
        total, n = 0.0, 0
        for mid, s in self.movements.items():
            if keep is None or keep(mid):
                total += s.delay_sum
                n += s.served
        return total, n

    def mean_delay(self, keep: Optional[Callable[[MovementId], bool]] = None) -> float:
        total, n = self.delay_totals(keep)
        return total / n if n else 0.0


def sort_events(events: Iterable[tuple]) -> list[tuple]:
    """Canonical processing order: time, event class, entity, vehicle."""
    return sorted(events, key=lambda e: (e[0], _CLASS[e[1]], e[2], e[3]))


def summarize(log: EventLog, warmup: float = DEFAULT_WARMUP) -> Summary:
    """Per-movement time-average queue, mean delay and counts after ``warmup``."""
    end = log.duration
    if warmup >= end:
        raise ValueError("warm-up must be shorter than the run")
    ids = log.network.movement_ids
    J = len(ids)
    count = [0] * J
    last = [0.0] * J
    area = [0.0] * J
    stats = [QueueStats(window=end - warmup) for _ in range(J)]
    joined: dict[int, float] = {}

    def accrue(j, t):
        a, b = max(last[j], warmup), min(t, end)
        if b > a:
            area[j] += count[j] * (b - a)
        last[j] = t

    for t, kind, j, veh, _ in log.events:
        if kind in (ARRIVAL, JOIN):
            accrue(j, t)
            count[j] += 1
            joined[veh] = t
            if t >= warmup:
                stats[j].arrivals += 1
        elif kind == DEPART:
            accrue(j, t)
            count[j] -= 1
            t_join = joined.pop(veh)
            if t_join >= warmup:
                stats[j].served += 1
                stats[j].delay_sum += t - t_join
    for j in range(J):
        accrue(j, end)
    for veh, t_join in joined.items():
        if t_join >= warmup:
            j = _find_queue(log, veh)
            if j is not None:
                stats[j].censored += 1
    for j, s in enumerate(stats):
        s.mean_queue = area[j] / (end - warmup)
        s.mean_delay = s.delay_sum / s.served if s.served else 0.0
    return Summary(dict(zip(ids, stats)), warmup, end, log.dropped)


def _find_queue(log: EventLog, veh: int) -> Optional[int]:
    rec = log.vehicles.get(veh)
    if rec is not None and rec.hops:
        return rec.hops[-1][0]
    for t, kind, j, v, _ in reversed(log.events):
        if v == veh and kind in (ARRIVAL, JOIN):
            return j
    return None


def pooled(summaries: Sequence[Summary]) -> Summary:
    """Combine replications: queue means averaged, delay totals pooled."""
    if not summaries:
        raise ValueError("nothing to pool")
    ids = list(summaries[0].movements)
    out = {}
    for mid in ids:
        parts = [s.movements[mid] for s in summaries]
        q = QueueStats(
            mean_queue=float(np.mean([p.mean_queue for p in parts])),
            served=sum(p.served for p in parts),
            arrivals=sum(p.arrivals for p in parts),
            censored=sum(p.censored for p in parts),
            delay_sum=sum(p.delay_sum for p in parts),
            window=sum(p.window for p in parts),
        )
        q.mean_delay = q.delay_sum / q.served if q.served else 0.0
        out[mid] = q
    return Summary(out, summaries[0].warmup, summaries[0].duration, sum(s.dropped for s in summaries))


def is_right_turn(network: Network) -> Callable[[MovementId], bool]:
    kinds = {m.id: m.turn_kind for m in network.movements}
    return lambda mid: kinds[mid] == TurnKind.RIGHT


# ---- grid reports -----------------------------------------------------------

@dataclass
class CellResult:
    gain: float
    control: str
    replication: int
    summary: Optional[Summary] = None
    error: Optional[str] = None


@dataclass
class RatioRow:
    control: str
    gain: float
    mean_total_queue: float
    ratio: float
    deviation: float  # ratio / gain - 1


@dataclass
class RatioReport:
    rows: list[RatioRow]
    mp_ratio: dict[float, float] = field(default_factory=dict)  # MP4 / MP6 per gain
    flags: list[str] = field(default_factory=list)

    def table(self) -> dict[tuple[str, float], RatioRow]:
        return {(r.control, r.gain): r for r in self.rows}


def grid_queues(cells: Iterable[CellResult]) -> dict[tuple[str, float], float]:
    """Mean total queue per (control, gain), averaged over replications."""
    acc: dict[tuple[str, float], list[float]] = defaultdict(list)
    for c in cells:
        if c.summary is not None:
            acc[(c.control, c.gain)].append(c.summary.total_mean_queue)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def ratio_table(
    queues: Mapping[tuple[str, float], float],
    baseline: float = 1.0,
    tolerance: float = 0.25,
) -> RatioReport:
    """Ratio of mean total queue to the baseline gain, per control.

    Flags every cell whose ratio departs from its gain by more than
    ``tolerance`` (relative), and reports MP4/MP6 ratios when both exist.
    """
    controls = sorted({c for c, _ in queues})
    rows, flags = [], []
    for ctrl in controls:
        if (ctrl, baseline) not in queues:
            raise KeyError(f"missing baseline gain {baseline} for control {ctrl}")
        base = queues[(ctrl, baseline)]
        for (c, g), q in sorted(queues.items()):
            if c != ctrl:
                continue
            ratio = q / base if base > 0 else math.nan
            dev = ratio * baseline / g - 1.0
            rows.append(RatioRow(ctrl, g, q, ratio, dev))
            if not abs(dev) <= tolerance:
                flags.append(f"{ctrl} gain {g}: queue ratio {ratio:.3f} departs from {g / baseline:g}")
    mp = {}
    for (c, g), q in queues.items():
        if c == "mp4" and ("mp6", g) in queues and queues[("mp6", g)] > 0:
            mp[g] = q / queues[("mp6", g)]
    return RatioReport(rows, dict(sorted(mp.items())), flags)


@dataclass
class DelayBand:
    control: str
    delays: dict[float, float]  # gain -> mean delay (s)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.delays.values()))) if self.delays else math.nan

    @property
    def width(self) -> float:
        v = list(self.delays.values())
        return max(v) - min(v) if v else math.nan

    @property
    def relative_width(self) -> float:
        return self.width / self.mean if self.delays and self.mean > 0 else math.nan


@dataclass
class DelayReport:
    bands: dict[str, DelayBand]
    flags: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not any(b.delays for b in self.bands.values())


def delay_band(
    cells: Iterable[CellResult],
    network: Network,
    right_turns: str = "without",
    tolerance: float = 0.15,
) -> DelayReport:
    """Per-control mean delay across gains and its max-min band.

    ``right_turns`` is ``"with"`` (all movements), ``"without"`` (drop
    right turns) or ``"only"`` (right turns alone).
    """
    rt = is_right_turn(network)
    keep = {
        "with": lambda mid: True,
        "without": lambda mid: not rt(mid),
        "only": rt,
    }[right_turns]
    tot: dict[tuple[str, float], list[float]] = defaultdict(lambda: [0.0, 0])
    for c in cells:
        if c.summary is None:
            continue
        s, n = c.summary.delay_totals(keep)
        tot[(c.control, c.gain)][0] += s
        tot[(c.control, c.gain)][1] += n
    bands: dict[str, DelayBand] = {}
    for (ctrl, g), (s, n) in sorted(tot.items()):
        band = bands.setdefault(ctrl, DelayBand(ctrl, {}))
        if n:
            band.delays[g] = s / n
    flags = []
    for ctrl, band in bands.items():
        if not band.delays:
            flags.append(f"{ctrl}: no movements match filter {right_turns!r}")
        elif band.relative_width > tolerance:
            flags.append(f"{ctrl}: delay band {band.relative_width:.1%} of mean exceeds {tolerance:.0%}")
    if not bands:
        flags.append(f"no movements match filter {right_turns!r}")
    return DelayReport(bands, flags)
