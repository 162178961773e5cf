"""Single-queue analytic models: M/M/1, M/M/1/K and the on/off queue.

Rates are per hour, so delays come out in hours. The on/off queue is the
continuous-time chain on states ``(x, l)`` where ``x`` is the queue length
and ``l`` is green (served at rate ``mu``) or red (not served). Green ends
at rate ``gamma1`` and red ends at rate ``gamma2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

STABILITY_MARGIN = 1e-12


class StabilityError(ValueError):
    """Arrival rate at or above the capacity of the queue."""


@dataclass(frozen=True)
class MM1Params:
    lam: float
    mu: float

    @property
    def rho(self) -> float:
        return self.lam / self.mu


@dataclass(frozen=True)
class MM1KParams:
    lam: float
    mu: float
    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.lam < 0 or not self.mu > 0:
            raise ValueError("need lam >= 0 and mu > 0")

    @property
    def rho(self) -> float:
        return self.lam / self.mu


@dataclass(frozen=True)
class OnOffQueueParams:
    lam: float
    mu: float
    gamma1: float
    gamma2: float

    def __post_init__(self):
        if min(self.lam, self.gamma1) < 0 or not self.mu > 0 or not self.gamma2 > 0:
            raise ValueError("need lam, gamma1 >= 0 and mu, gamma2 > 0")

    @property
    def capacity(self) -> float:
        """Mean service rate ``mu * gamma2 / (gamma1 + gamma2)``."""
        return self.mu * self.gamma2 / (self.gamma1 + self.gamma2)

    def check_stable(self) -> None:
        if not self.lam < self.capacity * (1 - STABILITY_MARGIN):
            raise StabilityError(
                f"unstable on/off queue: lam={self.lam} >= capacity {self.capacity}"
            )

    def scaled(self, gain: float = 1.0, speedup: float = 1.0) -> "OnOffQueueParams":
        """Rates times ``gain``, switching rates times ``speedup``."""
        return OnOffQueueParams(
            self.lam * gain, self.mu * gain, self.gamma1 * speedup, self.gamma2 * speedup
        )


@dataclass(frozen=True)
class RRRSolution:
    T: float
    R: float
    T1g: float
    T0r: float
    R1g: float
    R0r: float
    lam: float

    @property
    def mean_queue(self) -> float:
        return self.R / self.T

    @property
    def mean_delay(self) -> float:
        if self.lam == 0:
            return math.nan
        return self.R / (self.lam * self.T)


# ---- M/M/1 ------------------------------------------------------------------

def mm1_delay(p: MM1Params) -> float:
    """Mean time in queue (hours): ``(1/mu) * rho / (1 - rho)``."""
    if p.lam < 0 or not p.mu > 0:
        raise ValueError("need lam >= 0 and mu > 0")
    if not p.lam < p.mu:
        raise StabilityError(f"unstable M/M/1: lam={p.lam} >= mu={p.mu}")
    rho = p.rho
    return rho / (1.0 - rho) / p.mu


# ---- M/M/1/K ----------------------------------------------------------------

def mm1k_distribution(p: MM1KParams) -> np.ndarray:
    """Stationary probabilities ``pi_0 .. pi_K``."""
    K, rho = p.K, p.rho
    if rho == 1.0:
        return np.full(K + 1, 1.0 / (K + 1))
    k = np.arange(K + 1)
    if rho < 1.0:
        return rho**k * (1.0 - rho) / (1.0 - rho ** (K + 1))
    # rho > 1: divide through by rho^K so the powers stay bounded
    inv = 1.0 / rho
    w = inv ** (K - k)
    return w * (1.0 - inv) / (1.0 - inv ** (K + 1))


def mm1k_blocking(p: MM1KParams) -> float:
    return float(mm1k_distribution(p)[-1])


@dataclass(frozen=True)
class MM1KMetrics:
    mean_queue: float
    throughput: float
    mean_delay: float
    blocking: float


def mm1k_metrics(p: MM1KParams) -> MM1KMetrics:
    """Mean queue (closed form), effective throughput and Little's-law delay.

    With ``lam == 0`` the delay is undefined and reported as NaN.
    """
    K, rho = p.K, p.rho
    if rho == 1.0:
        n = K / 2.0
    elif rho == 0.0:
        n = 0.0
    elif rho < 1.0:
        n = rho * (1 - (K + 1) * rho**K + K * rho ** (K + 1)) / ((1 - rho) * (1 - rho ** (K + 1)))
    else:
        # the closed form cancels badly for large rho; sum the stable weights
        pi = mm1k_distribution(p)
        n = float(np.dot(np.arange(K + 1), pi))
    blocking = mm1k_blocking(p)
    lam_e = p.lam * (1.0 - blocking)
    delay = n / lam_e if lam_e > 0 else math.nan
    return MM1KMetrics(n, lam_e, delay, blocking)


# ---- on/off queue -----------------------------------------------------------

def rrr_solve(p: OnOffQueueParams) -> RRRSolution:
    """Solve the renewal-cycle time and reward recursions.

    The cycle starts in the empty green state. The first system solves for
    the cycle time ``T`` and first-passage times ``T1g`` (one level left in
    green) and ``T0r`` (red back to green, empty queue). The second reuses
    them, since with reward equal to the queue length a level-shifted
    passage collects one extra unit per unit time.
    """
    p.check_stable()
    lam, mu, g1, g2 = p.lam, p.mu, p.gamma1, p.gamma2
    a = lam + g1
    b = lam + mu + g1
    c = lam + g2

    # unknowns (T, T1g, T0r); uses T1r = T0r and T2g = T1g
    A = np.array([
        [1.0, -lam / a, -g1 / a],
        [0.0, 1.0 - 2 * lam / b - g1 / b, -g1 / b],
        [0.0, -lam / c, 1.0 - lam / c],
    ])
    rhs = np.array([1 / a, 1 / b, 1 / c])
    T, T1g, T0r = _solve(A, rhs)

    # unknowns (R, R1g, R0r); uses R2g = R1g + T1g and R1r = R0r + T0r
    B = A
    rhs_r = np.array([
        0.0,
        1 / b + lam / b * T1g + g1 / b * T0r,
        lam / c * T0r,
    ])
    R, R1g, R0r = _solve(B, rhs_r)
    return RRRSolution(T=T, R=R, T1g=T1g, T0r=T0r, R1g=R1g, R0r=R0r, lam=lam)


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:  # cannot happen under stability
        raise RuntimeError(f"singular renewal system: {exc}") from exc


@dataclass(frozen=True)
class OnOffMetrics:
    mean_queue: float
    mean_delay: float


def onoff_closed_form(p: OnOffQueueParams) -> OnOffMetrics:
    """Closed-form mean queue and delay (hours) of the on/off queue.

    At ``lam == 0`` the delay is the light-traffic limit of the formula.
    """
    p.check_stable()
    lam, mu, g1, g2 = p.lam, p.mu, p.gamma1, p.gamma2
    s = g1 + g2
    denom = g2 * mu - lam * s
    n = lam * (g1 * g1 + 2 * g1 * g2 + g1 * mu + g2 * g2) / (s * denom)
    d = (s + g1 / s * mu) / denom
    return OnOffMetrics(n, d)


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean_queue: float
    mean_delay: float
    queue_half_width: float
    delay_half_width: float
    batches: int
    confidence: float

    def brackets(self, value: float) -> bool:
        return abs(self.mean_queue - value) <= self.queue_half_width


def onoff_montecarlo(
    p: OnOffQueueParams,
    horizon: float,
    seed: int,
    batches: int = 30,
    confidence: float = 0.99,
    chunk: float | None = None,
) -> MonteCarloEstimate:
    """Time-average queue of the on/off chain by exact event simulation.

    Green and red periods are exponential; arrivals and potential service
    completions are Poisson streams, the latter thinned to green time. The
    queue path is the reflection at zero of the free walk, evaluated in
    vectorized chunks. Confidence half-widths come from batch means.
    """
    p.check_stable()
    if not horizon > 0 or batches < 2:
        raise ValueError("need horizon > 0 and at least two batches")
    rng = np.random.default_rng(seed)
    lam, mu, g1, g2 = p.lam, p.mu, p.gamma1, p.gamma2
    if lam == 0:
        return MonteCarloEstimate(0.0, 0.0, 0.0, 0.0, batches, confidence)

    batch_len = horizon / batches
    if chunk is None:
        # ~1e6 events per chunk
        chunk = batch_len / max(1, math.ceil((lam + mu) * batch_len / 1e6))
    per_batch = max(1, round(batch_len / chunk))
    chunk = batch_len / per_batch

    x = 0
    # start green with probability of the stationary phase
    green = bool(rng.random() < g2 / (g1 + g2))
    phase_left = rng.exponential(1 / g1) if (green and g1 > 0) else (
        math.inf if green else rng.exponential(1 / g2)
    )
    areas = np.zeros(batches)
    for b in range(batches):
        for _ in range(per_batch):
            area, x, green, phase_left = _onoff_chunk(
                rng, x, green, phase_left, chunk, lam, mu, g1, g2
            )
            areas[b] += area
    means = areas / batch_len
    n_hat = float(means.mean())
    half = float(stats.t.ppf(0.5 + confidence / 2, batches - 1) * means.std(ddof=1) / math.sqrt(batches))
    return MonteCarloEstimate(n_hat, n_hat / lam, half, half / lam, batches, confidence)


def _onoff_chunk(rng, x0, green, phase_left, length, lam, mu, g1, g2):
    # green intervals inside [0, length)
    starts, ends = [], []
    t = 0.0
    while t < length:
        end = min(length, t + phase_left)
        if green:
            starts.append(t)
            ends.append(end)
        if t + phase_left >= length:
            phase_left -= length - t
            break
        t += phase_left
        green = not green
        rate = g1 if green else g2
        phase_left = rng.exponential(1 / rate) if rate > 0 else math.inf

    arrivals = np.sort(rng.uniform(0.0, length, rng.poisson(lam * length)))
    service = [
        np.sort(rng.uniform(s, e, rng.poisson(mu * (e - s)))) for s, e in zip(starts, ends)
    ]
    service = np.concatenate(service) if service else np.empty(0)

    times = np.concatenate([arrivals, service])
    steps = np.concatenate([np.ones(arrivals.size), -np.ones(service.size)])
    order = np.argsort(times, kind="stable")
    times, steps = times[order], steps[order]
    S = np.cumsum(steps)
    x = S + np.maximum(x0, -np.minimum.accumulate(np.minimum(S, 0.0)))
    x = np.maximum(x, 0.0)
    # x[k] holds on [times[k], times[k+1])
    edges = np.concatenate([[0.0], times, [length]])
    levels = np.concatenate([[x0], x])
    area = float(np.dot(levels, np.diff(edges)))
    x_end = int(levels[-1])
    return area, x_end, green, phase_left
