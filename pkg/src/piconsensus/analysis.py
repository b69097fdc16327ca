"""Post-run checks: decay-rate fits, Lyapunov audits, event statistics."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import control
from .errors import AnalysisError

MIN_FIT_SAMPLES = 10


@dataclass(frozen=True)
class RateFit:
    rate: float
    r_squared: float
    window: tuple
    intercept: float
    samples: int

    def as_dict(self) -> dict:
        return asdict(self)


def fit_rate(trace, floor: float = 1e-14, error=None) -> RateFit:
    """Least-squares fit of ln(error) = intercept - rate * t on the tail.

    The tail is every sample after the error first drops to 10% of its
    initial value, restricted to values at or above ``floor``. Pass ``error``
    together with a times array in place of ``trace`` for bare series.
    """
    if error is None:
        times, err = np.asarray(trace.times, dtype=float), np.asarray(trace.error, dtype=float)
    else:
        times, err = np.asarray(trace, dtype=float), np.asarray(error, dtype=float)
    if times.shape != err.shape or times.ndim != 1:
        raise AnalysisError("times and error series must be 1-D and of equal length")
    if not floor > 0:
        raise AnalysisError(f"floor must be positive, got {floor}")
    ceiling = 0.1 * err[0]
    below = np.flatnonzero(err <= ceiling)
    if below.size == 0:
        raise AnalysisError("insufficient decay: error never falls to 10% of its initial value")
    mask = np.zeros(err.size, dtype=bool)
    mask[below[0]:] = True
    mask &= (err >= floor) & (err <= ceiling)
    if mask.sum() < MIN_FIT_SAMPLES:
        raise AnalysisError(f"insufficient decay: only {int(mask.sum())} samples in the fit window")
    t, logy = times[mask], np.log(err[mask])
    slope, intercept = np.polyfit(t, logy, 1)
    resid = logy - (slope * t + intercept)
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - float(resid @ resid) / ss_tot)
    return RateFit(float(-slope), r2, (float(t[0]), float(t[-1])), float(intercept), int(mask.sum()))


@dataclass(frozen=True)
class LyapunovAudit:
    passed: bool
    max_increase: float
    max_excess_time: Optional[float]
    fraction_increasing: float
    worst_ratio: float

    def as_dict(self) -> dict:
        return asdict(self)


def audit_lyapunov(trace, slack: float = 10.0) -> LyapunovAudit:
    """Check that V does not grow between recorded samples beyond integrator noise.

    A step from t_k to t_{k+1} may increase V by at most
    ``slack * dt**4 * (t_{k+1} - t_k) * |p_k|^2`` (RK4 global error scale
    times the size of the deviation p = (y - y*, eta - eta_bar)) plus a
    round-off floor of 64 machine epsilons of V.
    """
    v = trace.lyapunov
    if v is None:
        raise AnalysisError("trace has no Lyapunov series (optimum unavailable)")
    v = np.asarray(v, dtype=float)
    if v.size < 2:
        return LyapunovAudit(True, 0.0, None, 0.0, 0.0)
    times = np.asarray(trace.times, dtype=float)
    rho = trace.outputs - trace.y_star
    sigma = trace.etas - trace.eta_bar
    p2 = np.sum(rho ** 2, axis=(1, 2)) + np.sum(sigma ** 2, axis=(1, 2))
    dv = np.diff(v)
    allowed = slack * trace.dt ** 4 * np.diff(times) * p2[:-1]
    allowed += 64 * np.finfo(float).eps * np.maximum(np.abs(v[:-1]), np.abs(v[1:]))
    ratio = np.where(dv > 0, dv / allowed, 0.0)
    worst = int(np.argmax(ratio))
    passed = bool(ratio[worst] <= 1.0)
    return LyapunovAudit(
        passed=passed,
        max_increase=float(max(dv.max(), 0.0)),
        max_excess_time=None if passed else float(times[worst + 1]),
        fraction_increasing=float(np.mean(dv > 0)),
        worst_ratio=float(ratio[worst]),
    )


@dataclass(frozen=True)
class AgentEvents:
    count: int
    min_gap: Optional[float]
    mean_gap: Optional[float]
    max_gap: Optional[float]


@dataclass(frozen=True)
class EventStats:
    delta: float
    agents: tuple
    total: int
    min_gap: Optional[float]
    zeno_free: bool

    def as_dict(self) -> dict:
        return {
            "delta": self.delta,
            "total": self.total,
            "min_gap": self.min_gap,
            "zeno_free": self.zeno_free,
            "agents": [asdict(a) for a in self.agents],
        }


def event_stats(trace, delta: Optional[float] = None, strict: bool = True, tol: float = 1e-12) -> EventStats:
    """Per-agent event counts and inter-event gaps.

    Raises if the trace is from the continuous scheme, and (with ``strict``)
    if any gap is shorter than delta - tol.
    """
    if trace.scheme == "continuous":
        raise AnalysisError("event statistics need a periodic or event-triggered trace")
    delta = trace.delta if delta is None else delta
    agents = []
    mins = []
    for ev in trace.events:
        ev = np.asarray(ev, dtype=float)
        gaps = np.diff(ev)
        if gaps.size:
            agents.append(AgentEvents(ev.size, float(gaps.min()), float(gaps.mean()), float(gaps.max())))
            mins.append(float(gaps.min()))
        else:
            agents.append(AgentEvents(ev.size, None, None, None))
    min_gap = min(mins) if mins else None
    ok = min_gap is None or min_gap >= delta - tol
    stats = EventStats(float(delta), tuple(agents), sum(a.count for a in agents), min_gap, ok)
    if strict and not ok:
        raise AnalysisError(f"inter-event gap {min_gap!r} is shorter than delta = {delta!r}")
    return stats


def compare_rate(fit: RateFit, w_bar: float, m_under: float, lambda_2: float) -> dict:
    """Set the fitted decay rate against the guaranteed one.

    The bound |y - y*| <= c1 exp(-c2 t / 2) makes the squared error decay at
    least at rate c2, so ``fit.rate`` (fitted on the squared error) is
    compared to c2 directly.
    """
    xi_opt, c2_opt = control.rate_constants(w_bar, m_under, lambda_2)
    return {
        "empirical_rate": fit.rate,
        "xi_opt": xi_opt,
        "c2_bar": c2_opt,
        "ratio": fit.rate / c2_opt,
        "meets_half_bound": fit.rate >= 0.5 * c2_opt,
    }


def summary_table(rows: list, columns: list) -> str:
    """Plain fixed-width table for terminal output."""
    cells = [[str(c) for c in columns]] + [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(row[k]) for row in cells) for k in range(len(columns))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)
