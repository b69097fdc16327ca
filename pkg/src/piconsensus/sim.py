"""Fixed-step RK4 simulation of the closed loop under all three schemes."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import control
from .control import ControllerConfig
from .costs import CostEnsemble, solve_optimum
from .errors import ConfigError, ConsensusError, ConvergenceError, DivergenceError, DomainError
from .graph import NetworkGraph, gamma_matrix
from .plant import AgentPlant, GainPair, output_coordinates, synthesize_gains

log = logging.getLogger(__name__)

EVENT_TIME_TOL = 1e-6
DIVERGENCE_LIMIT = 1e150  # squares stay finite well past this
_SAMPLE_TRIES = 10_000


@dataclass
class Scenario:
    graph: NetworkGraph
    plants: list
    costs: CostEnsemble
    controller: ControllerConfig
    horizon: float
    dt: float
    seed: int = 0
    record_every: int = 1
    gains: Optional[list] = None
    initial_box: tuple = (-10.0, 10.0)
    initial_states: Optional[list] = None
    y_star: Optional[np.ndarray] = None
    lambda_gamma: float = 1.0
    initial_eta: Optional[np.ndarray] = None
    name: str = ""
    document: Optional[dict] = field(default=None, repr=False)

    @property
    def n_agents(self) -> int:
        return self.graph.n_agents

    def validate(self) -> None:
        n = self.graph.n_agents
        if len(self.plants) != n or len(self.costs) != n:
            raise ConfigError(
                f"agent count mismatch: graph has {n}, plants {len(self.plants)}, costs {len(self.costs)}"
            )
        q = self.costs.dim
        for i, p in enumerate(self.plants):
            if p.n_outputs != q:
                raise ConfigError(f"agent {i} has {p.n_outputs} outputs but the costs live in R^{q}")
        if self.gains is not None and len(self.gains) != n:
            raise ConfigError(f"expected {n} gain pairs, got {len(self.gains)}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ConfigError(f"record_every must be a positive integer, got {self.record_every}")
        cfg = self.controller
        if cfg.sampled and self.dt > cfg.delta / 10 * (1 + 1e-12):
            raise ConfigError(f"dt = {self.dt:g} must be at most delta/10 = {cfg.delta / 10:g} for sampled schemes")
        if self.initial_eta is not None:
            eta0 = np.asarray(self.initial_eta, dtype=float)
            if eta0.shape != (n, q):
                raise ConfigError(f"initial_eta must have shape ({n}, {q}), got {eta0.shape}")
            if np.abs(eta0.sum(axis=0)).max() > 1e-9:
                raise ConfigError("initial_eta must sum to zero across agents")
        lo, hi = self.initial_box
        if self.initial_states is None and not hi > lo:
            raise ConfigError(f"initial box must satisfy low < high, got {self.initial_box}")

    def resolved_gains(self) -> list:
        if self.gains is not None:
            return list(self.gains)
        return [synthesize_gains(p) for p in self.plants]

    def initial_conditions(self) -> list:
        """Initial plant states: explicit, or uniform on the box from ``seed``.

        Random draws whose output falls outside the agent's cost domain are
        redrawn, so every run starts inside the admissible region.
        """
        if self.initial_states is not None:
            xs = [np.asarray(x, dtype=float).reshape(p.n_states) for x, p in zip(self.initial_states, self.plants)]
            for i, (x, p) in enumerate(zip(xs, self.plants)):
                if not self.costs[i].in_domain(p.c_mat @ x):
                    raise DomainError(f"explicit initial state of agent {i} has output outside the domain of its cost", index=i)
            return xs
        rng = np.random.default_rng(self.seed)
        lo, hi = self.initial_box
        xs = []
        for i, p in enumerate(self.plants):
            for _ in range(_SAMPLE_TRIES):
                x = rng.uniform(lo, hi, size=p.n_states)
                if self.costs[i].in_domain(p.c_mat @ x):
                    break
            else:
                raise ConfigError(f"could not draw an initial state for agent {i} inside its cost domain")
            xs.append(x)
        return xs

    def resolve_y_star(self):
        """Return (y*, note). y* is None when the centralized oracle fails."""
        if self.y_star is not None:
            return np.asarray(self.y_star, dtype=float), None
        start = np.zeros(self.costs.dim)
        if not self.costs.in_domain(start):
            start = np.ones(self.costs.dim)
        try:
            return solve_optimum(self.costs, start, tol=1e-10), None
        except (ConvergenceError, DomainError) as exc:
            return None, f"optimum oracle failed ({exc}); error measured as disagreement, Lyapunov series omitted"


@dataclass
class SimulationTrace:
    times: np.ndarray
    outputs: np.ndarray  # (T, N, q)
    etas: np.ndarray  # (T, N, q)
    error: np.ndarray
    events: list
    y_star: Optional[np.ndarray]
    scheme: str
    dt: float
    delta: Optional[float] = None
    lyapunov: Optional[np.ndarray] = None
    eta_bar: Optional[np.ndarray] = None
    xi: Optional[float] = None
    notes: list = field(default_factory=list)
    config: Optional[dict] = None

    @property
    def n_agents(self) -> int:
        return self.outputs.shape[1]

    def event_counts(self) -> list:
        return [len(e) for e in self.events]

    def final_error(self) -> float:
        return float(self.error[-1])

    def csv_header(self) -> list:
        q = self.outputs.shape[2]
        cols = ["time"]
        cols += [f"y{i}_{k}" for i in range(self.n_agents) for k in range(q)]
        cols += ["error", "lyapunov"]
        return cols

    def write_csv(self, path) -> None:
        """One row per recorded instant: time, y{agent}_{component}..., error, lyapunov.

        The lyapunov column is empty when the series is not available.
        """
        flat = self.outputs.reshape(len(self.times), -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.csv_header())
            for k, t in enumerate(self.times):
                v = "" if self.lyapunov is None else repr(float(self.lyapunov[k]))
                w.writerow([repr(float(t)), *map(repr, flat[k].tolist()), repr(float(self.error[k])), v])

    def sidecar(self) -> dict:
        return {
            "scheme": self.scheme,
            "dt": self.dt,
            "delta": self.delta,
            "y_star": None if self.y_star is None else self.y_star.tolist(),
            "events": [e.tolist() for e in self.events],
            "event_counts": self.event_counts(),
            "final_error": self.final_error(),
            "notes": list(self.notes),
            "scenario": self.config,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.sidecar(), indent=2))


class _ClosedLoop:
    """Stacked closed-loop vector field in output-aligned coordinates."""

    def __init__(self, scenario: Scenario, gains: list):
        self.n = scenario.n_agents
        self.q = scenario.costs.dim
        self.costs = scenario.costs.costs
        self.lap = np.asarray(scenario.graph.laplacian)
        coords = [output_coordinates(p, g) for p, g in zip(scenario.plants, gains)]
        sizes = [c.drift.shape[0] for c in coords]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.nz = int(offsets[-1])
        self.coords = coords
        self.offsets = offsets
        drift = np.zeros((self.nz, self.nz))
        inject = np.zeros((self.nz, self.n * self.q))
        for i, c in enumerate(coords):
            s = slice(offsets[i], offsets[i + 1])
            drift[s, s] = c.drift
            inject[s, i * self.q:(i + 1) * self.q] = c.inject
        self.drift = drift
        self.inject = inject
        self.y_index = np.array([[offsets[i] + k for k in range(self.q)] for i in range(self.n)])
        self.has_hidden = self.nz > self.n * self.q
        self.t = 0.0

    def pack(self, xs, eta) -> np.ndarray:
        z = np.concatenate([c.to_internal(x) for c, x in zip(self.coords, xs)])
        return np.concatenate([z, np.asarray(eta, dtype=float).ravel()])

    def outputs(self, s: np.ndarray) -> np.ndarray:
        return s[self.y_index]

    def etas(self, s: np.ndarray) -> np.ndarray:
        return s[self.nz:].reshape(self.n, self.q)

    def gradients(self, y: np.ndarray) -> np.ndarray:
        g = np.empty_like(y)
        for i, c in enumerate(self.costs):
            yi = y[i]
            if c.domain_guard is not None and not c.domain_guard(yi):
                raise DomainError(
                    f"agent {i} left the domain of its cost at t~{self.t:.6g}, y={yi.tolist()}", index=i, point=yi
                )
            g[i] = c.gradient(yi)
        return g

    def field(self, s: np.ndarray, y_hat: Optional[np.ndarray]) -> np.ndarray:
        y = s[self.y_index]
        eta = s[self.nz:].reshape(self.n, self.q)
        lap_y = self.lap @ (y if y_hat is None else y_hat)
        v = -self.gradients(y) - lap_y - eta
        out = np.empty_like(s)
        z = s[:self.nz]
        if self.has_hidden:
            out[:self.nz] = self.drift @ z + self.inject @ v.ravel()
        else:
            out[:self.nz] = self.inject @ v.ravel()
        out[self.nz:] = lap_y.ravel()
        return out

    def rk4(self, s: np.ndarray, h: float, y_hat: Optional[np.ndarray]) -> np.ndarray:
        k1 = self.field(s, y_hat)
        k2 = self.field(s + 0.5 * h * k1, y_hat)
        k3 = self.field(s + 0.5 * h * k2, y_hat)
        k4 = self.field(s + h * k3, y_hat)
        return s + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def run(scenario: Scenario) -> SimulationTrace:
    """Integrate one scenario over its horizon and return the recorded trace."""
    scenario.validate()
    cfg = scenario.controller
    gains = scenario.resolved_gains()
    loop = _ClosedLoop(scenario, gains)
    n, q = loop.n, loop.q
    xs = scenario.initial_conditions()
    eta0 = np.zeros((n, q)) if scenario.initial_eta is None else np.asarray(scenario.initial_eta, dtype=float)
    s = loop.pack(xs, eta0)

    y_star, note = scenario.resolve_y_star()
    notes = list(cfg.warnings)
    if note:
        notes.append(note)
    lyap = None
    eta_bar = None
    if y_star is not None:
        gamma = gamma_matrix(scenario.graph, scenario.lambda_gamma)
        _, eta_bar = control.equilibrium(scenario.costs, y_star)

        def lyap(state):
            return control.lyapunov_value(loop.outputs(state) - y_star, loop.etas(state) - eta_bar, cfg.xi, gamma)

    def err(state):
        y = loop.outputs(state)
        ref = y_star if y_star is not None else y.mean(axis=0)
        d = y - ref
        return float(np.sum(d * d))

    rec_t, rec_y, rec_eta, rec_err, rec_v = [], [], [], [], []

    def record(t, state):
        rec_t.append(t)
        rec_y.append(loop.outputs(state).copy())
        rec_eta.append(loop.etas(state).copy())
        rec_err.append(err(state))
        if lyap is not None:
            rec_v.append(lyap(state))

    horizon, dt = float(scenario.horizon), float(scenario.dt)
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    snap = 1e-9 * dt
    scheme = cfg.scheme
    delta = cfg.delta
    adjacency = np.asarray(scenario.graph.adjacency)

    events = [[] for _ in range(n)]
    y_hat = None if scheme == "continuous" else loop.outputs(s).copy()
    last = np.zeros(n)
    crossed = np.zeros(n, dtype=bool)
    if scheme != "continuous":
        for i in range(n):
            events[i].append(0.0)
    k_grid = 1  # next periodic instant index

    def broadcast(i, t, state):
        y_hat[i] = loop.outputs(state)[i]
        last[i] = t
        crossed[i] = False
        events[i].append(t)

    def trigger_state(state):
        e = y_hat - loop.outputs(state)
        return np.einsum("ij,ij->i", e, e) >= control.trigger_thresholds(adjacency, y_hat, cfg.kappa)

    def fire_cascade(t, state):
        # a broadcast changes the neighbors' thresholds; eligible agents that
        # now meet their condition fire at the same instant
        while True:
            eligible = t >= last + delta - snap
            due = eligible & trigger_state(state)
            due &= last < t - snap
            if not due.any():
                return
            for i in np.flatnonzero(due):
                broadcast(i, t, state)

    record(0.0, s)
    t = 0.0
    step = 0
    while step < n_steps:
        grid_t = min((step + 1) * dt, horizon)
        target = grid_t
        forced = None
        if scheme == "periodic":
            forced = control.periodic_instant(k_grid, delta)
        elif scheme == "event":
            pending = last + delta
            pending = pending[pending > t + snap]
            if pending.size:
                forced = float(pending.min())
        on_forced = False
        if forced is not None and forced <= grid_t + snap and forced <= horizon + snap:
            if forced < grid_t - snap:
                target = forced
            on_forced = True
        h = target - t
        loop.t = t
        hold = y_hat.copy() if y_hat is not None else None
        s_new = loop.rk4(s, h, hold)
        if not np.all(np.isfinite(s_new)) or np.abs(s_new).max() > DIVERGENCE_LIMIT:
            raise DivergenceError(f"state diverged (|s| > {DIVERGENCE_LIMIT:g} or non-finite) at t={target:.6g}", time=target)

        if scheme == "event":
            eligible = t >= last + delta - snap
            hit = trigger_state(s_new)
            early = hit & eligible
            if early.any():
                # refine the earliest crossing inside (t, target]
                t_cross, s_new = _refine_crossing(loop, s, t, h, hold, early, y_hat, adjacency, cfg.kappa)
                crossed |= trigger_state(s_new) & ~eligible
                if t_cross < target - snap:
                    s, t = s_new, t_cross
                    fire_cascade(t, s)
                    continue
            else:
                crossed |= hit & ~eligible
            s, t = s_new, target
            if on_forced:
                now = np.abs(last + delta - t) <= snap + 1e-12 * max(1.0, t)
                for i in np.flatnonzero(now & crossed):
                    broadcast(i, last[i] + delta, s)
                fire_cascade(t, s)
        else:
            s, t = s_new, target
            if scheme == "periodic" and on_forced:
                inst = control.periodic_instant(k_grid, delta)
                k_grid += 1
                if inst < horizon - snap:
                    for i in range(n):
                        y_hat[i] = loop.outputs(s)[i]
                        last[i] = inst
                        events[i].append(inst)

        if target == grid_t or abs(t - grid_t) <= snap:
            t = grid_t
            step += 1
            if step % scenario.record_every == 0 or step == n_steps:
                record(t, s)

    trace = SimulationTrace(
        times=np.array(rec_t),
        outputs=np.array(rec_y),
        etas=np.array(rec_eta),
        error=np.array(rec_err),
        events=[np.array(e) for e in events],
        y_star=y_star,
        scheme=scheme,
        dt=dt,
        delta=delta,
        lyapunov=np.array(rec_v) if lyap is not None else None,
        eta_bar=eta_bar,
        xi=cfg.xi,
        notes=notes,
        config=scenario.document,
    )
    if not np.all(np.isfinite(trace.error)):
        bad = int(np.flatnonzero(~np.isfinite(trace.error))[0])
        raise DivergenceError(f"error series is non-finite at t={trace.times[bad]:.6g}", time=float(trace.times[bad]))
    return trace


def _refine_crossing(loop, s, t, h, hold, mask, y_hat, adjacency, kappa):
    """Bisect the first instant in (t, t + h] where a masked agent triggers."""

    def hits(tau):
        st = loop.rk4(s, tau, hold)
        e = y_hat - loop.outputs(st)
        th = control.trigger_thresholds(adjacency, y_hat, kappa)
        return bool(np.any((np.einsum("ij,ij->i", e, e) >= th) & mask)), st

    lo, hi = 0.0, h
    _, s_hi = hits(hi)
    while hi - lo > EVENT_TIME_TOL:
        mid = 0.5 * (lo + hi)
        ok, st = hits(mid)
        if ok:
            hi, s_hi = mid, st
        else:
            lo = mid
    return t + hi, s_hi


def run_batch(scenarios: Sequence[Scenario], workers: Optional[int] = None) -> list:
    """Run scenarios independently, in order.

    A failing scenario does not stop the batch: its slot in the returned list
    holds the exception instead of a trace. With ``workers`` > 1 the runs are
    spread over a thread pool; results keep input order either way.
    """
    def one(sc):
        try:
            return run(sc)
        except ConsensusError as exc:
            log.warning("scenario %r failed: %s", sc.name, exc)
            return exc

    if workers and workers > 1 and len(scenarios) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, scenarios))
    return [one(sc) for sc in scenarios]
