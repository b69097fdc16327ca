"""The distributed PI law and its three communication schemes.

All schemes share the inner signal

    v_i = -grad f_i(y_i) - sum_j a_ij (yhat_i - yhat_j) - eta_i,
    eta_i' = sum_j a_ij (yhat_i - yhat_j),

and differ only in when yhat_i is refreshed: every instant (continuous), on a
fixed grid of period delta (periodic), or when the local measurement error
crosses a state-dependent threshold after a dwell of at least delta (event).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .graph import GammaMatrix, NetworkGraph

log = logging.getLogger(__name__)

SCHEMES = ("continuous", "periodic", "event")
_ALIASES = {"event-triggered": "event", "event_triggered": "event", "triggered": "event"}


def normalize_scheme(name: str) -> str:
    key = str(name).strip().lower()
    key = _ALIASES.get(key, key)
    if key not in SCHEMES:
        raise ConfigError(f"unknown scheme {name!r}; expected one of {', '.join(SCHEMES)}")
    return key


# -- parameter bounds --------------------------------------------------------

def xi_lower_bound(scheme: str, w_bar: float, m_under: float, lambda_n: float) -> float:
    """Strict lower bound on xi for the Lyapunov argument of each scheme."""
    scheme = normalize_scheme(scheme)
    if scheme == "continuous":
        return max(1.0, w_bar ** 2 / (2 * m_under))
    return max(1.0, (4 * w_bar ** 2 + 2 * lambda_n ** 2 + 1) / (8 * m_under))


def kappa_lower_bound(w_bar: float, m_under: float) -> float:
    return max(w_bar ** 2 / (4 * m_under), 0.5)


def _epsilon(xi: float) -> float:
    return 1.0 / (2.0 * math.sqrt(2.0 * (xi ** 2 + (xi - 1.0) ** 2)))


def tau0(w_bar: float, lambda_n: float, xi: float, m_under: Optional[float] = None) -> float:
    """Largest admissible sampling period for the periodic scheme.

    When ``m_under`` is given, ``xi`` is also checked against the sampled-
    scheme bound (4 w^2 + 2 lambda_N^2 + 1) / (8 m).
    """
    if not w_bar > 0:
        raise ConfigError(f"w_bar must be positive, got {w_bar}")
    if not lambda_n > 0:
        raise ConfigError(f"lambda_N must be positive, got {lambda_n}")
    if not xi > 0:
        raise ConfigError(f"xi must be positive, got {xi}")
    if m_under is not None:
        bound = xi_lower_bound("periodic", w_bar, m_under, lambda_n)
        if not xi > bound:
            raise ConfigError(
                f"xi = {xi:g} violates xi > max(1, (4 w^2 + 2 lambda_N^2 + 1)/(8 m)) = {bound:g}"
            )
    eps = _epsilon(xi)
    s2l = math.sqrt(2.0) * lambda_n
    w1 = w_bar + 1.0
    return math.log1p(w1 * eps / (w1 + s2l + s2l * eps)) / w1


def rate_constants(w_bar: float, m_under: float, lambda_2: float) -> tuple[float, float]:
    """Rate-optimal xi for the continuous scheme and the resulting c2."""
    if min(w_bar, m_under, lambda_2) <= 0:
        raise ConfigError("w_bar, m_under and lambda_2 must all be positive")
    xi = (w_bar ** 2 + 1) / (2 * m_under)
    return xi, c2_bar(xi, lambda_2)


def c2_bar(xi: float, lambda_2: float) -> float:
    r = 1.0 / lambda_2
    disc = (r * r - 2 * r + 1) * xi ** 2 + (2 * r - 2) * xi + 5
    return 2.0 / (xi + xi * r + 1 + math.sqrt(disc))


def lyapunov_max_eig(xi: float, lambda_2: float, lambda_gamma: float = 1.0) -> float:
    """Largest eigenvalue of the Lyapunov weight E.

    E splits into 2x2 blocks 1/2 [[xi, 1], [1, 1 + xi g]] over the
    eigenvalues g of Gamma; the largest block comes from the largest g.
    """
    g = max(lambda_gamma, 1.0 / lambda_2)
    a, d = xi, 1 + xi * g
    return 0.25 * (a + d + math.sqrt((a - d) ** 2 + 4))


def c2(xi: float, w_bar: float, m_under: float, lambda_2: float, lambda_gamma: Optional[float] = None) -> float:
    """Rate constant min(xi m - w^2/2, 1/2) / lambda_max(E) of the continuous scheme."""
    if lambda_gamma is None:
        lambda_gamma = 1.0 / lambda_2
    f_min = min(xi * m_under - 0.5 * w_bar ** 2, 0.5)
    return f_min / lyapunov_max_eig(xi, lambda_2, lambda_gamma)


# -- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class ControllerConfig:
    scheme: str
    xi: float
    w_bar: float
    m_under: float
    lambda_n: float
    lambda_2: float
    kappa: Optional[float] = None
    delta: Optional[float] = None
    tau0: Optional[float] = None
    strict: bool = True
    warnings: tuple = field(default=(), compare=False)

    @property
    def sampled(self) -> bool:
        return self.scheme != "continuous"


def make_config(
    scheme: str,
    graph: NetworkGraph,
    w_bar: float,
    m_under: float,
    xi: Optional[float] = None,
    kappa: Optional[float] = None,
    delta: Optional[float] = None,
    strict: bool = True,
) -> ControllerConfig:
    """Fill in defaults and check every parameter bound.

    Defaults: continuous xi is the rate-optimal (w^2 + 1)/(2m), kept above 1;
    sampled schemes use 1.01 times their lower bounds for xi and kappa, and
    delta defaults to tau0. With ``strict=False`` bound violations are logged
    and recorded in ``warnings`` instead of raising.
    """
    scheme = normalize_scheme(scheme)
    if not (w_bar is not None and w_bar > 0):
        raise ConfigError(f"w_bar must be a positive number, got {w_bar!r}")
    if not (m_under is not None and m_under > 0):
        raise ConfigError(f"m_under must be a positive number, got {m_under!r}")
    lam_n, lam_2 = graph.lambda_n, graph.lambda_2
    if not lam_2 > 0:
        raise ConfigError("controller bounds need a connected graph (Assumption 1)")
    notes = []

    def violated(msg):
        if strict:
            raise ConfigError(msg)
        log.warning(msg)
        notes.append(msg)

    xi_min = xi_lower_bound(scheme, w_bar, m_under, lam_n)
    if xi is None:
        if scheme == "continuous":
            xi = rate_constants(w_bar, m_under, lam_2)[0]
            if not xi > xi_min:
                xi = 1.01 * xi_min
        else:
            xi = 1.01 * xi_min
    elif not xi > xi_min:
        theorem = "Theorem 1" if scheme == "continuous" else "Theorem 2"
        violated(f"xi = {xi:g} must exceed {xi_min:g} ({theorem} bound)")

    t0 = None
    if scheme != "continuous":
        t0 = tau0(w_bar, lam_n, xi)
        if delta is None:
            delta = t0
        if not delta > 0:
            raise ConfigError(f"delta must be positive, got {delta}")
        if delta > t0:
            violated(f"delta = {delta:g} exceeds tau0 = {t0:.6g} (Theorem 2 requires delta in (0, tau0])")
    elif delta is not None:
        raise ConfigError("delta is only meaningful for the periodic and event schemes")

    if scheme == "event":
        k_min = kappa_lower_bound(w_bar, m_under)
        if kappa is None:
            kappa = 1.01 * k_min
        elif not kappa > k_min:
            violated(f"kappa = {kappa:g} must exceed max(w^2/(4m), 1/2) = {k_min:g} (Theorem 3 bound)")
    elif kappa is not None:
        raise ConfigError("kappa is only meaningful for the event scheme")

    return ControllerConfig(
        scheme=scheme,
        xi=float(xi),
        w_bar=float(w_bar),
        m_under=float(m_under),
        lambda_n=float(lam_n),
        lambda_2=float(lam_2),
        kappa=None if kappa is None else float(kappa),
        delta=None if delta is None else float(delta),
        tau0=t0,
        strict=strict,
        warnings=tuple(notes),
    )


def with_scheme(cfg: ControllerConfig, scheme: str, graph: NetworkGraph, delta=None) -> ControllerConfig:
    """Re-resolve a config under another scheme, keeping w_bar and m_under."""
    scheme = normalize_scheme(scheme)
    if scheme == cfg.scheme:
        return cfg if delta is None else make_config(
            scheme, graph, cfg.w_bar, cfg.m_under, cfg.xi, cfg.kappa, delta, cfg.strict
        )
    return make_config(scheme, graph, cfg.w_bar, cfg.m_under, delta=delta, strict=cfg.strict)


# -- the control law ---------------------------------------------------------

@dataclass
class ControllerState:
    eta: np.ndarray
    y_hat: np.ndarray
    last_comm: np.ndarray

    @classmethod
    def initial(cls, y0: np.ndarray, t0: float = 0.0) -> "ControllerState":
        y0 = np.asarray(y0, dtype=float)
        n = y0.shape[0]
        return cls(np.zeros_like(y0), y0.copy(), np.full(n, float(t0)))

    def error(self, y: np.ndarray) -> np.ndarray:
        return self.y_hat - y


def disagreement(neighbors, y_hat_i) -> np.ndarray:
    y_hat_i = np.asarray(y_hat_i, dtype=float)
    out = np.zeros_like(y_hat_i)
    for w, y_hat_j in neighbors:
        out += w * (y_hat_i - np.asarray(y_hat_j, dtype=float))
    return out


def control_signal(y_i, neighbors, y_hat_i, eta_i, grad_i, scheme: str = "continuous") -> np.ndarray:
    """Inner signal v_i for one agent.

    ``neighbors`` is a list of (a_ij, yhat_j). Under the continuous scheme the
    caller passes yhat_i = y_i. The integral state moves at
    ``disagreement(neighbors, y_hat_i)``.
    """
    scheme = normalize_scheme(scheme)
    if scheme == "continuous":
        y_hat_i = y_i
    return -np.asarray(grad_i, dtype=float) - disagreement(neighbors, y_hat_i) - np.asarray(eta_i, dtype=float)


def next_comm_periodic(t_k: float, delta: float, tau0_value: Optional[float] = None) -> float:
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    if tau0_value is not None and delta > tau0_value:
        raise ConfigError(f"delta = {delta:g} exceeds tau0 = {tau0_value:.6g} (Theorem 2 requires delta in (0, tau0])")
    return t_k + delta


def periodic_instant(k: int, delta: float) -> float:
    """k-th grid instant, computed as a single product so no drift accumulates."""
    return k * delta


def trigger_threshold(neighbors, y_hat_i, d_out_i: float, kappa: float) -> float:
    """theta_i = sum_j a_ij |yhat_i - yhat_j|^2 / (4 (d_i + kappa))."""
    y_hat_i = np.asarray(y_hat_i, dtype=float)
    total = 0.0
    for w, y_hat_j in neighbors:
        d = y_hat_i - np.asarray(y_hat_j, dtype=float)
        total += w * float(d @ d)
    return total / (4.0 * (d_out_i + kappa))


def trigger_thresholds(adjacency: np.ndarray, y_hat: np.ndarray, kappa: float) -> np.ndarray:
    """Vectorized ``trigger_threshold`` for all agents; ``y_hat`` is (N, q)."""
    sq = y_hat @ y_hat.T
    norms = np.diag(sq)
    dist2 = norms[:, None] + norms[None, :] - 2 * sq
    np.maximum(dist2, 0.0, out=dist2)
    return (adjacency * dist2).sum(axis=1) / (4.0 * (adjacency.sum(axis=0) + kappa))


# -- Lyapunov function -------------------------------------------------------

def equilibrium(costs, y_star) -> tuple[np.ndarray, np.ndarray]:
    """Consensus output 1 (x) y* and integral state eta_i = -grad f_i(y*)."""
    y_star = np.asarray(y_star, dtype=float)
    n = len(costs)
    y_bar = np.tile(y_star, (n, 1))
    eta_bar = np.array([-c.grad(y_star, i) for i, c in enumerate(costs)])
    return y_bar, eta_bar


def lyapunov_value(rho, sigma, xi: float, gamma: GammaMatrix) -> float:
    """V = xi/2 |rho|^2 + sigma.rho + 1/2 |sigma|^2 + xi/2 sigma^T (Gamma (x) I) sigma.

    ``rho`` and ``sigma`` are (N, q) arrays or flat Nq-vectors stacked by agent.
    """
    n = gamma.matrix.shape[0]
    rho = np.asarray(rho, dtype=float).reshape(n, -1)
    sigma = np.asarray(sigma, dtype=float).reshape(n, -1)
    # (Gamma (x) I_q) acting on agent-stacked vectors is Gamma @ (N, q)
    gs = gamma.matrix @ sigma
    return float(
        0.5 * xi * np.sum(rho * rho) + np.sum(sigma * rho) + 0.5 * np.sum(sigma * sigma) + 0.5 * xi * np.sum(sigma * gs)
    )


def lyapunov_matrix(xi: float, gamma: GammaMatrix, q: int) -> np.ndarray:
    """Dense E with V = p^T E p for p = col(rho, sigma)."""
    nq = gamma.matrix.shape[0] * q
    eye = np.eye(nq)
    return 0.5 * np.block([[xi * eye, eye], [eye, eye + xi * np.kron(gamma.matrix, np.eye(q))]])
