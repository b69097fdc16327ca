"""Heterogeneous LTI agents and the output-feedback gain equations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import null_space

from .errors import AssumptionError

log = logging.getLogger(__name__)

RANK_RTOL = 1e-9


@dataclass
class AgentPlant:
    a_mat: np.ndarray
    b_mat: np.ndarray
    c_mat: np.ndarray
    state: Optional[np.ndarray] = None

    def __post_init__(self):
        self.a_mat = np.atleast_2d(np.asarray(self.a_mat, dtype=float))
        self.b_mat = np.atleast_2d(np.asarray(self.b_mat, dtype=float))
        self.c_mat = np.atleast_2d(np.asarray(self.c_mat, dtype=float))
        n = self.a_mat.shape[0]
        if self.a_mat.shape != (n, n):
            raise ValueError(f"A must be square, got {self.a_mat.shape}")
        if self.b_mat.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {self.b_mat.shape}")
        if self.c_mat.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {self.c_mat.shape}")
        if self.state is None:
            self.state = np.zeros(n)
        else:
            self.state = np.asarray(self.state, dtype=float).reshape(n)

    @property
    def n_states(self) -> int:
        return self.a_mat.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b_mat.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.c_mat.shape[0]


@dataclass(frozen=True)
class GainPair:
    k_alpha: np.ndarray
    k_beta: np.ndarray


@dataclass(frozen=True)
class Assumption4Report:
    singular_values: np.ndarray
    rank_cb: int
    q: int
    controllability_rank: int
    n_states: int
    internal_eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def rank_ok(self) -> bool:
        return self.rank_cb == self.q

    @property
    def controllable(self) -> bool:
        return self.controllability_rank == self.n_states

    @property
    def passed(self) -> bool:
        return self.rank_ok and self.controllable

    def as_dict(self) -> dict:
        return {
            "rank_cb": self.rank_cb,
            "q": self.q,
            "rank_ok": self.rank_ok,
            "singular_values": self.singular_values.tolist(),
            "controllability_rank": self.controllability_rank,
            "n_states": self.n_states,
            "controllable": self.controllable,
            "internal_eigenvalues": [complex(z).real if abs(complex(z).imag) < 1e-12 else str(complex(z))
                                     for z in self.internal_eigenvalues],
        }


def numerical_rank(m: np.ndarray, rtol: float = RANK_RTOL) -> tuple[int, np.ndarray]:
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0, s
    return int(np.sum(s > rtol * s[0])), s


def controllability_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    blocks = [b]
    for _ in range(a.shape[0] - 1):
        blocks.append(a @ blocks[-1])
    return np.hstack(blocks)


def validate_assumption4(p: AgentPlant) -> Assumption4Report:
    """Rank of C B, controllability of (A, B), and the hidden closed-loop modes.

    The hidden modes are the eigenvalues of A - B K_alpha that the output does
    not see (only computed when the rank condition holds). They do not affect
    the output dynamics but an unstable one makes the state grow without bound.
    """
    rank_cb, s = numerical_rank(p.c_mat @ p.b_mat)
    ctrb_rank, _ = numerical_rank(controllability_matrix(p.a_mat, p.b_mat))
    hidden = np.zeros(0)
    if rank_cb == p.n_outputs and p.n_states > p.n_outputs:
        gains = synthesize_gains(p)
        coords = output_coordinates(p, gains)
        q = p.n_outputs
        hidden = np.linalg.eigvals(coords.drift[q:, q:])
    return Assumption4Report(s, rank_cb, p.n_outputs, ctrb_rank, p.n_states, hidden)


def synthesize_gains(p: AgentPlant) -> GainPair:
    """Minimum-norm solutions of C B K_alpha = C A and C B K_beta = I."""
    cb = p.c_mat @ p.b_mat
    q = p.n_outputs
    rank, s = numerical_rank(cb)
    if rank != q:
        raise AssumptionError(
            f"rank(C B) = {rank} < q = {q} (Assumption 4: rank(C_i B_i) = q); "
            f"singular values {s.tolist()}"
        )
    pinv = np.linalg.pinv(cb)
    return GainPair(pinv @ p.c_mat @ p.a_mat, pinv)


def gain_residuals(p: AgentPlant, gains: GainPair) -> tuple[float, float]:
    cb = p.c_mat @ p.b_mat
    ra = np.linalg.norm(cb @ gains.k_alpha - p.c_mat @ p.a_mat)
    rb = np.linalg.norm(cb @ gains.k_beta - np.eye(p.n_outputs))
    return float(ra), float(rb)


def check_gains(p: AgentPlant, gains: GainPair, tol: float = 1e-9) -> GainPair:
    """Validate explicitly supplied gains against the gain equations."""
    ka = np.atleast_2d(np.asarray(gains.k_alpha, dtype=float))
    kb = np.atleast_2d(np.asarray(gains.k_beta, dtype=float))
    if ka.shape != (p.n_inputs, p.n_states) or kb.shape != (p.n_inputs, p.n_outputs):
        raise ValueError(
            f"gain shapes {ka.shape}, {kb.shape} do not match "
            f"({p.n_inputs}, {p.n_states}), ({p.n_inputs}, {p.n_outputs})"
        )
    out = GainPair(ka, kb)
    ra, rb = gain_residuals(p, out)
    if ra > tol or rb > tol:
        raise AssumptionError(
            f"supplied gains do not solve the gain equations: "
            f"|CB K_alpha - CA| = {ra:.3e}, |CB K_beta - I| = {rb:.3e} (tol {tol:g})"
        )
    return out


def plant_derivative(p: AgentPlant, gains: GainPair, v, x=None) -> np.ndarray:
    """Closed-loop state derivative (A - B K_alpha) x + B K_beta v."""
    x = p.state if x is None else np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != (p.n_states,):
        raise ValueError(f"state must have shape ({p.n_states},), got {x.shape}")
    if v.shape != (p.n_outputs,):
        raise ValueError(f"inner signal must have shape ({p.n_outputs},), got {v.shape}")
    return (p.a_mat - p.b_mat @ gains.k_alpha) @ x + p.b_mat @ (gains.k_beta @ v)


def output(p: AgentPlant, x=None) -> np.ndarray:
    x = p.state if x is None else np.asarray(x, dtype=float)
    return p.c_mat @ x


@dataclass(frozen=True)
class OutputCoordinates:
    """State basis z = T x whose first q entries are exactly y = C x.

    In this basis the closed loop reads z' = drift z + inject v. The gain
    equations make the first q rows of ``drift`` vanish and those of
    ``inject`` equal the identity; both are stored exactly so the output
    channel is decoupled from any unstable hidden mode.
    """

    transform: np.ndarray
    inverse: np.ndarray
    drift: np.ndarray
    inject: np.ndarray

    def to_internal(self, x) -> np.ndarray:
        return self.transform @ x

    def to_state(self, z) -> np.ndarray:
        return self.inverse @ z


def output_coordinates(p: AgentPlant, gains: GainPair, tol: float = 1e-8) -> OutputCoordinates:
    q = p.n_outputs
    a_cl = p.a_mat - p.b_mat @ gains.k_alpha
    inject_x = p.b_mat @ gains.k_beta
    leak = np.linalg.norm(p.c_mat @ a_cl)
    gap = np.linalg.norm(p.c_mat @ inject_x - np.eye(q))
    if leak > tol or gap > tol:
        raise AssumptionError(
            f"gains do not decouple the output: |C(A - B K_alpha)| = {leak:.3e}, "
            f"|C B K_beta - I| = {gap:.3e}"
        )
    complement = null_space(p.c_mat).T
    t = np.vstack([p.c_mat, complement])
    t_inv = np.linalg.inv(t)
    drift = t @ a_cl @ t_inv
    inject = t @ inject_x
    drift[:q, :] = 0.0
    inject[:q, :] = np.eye(q)
    return OutputCoordinates(t, t_inv, drift, inject)


# reference example: agents come in identical pairs
_EXAMPLE1_MATRICES = [
    (
        [[1, 0], [0, 1]],
        [[0, 1], [1, -2]],
        [[3, 0], [0, 1]],
    ),
    (
        [[0, 1], [-2, 1]],
        [[1, 1], [1, 0]],
        [[2, 2], [-1, 1]],
    ),
    (
        [[1, 1, 0], [0, 1, 1], [1, 0, 1]],
        [[1, 0], [0, 1], [2, 0]],
        [[1, -1, 2], [1, 2, 2]],
    ),
]

# gains as printed with the benchmark (K_beta rounded to three digits)
EXAMPLE1_PUBLISHED_GAINS = [
    ([[2, 1], [1, 0]], [[0.667, 1], [0.333, 0]]),
    ([[2, -1], [-2, 2]], [[0.25, 0.5], [0, -1]]),
    ([[0.6, 0.2, 0.4], [0, 1, 1]], [[0.133, 0.0667], [-0.333, 0.333]]),
]


def example1_plants() -> list[AgentPlant]:
    plants = []
    for a, b, c in _EXAMPLE1_MATRICES:
        plants.extend([AgentPlant(a, b, c), AgentPlant(a, b, c)])
    return plants
