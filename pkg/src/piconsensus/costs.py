"""Local convex costs with gradient oracles and a centralized optimum solver."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConvergenceError, DomainError

Vector = np.ndarray


@dataclass(frozen=True)
class CostFunction:
    """A differentiable cost on R^q.

    ``lipschitz_w`` and ``strong_convexity_m`` are ``None`` when no analytic
    constant is known. ``domain_guard`` is an open-set predicate; points where
    it is false are outside the domain.
    """

    dim: int
    value: Callable[[Vector], float]
    gradient: Callable[[Vector], Vector]
    lipschitz_w: Optional[float] = None
    strong_convexity_m: Optional[float] = None
    domain_guard: Optional[Callable[[Vector], bool]] = None
    name: str = ""
    spec: Optional[dict] = field(default=None, compare=False, repr=False)

    def in_domain(self, y) -> bool:
        return self.domain_guard is None or bool(self.domain_guard(np.asarray(y, dtype=float)))

    def _check(self, y, index=None) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.dim,):
            raise ValueError(f"cost {self.name or index} expects a {self.dim}-vector, got shape {y.shape}")
        if not self.in_domain(y):
            label = f"cost {index}" if index is not None else f"cost {self.name!r}"
            raise DomainError(f"{label} evaluated outside its domain at y={y.tolist()}", index=index, point=y)
        return y

    def eval(self, y, index=None) -> float:
        return float(self.value(self._check(y, index)))

    def grad(self, y, index=None) -> np.ndarray:
        return np.asarray(self.gradient(self._check(y, index)), dtype=float)


@dataclass(frozen=True)
class CostEnsemble:
    costs: tuple

    def __post_init__(self):
        costs = tuple(self.costs)
        if not costs:
            raise ValueError("an ensemble needs at least one cost")
        dims = {c.dim for c in costs}
        if len(dims) != 1:
            raise ValueError(f"all costs must share the output dimension, got {sorted(dims)}")
        object.__setattr__(self, "costs", costs)

    def __len__(self):
        return len(self.costs)

    def __getitem__(self, i):
        return self.costs[i]

    def __iter__(self):
        return iter(self.costs)

    @property
    def dim(self) -> int:
        return self.costs[0].dim

    @property
    def w_bar(self) -> Optional[float]:
        known = [c.lipschitz_w for c in self.costs if c.lipschitz_w is not None]
        return max(known) if known else None

    @property
    def m_under(self) -> Optional[float]:
        known = [c.strong_convexity_m for c in self.costs if c.strong_convexity_m is not None]
        return min(known) if known else None

    def total(self, y) -> float:
        return sum(c.eval(y, i) for i, c in enumerate(self.costs))

    def in_domain(self, y) -> bool:
        return all(c.in_domain(y) for c in self.costs)


def sum_gradient(ens: CostEnsemble, y) -> np.ndarray:
    """Sum of all local gradients at a common point ``y``."""
    y = np.asarray(y, dtype=float)
    out = np.zeros(ens.dim)
    for i, c in enumerate(ens.costs):
        out += c.grad(y, i)
    return out


# -- composable terms ------------------------------------------------------

def quadratic(hessian, linear=None, const=0.0, **meta) -> CostFunction:
    """f(y) = 1/2 y^T H y + g^T y + c with symmetric H."""
    h = np.asarray(hessian, dtype=float)
    h = (h + h.T) / 2
    q = h.shape[0]
    g = np.zeros(q) if linear is None else np.asarray(linear, dtype=float)
    eig = np.linalg.eigvalsh(h)
    return CostFunction(
        dim=q,
        value=lambda y: 0.5 * y @ h @ y + g @ y + const,
        gradient=lambda y: h @ y + g,
        lipschitz_w=float(max(abs(eig[0]), abs(eig[-1]))),
        strong_convexity_m=float(eig[0]),
        **meta,
    )


def affine(linear, const=0.0, **meta) -> CostFunction:
    g = np.asarray(linear, dtype=float)
    return CostFunction(dim=g.size, value=lambda y: g @ y + const, gradient=lambda y: g.copy(), **meta)


def log_sum_exp(weights, offsets=None, **meta) -> CostFunction:
    """f(y) = ln sum_k exp(a_k^T y + b_k), rows of ``weights`` are the a_k."""
    a = np.atleast_2d(np.asarray(weights, dtype=float))
    b = np.zeros(a.shape[0]) if offsets is None else np.asarray(offsets, dtype=float)

    def value(y):
        z = a @ y + b
        top = z.max()
        return top + math.log(np.exp(z - top).sum())

    def gradient(y):
        z = a @ y + b
        p = np.exp(z - z.max())
        return a.T @ (p / p.sum())

    # softmax Jacobian is bounded by 1/2 in the probability simplex
    w = 0.5 * float(np.linalg.norm(a, 2) ** 2)
    return CostFunction(dim=a.shape[1], value=value, gradient=gradient, lipschitz_w=w, strong_convexity_m=0.0, **meta)


def log_barrier(direction, offset, **meta) -> CostFunction:
    """f(y) = ln(d^T y + b), defined on the open half-space d^T y + b > 0."""
    d = np.asarray(direction, dtype=float)
    return CostFunction(
        dim=d.size,
        value=lambda y: math.log(d @ y + offset),
        gradient=lambda y: d / (d @ y + offset),
        domain_guard=lambda y: d @ y + offset > 0,
        **meta,
    )


def combine(terms: Sequence[CostFunction], lipschitz_w=None, strong_convexity_m=None, name="", spec=None) -> CostFunction:
    """Sum of terms; the guard is the intersection of the term guards.

    Constants are only propagated when every term supplies one (subadditive
    for w, superadditive for m), unless given explicitly.
    """
    terms = list(terms)
    if not terms:
        raise ValueError("combine needs at least one term")
    if len({t.dim for t in terms}) != 1:
        raise ValueError("terms disagree on dimension")
    guards = [t.domain_guard for t in terms if t.domain_guard is not None]
    if lipschitz_w is None and all(t.lipschitz_w is not None for t in terms):
        lipschitz_w = sum(t.lipschitz_w for t in terms)
    if strong_convexity_m is None and all(t.strong_convexity_m is not None for t in terms):
        strong_convexity_m = sum(t.strong_convexity_m for t in terms)
    return CostFunction(
        dim=terms[0].dim,
        value=lambda y: sum(t.value(y) for t in terms),
        gradient=lambda y: sum(t.gradient(y) for t in terms),
        lipschitz_w=lipschitz_w,
        strong_convexity_m=strong_convexity_m,
        domain_guard=(lambda y: all(g(y) for g in guards)) if guards else None,
        name=name,
        spec=spec,
    )


# -- the six costs of the reference example --------------------------------

def _f2_value(y):
    a, b = y
    return (2 * a + 5 * b - 9) ** 2 + 0.2 * a * a / math.sqrt(2 * a * a + 2)


def _f2_grad(y):
    a, b = y
    r = 2 * (2 * a + 5 * b - 9)
    s = 2 * a * a + 2
    # d/da [0.2 a^2 (2a^2+2)^(-1/2)] = 0.2 a (2a^2 + 4) / (2a^2+2)^(3/2)
    extra = 0.2 * a * (2 * a * a + 4) / s ** 1.5
    return np.array([2 * r + extra, 5 * r])


def _f3_value(y):
    a, b = 0.1 * y[0], 0.1 * y[1]
    top = max(a, b)
    return top + math.log(math.exp(a - top) + math.exp(b - top))


def _f3_grad(y):
    a, b = 0.1 * y[0], 0.1 * y[1]
    top = max(a, b)
    ea, eb = math.exp(a - top), math.exp(b - top)
    s = ea + eb
    return np.array([0.1 * ea / s, 0.1 * eb / s])


def example1_costs() -> CostEnsemble:
    """The six two-dimensional costs of the six-agent benchmark.

    Analytic constants are attached only where they hold globally: f1, f4 and
    f6 are quadratics, f3 has a 0.005-Lipschitz gradient but is flat along
    (1, 1), and f2, f5 get none (f5 is a saddle on its whole domain).
    """
    f1 = CostFunction(
        2,
        lambda y: (y[0] - 5) ** 2 + 2 * (y[1] - 3) ** 2,
        lambda y: np.array([2 * (y[0] - 5), 4 * (y[1] - 3)]),
        lipschitz_w=4.0,
        strong_convexity_m=2.0,
        name="f1",
    )
    f2 = CostFunction(2, _f2_value, _f2_grad, name="f2")
    f3 = CostFunction(2, _f3_value, _f3_grad, lipschitz_w=0.005, strong_convexity_m=0.0, name="f3")
    f4 = CostFunction(
        2,
        lambda y: (2 * y[0] + 1) ** 2 + 2 * (y[1] - 1) ** 2,
        lambda y: np.array([4 * (2 * y[0] + 1), 4 * (y[1] - 1)]),
        lipschitz_w=8.0,
        strong_convexity_m=4.0,
        name="f4",
    )
    f5 = CostFunction(
        2,
        lambda y: (y[0] + y[1]) ** 2 + math.log(y[1] + 3),
        lambda y: np.array([2 * (y[0] + y[1]), 2 * (y[0] + y[1]) + 1 / (y[1] + 3)]),
        domain_guard=lambda y: y[1] > -3,
        name="f5",
    )
    f6 = CostFunction(
        2,
        lambda y: y[0] ** 2 + y[1] ** 2 + y[0] + y[1],
        lambda y: np.array([2 * y[0] + 1, 2 * y[1] + 1]),
        lipschitz_w=2.0,
        strong_convexity_m=2.0,
        name="f6",
    )
    return CostEnsemble((f1, f2, f3, f4, f5, f6))


# -- oracles -----------------------------------------------------------------

def fd_gradient(fun, y, h=1e-6) -> np.ndarray:
    """Central finite differences, step scaled to |y|."""
    y = np.asarray(y, dtype=float)
    g = np.empty_like(y)
    for k in range(y.size):
        step = h * max(1.0, abs(y[k]))
        e = np.zeros_like(y)
        e[k] = step
        g[k] = (fun(y + e) - fun(y - e)) / (2 * step)
    return g


def _fd_hessian(grad, y, h=1e-5) -> np.ndarray:
    q = y.size
    hess = np.empty((q, q))
    for k in range(q):
        step = h * max(1.0, abs(y[k]))
        e = np.zeros(q)
        e[k] = step
        hess[:, k] = (grad(y + e) - grad(y - e)) / (2 * step)
    return (hess + hess.T) / 2


def solve_optimum(ens: CostEnsemble, y0, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Minimize the summed cost by damped Newton with Armijo backtracking.

    The Hessian is a finite difference of the analytic gradient. Steps that
    leave any domain guard are shrunk like ordinary backtracking.
    """
    y = np.asarray(y0, dtype=float).copy()
    if not ens.in_domain(y):
        bad = [i for i, c in enumerate(ens.costs) if not c.in_domain(y)]
        raise DomainError(f"starting point {y.tolist()} is outside the domain of cost(s) {bad}", index=bad[0], point=y)

    def grad(z):
        return sum_gradient(ens, z)

    g = grad(y)
    fval = ens.total(y)
    for _ in range(max_iter):
        if np.linalg.norm(g) <= tol:
            return y
        hess = _fd_hessian(grad, y)
        eig_min = np.linalg.eigvalsh(hess)[0]
        if eig_min <= 1e-10:
            # not locally convex: shift toward a descent direction
            hess = hess + (1e-8 - eig_min + 1e-6 * max(1.0, abs(eig_min))) * np.eye(y.size)
        step = -np.linalg.solve(hess, g)
        slope = g @ step
        if slope >= 0:
            step, slope = -g, -(g @ g)
        alpha = 1.0
        while True:
            cand = y + alpha * step
            if ens.in_domain(cand):
                fc = ens.total(cand)
                if fc <= fval + 1e-4 * alpha * slope:
                    break
                # near the optimum f stops resolving progress; fall back on |grad|
                flat = abs(fc - fval) <= 1e-12 * max(1.0, abs(fval))
                if flat and np.linalg.norm(grad(cand)) < np.linalg.norm(g):
                    break
            alpha *= 0.5
            if alpha < 1e-16:
                raise ConvergenceError(
                    f"line search step underflow at y={y.tolist()}, |grad|={np.linalg.norm(g):.3e}",
                    residual=float(np.linalg.norm(g)),
                )
        y, fval = cand, fc
        g = grad(y)
    res = float(np.linalg.norm(g))
    if res <= tol:
        return y
    raise ConvergenceError(f"no convergence after {max_iter} iterations, |sum grad| = {res:.3e}", residual=res)


def estimate_constants(cost: CostFunction, box, samples: int = 2000, seed: int = 0):
    """Empirical (w, m) from random pairs in an axis-aligned box.

    ``box`` is a sequence of (low, high) per coordinate. The results are
    sample extrema of the secant ratios, not certified bounds.
    """
    box = np.asarray(box, dtype=float)
    if box.shape != (cost.dim, 2):
        raise ValueError(f"box must have shape ({cost.dim}, 2), got {box.shape}")
    lo, hi = box[:, 0], box[:, 1]
    if np.any(~np.isfinite(box)) or np.any(hi <= lo):
        raise ValueError(f"degenerate sampling box {box.tolist()}")
    if samples < 1:
        raise ValueError("need at least one sample pair")
    rng = np.random.default_rng(seed)
    w_est, m_est = 0.0, math.inf
    for _ in range(samples):
        x = rng.uniform(lo, hi)
        y = rng.uniform(lo, hi)
        d = x - y
        nd2 = d @ d
        if nd2 < 1e-12:
            continue
        gd = cost.grad(x) - cost.grad(y)
        w_est = max(w_est, float(np.linalg.norm(gd) / math.sqrt(nd2)))
        m_est = min(m_est, float(d @ gd / nd2))
    if not math.isfinite(m_est):
        raise ValueError("sampling box produced no usable pairs")
    return w_est, m_est
