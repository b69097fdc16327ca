import math

import mpmath
import numpy as np
import pytest

from piconsensus import control
from piconsensus.control import (
    ControllerState,
    c2,
    c2_bar,
    control_signal,
    equilibrium,
    kappa_lower_bound,
    lyapunov_matrix,
    lyapunov_value,
    make_config,
    next_comm_periodic,
    periodic_instant,
    rate_constants,
    tau0,
    trigger_threshold,
    trigger_thresholds,
    xi_lower_bound,
)
from piconsensus.costs import example1_costs, solve_optimum, sum_gradient
from piconsensus.errors import ConfigError
from piconsensus.graph import build_graph, gamma_matrix, ring_graph

mpmath.mp.dps = 200


def tau0_oracle(w, lam, xi):
    w, lam, xi = mpmath.mpf(w), mpmath.mpf(lam), mpmath.mpf(xi)
    eps = 1 / (2 * mpmath.sqrt(2 * (xi ** 2 + (xi - 1) ** 2)))
    s = mpmath.sqrt(2) * lam
    return (1 / (w + 1)) * mpmath.log(1 + (w + 1) * eps / (w + 1 + s + s * eps))


def c2_bar_oracle(xi, lam2):
    xi, lam2 = mpmath.mpf(xi), mpmath.mpf(lam2)
    disc = (1 / lam2 ** 2 - 2 / lam2 + 1) * xi ** 2 + (2 / lam2 - 2) * xi + 5
    return 2 / (xi + xi / lam2 + 1 + mpmath.sqrt(disc))


def neighbor_list(g, y_hat):
    return [[(w, y_hat[j]) for j, w in g.neighbors(i)] for i in range(g.n_agents)]


def test_signal_zero_at_consensus():
    v = control_signal(np.ones(2), [(1.0, np.ones(2)), (2.0, np.ones(2))], np.ones(2), np.zeros(2), np.zeros(2))
    np.testing.assert_array_equal(v, [0, 0])


def test_signal_single_neighbor():
    v = control_signal([1, 0], [(1.0, [0, 0])], [1, 0], np.zeros(2), np.zeros(2), scheme="periodic")
    np.testing.assert_array_equal(v, [-1, 0])


def test_continuous_signal_ignores_stale_broadcast():
    v = control_signal([1, 0], [(1.0, [0, 0])], [7, 7], np.zeros(2), np.zeros(2), scheme="continuous")
    np.testing.assert_array_equal(v, [-1, 0])


def test_signal_matches_kronecker_oracle():
    rng = np.random.default_rng(5)
    g = ring_graph(6)
    ens = example1_costs()
    for _ in range(20):
        y = rng.uniform([-5, -2], [5, 5], size=(6, 2))
        y_hat = y + rng.normal(scale=0.1, size=(6, 2))
        eta = rng.normal(size=(6, 2))
        grads = np.array([c.grad(y[i]) for i, c in enumerate(ens)])
        dense = -grads.ravel() - np.kron(g.laplacian, np.eye(2)) @ y_hat.ravel() - eta.ravel()
        nbrs = neighbor_list(g, y_hat)
        got = np.concatenate(
            [control_signal(y[i], nbrs[i], y_hat[i], eta[i], grads[i], scheme="event") for i in range(6)]
        )
        np.testing.assert_allclose(got, dense, atol=1e-12)


def test_tau0_matches_high_precision():
    assert tau0(1.0, 2.0, 2.0) == pytest.approx(float(tau0_oracle(1, 2, 2)), rel=1e-14)


def test_tau0_positive_and_decreasing_in_xi():
    xs = np.geomspace(1.01, 1e4, 40)
    vals = [tau0(3.0, 4.0, x) for x in xs]
    assert all(v > 0 for v in vals)
    assert all(b < a for a, b in zip(vals, vals[1:]))
    # epsilon vanishes as xi grows, and tau0 with it
    assert tau0(3.0, 4.0, 1e12) < 1e-12


def test_tau0_names_violated_bound():
    with pytest.raises(ConfigError, match="4 w"):
        tau0(10.0, 4.0, 2.0, m_under=1.0)


def test_xi_and_kappa_bounds():
    assert xi_lower_bound("continuous", 2, 1, 4) == 2
    assert xi_lower_bound("continuous", 1, 1, 4) == 1
    assert xi_lower_bound("event", 2, 1, 4) == pytest.approx((16 + 32 + 1) / 8)
    assert kappa_lower_bound(2, 1) == 1
    assert kappa_lower_bound(1, 1) == 0.5


def test_next_comm_periodic():
    assert next_comm_periodic(0.0, 0.2) == 0.2
    assert next_comm_periodic(1.0, 0.5, tau0_value=0.5) == 1.5
    with pytest.raises(ConfigError, match="Theorem 2"):
        next_comm_periodic(0.0, 0.2, tau0_value=0.1)


def test_periodic_grid_has_no_drift():
    delta = 0.1
    assert periodic_instant(600, delta) == 600 * delta
    t = 0.0
    for _ in range(600):
        t = next_comm_periodic(t, delta)
    assert abs(t - 60.0) > 0  # naive accumulation drifts; the grid does not
    assert periodic_instant(600, delta) == pytest.approx(60.0, abs=1e-12)


def test_threshold_vanishes_at_consensus():
    assert trigger_threshold([(1.0, [2, 2]), (3.0, [2, 2])], [2, 2], 4.0, 1.0) == 0.0


def test_threshold_single_neighbor():
    assert trigger_threshold([(1.0, [2, 0])], [0, 0], 1.0, 1.0) == pytest.approx(0.5)


def test_thresholds_match_dense_oracle():
    rng = np.random.default_rng(11)
    g = ring_graph(6)
    kappa = 3.0
    for _ in range(100):
        y_hat = rng.uniform(-10, 10, size=(6, 2))
        # brute force straight from the adjacency row
        ref = np.array([
            sum(g.adjacency[i, j] * np.sum((y_hat[i] - y_hat[j]) ** 2) for j in range(6))
            / (4 * (g.adjacency[i].sum() + kappa))
            for i in range(6)
        ])
        nbrs = neighbor_list(g, y_hat)
        one = [trigger_threshold(nbrs[i], y_hat[i], g.degrees[i], kappa) for i in range(6)]
        np.testing.assert_allclose(one, ref, rtol=1e-12)
        np.testing.assert_allclose(trigger_thresholds(g.adjacency, y_hat, kappa), ref, rtol=1e-9, atol=1e-12)


def test_rate_constants_against_oracle():
    xi, cbar = rate_constants(2.0, 1.0, 1.0)
    assert xi == 2.5
    assert cbar == pytest.approx(float(c2_bar_oracle(2.5, 1)), rel=1e-14)
    for lam in (0.3, 1.7, 9.0):
        assert c2_bar(4.0, lam) == pytest.approx(float(c2_bar_oracle(4.0, lam)), rel=1e-13)


def test_c2_bar_large_lambda_limit():
    xi = 3.0
    limit = 2 / (xi + 1 + math.sqrt(xi ** 2 - 2 * xi + 5))
    assert c2_bar(xi, 1e12) == pytest.approx(limit, rel=1e-9)


@pytest.mark.parametrize("w, m, lam2", [(2.0, 1.0, 1.0), (4.0, 2.0, 0.5), (1.0, 3.0, 2.0)])
def test_c2_peaks_at_optimal_xi(w, m, lam2):
    xi_opt, cbar = rate_constants(w, m, lam2)
    peak = c2(xi_opt, w, m, lam2)
    assert peak == pytest.approx(cbar, rel=1e-12)
    assert peak >= c2(1.5 * xi_opt, w, m, lam2)
    assert peak >= c2(0.9 * xi_opt, w, m, lam2)


def test_lyapunov_simple_cases():
    gm = gamma_matrix(ring_graph(6))
    assert lyapunov_value(np.zeros((6, 2)), np.zeros((6, 2)), 3.0, gm) == 0.0
    rho = np.arange(12.0).reshape(6, 2)
    assert lyapunov_value(rho, np.zeros((6, 2)), 3.0, gm) == pytest.approx(1.5 * np.sum(rho ** 2))


def test_lyapunov_matches_block_quadratic_form():
    rng = np.random.default_rng(2)
    gm = gamma_matrix(ring_graph(6))
    xi = 3.0
    n, q = 6, 2
    eye = np.eye(n * q)
    big = 0.5 * np.block([[xi * eye, eye], [eye, eye + xi * np.kron(gm.matrix, np.eye(q))]])
    np.testing.assert_allclose(lyapunov_matrix(xi, gm, q), big)
    assert np.linalg.eigvalsh(big)[0] > 0
    for _ in range(20):
        rho, sigma = rng.normal(size=(2, n * q))
        p = np.concatenate([rho, sigma])
        assert lyapunov_value(rho, sigma, xi, gm) == pytest.approx(p @ big @ p, rel=1e-12)
        assert lyapunov_value(rho, sigma, xi, gm) > 0


def test_lyapunov_max_eig_matches_dense():
    g = ring_graph(6)
    gm = gamma_matrix(g, 1 / g.lambda_2)
    for xi in (1.0, 5.0, 800.0):
        dense = np.linalg.eigvalsh(lyapunov_matrix(xi, gm, 2))[-1]
        assert control.lyapunov_max_eig(xi, g.lambda_2, 1 / g.lambda_2) == pytest.approx(dense, rel=1e-10)


def test_equilibrium_characterization():
    ens = example1_costs()
    g = ring_graph(6)
    y_star = solve_optimum(ens, [0, 0])
    y_bar, eta_bar = equilibrium(ens, y_star)
    assert np.abs(eta_bar.sum(axis=0)).max() <= 1e-9
    nbrs = neighbor_list(g, y_bar)
    for i, c in enumerate(ens):
        v = control_signal(y_bar[i], nbrs[i], y_bar[i], eta_bar[i], c.grad(y_bar[i]))
        np.testing.assert_allclose(v, 0, atol=1e-12)
    assert np.linalg.norm(np.kron(g.laplacian, np.eye(2)) @ y_bar.ravel()) <= 1e-12
    assert np.linalg.norm(sum_gradient(ens, y_bar[0])) <= 1e-9


def test_controller_state_initial():
    st = ControllerState.initial(np.ones((3, 2)))
    np.testing.assert_array_equal(st.eta, 0)
    np.testing.assert_array_equal(st.error(np.ones((3, 2))), 0)


class TestMakeConfig:
    g = ring_graph(6)

    def test_continuous_default_is_rate_optimal(self):
        cfg = make_config("continuous", self.g, 2.0, 1.0)
        assert cfg.xi == 2.5 and cfg.delta is None and cfg.tau0 is None

    def test_sampled_defaults(self):
        cfg = make_config("periodic", self.g, 2.0, 1.0)
        bound = xi_lower_bound("periodic", 2.0, 1.0, 4.0)
        assert cfg.xi == pytest.approx(1.01 * bound)
        assert cfg.tau0 == pytest.approx(tau0(2.0, 4.0, cfg.xi))
        assert cfg.delta == cfg.tau0  # delta omitted: sample at tau0
        ev = make_config("event-triggered", self.g, 2.0, 1.0)
        assert ev.scheme == "event" and ev.kappa > kappa_lower_bound(2.0, 1.0)

    def test_delta_equal_to_tau0_accepted(self):
        base = make_config("periodic", self.g, 2.0, 1.0)
        cfg = make_config("periodic", self.g, 2.0, 1.0, delta=base.tau0)
        assert cfg.delta == base.tau0

    @pytest.mark.parametrize(
        "kwargs, fragment",
        [
            (dict(scheme="continuous", xi=0.5), "xi"),
            (dict(scheme="periodic", delta=1.0), "tau0"),
            (dict(scheme="event", kappa=0.1), "kappa"),
            (dict(scheme="continuous", delta=0.1), "delta"),
            (dict(scheme="bogus"), "scheme"),
        ],
    )
    def test_strict_violations(self, kwargs, fragment):
        with pytest.raises(ConfigError, match=fragment):
            make_config(graph=self.g, w_bar=2.0, m_under=1.0, **kwargs)

    def test_lenient_mode_warns(self):
        cfg = make_config("periodic", self.g, 2.0, 1.0, delta=1.0, strict=False)
        assert cfg.delta == 1.0
        assert any("tau0" in w for w in cfg.warnings)

    def test_disconnected_graph(self):
        with pytest.raises(ConfigError):
            make_config("continuous", build_graph(3, [(0, 1, 1)]), 2.0, 1.0)
