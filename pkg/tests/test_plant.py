import numpy as np
import pytest
import sympy as sp

from piconsensus.errors import AssumptionError
from piconsensus.plant import (
    EXAMPLE1_PUBLISHED_GAINS,
    AgentPlant,
    GainPair,
    check_gains,
    example1_plants,
    gain_residuals,
    output,
    output_coordinates,
    plant_derivative,
    synthesize_gains,
    validate_assumption4,
)


def exact_gains(p):
    """Rational solution of the gain equations for square C B (sympy oracle)."""
    a, b, c = (sp.Matrix(m.tolist()).applyfunc(sp.nsimplify) for m in (p.a_mat, p.b_mat, p.c_mat))
    cb = c * b
    return np.array(cb.LUsolve(c * a), dtype=float), np.array(cb.inv(), dtype=float)


def test_scalar_integrator_assumption4():
    r = validate_assumption4(AgentPlant([[0]], [[1]], [[1]]))
    assert r.rank_ok and r.controllable and r.passed


def test_orthogonal_channel_fails():
    r = validate_assumption4(AgentPlant([[0, 1], [0, 0]], [[0], [1]], [[1, 0]]))
    assert r.rank_cb == 0 and not r.rank_ok
    with pytest.raises(AssumptionError, match="Assumption 4"):
        synthesize_gains(AgentPlant([[0, 1], [0, 0]], [[0], [1]], [[1, 0]]))


def test_example1_agent1_product():
    p = example1_plants()[0]
    np.testing.assert_array_equal(p.c_mat @ p.b_mat, [[0, 3], [1, -2]])
    r = validate_assumption4(p)
    assert r.rank_cb == 2 and r.rank_ok


def test_example1_agent1_gains():
    g = synthesize_gains(example1_plants()[0])
    np.testing.assert_allclose(g.k_beta, [[2 / 3, 1], [1 / 3, 0]], atol=1e-12)
    np.testing.assert_allclose(g.k_alpha, [[2, 1], [1, 0]], atol=1e-12)


@pytest.mark.parametrize("k", range(6))
def test_synthesized_gains_match_exact_solution(k):
    p = example1_plants()[k]
    ka, kb = exact_gains(p)
    g = synthesize_gains(p)
    np.testing.assert_allclose(g.k_alpha, ka, atol=1e-12)
    np.testing.assert_allclose(g.k_beta, kb, atol=1e-12)
    assert max(gain_residuals(p, g)) <= 1e-9


@pytest.mark.parametrize("pair", [0, 1, 2])
def test_published_k_beta_is_a_rounding_of_the_exact_one(pair):
    _, kb = exact_gains(example1_plants()[2 * pair])
    np.testing.assert_allclose(EXAMPLE1_PUBLISHED_GAINS[pair][1], kb, atol=1e-3)


def test_published_k_alpha_for_second_pair_does_not_solve():
    # the printed K_alpha for agents 3-4 is inconsistent with their (A, B, C)
    p = example1_plants()[2]
    ka, _ = exact_gains(p)
    np.testing.assert_allclose(ka, [[-2, 1], [2, 0]], atol=1e-12)
    published = GainPair(*map(np.asarray, EXAMPLE1_PUBLISHED_GAINS[1]))
    assert gain_residuals(p, published)[0] > 1


def test_square_cb_with_zero_drift():
    cb = np.array([[2.0, 1.0], [0.0, 3.0]])
    p = AgentPlant(np.zeros((2, 2)), cb, np.eye(2))
    g = synthesize_gains(p)
    np.testing.assert_allclose(g.k_alpha, 0, atol=1e-15)
    np.testing.assert_allclose(g.k_beta, np.linalg.inv(cb), atol=1e-14)


def test_random_plants_residuals():
    rng = np.random.default_rng(3)
    for _ in range(100):
        q = int(rng.integers(1, 4))
        pi = int(rng.integers(q, q + 3))
        n = int(rng.integers(pi, pi + 3))
        a = rng.normal(size=(n, n))
        c = rng.normal(size=(q, n))
        # B = C^+ M + (null-space part) keeps C B = M with M full row rank
        m = rng.normal(size=(q, pi))
        b = np.linalg.pinv(c) @ m + (np.eye(n) - np.linalg.pinv(c) @ c) @ rng.normal(size=(n, pi))
        p = AgentPlant(a, b, c)
        g = synthesize_gains(p)
        assert max(gain_residuals(p, g)) <= 1e-9
        assert np.linalg.norm(c @ (a - b @ g.k_alpha)) <= 1e-8


def test_check_gains_rejects_bad_supply():
    p = example1_plants()[0]
    with pytest.raises(AssumptionError, match="gain equations"):
        check_gains(p, GainPair(*map(np.asarray, EXAMPLE1_PUBLISHED_GAINS[0])))
    with pytest.raises(ValueError, match="shape"):
        check_gains(p, GainPair(np.zeros((2, 3)), np.zeros((2, 2))))


def test_plant_derivative_values():
    p = AgentPlant([[1]], [[1]], [[1]])
    g = synthesize_gains(p)
    assert g.k_alpha[0, 0] == 1 and g.k_beta[0, 0] == 1
    np.testing.assert_allclose(plant_derivative(p, g, [3.0], x=[2.0]), [3.0])
    np.testing.assert_array_equal(plant_derivative(p, g, [0.0], x=[0.0]), [0.0])
    with pytest.raises(ValueError):
        plant_derivative(p, g, [1.0, 2.0], x=[0.0])


def test_plant_derivative_against_dense_block():
    rng = np.random.default_rng(0)
    p = example1_plants()[2]
    g = synthesize_gains(p)
    for _ in range(10):
        x, v = rng.normal(size=2), rng.normal(size=2)
        a, b = p.a_mat.tolist(), p.b_mat.tolist()
        ka, kb = g.k_alpha.tolist(), g.k_beta.tolist()
        ref = [
            sum((a[r][s] - sum(b[r][t] * ka[t][s] for t in range(2))) * x[s] for s in range(2))
            + sum(b[r][t] * kb[t][s] * v[s] for t in range(2) for s in range(2))
            for r in range(2)
        ]
        np.testing.assert_allclose(plant_derivative(p, g, v, x=x), ref, atol=1e-12)
        # the output moves with the inner signal exactly
        np.testing.assert_allclose(p.c_mat @ plant_derivative(p, g, v, x=x), v, atol=1e-12)


def test_output_values():
    p5 = example1_plants()[4]
    np.testing.assert_allclose(output(p5, np.ones(3)), [2, 5])
    np.testing.assert_array_equal(output(p5, np.zeros(3)), [0, 0])
    np.testing.assert_array_equal(output(AgentPlant(np.eye(2), np.eye(2), np.eye(2)), [4, -1]), [4, -1])


@pytest.mark.parametrize("k", range(6))
def test_output_coordinates_are_a_similarity(k):
    p = example1_plants()[k]
    g = synthesize_gains(p)
    oc = output_coordinates(p, g)
    q = p.n_outputs
    closed = p.a_mat - p.b_mat @ g.k_alpha
    np.testing.assert_allclose(oc.transform @ closed @ oc.inverse, oc.drift, atol=1e-9)
    np.testing.assert_array_equal(oc.drift[:q], 0)
    np.testing.assert_array_equal(oc.inject[:q], np.eye(q))


def test_hidden_mode_of_third_pair():
    r = validate_assumption4(example1_plants()[4])
    assert r.passed
    np.testing.assert_allclose(np.real(r.internal_eigenvalues), [0.6], atol=1e-9)
