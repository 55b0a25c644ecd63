import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossdiff.model import (
    DriftSpec,
    EntropyParams,
    ModelError,
    Reaction,
    ReactionSpec,
    SystemSpec,
    diffusion_matrix,
    drift_eval,
    entropy_density,
    entropy_gradient,
    entropy_hessian,
    entropy_to_primal,
    hA_matrix,
    onsager_matrix,
    onsager_quadratic_derivative,
    onsager_split,
    reaction_eval,
    reaction_jacobian,
)


def _diffusion_loops(a0, a, u):
    # oracle: the textbook SKT formula, entry by entry
    n = len(a0)
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                A[i, i] = a0[i] + sum(a[i][k] * u[k] for k in range(n)) + a[i][i] * u[i]
            else:
                A[i, j] = a[i][j] * u[i]
    return A


def test_diffusion_matrix_matches_formula():
    rng = np.random.default_rng(1)
    a0 = rng.uniform(0, 1, 3)
    a = rng.uniform(0, 2, (3, 3))
    spec = SystemSpec.simple(a0, a)
    for _ in range(5):
        u = rng.uniform(0.1, 3, 3)
        np.testing.assert_allclose(diffusion_matrix(spec, u), _diffusion_loops(a0, a, u), rtol=1e-14)


def test_diffusion_matrix_vectorized_over_nodes():
    rng = np.random.default_rng(2)
    spec = SystemSpec.simple([0.1, 0.2], [[1, 2], [0.5, 1]])
    u = rng.uniform(0.1, 2, (2, 7))
    A = diffusion_matrix(spec, u)
    assert A.shape == (2, 2, 7)
    for j in range(7):
        np.testing.assert_allclose(A[:, :, j], _diffusion_loops(spec.a0, spec.a, u[:, j]))


def test_entropy_density_values():
    p = EntropyParams(np.array([2.0]), np.array([0.5]))
    s = 1.7
    expected = 2.0 * (s * (math.log(s) - 1 + 0.5) + math.exp(-0.5))
    assert entropy_density(p, np.array([s])) == pytest.approx(expected, rel=1e-14)
    # minimum zero at the equilibrium e^{-lambda}
    assert entropy_density(p, np.array([math.exp(-0.5)])) == pytest.approx(0.0, abs=1e-15)
    # continuous extension at zero
    assert entropy_density(p, np.array([0.0])) == pytest.approx(2.0 * math.exp(-0.5))


def test_entropy_gradient_and_inverse():
    rng = np.random.default_rng(3)
    p = EntropyParams(np.array([1.0, 2.0, 3.0]), np.array([0.1, -0.2, 0.0]))
    u = rng.uniform(0.01, 10, (3, 11))
    w = entropy_gradient(p, u)
    np.testing.assert_allclose(entropy_to_primal(p, w), u, rtol=1e-13)
    # gradient agrees with a central difference of the density
    h = 1e-6
    for i in range(3):
        e = np.zeros((3, 1))
        e[i] = h
        fd = (entropy_density(p, u + e) - entropy_density(p, u - e)) / (2 * h)
        np.testing.assert_allclose(fd, w[i], rtol=1e-6, atol=1e-8)


def test_entropy_hessian_single_state():
    p = EntropyParams(np.array([1.0, 2.0]), np.zeros(2))
    np.testing.assert_allclose(entropy_hessian(p, np.array([0.5, 4.0])), np.diag([2.0, 0.5]))
    with pytest.raises(ModelError):
        entropy_hessian(p, np.ones((2, 3)))


def test_entropy_params_validation():
    with pytest.raises(ModelError):
        EntropyParams(np.array([1.0, -1.0]), np.zeros(2))
    with pytest.raises(ModelError):
        EntropyParams(np.array([1.0]), np.zeros(2))


def test_onsager_split_sums_to_onsager_matrix():
    rng = np.random.default_rng(4)
    spec = SystemSpec.simple([0.3, 0.1], [[1, 2], [0.5, 1]], entropy=EntropyParams(np.array([1.0, 4.0]), np.zeros(2)))
    u = rng.uniform(0.1, 2, (2, 5))
    lin, quad = onsager_split(spec, u)
    np.testing.assert_allclose(lin + quad, onsager_matrix(spec, u), rtol=1e-14)
    np.testing.assert_allclose(lin[0, 1], 0.0)
    np.testing.assert_allclose(lin[0, 0], 0.3 * u[0])


def test_onsager_symmetric_under_detailed_balance():
    # pi_i a_ij = pi_j a_ji with pi = (1, 2, 3)
    a = np.array([[1.0, 2.0, 3.0], [1.0, 1.0, 3.0], [1.0, 2.0, 1.0]])
    spec = SystemSpec.simple([0.1] * 3, a, entropy=EntropyParams(np.array([1.0, 2.0, 3.0]), np.zeros(3)))
    u = np.array([0.4, 1.3, 2.2])
    B = onsager_matrix(spec, u)
    np.testing.assert_allclose(B, B.T, rtol=1e-13)
    assert np.all(np.linalg.eigvalsh(B) > 0)


def test_onsager_quadratic_derivative_matches_fd():
    rng = np.random.default_rng(5)
    spec = SystemSpec.simple([0.2, 0.1, 0.3], rng.uniform(0, 2, (3, 3)),
                             entropy=EntropyParams(np.array([1.0, 2.0, 0.5]), np.zeros(3)))
    v = rng.uniform(0.2, 2.0, 3)
    d = onsager_quadratic_derivative(spec, v)
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (onsager_split(spec, v + e)[1] - onsager_split(spec, v - e)[1]) / (2 * h)
        np.testing.assert_allclose(d[:, :, k], fd, rtol=1e-7, atol=1e-9)


def test_hA_matrix_definition():
    spec = SystemSpec.simple([0.1, 0.2], [[1, 2], [0.5, 1]])
    u = np.array([0.5, 2.0])
    np.testing.assert_allclose(hA_matrix(spec, u), np.diag(1 / u) @ diffusion_matrix(spec, u))


def test_mass_action_reaction_and_jacobian():
    # X1 + X2 <-> 2 X3 with kf = 2, kb = 0.5
    r = Reaction(np.array([1, 1, 0]), np.array([0, 0, 2]), 2.0, 0.5)
    spec = ReactionSpec.mass_action([r])
    u = np.array([0.7, 1.5, 0.3])
    rate = 2.0 * 0.7 * 1.5 - 0.5 * 0.3**2
    np.testing.assert_allclose(reaction_eval(spec, u), [-rate, -rate, 2 * rate])
    J = reaction_jacobian(spec, u)
    h = 1e-7
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        np.testing.assert_allclose(J[:, k], (reaction_eval(spec, u + e) - reaction_eval(spec, u - e)) / (2 * h),
                                   rtol=1e-6, atol=1e-9)


def test_lotka_volterra_jacobian():
    spec = ReactionSpec.lotka_volterra([1.0, -0.5], [[-1.0, -0.4], [0.3, -0.2]])
    u = np.array([[0.5, 1.0], [2.0, 0.1]])
    J = reaction_jacobian(spec, u)
    h = 1e-7
    for k in range(2):
        e = np.zeros((2, 1))
        e[k] = h
        fd = (reaction_eval(spec, u + e) - reaction_eval(spec, u - e)) / (2 * h)
        np.testing.assert_allclose(J[:, k], fd, rtol=1e-6, atol=1e-9)


def test_custom_reaction_jacobian_fallback():
    spec = ReactionSpec.custom(2, lambda u: np.stack([u[0] * u[1], -u[0] ** 2]))
    u = np.array([1.5, 0.5])
    np.testing.assert_allclose(reaction_jacobian(spec, u), [[0.5, 1.5], [-3.0, 0.0]], rtol=1e-6)


def test_reaction_validation():
    with pytest.raises(ModelError):
        Reaction(np.array([1, 0]), np.array([0, 1, 0]), 1.0, 1.0)
    with pytest.raises(ModelError):
        Reaction(np.array([0.5, 0]), np.array([0, 1]), 1.0, 1.0)


def test_drift_kinds():
    c = DriftSpec.constant([[1.0], [-2.0]])
    np.testing.assert_allclose(drift_eval(c, [0.3]), [[1.0], [-2.0]])
    z = DriftSpec.zero(2)
    np.testing.assert_allclose(drift_eval(z, [0.3]), 0.0)
    # tabulated linear profile is reproduced exactly by multilinear interpolation
    axes = [np.linspace(0, 1, 5)]
    values = np.stack([np.stack([2 * axes[0]]), np.stack([1 - axes[0]])])
    tab = DriftSpec.tabulated(axes, values)
    np.testing.assert_allclose(drift_eval(tab, [0.37]), [[0.74], [0.63]], rtol=1e-14)
    cus = DriftSpec.custom(1, 1, lambda pts, t: np.full((1, len(pts), 1), t))
    assert cus.time_dependent
    np.testing.assert_allclose(drift_eval(cus, [0.5], 0.25), [[0.25]])


def test_system_validation():
    with pytest.raises(ModelError):
        SystemSpec.simple([0.1, 0.1], [[1.0, 2.0]])
    with pytest.raises(ModelError):
        SystemSpec.simple([0.1, -0.1], [[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ModelError):
        SystemSpec.simple([0.1], [[1.0]], entropy=EntropyParams.unit(2))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=2))
def test_entropy_nonnegative_property(u):
    p = EntropyParams(np.array([1.0, 3.0]), np.array([0.4, -1.0]))
    assert entropy_density(p, np.array(u)) >= -1e-12
