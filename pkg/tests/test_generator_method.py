import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from steinkit.dist_core import FiniteRv, poisson_pmf_window
from steinkit.errors import DomainError, PreconditionError, ResourceError
from steinkit.generator_method import (
    CoordinateChainSpec,
    CtmcGenerator,
    bernoulli_generator_expansion,
    coordinate_dynkin_check,
    coordinate_generator_apply,
    coordinate_stein_identity,
    enumerate_product,
    immigration_death_generator,
    poisson_equation_residual,
    projection_expansion,
    recurrent_potential,
    solve_poisson_equation,
    stationarity_check,
    stein_difference_from_potential,
    time_integrated_potential,
)
from steinkit.stein_poisson import solve_stein_poisson

HALF = FiniteRv.two_point(-0.5, 0.5, 0.5)
TWO_STATE = CtmcGenerator(np.array([0, 1]), np.array([[-1.0, 1.0], [1.0, -1.0]]))


def poly(coef):
    P = np.polynomial.Polynomial(coef)
    return P, P.deriv(), P.deriv(2)


def centered_rvs(seed, n, atoms=3):
    """Random centered coordinates scaled so that sum E X_i^2 = 1."""
    rng = np.random.default_rng(seed)
    raw = []
    for _ in range(n):
        v = rng.normal(size=atoms)
        q = rng.dirichlet(np.ones(atoms))
        raw.append((v - np.dot(q, v), q))
    s = math.sqrt(sum(np.dot(q, v * v) for v, q in raw))
    return [FiniteRv.from_atoms(v / s, q) for v, q in raw]


class TestCtmc:
    def test_validation(self):
        with pytest.raises(ValueError):
            CtmcGenerator(np.array([0, 1]), np.array([[-1.0, 1.0], [1.0, -0.5]]))
        with pytest.raises(ValueError):
            CtmcGenerator(np.array([0, 1]), np.array([[1.0, -1.0], [1.0, -1.0]]))

    def test_reducible(self):
        Q = CtmcGenerator(np.array([0, 1]), np.array([[-1.0, 1.0], [0.0, 0.0]]))
        assert not Q.is_irreducible()
        with pytest.raises(PreconditionError):
            solve_poisson_equation(Q, [1.0, 0.0])

    def test_two_state_solve(self):
        g = solve_poisson_equation(TWO_STATE, [1.0, 0.0])
        np.testing.assert_allclose(g, [0.25, -0.25], atol=1e-15)
        np.testing.assert_allclose(recurrent_potential(TWO_STATE, [1.0, 0.0]), [-0.25, 0.25], atol=1e-15)

    def test_constant_h(self):
        Q = immigration_death_generator(2.0, 30)
        assert np.max(np.abs(solve_poisson_equation(Q, np.full(31, 3.0)))) <= 1e-13

    @settings(max_examples=25)
    @given(st.integers(2, 8), st.integers(0, 2**32 - 1))
    def test_random_chain_residual(self, m, seed):
        rng = np.random.default_rng(seed)
        R = rng.exponential(size=(m, m)) * (rng.random((m, m)) < 0.7)
        np.fill_diagonal(R, 0)
        R[np.arange(m), (np.arange(m) + 1) % m] += 0.1  # a cycle keeps it irreducible
        np.fill_diagonal(R, -R.sum(axis=1))
        Q = CtmcGenerator(np.arange(m), R)
        h = rng.normal(size=m)
        g = solve_poisson_equation(Q, h)
        assert poisson_equation_residual(Q, g, h) <= 1e-10
        assert abs(np.dot(Q.stationary(), g)) <= 1e-12
        assert stationarity_check(Q, rng.normal(size=m)) <= 1e-12


class TestImmigrationDeath:
    def test_construction(self):
        Q = immigration_death_generator(2.0, 5, strict=False).rates
        assert Q[0, 1] == 2 and Q[1, 0] == 1 and Q[1, 2] == 2 and Q[1, 1] == -3
        assert Q[5, 4] == 5 and Q[5, 5] == -5

    def test_precondition(self):
        with pytest.raises(PreconditionError):
            immigration_death_generator(1.0, 1)
        with pytest.raises(PreconditionError):
            immigration_death_generator(2.0, 5)

    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 5.0, 10.0])
    def test_stationary_is_poisson(self, lam):
        N = math.ceil(lam + 10 * math.sqrt(lam)) + 10
        pi = immigration_death_generator(lam, N).stationary()
        p = poisson_pmf_window(lam, N).weights
        assert 0.5 * np.abs(pi - p / p.sum()).sum() <= 1e-10

    def test_stationarity_examples(self):
        assert stationarity_check(TWO_STATE, [3.0, -7.0]) <= 1e-14
        Q = immigration_death_generator(2.0, 30)
        assert stationarity_check(Q, np.arange(31.0) ** 2) <= 1e-10
        assert stationarity_check(Q, np.ones(31)) == 0.0

    @given(st.lists(st.floats(-10, 10), min_size=41, max_size=41))
    def test_operator_form(self, f):
        lam = 3.0
        f = np.array(f)
        Qf = immigration_death_generator(lam, 40).apply(f)
        w = np.arange(1, 40)
        expected = lam * (f[w + 1] - f[w]) - w * (f[w] - f[w - 1])
        np.testing.assert_allclose(Qf[1:40], expected, atol=1e-12)

    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 5.0])
    def test_correspondence(self, lam):
        N = math.ceil(lam + 10 * math.sqrt(lam)) + 20
        rng = np.random.default_rng(3)
        Q = immigration_death_generator(lam, N)
        pi = Q.stationary()
        for h in (np.eye(N + 1)[0], rng.uniform(-1, 1, N + 1)):
            f = stein_difference_from_potential(recurrent_potential(Q, h))
            w = np.arange(1, N)
            lhs = lam * f[w + 1] - w * f[w]
            assert np.max(np.abs(lhs - (h[w] - np.dot(pi, h)))) <= 1e-9
            # it coincides with the direct solver away from the truncation edge
            sol = solve_stein_poisson(h, lam)
            m = int(lam + 6 * math.sqrt(lam) + 5)
            np.testing.assert_allclose(f[1:m], sol.values[1:m], atol=1e-9)

    def test_indicator_zero_lambda_one(self):
        Q = immigration_death_generator(1.0, 30)
        f = stein_difference_from_potential(recurrent_potential(Q, np.eye(31)[0]))
        e = math.exp(-1)
        assert f[1] == pytest.approx(1 - e, abs=1e-10)
        assert f[2] == pytest.approx(1 - 2 * e, abs=1e-10)

    def test_time_integration(self):
        Q = immigration_death_generator(1.0, 12)
        h = np.eye(13)[0]
        direct = recurrent_potential(Q, h)
        timed = time_integrated_potential(Q, h, 40.0, 0.01)
        assert np.max(np.abs(direct - timed)) <= 1e-4


class TestCoordinateChain:
    def test_constant(self):
        spec = CoordinateChainSpec((HALF, HALF))
        assert coordinate_generator_apply(spec, lambda z: 5.0, [0.5, -0.5]) == 0

    def test_single(self):
        spec = CoordinateChainSpec((FiniteRv.two_point(-1, 1, 0.5),))
        assert coordinate_generator_apply(spec, lambda z: z[0], [1.0]) == -1.0

    def test_sum_at_origin(self):
        X = FiniteRv.from_atoms([-1, 0, 1], [0.25, 0.5, 0.25])
        spec = CoordinateChainSpec((X, X, X))
        assert coordinate_generator_apply(spec, lambda z: z.sum(), [0, 0, 0]) == 0

    def test_invalid_configuration(self):
        spec = CoordinateChainSpec((HALF,))
        with pytest.raises(DomainError):
            coordinate_generator_apply(spec, lambda z: 0.0, [0.3])
        with pytest.raises(DomainError):
            coordinate_generator_apply(spec, lambda z: 0.0, [0.5, 0.5])

    def test_empty(self):
        with pytest.raises(ValueError):
            CoordinateChainSpec(())


class TestProjectionExpansion:
    spec = CoordinateChainSpec((HALF,) * 4)

    def test_quadratic(self):
        f, f1, f2 = poly([1, -2, 3])
        r = projection_expansion(self.spec, f, f1, f2, [0.5, 0.5, -0.5, 0.5])
        assert r.remainder == pytest.approx(0, abs=1e-14) and r.residual <= 1e-12

    def test_cubic(self):
        f, f1, f2 = poly([0, 0, 0, 1])
        z = np.array([0.5, 0.5, -0.5, 0.5])
        r = projection_expansion(self.spec, f, f1, f2, z)
        oracle = sum(0.5 * ((0.5 - zi) ** 3 + (-0.5 - zi) ** 3) for zi in z)
        assert r.remainder == pytest.approx(oracle, abs=1e-14)
        assert r.residual <= 1e-12

    def test_linear(self):
        f, f1, f2 = poly([2, 3])
        z = [0.5, -0.5, -0.5, -0.5]
        r = projection_expansion(self.spec, f, f1, f2, z)
        assert r.remainder == 0 and r.rhs == pytest.approx(-(-1.0) * 3)

    def test_uncentered(self):
        spec = CoordinateChainSpec((FiniteRv.two_point(0, 1, 0.5),))
        with pytest.raises(PreconditionError):
            projection_expansion(spec, *poly([0, 1]), [0.0])

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.lists(st.floats(-2, 2), min_size=1, max_size=6))
    def test_degree_five(self, seed, n, coef):
        rvs = centered_rvs(seed, n)
        spec = CoordinateChainSpec(tuple(rvs))
        rng = np.random.default_rng(seed + 1)
        z = [X.values[rng.integers(X.size)] for X in rvs]
        assert projection_expansion(spec, *poly(coef), z).residual <= 1e-10


class TestSteinIdentity:
    def test_four_halves_cubic(self):
        assert coordinate_stein_identity([HALF] * 4, *poly([0, 0, 0, 1])).residual <= 1e-12

    def test_linear(self):
        r = coordinate_stein_identity([HALF] * 4, *poly([1, 2]))
        assert r.lhs == pytest.approx(0, abs=1e-15) and r.rhs == pytest.approx(0, abs=1e-15)

    def test_asymmetric_two_point(self):
        # centered two-point with P(a) = q: b = -a q / (1 - q); scale to total variance 1
        a, q = 1.0, 0.2
        b = -a * q / (1 - q)
        var = q * a * a + (1 - q) * b * b
        X = FiniteRv.two_point(a / math.sqrt(2 * var), b / math.sqrt(2 * var), q)
        assert coordinate_stein_identity([X, X], *poly([0.3, -1, 0.5, 2, -0.25])).residual <= 1e-12

    def test_brute_force_oracle(self):
        # independent enumeration with itertools
        f, f1, f2 = poly([0, 1, 0, 0, 1])
        lhs = 0.0
        for zs in itertools.product([-0.5, 0.5], repeat=4):
            w = sum(zs)
            lhs -= (-w * f1(w) + f2(w)) / 16
        assert coordinate_stein_identity([HALF] * 4, f, f1, f2).lhs == pytest.approx(lhs, abs=1e-14)

    def test_moment_violation(self):
        with pytest.raises(PreconditionError):
            coordinate_stein_identity([HALF] * 3, *poly([0, 1]))

    def test_budget(self):
        X = FiniteRv.from_atoms(np.linspace(-1, 1, 11), np.full(11, 1 / 11))
        with pytest.raises(ResourceError):
            enumerate_product([X] * 7)

    @settings(max_examples=20)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.lists(st.floats(-2, 2), min_size=1, max_size=6))
    def test_random(self, seed, n, coef):
        assert coordinate_stein_identity(centered_rvs(seed, n), *poly(coef)).residual <= 1e-10

    @settings(max_examples=20)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.lists(st.floats(-2, 2), min_size=1, max_size=6))
    def test_dynkin(self, seed, n, coef):
        assert coordinate_dynkin_check(centered_rvs(seed, n), np.polynomial.Polynomial(coef)) <= 1e-10


class TestBernoulliExpansion:
    @given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=6), st.integers(0, 2**32 - 1))
    def test_birth_death_form(self, p, seed):
        rng = np.random.default_rng(seed)
        z = (rng.random(len(p)) < 0.5).astype(int)
        f = {k: float(v) for k, v in zip(range(-1, len(p) + 2), rng.normal(size=len(p) + 3))}
        r = bernoulli_generator_expansion(p, f.__getitem__, z)
        assert r.residual <= 1e-12
