import itertools
import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from steinkit.dist_core import FiniteRv, convolve_finite, iid_sum, kolmogorov_distance_to_normal
from steinkit.errors import DomainError, PreconditionError, ResourceError
from steinkit.exchangeable_pairs import (
    PairLaw,
    antisymmetric_expansion_check,
    antisymmetry_identity_check,
    coordinate_resample_pair,
    cyclic_coupling,
    equal_distribution_identity,
    pair_bound,
    regression_check,
    remainder_identity_check,
    second_moment_check,
    split_seeds,
    stein_pair_function,
)

R2 = 1 / math.sqrt(2)
COIN = FiniteRv.two_point(-R2, R2, 0.5)


def enumerate_pair(rvs):
    """Oracle: every (configuration, index, replacement) triple, merged by value."""
    n = len(rvs)
    table = defaultdict(float)
    for cfg in itertools.product(*[list(zip(X.values, X.probs)) for X in rvs]):
        z = [a for a, _ in cfg]
        pz = math.prod(q for _, q in cfg)
        w = round(sum(z), 9)
        for i, X in enumerate(rvs):
            for y, q in zip(X.values, X.probs):
                wp = round(sum(z) - z[i] + y, 9)
                table[(w, wp)] += pz * q / n
    return dict(table)


def as_table(pl):
    out = defaultdict(float)
    for r, c, p in zip(pl.rows, pl.cols, pl.probs):
        out[(round(pl.values[r], 9), round(pl.values[c], 9))] += p
    return dict(out)


def centered(seed, n, atoms):
    rng = np.random.default_rng(seed)
    rvs = []
    for _ in range(n):
        v = rng.normal(size=atoms)
        q = rng.dirichlet(np.ones(atoms))
        rvs.append((v - np.dot(q, v), q))
    s = math.sqrt(sum(np.dot(q, v * v) for v, q in rvs))
    return [FiniteRv.from_atoms(v / s, q) for v, q in rvs]


def symmetric_sum(n):
    return [FiniteRv.two_point(-(n**-0.5), n**-0.5, 0.5)] * n


class TestConstruction:
    def test_two_coins_table(self):
        pl = coordinate_resample_pair([COIN, COIN])
        got, want = as_table(pl), enumerate_pair([COIN, COIN])
        assert got.keys() == want.keys()
        for k in want:
            assert got[k] == pytest.approx(want[k], abs=1e-15)
        s = round(math.sqrt(2), 9)
        # 16 equally likely outcomes, 4 of them start at W = sqrt 2
        assert want[(s, s)] == pytest.approx(2 / 16)
        assert want[(s, 0.0)] == pytest.approx(2 / 16)
        pw, cm = pl.conditional(lambda w, wp: wp)
        atoms = pl.values[pl.marginal_w > 0]
        assert cm[np.argmax(atoms)] == pytest.approx(math.sqrt(2) / 2, abs=1e-15)

    def test_single_coordinate(self):
        X = FiniteRv.from_atoms([-1, 0, 2], [0.4, 0.4, 0.2])
        pl = coordinate_resample_pair([X])
        assert pl.exchangeability_defect == 0
        np.testing.assert_allclose(pl.dense(), np.outer(X.probs, X.probs), atol=1e-16)

    @settings(max_examples=20)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.sampled_from([2, 3]))
    def test_matches_enumeration(self, seed, n, atoms):
        rvs = centered(seed, n, atoms)
        got, want = as_table(coordinate_resample_pair(rvs)), enumerate_pair(rvs)
        assert got.keys() == want.keys()
        assert max(abs(got[k] - want[k]) for k in want) <= 1e-13

    def test_budget(self):
        X = FiniteRv.from_atoms(np.arange(50) * 0.37, np.full(50, 0.02))
        Y = FiniteRv.from_atoms(np.arange(50) * math.pi, np.full(50, 0.02))
        with pytest.raises(ResourceError):
            coordinate_resample_pair([X, Y, X], budget=1000)

    def test_modes(self):
        with pytest.raises(PreconditionError):
            coordinate_resample_pair([COIN], mode="sampled")
        with pytest.raises(DomainError):
            coordinate_resample_pair([COIN], mode="other")
        with pytest.raises(PreconditionError):
            coordinate_resample_pair([])

    def test_sampled_marginal(self):
        rvs = symmetric_sum(10)
        pl = coordinate_resample_pair(rvs, mode="sampled", seed=12345, N=10**6)
        exact = convolve_finite(rvs)
        emp = pl.w_law()
        keys = np.union1d(np.round(exact.values, 9), np.round(emp.values, 9))
        pe = dict(zip(np.round(exact.values, 9), exact.probs))
        pm = dict(zip(np.round(emp.values, 9), emp.probs))
        tv = 0.5 * sum(abs(pe.get(k, 0) - pm.get(k, 0)) for k in keys)
        assert tv <= 0.005
        assert pl.sample_size == 10**6

    def test_sampled_reproducible(self):
        a = coordinate_resample_pair([COIN] * 3, mode="sampled", seed=7, N=5000)
        b = coordinate_resample_pair([COIN] * 3, mode="sampled", seed=7, N=5000)
        assert np.array_equal(a.probs, b.probs) and np.array_equal(a.rows, b.rows)

    def test_sampled_standard_error(self):
        pl = coordinate_resample_pair([COIN] * 3, mode="sampled", seed=3, N=20000)
        m, se = pl.expect_with_se(lambda w, wp: w * w)
        assert se > 0 and abs(m - 1.5) <= 5 * se
        assert coordinate_resample_pair([COIN]).expect_with_se(lambda w, wp: w)[1] == 0

    def test_split_seeds(self):
        s = split_seeds(1, 4)
        assert len(set(s)) == 4 and s == split_seeds(1, 4)

    def test_invariants(self):
        with pytest.raises(ValueError):
            PairLaw.from_triples([0.0, 1.0], [1.0, 0.0], [0.5, 0.6])
        with pytest.raises(DomainError):
            PairLaw.from_triples([1.0, -1.0], [-1.0, 1.0], [0.5, 0.5], lam=0.0)


class TestRegression:
    @pytest.mark.parametrize("n", range(2, 9))
    @pytest.mark.parametrize("atoms", [2, 3])
    def test_lambda_one_over_n(self, n, atoms):
        pl = coordinate_resample_pair(centered(n * 10 + atoms, n, atoms))
        r = regression_check(pl)
        assert r.lambda_hat == pytest.approx(1 / n, abs=1e-12)
        assert r.max_dev <= 1e-12 and r.in_range
        assert pl.exchangeability_defect <= 1e-12
        assert abs(pl.w_law().mean()) <= 1e-10
        assert second_moment_check(pl).residual <= 1e-12

    def test_identity_pair_flagged(self):
        w = np.array([-1.0, 1.0])
        r = regression_check(PairLaw.from_triples(w, w, [0.5, 0.5]))
        assert r.lambda_hat == 0 and not r.in_range

    def test_sign_flip_flagged(self):
        w = np.array([-1.0, 1.0])
        pl = PairLaw.from_triples(w, -w, [0.5, 0.5])
        r = regression_check(pl)
        assert r.lambda_hat == 2 and not r.in_range
        with pytest.raises(PreconditionError, match="outside"):
            pair_bound(pl)

    def test_degenerate_zero(self):
        pl = PairLaw.from_triples([0.0], [0.0], [1.0])
        with pytest.raises(PreconditionError):
            regression_check(pl)
        with pytest.raises(PreconditionError):
            pair_bound(pl)

    def test_nonlinear_regression_rejected(self):
        # W uniform on {-1, 0, 1}, W' moves to 0 only from +-1 with unequal weights
        pl = PairLaw.from_triples([-1, 1, 0, 0, 0], [0, 0, -1, 1, 0], [0.1, 0.2, 0.1, 0.2, 0.4])
        with pytest.raises(PreconditionError):
            pair_bound(pl)


class TestPairBound:
    def test_hundred_coins(self):
        c = pair_bound(coordinate_resample_pair(symmetric_sum(100)))
        assert c.components["variance_term"] == pytest.approx(0, abs=1e-12)
        assert c.components["third_moment_term"] == pytest.approx((2 * math.pi) ** -0.25 * 2 * 100**-0.25, abs=1e-12)
        assert c.exact.mid == pytest.approx(0.0398, abs=1e-4)
        assert c.margin == pytest.approx(0.36, abs=0.005)

    def test_independent_copy(self):
        v = np.array([-1.0, 1.0])
        w, wp = np.repeat(v, 2), np.tile(v, 2)
        c = pair_bound(PairLaw.from_triples(w, wp, np.full(4, 0.25), lam=1.0))
        assert c.components["lambda"] == 1.0
        assert c.components["variance_term"] == pytest.approx(0, abs=1e-15)
        assert c.components["third_moment_term"] == pytest.approx(2 * (2 * math.pi) ** -0.25)
        assert c.exact.mid == pytest.approx(kolmogorov_distance_to_normal(FiniteRv.two_point(-1, 1, 0.5)))
        assert c.passed

    def test_non_exchangeable_rejected(self):
        with pytest.raises(PreconditionError, match="exchangeable"):
            pair_bound(cyclic_coupling([-1.0, 0.0, 1.0]))

    @settings(max_examples=20)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 7), st.sampled_from([2, 3]))
    def test_certifies(self, seed, n, atoms):
        assert pair_bound(coordinate_resample_pair(centered(seed, n, atoms))).margin >= 0


class TestIdentities:
    pl = coordinate_resample_pair([FiniteRv.two_point(-0.5, 0.5, 0.5)] * 4)

    @pytest.mark.parametrize(
        "F",
        [
            stein_pair_function(lambda w: w**2),
            lambda w, wp: w - wp,
            lambda w, wp: np.sin(w) * np.cos(wp) - np.sin(wp) * np.cos(w),
        ],
    )
    def test_antisymmetry(self, F):
        assert antisymmetry_identity_check(self.pl, F) <= 1e-12

    def test_not_antisymmetric(self):
        with pytest.raises(PreconditionError):
            antisymmetry_identity_check(self.pl, lambda w, wp: w + wp)

    @pytest.mark.parametrize(
        "coef", [[0, 1], [1, -2, 3], [0, 0, 0, 1], [0.5, -1, 0.25, 2, -0.5, 0.1]]
    )
    def test_remainder_identity(self, coef):
        P = np.polynomial.Polynomial(coef)
        r = remainder_identity_check(self.pl, P, P.deriv(), P.deriv(2))
        assert r.residual <= 1e-12
        if len(coef) <= 3:
            assert abs(r.taylor_term) <= 1e-14

    @settings(max_examples=20)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.lists(st.floats(-2, 2), min_size=1, max_size=6))
    def test_remainder_identity_random(self, seed, n, coef):
        P = np.polynomial.Polynomial(coef)
        pl = coordinate_resample_pair(centered(seed, n, 3))
        assert remainder_identity_check(pl, P, P.deriv(), P.deriv(2)).residual <= 1e-10

    @settings(max_examples=20)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.floats(0.2, 3.0))
    def test_expansion_smooth(self, seed, n, a):
        pl = coordinate_resample_pair(centered(seed, n, 3))
        r = antisymmetric_expansion_check(pl, lambda w: np.sin(a * w), lambda w: a * np.cos(a * w))
        assert r.residual <= 1e-10

    def test_equal_distribution(self):
        assert equal_distribution_identity(self.pl, lambda w: w**3) <= 1e-12
        cyc = cyclic_coupling([-1.0, 0.5, 2.0])
        assert cyc.exchangeability_defect > 0.1
        assert equal_distribution_identity(cyc, lambda w: np.exp(w)) <= 1e-12

    def test_unequal_marginals(self):
        pl = PairLaw.from_triples([0.0, 1.0], [1.0, 1.0], [0.5, 0.5])
        with pytest.raises(PreconditionError):
            equal_distribution_identity(pl, lambda w: w)

    def test_cyclic_needs_three(self):
        with pytest.raises(DomainError):
            cyclic_coupling([0.0, 1.0])
