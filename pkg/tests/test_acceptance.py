"""Acceptance criteria, one test per criterion.

Each test tags itself with ``record_property("criterion", ...)`` and the
conftest prints a PASS/FAIL line per criterion at the end of the run.
"""

import math
import time

import numpy as np
import pytest

from steinkit import concentration as conc
from steinkit import exchangeable_pairs as ep
from steinkit import generator_method as gm
from steinkit import point_process as pp
from steinkit import stein_normal as sn
from steinkit import stein_poisson as sp
from steinkit.cli import main
from steinkit.dist_core import FiniteRv, convolve_bernoulli, poisson_pmf
from steinkit.experiments import random_centered_rv

N_GRID = (10, 50, 100, 200)
P_GRID = (0.01, 0.02, 0.05, 0.1)
LAMBDAS = (0.5, 1.0, 2.0, 5.0, 10.0)


@pytest.fixture
def criterion(record_property):
    def tag(cid, title):
        record_property("criterion", (cid, title))
    return tag


def window(lam):
    return int(lam + 12 * math.sqrt(lam) + 40)


def centered_coords(rng, n, atoms):
    raw = []
    for _ in range(n):
        v = rng.normal(size=atoms)
        q = rng.dirichlet(np.ones(atoms))
        raw.append((v - np.dot(q, v), q))
    s = math.sqrt(sum(np.dot(q, v * v) for v, q in raw))
    return [FiniteRv.from_atoms(v / s, q) for v, q in raw]


def test_poisson_certification(criterion):
    criterion(1, "Poisson independent-sum bound certified on the (n, p) grid, anchor p = 0.1, under 10 s")
    start = time.perf_counter()
    for n in N_GRID:
        for p in P_GRID:
            c = sp.independent_bound([p] * n)
            lam = n * p
            assert c.bound == pytest.approx(min(1, 1 / lam) * n * p * p, rel=1e-14)
            assert c.margin > 0, (n, p, c)
    elapsed = time.perf_counter() - start
    anchor = sp.independent_bound([0.1])
    assert abs(anchor.exact.lo - 0.0095163) <= 1e-6 and abs(anchor.exact.hi - 0.0095163) <= 1e-6
    assert anchor.bound == pytest.approx(0.01, abs=1e-16)
    assert elapsed < 10.0


def test_factor_eight(criterion):
    criterion(2, "Stein bound is exactly one eighth of Le Cam's wherever max p <= 1/4")
    for n in N_GRID:
        for p in P_GRID:
            assert sp.independent_bound([p] * n).bound == sp.lecam_bound([p] * n) / 8


def test_stein_equation_residuals(criterion):
    criterion(3, "Poisson solver residual <= 1e-12 (500 h per lambda); normal solver residual <= 1e-8; under 30 s")
    start = time.perf_counter()
    rng = np.random.default_rng(20240601)
    for lam in LAMBDAS:
        J = window(lam)
        worst = 0.0
        for _ in range(500):
            h = rng.uniform(-1, 1, J + 1)
            worst = max(worst, float(np.max(np.abs(sp.stein_residual(sp.solve_stein_poisson(h, lam), h)))))
        assert worst <= 1e-12, (lam, worst)
    grid = sn.GridFunction.zeros(-8.0, 8.0, 1e-3)
    # kinks of Lipschitz h are listed with the jumps: the stencil straddling one loses its order
    cases = [
        (lambda x: (x <= 0).astype(float), (0.0,)),
        (lambda x: (x <= 1.3).astype(float), (1.3,)),
        (lambda x: (x <= -2.1).astype(float), (-2.1,)),
        (lambda x: np.tanh(x), ()),
        (lambda x: np.abs(np.sin(x)), tuple(k * math.pi for k in range(-2, 3))),
        (lambda x: np.clip(x, -1.0, 1.0), (-1.0, 1.0)),
    ]
    for h, jumps in cases:
        sol = sn.solve_stein_normal(h, grid=grid, breakpoints=jumps)
        res = sn.finite_difference_residual(sol, exclude_cells=2)[3:-3]
        assert np.nanmax(np.abs(res)) <= 1e-8
    assert time.perf_counter() - start < 30.0


def test_magic_factors(criterion):
    criterion(4, "solution norms of 1000 random bounded h never exceed the magic factors")
    rng = np.random.default_rng(7)
    for lam in LAMBDAS:
        d1, d0 = sp.magic_factor_bounds(lam)
        J = window(lam)
        bulk = int(lam + 8 * math.sqrt(lam) + 10)
        worst1 = worst0 = 0.0
        for _ in range(1000):
            h = rng.uniform(-1, 1, J + 1)
            v = sp.solve_stein_poisson(h, lam).values[: bulk + 1]
            worst1 = max(worst1, float(np.max(np.abs(np.diff(v)))))
            worst0 = max(worst0, float(np.max(np.abs(v))))
        assert worst1 <= d1 and worst0 <= d0, (lam, worst1, worst0)


def antisymmetric_family(rng, k):
    out = []
    for _ in range(k):
        a, b, c = rng.normal(size=3)
        out.append(lambda w, wp, a=a, b=b, c=c: (a * (w - wp) + b * (np.sin(c * w) - np.sin(c * wp))
                                                 + (w**3 - wp**3) * np.exp(-0.1 * (w * w + wp * wp))))
    return out


def test_exchangeable_pairs(criterion):
    criterion(5, "exchangeable pairs: regression, antisymmetry, remainder identity, certified bound and n = 100 anchor")
    rng = np.random.default_rng(5)
    family = antisymmetric_family(rng, 20)
    for n in range(2, 9):
        for atoms in (2, 3):
            pl = ep.coordinate_resample_pair(centered_coords(rng, n, atoms))
            r = ep.regression_check(pl)
            assert abs(r.lambda_hat - 1 / n) <= 1e-12 and r.max_dev <= 1e-12
            for F in family:
                assert ep.antisymmetry_identity_check(pl, F) <= 1e-12
            for deg in range(0, 6):
                P = np.polynomial.Polynomial(rng.normal(size=deg + 1))
                assert ep.remainder_identity_check(pl, P, P.deriv(), P.deriv(2)).residual <= 1e-10
            assert ep.pair_bound(pl).margin >= 0
    X = FiniteRv.two_point(-0.1, 0.1, 0.5)
    c = ep.pair_bound(ep.coordinate_resample_pair([X] * 100))
    closed_form = (2 * math.pi) ** -0.25 * 2 * 100**-0.25
    assert abs(c.bound - closed_form) <= 1e-3 and abs(c.bound - 0.3995) <= 1e-3
    assert abs(c.exact.mid - 0.0398) <= 1e-4
    assert c.margin >= 0


def test_concentration(criterion):
    criterion(6, "K-function invariants, half-mass, identity and lemma over 100 windows x 20 populations, under 60 s")
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    for _ in range(100):
        n = int(rng.integers(1, 60))
        K = conc.k_function(random_centered_rv(rng, int(rng.integers(2, 6)), n), n)
        assert np.all(K.plateau_values >= 0)
        assert abs(K.total_mass() - 1) <= 1e-12
        assert abs(K.abs_first_moment() - K.beta / (2 * math.sqrt(n))) <= 1e-12
        x = K.beta / math.sqrt(n)
        assert K.mass_between(-math.inf, x) >= 0.5 - 1e-12
    for n in range(2, 11):
        X = random_centered_rv(rng, 3 if n <= 8 else 2, n)
        P = np.polynomial.Polynomial(rng.normal(size=5))
        assert conc.k_identity_check(X, n, P).residual <= 1e-10
        assert conc.k_identity_check(X, n, np.sin, np.cos, method="quad").residual <= 1e-10
    violations = 0
    for _ in range(20):
        n = int(rng.integers(2, 40))
        X = random_centered_rv(rng, int(rng.integers(2, 5)), n)
        for _ in range(100):
            a = float(rng.uniform(-3, 3))
            b = a + float(rng.exponential(0.5)) + 1e-9
            c = conc.concentration_lemma_check(X, n, a, b)
            violations += (c.margin < 0) or not conc.lemma_chain_holds(c)
    assert violations == 0
    assert time.perf_counter() - start < 60.0


def test_generator_method(criterion):
    criterion(7, "generator method: expansion and Stein identities, Poisson-equation solves, correspondence, stationarity")
    rng = np.random.default_rng(8)
    for _ in range(20):
        n = int(rng.integers(1, 6))
        rvs = centered_coords(rng, n, int(rng.integers(2, 4)))
        spec = gm.CoordinateChainSpec(tuple(rvs))
        P = np.polynomial.Polynomial(rng.normal(size=6))
        z = [X.values[rng.integers(X.size)] for X in rvs]
        assert gm.projection_expansion(spec, P, P.deriv(), P.deriv(2), z).residual <= 1e-10
        assert gm.coordinate_stein_identity(rvs, P, P.deriv(), P.deriv(2)).residual <= 1e-10
    two = gm.CtmcGenerator(np.array([0, 1]), np.array([[-1.0, 1.0], [1.0, -1.0]]))
    g = gm.solve_poisson_equation(two, [1.0, 0.0])
    assert np.max(np.abs(g - [0.25, -0.25])) <= 1e-15
    for lam in LAMBDAS:
        N = math.ceil(lam + 10 * math.sqrt(lam)) + 20
        Q = gm.immigration_death_generator(lam, N)
        pi = Q.stationary()
        h = rng.uniform(-1, 1, N + 1)
        g = gm.solve_poisson_equation(Q, h)
        assert gm.poisson_equation_residual(Q, g, h) <= 1e-10
        f = gm.stein_difference_from_potential(gm.recurrent_potential(Q, h))
        w = np.arange(1, N)
        assert np.max(np.abs(lam * f[w + 1] - w * f[w] - (h[w] - pi @ h))) <= 1e-9
        assert gm.stationarity_check(Q, rng.normal(size=N + 1)) <= 1e-10
        assert gm.stationarity_check(Q, np.arange(N + 1.0) ** 2) <= 1e-10


def test_point_process(criterion):
    criterion(8, "point process identity, certified process bound grid, single-site reduction")
    rng = np.random.default_rng(9)
    for n in range(1, 7):
        for _ in range(5):
            p = rng.uniform(0, 1, n)
            table = {}

            def f(xi, table=table):
                key = tuple(int(v) for v in xi)
                if key not in table:
                    table[key] = float(rng.normal())
                return table[key]

            assert pp.process_identity_check(p, f).residual <= 1e-12
    for n in (2, 4, 6):
        for p in (0.05, 0.1, 0.2):
            c = pp.independent_process_bound([p] * n)
            assert c.bound == pytest.approx(n * p * p) and c.margin >= 0
    for p in (0.05, 0.1, 0.3, 0.8):
        proc = pp.independent_process_bound([p]).exact.mid
        count = sp.independent_bound([p]).exact.mid
        assert abs(proc - count) <= 1e-10
        capped = pp.process_tv(pp.bernoulli_process_law([p]), pp.product_poisson_law([p]))
        assert abs(capped.mid - count) <= 1e-10


def test_berry_esseen_scaling(criterion):
    criterion(9, "Kolmogorov distance times sqrt(n)/beta stable within 20% across n = 25, 100, 400")
    scaled = [r[2] for r in conc.kolmogorov_scaling((25, 100, 400))]
    centre = sum(scaled) / len(scaled)
    assert all(abs(s - centre) <= 0.2 * centre for s in scaled)


def test_cli_determinism_and_alarm(criterion, tmp_path, monkeypatch, capsys):
    criterion(10, "verify exits 0, a negative margin forces a nonzero exit, identical configs give identical bytes")
    out = tmp_path / "verify.csv"
    assert main(["verify", "--out", str(out)]) == 0
    assert all(line.endswith(",true") for line in out.read_text().splitlines()[1:])
    again = tmp_path / "verify2.csv"
    assert main(["verify", "--out", str(again), "--jobs", "2"]) == 0
    assert out.read_bytes() == again.read_bytes()
    for cmd in (["poisson-sweep"], ["process-demo"], ["concentration-demo", "--seed", "11"]):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(cmd + ["--out", str(a)]) == 0
        assert main(cmd + ["--out", str(b), "--format", "csv"]) == 0
        assert a.read_bytes() == b.read_bytes()
    from steinkit import experiments

    monkeypatch.setitem(experiments.RUNNERS, "poisson_sweep",
                        lambda cfg: [{"n": 1, "p": 0.5, "stein_bound": 0.0, "margin": -1e-9, "status": "ok"}])
    assert main(["poisson-sweep"]) != 0
    capsys.readouterr()
