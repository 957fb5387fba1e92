"""Experiment runners behind the command line: certification sweeps and invariant suites.

Every runner returns a list of row dicts in grid order. Rows carrying a
``margin`` are certificates; a negative margin anywhere fails the run.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import concentration as conc
from . import exchangeable_pairs as ep
from . import generator_method as gm
from . import point_process as pp
from . import stein_normal as sn
from . import stein_poisson as sp
from .dist_core import (
    CONVOLUTION_BUDGET,
    FiniteRv,
    convolve_bernoulli,
    iid_sum,
    kolmogorov_distance_to_normal,
    poisson_pmf,
    std_normal_cdf,
    tv_distance,
)
from .errors import PreconditionError, ResourceError

SUITE_VERSION = "1.0.0"
EXPERIMENTS = ("verify", "poisson_sweep", "normal_demo", "pair_demo", "process_demo", "concentration_demo")
MAX_SEED = 2**64 - 1

DEFAULT_GRIDS = {
    "verify": {"n": (2, 3, 4, 5, 6, 7, 8), "p": (0.05, 0.1, 0.2), "lam": (0.5, 1.0, 2.0, 5.0, 10.0)},
    "poisson_sweep": {"n": (10, 50, 100, 200), "p": (0.01, 0.02, 0.05, 0.1), "lam": ()},
    "normal_demo": {"n": (25, 100, 400), "p": (), "lam": ()},
    "pair_demo": {"n": (2, 4, 8, 25, 100), "p": (), "lam": ()},
    "process_demo": {"n": (2, 4, 6), "p": (0.05, 0.1, 0.2), "lam": ()},
    "concentration_demo": {"n": (25, 100), "p": (), "lam": ()},
}
# which grids each experiment reads; those must be nonempty
REQUIRED_GRIDS = {
    "verify": ("n", "p", "lam"),
    "poisson_sweep": ("n", "p"),
    "normal_demo": ("n",),
    "pair_demo": ("n",),
    "process_demo": ("n", "p"),
    "concentration_demo": ("n",),
}

POISSON_SWEEP_COLUMNS = ("n", "p", "lambda", "exact_lo", "exact_hi", "stein_bound", "lecam_bound", "margin", "status")
COLUMNS = {
    "verify": ("suite", "check", "measured", "threshold", "relation", "passed"),
    "poisson_sweep": POISSON_SWEEP_COLUMNS,
    "normal_demo": ("n", "kolmogorov_exact", "scaled_distance", "pair_bound", "concentration_bound"),
    "pair_demo": ("n", "lambda", "regression_dev", "variance_term", "third_moment_term", "bound", "exact", "margin"),
    "process_demo": ("n", "p", "bound", "exact_lo", "exact_hi", "margin", "single_variable_bound"),
    "concentration_demo": ("n", "a", "b", "beta", "bound", "exact", "margin", "chain_ok"),
}

JSON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["experiment", "config", "rows", "suite_version"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "suite_version": {"type": "string"},
        "config": {
            "type": "object",
            "required": ["experiment", "n", "p", "lambda", "seed", "truncation_eps", "format", "jobs"],
            "properties": {
                "experiment": {"enum": list(EXPERIMENTS)},
                "n": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "p": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                "lambda": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "seed": {"type": "integer", "minimum": 0, "maximum": MAX_SEED},
                "truncation_eps": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-6},
                "format": {"enum": ["csv", "json"]},
                "jobs": {"type": "integer", "minimum": 1},
            },
        },
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": {"type": ["number", "string", "boolean", "integer", "null"]},
            },
        },
    },
}


@dataclass(frozen=True)
class SweepConfig:
    experiment: str
    n: tuple[int, ...] | None = None
    p: tuple[float, ...] | None = None
    lam: tuple[float, ...] | None = None
    seed: int = 0
    truncation_eps: float = 1e-12
    output_path: str | None = None
    format: str = "csv"
    jobs: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        grids = DEFAULT_GRIDS[self.experiment]
        for name in ("n", "p", "lam"):
            val = getattr(self, name)
            object.__setattr__(self, name, tuple(val) if val is not None else grids[name])

    def validate(self) -> "SweepConfig":
        if not (0 < self.truncation_eps <= 1e-6):
            raise PreconditionError(f"truncation_eps must lie in (0, 1e-6], got {self.truncation_eps}")
        if not (0 <= self.seed <= MAX_SEED):
            raise PreconditionError("seed must be an unsigned 64-bit integer")
        if self.format not in ("csv", "json"):
            raise PreconditionError(f"format must be csv or json, got {self.format!r}")
        if self.jobs < 1:
            raise PreconditionError("jobs must be at least 1")
        for name in REQUIRED_GRIDS[self.experiment]:
            if len(getattr(self, name)) == 0:
                raise PreconditionError(f"grid {name!r} is empty for {self.experiment}")
        if any(int(k) != k or k < 1 for k in self.n):
            raise PreconditionError("n values must be positive integers")
        if any(not 0 <= q <= 1 for q in self.p):
            raise PreconditionError("p values must lie in [0, 1]")
        if any(not l > 0 for l in self.lam):
            raise PreconditionError("lambda values must be positive")
        return self

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "n": [int(k) for k in self.n],
            "p": [float(q) for q in self.p],
            "lambda": [float(l) for l in self.lam],
            "seed": int(self.seed),
            "truncation_eps": float(self.truncation_eps),
            "format": self.format,
            "jobs": int(self.jobs),
        }


def default_config(experiment: str, **overrides) -> SweepConfig:
    base = SweepConfig(experiment)
    return replace(base, **overrides).validate() if overrides else base.validate()


def _pool_map(fn: Callable, cells: list, jobs: int) -> list:
    if jobs <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    # map preserves input order, so output bytes do not depend on scheduling
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))


def _poisson_cell(cell) -> dict:
    n, p, eps = cell
    row = {"n": n, "p": p, "lambda": n * p}
    if n * (n + 1) // 2 > CONVOLUTION_BUDGET:
        row.update(exact_lo=None, exact_hi=None, stein_bound=None, lecam_bound=None, margin=None,
                   status=f"skipped: convolution of {n} terms exceeds budget")
        return row
    cert = sp.independent_bound([p] * n, eps=eps)
    row.update(
        exact_lo=cert.exact.lo,
        exact_hi=cert.exact.hi,
        stein_bound=cert.bound,
        lecam_bound=sp.lecam_bound([p] * n) if p <= 0.25 else None,
        margin=cert.margin,
        status="ok",
    )
    return row


def run_poisson_sweep(cfg: SweepConfig) -> list[dict]:
    cells = [(int(n), float(p), cfg.truncation_eps) for n in cfg.n for p in cfg.p]
    return _pool_map(_poisson_cell, cells, cfg.jobs)


def symmetric_two_point(n: int) -> FiniteRv:
    s = 1.0 / math.sqrt(n)
    return FiniteRv.two_point(-s, s, 0.5)


def _normal_cell(n: int) -> dict:
    X = symmetric_two_point(n)
    d = kolmogorov_distance_to_normal(iid_sum(X, n))
    beta = n**1.5 * X.abs_moment(3)
    pair = ep.pair_bound(ep.coordinate_resample_pair([X] * n))
    s = 1.0 / math.sqrt(n)
    lemma = conc.concentration_lemma_check(X, n, -s, s) if n >= 2 else None
    return {
        "n": n,
        "kolmogorov_exact": d,
        "scaled_distance": d * math.sqrt(n) / beta,
        "pair_bound": pair.bound,
        "concentration_bound": lemma.bound if lemma else None,
    }


def run_normal_demo(cfg: SweepConfig) -> list[dict]:
    return _pool_map(_normal_cell, [int(n) for n in cfg.n], cfg.jobs)


def _pair_cell(n: int) -> dict:
    X = symmetric_two_point(n)
    pl = ep.coordinate_resample_pair([X] * n)
    reg = ep.regression_check(pl)
    cert = ep.pair_bound(pl)
    return {
        "n": n,
        "lambda": reg.lambda_hat,
        "regression_dev": reg.max_dev,
        "variance_term": cert.components["variance_term"],
        "third_moment_term": cert.components["third_moment_term"],
        "bound": cert.bound,
        "exact": cert.exact.hi,
        "margin": cert.margin,
    }


def run_pair_demo(cfg: SweepConfig) -> list[dict]:
    return _pool_map(_pair_cell, [int(n) for n in cfg.n], cfg.jobs)


def _process_cell(cell) -> dict:
    n, p = cell
    cert = pp.independent_process_bound([p] * n)
    return {
        "n": n,
        "p": p,
        "bound": cert.bound,
        "exact_lo": cert.exact.lo,
        "exact_hi": cert.exact.hi,
        "margin": cert.margin,
        "single_variable_bound": sp.independent_bound([p] * n).bound,
    }


def run_process_demo(cfg: SweepConfig) -> list[dict]:
    cells = [(int(n), float(p)) for n in cfg.n for p in cfg.p]
    return _pool_map(_process_cell, cells, cfg.jobs)


CONCENTRATION_WINDOWS = 5


def _concentration_cell(cell) -> list[dict]:
    n, seed = cell
    X = symmetric_two_point(n)
    s = 1.0 / math.sqrt(n)
    rng = np.random.default_rng(seed)
    windows = [(-s, s)]
    for _ in range(CONCENTRATION_WINDOWS - 1):
        a = float(rng.uniform(-2.0, 2.0))
        windows.append((a, a + float(rng.uniform(1e-3, 1.0))))
    rows = []
    for a, b in windows:
        cert = conc.concentration_lemma_check(X, n, a, b)
        rows.append({
            "n": n, "a": a, "b": b,
            "beta": cert.components["beta"],
            "bound": cert.bound,
            "exact": cert.exact.hi,
            "margin": cert.margin,
            "chain_ok": conc.lemma_chain_holds(cert),
        })
    return rows


def run_concentration_demo(cfg: SweepConfig) -> list[dict]:
    seeds = ep.split_seeds(cfg.seed, len(cfg.n))
    cells = [(int(n), s) for n, s in zip(cfg.n, seeds)]
    return [r for rows in _pool_map(_concentration_cell, cells, cfg.jobs) for r in rows]


# ---------------------------------------------------------------------------
# invariant suites


def _check(suite, name, measured, threshold, relation="<=") -> dict:
    measured = float(measured)
    ok = measured <= threshold if relation == "<=" else measured >= threshold
    return {"suite": suite, "check": name, "measured": measured, "threshold": float(threshold),
            "relation": relation, "passed": bool(ok and math.isfinite(measured))}


def random_centered_rv(rng: np.random.Generator, atoms: int, n: int) -> FiniteRv:
    """Random law on ``atoms`` points with mean 0 and variance ``1/n``."""
    while True:
        v = rng.normal(size=atoms)
        q = rng.dirichlet(np.ones(atoms))
        m = float(np.dot(v, q))
        var = float(np.dot((v - m) ** 2, q))
        if var > 1e-6 and np.min(np.abs(np.diff(np.sort(v)))) > 1e-6:
            break
    return FiniteRv.from_atoms((v - m) / math.sqrt(var * n), q)


def _suite_dist_core(cfg, rng) -> list[dict]:
    t = tv_distance(convolve_bernoulli([0.1]), poisson_pmf(0.1, cfg.truncation_eps))
    anchor = 0.1 * (1.0 - math.exp(-0.1))
    law = convolve_bernoulli(rng.uniform(0, 1, size=50))
    return [
        _check("dist_core", "bernoulli_poisson_anchor", max(abs(t.lo - anchor), abs(t.hi - anchor)), 1e-10),
        _check("dist_core", "convolution_mass", abs(law.weights.sum() - 1.0), 1e-12),
    ]


def _suite_stein_poisson(cfg, rng) -> list[dict]:
    rows = []
    worst_res = 0.0
    worst_ratio = 0.0
    for lam in cfg.lam:
        J = poisson_pmf(lam).last
        dmax, smax = sp.magic_factor_bounds(lam)
        for _ in range(200):
            h = rng.uniform(-1.0, 1.0, size=J + 1)
            sol = sp.solve_stein_poisson(h, lam)
            worst_res = max(worst_res, float(np.max(np.abs(sp.stein_residual(sol, h)))))
            worst_ratio = max(worst_ratio, sol.diff_norm / dmax, sol.sup_norm / smax)
    rows.append(_check("stein_poisson", "solver_residual", worst_res, 1e-12))
    rows.append(_check("stein_poisson", "magic_factor_ratio", worst_ratio, 1.0))
    margins, ratio8 = [], 0.0
    for n in (10, 50, 100, 200):
        for p in (0.01, 0.02, 0.05, 0.1):
            c = sp.independent_bound([p] * n, eps=cfg.truncation_eps)
            margins.append(c.margin)
            ratio8 = max(ratio8, abs(sp.lecam_bound([p] * n) - 8.0 * c.bound))
    rows.append(_check("stein_poisson", "independent_min_margin", min(margins), 0.0, ">="))
    rows.append(_check("stein_poisson", "lecam_factor_8", ratio8, 1e-15))
    return rows


def _suite_stein_normal(cfg, rng) -> list[dict]:
    grid = sn.GridFunction.zeros(-8.0, 8.0, 1e-3)
    ind = sn.solve_stein_normal(lambda x: (np.asarray(x) <= 0.0).astype(float), grid=grid,
                                breakpoints=(0.0,), mean_h=0.5)
    r1 = np.nanmax(np.abs(sn.finite_difference_residual(ind)))
    smooth = sn.solve_stein_normal(lambda x: np.tanh(np.asarray(x) + 0.3), grid=grid)
    r2 = np.nanmax(np.abs(sn.finite_difference_residual(smooth)))
    x = np.linspace(-3, 3, 61)
    closed = np.sqrt(2 * np.pi) * np.exp(x**2 / 2) * np.array(
        [std_normal_cdf(min(t, 0.0)) * (1 - std_normal_cdf(max(t, 0.0))) for t in x])
    r3 = float(np.max(np.abs(ind(x) - closed)))
    return [
        _check("stein_normal", "indicator_residual", r1, 1e-8),
        _check("stein_normal", "smooth_residual", r2, 1e-8),
        _check("stein_normal", "indicator_closed_form", r3, 1e-8),
    ]


def _suite_pairs(cfg, rng) -> list[dict]:
    dev = anti = rem = 0.0
    margin = math.inf
    for n in cfg.n:
        for atoms in (2, 3):
            rvs = [random_centered_rv(rng, atoms, n) for _ in range(int(n))]
            pl = ep.coordinate_resample_pair(rvs)
            r = ep.regression_check(pl)
            dev = max(dev, r.max_dev, abs(r.lambda_hat - 1.0 / n))
            for _ in range(3):
                c = rng.normal(size=3)
                F = lambda w, v, c=c: c[0] * (w - v) + c[1] * (np.sin(w) - np.sin(v)) + c[2] * (w**3 * v - v**3 * w)
                anti = max(anti, ep.antisymmetry_identity_check(pl, F))
            for k in range(1, 6):
                ri = ep.remainder_identity_check(pl, lambda w, k=k: w**k, lambda w, k=k: k * w ** (k - 1),
                                                 lambda w, k=k: k * (k - 1) * w ** max(k - 2, 0))
                rem = max(rem, ri.residual)
            margin = min(margin, ep.pair_bound(pl).margin)
    anchor = ep.pair_bound(ep.coordinate_resample_pair([symmetric_two_point(100)] * 100))
    return [
        _check("exchangeable_pairs", "regression_deviation", dev, 1e-12),
        _check("exchangeable_pairs", "antisymmetry", anti, 1e-12),
        _check("exchangeable_pairs", "remainder_identity", rem, 1e-10),
        _check("exchangeable_pairs", "pair_bound_min_margin", margin, 0.0, ">="),
        _check("exchangeable_pairs", "anchor_bound", abs(anchor.bound - 0.3995), 1e-3),
        _check("exchangeable_pairs", "anchor_exact", abs(anchor.exact.hi - 0.0398), 1e-4),
    ]


def _suite_concentration(cfg, rng) -> list[dict]:
    kinv = 0.0
    half = math.inf
    ident = 0.0
    violations = 0
    for trial in range(100):
        n = int(rng.integers(2, 40))
        X = random_centered_rv(rng, int(rng.integers(2, 6)), n)
        K = conc.k_function(X, n)
        kinv = max(kinv, abs(K.total_mass() - 1.0), abs(K.abs_first_moment() - K.beta / (2 * math.sqrt(n))))
        x = K.beta / math.sqrt(n)
        half = min(half, K.mass_between(-math.inf, x), K.mass_between(-x, x))
    for trial in range(10):
        n = int(rng.integers(2, 8))
        X = random_centered_rv(rng, int(rng.integers(2, 4)), n)
        ident = max(ident, conc.k_identity_check(X, n, np.sin).residual,
                    conc.k_identity_check(X, n, lambda w: w**3).residual)
    for trial in range(20):
        n = int(rng.integers(2, 30))
        X = random_centered_rv(rng, int(rng.integers(2, 5)), n)
        for _ in range(100):
            a = float(rng.uniform(-3, 3))
            b = a + float(rng.exponential(0.3)) + 1e-9
            c = conc.concentration_lemma_check(X, n, a, b)
            violations += (c.margin < 0) or not conc.lemma_chain_holds(c)
    scaled = [r[2] for r in conc.kolmogorov_scaling((25, 100, 400))]
    mid = float(np.mean(scaled))
    return [
        _check("concentration", "k_invariants", kinv, 1e-12),
        _check("concentration", "half_mass", half, 0.5 - 1e-12, ">="),
        _check("concentration", "k_identity", ident, 1e-10),
        _check("concentration", "lemma_violations", violations, 0),
        _check("concentration", "berry_esseen_band", max(abs(s / mid - 1.0) for s in scaled), 0.2),
    ]


def _suite_generator(cfg, rng) -> list[dict]:
    Q = gm.CtmcGenerator(np.arange(2), np.array([[-1.0, 1.0], [1.0, -1.0]]))
    g = gm.solve_poisson_equation(Q, [1.0, 0.0])
    ident = 0.0
    for n in (2, 3, 4):
        rvs = [random_centered_rv(rng, 3, n) for _ in range(n)]
        for k in range(1, 6):
            r = gm.coordinate_stein_identity(rvs, lambda w, k=k: w**k, lambda w, k=k: k * w ** (k - 1),
                                             lambda w, k=k: k * (k - 1) * w ** max(k - 2, 0))
            ident = max(ident, r.residual)
    solve_res = corr = stat = 0.0
    for lam in cfg.lam:
        N = int(math.ceil(lam + 10 * math.sqrt(lam))) + 10
        G = gm.immigration_death_generator(lam, N)
        h = rng.uniform(0, 1, size=N + 1)
        gg = gm.solve_poisson_equation(G, h)
        solve_res = max(solve_res, gm.poisson_equation_residual(G, gg, h))
        f = gm.stein_difference_from_potential(gm.recurrent_potential(G, h))
        pi = G.stationary()
        w = np.arange(1, N - 1)
        lhs = lam * f[w + 1] - w * f[w]
        corr = max(corr, float(np.max(np.abs(lhs - (h[w] - np.dot(pi, h))))))
        stat = max(stat, gm.stationarity_check(G, np.arange(N + 1.0) ** 2))
    return [
        _check("generator_method", "two_state_anchor", float(np.max(np.abs(g - [0.25, -0.25]))), 1e-14),
        _check("generator_method", "stein_identity", ident, 1e-10),
        _check("generator_method", "poisson_equation_residual", solve_res, 1e-10),
        _check("generator_method", "solution_correspondence", corr, 1e-9),
        _check("generator_method", "stationarity", stat, 1e-10),
    ]


def _suite_process(cfg, rng) -> list[dict]:
    ident = 0.0
    for n in range(1, 7):
        p = rng.uniform(0, 0.5, size=n)
        table = {k: float(rng.normal()) for k in np.ndindex(*(3,) * n)}
        ident = max(ident, pp.process_identity_check(p, table).residual)
    margin = math.inf
    for n in (2, 4, 6):
        for p in cfg.p:
            margin = min(margin, pp.independent_process_bound([p] * n).margin)
    one = pp.independent_process_bound([0.1])
    single = sp.independent_bound([0.1])
    return [
        _check("point_process", "identity", ident, 1e-12),
        _check("point_process", "independent_min_margin", margin, 0.0, ">="),
        _check("point_process", "single_site_reduction", abs(one.exact.mid - single.exact.mid), 1e-10),
    ]


SUITES = (
    _suite_dist_core,
    _suite_stein_poisson,
    _suite_stein_normal,
    _suite_pairs,
    _suite_concentration,
    _suite_generator,
    _suite_process,
)


def _suite_cell(cell) -> list[dict]:
    idx, cfg, seed = cell
    return SUITES[idx](cfg, np.random.default_rng(seed))


def run_verify(cfg: SweepConfig) -> list[dict]:
    seeds = ep.split_seeds(cfg.seed, len(SUITES))
    cells = [(i, cfg, s) for i, s in enumerate(seeds)]
    return [r for rows in _pool_map(_suite_cell, cells, cfg.jobs) for r in rows]


RUNNERS = {
    "verify": run_verify,
    "poisson_sweep": run_poisson_sweep,
    "normal_demo": run_normal_demo,
    "pair_demo": run_pair_demo,
    "process_demo": run_process_demo,
    "concentration_demo": run_concentration_demo,
}


def rows_failed(rows: list[dict]) -> list[dict]:
    """Rows that fail the run: a negative margin, or a failed invariant."""
    bad = []
    for r in rows:
        m = r.get("margin")
        if (m is not None and m < 0) or r.get("passed") is False or r.get("chain_ok") is False:
            bad.append(r)
    return bad


def run(cfg: SweepConfig) -> list[dict]:
    return RUNNERS[cfg.validate().experiment](cfg)


def plot_series(rows: list[dict]) -> str:
    """Whitespace-separated plot data for ``normal_demo``: ``n`` then one column per series."""
    cols = COLUMNS["normal_demo"]
    lines = ["# " + " ".join(cols)]
    for r in rows:
        lines.append(" ".join("nan" if r[c] is None else repr(r[c]) for c in cols))
    return "\n".join(lines) + "\n"
