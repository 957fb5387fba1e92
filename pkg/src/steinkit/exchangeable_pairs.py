"""Exchangeable pairs for normal approximation.

A :class:`PairLaw` is a finite joint law of ``(W, W')`` stored as support
triples over a common sorted list of values. Exact pair laws for coordinate resampling are
built from leave-one-out convolutions,

    P(W = u + a, W' = u + y) = (1/n) sum_i P(X_i = a) P(X_i = y) P(W^(i) = u),

so no configuration is ever enumerated and ``n = 100`` stays cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .dist_core import (
    CONVOLUTION_BUDGET,
    FiniteRv,
    convolve_finite,
    kolmogorov_distance_to_normal,
    BoundCertificate,
    DistanceInterval,
)
from .errors import DomainError, PreconditionError, ResourceError

EXACT_TOL = 1e-12
REGRESSION_GATE = 1e-9
ZERO_ATOM = 1e-12
SAMPLED_MERGE_TOL = 1e-9
SAMPLE_CHUNK = 1 << 18

Func2 = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class PairLaw:
    """Joint law of ``(W, W')`` as support triples over a common sorted value list.

    Entry ``k`` puts mass ``probs[k]`` on ``(values[rows[k]], values[cols[k]])``;
    index pairs are distinct. ``sample_size`` is ``None`` for exact laws; for
    empirical laws it is the number of draws, and expectations come with
    standard errors.
    """

    values: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    probs: np.ndarray
    lam: float | None = None
    sample_size: int | None = None
    exchangeability_defect: float = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        r = np.asarray(self.rows, dtype=np.int64)
        c = np.asarray(self.cols, dtype=np.int64)
        p = np.asarray(self.probs, dtype=float)
        if v.ndim != 1 or v.size == 0 or not (r.shape == c.shape == p.shape) or r.ndim != 1:
            raise ValueError("rows, cols and probs must be 1-D arrays of equal length")
        if np.any(np.diff(v) <= 0):
            raise ValueError("values must be strictly increasing")
        if r.size and (min(r.min(), c.min()) < 0 or max(r.max(), c.max()) >= v.size):
            raise ValueError("support indices out of range")
        if np.any(p < 0) or abs(math.fsum(p) - 1.0) > EXACT_TOL:
            raise ValueError("probs must form a probability vector")
        if self.lam is not None and not 0 < self.lam <= 1:
            raise DomainError("declared lambda must lie in (0, 1]")
        m = v.size
        key = r * m + c
        if np.unique(key).size != key.size:
            raise ValueError("support pairs must be distinct")
        for name, val in (("values", v), ("rows", r), ("cols", c), ("probs", p)):
            object.__setattr__(self, name, val)
        # mass of the mirrored pair, matched through sorted keys
        order = np.argsort(key)
        mirror = c * m + r
        pos = np.searchsorted(key[order], mirror)
        pos = np.clip(pos, 0, key.size - 1)
        found = key[order][pos] == mirror
        mirrored = np.where(found, p[order][pos], 0.0)
        object.__setattr__(self, "exchangeability_defect", float(np.max(np.abs(p - mirrored), initial=0.0)))

    @classmethod
    def from_triples(cls, w, w_prime, prob, lam=None, sample_size=None, tol=EXACT_TOL) -> "PairLaw":
        w = np.asarray(w, dtype=float).ravel()
        wp = np.asarray(w_prime, dtype=float).ravel()
        prob = np.asarray(prob, dtype=float).ravel()
        both = np.concatenate((w, wp))
        order = np.argsort(both, kind="stable")
        s = both[order]
        starts = np.concatenate(([True], np.diff(s) > tol))
        group = np.empty(both.size, dtype=np.int64)
        group[order] = np.cumsum(starts) - 1
        values = s[starts]
        m = values.size
        keys, inv = np.unique(group[: w.size] * m + group[w.size :], return_inverse=True)
        probs = np.bincount(inv.ravel(), weights=prob, minlength=keys.size)
        return cls(values, keys // m, keys % m, probs, lam, sample_size)

    @classmethod
    def from_matrix(cls, values, joint, lam=None) -> "PairLaw":
        joint = np.asarray(joint, dtype=float)
        r, c = np.nonzero(joint)
        return cls(np.asarray(values, dtype=float), r, c, joint[r, c], lam)

    def dense(self) -> np.ndarray:
        m = self.values.size
        out = np.zeros((m, m))
        out[self.rows, self.cols] = self.probs
        return out

    @property
    def exact(self) -> bool:
        return self.sample_size is None

    @property
    def marginal_w(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.probs, minlength=self.values.size)

    @property
    def marginal_w_prime(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.probs, minlength=self.values.size)

    def w_law(self) -> FiniteRv:
        m = self.marginal_w
        keep = m > 0
        return FiniteRv(self.values[keep], m[keep] / m[keep].sum())

    def evaluate(self, F: Func2) -> np.ndarray:
        """``F`` at every support pair."""
        w = self.values[self.rows]
        wp = self.values[self.cols]
        out = np.asarray(F(w, wp), dtype=float)
        if out.shape != w.shape:
            out = np.array([float(F(a, b)) for a, b in zip(w, wp)])
        return out

    def expect(self, F: Func2) -> float:
        return math.fsum(self.probs * self.evaluate(F))

    def expect_with_se(self, F: Func2) -> tuple[float, float]:
        """``E F(W, W')`` and its Monte Carlo standard error (0 for exact laws)."""
        vals = self.evaluate(F)
        mean = math.fsum(self.probs * vals)
        if self.exact:
            return mean, 0.0
        var = math.fsum(self.probs * (vals - mean) ** 2)
        return mean, math.sqrt(var / self.sample_size)

    def conditional(self, g: Func2) -> tuple[np.ndarray, np.ndarray]:
        """``(P(W = w), E[g(W, W') | W = w])`` over atoms with positive mass."""
        vals = self.evaluate(g)
        pw = self.marginal_w
        keep = pw > 0
        num = np.bincount(self.rows, weights=self.probs * vals, minlength=self.values.size)
        return pw[keep], num[keep] / pw[keep]


def _rv_key(x: FiniteRv) -> bytes:
    return x.values.tobytes() + x.probs.tobytes()


def _leave_one_out_laws(rvs: Sequence[FiniteRv], budget: int) -> list[FiniteRv]:
    """Law of ``sum_{j != i} X_j`` for each ``i``, via prefix and suffix sums."""
    n = len(rvs)
    zero = FiniteRv.point_mass(0.0)
    prefix = [zero]
    for x in rvs[:-1]:
        prefix.append(convolve_finite([prefix[-1], x], budget))
    suffix = [zero]
    for x in reversed(rvs[1:]):
        suffix.append(convolve_finite([suffix[-1], x], budget))
    suffix.reverse()
    cache: dict[bytes, FiniteRv] = {}
    out = []
    for i in range(n):
        # identical coordinates share a leave-one-out law
        key = _rv_key(rvs[i])
        if key not in cache:
            cache[key] = convolve_finite([prefix[i], suffix[i]], budget)
        out.append(cache[key])
    return out


def _exact_pair(rvs: Sequence[FiniteRv], budget: int) -> PairLaw:
    n = len(rvs)
    cost = 0
    loo = _leave_one_out_laws(rvs, budget)
    ws, wps, ps = [], [], []
    for x, rest in zip(rvs, loo):
        cost += rest.size * x.size * x.size
        if cost > budget:
            raise ResourceError(f"exact pair law needs more than {budget} atoms; use sampled mode")
        u = rest.values[:, None, None]
        a = x.values[None, :, None]
        y = x.values[None, None, :]
        pr = rest.probs[:, None, None] * x.probs[None, :, None] * x.probs[None, None, :] / n
        shape = (rest.size, x.size, x.size)
        ws.append(np.broadcast_to(u + a, shape).ravel())
        wps.append(np.broadcast_to(u + y, shape).ravel())
        ps.append(pr.ravel())
    return PairLaw.from_triples(np.concatenate(ws), np.concatenate(wps), np.concatenate(ps), lam=1.0 / n)


def _sampled_pair(rvs: Sequence[FiniteRv], seed: int, N: int) -> PairLaw:
    if N < 1:
        raise DomainError("sample size must be positive")
    n = len(rvs)
    rng = np.random.default_rng(seed)
    w_all, wp_all = [], []
    for start in range(0, N, SAMPLE_CHUNK):
        m = min(SAMPLE_CHUNK, N - start)
        idx = rng.integers(n, size=m)
        w = np.zeros(m)
        old = np.zeros(m)
        new = np.zeros(m)
        for i, x in enumerate(rvs):
            xi = rng.choice(x.values, size=m, p=x.probs)
            copy = rng.choice(x.values, size=m, p=x.probs)
            w += xi
            hit = idx == i
            old[hit] = xi[hit]
            new[hit] = copy[hit]
        w_all.append(w)
        wp_all.append(w - old + new)
    w = np.concatenate(w_all)
    wp = np.concatenate(wp_all)
    prob = np.full(N, 1.0 / N)
    return PairLaw.from_triples(w, wp, prob, lam=1.0 / n, sample_size=N, tol=SAMPLED_MERGE_TOL)


def coordinate_resample_pair(
    rvs: Sequence[FiniteRv],
    mode: str = "exact",
    seed: int | None = None,
    N: int | None = None,
    budget: int = CONVOLUTION_BUDGET,
) -> PairLaw:
    """Pair ``(W, W')`` where ``W'`` resamples one uniformly chosen coordinate.

    ``mode="sampled"`` draws ``N`` pairs from ``np.random.default_rng(seed)``.
    """
    rvs = list(rvs)
    if not rvs:
        raise PreconditionError("at least one coordinate is required")
    if mode == "exact":
        return _exact_pair(rvs, budget)
    if mode == "sampled":
        if seed is None or N is None:
            raise PreconditionError("sampled mode needs an explicit seed and sample size N")
        return _sampled_pair(rvs, seed, N)
    raise DomainError(f"unknown mode {mode!r}")


def split_seeds(seed: int, k: int) -> list[int]:
    """``k`` independent child seeds derived from ``seed`` by ``SeedSequence.spawn``."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


class RegressionResult(NamedTuple):
    lambda_hat: float
    max_dev: float
    in_range: bool


def regression_check(pl: PairLaw) -> RegressionResult:
    """Estimate ``lambda`` in ``E[W' | W] = (1 - lambda) W`` and the worst deviation.

    ``in_range`` flags ``lambda_hat`` outside ``(0, 1]``.
    """
    pw, cm = pl.conditional(lambda w, wp: wp)
    atoms = pl.values[pl.marginal_w > 0]
    nz = np.abs(atoms) > ZERO_ATOM
    if not np.any(nz) or pw[nz].sum() == 0:
        raise PreconditionError("W is concentrated at 0; the regression constant is undefined")
    ratio = cm[nz] / atoms[nz]
    lam = 1.0 - math.fsum(pw[nz] * ratio) / math.fsum(pw[nz])
    max_dev = float(np.max(np.abs(cm - (1.0 - lam) * atoms)))
    return RegressionResult(lam, max_dev, bool(0.0 < lam <= 1.0 + EXACT_TOL))


def _require_regression(pl: PairLaw) -> float:
    r = regression_check(pl)
    if r.max_dev > REGRESSION_GATE:
        raise PreconditionError(f"linear regression fails: max deviation {r.max_dev:.3g}")
    if not r.in_range:
        raise PreconditionError(f"regression constant {r.lambda_hat:.6g} lies outside (0, 1]")
    if pl.lam is not None and abs(r.lambda_hat - pl.lam) > REGRESSION_GATE:
        raise PreconditionError(f"declared lambda {pl.lam} differs from estimate {r.lambda_hat}")
    return r.lambda_hat


def _require_exchangeable(pl: PairLaw) -> None:
    if pl.exact and pl.exchangeability_defect > EXACT_TOL:
        raise PreconditionError(f"pair law is not exchangeable (defect {pl.exchangeability_defect:.3g})")


def pair_bound(pl: PairLaw) -> BoundCertificate:
    """Kolmogorov bound from an exchangeable pair with linear regression, certified.

    bound = 2 sqrt(E(1 - E^W[(W' - W)^2] / 2 lam)^2) + (2 pi)^(-1/4) sqrt(E|W - W'|^3 / lam)
    """
    _require_exchangeable(pl)
    lam = _require_regression(pl)
    pw, c2 = pl.conditional(lambda w, wp: (wp - w) ** 2)
    first = 2.0 * math.sqrt(math.fsum(pw * (1.0 - c2 / (2.0 * lam)) ** 2))
    abs3 = pl.expect(lambda w, wp: np.abs(w - wp) ** 3)
    second = (2.0 * math.pi) ** -0.25 * math.sqrt(abs3 / lam)
    exact = kolmogorov_distance_to_normal(pl.w_law())
    return BoundCertificate(
        theorem="exchangeable_pair_kolmogorov",
        bound=first + second,
        exact=DistanceInterval.point(exact, 1e-14),
        components={"lambda": lam, "variance_term": first, "third_moment_term": second},
    )


def antisymmetry_identity_check(pl: PairLaw, F: Func2) -> float:
    """``|E F(W, W')|`` for antisymmetric ``F``; zero under exchangeability."""
    _require_exchangeable(pl)
    vals = pl.evaluate(F)
    swapped = pl.evaluate(lambda w, wp: F(wp, w))
    if np.any(np.abs(vals + swapped) > EXACT_TOL * np.maximum(1.0, np.abs(vals))):
        raise PreconditionError("F is not antisymmetric on the support of the pair")
    return abs(math.fsum(pl.probs * vals))


def stein_pair_function(f: Callable) -> Func2:
    """``F(w, w') = (w - w')(f(w) + f(w'))``."""
    return lambda w, wp: (w - wp) * (f(w) + f(wp))


class RemainderIdentity(NamedTuple):
    stein_term: float
    variance_term: float
    taylor_term: float

    @property
    def residual(self) -> float:
        return abs(self.stein_term + self.variance_term + self.taylor_term)


def remainder_identity_check(pl: PairLaw, f, fprime, fsecond) -> RemainderIdentity:
    """Terms of the second-order expansion of ``E{f(W') - f(W)} = 0``.

    ``stein_term = lam E{-W f'(W) + f''(W)}``,
    ``variance_term = lam E{(E^W(W' - W)^2 / 2 lam - 1) f''(W)}`` and
    ``taylor_term = E{f(W') - f(W) - (W' - W) f'(W) - (W' - W)^2 f''(W) / 2}``.
    Their sum vanishes whenever the regression condition holds.
    """
    lam = _require_regression(pl)
    pw, c2 = pl.conditional(lambda w, wp: (wp - w) ** 2)
    atoms = pl.values[pl.marginal_w > 0]
    f1 = np.asarray(fprime(atoms), dtype=float)
    f2 = np.asarray(fsecond(atoms), dtype=float)
    stein = lam * math.fsum(pw * (-atoms * f1 + f2))
    var = lam * math.fsum(pw * (c2 / (2.0 * lam) - 1.0) * f2)
    taylor = pl.expect(
        lambda w, wp: f(wp) - f(w) - (wp - w) * fprime(w) - 0.5 * (wp - w) ** 2 * fsecond(w)
    )
    return RemainderIdentity(stein, var, taylor)


class ExpansionCheck(NamedTuple):
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def antisymmetric_expansion_check(pl: PairLaw, f, fprime) -> ExpansionCheck:
    """``E{W f(W) - f'(W)}`` against its expansion through the pair.

    rhs = E{f'(W)((W - W')^2 / 2 lam - 1)}
          + E{(W - W')(f(W) - f(W') - (W - W') f'(W))} / 2 lam
    """
    _require_exchangeable(pl)
    lam = _require_regression(pl)
    law = pl.w_law()
    lhs = law.expect(lambda w: w * f(w) - fprime(w))
    first = pl.expect(lambda w, wp: fprime(w) * ((w - wp) ** 2 / (2.0 * lam) - 1.0))
    second = pl.expect(lambda w, wp: (w - wp) * (f(w) - f(wp) - (w - wp) * fprime(w))) / (2.0 * lam)
    return ExpansionCheck(lhs, first + second)


def second_moment_check(pl: PairLaw) -> ExpansionCheck:
    """``E(W' - W)^2`` against ``2 lam E W^2``."""
    lam = _require_regression(pl)
    lhs = pl.expect(lambda w, wp: (wp - w) ** 2)
    return ExpansionCheck(lhs, 2.0 * lam * pl.w_law().moment(2))


def equal_distribution_identity(pl: PairLaw, f: Callable) -> float:
    """``|E{f(W') - f(W)}|``; needs only equal marginals, not exchangeability."""
    diff = float(np.max(np.abs(pl.marginal_w - pl.marginal_w_prime)))
    if pl.exact and diff > EXACT_TOL:
        raise PreconditionError(f"marginals of W and W' differ by {diff:.3g}")
    return abs(pl.expect(lambda w, wp: f(wp) - f(w)))


def cyclic_coupling(values: Sequence[float]) -> PairLaw:
    """``W`` uniform on three atoms and ``W'`` the next atom cyclically.

    Equal marginals without exchangeability.
    """
    v = np.asarray(values, dtype=float)
    if v.size != 3:
        raise DomainError("the cyclic coupling needs exactly three atoms")
    return PairLaw.from_triples(v, np.roll(v, -1), np.full(3, 1.0 / 3.0))
