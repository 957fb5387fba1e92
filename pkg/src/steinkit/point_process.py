"""Poisson process approximation on the finite ground space ``U = {0..n-1}``.

A configuration is a count vector ``xi`` with one entry per site. Laws are
stored as arrays: ``counts`` of shape ``(S, n)`` and ``probs`` of shape ``(S,)``,
enumerating the box ``prod_u {0..caps[u]}`` (or a subset of it), with the mass
outside the box in ``tail_mass``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import spsolve
from scipy.special import gammaln

from .dist_core import BoundCertificate, DistanceInterval, _interval, poisson_tail
from .errors import DomainError, PreconditionError, ResourceError
from .stein_poisson import MAX_ENUMERATION_SITES, BernoulliEnsemble, _check_probs, bit_table

PROCESS_TAIL_TOL = 1e-10
STATE_BUDGET = 10**6
IDENTITY_MAX_SITES = 12


@dataclass(frozen=True, eq=False)
class ProcessLaw:
    counts: np.ndarray
    probs: np.ndarray
    caps: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        p = np.asarray(self.probs, dtype=float)
        caps = np.asarray(self.caps, dtype=np.int64)
        if c.ndim != 2 or p.shape != (c.shape[0],) or caps.shape != (c.shape[1],):
            raise ValueError("counts must be (S, n) with one probability per row and one cap per site")
        if np.any(c < 0) or np.any(c > caps[None, :]):
            raise ValueError("counts must lie in the box [0, caps]")
        if np.any(p < 0) or not 0 <= self.tail_mass <= 1:
            raise ValueError("probabilities must be nonnegative")
        if abs(math.fsum(p) + self.tail_mass - 1.0) > 1e-12:
            raise ValueError("probabilities plus tail mass must sum to 1")
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "caps", caps)

    @property
    def site_count(self) -> int:
        return self.counts.shape[1]

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(v) for v in row): float(q) for row, q in zip(self.counts, self.probs)}


def bernoulli_process_law(p: Sequence[float]) -> ProcessLaw:
    """Law of ``sum_i X_i delta_i`` for independent ``X_i ~ Be(p_i)``."""
    p = _check_probs(p)
    bits = bit_table(p.size)
    probs = np.prod(np.where(bits == 1, p[None, :], 1.0 - p[None, :]), axis=1)
    return ProcessLaw(bits, probs, np.ones(p.size, dtype=np.int64), 0.0)


def ensemble_process_law(e: BernoulliEnsemble) -> ProcessLaw:
    """Law of ``sum_i X_i delta_i`` for a dependent ensemble with exact joint law."""
    if e.joint is None:
        raise PreconditionError("the exact joint law is required")
    return ProcessLaw(bit_table(e.n), e.joint, np.ones(e.n, dtype=np.int64), 0.0)


def _box(caps: np.ndarray) -> np.ndarray:
    """All count vectors in the box, site 0 varying fastest."""
    size = int(np.prod(caps + 1))
    idx = np.arange(size)
    out = np.empty((size, caps.size), dtype=np.int64)
    for u, c in enumerate(caps):
        out[:, u] = idx % (c + 1)
        idx = idx // (c + 1)
    return out


def _choose_cap(lam: np.ndarray) -> int:
    share = PROCESS_TAIL_TOL / max(1, lam.size)
    cap = 0
    while max((poisson_tail(cap, float(l)) for l in lam if l > 0), default=0.0) > share:
        cap += 1
    return cap


def product_poisson_law(lam: Sequence[float], cap: int | None = None) -> ProcessLaw:
    """Independent ``Po(lam_u)`` counts truncated at ``cap`` per site.

    ``cap`` defaults to the smallest value giving aggregate tail at most 1e-10;
    a supplied cap must meet the same tolerance.
    """
    lam = np.asarray(lam, dtype=float).ravel()
    if lam.size == 0 or np.any(~np.isfinite(lam)) or np.any(lam < 0):
        raise DomainError("intensities must be a nonempty vector of nonnegative reals")
    if cap is None:
        cap = _choose_cap(lam)
    if cap < 0:
        raise DomainError("cap must be nonnegative")
    caps = np.where(lam > 0, cap, 0).astype(np.int64)
    site_tails = np.array([poisson_tail(int(c), float(l)) if l > 0 else 0.0 for c, l in zip(caps, lam)])
    tail = float(-np.expm1(np.sum(np.log1p(-site_tails))))
    if tail > PROCESS_TAIL_TOL:
        raise PreconditionError(f"aggregate tail {tail:.3g} exceeds {PROCESS_TAIL_TOL} at cap {cap}")
    states = int(np.prod(caps + 1))
    if states > STATE_BUDGET:
        raise ResourceError(f"{states} configurations exceed the state budget {STATE_BUDGET}")
    counts = _box(caps)
    logp = np.zeros(states)
    for u, l in enumerate(lam):
        if l > 0:
            k = counts[:, u]
            logp += k * math.log(l) - l - np.array([math.lgamma(v + 1.0) for v in range(cap + 1)])[k]
    probs = np.exp(logp)
    # rescale so stored mass plus tail is exactly one
    probs *= (1.0 - tail) / math.fsum(probs)
    return ProcessLaw(counts, probs, caps, tail)


def _keys(counts: np.ndarray, base: np.ndarray) -> np.ndarray:
    mult = np.cumprod(np.concatenate(([1], base[:-1] + 1)))
    return counts @ mult


def _same_law(P: ProcessLaw, Q: ProcessLaw) -> bool:
    """Identical boxes, masses and tail: the same truncated specification."""
    return (
        P.tail_mass == Q.tail_mass
        and np.array_equal(P.caps, Q.caps)
        and np.array_equal(P.counts, Q.counts)
        and np.array_equal(P.probs, Q.probs)
    )


def process_tv(P: ProcessLaw, Q: ProcessLaw) -> DistanceInterval:
    """Total variation over the union of enumerated configurations, with tail bracketing."""
    if P.site_count != Q.site_count:
        raise DomainError("laws live on different ground spaces")
    if P is Q or _same_law(P, Q):
        return DistanceInterval(0.0, 0.0)
    base = np.maximum(P.caps, Q.caps)
    kp = _keys(P.counts, base)
    kq = _keys(Q.counts, base)
    keys, inv = np.unique(np.concatenate((kp, kq)), return_inverse=True)
    a = np.bincount(inv[: kp.size], weights=P.probs, minlength=keys.size)
    b = np.bincount(inv[kp.size :], weights=Q.probs, minlength=keys.size)
    in_p_box = np.all(Q.counts <= P.caps[None, :], axis=1)
    in_q_box = np.all(P.counts <= Q.caps[None, :], axis=1)
    cross_p = math.fsum(Q.probs[~in_p_box])
    cross_q = math.fsum(P.probs[~in_q_box])
    return _interval(math.fsum(np.abs(a - b)), P.tail_mass, Q.tail_mass, cross_p, cross_q)


def poisson_process_logpmf(counts: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Untruncated ``PP(lam)`` log-probabilities of count vectors."""
    counts = np.asarray(counts, dtype=float)
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logl = np.where(lam > 0, np.log(np.where(lam > 0, lam, 1.0)), -np.inf)
        terms = np.where(counts > 0, counts * logl[None, :], 0.0)
    return terms.sum(axis=1) - lam.sum() - gammaln(counts + 1.0).sum(axis=1)


def zero_one_tv(P: ProcessLaw, lam: Sequence[float]) -> DistanceInterval:
    """Exact TV between a law on ``{0,1}^n`` and untruncated ``PP(lam)``.

    Since ``P`` lives on ``{0,1}^n``, the positive part of ``P - Q`` does too,
    so ``d_TV = sum_{xi in {0,1}^n} (P(xi) - Q(xi))_+`` with no truncation.
    """
    if P.tail_mass != 0 or np.any(P.caps > 1):
        raise PreconditionError("P must be an exact law on {0,1}^n")
    lam = np.asarray(lam, dtype=float)
    q = np.exp(poisson_process_logpmf(P.counts, lam))
    val = math.fsum(np.clip(P.probs - q, 0.0, None))
    # no configuration where P exceeds Q means the positive part is exactly empty
    pad = 1e-15 * P.counts.shape[0] if val > 0 else 0.0
    return DistanceInterval.point(val, pad)


def _lookup(f) -> Callable:
    if isinstance(f, Mapping):
        def g(xi):
            try:
                return float(f[tuple(int(v) for v in xi)])
            except KeyError as exc:
                raise DomainError(f"f is not defined at {tuple(xi)}") from exc
        return g
    return lambda xi: float(f(np.asarray(xi, dtype=np.int64)))


def spatial_generator_apply(f, xi: Sequence[int], lam: Sequence[float]) -> float:
    """``sum_u lam_u {f(xi + d_u) - f(xi)} + sum_u xi_u {f(xi - d_u) - f(xi)}``.

    ``f`` is a callable on count vectors or a mapping from count tuples.
    """
    g = _lookup(f)
    xi = np.asarray(xi, dtype=np.int64)
    lam = np.asarray(lam, dtype=float)
    if xi.shape != lam.shape or np.any(xi < 0):
        raise DomainError("xi must be a nonnegative count vector with one entry per site")
    fx = g(xi)
    total = 0.0
    for u in range(xi.size):
        e = np.zeros_like(xi)
        e[u] = 1
        if lam[u] != 0:
            total += lam[u] * (g(xi + e) - fx)
        if xi[u] != 0:
            total += xi[u] * (g(xi - e) - fx)
    return total


@dataclass(frozen=True, eq=False)
class ProcessSteinSolution:
    """Solution of ``L f = h - pi h`` on the capped box, ``pi f = 0``."""

    counts: np.ndarray
    values: np.ndarray
    pi: np.ndarray
    mean_h: float
    residual: np.ndarray
    interior: np.ndarray = field(repr=False)

    @property
    def interior_residual(self) -> float:
        return float(np.max(np.abs(self.residual[self.interior]), initial=0.0))

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(v) for v in row): float(x) for row, x in zip(self.counts, self.values)}


def spatial_generator_matrix(lam: np.ndarray, caps: np.ndarray) -> tuple[np.ndarray, csr_matrix]:
    """Sparse generator on the box; births at ``lam_u`` stop at the cap (reflection)."""
    counts = _box(caps)
    S = counts.shape[0]
    mult = np.cumprod(np.concatenate(([1], caps[:-1] + 1)))
    rows, cols, vals = [], [], []
    diag = np.zeros(S)
    idx = np.arange(S)
    for u in range(caps.size):
        up = counts[:, u] < caps[u]
        if lam[u] > 0:
            rows.append(idx[up]); cols.append(idx[up] + mult[u]); vals.append(np.full(up.sum(), lam[u]))
            diag[up] -= lam[u]
        down = counts[:, u] > 0
        rows.append(idx[down]); cols.append(idx[down] - mult[u]); vals.append(counts[down, u].astype(float))
        diag[down] -= counts[down, u]
    rows.append(idx); cols.append(idx); vals.append(diag)
    Q = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(S, S)).tocsr()
    return counts, Q


def solve_process_stein(h, lam: Sequence[float], cap: int) -> ProcessSteinSolution:
    """Stein solution for the spatial immigration-death generator on ``{0..cap}^n``.

    The capped chain factorizes into independent single-site chains, so its
    stationary law is the product of renormalized truncated Poisson laws.
    The residual is reported everywhere; ``interior`` marks states whose
    upward neighbours all lie below the cap.
    """
    lam = np.asarray(lam, dtype=float).ravel()
    if lam.size == 0 or np.any(lam < 0):
        raise DomainError("intensities must be nonnegative")
    caps = np.where(lam > 0, int(cap), 0).astype(np.int64)
    states = int(np.prod(caps + 1))
    if states > STATE_BUDGET:
        raise ResourceError(f"{states} configurations exceed the state budget {STATE_BUDGET}")
    counts, Q = spatial_generator_matrix(lam, caps)
    pi = np.ones(states)
    for u, l in enumerate(lam):
        if l > 0:
            k = np.arange(caps[u] + 1)
            logw = k * math.log(l) - np.array([math.lgamma(v + 1.0) for v in k])
            w = np.exp(logw - logw.max())
            pi *= (w / w.sum())[counts[:, u]]
    g = _lookup(h)
    hv = np.array([g(row) for row in counts]) if not isinstance(h, np.ndarray) else np.asarray(h, dtype=float)
    mean_h = math.fsum(pi * hv)
    rhs = hv - mean_h
    k = int(np.argmax(pi))
    A = Q.tolil()
    A[k, :] = pi
    b = rhs.copy()
    b[k] = 0.0
    f = spsolve(A.tocsr(), b)
    residual = Q @ f - rhs
    interior = np.all((counts < caps[None, :]) | (lam[None, :] == 0), axis=1)
    return ProcessSteinSolution(counts, f, pi, mean_h, residual, interior)


class ProcessIdentity(NamedTuple):
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def process_identity_check(p: Sequence[float], f) -> ProcessIdentity:
    """``E L f(Xi)`` directly against the sum of second differences.

    rhs = sum_i p_i E{f(Xi_i + d_i + X_i d_i) - f(Xi_i + X_i d_i) - f(Xi_i + d_i) + f(Xi_i)}
    with ``Xi_i = Xi - X_i d_i``; both sides by enumeration over ``{0,1}^n``.
    """
    p = _check_probs(p)
    if p.size > IDENTITY_MAX_SITES:
        raise ResourceError(f"n = {p.size} exceeds {IDENTITY_MAX_SITES} sites")
    g = _lookup(f)
    law = bernoulli_process_law(p)
    lhs = math.fsum(q * spatial_generator_apply(g, xi, p) for xi, q in zip(law.counts, law.probs) if q > 0)
    terms = []
    for xi, q in zip(law.counts, law.probs):
        if q == 0:
            continue
        for i in range(p.size):
            if p[i] == 0:
                continue
            e = np.zeros_like(xi)
            e[i] = 1
            rest = xi.copy()
            rest[i] = 0
            terms.append(q * p[i] * (g(rest + e + xi[i] * e) - g(xi) - g(rest + e) + g(rest)))
    return ProcessIdentity(lhs, math.fsum(terms))


def independent_process_bound(p: Sequence[float]) -> BoundCertificate:
    """``d_TV(L(Xi), PP(lam)) <= sum p_i^2`` (``2 sum p_i^2`` on the ``|E h - E h|`` scale)."""
    p = _check_probs(p)
    if p.size == 0:
        raise PreconditionError("empty ground space")
    if p.size > MAX_ENUMERATION_SITES:
        raise ResourceError(f"certification needs n <= {MAX_ENUMERATION_SITES}")
    sq = math.fsum(p * p)
    exact = zero_one_tv(bernoulli_process_law(p), p)
    return BoundCertificate(
        theorem="process_independent",
        bound=sq,
        exact=exact,
        components={"sum_p2": sq, "bound_expectation": 2.0 * sq, "second_difference_sup": 2.0},
    )


def dependent_process_bound(e: BernoulliEnsemble) -> BoundCertificate:
    """Process bound for locally dependent indicators with ``c_0 = c_1 = 2``.

    Stated on the ``|E h(Xi) - E h(Pi)|`` scale for ``||h|| <= 1``, which is
    twice total variation; ``exact`` is ``2 d_TV``. The TV-scale values are
    kept in ``components``.
    """
    if e.joint is None or e.neighborhoods is None:
        raise PreconditionError("dependent_process_bound needs both the joint law and neighborhoods")
    if e.n > IDENTITY_MAX_SITES:
        raise ResourceError(f"n = {e.n} exceeds {IDENTITY_MAX_SITES} sites")
    bits = bit_table(e.n)
    keys = np.arange(2**e.n)
    joint = e.joint
    first = 0.0
    cond = 0.0
    for i in range(e.n):
        others = [j for j in e.neighborhoods[i] if j != i]
        x = bits[:, i]
        y = bits[:, others].sum(axis=1) if others else np.zeros_like(x)
        first += e.p[i] ** 2 + e.p[i] * float(np.dot(joint, y)) + float(np.dot(joint, x * y))
        # Xi~_i is the configuration with site i and its neighbours removed
        mask = (1 << i) | sum(1 << j for j in others)
        rest = keys & ~mask
        pk = np.bincount(rest, weights=joint, minlength=2**e.n)
        pxk = np.bincount(rest, weights=joint * x, minlength=2**e.n)
        cond += math.fsum(np.abs(pxk - e.p[i] * pk))
    c0 = c1 = 2.0
    bound = first * c1 + cond * c0
    tv = zero_one_tv(ensemble_process_law(e), e.p)
    return BoundCertificate(
        theorem="process_local_dependence",
        bound=bound,
        exact=DistanceInterval(2.0 * tv.lo, 2.0 * tv.hi),
        components={
            "neighborhood_sum": first,
            "conditional_sum": cond,
            "c0": c0,
            "c1": c1,
            "bound_tv": bound / 2.0,
            "exact_tv_lo": tv.lo,
            "exact_tv_hi": tv.hi,
        },
    )
