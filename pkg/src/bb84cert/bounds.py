"""Finite-size bound on the secret key length.

Entropies are in bits.  The exponential tail bounds ``exp(-n D)`` use the
relative entropy in nats, so the two units never mix.

The chain, for a given split of the key positions ``K`` into untagged
positions ``L`` and tagged positions ``M``:

* tagged part: each tagged bit is guessed with conclusive ratio at most
  ``s_M``, contributing ``-n_M log s_M`` bits of collision entropy;
* untagged part: the error rate on ``L`` is bounded from the test sample,
  the projection-counting argument bounds Eve's collision probability, and
  Markov's inequality with constant ``c`` turns it into a Renyi bound
  that fails with probability ``eps_L``.

The worst split consistent with the tail bounds is found by exhaustive
vectorized search.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from . import qmath
from .discrimination import DiscriminationCurve
from .source import SourceAnalysis, asymmetry_bounds

LN2 = math.log(2.0)
EPS_TAIL_DEFAULT = 1e-10
C_DEFAULT = 1e6
TARGET_LEAKAGE_DEFAULT = 0.1
EXHAUSTIVE_LIMIT = 4_000_000
CHUNK = 4_000_000


class InfeasibleSlack(ValueError):
    """A slack parameter leaves no room for the tail bound."""


# ---------------------------------------------------------------- entropies

def binary_entropy(p):
    """Binary entropy in bits; elementwise on arrays."""
    arr = np.asarray(p, dtype=float)
    if np.any((arr < -1e-12) | (arr > 1 + 1e-12)) or np.any(np.isnan(arr)):
        raise ValueError(f"binary entropy needs p in [0,1], got {p}")
    arr = np.clip(arr, 0.0, 1.0)
    h = -(xlogy(arr, arr) + xlogy(1 - arr, 1 - arr)) / LN2
    return float(h) if np.ndim(p) == 0 else h


def _capped_entropy(p):
    """``h(p)`` below one half and 1 above, so the bound stays monotone in ``p``."""
    p = np.asarray(p, dtype=float)
    return np.where(p >= 0.5, 1.0, binary_entropy(np.clip(p, 0.0, 0.5)))


def bernoulli_divergence_nats(p, q):
    """``D(B(p) || B(q))`` in nats with ``0 log 0 = 0``; ``inf`` outside the support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(p > 0, xlogy(p, p) - xlogy(p, q), 0.0)
        t0 = np.where(p < 1, xlogy(1 - p, 1 - p) - xlogy(1 - p, 1 - q), 0.0)
    bad = ((p > 0) & (q <= 0)) | ((p < 1) & (q >= 1))
    d = np.where(bad, np.inf, np.maximum(t1 + t0, 0.0))
    return float(d) if d.ndim == 0 else d


def bernoulli_divergence(p, q):
    """``D(B(p) || B(q))`` in bits."""
    return bernoulli_divergence_nats(p, q) / LN2


# ---------------------------------------------------------------- inputs

@dataclass(frozen=True)
class ProtocolCounts:
    """Counts observed in one protocol run.

    ``basis_counts[(set, a)]`` holds the per-basis sizes for sets ``A``
    (emitted), ``D`` (detected), ``C`` (sifted), ``T`` (test) and ``K`` (key).
    """

    N: int
    n_D: int
    n_C: int
    n_T: int
    n_K: int
    n_T_e: int
    basis_counts: Mapping[tuple[str, int], int]
    collapse_bob_mode: bool = False

    def __post_init__(self):
        if self.n_K != self.n_C - self.n_T:
            raise ValueError(f"n_K={self.n_K} must equal n_C - n_T = {self.n_C - self.n_T}")
        if not (0 <= self.n_C <= self.n_D <= self.N):
            raise ValueError("need 0 <= n_C <= n_D <= N")
        if not 0 <= self.n_T_e <= self.n_T:
            raise ValueError("need 0 <= n_T_e <= n_T")
        totals = {"A": self.N, "D": self.n_D, "C": self.n_C, "T": self.n_T, "K": self.n_K}
        bc = {(s, a): int(v) for (s, a), v in self.basis_counts.items()}
        for s, tot in totals.items():
            if (s, 0) in bc or (s, 1) in bc:
                if bc.get((s, 0), 0) + bc.get((s, 1), 0) != tot:
                    raise ValueError(f"basis counts for {s} do not add up to {tot}")
        for a in (0, 1):
            if ("K", a) not in bc and ("C", a) in bc and ("T", a) in bc:
                bc[("K", a)] = bc[("C", a)] - bc[("T", a)]
        for s in ("A", "C", "K"):
            if (s, 0) not in bc or (s, 1) not in bc:
                raise ValueError(f"basis counts for set {s} are required")
        object.__setattr__(self, "basis_counts", bc)

    def n(self, s: str, a: int) -> int:
        if s == "D" and (s, a) not in self.basis_counts:
            return self.basis_counts[("C", a)]
        return self.basis_counts[(s, a)]

    @property
    def qber(self) -> float:
        return self.n_T_e / self.n_T if self.n_T else 0.0

    @classmethod
    def balanced(cls, n_K: int, n_T: int, n_T_e: int, n_C: int | None = None,
                 n_D: int | None = None, N: int | None = None, **kw) -> "ProtocolCounts":
        """Counts split evenly between the bases, handy for presets and tests."""
        n_C = n_K + n_T if n_C is None else n_C
        n_T = n_C - n_K
        n_D = 2 * n_C if n_D is None else n_D
        N = n_D if N is None else N

        def half(v):
            return {0: v - v // 2, 1: v // 2}

        bc = {}
        for s, v in (("A", N), ("D", n_D), ("C", n_C), ("T", n_T)):
            for a, h in half(v).items():
                bc[(s, a)] = h
        return cls(N, n_D, n_C, n_T, n_K, n_T_e, bc, **kw)


def default_delta(n: int, eps_tail: float = EPS_TAIL_DEFAULT) -> float:
    """``0.3 sqrt(ln(1/eps)/n)``, the default width of a concentration slack."""
    if n <= 0:
        return 1.0
    return 0.3 * math.sqrt(math.log(1 / eps_tail) / n)


@dataclass(frozen=True)
class BoundParams:
    """Free parameters of the bound.  ``None`` slacks take their defaults.

    The tag weight is not stored here; it comes from the source decomposition.
    """

    delta_M: tuple[float, float] | None = None
    delta_p: float | None = None
    delta_P: float = 0.0
    c: float = C_DEFAULT
    ec_efficiency: float = 1.0
    ec_leakage: bool = True
    target_leakage: float = TARGET_LEAKAGE_DEFAULT
    eps_tail: float = EPS_TAIL_DEFAULT

    def __post_init__(self):
        if self.c <= 1:
            raise ValueError("Markov constant c must exceed 1")
        if self.ec_efficiency < 1:
            raise ValueError("ec_efficiency must be >= 1")
        if self.delta_P < 0:
            raise ValueError("delta_P must be >= 0")
        if self.delta_p is not None and self.delta_p <= 0:
            raise ValueError("delta_p must be > 0")
        if self.delta_M is not None and min(self.delta_M) <= 0:
            raise ValueError("delta_M must be > 0")
        if self.target_leakage <= 0:
            raise ValueError("target_leakage must be > 0")

    def resolved(self, counts: ProtocolCounts) -> "BoundParams":
        dm = self.delta_M or tuple(default_delta(counts.n("A", a), self.eps_tail) for a in (0, 1))
        dp = self.delta_p if self.delta_p is not None else default_delta(counts.n_T, self.eps_tail)
        return replace(self, delta_M=tuple(float(x) for x in dm), delta_p=float(dp))


@dataclass(frozen=True)
class PartitionScenario:
    n_L: int
    n_M: tuple[int, int]
    p_bar1: tuple[float, float]

    def n_L_basis(self, counts: ProtocolCounts) -> tuple[int, int]:
        return tuple(counts.n("K", a) - self.n_M[a] for a in (0, 1))

    def n_bar(self, counts: ProtocolCounts) -> tuple[int, int]:
        """``n_L - n^a_L``: positions of L in the other basis."""
        nl = self.n_L_basis(counts)
        return (self.n_L - nl[0], self.n_L - nl[1])


# ---------------------------------------------------------------- tagged part

def _p_minus(n_M, counts: ProtocolCounts, a: int, delta: float, p_bar1: float):
    n_A, n_D, n_K = counts.n("A", a), counts.n("D", a), counts.n("K", a)
    p_M = np.asarray(n_M, dtype=float) / n_A
    if p_bar1 <= 0 or n_K == 0:
        return np.where(p_M > delta, np.inf, 0.0)
    return np.maximum(p_M - delta, 0.0) * n_D / (n_K * p_bar1)


def n_M_max(counts: ProtocolCounts, a: int, delta: float, p_bar1: float) -> int:
    """Largest tagged count whose conclusive-rate floor stays at most 1."""
    n_A, n_D, n_K = counts.n("A", a), counts.n("D", a), counts.n("K", a)
    if p_bar1 <= 0 or n_K == 0 or n_A == 0:
        return 0
    lim = n_A * (delta + n_K * p_bar1 / n_D) if n_D else n_K
    n = min(n_K, int(math.floor(lim + 1e-9)))
    while n > 0 and _p_minus(n, counts, a, delta, p_bar1) > 1:
        n -= 1
    return max(n, 0)


def _eps_M(n_M, counts: ProtocolCounts, a: int, delta: float):
    n_A = counts.n("A", a)
    n_M = np.asarray(n_M, dtype=float)
    if counts.collapse_bob_mode:
        n_M = np.full_like(n_M, counts.n("C", a))
    p_M = n_M / n_A
    d = bernoulli_divergence_nats(p_M, np.clip(p_M - delta, 0.0, 1.0))
    return np.where(p_M > delta, np.exp(-n_A * np.asarray(d)), 0.0)


def tail_eps_M(counts: ProtocolCounts, a: int, delta: float, p_bar1: float,
               n_M: int) -> tuple[float, float, int]:
    """Tail probability, conclusive-rate floor and maximal tagged count for basis ``a``.

    ``p_M = n_M / n^a_A`` (``n^a_C`` in collapse mode) must exceed ``delta``.
    """
    n_A = counts.n("A", a)
    p_M = (counts.n("C", a) if counts.collapse_bob_mode else n_M) / n_A
    if delta <= 0 or delta >= p_M:
        raise InfeasibleSlack(f"delta_M={delta} must lie in (0, p_M={p_M})")
    eps = float(_eps_M(n_M, counts, a, delta))
    pm = float(_p_minus(n_M, counts, a, delta, p_bar1))
    return eps, pm, n_M_max(counts, a, delta, p_bar1)


def renyi_M(scenario: PartitionScenario, s_M) -> float:
    """``-sum_a n^a_M log2 s^a_M`` in bits."""
    total = 0.0
    for a in (0, 1):
        if scenario.n_M[a] == 0:
            continue
        if not 0 < s_M[a] <= 1:
            raise ValueError("s_M must lie in (0, 1]")
        total -= scenario.n_M[a] * math.log2(s_M[a])
    return max(total, 0.0)


# ---------------------------------------------------------------- untagged part

def eps_T_e(n_T: int, p_T: float, delta_p: float) -> float:
    if p_T + delta_p > 1:
        raise InfeasibleSlack(f"p_T + delta_p = {p_T + delta_p} exceeds 1")
    if n_T == 0:
        return 1.0
    return math.exp(-n_T * bernoulli_divergence_nats(p_T, p_T + delta_p))


def _p_L_max(counts: ProtocolCounts, delta_p: float, n_L, err_M):
    num = counts.n_K * counts.qber + counts.n_C * delta_p - err_M
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(n_L > 0, num / np.maximum(n_L, 1), 0.0)
    return np.clip(val, 0.0, 1.0)


def error_rate_bounds(counts: ProtocolCounts, params: BoundParams, scenario: PartitionScenario,
                      s_M) -> tuple[float, float, float]:
    """``(p_L_max, eps_T_e, mu_L)`` for one partition."""
    if scenario.n_L <= 0:
        raise ValueError("n_L must be positive")
    params = params.resolved(counts)
    err = sum(scenario.n_M[a] * (1 - s_M[a]) for a in (0, 1))
    p_max = float(_p_L_max(counts, params.delta_p, scenario.n_L, err))
    et = eps_T_e(counts.n_T, counts.qber, params.delta_p)
    em = sum(float(_eps_M(scenario.n_M[a], counts, a, params.delta_M[a])) for a in (0, 1))
    return p_max, et, min(em + et, 1.0)


def hypothesis_test(model, a: int) -> tuple[dict[int, np.ndarray], float]:
    """Positive-part test for basis ``a`` and its success probability.

    The zero eigenspace of the difference goes to bit 1 so the two
    projections always sum to the identity.
    """
    s0, s1 = model.sigma[(a, 0)], model.sigma[(a, 1)]
    p0 = qmath.positive_part_projection(s0 - s1)
    p1 = np.eye(p0.shape[0]) - p0
    s_L = 0.5 * (1 + qmath.trace_distance(s0, s1))
    return {0: p0, 1: p1}, min(max(s_L, 0.5), 1.0)


def q_factor(model, a: int, P: Mapping[int, np.ndarray]) -> float:
    """``max_{x,x'} Tr sigma_{a,x} P_{abar,x'}``."""
    return float(max(np.trace(model.sigma[(a, x)] @ P[y]).real for x in (0, 1) for y in (0, 1)))


def log_binomial_cdf(n: int, k: int, q: float) -> float:
    """Natural log of ``sum_{i<=k} C(n,i) q^i (1-q)^(n-i)``."""
    if k >= n:
        return 0.0
    if k < 0:
        return -np.inf
    i = np.arange(k + 1, dtype=float)
    logc = gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
    with np.errstate(divide="ignore"):
        terms = logc + xlogy(i, q) + xlogy(n - i, 1 - q)
    return float(logsumexp(terms))


def binomial_sandwich(n: int, k: int, q: float) -> tuple[float, float, float]:
    """``(2^{n h(k/n)} / (2 sqrt n), 2^{n h(k/n)}, exact cumulative probability)``.

    The two entropy expressions bound the coefficient mass ``sum_{i<=k} C(n,i)``
    (for ``k <= n/2``), not the probability; see ``probability_sandwich``.
    """
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    if not 0 <= q <= 1:
        raise ValueError("need q in [0,1]")
    exact = math.exp(log_binomial_cdf(n, k, q))
    if n == 0:
        return 1.0, 1.0, exact
    upper = 2.0 ** (n * binary_entropy(k / n))
    return upper / (2 * math.sqrt(n)), upper, exact


def log2_coefficient_mass(n: int, k: int) -> float:
    """``log2 sum_{i<=k} C(n,i)``."""
    i = np.arange(min(k, n) + 1, dtype=float)
    return float(logsumexp(gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)) / LN2)


def probability_sandwich(n: int, k: int, q: float) -> tuple[float, float, float]:
    """Entropy-form bounds on the upper tail ``Pr[Bin(n,q) >= k]`` for ``k/n >= q``.

    ``2^{-n D(k/n||q)} / (2 sqrt n) <= Pr[Bin >= k] <= 2^{-n D(k/n||q)}``.
    """
    if not 0 < k <= n or not 0 < q < 1 or k / n < q:
        raise ValueError("need 0 < k <= n, 0 < q < 1 and k/n >= q")
    upper = 2.0 ** (-n * bernoulli_divergence(k / n, q))
    # summed directly: 1 - cdf cancels badly for small tails
    tail = math.exp(_log_upper_tail(n, k, q))
    return upper / (2 * math.sqrt(n)), upper, tail


def _log_upper_tail(n: int, k: int, q: float) -> float:
    i = np.arange(k, n + 1, dtype=float)
    logc = gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
    return float(logsumexp(logc + xlogy(i, q) + xlogy(n - i, 1 - q)))


def log2_eps_P(n_L, n_bar0, n_bar1, k, s_L) -> np.ndarray:
    """``log2`` of the projection-test failure bound, clipped at 0; elementwise.

    Vacuous (0, i.e. probability 1) when the weaker test is no better than a
    coin; ``-inf`` when both tests are perfect, since then no error can occur.
    """
    n_L = np.asarray(n_L, dtype=float)
    k = np.asarray(k, dtype=float)
    s0, s1 = s_L
    sm = min(s0, s1)
    shape = np.broadcast(n_L, n_bar0, n_bar1, k).shape
    if sm <= 0.5:
        return np.zeros(shape)
    if sm >= 1:
        return np.full(shape, -np.inf)
    n_safe = np.maximum(n_L, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = binary_entropy(np.clip(k / n_safe, 0.0, 1.0))
        # 2^n - 2^{nh}/(2 sqrt n) = 2^n (1 - 2^{n(h-1)}/(2 sqrt n))
        ratio = np.exp2(n_L * (h - 1)) / (2 * np.sqrt(n_safe))
        lead = n_L + np.log1p(-np.minimum(ratio, 1.0)) / LN2
        acc = (lead + np.asarray(n_bar0) * math.log2(s0) + np.asarray(n_bar1) * math.log2(s1)
               + k * math.log2((1 - sm) / sm))
    acc = np.where(n_L <= 0, -np.inf, acc)
    return np.broadcast_to(np.minimum(acc, 0.0), shape).copy()


def eps_P(n_L: int, n_L_basis: tuple[int, int], k: int, s_L) -> float:
    """Probability that the projection test accepts more than ``k`` errors."""
    n_bar = (n_L - n_L_basis[0], n_L - n_L_basis[1])
    return float(np.exp2(log2_eps_P(n_L, n_bar[0], n_bar[1], k, s_L)))


@dataclass(frozen=True)
class PiChain:
    p_as: float
    omega_L: float
    log2_Pi_L: float
    R_L_minus: float
    eps_L: float
    flag: str = ""

    @property
    def Pi_L(self) -> float:
        return float(np.exp2(self.log2_Pi_L))


def _chain_arrays(n_L, n_bar0, n_bar1, p_max, mu_L, nu_L, dT, log2_epsP, k, log2_q, c):
    n_L = np.asarray(n_L, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_term = n_L * _capped_entropy(p_max) + log2_epsP
        omega = mu_L + nu_L + dT + np.exp2(np.minimum(log_term, 1024.0))
        omega = np.where(np.isfinite(omega), omega, np.inf)
        p_as = p_max + np.where(n_L > 0, k / np.maximum(n_L, 1), 0.0)
        cw = c * omega
        log2_pi_ratio = n_L * _capped_entropy(np.clip(p_as, 0, 1)) + n_bar0 * log2_q[0] + n_bar1 * log2_q[1]
        markov = 2 * np.log2(np.clip(1 - np.sqrt(np.minimum(cw, 1.0)), 0.0, None))
        log2_Pi = log2_pi_ratio - markov
        R = np.where(cw < 1, -log2_Pi, 0.0)
        R = np.where(n_L > 0, np.maximum(R, 0.0), 0.0)
    return p_as, omega, log2_Pi, R


def pi_chain(counts: ProtocolCounts, params: BoundParams, scenario: PartitionScenario, *,
             p_L_max: float, mu_L: float, nu_L: float, dT_bar: float, eps_P: float,
             q: tuple[float, float]) -> PiChain:
    """Collision-probability bound on the untagged positions and its Renyi form."""
    n_L = scenario.n_L
    k = math.floor(params.delta_P * n_L + 1e-9)
    n_bar = scenario.n_bar(counts)
    log2_epsP = math.log2(eps_P) if eps_P > 0 else -math.inf
    p_as, omega, log2_Pi, R = _chain_arrays(n_L, n_bar[0], n_bar[1], p_L_max, mu_L, nu_L, dT_bar,
                                            log2_epsP, k, tuple(math.log2(x) for x in q), params.c)
    omega = float(omega)
    flag = "markov-failure" if params.c * omega >= 1 else ""
    return PiChain(float(p_as), min(omega, math.inf), float(log2_Pi), float(R),
                   1 / params.c + nu_L, flag)


# ---------------------------------------------------------------- assembly

@dataclass(frozen=True)
class RateReport:
    s_M: tuple[float, float]
    eps_M: tuple[float, float]
    n_M_max: tuple[int, int]
    p_minus: tuple[float, float]
    s_L: tuple[float, float]
    q: tuple[float, float]
    delta_M: tuple[float, float]
    delta_p: float
    p_L_max: float
    eps_T_e: float
    mu_L: float
    nu_L: float
    dT_bar: float
    eps_P: float
    p_as: float
    omega_L: float
    Pi_L: float
    log2_Pi_L: float
    R_L_minus: float
    R_M_minus: float
    R_E_K: float
    eps_L: float
    m: int
    l: float
    leakage_bound: float
    ec_leak: float
    worst_partition: PartitionScenario
    qber: float
    n_K: int
    reason: str = ""
    flags: tuple[str, ...] = field(default_factory=tuple)

    def as_dict(self) -> dict:
        return asdict(self)


def l_required(target: float, floor: float) -> float:
    """Smallest ``l`` with ``floor + 2^{-l}/ln2 <= target``; ``inf`` if impossible."""
    room = target - floor
    if room <= 0:
        return math.inf
    return -math.log2(room * LN2)


def _zero_report(reason: str, counts: ProtocolCounts, params: BoundParams, **kw) -> RateReport:
    base = dict(s_M=(1.0, 1.0), eps_M=(0.0, 0.0), n_M_max=(0, 0), p_minus=(0.0, 0.0),
                s_L=(0.5, 0.5), q=(1.0, 1.0),
                delta_M=params.delta_M or (0.0, 0.0), delta_p=params.delta_p or 0.0,
                p_L_max=1.0, eps_T_e=1.0, mu_L=1.0, nu_L=0.0, dT_bar=0.0, eps_P=1.0,
                p_as=1.0, omega_L=1.0, Pi_L=1.0, log2_Pi_L=0.0, R_L_minus=0.0, R_M_minus=0.0,
                R_E_K=0.0, eps_L=1 / params.c, m=0, l=0.0, leakage_bound=1.0, ec_leak=0.0,
                worst_partition=PartitionScenario(counts.n_K, (0, 0), (0.0, 0.0)),
                qber=counts.qber, n_K=counts.n_K, reason=reason)
    base.update(kw)
    return RateReport(**base)


class _BasisTable:
    """Per-basis quantities as functions of the tagged count ``n^a_M``."""

    def __init__(self, counts, a, delta, p_bar1, curve):
        self.n_max = n_M_max(counts, a, delta, p_bar1)
        n = np.arange(self.n_max + 1)
        self.eps = np.asarray(_eps_M(n, counts, a, delta), dtype=float)
        self.p_minus = np.minimum(np.asarray(_p_minus(n, counts, a, delta, p_bar1), float), 1.0)
        s = np.asarray(curve(self.p_minus), dtype=float) if self.n_max > 0 else np.ones(1)
        self.s = np.where(n == 0, 1.0, s)
        with np.errstate(divide="ignore"):
            self.RM = np.where(n == 0, 0.0, -n * np.log2(np.maximum(self.s, 1e-300)))
        self.err = n * (1 - self.s)


def key_bound(counts: ProtocolCounts, params: BoundParams, analysis: SourceAnalysis,
              curves: tuple | None = None, exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> RateReport:
    """Certified key length with every intermediate quantity."""
    params = params.resolved(counts)
    if counts.n_K == 0:
        return _zero_report("empty-key-set", counts, params)
    if counts.n_T == 0:
        return _zero_report("empty-test-set", counts, params)
    p_T = counts.qber
    try:
        eT = eps_T_e(counts.n_T, p_T, params.delta_p)
    except InfeasibleSlack:
        return _zero_report("infeasible-delta_p", counts, params)
    dec, model = analysis.dec, analysis.model
    p_bar1 = tuple(dec.tagged_weight(a) for a in (0, 1))
    if curves is None:
        curves = tuple(DiscriminationCurve(*dec.tagged_ops(a)) for a in (0, 1))
    flags = [f"uncertified-s_M-{a}" for a in (0, 1) if not curves[a].certified]
    tabs = [_BasisTable(counts, a, params.delta_M[a], p_bar1[a], curves[a]) for a in (0, 1)]
    tests = [hypothesis_test(model, a) for a in (0, 1)]
    s_L = (tests[0][1], tests[1][1])
    q = (q_factor(model, 0, tests[1][0]), q_factor(model, 1, tests[0][0]))
    log2_q = tuple(math.log2(x) for x in q)
    n_K0, n_K1 = counts.n("K", 0), counts.n("K", 1)

    def evaluate(n0, n1):
        n0 = np.asarray(n0)
        n1 = np.asarray(n1)
        n_L = counts.n_K - n0 - n1
        nl0, nl1 = n_K0 - n0, n_K1 - n1
        nb0, nb1 = n_L - nl0, n_L - nl1
        err = tabs[0].err[n0] + tabs[1].err[n1]
        p_max = _p_L_max(counts, params.delta_p, n_L, err)
        mu = np.minimum(tabs[0].eps[n0] + tabs[1].eps[n1] + eT, 1.0)
        nu, dT = asymmetry_bounds(model, n_L)
        k = np.floor(params.delta_P * n_L + 1e-9)
        lp = log2_eps_P(n_L, nb0, nb1, k, s_L)
        _, _, _, R_L = _chain_arrays(n_L, nb0, nb1, p_max, mu, nu, dT, lp, k, log2_q, params.c)
        return R_L + tabs[0].RM[n0] + tabs[1].RM[n1]

    def lower(a0, b0, a1, b1, e0, e1):
        # a valid lower bound on evaluate over [a0..b0] x [a1..b1]; e_a holds the
        # block extrema (err min, eps max, RM min) of each basis table
        nL_min = counts.n_K - b0 - b1
        nL_max = counts.n_K - a0 - a1
        num = counts.n_K * p_T + counts.n_C * params.delta_p - (e0[0] + e1[0])
        with np.errstate(divide="ignore", invalid="ignore"):
            p_ub = np.where(nL_min > 0, np.clip(num / np.maximum(nL_min, 1), 0.0, 1.0), 1.0)
        p_as_ub = np.minimum(p_ub + params.delta_P, 1.0)
        nb0_min, nb1_min = n_K1 - b1, n_K0 - b0
        mu_ub = np.minimum(e0[1] + e1[1] + eT, 1.0)
        nu_ub, dT_ub = asymmetry_bounds(model, nL_max)
        k_min = np.floor(params.delta_P * np.maximum(nL_min, 0) + 1e-9)
        lp_ub = _log2_eps_P_upper(nL_max, nb0_min, nb1_min, k_min, s_L)
        with np.errstate(over="ignore"):
            omega_ub = mu_ub + nu_ub + dT_ub + np.exp2(np.minimum(nL_max * _capped_entropy(p_ub) + lp_ub, 1024.0))
        cw = params.c * omega_ub
        with np.errstate(divide="ignore", invalid="ignore"):
            base = (-nL_max * _capped_entropy(p_as_ub) - nb0_min * log2_q[0] - nb1_min * log2_q[1]
                    + 2 * np.log2(np.clip(1 - np.sqrt(np.minimum(cw, 1.0)), 0.0, None)))
        R_lb = np.where(cw < 1, np.maximum(base, 0.0), 0.0)
        return R_lb + e0[2] + e1[2]

    size = (tabs[0].n_max + 1) * (tabs[1].n_max + 1)
    if size <= exhaustive_limit:
        n0, n1 = _exhaustive(evaluate, tabs[0].n_max, tabs[1].n_max)
    else:
        n0, n1 = _branch_and_bound(evaluate, lower, tabs)

    scen = PartitionScenario(counts.n_K - n0 - n1, (n0, n1), p_bar1)
    n_L = scen.n_L
    err = tabs[0].err[n0] + tabs[1].err[n1]
    p_max = float(_p_L_max(counts, params.delta_p, n_L, err))
    mu = min(float(tabs[0].eps[n0] + tabs[1].eps[n1] + eT), 1.0)
    nu, dT = asymmetry_bounds(model, n_L)
    k = math.floor(params.delta_P * n_L + 1e-9)
    epsP = eps_P(n_L, scen.n_L_basis(counts), k, s_L) if n_L > 0 else 0.0
    chain = pi_chain(counts, params, scen, p_L_max=p_max, mu_L=mu, nu_L=nu, dT_bar=dT,
                     eps_P=epsP, q=q) if n_L > 0 else PiChain(p_max, 0.0, 0.0, 0.0, 1 / params.c + nu)
    if chain.flag:
        flags.append(chain.flag)
    s_M = (float(tabs[0].s[n0]), float(tabs[1].s[n1]))
    R_M = float(tabs[0].RM[n0] + tabs[1].RM[n1]) + 0.0
    R_E = chain.R_L_minus + R_M

    # leakage floor n_L eps_L is charged at n_L = n_K so it holds for every partition
    nu_K, _ = asymmetry_bounds(model, counts.n_K)
    floor = counts.n_K * (1 / params.c + nu_K)
    ec = params.ec_efficiency * counts.n_K * binary_entropy(min(p_T, 0.5)) if params.ec_leakage else 0.0
    l_req = l_required(params.target_leakage, floor)
    reason = ""
    if not math.isfinite(l_req):
        m, reason = 0, "leakage-floor-exceeds-target"
    else:
        m = math.floor(R_E - l_req) - math.ceil(ec)
        if R_E <= 0:
            reason = "no-entropy"
        elif m <= 0:
            reason = "entropy-below-leakage-and-reconciliation"
    m = max(int(m), 0)
    l = R_E - m - math.ceil(ec)
    # with no key there is nothing to leak
    leak = floor + 2.0 ** (-l) / LN2 if m > 0 else 0.0
    return RateReport(
        s_M=s_M, eps_M=(float(tabs[0].eps[n0]), float(tabs[1].eps[n1])),
        n_M_max=(tabs[0].n_max, tabs[1].n_max),
        p_minus=(float(tabs[0].p_minus[n0]), float(tabs[1].p_minus[n1])),
        s_L=s_L, q=q, delta_M=params.delta_M, delta_p=params.delta_p,
        p_L_max=p_max, eps_T_e=eT, mu_L=mu, nu_L=float(nu), dT_bar=float(dT), eps_P=epsP,
        p_as=chain.p_as, omega_L=chain.omega_L, Pi_L=chain.Pi_L, log2_Pi_L=chain.log2_Pi_L,
        R_L_minus=chain.R_L_minus, R_M_minus=R_M, R_E_K=R_E, eps_L=chain.eps_L, m=m, l=l,
        leakage_bound=leak, ec_leak=ec, worst_partition=scen, qber=p_T, n_K=counts.n_K,
        reason=reason, flags=tuple(flags),
    )


def _exhaustive(evaluate, m0: int, m1: int) -> tuple[int, int]:
    """Lexicographically first minimizer of ``evaluate`` over ``[0..m0] x [0..m1]``."""
    best_val, best = math.inf, (0, 0)
    rows = max(1, CHUNK // (m1 + 1))
    cols = np.arange(m1 + 1)
    for start in range(0, m0 + 1, rows):
        r = np.arange(start, min(start + rows, m0 + 1))
        v = evaluate(r[:, None], cols[None, :])
        i = int(np.argmin(v))
        if v.flat[i] < best_val:
            best_val = float(v.flat[i])
            best = (int(r[i // (m1 + 1)]), int(i % (m1 + 1)))
    return best


def _dyadic_levels(arr: np.ndarray, op) -> list[np.ndarray]:
    """``levels[j][i]`` reduces ``arr`` over the aligned block ``[i 2^j, (i+1) 2^j)``."""
    out = [arr]
    while len(out[-1]) > 1:
        cur = out[-1]
        if len(cur) % 2:
            cur = np.append(cur, cur[-1])
        out.append(op(cur[0::2], cur[1::2]))
    return out


def _branch_and_bound(evaluate, lower, tabs, leaf: int = 4096, start_blocks: int = 1 << 16):
    """Exact lexicographically first minimizer using block lower bounds.

    Blocks are aligned dyadic rectangles.  A block is discarded once its
    lower bound exceeds the best value found, split while large, and
    evaluated cell by cell once small.
    """
    m = (tabs[0].n_max, tabs[1].n_max)
    lv = [( _dyadic_levels(t.err, np.minimum), _dyadic_levels(t.eps, np.maximum),
            _dyadic_levels(t.RM, np.minimum)) for t in tabs]
    depth = [len(lv[a][0]) - 1 for a in (0, 1)]
    j = list(depth)
    while (((m[0] >> j[0]) + 1) * ((m[1] >> j[1]) + 1)) < start_blocks and (j[0] > 0 or j[1] > 0):
        a = 0 if j[0] >= j[1] else 1
        j[a] -= 1
    i0 = np.arange((m[0] >> j[0]) + 1)
    i1 = np.arange((m[1] >> j[1]) + 1)
    blocks = [(j[0], j[1], np.repeat(i0, len(i1)), np.tile(i1, len(i0)))]

    # incumbent from the block corners
    best_val, best = math.inf, (0, 0)
    g0 = np.minimum(i0 << j[0], m[0])
    g1 = np.minimum(i1 << j[1], m[1])
    v = evaluate(g0[:, None], g1[None, :])
    k = int(np.argmin(v))
    best_val, best = float(v.flat[k]), (int(g0[k // len(g1)]), int(g1[k % len(g1)]))

    while blocks:
        j0, j1, b0, b1 = blocks.pop()
        a0 = b0 << j0
        a1 = b1 << j1
        e0 = tuple(lv[0][q][j0][b0] for q in range(3))
        e1 = tuple(lv[1][q][j1][b1] for q in range(3))
        lb = lower(a0, np.minimum(a0 + (1 << j0) - 1, m[0]), a1, np.minimum(a1 + (1 << j1) - 1, m[1]), e0, e1)
        tol = 1e-12 * max(1.0, abs(best_val))
        # a tied block survives only if it may hold a lexicographically earlier minimizer
        earlier = (a0 < best[0]) | ((a0 == best[0]) & (a1 < best[1]))
        keep = (lb < best_val - tol) | ((lb <= best_val + tol) & earlier)
        b0, b1 = b0[keep], b1[keep]
        if len(b0) == 0:
            continue
        if (1 << j0) * (1 << j1) <= leaf:
            for x0, x1 in zip(b0, b1):
                r = np.arange(x0 << j0, min((x0 + 1) << j0, m[0] + 1))
                c = np.arange(x1 << j1, min((x1 + 1) << j1, m[1] + 1))
                vv = evaluate(r[:, None], c[None, :])
                t = int(np.argmin(vv))
                cand = (int(r[t // len(c)]), int(c[t % len(c)]))
                val = float(vv.flat[t])
                if val < best_val or (val == best_val and cand < best):
                    best_val, best = val, cand
            continue
        # split the longer side, or both
        s0 = j0 > 0 and j0 >= j1 - 1
        s1 = j1 > 0 and j1 >= j0 - 1
        n0 = np.concatenate([2 * b0, 2 * b0 + 1]) if s0 else b0
        n1 = np.concatenate([b1, b1]) if s0 else b1
        if s1:
            n0, n1 = np.concatenate([n0, n0]), np.concatenate([2 * n1, 2 * n1 + 1])
        ok = ((n0 << (j0 - s0)) <= m[0]) & ((n1 << (j1 - s1)) <= m[1])
        blocks.append((j0 - s0, j1 - s1, n0[ok], n1[ok]))
    return best


def _log2_eps_P_upper(n_L_max, nb0_min, nb1_min, k_min, s_L):
    """Upper bound on ``log2_eps_P`` over a block, from its extreme counts."""
    s0, s1 = s_L
    sm = min(s0, s1)
    shape = np.broadcast(n_L_max, nb0_min, nb1_min, k_min).shape
    if sm <= 0.5:
        return np.zeros(shape)
    if sm >= 1:
        return np.full(shape, -np.inf)
    acc = (np.asarray(n_L_max, float) + np.asarray(nb0_min) * math.log2(s0)
           + np.asarray(nb1_min) * math.log2(s1) + np.asarray(k_min) * math.log2((1 - sm) / sm))
    return np.minimum(acc, 0.0)
