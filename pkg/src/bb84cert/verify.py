"""Independent numerical oracles for the bound's ingredients.

Each oracle recomputes a quantity by a route that shares no code path with
the implementation (brute-force grids, exact rationals, exhaustive
enumeration, Monte Carlo) and reports measured value, bound and verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from . import bounds, extract, protocol, qmath, source
from .discrimination import DiscriminationCurve

ORACLES: dict[str, Callable] = {}


@dataclass(frozen=True)
class OracleResult:
    name: str
    passed: bool
    measured: float
    bound: float
    detail: str = ""


def oracle(name):
    def deco(fn):
        ORACLES[name] = fn
        return fn
    return deco


def _tol(opts, default):
    return default if opts.tolerance is None else opts.tolerance


def random_qubit_pair(rng):
    """Two random qubit states, each pure or mixed with equal odds."""
    out = []
    for _ in range(2):
        if rng.random() < 0.5:
            out.append(qmath.projector(qmath.random_pure(2, rng)))
        else:
            out.append(qmath.random_density(2, rng))
    return out


@oracle("helstrom")
def helstrom_oracle(opts, rng) -> OracleResult:
    """Closed-form test success against a grid over projective measurements."""
    tol = _tol(opts, 1e-3)
    dirs = qmath.fibonacci_sphere(opts.helstrom_grid)
    projs = np.array([qmath.qubit_from_bloch(d) for d in dirs])
    worst = 0.0
    for _ in range(opts.helstrom_pairs):
        r0, r1 = random_qubit_pair(rng)
        closed = 0.5 * (1 + qmath.trace_distance(r0, r1))
        p0 = np.einsum("ij,nji->n", r0, projs).real
        p1 = np.einsum("ij,nji->n", r1, np.eye(2)[None] - projs).real
        brute = float(np.max(0.5 * (p0 + p1)))
        if brute > closed + 1e-9:
            return OracleResult("helstrom", False, brute - closed, 1e-9, "grid beats closed form")
        worst = max(worst, closed - brute)
    return OracleResult("helstrom", worst <= tol, worst, tol, f"{opts.helstrom_pairs} pairs")


@oracle("distance")
def distance_oracle(opts, rng) -> OracleResult:
    tol = _tol(opts, 1e-9)
    worst = -math.inf
    for i in range(opts.distance_pairs):
        d = 2 + i % 3
        states = [qmath.projector(qmath.random_pure(d, rng)) if rng.random() < 0.3
                  else qmath.random_density(d, rng, rank=int(rng.integers(1, d + 1))) for _ in range(2)]
        dt = qmath.trace_distance(*states)
        f = qmath.fidelity(*states)
        worst = max(worst, dt - math.sqrt(max(1 - f * f, 0.0)))
    return OracleResult("distance", worst <= tol, worst, tol, "d_T - sqrt(1-F^2)")


def exact_cdf_fraction(n: int, k: int, q: Fraction) -> Fraction:
    return sum((Fraction(math.comb(n, i)) * q ** i * (1 - q) ** (n - i) for i in range(k + 1)), Fraction(0))


@oracle("binomial")
def binomial_oracle(opts, rng) -> OracleResult:
    """Log-space cumulative sum against exact rationals, plus the entropy bounds the
    key-length formula relies on (coefficient mass and upper-tail forms)."""
    tol = _tol(opts, 1e-12)
    worst = 0.0
    for n in range(1, 21):
        for k in range(n + 1):
            for qn in range(1, 10):
                q = Fraction(qn, 10)
                exact = exact_cdf_fraction(n, k, q)
                val = bounds.binomial_sandwich(n, k, qn / 10)[2]
                worst = max(worst, abs(val - float(exact)) / float(exact))
    bad = []
    for n in range(1, 31):
        for k in range(n + 1):
            mass = 2.0 ** bounds.log2_coefficient_mass(n, k)
            lo, hi, _ = bounds.binomial_sandwich(n, k, 0.5)
            if lo > mass * (1 + 1e-12) or (2 * k <= n and mass > hi * (1 + 1e-12)):
                bad.append(("mass", n, k))
            for qn in range(1, 10):
                q = qn / 10
                if 0 < k and k / n >= q:
                    plo, phi, tail = bounds.probability_sandwich(n, k, q)
                    if not plo <= tail * (1 + 1e-12) or tail > phi * (1 + 1e-12):
                        bad.append(("tail", n, k, q))
    ok = worst <= tol and not bad
    return OracleResult("binomial", ok, worst, tol, f"{len(bad)} entropy-bound violations")


def random_joint(rng, n: int, nz: int) -> np.ndarray:
    """Random ``p(x, z)`` with varied per-``z`` min-entropy."""
    nx = 1 << n
    joint = np.zeros((nx, nz))
    for z in range(nz):
        support = rng.choice(nx, size=int(rng.integers(1, nx + 1)), replace=False)
        w = rng.dirichlet(np.full(len(support), rng.choice([0.2, 1.0, 5.0])))
        joint[support, z] = w * rng.random()
    return joint / joint.sum()


@oracle("leftover")
def leftover_oracle(opts, rng) -> OracleResult:
    worst = -math.inf
    for _ in range(opts.leftover_cases):
        n = int(rng.integers(2, 13))
        m = int(rng.integers(1, min(n, 4) + 1))
        joint = random_joint(rng, n, int(rng.integers(1, 9)))
        res = extract.leftover_oracle(joint, m, opts.leftover_hashes, rng)
        slack = 3 * res["stderr"] + _tol(opts, 0.0)
        worst = max(worst, res["measured"] - res["bound"] - slack)
    return OracleResult("leftover", worst <= 0, worst, 0.0, "measured - bound - 3 s.e.")


@oracle("universality")
def universality_oracle(opts, rng) -> OracleResult:
    worst = -math.inf
    for n, m in ((8, 4), (16, 8), (24, 16)):
        rate, bound, se = extract.universality_check(n, m, opts.universality_trials, rng)
        worst = max(worst, rate - bound - 3 * se - _tol(opts, 0.0))
    return OracleResult("universality", worst <= 0, worst, 0.0, "rate - 2^-m - 3 s.e.")


@oracle("gram")
def gram_oracle(opts, rng) -> OracleResult:
    tol = _tol(opts, 1e-9)
    worst = 0.0
    cases = [source.analyze(source.ideal_source())]
    for mu in (0.1, 0.5):
        spec, dec = source.coherent_source(mu)
        cases.append(source.analyze(spec, dec))
    for an in cases:
        c = an.pur.factor
        worst = max(worst, float(np.max(np.abs(qmath.adjoint(c) @ c - an.pur.gram))))
        for st in an.pur.pure_states.values():
            worst = max(worst, abs(1 - np.trace(st @ st).real))
    return OracleResult("gram", worst <= tol, worst, tol, "C^dag C vs G and purity")


@oracle("perfect_limit")
def perfect_limit_oracle(opts, rng) -> OracleResult:
    tol = _tol(opts, 0.02)
    counts = bounds.ProtocolCounts.balanced(n_K=10 ** 6, n_T=2 * 10 ** 6, n_T_e=100_000)
    rep = bounds.key_bound(counts, bounds.BoundParams(delta_p=1e-3, c=1e6),
                           source.analyze(source.ideal_source()))
    target = 1 - bounds.binary_entropy(0.05 + 1e-3)
    diff = abs(rep.R_L_minus / counts.n_K - target)
    return OracleResult("perfect_limit", diff <= tol, diff, tol, f"R_L/n_K={rep.R_L_minus / counts.n_K:.5f}")


@oracle("coverage")
def coverage_oracle(opts, rng, seed: int = 0) -> OracleResult:
    """Frequency of the true untagged error rate exceeding its bound, against ``mu_L``."""
    an = source.analyze(source.ideal_source())
    cfg = protocol.ProtocolConfig(N=opts.coverage_N, eve=protocol.EveStrategy("passive", depolarizing=0.05),
                                  seed=seed)
    params = bounds.BoundParams()
    hits, mus = 0, []
    for i in range(opts.coverage_sessions):
        rec = protocol.run_session(cfg, an.spec, an.dec, index=i)
        counts = rec.counts()
        scen = bounds.PartitionScenario(len(rec.L), rec.n_M(), (0.0, 0.0))
        p_max, _, mu = bounds.error_rate_bounds(counts, params, scen, (1.0, 1.0))
        hits += rec.p_e_L > p_max
        mus.append(mu)
    s = max(opts.coverage_sessions, 1)
    freq = hits / s
    mu_bar = float(np.mean(mus)) if mus else 0.0
    se = math.sqrt(max(mu_bar * (1 - mu_bar), 1.0 / s) / s)
    limit = mu_bar + 3 * se + _tol(opts, 0.0)
    return OracleResult("coverage", freq <= limit, freq, limit, f"{hits}/{s} exceed, mean mu_L={mu_bar:.3e}")


@oracle("tag_exploit")
def tag_exploit_oracle(opts, rng, seed: int = 0) -> OracleResult:
    """Eve's accuracy on tagged key bits never beats the certified ratio."""
    spec, dec = source.coherent_source(0.5)
    cfg = protocol.ProtocolConfig(N=200_000, detector=protocol.Detector(0.2),
                                  eve=protocol.EveStrategy("tag_exploit"), seed=seed)
    curves = [DiscriminationCurve(*dec.tagged_ops(a)) for a in (0, 1)]
    params = bounds.BoundParams()
    correct, allowed, var = 0, 0.0, 0.0
    for i in range(opts.tag_sessions):
        rec = protocol.run_session(cfg, spec, dec, index=i)
        counts = rec.counts()
        p = params.resolved(counts)
        n_M = rec.n_M()
        for a in (0, 1):
            if n_M[a] == 0:
                continue
            pm = bounds._p_minus(n_M[a], counts, a, p.delta_M[a], dec.tagged_weight(a))
            s = 0.5 if opts.tamper_s_M else float(curves[a](min(float(pm), 1.0)))
            sel = rec.M[rec.a[rec.M] == a]
            g = rec.eve_guess[sel]
            correct += int(np.sum(g == rec.x[sel]))
            allowed += len(sel) * s
            var += len(sel) * s * (1 - s)
    limit = allowed + 3 * math.sqrt(var) + _tol(opts, 0.0) * max(allowed, 1.0)
    return OracleResult("tag_exploit", correct <= limit, float(correct), float(limit),
                        "correct tagged guesses vs certified s_M")


def run_oracles(opts, seed: int, names=None) -> list[OracleResult]:
    names = list(ORACLES) if names is None else names
    out = []
    for i, name in enumerate(names):
        if name not in ORACLES:
            raise KeyError(f"unknown oracle {name!r}")
        rng = protocol.rng_for(seed, f"verify:{name}", i)
        fn = ORACLES[name]
        if name in ("coverage", "tag_exploit"):
            out.append(fn(opts, rng, seed=seed))
        else:
            out.append(fn(opts, rng))
    return out
