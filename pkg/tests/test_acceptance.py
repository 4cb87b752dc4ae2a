"""Acceptance criteria, one test each, at the stated tolerances.

Every test records a one-line PASS/FAIL verdict; ``conftest.py`` prints the
collected lines at the end of the run.  Running this file directly prints
them too.
"""

import math
import pathlib
import time
from fractions import Fraction

import numpy as np
import pytest

from bb84cert import bounds, cli, config, extract, protocol, source, verify
from bb84cert.config import VerifyBlock

ROOT = pathlib.Path(__file__).resolve().parents[1]
VERDICTS: dict[int, str] = {}


def record(k: int, title: str, passed: bool, detail: str) -> None:
    VERDICTS[k] = f"criterion {k:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    print(VERDICTS[k])


def test_criterion_01_perfect_limit():
    an = source.analyze(source.ideal_source())
    # n_T is left open; 2e6 keeps c * eps_T_e below one at delta_p = 1e-3
    counts = bounds.ProtocolCounts.balanced(n_K=10 ** 6, n_T=2 * 10 ** 6, n_T_e=100_000)
    t0 = time.perf_counter()
    rep = bounds.key_bound(counts, bounds.BoundParams(delta_p=1e-3, c=1e6), an)
    elapsed = time.perf_counter() - t0
    target = 1 - bounds.binary_entropy(0.05 + 1e-3)
    got = rep.R_L_minus / counts.n_K
    printed = bounds.binary_entropy(0.05)
    ok = abs(got - target) <= 0.02 and elapsed < 1.0
    record(1, "perfect limit", ok,
           f"R_L/n_K={got:.5f} vs 1-h(p+dp)={target:.5f} (|diff|={abs(got - target):.4f} <= 0.02), "
           f"printed limit h(p)={printed:.5f} differs, {elapsed:.3f}s")
    assert ok


def test_criterion_02_helstrom():
    opts = VerifyBlock(helstrom_pairs=200, helstrom_grid=10_000, tolerance=1e-3)
    t0 = time.perf_counter()
    res = verify.helstrom_oracle(opts, np.random.default_rng(2))
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 30
    record(2, "Helstrom oracle", ok, f"max gap {res.measured:.2e} <= 1e-3 over 200 pairs, {elapsed:.1f}s")
    assert ok


def test_criterion_03_distance_inequality():
    res = verify.distance_oracle(VerifyBlock(distance_pairs=1000, tolerance=1e-9), np.random.default_rng(3))
    record(3, "d_T <= sqrt(1-F^2)", res.passed, f"max excess {res.measured:.2e} <= 1e-9 over 1000 pairs")
    assert res.passed


def test_criterion_04_binomial_sandwich():
    # exact log-space cumulative sum against rationals
    worst = 0.0
    for n in range(1, 21):
        for k in range(n + 1):
            for qn in range(1, 10):
                q = Fraction(qn, 10)
                exact = sum(Fraction(math.comb(n, i)) * q ** i * (1 - q) ** (n - i) for i in range(k + 1))
                val = bounds.binomial_sandwich(n, k, qn / 10)[2]
                worst = max(worst, abs(val - float(exact)) / float(exact))
    # the displayed inequalities, read literally as bounds on the cumulative probability
    violations, first = 0, None
    for n in range(1, 31):
        for k in range(n + 1):
            for qn in range(1, 10):
                q = qn / 10
                if k / n < q:
                    continue
                lower, upper, exact = bounds.binomial_sandwich(n, k, q)
                if lower > exact * (1 + 1e-12) or exact > upper * (1 + 1e-12):
                    violations += 1
                    first = first or (n, k, q, lower, exact)
    ok = worst <= 1e-12 and violations == 0
    detail = f"rational match rel err {worst:.1e} <= 1e-12; literal sandwich violated in {violations} cases"
    if first:
        n, k, q, lo, ex = first
        detail += f" (first: n={n}, k={k}, q={q}: lower {lo:.4g} > cdf {ex:.4g})"
    record(4, "binomial sandwich", ok, detail)
    assert ok


def test_criterion_05_gram_realization():
    cases = [("ideal", source.analyze(source.ideal_source()))]
    for mu in (0.1, 0.5):
        cases.append((f"mu={mu}", source.analyze(*source.coherent_source(mu))))
    worst = 0.0
    for _, an in cases:
        pur = an.pur
        kets = [pur.kets[al] for al in source.ALPHAS]
        ov = np.array([[np.vdot(u, v) for v in kets] for u in kets])
        worst = max(worst, float(np.max(np.abs(ov - pur.gram))))
        for st in pur.pure_states.values():
            worst = max(worst, abs(1 - np.trace(st @ st).real))
    ok = worst <= 1e-9
    record(5, "Gram realization", ok, f"max deviation {worst:.1e} <= 1e-9 for ideal, mu=0.1, mu=0.5")
    assert ok


def test_criterion_06_coverage():
    opts = VerifyBlock(coverage_sessions=200, coverage_N=20_000)
    t0 = time.perf_counter()
    res = verify.coverage_oracle(opts, None, seed=6)
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 300
    record(6, "mu_L coverage", ok, f"frequency {res.measured:.4f} <= {res.bound:.4f} ({res.detail}), {elapsed:.1f}s")
    assert ok


def test_criterion_07_attack_soundness():
    an = source.analyze(source.ideal_source())
    params = bounds.BoundParams()
    qbers, ms = [], []
    for i in range(5):
        cfg = protocol.ProtocolConfig(N=50_000, eve=protocol.EveStrategy("intercept_resend"), seed=7)
        rec = protocol.run_session(cfg, an.spec, an.dec, index=i)
        qbers.append(rec.qber)
        ms.append(bounds.key_bound(rec.counts(), params, an).m)
    honest = []
    for i in range(5):
        rec = protocol.run_session(protocol.ProtocolConfig(N=25_000, seed=7), an.spec, an.dec, index=i)
        counts = rec.counts()
        assert counts.n_K >= 10 ** 4 and counts.qber <= 0.02
        honest.append(bounds.key_bound(counts, params, an).m)
    ok = all(abs(q - 0.25) <= 0.01 for q in qbers) and all(m == 0 for m in ms) and all(m > 0 for m in honest)
    record(7, "attack soundness", ok,
           f"intercept-resend QBER {min(qbers):.4f}..{max(qbers):.4f}, m={ms}; honest m={honest}")
    assert ok


def test_criterion_08_leftover():
    opts = VerifyBlock(leftover_cases=100, leftover_hashes=1000)
    t0 = time.perf_counter()
    res = verify.leftover_oracle(opts, np.random.default_rng(8))
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 120
    record(8, "leftover bound", ok, f"max(measured - bound - 3 s.e.) = {res.measured:.4f} <= 0, {elapsed:.1f}s")
    assert ok


def test_criterion_09_universality():
    rng = np.random.default_rng(9)
    parts, ok = [], True
    for n, m in ((8, 4), (16, 8), (24, 16)):
        rate, bound, se = extract.universality_check(n, m, 100_000, rng)
        ok &= rate <= bound + 3 * se
        parts.append(f"({n},{m}) {rate:.2e}<= {bound + 3 * se:.2e}")
    record(9, "Toeplitz universality", ok, "; ".join(parts))
    assert ok


def _cli_bytes(tmp_path, cfg_path, name):
    out = tmp_path / name
    code = cli.main([config.load(str(cfg_path)).command, "--config", str(cfg_path), "--out", str(out)])
    return code, out.read_bytes()


def test_criterion_10_determinism(tmp_path):
    same, detail = True, []
    for cfg in ("perfect_rate.yaml", "simulate.yaml", "sweep_mu.yaml", "verify.yaml"):
        path = ROOT / "configs" / cfg
        c1, b1 = _cli_bytes(tmp_path, path, cfg + ".1")
        c2, b2 = _cli_bytes(tmp_path, path, cfg + ".2")
        identical = b1 == b2 and c1 == c2 and len(b1) > 0
        same &= identical
        detail.append(f"{cfg.split('.')[0]}={'same' if identical else 'DIFFERENT'}")
    record(10, "determinism", same, ", ".join(detail))
    assert same


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
