import math

import numpy as np
import pytest

from bb84cert import qmath, source
from bb84cert.discrimination import DiscriminationCurve, certify, s_M_sup


def _random_povms(rng, dim, count):
    """``count`` random three-outcome POVMs on ``dim`` dimensions, shape (count, 3, dim, dim)."""
    a = rng.normal(size=(count, 3, dim, dim)) + 1j * rng.normal(size=(count, 3, dim, dim))
    e = a @ np.conj(np.swapaxes(a, -1, -2))
    s = e.sum(axis=1)
    w, v = np.linalg.eigh(s)
    inv = (v * (1 / np.sqrt(w))[:, None, :]) @ np.conj(np.swapaxes(v, -1, -2))
    return inv[:, None] @ e @ inv[:, None]


def _ratio_and_rate(tau0, tau1, povms):
    g0 = np.einsum("ij,nji->n", tau0, povms[:, 0]).real
    g1 = np.einsum("ij,nji->n", tau1, povms[:, 1]).real
    tau = tau0 + tau1
    conc = np.einsum("ij,nji->n", tau, povms[:, 0] + povms[:, 1]).real
    return (g0 + g1) / conc, conc


def test_identical_states_give_prior():
    rho = qmath.random_density(2, np.random.default_rng(1))
    for p in (0.3, 0.7):
        curve = DiscriminationCurve(p * rho, (1 - p) * rho)
        assert curve.exact
        for pm in (0.1, 0.5, 1.0):
            assert curve(pm) == pytest.approx(max(p, 1 - p), abs=1e-9)


def test_orthogonal_states_are_perfect():
    t0 = 0.5 * qmath.projector(qmath.ket(1, 0))
    t1 = 0.5 * qmath.projector(qmath.ket(0, 1))
    assert DiscriminationCurve(t0, t1)(1.0) == pytest.approx(1.0)


def test_helstrom_value_forced_conclusive():
    t0 = 0.5 * qmath.projector(qmath.ket(1, 0))
    t1 = 0.5 * qmath.projector(qmath.ket(1, 1))
    cert = certify(t0, t1, 1.0)
    assert cert.certified
    assert cert.upper == pytest.approx(0.5 * (1 + 1 / math.sqrt(2)), abs=1e-6)
    assert cert.upper >= cert.lower - 1e-9


def test_unambiguous_limit():
    # two pure states at overlap c allow error-free guesses with conclusive rate 1 - c
    c = 1 / math.sqrt(2)
    t0 = 0.5 * qmath.projector(qmath.ket(1, 0))
    t1 = 0.5 * qmath.projector(qmath.ket(1, 1))
    assert certify(t0, t1, 0.5 * (1 - c)).upper == pytest.approx(1.0, abs=1e-5)


@pytest.mark.parametrize("seed", range(4))
def test_certified_value_dominates_random_povms(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.3, 0.7)
    t0 = p * qmath.random_density(2, rng)
    t1 = (1 - p) * qmath.random_density(2, rng)
    povms = _random_povms(rng, 2, 10_000)
    ratio, rate = _ratio_and_rate(t0, t1, povms)
    for pm in (0.2, 0.5, 0.8):
        feasible = rate >= pm
        if not feasible.any():
            continue
        cert = certify(t0, t1, pm)
        assert cert.certified
        assert ratio[feasible].max() <= cert.value + 1e-9


def test_curve_is_conservative_and_monotone():
    rng = np.random.default_rng(7)
    t0 = 0.5 * qmath.random_density(2, rng)
    t1 = 0.5 * qmath.random_density(2, rng)
    curve = DiscriminationCurve(t0, t1, grid_size=9)
    ps = np.linspace(0.05, 1.0, 12)
    vals = curve(ps)
    assert np.all(np.diff(vals) <= 1e-12)
    for p, v in zip(ps[::4], vals[::4]):
        # the curve must dominate the primal (achievable) value at every floor
        assert v >= certify(t0, t1, float(p)).lower - 1e-9


def test_infeasible_floor_rejected():
    curve = DiscriminationCurve(0.5 * np.eye(2) / 2, 0.5 * np.eye(2) / 2)
    with pytest.raises(ValueError):
        curve(1.5)


def test_coherent_tags_are_exact():
    _, dec = source.coherent_source(0.1)
    for a in (0, 1):
        curve = DiscriminationCurve(*dec.tagged_ops(a))
        assert curve.exact
        assert s_M_sup(dec, a, 1.0) == pytest.approx(float(curve(1.0)))
