import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bb84cert import qmath, source
from bb84cert.source import ALPHAS


def test_coherent_layout_dims():
    spec, _ = source.coherent_source(0.1)
    assert spec.dim == 1 + 2 * source.poisson_cutoff(0.1)
    spec5, _ = source.coherent_source(0.5)
    assert spec5.dim > spec.dim


@pytest.mark.parametrize("mu", [0.1, 0.5])
def test_coherent_decomposition(mu):
    spec, dec = source.coherent_source(mu)
    single = mu * math.exp(-mu)
    assert dec.p0 == pytest.approx(0.25 * single, rel=1e-9)
    for al in ALPHAS:
        c0, c1 = dec.comp0[al], dec.comp1[al]
        assert c0.weight + c1.weight == pytest.approx(1.0, abs=1e-9)
        assert spec.probs[al] * c0.weight == pytest.approx(dec.p0, abs=1e-9)
        assert np.max(np.abs(dec.recombine(al) - spec.states[al])) < 1e-9
    for a in (0, 1):
        assert dec.tagged_weight(a) == pytest.approx(1 - single, rel=1e-9)


def test_decompose_rejects_bad_p0():
    spec = source.ideal_source()
    with pytest.raises(qmath.ValidationError):
        source.decompose(spec, p0=0.3)


def test_decompose_rejects_non_psd_residual():
    spec = source.ideal_source()
    wrong = {al: qmath.projector(qmath.ket(0, 1)) for al in ALPHAS}
    with pytest.raises(source.InvalidDecompositionError):
        source.decompose(spec, p0=0.2, tag_states=wrong)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.95))
def test_random_decomposition_recombines(seed, w):
    r = np.random.default_rng(seed)
    rho0 = {al: qmath.random_density(2, r) for al in ALPHAS}
    rho1 = {al: qmath.random_density(2, r) for al in ALPHAS}
    states = {al: w * rho0[al] + (1 - w) * rho1[al] for al in ALPHAS}
    spec = source.SourceSpec(states, {al: 0.25 for al in ALPHAS})
    dec = source.decompose(spec, p0=0.25 * w, tag_states=rho0)
    for al in ALPHAS:
        assert np.max(np.abs(dec.comp1[al].state - rho1[al])) < 1e-8
        assert np.max(np.abs(dec.recombine(al) - states[al])) < 1e-9


@pytest.mark.parametrize("make", [
    lambda: source.analyze(source.ideal_source()),
    lambda: source.analyze(*source.coherent_source(0.1)),
    lambda: source.analyze(*source.coherent_source(0.5)),
])
def test_gram_realization(make):
    an = make()
    pur = an.pur
    for i, al in enumerate(ALPHAS):
        assert np.trace(pur.pure_states[al] @ pur.pure_states[al]).real == pytest.approx(1.0, abs=1e-9)
        for j, be in enumerate(ALPHAS):
            ov = np.vdot(pur.kets[al], pur.kets[be])
            assert abs(ov - pur.gram[i, j]) < 1e-9


def test_ideal_model_is_exact():
    an = source.analyze(source.ideal_source())
    assert max(an.model.per_state_dist.values()) == 0.0
    assert an.model.avg_dist_single == 0.0
    nu, dt = source.asymmetry_bounds(an.model, 10 ** 6)
    assert nu == 0.0 and dt == 0.0
    for a in (0, 1):
        assert np.allclose(an.model.sigma[(a, 0)] + an.model.sigma[(a, 1)], np.eye(2))


def test_noisy_source_needs_fit():
    spec = source.ideal_source(noise=0.05)
    an = source.analyze(spec, strategy="dominant-subspace")
    assert max(an.model.per_state_dist.values()) > 0
    nu1, _ = source.asymmetry_bounds(an.model, 10)
    nu2, _ = source.asymmetry_bounds(an.model, 1000)
    assert 0 <= nu1 <= nu2 <= 1


def test_misaligned_source_has_asymmetry():
    angles = ((0.0, 0.0), (math.pi, 0.0), (math.pi / 2 + 0.1, 0.0), (math.pi / 2 + 0.1, math.pi))
    an = source.analyze(source.ideal_source(angles=angles), strategy="dominant-subspace")
    _, dt = source.asymmetry_bounds(an.model, np.array([0, 10, 1000]))
    assert dt[0] == 0.0 and 0 < dt[1] < dt[2] <= 1


def test_bad_pairing_rejected():
    dec = source.decompose(source.ideal_source())
    with pytest.raises(source.MalformedPairingError):
        source.build_gram(dec, pairings={((0, 0), (0, 0)): [1]})


def test_poisson_cutoff_tail():
    from scipy import stats
    k = source.poisson_cutoff(0.5)
    assert stats.poisson.sf(k, 0.5) < 1e-12 <= stats.poisson.sf(k - 1, 0.5)
