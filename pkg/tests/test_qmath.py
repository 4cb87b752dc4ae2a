import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bb84cert import qmath

seeds = st.integers(0, 2 ** 32 - 1)
dims = st.integers(2, 4)


def _pair(seed, d):
    r = np.random.default_rng(seed)
    return qmath.random_density(d, r), qmath.random_density(d, r, rank=1)


def test_known_values():
    zero = qmath.projector(qmath.ket(1, 0))
    plus = qmath.projector(qmath.ket(1, 1))
    assert qmath.fidelity(zero, plus) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert qmath.trace_distance(zero, plus) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert qmath.trace_distance(zero, np.eye(2) / 2) == pytest.approx(0.5)
    assert qmath.fidelity(zero, zero) == pytest.approx(1.0)
    assert qmath.variation_distance([1, 0], [0.5, 0.5]) == pytest.approx(0.5)


def test_validation_errors():
    with pytest.raises(qmath.ValidationError):
        qmath.as_density(np.array([[1, 1], [0, 0]]))
    with pytest.raises(qmath.ValidationError):
        qmath.as_density(np.diag([1.5, -0.5]))
    with pytest.raises(qmath.ValidationError):
        qmath.trace_distance(np.eye(2) / 2, np.eye(3) / 3)
    with pytest.raises(qmath.ValidationError):
        qmath.variation_distance([0.5, 0.5], [1.0])
    with pytest.raises(qmath.ValidationError):
        qmath.check_povm([np.eye(2), np.eye(2)])


def test_eig_and_positive_part(rng):
    for _ in range(20):
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        x = a + qmath.adjoint(a)
        w, v = qmath.eig_hermitian(x)
        assert np.max(np.abs((v * w) @ qmath.adjoint(v) - x)) < 1e-9
        p = qmath.positive_part_projection(x)
        assert np.max(np.abs(p @ p - p)) < 1e-9
        best = np.trace(x @ p).real
        assert best == pytest.approx(w[w > 1e-12].sum(), abs=1e-9)
        for _ in range(10):
            k = int(rng.integers(0, 5))
            q, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
            proj = q[:, :k] @ qmath.adjoint(q[:, :k])
            assert np.trace(x @ proj).real <= best + 1e-9


@given(seeds, dims)
def test_distance_properties(seed, d):
    r = np.random.default_rng(seed)
    a, b, c = (qmath.random_density(d, r) for _ in range(3))
    dab = qmath.trace_distance(a, b)
    assert 0 <= dab <= 1
    assert dab == pytest.approx(qmath.trace_distance(b, a), abs=1e-12)
    assert dab <= qmath.trace_distance(a, c) + qmath.trace_distance(c, b) + 1e-9
    assert qmath.trace_distance(a, a) < 1e-12


@given(seeds, dims)
def test_fidelity_inequalities(seed, d):
    rho, sigma = _pair(seed, d)
    f = qmath.fidelity(rho, sigma)
    dt = qmath.trace_distance(rho, sigma)
    assert 0 <= f <= 1
    assert 1 - f <= dt + 1e-9
    assert dt <= math.sqrt(max(1 - f * f, 0)) + 1e-9


@given(seeds)
def test_pure_fidelity_is_overlap(seed):
    r = np.random.default_rng(seed)
    u, v = qmath.random_pure(3, r), qmath.random_pure(3, r)
    f = qmath.fidelity(qmath.projector(u), qmath.projector(v))
    assert f == pytest.approx(abs(np.vdot(u, v)), abs=1e-9)


@given(seeds)
def test_partial_trace_monotone(seed):
    r = np.random.default_rng(seed)
    rho, sigma = qmath.random_density(4, r), qmath.random_density(4, r)
    ra = qmath.partial_trace(rho, [2, 2], [0])
    sa = qmath.partial_trace(sigma, [2, 2], [0])
    assert qmath.trace_distance(ra, sa) <= qmath.trace_distance(rho, sigma) + 1e-9


def test_partial_trace_of_product(rng):
    a, b = qmath.random_density(2, rng), qmath.random_density(3, rng)
    ab = qmath.tensor_product([a, b])
    assert np.allclose(qmath.partial_trace(ab, [2, 3], [0]), a)
    assert np.allclose(qmath.partial_trace(ab, [2, 3], [1]), b)


@given(seeds, st.integers(2, 6))
def test_psd_factor_round_trip(seed, k):
    r = np.random.default_rng(seed)
    vecs = [qmath.random_pure(3, r) for _ in range(k)]
    g = np.array([[np.vdot(u, v) for v in vecs] for u in vecs])
    c = qmath.psd_factor(g)
    assert np.max(np.abs(qmath.adjoint(c) @ c - g)) < 1e-9


def test_psd_factor_rejects_indefinite():
    with pytest.raises(qmath.NotPSDError):
        qmath.psd_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_bb84_gram_factor():
    kets = [qmath.bloch_state(t, p) for t, p in ((0, 0), (math.pi, 0), (math.pi / 2, 0), (math.pi / 2, math.pi))]
    g = np.array([[np.vdot(u, v) for v in kets] for u in kets])
    c = qmath.psd_factor(g)
    assert np.max(np.abs(qmath.adjoint(c) @ c - g)) < 1e-9
