import json
import math

import numpy as np
import pytest

from bb84cert import bounds, protocol, qmath, source
from bb84cert.protocol import PHI, Detector, EveStrategy, ProtocolConfig


@pytest.fixture(scope="module")
def ideal():
    return source.analyze(source.ideal_source())


def test_ideal_channel_has_no_errors(ideal):
    rec = protocol.run_session(ProtocolConfig(N=20_000, seed=3), ideal.spec, ideal.dec)
    assert rec.n_T_e == 0 and rec.qber == 0.0
    assert np.all(rec.x[rec.K] == rec.y[rec.K])
    assert len(rec.D) == 20_000
    assert abs(len(rec.C) / 20_000 - 0.5) < 0.02


def test_sets_are_consistent(ideal):
    rec = protocol.run_session(ProtocolConfig(N=5000, detector=Detector(0.4), seed=1), ideal.spec, ideal.dec)
    assert np.all(rec.y[rec.D] != PHI)
    assert np.all(rec.a[rec.C] == rec.b[rec.C])
    assert len(np.intersect1d(rec.T, rec.K)) == 0
    assert np.array_equal(np.union1d(rec.T, rec.K), rec.C)
    assert len(rec.T) == round(0.1 * len(rec.C))
    counts = rec.counts()
    assert counts.n_K == len(rec.K) and counts.n_T_e == rec.n_T_e


def test_intercept_resend_qber(ideal):
    rec = protocol.run_session(ProtocolConfig(N=100_000, eve=EveStrategy("intercept_resend"), seed=5),
                               ideal.spec, ideal.dec)
    assert abs(rec.qber - 0.25) < 0.01


def test_depolarizing_qber(ideal):
    rec = protocol.run_session(ProtocolConfig(N=100_000, eve=EveStrategy("passive", depolarizing=0.1),
                                              test_fraction=0.5, seed=5), ideal.spec, ideal.dec)
    assert abs(rec.qber - 0.05) < 0.006


def test_detector_efficiency(ideal):
    rec = protocol.run_session(ProtocolConfig(N=50_000, detector=Detector(0.5), seed=2), ideal.spec, ideal.dec)
    assert abs(len(rec.D) / 50_000 - 0.5) < 0.01


def test_determinism(ideal):
    cfg = ProtocolConfig(N=5000, eve=EveStrategy("passive", depolarizing=0.05), seed=42)
    a = protocol.run_session(cfg, ideal.spec, ideal.dec, index=3)
    b = protocol.run_session(cfg, ideal.spec, ideal.dec, index=3)
    c = protocol.run_session(cfg, ideal.spec, ideal.dec, index=4)
    assert a.to_json() == b.to_json()
    assert a.to_json() != c.to_json()
    json.loads(a.to_json())


def test_batch_matches_sessions(ideal):
    cfg = ProtocolConfig(N=2000, seed=9)
    batch = protocol.run_batch(cfg, ideal.spec, ideal.dec, 3, workers=2)
    for i, rec in enumerate(batch):
        assert rec.to_json() == protocol.run_session(cfg, ideal.spec, ideal.dec, i).to_json()


def test_povm_validity():
    spec, _ = source.coherent_source(0.5)
    povms = Detector(0.3, dark_count=0.01).povms(spec.layout)
    for b in (0, 1):
        assert np.allclose(sum(povms[b]), np.eye(spec.dim))
        for e in povms[b]:
            assert qmath.is_psd(e)
    assert np.allclose(povms[0][PHI], povms[1][PHI])


def test_negative_probability_raises():
    povm = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0]), np.zeros((2, 2))]
    with pytest.raises(FloatingPointError):
        protocol.outcome_probabilities(np.diag([1.1, -0.1]), povm)


def test_count_errors():
    x = np.array([0, 1, 1, 0])
    assert protocol.count_errors(x, x) == 0
    assert protocol.count_errors(x, 1 - x) == 4
    with pytest.raises(qmath.ValidationError):
        protocol.count_errors(x, np.array([0, 1, PHI, 0]))


def test_measure_bob_is_reproducible():
    rho = qmath.projector(qmath.ket(1, 0))
    outs = [protocol.measure_bob(rho, 0, Detector(), np.random.default_rng(i)) for i in range(20)]
    assert set(outs) == {0}


def test_tag_exploit_wins_tagged_bits():
    spec, dec = source.coherent_source(0.5)
    cfg = ProtocolConfig(N=100_000, detector=Detector(0.2), eve=EveStrategy("tag_exploit"), seed=4)
    rec = protocol.run_session(cfg, spec, dec)
    correct, total = rec.eve_accuracy_on_M()
    assert total > 0 and correct == total
    assert rec.n_T_e == 0


def test_expected_counts_close_to_simulation():
    spec, dec = source.coherent_source(0.1)
    cfg = ProtocolConfig(N=200_000, detector=Detector(0.3), eve=EveStrategy("passive", depolarizing=0.04), seed=6)
    exp = protocol.expected_counts(cfg, spec, dec)
    rec = protocol.run_session(cfg, spec, dec)
    assert abs(exp.n_D - len(rec.D)) < 5 * math.sqrt(exp.n_D)
    assert abs(exp.n_C - len(rec.C)) < 5 * math.sqrt(exp.n_C)
    assert isinstance(exp, bounds.ProtocolCounts)


def test_invalid_configs():
    with pytest.raises(qmath.ValidationError):
        ProtocolConfig(N=10, test_fraction=1.5)
    with pytest.raises(qmath.ValidationError):
        EveStrategy("photon-number-magic")
    with pytest.raises(qmath.ValidationError):
        Detector(efficiency=1.2)
