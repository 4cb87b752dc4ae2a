"""Monte-Carlo BB84 sessions on the source's signal space.

Every emission is one of a handful of classes (basis, bit, tag), each with
a density matrix.  An eavesdropping strategy turns a class into a
distribution over the states Bob actually receives.  Bob's detector is a
three-outcome POVM per basis, so a session reduces to a few categorical
draws per position and runs vectorized in numpy.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import qmath
from .bounds import ProtocolCounts
from .qmath import ValidationError, adjoint
from .source import ALPHAS, Decomposition, SignalLayout, SourceSpec, decompose

PHI = 2  # Bob's no-detection outcome
NEG_PROB_TOL = 1e-9

_PAULI_BASES = {
    0: (np.array([1, 0], complex), np.array([0, 1], complex)),
    1: (np.array([1, 1], complex) / np.sqrt(2), np.array([1, -1], complex) / np.sqrt(2)),
}


def rng_for(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Independent generator for a named component and index, derived from one seed."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode()), int(index)])
    return np.random.default_rng(ss)


def basis_projectors(b: int) -> tuple[np.ndarray, np.ndarray]:
    return tuple(qmath.projector(v) for v in _PAULI_BASES[b])


@dataclass(frozen=True)
class Detector:
    """Threshold detector with finite efficiency and dark counts.

    A ``k``-photon pulse clicks with probability ``1 - (1 - efficiency)^k``.
    A dark count turns a no-click into a uniformly random bit.  ``custom``
    may supply explicit POVMs ``{basis: [E0, E1, E_phi]}`` instead.
    """

    efficiency: float = 1.0
    dark_count: float = 0.0
    custom: Mapping[int, Sequence[np.ndarray]] | None = None

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1 or not 0 <= self.dark_count <= 1:
            raise ValidationError("detector efficiency and dark-count rate must lie in [0,1]")

    def povm(self, layout: SignalLayout, b: int, extra_loss: float = 0.0) -> list[np.ndarray]:
        if self.custom is not None:
            return [np.asarray(e, dtype=complex) for e in self.custom[b]]
        eta = self.efficiency * (1 - extra_loss)
        proj = basis_projectors(b)
        elems = [np.zeros((layout.dim, layout.dim), complex) for _ in range(3)]
        if layout.vacuum:
            elems[PHI][0, 0] = 1.0
        for k in range(1, layout.sectors + 1):
            click = 1 - (1 - eta) ** k
            s = layout.block(k)
            for y in (0, 1):
                elems[y][s, s] = click * proj[y]
            elems[PHI][s, s] = (1 - click) * np.eye(2)
        d = self.dark_count
        elems[0] = elems[0] + 0.5 * d * elems[PHI]
        elems[1] = elems[1] + 0.5 * d * elems[PHI]
        elems[PHI] = (1 - d) * elems[PHI]
        return elems

    def povms(self, layout: SignalLayout, extra_loss: float = 0.0) -> dict[int, list[np.ndarray]]:
        out = {b: qmath.check_povm(self.povm(layout, b, extra_loss)) for b in (0, 1)}
        if np.max(np.abs(out[0][PHI] - out[1][PHI])) > qmath.VALIDATION_TOL:
            raise ValidationError("no-detection element must be the same in both bases")
        return out


@dataclass(frozen=True)
class EveStrategy:
    """Eavesdropping strategy.

    ``kind`` is one of ``none``, ``passive``, ``intercept_resend`` or
    ``tag_exploit``.  ``loss`` and ``depolarizing`` describe the channel
    between Eve and Bob and apply to every kind.  ``basis_policy`` (``random``,
    ``z`` or ``x``) selects the intercept-resend measurement basis.
    """

    kind: str = "none"
    loss: float = 0.0
    depolarizing: float = 0.0
    basis_policy: str = "random"

    def __post_init__(self):
        if self.kind not in ("none", "passive", "intercept_resend", "tag_exploit"):
            raise ValidationError(f"unknown Eve strategy {self.kind!r}")
        if not 0 <= self.loss <= 1 or not 0 <= self.depolarizing <= 1:
            raise ValidationError("loss and depolarizing must lie in [0,1]")
        if self.basis_policy not in ("random", "z", "x"):
            raise ValidationError(f"unknown basis policy {self.basis_policy!r}")


@dataclass(frozen=True)
class ProtocolConfig:
    N: int
    alice_probs: Mapping[tuple[int, int], float] | None = None
    bob_basis_probs: tuple[float, float] = (0.5, 0.5)
    detector: Detector = field(default_factory=Detector)
    eve: EveStrategy = field(default_factory=EveStrategy)
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.N < 0:
            raise ValidationError("N must be non-negative")
        if not 0 < self.test_fraction < 1:
            raise ValidationError("test_fraction must lie in (0,1)")
        pb = np.asarray(self.bob_basis_probs, float)
        if np.any(pb < 0) or abs(pb.sum() - 1) > 1e-9:
            raise ValidationError("Bob's basis probabilities must be a distribution")


@dataclass
class SessionRecord:
    """One simulated run.  Sets are sorted index arrays into the ``N`` positions."""

    a: np.ndarray
    x: np.ndarray
    b: np.ndarray
    y: np.ndarray
    tags: np.ndarray
    D: np.ndarray
    C: np.ndarray
    T: np.ndarray
    K: np.ndarray
    L: np.ndarray
    M: np.ndarray
    n_T_e: int
    eve_guess: np.ndarray | None = None
    seed: int = 0
    index: int = 0
    recon_leak: float = 0.0
    recon_converged: bool = True
    key: np.ndarray | None = None
    hash_seed: np.ndarray | None = None

    @property
    def N(self) -> int:
        return len(self.a)

    @property
    def qber(self) -> float:
        return self.n_T_e / len(self.T) if len(self.T) else 0.0

    @property
    def p_e_L(self) -> float:
        """True error rate on the untagged key positions."""
        if len(self.L) == 0:
            return 0.0
        return float(np.mean(self.x[self.L] != self.y[self.L]))

    def counts(self, collapse_bob_mode: bool = False) -> ProtocolCounts:
        bc = {}
        for name, idx in (("D", self.D), ("C", self.C), ("T", self.T)):
            n1 = int(np.sum(self.a[idx] == 1))
            bc[(name, 0)], bc[(name, 1)] = len(idx) - n1, n1
        n1 = int(np.sum(self.a == 1))
        bc[("A", 0)], bc[("A", 1)] = self.N - n1, n1
        return ProtocolCounts(self.N, len(self.D), len(self.C), len(self.T), len(self.K),
                              self.n_T_e, bc, collapse_bob_mode)

    def n_M(self) -> tuple[int, int]:
        n1 = int(np.sum(self.a[self.M] == 1))
        return len(self.M) - n1, n1

    def eve_accuracy_on_M(self) -> tuple[int, int]:
        """(correct guesses, guesses) of Eve on the tagged key positions."""
        if self.eve_guess is None:
            return 0, 0
        g = self.eve_guess[self.M]
        made = g >= 0
        return int(np.sum(g[made] == self.x[self.M][made])), int(np.sum(made))

    def summary(self) -> dict:
        n_M = self.n_M()
        out = {
            "seed": int(self.seed), "index": int(self.index), "N": self.N,
            "n_D": len(self.D), "n_C": len(self.C), "n_T": len(self.T), "n_K": len(self.K),
            "n_T_e": int(self.n_T_e), "qber": self.qber, "n_L": len(self.L),
            "n_M0": n_M[0], "n_M1": n_M[1], "p_e_L": self.p_e_L,
            "recon_leak": float(self.recon_leak), "recon_converged": bool(self.recon_converged),
            "key_length": 0 if self.key is None else int(len(self.key)),
        }
        if self.key is not None:
            from .extract import bits_to_hex
            out["key_hex"] = bits_to_hex(self.key)
            out["hash_seed_hex"] = bits_to_hex(self.hash_seed) if self.hash_seed is not None else ""
        return out

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


# ---------------------------------------------------------------- channel

@dataclass
class _Channel:
    """Per emission class, a distribution over states handed to Bob and Eve's guess."""

    trans: np.ndarray           # [class, out] probabilities
    out_states: list            # density matrices seen by Bob
    guess: np.ndarray | None    # [class, out] Eve's bit guess or -1


def _depolarize(rho: np.ndarray, layout: SignalLayout, q: float) -> np.ndarray:
    if q == 0:
        return rho
    out = rho.copy()
    for k in range(1, layout.sectors + 1):
        s = layout.block(k)
        blk = rho[s, s]
        out[s, s] = (1 - q) * blk + q * np.trace(blk) * np.eye(2) / 2
        # coherences between sectors shrink with the polarization
        for j in range(1, layout.sectors + 1):
            if j != k:
                out[s, layout.block(j)] = (1 - q) * rho[s, layout.block(j)]
    if layout.vacuum:
        for k in range(1, layout.sectors + 1):
            s = layout.block(k)
            out[0, s] = (1 - q) * rho[0, s]
            out[s, 0] = (1 - q) * rho[s, 0]
    return out


def _identity_channel(states):
    n = len(states)
    return _Channel(np.eye(n), list(states), None)


def _intercept_resend(states, classes, layout: SignalLayout, policy: str) -> _Channel:
    eve_bases = {"random": (0.5, 0.5), "z": (1.0, 0.0), "x": (0.0, 1.0)}[policy]
    # outputs: vacuum (if any) then the four resent single photons (e, outcome)
    outs, out_index = [], {}
    if layout.vacuum:
        out_index["vac"] = len(outs)
        outs.append(qmath.projector(layout.vacuum_ket()))
    for e in (0, 1):
        for o in (0, 1):
            out_index[(e, o)] = len(outs)
            outs.append(qmath.projector(layout.embed(1, _PAULI_BASES[e][o])))
    trans = np.zeros((len(states), len(outs)))
    guess = np.full((len(states), len(outs)), -1, dtype=np.int8)
    for c, rho in enumerate(states):
        if layout.vacuum:
            trans[c, out_index["vac"]] = rho[0, 0].real
        for e in (0, 1):
            proj = basis_projectors(e)
            for o in (0, 1):
                p = sum(np.trace(rho[layout.block(k), layout.block(k)] @ proj[o]).real
                        for k in range(1, layout.sectors + 1))
                trans[c, out_index[(e, o)]] += eve_bases[e] * p
                if classes[c][0] == e:
                    guess[c, out_index[(e, o)]] = o
    return _Channel(_normalize_rows(trans), outs, guess)


def _discrimination_basis(tau0: np.ndarray, tau1: np.ndarray) -> np.ndarray:
    """Measurement basis used by Eve on tagged emissions of one basis."""
    if np.max(np.abs(tau0 @ tau1 - tau1 @ tau0)) <= 1e-12:
        # a generic combination separates every common eigenspace
        h = tau0 + 0.5 * (1 + 5 ** 0.5) * tau1
        _, u = np.linalg.eigh(0.5 * (h + adjoint(h)))
        return u
    _, u = np.linalg.eigh(0.5 * ((tau0 - tau1) + adjoint(tau0 - tau1)))
    return u


def _tag_exploit(states, classes, dec: Decomposition) -> _Channel:
    """Eve measures every tagged emission in the best basis for its (known) basis
    and forwards the post-measurement eigenvector; untagged emissions pass."""
    outs = list(states)
    rows = [[(c, 1.0, -1)] for c in range(len(states))]
    for a in (0, 1):
        tau0, tau1 = dec.tagged_ops(a)
        u = _discrimination_basis(tau0, tau1)
        base = len(outs)
        for j in range(u.shape[1]):
            outs.append(qmath.projector(u[:, j]))
        for c, (ca, cx, ct) in enumerate(classes):
            if ct != 1 or ca != a:
                continue
            rows[c] = []
            for j in range(u.shape[1]):
                v = u[:, j]
                p = float(np.real(v.conj() @ states[c] @ v))
                g0 = float(np.real(v.conj() @ tau0 @ v))
                g1 = float(np.real(v.conj() @ tau1 @ v))
                rows[c].append((base + j, p, 0 if g0 >= g1 else 1))
    trans = np.zeros((len(states), len(outs)))
    guess = np.full((len(states), len(outs)), -1, dtype=np.int8)
    for c, row in enumerate(rows):
        for j, p, g in row:
            trans[c, j] += max(p, 0.0)
            guess[c, j] = g
    return _Channel(_normalize_rows(trans), outs, guess)


def _normalize_rows(t: np.ndarray) -> np.ndarray:
    s = t.sum(axis=1, keepdims=True)
    return np.where(s > 0, t / np.where(s > 0, s, 1), 0)


def _categorical(cum_rows: np.ndarray, which: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized inverse-CDF draw: row ``cum_rows[which[i]]`` with uniform ``u[i]``."""
    out = np.empty(len(which), dtype=np.int64)
    for r in np.unique(which):
        sel = which == r
        out[sel] = np.minimum(np.searchsorted(cum_rows[r], u[sel], side="right"), cum_rows.shape[1] - 1)
    return out


def outcome_probabilities(rho: np.ndarray, povm: Sequence[np.ndarray]) -> np.ndarray:
    p = np.array([np.trace(rho @ e).real for e in povm])
    if np.min(p) < -NEG_PROB_TOL:
        raise FloatingPointError(f"negative outcome probability {np.min(p):.3e}")
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def measure_bob(state: np.ndarray, basis: int, detector: Detector, rng: np.random.Generator,
                layout: SignalLayout | None = None) -> int:
    """One outcome in ``{0, 1, PHI}`` from Bob's POVM for ``basis``."""
    state = np.asarray(state, dtype=complex)
    layout = layout or SignalLayout(False, state.shape[0] // 2)
    p = outcome_probabilities(state, detector.povms(layout)[basis])
    return int(rng.choice(3, p=p))


# ---------------------------------------------------------------- session

def sift(a: np.ndarray, b: np.ndarray, y: np.ndarray, test_fraction: float,
         rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Detected, sifted, test and key index sets; ``T`` is a uniform random subset of ``C``."""
    a, b, y = np.asarray(a), np.asarray(b), np.asarray(y)
    if not len(a) == len(b) == len(y):
        raise ValidationError("strings must have equal length")
    D = np.flatnonzero(y != PHI)
    C = D[a[D] == b[D]]
    n_T = int(round(test_fraction * len(C)))
    T = np.sort(rng.permutation(C)[:n_T]) if len(C) else C
    K = np.setdiff1d(C, T, assume_unique=True)
    return D, C, T, K


def count_errors(x_T: np.ndarray, y_T: np.ndarray) -> int:
    x_T, y_T = np.asarray(x_T), np.asarray(y_T)
    if np.any(y_T == PHI):
        raise ValidationError("test positions must all be detected")
    return int(np.sum(x_T != y_T))


def _emission_classes(dec: Decomposition):
    classes, states, weights = [], [], []
    for (a, x) in ALPHAS:
        for t, comp in ((0, dec.comp0[(a, x)]), (1, dec.comp1[(a, x)])):
            classes.append((a, x, t))
            states.append(np.asarray(comp.state, dtype=complex))
            weights.append(dec.probs[(a, x)] * comp.weight)
    return classes, states, np.array(weights)


def run_session(cfg: ProtocolConfig, spec: SourceSpec, dec: Decomposition | None = None,
                index: int = 0) -> SessionRecord:
    """Simulate one BB84 run; identical ``(cfg, index)`` give identical records."""
    dec = decompose(spec) if dec is None else dec
    if cfg.alice_probs is not None:
        for al in ALPHAS:
            if abs(cfg.alice_probs[al] - spec.probs[al]) > 1e-12:
                raise ValidationError("alice_probs disagree with the source's emission probabilities")
    layout = spec.layout or SignalLayout(False, spec.dim // 2)
    classes, states, weights = _emission_classes(dec)
    eve = cfg.eve
    if eve.kind == "intercept_resend":
        chan = _intercept_resend(states, classes, layout, eve.basis_policy)
    elif eve.kind == "tag_exploit":
        chan = _tag_exploit(states, classes, dec)
    else:
        chan = _identity_channel(states)
    povms = cfg.detector.povms(layout, extra_loss=eve.loss)
    bob_table = np.array([[outcome_probabilities(_depolarize(s, layout, eve.depolarizing), povms[b])
                           for b in (0, 1)] for s in chan.out_states])

    N = cfg.N
    r_alice = rng_for(cfg.seed, "alice", index)
    r_bob = rng_for(cfg.seed, "bob", index)
    r_eve = rng_for(cfg.seed, "eve", index)
    cls = _categorical(np.cumsum(weights / weights.sum())[None, :], np.zeros(N, np.int64),
                       r_alice.random(N))
    cls_arr = np.array(classes, dtype=np.int8).reshape(-1, 3)
    a, x, tags = cls_arr[cls, 0], cls_arr[cls, 1], cls_arr[cls, 2]
    b = (r_bob.random(N) >= cfg.bob_basis_probs[0]).astype(np.int8)
    out = _categorical(np.cumsum(chan.trans, axis=1), cls, r_eve.random(N))
    guess = chan.guess[cls, out].astype(np.int8) if chan.guess is not None else None
    cum_bob = np.cumsum(bob_table, axis=2).reshape(-1, 3)
    y = _categorical(cum_bob, out * 2 + b, r_bob.random(N)).astype(np.int8)

    D, C, T, K = sift(a, b, y, cfg.test_fraction, rng_for(cfg.seed, "sift", index))
    n_T_e = count_errors(x[T], y[T])
    L = K[tags[K] == 0]
    M = K[tags[K] == 1]
    return SessionRecord(a, x, b, y, tags, D, C, T, K, L, M, n_T_e, guess, cfg.seed, index)


def run_batch(cfg: ProtocolConfig, spec: SourceSpec, dec: Decomposition | None, sessions: int,
              workers: int = 1) -> list[SessionRecord]:
    """Independent sessions ``0..sessions-1``, returned in index order."""
    dec = decompose(spec) if dec is None else dec
    if workers <= 1:
        return [run_session(cfg, spec, dec, i) for i in range(sessions)]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda i: run_session(cfg, spec, dec, i), range(sessions)))


def outcome_table(cfg: ProtocolConfig, spec: SourceSpec, dec: Decomposition | None = None) -> np.ndarray:
    """``P[a, x, b, y]`` for one position, averaged over tags and Eve's outcomes."""
    dec = decompose(spec) if dec is None else dec
    layout = spec.layout or SignalLayout(False, spec.dim // 2)
    classes, states, weights = _emission_classes(dec)
    eve = cfg.eve
    if eve.kind == "intercept_resend":
        chan = _intercept_resend(states, classes, layout, eve.basis_policy)
    elif eve.kind == "tag_exploit":
        chan = _tag_exploit(states, classes, dec)
    else:
        chan = _identity_channel(states)
    povms = cfg.detector.povms(layout, extra_loss=eve.loss)
    bob = np.array([[outcome_probabilities(_depolarize(s, layout, eve.depolarizing), povms[b])
                     for b in (0, 1)] for s in chan.out_states])
    table = np.zeros((2, 2, 2, 3))
    pb = np.asarray(cfg.bob_basis_probs, float)
    for c, (a, x, _) in enumerate(classes):
        recv = chan.trans[c] @ bob.reshape(len(chan.out_states), -1)
        table[a, x] += weights[c] * pb[:, None] * recv.reshape(2, 3)
    return table / table.sum()


def expected_counts(cfg: ProtocolConfig, spec: SourceSpec, dec: Decomposition | None = None) -> ProtocolCounts:
    """Counts of a typical session (expectations rounded down), free of sampling noise."""
    P = outcome_table(cfg, spec, dec)
    N = cfg.N
    bc, n_T_e = {}, 0
    for a in (0, 1):
        pa = P[a].sum()
        det = P[a, :, :, :2].sum()
        sift_p = P[a, :, a, :2].sum()
        err = P[a, 0, a, 1] + P[a, 1, a, 0]
        bc[("A", a)] = int(round(N * pa))
        bc[("D", a)] = min(int(N * det), bc[("A", a)])
        bc[("C", a)] = min(int(N * sift_p), bc[("D", a)])
        bc[("T", a)] = int(round(cfg.test_fraction * bc[("C", a)]))
        if sift_p > 0:
            n_T_e += int(bc[("T", a)] * err / sift_p)
    bc[("A", 1)] = N - bc[("A", 0)]
    for s in ("D", "C", "T"):
        for a in (0, 1):
            bc[(s, a)] = min(bc[(s, a)], bc[("A", a)] if s == "D" else bc[({"C": "D", "T": "C"}[s], a)])
    tot = {s: bc[(s, 0)] + bc[(s, 1)] for s in ("D", "C", "T")}
    return ProtocolCounts(N, tot["D"], tot["C"], tot["T"], tot["C"] - tot["T"], min(n_T_e, tot["T"]), bc)
