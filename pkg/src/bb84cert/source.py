"""Characterized BB84 sources and the objects the key-length bound is built from.

A source emits one of four states ``rho[(a, x)]`` (basis ``a``, bit ``x``).
The bound needs

* a split of every emitted state into an untagged part and a tagged part
  (:func:`decompose`), where the untagged weight times the emission
  probability is the same constant for all four states;
* four pure states on a 4-dimensional space whose pairwise overlaps are a
  Gram matrix built from the untagged parts (:func:`build_gram`);
* qubit approximants ``sigma`` of those pure states with
  ``sigma[a,0] + sigma[a,1] = I`` (:func:`fit_qubit_model`);
* upper bounds on the two asymmetry terms that grow with block length
  (:func:`asymmetry_bounds`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import optimize, stats

from . import qmath
from .qmath import ValidationError, adjoint

ALPHAS: tuple[tuple[int, int], ...] = ((0, 0), (0, 1), (1, 0), (1, 1))
TAIL_TOL = 1e-12
RESIDUAL_TOL = 1e-8
# distances below this are rounding noise; raised to the n-th power they would swamp the bound
SNAP = 1e-13

# Bloch angles (theta, phi) of the ideal BB84 polarizations: |0>, |1>, |+>, |->.
IDEAL_ANGLES = ((0.0, 0.0), (math.pi, 0.0), (math.pi / 2, 0.0), (math.pi / 2, math.pi))


class InvalidDecompositionError(ValidationError):
    pass


class MalformedPairingError(ValidationError):
    pass


class InfeasibleOverlapError(ValidationError):
    pass


@dataclass(frozen=True)
class SignalLayout:
    """How the emission space splits into photon-number sectors.

    The space is an optional vacuum line followed by ``sectors`` copies of a
    polarization qubit, sector ``k`` holding ``k`` photons.  A plain qubit
    source is ``SignalLayout(vacuum=False, sectors=1)``.
    """

    vacuum: bool = False
    sectors: int = 1

    @property
    def dim(self) -> int:
        return int(self.vacuum) + 2 * self.sectors

    def block(self, k: int) -> slice:
        """Index range of the ``k``-photon polarization block (``k >= 1``)."""
        start = int(self.vacuum) + 2 * (k - 1)
        return slice(start, start + 2)

    def embed(self, k: int, pol: np.ndarray) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.block(k)] = pol
        return v

    def vacuum_ket(self) -> np.ndarray:
        if not self.vacuum:
            raise ValidationError("layout has no vacuum component")
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v

    def photon_numbers(self) -> np.ndarray:
        """Photon number attached to each basis index."""
        n = [0] if self.vacuum else []
        for k in range(1, self.sectors + 1):
            n += [k, k]
        return np.array(n)

    def polarization_op(self, op2: np.ndarray, vacuum_value: complex = 0.0) -> np.ndarray:
        """Apply a 2x2 operator blockwise on every photon sector."""
        m = np.zeros((self.dim, self.dim), dtype=complex)
        if self.vacuum:
            m[0, 0] = vacuum_value
        for k in range(1, self.sectors + 1):
            b = self.block(k)
            m[b, b] = op2
        return m


@dataclass(frozen=True)
class SourceSpec:
    states: Mapping[tuple[int, int], np.ndarray]
    probs: Mapping[tuple[int, int], float]
    layout: SignalLayout | None = None

    def __post_init__(self):
        if set(self.states) != set(ALPHAS) or set(self.probs) != set(ALPHAS):
            raise ValidationError("source needs all four (basis, bit) states and probabilities")
        dims = {np.shape(self.states[al]) for al in ALPHAS}
        if len(dims) != 1:
            raise ValidationError(f"source states differ in dimension: {sorted(dims)}")
        clean = {al: qmath.as_density(self.states[al], name=f"rho{al}") for al in ALPHAS}
        object.__setattr__(self, "states", clean)
        p = np.array([self.probs[al] for al in ALPHAS], dtype=float)
        if np.any(p <= 0) or np.any(p >= 1) or abs(p.sum() - 1) > 1e-9:
            raise ValidationError(f"emission probabilities must lie in (0,1) and sum to 1, got {p}")
        object.__setattr__(self, "probs", {al: float(self.probs[al]) for al in ALPHAS})
        if self.layout is not None and self.layout.dim != self.dim:
            raise ValidationError(f"layout dimension {self.layout.dim} != state dimension {self.dim}")

    @property
    def dim(self) -> int:
        return self.states[ALPHAS[0]].shape[0]


@dataclass(frozen=True)
class TagComponent:
    weight: float
    state: np.ndarray
    eigvals: np.ndarray = field(default=None)
    eigvecs: np.ndarray = field(default=None)


@dataclass(frozen=True)
class Decomposition:
    """Split of each emitted state into an untagged (0) and a tagged (1) part."""

    p0: float
    comp0: Mapping[tuple[int, int], TagComponent]
    comp1: Mapping[tuple[int, int], TagComponent]
    probs: Mapping[tuple[int, int], float]

    def tagged_weight(self, a: int) -> float:
        """Probability that a basis-``a`` emission is tagged."""
        num = sum(self.probs[(a, x)] * self.comp1[(a, x)].weight for x in (0, 1))
        den = sum(self.probs[(a, x)] for x in (0, 1))
        return num / den

    def tagged_priors(self, a: int) -> tuple[float, float]:
        """Bit priors among tagged emissions of basis ``a``; 0/0 is taken as 0."""
        w = [self.probs[(a, x)] * self.comp1[(a, x)].weight for x in (0, 1)]
        tot = sum(w)
        if tot <= 0:
            return 0.0, 0.0
        return w[0] / tot, w[1] / tot

    def tagged_ops(self, a: int) -> tuple[np.ndarray, np.ndarray]:
        """Prior-weighted tagged states ``p_hat[x] * rho1[a, x]``."""
        pr = self.tagged_priors(a)
        return tuple(pr[x] * self.comp1[(a, x)].state for x in (0, 1))

    def recombine(self, alpha) -> np.ndarray:
        c0, c1 = self.comp0[alpha], self.comp1[alpha]
        return c0.weight * c0.state + c1.weight * c1.state


def _fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate a ket so its largest-magnitude entry is real and positive."""
    i = int(np.argmax(np.abs(v) - 1e-12 * np.arange(len(v))))
    if abs(v[i]) == 0:
        return v
    return v * (abs(v[i]) / v[i])


def _eigen(state: np.ndarray, cutoff: float = 1e-15):
    w, v = qmath.eig_hermitian(state)
    keep = w > cutoff
    w = np.clip(w[keep], 0.0, None)
    v = np.column_stack([_fix_phase(v[:, i]) for i in np.flatnonzero(keep)]) if keep.any() else v[:, :0]
    return w, v


def _component(weight: float, state: np.ndarray, with_eigen: bool) -> TagComponent:
    st = qmath.as_density(state, tol=1e-9)
    if with_eigen:
        w, v = _eigen(st)
        return TagComponent(weight, st, w, v)
    return TagComponent(weight, st)


def decompose(spec: SourceSpec, p0: float | None = None, tag_states=None) -> Decomposition:
    """Split every ``rho[a,x]`` as ``w0 * rho0 + (1 - w0) * rho1`` with ``p[a,x] * w0 = p0``.

    Without ``tag_states`` the untagged and tagged parts both equal the
    emitted state, which is always a valid (if uninformative) split.
    """
    pmin = min(spec.probs.values())
    p0 = pmin if p0 is None else float(p0)
    if not (0 < p0 <= pmin + 1e-12):
        raise ValidationError(f"p0 must satisfy 0 < p0 <= min p[a,x] = {pmin}, got {p0}")
    comp0, comp1 = {}, {}
    for al in ALPHAS:
        rho = spec.states[al]
        w0 = min(p0 / spec.probs[al], 1.0)
        if tag_states is None:
            r0 = rho
            r1 = rho
        else:
            r0 = qmath.as_density(tag_states[al], name=f"untagged state {al}")
            if w0 >= 1.0 - 1e-12:
                r1 = r0
                if np.max(np.abs(r0 - rho)) > RESIDUAL_TOL:
                    raise InvalidDecompositionError(
                        f"{al}: full untagged weight requires rho0 == rho")
            else:
                r1 = (rho - w0 * r0) / (1.0 - w0)
                lo = np.linalg.eigvalsh(0.5 * (r1 + adjoint(r1)))[0]
                if lo < -RESIDUAL_TOL:
                    raise InvalidDecompositionError(
                        f"{al}: tagged residual is not PSD, smallest eigenvalue {lo:.3e}")
                r1 = _clip_state(r1)
        comp0[al] = _component(w0, r0, with_eigen=True)
        comp1[al] = _component(1.0 - w0, r1, with_eigen=False)
    dec = Decomposition(p0, comp0, comp1, dict(spec.probs))
    for al in ALPHAS:
        err = np.max(np.abs(dec.recombine(al) - spec.states[al]))
        if err > 1e-8:
            raise InvalidDecompositionError(f"{al}: recombination error {err:.3e}")
    return dec


def _clip_state(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + adjoint(m)))
    w = np.clip(w, 0.0, None)
    out = (v * w) @ adjoint(v)
    return out / np.trace(out).real


def qubit_source(pols: Mapping, probs: Mapping | None = None, noise: float = 0.0) -> SourceSpec:
    """Source emitting single-photon polarization states, optionally depolarized."""
    probs = probs or {al: 0.25 for al in ALPHAS}
    states = {}
    for al in ALPHAS:
        rho = qmath.projector(pols[al])
        states[al] = (1 - noise) * rho + noise * np.eye(2) / 2
    return SourceSpec(states, probs, SignalLayout(False, 1))


def ideal_source(probs: Mapping | None = None, angles=IDEAL_ANGLES, noise: float = 0.0) -> SourceSpec:
    pols = {al: qmath.bloch_state(*ang) for al, ang in zip(ALPHAS, angles)}
    return qubit_source(pols, probs, noise)


def poisson_cutoff(mu: float, tol: float = TAIL_TOL) -> int:
    """Smallest photon number ``K`` whose Poisson tail beyond ``K`` is below ``tol``."""
    k = 1
    while stats.poisson.sf(k, mu) >= tol:
        k += 1
    return k


def coherent_source(mu: float, cutoff: int | None = None, angles=IDEAL_ANGLES,
                    probs: Mapping | None = None) -> tuple[SourceSpec, Decomposition]:
    """Phase-randomized weak coherent pulses carrying BB84 polarizations.

    The untagged part of each state is its single-photon component; the
    tagged part collects vacuum and multi-photon emissions.
    """
    if mu <= 0:
        raise ValidationError("mean photon number must be positive")
    need = poisson_cutoff(mu)
    if cutoff is None:
        cutoff = need
    elif stats.poisson.sf(cutoff, mu) >= TAIL_TOL:
        raise ValidationError(f"cutoff {cutoff} leaves Poisson tail >= {TAIL_TOL}; need >= {need}")
    probs = probs or {al: 0.25 for al in ALPHAS}
    layout = SignalLayout(vacuum=True, sectors=cutoff)
    weights = stats.poisson.pmf(np.arange(cutoff + 1), mu)
    weights = weights / weights.sum()
    states, singles = {}, {}
    for al, ang in zip(ALPHAS, angles):
        pol = qmath.bloch_state(*ang)
        rho = weights[0] * qmath.projector(layout.vacuum_ket())
        for k in range(1, cutoff + 1):
            rho = rho + weights[k] * qmath.projector(layout.embed(k, pol))
        states[al] = rho
        singles[al] = layout.embed(1, pol)
    spec = SourceSpec(states, probs, layout)
    p0 = min(probs.values()) * weights[1]
    dec = decompose(spec, p0, {al: qmath.projector(singles[al]) for al in ALPHAS})
    comp0 = {al: TagComponent(c.weight, c.state, np.array([1.0]), singles[al][:, None])
             for al, c in dec.comp0.items()}
    return spec, Decomposition(dec.p0, comp0, dec.comp1, dec.probs)


@dataclass(frozen=True)
class Purification:
    pairings: Mapping
    ancilla_overlaps: Mapping
    gram: np.ndarray
    factor: np.ndarray
    pure_states: Mapping[tuple[int, int], np.ndarray]
    kets: Mapping[tuple[int, int], np.ndarray]


def build_gram(dec: Decomposition, pairings: Mapping | None = None,
               ancilla: Mapping | None = None) -> Purification:
    """Gram matrix of the untagged parts and four pure states realizing it.

    ``pairings[(alpha, beta)]`` maps eigenvector indices of ``alpha`` to those
    of ``beta`` (default: match by rank).  ``ancilla[alpha]`` holds one
    ancilla ket per eigenvector as columns (default: a single shared ket).
    """
    lam = {al: dec.comp0[al].eigvals for al in ALPHAS}
    vec = {al: dec.comp0[al].eigvecs for al in ALPHAS}
    pair_map, ov_map = {}, {}
    g = np.zeros((4, 4), dtype=complex)
    for i, al in enumerate(ALPHAS):
        for j, be in enumerate(ALPHAS):
            n_al = len(lam[al])
            if pairings is not None and (al, be) in pairings:
                mu = [int(t) for t in pairings[(al, be)]]
            else:
                mu = list(range(n_al))
            if al == be and mu != list(range(n_al)):
                raise MalformedPairingError(f"pairing of {al} with itself must be the identity")
            if len(mu) != n_al or len(set(mu)) != len(mu):
                raise MalformedPairingError(f"pairing {al}->{be} is not injective on {n_al} indices")
            pair_map[(al, be)] = tuple(mu)
            total = 0j
            for k, kb in enumerate(mu):
                if kb >= len(lam[be]):
                    continue
                ov = 1.0 + 0j
                if ancilla is not None:
                    ov = complex(np.vdot(ancilla[al][:, k], ancilla[be][:, kb]))
                ov_map[(al, k, be, kb)] = ov
                total += math.sqrt(lam[al][k] * lam[be][kb]) * np.vdot(vec[al][:, k], vec[be][:, kb]) * ov
            g[i, j] = total
    diag_err = np.max(np.abs(np.diag(g) - 1.0))
    if diag_err > 1e-6:
        raise MalformedPairingError(f"Gram diagonal deviates from 1 by {diag_err:.3e}")
    g = 0.5 * (g + adjoint(g))
    try:
        c = qmath.psd_factor(g)
    except qmath.NotPSDError as exc:
        raise InfeasibleOverlapError(f"pairings/ancillas give a non-PSD Gram matrix: {exc}") from exc
    kets, pure = {}, {}
    for i, al in enumerate(ALPHAS):
        col = c[:, i] / np.linalg.norm(c[:, i])
        kets[al] = col
        pure[al] = qmath.projector(col)
    return Purification(pair_map, ov_map, g, c, pure, kets)


@dataclass(frozen=True)
class QubitModel:
    sigma: Mapping[tuple[int, int], np.ndarray]
    embedding: np.ndarray
    rho_hat: Mapping[tuple[int, int], np.ndarray]
    per_state_dist: Mapping[tuple[int, int], float]
    sigma_fidelity: Mapping[tuple[int, int], float]
    avg_fidelity: float
    avg_dist_single: float

    def embedded(self, alpha) -> np.ndarray:
        v = self.embedding
        return v @ self.sigma[alpha] @ adjoint(v)


def dominant_subspace(pur: Purification) -> np.ndarray:
    total = sum(pur.pure_states[al] for al in ALPHAS)
    _, v = qmath.eig_hermitian(total)
    return v[:, :2]


def _check_completeness(sigma, tol: float = 1e-9) -> None:
    for a in (0, 1):
        dev = np.max(np.abs(sigma[(a, 0)] + sigma[(a, 1)] - np.eye(2)))
        if dev > tol:
            raise ValidationError(f"sigma[{a},0] + sigma[{a},1] deviates from I by {dev:.3e}")


def _pauli_state(r) -> np.ndarray:
    return qmath.qubit_from_bloch(r)


def _bloch_of(m: np.ndarray) -> np.ndarray:
    return np.array([2 * m[0, 1].real, -2 * m[0, 1].imag, (m[0, 0] - m[1, 1]).real])


def basis_fit_objective(r, v: np.ndarray, rho0: np.ndarray, rho1: np.ndarray) -> float:
    """Worse of the two trace distances for the Bloch vector ``r`` of one basis."""
    s0 = _pauli_state(r)
    s1 = np.eye(2) - s0
    return max(qmath.trace_distance(v @ s0 @ adjoint(v), rho0),
               qmath.trace_distance(v @ s1 @ adjoint(v), rho1))


def _to_ball(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    n = np.linalg.norm(u)
    return u if n <= 1 else u / n


def _fit_basis(v, rho0, rho1) -> np.ndarray:
    t0 = adjoint(v) @ rho0 @ v
    t1 = adjoint(v) @ rho1 @ v
    starts = [_to_ball(_bloch_of(t0 / max(np.trace(t0).real, 1e-15))),
              _to_ball(-_bloch_of(t1 / max(np.trace(t1).real, 1e-15))),
              _to_ball(0.5 * (_bloch_of(t0) - _bloch_of(t1)))]
    best, best_val = None, np.inf
    f = lambda u: basis_fit_objective(_to_ball(u), v, rho0, rho1)
    for s in starts:
        res = optimize.minimize(f, s, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
        if res.fun < best_val:
            best, best_val = _to_ball(res.x), res.fun
    return best


def fit_qubit_model(pur: Purification, strategy: str = "canonical", sigma: Mapping | None = None,
                    embedding: np.ndarray | None = None) -> QubitModel:
    """Choose qubit approximants ``sigma`` of the four pure states.

    ``canonical`` requires the pure states to already live on a plane and
    satisfy the completeness relation; ``dominant-subspace`` projects onto
    the top two principal directions and, basis by basis, minimizes the
    worse trace distance over Bloch vectors; ``user`` takes ``sigma`` as given.
    """
    v = dominant_subspace(pur) if embedding is None else np.asarray(embedding, dtype=complex)
    if v.shape != (4, 2) or np.max(np.abs(adjoint(v) @ v - np.eye(2))) > 1e-9:
        raise ValidationError("embedding must be a 4x2 isometry")
    rho_hat = pur.pure_states
    if strategy == "canonical":
        sig = {}
        for al in ALPHAS:
            t = adjoint(v) @ rho_hat[al] @ v
            if np.trace(t).real < 1 - 1e-9:
                raise ValidationError("canonical choice needs the pure states inside a 2-dim subspace")
            sig[al] = qmath.as_density(t / np.trace(t).real, tol=1e-9)
        _check_completeness(sig)
    elif strategy == "dominant-subspace":
        sig = {}
        for a in (0, 1):
            r = _fit_basis(v, rho_hat[(a, 0)], rho_hat[(a, 1)])
            sig[(a, 0)] = _pauli_state(r)
            sig[(a, 1)] = np.eye(2) - sig[(a, 0)]
    elif strategy == "user":
        if sigma is None:
            raise ValidationError("user strategy needs explicit sigma")
        sig = {al: qmath.as_density(sigma[al], tol=1e-9, name=f"sigma{al}") for al in ALPHAS}
        _check_completeness(sig)
    else:
        raise ValidationError(f"unknown qubit-model strategy {strategy!r}")
    dist, fid = {}, {}
    for al in ALPHAS:
        emb = v @ sig[al] @ adjoint(v)
        dist[al] = _snap_dist(qmath.trace_distance(emb, rho_hat[al]))
        fid[al] = 1.0 if dist[al] == 0 else qmath.fidelity(emb, rho_hat[al])
    bar = [0.5 * (rho_hat[(a, 0)] + rho_hat[(a, 1)]) for a in (0, 1)]
    dbar = _snap_dist(qmath.trace_distance(bar[0], bar[1]))
    fbar = 1.0 if dbar == 0 else qmath.fidelity(bar[0], bar[1])
    return QubitModel(sig, v, rho_hat, dist, fid, fbar, dbar)


def _snap_dist(d: float) -> float:
    return 0.0 if d < SNAP else d


def asymmetry_bounds(model: QubitModel, n_L):
    """Upper bounds on the approximation distance and the basis-averaged distance over ``n_L`` positions.

    Works elementwise when ``n_L`` is an array.
    """
    n = np.asarray(n_L, dtype=float)
    if np.any(n < 0):
        raise ValidationError("n_L must be non-negative")
    dmax = max(model.per_state_dist.values())
    fmin = min(model.sigma_fidelity.values())
    with np.errstate(divide="ignore", invalid="ignore"):
        subadd = n * dmax
        fid_bound = np.sqrt(np.clip(1.0 - _pow(fmin, 2 * n), 0.0, 1.0))
        nu = np.minimum(np.minimum(subadd, fid_bound), 1.0)
        dt = np.sqrt(np.clip(1.0 - _pow(model.avg_fidelity, 2 * n), 0.0, 1.0))
    if np.ndim(n_L) == 0:
        return float(nu), float(dt)
    return nu, dt


def _pow(base: float, expo):
    if base >= 1.0:
        return np.ones_like(expo)
    if base <= 0.0:
        return np.where(expo == 0, 1.0, 0.0)
    return np.exp(expo * math.log(base))


@dataclass(frozen=True)
class SourceAnalysis:
    """A source together with every derived object the bound consumes."""

    spec: SourceSpec
    dec: Decomposition
    pur: Purification
    model: QubitModel


def analyze(spec: SourceSpec, dec: Decomposition | None = None, strategy: str = "canonical",
            sigma: Mapping | None = None) -> SourceAnalysis:
    dec = decompose(spec) if dec is None else dec
    pur = build_gram(dec)
    model = fit_qubit_model(pur, strategy, sigma=sigma)
    return SourceAnalysis(spec, dec, pur, model)
