"""Best conclusive success ratio for guessing the bit of a tagged emission.

For one basis the two tagged states, weighted by their priors, are
``tau0`` and ``tau1`` (``Tr(tau0 + tau1) = 1``).  An eavesdropper's
three-outcome measurement ``{E0, E1, E_inconclusive}`` has conclusive
probability ``Tr((tau0 + tau1)(E0 + E1))`` and we want the largest ratio

    (Tr tau0 E0 + Tr tau1 E1) / conclusive probability

subject to the conclusive probability being at least ``p_minus``.  The
optimal value is nonincreasing in ``p_minus`` and is attained with the
constraint tight, so it equals ``f(p_minus) / p_minus`` where ``f(t)`` is
the semidefinite program

    max  Tr tau0 E0 + Tr tau1 E1
    s.t. Tr tau (E0 + E1) = t,  E0, E1 >= 0,  E0 + E1 <= I.

Commuting inputs reduce to a fractional knapsack solved exactly.
Otherwise the SDP is solved numerically and its dual is repaired into an
exactly feasible point, which makes the returned value a certified upper bound.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .qmath import adjoint

log = logging.getLogger(__name__)

GOLDEN = (1 + 5 ** 0.5) / 2
CERT_GAP = 1e-4
SUPPORT_CUT = 1e-14


@dataclass(frozen=True)
class Certificate:
    upper: float
    lower: float
    certified: bool

    @property
    def value(self) -> float:
        return self.upper if self.certified else 1.0


def _herm(m):
    return 0.5 * (m + adjoint(m))


def restrict_to_support(tau0: np.ndarray, tau1: np.ndarray):
    w, v = np.linalg.eigh(_herm(tau0 + tau1))
    keep = v[:, w > SUPPORT_CUT * max(1.0, w[-1])]
    return adjoint(keep) @ tau0 @ keep, adjoint(keep) @ tau1 @ keep


def _classical_table(tau0, tau1):
    """Common eigenbasis weights when ``tau0`` and ``tau1`` commute, else ``None``."""
    if np.max(np.abs(tau0 @ tau1 - tau1 @ tau0), initial=0.0) > 1e-12:
        return None
    _, u = np.linalg.eigh(_herm(tau0 + GOLDEN * tau1))
    d0 = adjoint(u) @ tau0 @ u
    d1 = adjoint(u) @ tau1 @ u
    off = max(np.max(np.abs(d0 - np.diag(np.diag(d0))), initial=0.0),
              np.max(np.abs(d1 - np.diag(np.diag(d1))), initial=0.0))
    if off > 1e-10:
        return None
    a = np.clip(np.diag(d0).real, 0.0, None)
    b = np.clip(np.diag(d1).real, 0.0, None)
    mass = a + b
    good = mass > 0
    ratio = np.maximum(a[good], b[good]) / mass[good]
    order = np.argsort(-ratio, kind="stable")
    ratio, mass = ratio[order], mass[good][order]
    return ratio, mass


def _generalized_top(tau0, tau1) -> float:
    """``max_x lambda_max(tau^{-1/2} tau_x tau^{-1/2})``, the ratio as the constraint vanishes."""
    w, v = np.linalg.eigh(_herm(tau0 + tau1))
    inv = v @ np.diag(1.0 / np.sqrt(w)) @ adjoint(v)
    return float(max(np.linalg.eigvalsh(_herm(inv @ t @ inv))[-1] for t in (tau0, tau1)))


def _helstrom(tau0, tau1) -> float:
    return 0.5 * (1.0 + float(np.sum(np.abs(np.linalg.eigvalsh(_herm(tau0 - tau1))))))


def _sdp_certificate(tau0, tau1, t: float) -> Certificate:
    import cvxpy as cp

    d = tau0.shape[0]
    tau = tau0 + tau1
    e0 = cp.Variable((d, d), hermitian=True)
    e1 = cp.Variable((d, d), hermitian=True)
    primal = cp.Problem(
        cp.Maximize(cp.real(cp.trace(tau0 @ e0) + cp.trace(tau1 @ e1))),
        [e0 >> 0, e1 >> 0, np.eye(d) - e0 - e1 >> 0, cp.real(cp.trace(tau @ (e0 + e1))) == t],
    )
    y = cp.Variable((d, d), hermitian=True)
    lam = cp.Variable()
    dual = cp.Problem(
        cp.Minimize(cp.real(cp.trace(y)) + lam * t),
        [y >> 0, y + lam * tau - tau0 >> 0, y + lam * tau - tau1 >> 0],
    )
    try:
        primal.solve(solver=cp.CLARABEL)
        dual.solve(solver=cp.CLARABEL)
    except cp.SolverError as exc:
        log.warning("SDP solver failed: %s", exc)
        return Certificate(1.0, 0.0, False)
    if y.value is None or lam.value is None or e0.value is None:
        return Certificate(1.0, 0.0, False)
    ys = _herm(np.asarray(y.value))
    lv = float(lam.value)
    shift = max(0.0,
                -np.linalg.eigvalsh(ys)[0],
                -np.linalg.eigvalsh(_herm(ys + lv * tau - tau0))[0],
                -np.linalg.eigvalsh(_herm(ys + lv * tau - tau1))[0])
    upper = (np.trace(ys).real + d * shift + lv * t) / t
    p0, p1 = _herm(np.asarray(e0.value)), _herm(np.asarray(e1.value))
    conc = np.trace(tau @ (p0 + p1)).real
    lower = (np.trace(tau0 @ p0).real + np.trace(tau1 @ p1).real) / conc if conc > 0 else 0.0
    upper = min(max(upper, _helstrom(tau0, tau1)), 1.0)
    return Certificate(upper, min(lower, upper), upper - lower <= CERT_GAP)


class DiscriminationCurve:
    """The certified success ratio as a function of the conclusive-probability floor.

    Exact for commuting inputs.  Otherwise values come from certified SDP
    solutions on a grid and a query is answered with the grid point at or
    below it, which is an upper bound because the ratio is nonincreasing.
    """

    def __init__(self, tau0: np.ndarray, tau1: np.ndarray, grid_size: int = 33):
        tau0, tau1 = restrict_to_support(np.asarray(tau0, complex), np.asarray(tau1, complex))
        self.tau0, self.tau1 = tau0, tau1
        self.empty = tau0.shape[0] == 0
        self.table = None if self.empty else _classical_table(tau0, tau1)
        self.certified = True
        if self.empty:
            return
        self.top = _generalized_top(tau0, tau1)
        if self.table is None:
            self.grid = np.linspace(0.0, 1.0, grid_size)
            vals = [min(self.top, 1.0)]
            for t in self.grid[1:]:
                cert = _sdp_certificate(tau0, tau1, float(t))
                if not cert.certified:
                    self.certified = False
                    warnings.warn(f"could not certify discrimination ratio at p={t:.3f}; using 1")
                vals.append(cert.value)
            self.values = np.minimum.accumulate(np.array(vals))

    @property
    def exact(self) -> bool:
        return self.table is not None

    def __call__(self, p_minus):
        p = np.asarray(p_minus, dtype=float)
        if np.any(p > 1 + 1e-9):
            raise ValueError("conclusive-probability floor above 1 is infeasible")
        if self.empty:
            out = np.ones_like(p)
        elif self.table is not None:
            ratio, mass = self.table
            cw = np.cumsum(mass)
            cs = np.cumsum(mass * ratio)
            pc = np.clip(p, 0.0, cw[-1])
            idx = np.minimum(np.searchsorted(cw, pc, side="left"), len(cw) - 1)
            w_prev = np.where(idx > 0, cw[idx - 1], 0.0)
            s_prev = np.where(idx > 0, cs[idx - 1], 0.0)
            f = s_prev + ratio[idx] * (pc - w_prev)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(pc > 0, f / pc, ratio[0])
        else:
            idx = np.searchsorted(self.grid, np.clip(p, 0.0, 1.0), side="right") - 1
            out = self.values[np.maximum(idx, 0)]
            out = np.where(p <= 0, min(self.top, 1.0), out)
        out = np.clip(out, 0.0, 1.0)
        return float(out) if np.ndim(p_minus) == 0 else out


def certify(tau0: np.ndarray, tau1: np.ndarray, p_minus: float) -> Certificate:
    """Certified upper bound on the constrained ratio at one exact floor ``p_minus``."""
    tau0, tau1 = restrict_to_support(np.asarray(tau0, complex), np.asarray(tau1, complex))
    if tau0.shape[0] == 0:
        return Certificate(1.0, 1.0, True)
    if p_minus > 1 + 1e-9:
        raise ValueError("conclusive-probability floor above 1 is infeasible")
    table = _classical_table(tau0, tau1)
    if table is not None or p_minus <= 0:
        v = DiscriminationCurve(tau0, tau1)(p_minus) if table is not None else min(_generalized_top(tau0, tau1), 1.0)
        return Certificate(v, v, True)
    return _sdp_certificate(tau0, tau1, min(float(p_minus), 1.0))


def s_M_sup(dec, a: int, p_minus: float) -> float:
    """Certified upper bound on the tagged-bit success ratio for basis ``a``.

    Falls back to 1 (no secrecy from tagged positions) when the numerical
    certificate cannot close the gap.
    """
    tau0, tau1 = dec.tagged_ops(a)
    cert = certify(tau0, tau1, p_minus)
    if not cert.certified:
        warnings.warn(f"discrimination bound for basis {a} not certified (gap > {CERT_GAP}); using 1")
    return cert.value
