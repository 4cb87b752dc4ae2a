"""Reconciliation with leakage accounting and Toeplitz privacy amplification.

Also contains an exhaustive oracle for the leftover-hash leakage bound on
small alphabets: the mutual information between the hashed key and Eve's
side information is computed exactly for a sample of hash functions and
compared with ``n * eps + 2^{-l} / ln 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import toeplitz

from .bounds import binary_entropy

LN2 = math.log(2.0)


# ---------------------------------------------------------------- hashing

@dataclass(frozen=True)
class HashSpec:
    """Toeplitz matrix over GF(2) given by its first column then the rest of its first row."""

    n: int
    m: int
    toeplitz_bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.toeplitz_bits, dtype=np.uint8).reshape(-1)
        if not 0 < self.m <= self.n:
            raise ValueError(f"need 0 < m <= n, got n={self.n}, m={self.m}")
        if len(bits) != self.n + self.m - 1:
            raise ValueError(f"need {self.n + self.m - 1} seed bits, got {len(bits)}")
        if np.any(bits > 1):
            raise ValueError("seed bits must be 0 or 1")
        object.__setattr__(self, "toeplitz_bits", bits)

    def matrix(self) -> np.ndarray:
        col = self.toeplitz_bits[: self.m]
        row = np.concatenate([col[:1], self.toeplitz_bits[self.m:]])
        return toeplitz(col, row).astype(np.uint8)

    @classmethod
    def random(cls, n: int, m: int, rng: np.random.Generator) -> "HashSpec":
        return cls(n, m, rng.integers(0, 2, n + m - 1, dtype=np.uint8))


def toeplitz_hash(spec: HashSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    if len(x) != spec.n:
        raise ValueError(f"input has {len(x)} bits, hash expects {spec.n}")
    return (spec.matrix().astype(np.int64) @ x % 2).astype(np.uint8)


def _toeplitz_stack(n: int, m: int, seeds: np.ndarray) -> np.ndarray:
    """Matrices ``[g, i, j]`` for a batch of seeds, same convention as ``HashSpec.matrix``."""
    i = np.arange(m)[:, None]
    j = np.arange(n)[None, :]
    # entry (i, j) is seed[i - j] below the diagonal and seed[m - 1 + (j - i)] above
    idx = np.where(i >= j, i - j, m - 1 + (j - i))
    return seeds[:, idx]


def universality_check(n: int, m: int, trials: int, rng: np.random.Generator) -> tuple[float, float, float]:
    """Empirical collision rate for random hash and random distinct inputs.

    Returns ``(rate, 2^-m, standard error)``.
    """
    seeds = rng.integers(0, 2, (trials, n + m - 1), dtype=np.uint8)
    diff = rng.integers(0, 2, (trials, n), dtype=np.uint8)
    # x != x' means a nonzero difference; redraw the all-zero rows
    zero = ~diff.any(axis=1)
    while zero.any():
        diff[zero] = rng.integers(0, 2, (int(zero.sum()), n), dtype=np.uint8)
        zero = ~diff.any(axis=1)
    mats = _toeplitz_stack(n, m, seeds).astype(np.int64)
    out = np.einsum("gij,gj->gi", mats, diff.astype(np.int64)) % 2
    coll = ~out.any(axis=1)
    rate = float(coll.mean())
    bound = 2.0 ** -m
    return rate, bound, math.sqrt(bound * (1 - bound) / trials)


def bits_to_hex(bits) -> str:
    """Hex string with a leading bit-count prefix so lengths survive the round trip."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    packed = np.packbits(bits).tobytes().hex()
    return f"{len(bits)}:{packed}"


def hex_to_bits(s: str) -> np.ndarray:
    count, _, payload = s.partition(":")
    raw = np.frombuffer(bytes.fromhex(payload), dtype=np.uint8)
    return np.unpackbits(raw)[: int(count)]


# ---------------------------------------------------------------- reconciliation

@dataclass(frozen=True)
class ReconConfig:
    """``oracle``: Bob learns ``x`` and ``f * n * h(qber)`` bits are charged.
    ``parity``: binary-search parity exchange, charged the bits actually sent.
    """

    mode: str = "oracle"
    f: float = 1.0
    max_passes: int = 8
    verify_bits: int = 64

    def __post_init__(self):
        if self.mode not in ("oracle", "parity"):
            raise ValueError(f"unknown reconciliation mode {self.mode!r}")
        if self.f < 1:
            raise ValueError("efficiency factor f must be >= 1")


@dataclass(frozen=True)
class ReconResult:
    corrected: np.ndarray
    leaked_bits: float
    converged: bool


def reconcile(x, y, cfg: ReconConfig, qber: float | None = None,
              rng: np.random.Generator | None = None) -> ReconResult:
    """Bring Bob's ``y`` into agreement with Alice's ``x`` and count the leak."""
    x = np.asarray(x, dtype=np.uint8)
    y = np.asarray(y, dtype=np.uint8)
    if x.shape != y.shape:
        raise ValueError("strings must have equal length")
    n = len(x)
    if cfg.mode == "oracle":
        q = float(np.mean(x != y)) if qber is None else qber
        leak = cfg.f * n * binary_entropy(min(max(q, 0.0), 1.0)) if n else 0.0
        return ReconResult(x.copy(), leak, True)
    rng = rng or np.random.default_rng(0)
    return _parity_exchange(x, y.copy(), cfg, qber, rng)


def _parity_exchange(x, y, cfg: ReconConfig, qber, rng) -> ReconResult:
    n = len(x)
    if n == 0:
        return ReconResult(y, 0.0, True)
    q = float(np.mean(x != y)) if qber is None else qber
    q = min(max(q, 1e-3), 0.25)
    block = max(4, math.ceil(0.73 / q))
    leaked = 0
    for _ in range(cfg.max_passes):
        perm = rng.permutation(n)
        for start in range(0, n, block):
            idx = perm[start:start + block]
            leaked += 1
            if x[idx].sum() % 2 == y[idx].sum() % 2:
                continue
            # binary search for one flipped bit, one parity per halving
            while len(idx) > 1:
                half = idx[: len(idx) // 2]
                leaked += 1
                idx = half if x[half].sum() % 2 != y[half].sum() % 2 else idx[len(idx) // 2:]
            y[idx[0]] ^= 1
        block = min(2 * block, n)
        k = min(cfg.verify_bits, n)
        masks = rng.integers(0, 2, (k, n), dtype=np.uint8)
        leaked += k
        if np.array_equal(masks @ x.astype(np.int64) % 2, masks @ y.astype(np.int64) % 2):
            return ReconResult(y, float(leaked), True)
    return ReconResult(y, float(leaked), False)


# ---------------------------------------------------------------- leftover oracle

def collision_entropy_given(joint: np.ndarray) -> np.ndarray:
    """``-log2 sum_x p(x|z)^2`` for each column ``z`` of ``joint[x, z]``."""
    pz = joint.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(pz > 0, joint / np.where(pz > 0, pz, 1), 0.0)
        return -np.log2(np.sum(cond ** 2, axis=0))


def leftover_bound(joint: np.ndarray, n: int, m: int) -> tuple[float, float, float]:
    """Smallest ``n * eps + 2^{-(R - m)}/ln2`` over thresholds ``R``.

    ``eps`` is the probability of the side-information values whose
    conditional collision entropy falls below ``R``.  Returns
    ``(bound, R, eps)``.
    """
    pz = joint.sum(axis=0)
    r2 = collision_entropy_given(joint)
    best = (math.inf, 0.0, 1.0)
    for thr in np.unique(np.concatenate([r2[pz > 0], [0.0]])):
        eps = float(pz[(r2 < thr - 1e-12) & (pz > 0)].sum())
        val = n * eps + 2.0 ** (-(thr - m)) / LN2
        if val < best[0]:
            best = (val, float(thr), eps)
    return best


def hashed_information(joint: np.ndarray, n: int, m: int, seeds: np.ndarray) -> tuple[float, float]:
    """Exact ``I(S : Z, G)`` in bits with ``G`` uniform over the given seeds.

    Returns the value and the standard error of the per-hash contributions.
    """
    nx, nz = joint.shape
    xs = ((np.arange(nx)[:, None] >> np.arange(n)[None, :]) & 1).astype(np.int64)
    mats = _toeplitz_stack(n, m, seeds).astype(np.int64)
    out = np.einsum("gij,xj->gxi", mats, xs) % 2
    s = out @ (1 << np.arange(m))
    G = len(seeds)
    rows = (np.arange(G)[:, None] * (1 << m) + s).ravel()
    cols = np.tile(np.arange(nx), G)
    onehot = sparse.csr_matrix((np.ones(G * nx), (rows, cols)), shape=(G * (1 << m), nx))
    psz = np.asarray(onehot @ joint).reshape(G, 1 << m, nz)
    ps = psz.sum(axis=2).mean(axis=0)
    pz = joint.sum(axis=0)
    denom = ps[:, None] * pz[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(psz > 0, psz * np.log2(psz / np.where(denom > 0, denom, 1)), 0.0)
    per_g = terms.sum(axis=(1, 2))
    return float(per_g.mean()), float(per_g.std(ddof=1) / math.sqrt(G)) if G > 1 else 0.0


def leftover_oracle(joint: np.ndarray, m: int, hashes: int, rng: np.random.Generator) -> dict:
    """Measured leakage of an ``m``-bit Toeplitz hash against the leftover bound.

    ``joint[x, z]`` is an explicit distribution over ``2^n`` keys ``x`` and
    side-information values ``z``.
    """
    joint = np.asarray(joint, dtype=float)
    nx = joint.shape[0]
    n = int(round(math.log2(nx)))
    if 1 << n != nx or n > 12 or not 0 < m <= min(n, 4):
        raise ValueError("need 2^n rows with n <= 12 and 0 < m <= min(n, 4)")
    if np.any(joint < 0) or abs(joint.sum() - 1) > 1e-9:
        raise ValueError("joint distribution must be non-negative and normalized")
    seeds = rng.integers(0, 2, (hashes, n + m - 1), dtype=np.uint8)
    measured, se = hashed_information(joint, n, m, seeds)
    bound, R, eps = leftover_bound(joint, n, m)
    return {"measured": measured, "stderr": se, "bound": bound, "R": R, "eps": eps,
            "l": R - m, "n": n, "m": m, "hashes": hashes}
