"""YAML run configuration, validated with pydantic.

Explicit matrices are nested lists of ``[re, im]`` pairs.  Every block maps
onto the library objects through the ``build_*`` helpers, so the CLI never
touches raw dictionaries.
"""

from __future__ import annotations

from typing import Any, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import bounds, extract, protocol, source

ALPHA_KEYS = ("00", "01", "10", "11")


class ConfigError(ValueError):
    """The configuration file is malformed or inconsistent."""


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SourceBlock(_Block):
    model: Literal["ideal", "coherent", "explicit"] = "ideal"
    noise: float = Field(0.0, ge=0, le=1)
    mu: float | None = Field(None, gt=0)
    cutoff: int | None = None
    angles: list[tuple[float, float]] | None = None
    probs: list[float] | None = None
    states: dict[str, list[list[tuple[float, float]]]] | None = None
    tag_states: dict[str, list[list[tuple[float, float]]]] | None = None
    p0: float | None = None
    strategy: Literal["canonical", "dominant-subspace"] = "canonical"

    @model_validator(mode="after")
    def _check(self):
        if self.model == "coherent" and self.mu is None:
            raise ValueError("coherent source needs mu")
        if self.model == "explicit" and self.states is None:
            raise ValueError("explicit source needs states")
        if self.angles is not None and len(self.angles) != 4:
            raise ValueError("angles needs four (theta, phi) pairs")
        if self.probs is not None and len(self.probs) != 4:
            raise ValueError("probs needs four entries")
        for name in ("states", "tag_states"):
            val = getattr(self, name)
            if val is not None and set(val) != set(ALPHA_KEYS):
                raise ValueError(f"{name} needs keys {ALPHA_KEYS}")
        return self


class DetectorBlock(_Block):
    efficiency: float = Field(1.0, ge=0, le=1)
    dark_count: float = Field(0.0, ge=0, le=1)


class EveBlock(_Block):
    kind: Literal["none", "passive", "intercept_resend", "tag_exploit"] = "none"
    loss: float = Field(0.0, ge=0, le=1)
    depolarizing: float = Field(0.0, ge=0, le=1)
    basis_policy: Literal["random", "z", "x"] = "random"


class ReconBlock(_Block):
    mode: Literal["oracle", "parity"] = "oracle"
    f: float = Field(1.0, ge=1)


class ProtocolBlock(_Block):
    N: int = Field(100_000, ge=0)
    test_fraction: float = Field(0.1, gt=0, lt=1)
    bob_basis_probs: tuple[float, float] = (0.5, 0.5)
    detector: DetectorBlock = DetectorBlock()
    eve: EveBlock = EveBlock()
    sessions: int = Field(1, ge=0)
    reconciliation: ReconBlock = ReconBlock()
    postprocess: bool = True


class BoundsBlock(_Block):
    delta_M: tuple[float, float] | None = None
    delta_p: float | None = Field(None, gt=0)
    delta_P: float = Field(0.0, ge=0)
    c: float = Field(bounds.C_DEFAULT, gt=1)
    target_leakage: float = Field(bounds.TARGET_LEAKAGE_DEFAULT, gt=0)
    ec_efficiency: float = Field(1.0, ge=1)
    ec_leakage: bool = True
    collapse_bob_mode: bool = False
    eps_tail: float = Field(bounds.EPS_TAIL_DEFAULT, gt=0, lt=1)


class CountsBlock(_Block):
    """Observed counts; ``mode`` ``simulate``/``expected`` derives them from the protocol block."""

    mode: Literal["explicit", "balanced", "simulate", "expected"] = "explicit"
    N: int | None = None
    n_D: int | None = None
    n_C: int | None = None
    n_T: int | None = None
    n_K: int | None = None
    n_T_e: int | None = None
    basis: dict[Literal["A", "D", "C", "T"], tuple[int, int]] | None = None


class SweepBlock(_Block):
    grid: dict[str, list[Any]] = Field(default_factory=dict)
    workers: int = Field(1, ge=1)


class VerifyBlock(_Block):
    oracles: list[str] | None = None
    tolerance: float | None = Field(None, ge=0)
    tamper_s_M: bool = False
    helstrom_pairs: int = 200
    helstrom_grid: int = 10_000
    distance_pairs: int = 1000
    coverage_sessions: int = 200
    coverage_N: int = 20_000
    tag_sessions: int = 20
    leftover_cases: int = 100
    leftover_hashes: int = 1000
    universality_trials: int = 100_000


class OutputBlock(_Block):
    path: str | None = None
    format: Literal["csv", "jsonl"] | None = None


class RunConfig(_Block):
    command: Literal["rate", "simulate", "sweep", "verify"]
    seed: int = Field(0, ge=0, lt=2 ** 64)
    source: SourceBlock | None = None
    protocol: ProtocolBlock | None = None
    bounds: BoundsBlock | None = None
    counts: CountsBlock | None = None
    sweep: SweepBlock | None = None
    verify: VerifyBlock | None = None
    output: OutputBlock = OutputBlock()

    @model_validator(mode="after")
    def _needs(self):
        need = {"rate": ("source",), "simulate": ("source", "protocol"),
                "sweep": ("source", "sweep"), "verify": ()}[self.command]
        for blk in need:
            if getattr(self, blk) is None:
                raise ValueError(f"command {self.command!r} needs a {blk!r} block")
        if self.command == "rate" and self.counts is None and self.protocol is None:
            raise ValueError("rate needs a counts block or a protocol block to simulate")
        return self

    @field_validator("seed", mode="before")
    @classmethod
    def _seed_int(cls, v):
        if isinstance(v, float) and not v.is_integer():
            raise ValueError("seed must be an integer")
        return v


# ---------------------------------------------------------------- io

def parse(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except Exception as exc:  # pydantic.ValidationError and friends
        raise ConfigError(str(exc)) from exc


def load(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return parse(data)


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_plain(cfg.model_dump(mode="json")), sort_keys=False)


def to_plain(obj):
    if isinstance(obj, dict):
        return {k: to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    return obj


def set_path(data: dict, dotted: str, value) -> dict:
    """Copy of ``data`` with ``a.b.c`` set to ``value``, creating blocks as needed."""
    import copy
    out = copy.deepcopy(data)
    cur = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        if cur.get(k) is None:
            cur[k] = {}
        cur = cur[k]
    cur[keys[-1]] = value
    return out


# ---------------------------------------------------------------- builders

def _matrix(pairs) -> np.ndarray:
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise ConfigError("matrices must be nested lists of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def _probs(block: SourceBlock):
    if block.probs is None:
        return None
    return dict(zip(source.ALPHAS, block.probs))


def build_source(block: SourceBlock) -> source.SourceAnalysis:
    try:
        probs = _probs(block)
        angles = tuple(block.angles) if block.angles else source.IDEAL_ANGLES
        if block.model == "ideal":
            spec = source.ideal_source(probs, angles, block.noise)
            dec = source.decompose(spec, block.p0)
        elif block.model == "coherent":
            spec, dec = source.coherent_source(block.mu, block.cutoff, angles, probs)
        else:
            states = {al: _matrix(block.states[k]) for al, k in zip(source.ALPHAS, ALPHA_KEYS)}
            probs = probs or {al: 0.25 for al in source.ALPHAS}
            spec = source.SourceSpec(states, probs)
            tags = None
            if block.tag_states is not None:
                tags = {al: _matrix(block.tag_states[k]) for al, k in zip(source.ALPHAS, ALPHA_KEYS)}
            dec = source.decompose(spec, block.p0, tags)
        strategy = block.strategy
        if block.model != "coherent" and block.noise > 0 and strategy == "canonical":
            strategy = "dominant-subspace"
        return source.analyze(spec, dec, strategy)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"invalid source: {exc}") from exc


def build_params(block: BoundsBlock | None) -> bounds.BoundParams:
    block = block or BoundsBlock()
    return bounds.BoundParams(delta_M=block.delta_M, delta_p=block.delta_p, delta_P=block.delta_P,
                              c=block.c, ec_efficiency=block.ec_efficiency,
                              ec_leakage=block.ec_leakage, target_leakage=block.target_leakage,
                              eps_tail=block.eps_tail)


def build_protocol(block: ProtocolBlock, seed: int, an: source.SourceAnalysis) -> protocol.ProtocolConfig:
    try:
        return protocol.ProtocolConfig(
            N=block.N, alice_probs=dict(an.spec.probs), bob_basis_probs=tuple(block.bob_basis_probs),
            detector=protocol.Detector(block.detector.efficiency, block.detector.dark_count),
            eve=protocol.EveStrategy(block.eve.kind, block.eve.loss, block.eve.depolarizing,
                                     block.eve.basis_policy),
            test_fraction=block.test_fraction, seed=seed)
    except ValueError as exc:
        raise ConfigError(f"invalid protocol block: {exc}") from exc


def build_recon(block: ProtocolBlock) -> extract.ReconConfig:
    return extract.ReconConfig(block.reconciliation.mode, block.reconciliation.f)


def build_counts(cfg: RunConfig, an: source.SourceAnalysis) -> bounds.ProtocolCounts:
    """Counts from the counts block, or from one simulated (or expected) session."""
    blk = cfg.counts or CountsBlock(mode="simulate")
    collapse = cfg.bounds.collapse_bob_mode if cfg.bounds else False
    try:
        if blk.mode in ("simulate", "expected"):
            if cfg.protocol is None:
                raise ConfigError(f"counts mode {blk.mode!r} needs a protocol block")
            pc = build_protocol(cfg.protocol, cfg.seed, an)
            if blk.mode == "expected":
                c = protocol.expected_counts(pc, an.spec, an.dec)
                return bounds.ProtocolCounts(c.N, c.n_D, c.n_C, c.n_T, c.n_K, c.n_T_e,
                                             c.basis_counts, collapse)
            return protocol.run_session(pc, an.spec, an.dec).counts(collapse)
        if blk.mode == "balanced":
            return bounds.ProtocolCounts.balanced(blk.n_K or 0, blk.n_T or 0, blk.n_T_e or 0,
                                                  n_C=blk.n_C, n_D=blk.n_D, N=blk.N,
                                                  collapse_bob_mode=collapse)
        need = ("N", "n_D", "n_C", "n_T", "n_T_e")
        missing = [k for k in need if getattr(blk, k) is None]
        if missing or blk.basis is None:
            raise ConfigError(f"explicit counts need {list(need)} and basis, missing {missing}")
        bc = {(s, a): int(v[a]) for s, v in blk.basis.items() for a in (0, 1)}
        n_K = blk.n_C - blk.n_T if blk.n_K is None else blk.n_K
        return bounds.ProtocolCounts(blk.N, blk.n_D, blk.n_C, blk.n_T, n_K, blk.n_T_e, bc, collapse)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid counts: {exc}") from exc
