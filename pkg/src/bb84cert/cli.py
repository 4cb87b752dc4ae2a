"""Command line entry point: ``rate``, ``simulate``, ``sweep`` and ``verify``.

Exit status: 0 on success (a zero-length key is a success), 2 for a
malformed configuration, 3 when a verification oracle fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import bounds, config, extract, protocol, verify
from .config import ConfigError, RunConfig

log = logging.getLogger("bb84cert")

EXIT_OK, EXIT_CONFIG, EXIT_ORACLE = 0, 2, 3

# Stable column order for rate reports.
RATE_COLUMNS = [
    "m", "l", "leakage_bound", "R_E_K", "R_L_minus", "R_M_minus", "ec_leak", "qber", "n_K",
    "s_M_0", "s_M_1", "eps_M_0", "eps_M_1", "n_M_max_0", "n_M_max_1", "p_minus_0", "p_minus_1",
    "s_L_0", "s_L_1", "q_0", "q_1", "delta_M_0", "delta_M_1", "delta_p",
    "p_L_max", "eps_T_e", "mu_L", "nu_L", "dT_bar", "eps_P", "p_as", "omega_L", "Pi_L", "log2_Pi_L",
    "eps_L", "worst_n_L", "worst_n_M_0", "worst_n_M_1", "p_bar1_0", "p_bar1_1", "reason", "flags",
]

SESSION_COLUMNS = [
    "seed", "index", "N", "n_D", "n_C", "n_T", "n_K", "n_T_e", "qber", "n_L", "n_M0", "n_M1",
    "p_e_L", "recon_leak", "recon_converged", "key_length", "m_bound", "reason", "key_hex", "hash_seed_hex",
]

VERIFY_COLUMNS = ["oracle", "passed", "measured", "bound", "detail"]


def report_row(rep: bounds.RateReport) -> dict:
    """Flatten a report into the fixed columns; non-finite numbers become ``None`` plus a flag."""
    row = {}
    for name in ("m", "l", "leakage_bound", "R_E_K", "R_L_minus", "R_M_minus", "ec_leak", "qber", "n_K",
                 "delta_p", "p_L_max", "eps_T_e", "mu_L", "nu_L", "dT_bar", "eps_P", "p_as",
                 "omega_L", "Pi_L", "log2_Pi_L", "eps_L"):
        row[name] = getattr(rep, name)
    for name in ("s_M", "eps_M", "n_M_max", "p_minus", "s_L", "q", "delta_M"):
        vals = getattr(rep, name)
        row[f"{name}_0"], row[f"{name}_1"] = vals[0], vals[1]
    wp = rep.worst_partition
    row["worst_n_L"] = wp.n_L
    row["worst_n_M_0"], row["worst_n_M_1"] = wp.n_M
    row["p_bar1_0"], row["p_bar1_1"] = wp.p_bar1
    flags = list(rep.flags)
    for k, v in row.items():
        if isinstance(v, (float, np.floating)):
            if not math.isfinite(v):
                flags.append(f"{k}={'+inf' if v > 0 else ('-inf' if v < 0 else 'nan')}")
                row[k] = None
            else:
                row[k] = float(v)
        elif isinstance(v, (np.integer,)):
            row[k] = int(v)
    row["reason"] = rep.reason
    row["flags"] = ";".join(flags)
    return {k: row[k] for k in RATE_COLUMNS}


def write_rows(rows: list[dict], columns: list[str], fmt: str, out) -> None:
    if fmt == "csv":
        w = csv.DictWriter(out, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
    else:
        for r in rows:
            out.write(json.dumps({k: r.get(k) for k in columns if k in r}) + "\n")


# ---------------------------------------------------------------- commands

def cmd_rate(cfg: RunConfig) -> list[dict]:
    an = config.build_source(cfg.source)
    counts = config.build_counts(cfg, an)
    try:
        params = config.build_params(cfg.bounds)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return [report_row(bounds.key_bound(counts, params, an))]


def _session_summary(cfg: RunConfig, an, pc, params, recon, index: int) -> dict:
    rec = protocol.run_session(pc, an.spec, an.dec, index=index)
    counts = rec.counts(cfg.bounds.collapse_bob_mode if cfg.bounds else False)
    rep = bounds.key_bound(counts, params, an)
    m = rep.m
    if cfg.protocol.postprocess and len(rec.K):
        r = extract.reconcile(rec.x[rec.K].astype(np.uint8), np.minimum(rec.y[rec.K], 1).astype(np.uint8),
                              recon, qber=rec.qber, rng=protocol.rng_for(pc.seed, "recon", index))
        rec.recon_leak, rec.recon_converged = r.leaked_bits, r.converged
        # charge the bits actually disclosed instead of the nominal estimate
        m = max(0, rep.m + math.ceil(rep.ec_leak) - math.ceil(r.leaked_bits)) if rep.m > 0 else 0
        if m > 0 and r.converged:
            hs = extract.HashSpec.random(len(rec.K), m, protocol.rng_for(pc.seed, "hash", index))
            rec.hash_seed = hs.toeplitz_bits
            rec.key = extract.toeplitz_hash(hs, r.corrected)
        else:
            rec.key = np.zeros(0, np.uint8)
    row = rec.summary()
    row["m_bound"] = m
    row["reason"] = rep.reason
    return row


def cmd_simulate(cfg: RunConfig, workers: int = 1) -> list[dict]:
    an = config.build_source(cfg.source)
    pc = config.build_protocol(cfg.protocol, cfg.seed, an)
    params = config.build_params(cfg.bounds)
    recon = config.build_recon(cfg.protocol)
    idx = range(cfg.protocol.sessions)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda i: _session_summary(cfg, an, pc, params, recon, i), idx))
    return [_session_summary(cfg, an, pc, params, recon, i) for i in idx]


def sweep_points(cfg: RunConfig) -> list[dict]:
    grid = cfg.sweep.grid
    keys = list(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))] if keys else []


def cmd_sweep(cfg: RunConfig) -> tuple[list[dict], list[str]]:
    base = cfg.model_dump(mode="json")
    base["command"] = "rate"
    base["sweep"] = None
    if base.get("counts") is None:
        base["counts"] = {"mode": "expected"}
    points = sweep_points(cfg)

    def run(point):
        data = base
        for k, v in point.items():
            data = config.set_path(data, k, v)
        row = cmd_rate(config.parse(data))[0]
        return {**{f"param:{k}": v for k, v in point.items()}, "row_type": "point", **row}

    if cfg.sweep.workers > 1:
        with ThreadPoolExecutor(cfg.sweep.workers) as pool:
            rows = list(pool.map(run, points))
    else:
        rows = [run(p) for p in points]
    cols = [f"param:{k}" for k in cfg.sweep.grid] + ["row_type"] + RATE_COLUMNS
    if rows:
        best = max(range(len(rows)), key=lambda i: (rows[i]["m"], -i))
        rows.append({**rows[best], "row_type": "argmax"})
    return rows, cols


def cmd_verify(cfg: RunConfig) -> list[verify.OracleResult]:
    opts = cfg.verify or config.VerifyBlock()
    return verify.run_oracles(opts, cfg.seed, opts.oracles)


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bb84cert", description="Certified BB84 key length and simulation")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("rate", "certified key length for one configuration"),
                        ("simulate", "run simulated sessions"),
                        ("sweep", "evaluate the key length over a parameter grid"),
                        ("verify", "run the numerical oracle suite")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="YAML configuration file")
        sp.add_argument("--out", help="output path (default: stdout or output.path)")
        sp.add_argument("--seed", type=int, help="override the configuration seed")
        sp.add_argument("--format", choices=["csv", "jsonl"], help="output format")
        sp.add_argument("--workers", type=int, default=1, help="concurrent sessions or grid points")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config.load(args.config)
        data = cfg.model_dump(mode="json")
        data["command"] = args.command
        if args.seed is not None:
            data["seed"] = args.seed
        cfg = config.parse(data)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    default_fmt = "jsonl" if args.command == "simulate" else "csv"
    fmt = args.format or cfg.output.format or default_fmt
    status = EXIT_OK
    try:
        if args.command == "rate":
            rows, cols = cmd_rate(cfg), RATE_COLUMNS
        elif args.command == "simulate":
            rows, cols = cmd_simulate(cfg, args.workers), SESSION_COLUMNS
        elif args.command == "sweep":
            if args.workers > 1:
                cfg = cfg.model_copy(update={"sweep": cfg.sweep.model_copy(update={"workers": args.workers})})
            rows, cols = cmd_sweep(cfg)
        else:
            results = cmd_verify(cfg)
            rows = [{"oracle": r.name, "passed": bool(r.passed), "measured": _finite(r.measured),
                     "bound": _finite(r.bound), "detail": r.detail} for r in results]
            cols = VERIFY_COLUMNS
            for r in results:
                log.info("%s %s measured=%s bound=%s", r.name, "PASS" if r.passed else "FAIL",
                         r.measured, r.bound)
            if not all(r.passed for r in results):
                status = EXIT_ORACLE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    buf = io.StringIO()
    write_rows(rows, cols, fmt, buf)
    path = args.out or cfg.output.path
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return status


def _finite(v):
    v = float(v)
    return v if math.isfinite(v) else None


if __name__ == "__main__":
    sys.exit(main())
