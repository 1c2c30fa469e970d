"""Command-line entry point: ``p2pagg run|bench|committee-size|sweep``."""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

from . import config as config_mod
from .bench import bench_grid, linear_fit_r2
from .committee import CommitteePolicy, committee_size

EXIT_OK = 0
EXIT_ABORT = 2
EXIT_CONFIG = 64
EXIT_IO = 74

SWEEP_FIELDS = ["protocol", "attack", "f", "status", "rounds", "final_accuracy", "aborts", "flagged",
                "bytes_total", "seed", "config_hash", "error"]


def _err(msg: str) -> None:
    print(f"p2pagg: {msg}", file=sys.stderr)


def _load(path, seed, protocol=None, peers=None, allow_sweep=False):
    cfg, sweep = config_mod.load(path, allow_sweep)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if protocol is not None:
        cfg = replace(cfg, protocol=protocol)
    if peers is not None:
        cfg = replace(cfg, peers=peers)
    return cfg, sweep


def cmd_run(args) -> int:
    from .simulator import run_simulation, write_outputs

    try:
        cfg, _ = _load(args.config, args.seed, args.protocol, args.peers)
    except config_mod.ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_IO
    try:
        result = run_simulation(cfg)
    except (ValueError, OSError) as exc:
        _err(str(exc))
        return EXIT_IO if isinstance(exc, OSError) else EXIT_CONFIG
    try:
        write_outputs(result, args.out)
    except OSError as exc:
        _err(f"cannot write outputs: {exc}")
        return EXIT_IO
    print(f"{len(result.transcripts)} rounds, final accuracy {result.accuracy[-1] if result.accuracy else float('nan'):.4f}, "
          f"{result.aborts} aborts -> {args.out}")
    return EXIT_ABORT if result.aborts else EXIT_OK


def _int_list(text: str) -> list[int]:
    return [int(float(x)) for x in text.split(",") if x.strip()]


def cmd_bench(args) -> int:
    protocols = [p.strip() for p in args.protocol.split(",")] if args.protocol else ["rsa", "cc", "flt"]
    d_list = _int_list(args.params)
    n_list = _int_list(args.peers)
    if not d_list or not n_list:
        _err("need at least one value for --params and --peers")
        return EXIT_CONFIG
    def report(row):
        print(f"{row.protocol:4s} d={row.d:<8d} n={row.n:<6d} |C|={row.committee:<4d} "
              f"mean={row.mean_seconds:.4f}s", flush=True)

    try:
        rows = bench_grid(protocols, d_list, n_list, args.trials, seed=args.seed or 0, report=report)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["protocol", "d", "n", "committee", "trials", "mean_seconds", "min_seconds"])
            for r in rows:
                writer.writerow([r.protocol, r.d, r.n, r.committee, r.trials, f"{r.mean_seconds:.6f}",
                                 f"{r.min_seconds:.6f}"])
    except OSError as exc:
        _err(f"cannot write outputs: {exc}")
        return EXIT_IO
    for proto in protocols:
        by_d = [r for r in rows if r.protocol == proto and r.n == n_list[0]]
        by_n = [r for r in rows if r.protocol == proto and r.d == d_list[-1]]
        if len(by_d) >= 3:
            print(f"{proto}: R^2 vs d = {linear_fit_r2([r.d for r in by_d], [r.mean_seconds for r in by_d])[2]:.4f}")
        if len(by_n) >= 3:
            print(f"{proto}: R^2 vs n = {linear_fit_r2([r.n for r in by_n], [r.mean_seconds for r in by_n])[2]:.4f}")
    return EXIT_OK


def cmd_committee_size(args) -> int:
    try:
        policy = CommitteePolicy(
            p=Fraction(args.p), threshold=Fraction(args.threshold), security_bits=args.bits,
            dropout=Fraction(args.dropout), convention=args.convention,
        )
    except (ValueError, ZeroDivisionError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    print(committee_size(policy))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .simulator import run_simulation

    try:
        base, grid = _load(args.config, args.seed, allow_sweep=True)
    except config_mod.ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_IO
    protocols = grid.get("protocols", [])
    attacks = grid.get("attacks", [])
    fs = grid.get("f", [])
    if not (protocols and attacks and fs):
        _err("empty sweep grid: [sweep] needs non-empty protocols, attacks and f")
        return EXIT_CONFIG
    rows = []
    for proto in protocols:
        for kind in attacks:
            for f in fs:
                f_eff = 0 if kind == "none" else f
                row = {"protocol": proto, "attack": kind, "f": f_eff, "seed": base.seed, "error": ""}
                try:
                    cfg = replace(base, protocol=proto, attack=replace(base.attack, kind=kind, f=f_eff))
                    row["config_hash"] = cfg.digest()
                    res = run_simulation(cfg)
                    row.update(status="ok", rounds=len(res.transcripts),
                               final_accuracy=f"{res.accuracy[-1]:.6f}" if res.accuracy else "",
                               aborts=res.aborts, flagged=sum(len(t.flagged) for t in res.transcripts),
                               bytes_total=sum(res.bytes_per_round))
                except (ValueError, RuntimeError) as exc:
                    row.update(status="failed", error=str(exc))
                rows.append(row)
                print(f"{proto} {kind} f={f_eff}: {row['status']} {row.get('final_accuracy', '')}", flush=True)
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, restval="")
            writer.writeheader()
            writer.writerows(rows)
    except OSError as exc:
        _err(f"cannot write outputs: {exc}")
        return EXIT_IO
    return EXIT_OK if any(r["status"] == "ok" for r in rows) else EXIT_ABORT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p2pagg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate training and write transcripts")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default="out")
    run.add_argument("--seed", type=int)
    run.add_argument("--protocol", choices=["rsa", "cc", "flt"])
    run.add_argument("--peers", type=int)
    run.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench", help="time member-local aggregation")
    bench.add_argument("--protocol", default="rsa,cc,flt")
    bench.add_argument("--params", default="1000,10000,100000", help="comma-separated model sizes d")
    bench.add_argument("--peers", default="100,500,1000", help="comma-separated client counts n")
    bench.add_argument("--trials", type=int, default=3)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", default="out")
    bench.set_defaults(func=cmd_bench)

    cs = sub.add_parser("committee-size", help="smallest safe committee")
    cs.add_argument("--p", required=True, help="adversarial fraction, e.g. 1/10")
    cs.add_argument("--threshold", default="1/2")
    cs.add_argument("--bits", type=int, default=40)
    cs.add_argument("--dropout", default="0")
    cs.add_argument("--convention", choices=["strict", "ceil"], default="strict")
    cs.set_defaults(func=cmd_committee_size)

    sw = sub.add_parser("sweep", help="grid of runs over protocol x attack x f")
    sw.add_argument("--config", required=True)
    sw.add_argument("--out", default="out")
    sw.add_argument("--seed", type=int)
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
