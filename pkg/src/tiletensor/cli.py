"""``tiletensor`` command line.

Subcommands: ``ops-demo``, ``dist-report``, ``cc``, ``schedule-dump``.
Exit status is 0 iff every enabled check passes.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from typing import Sequence

import numpy as np

from .cc import CCDemoConfig, run_cc_demo
from .demos import build_ops_demo, chain_program, ops_demo_oracle, spin_space
from .distribution import SCHEMES, ProcessGroup, get_distribution, memory_footprint
from .index_space import IndexSpace, TiledIndexSpace
from .tensor import Tensor, read_dense

SCHEMA_OPS = "tiletensor.ops-demo.v1"
SCHEMA_DIST = "tiletensor.dist-report.v1"
SCHEMA_SCHEDULE_DUMP = "tiletensor.schedule-dump.v1"


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _positive_float(text: str) -> float:
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return x


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--nranks", type=_positive_int, default=4, help="simulated rank count (default 4)")
    common.add_argument("--scheme", choices=sorted(SCHEMES), default=None, help="distribution scheme")
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")
    common.add_argument("--seed", type=int, default=1)
    common.add_argument("--tol", type=_positive_float, default=1e-10, help="relative tolerance for checks")

    parser = argparse.ArgumentParser(prog="tiletensor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ops-demo", parents=[common], help="run the set / add / contract example program")

    p = sub.add_parser("dist-report", parents=[common], help="memory footprint of each distribution scheme")
    p.add_argument("--extents", type=_int_list, default=[20, 20], help="tensor extents, e.g. 20,20")
    p.add_argument("--tiles", type=_int_list, default=[5], help="tile size per dim (one value applies to all)")
    p.add_argument("--spin", action="store_true", help="alpha/beta halves with the spin-conservation predicate")

    p = sub.add_parser("cc", parents=[common], help="coupled-cluster kernel agreement suite")
    p.add_argument("--no", type=int, default=3, help="occupied orbitals")
    p.add_argument("--nu", type=int, default=4, help="virtual orbitals")
    p.add_argument("--tile", type=_positive_int, default=2)

    p = sub.add_parser("schedule-dump", parents=[common], help="print a levelized schedule")
    p.add_argument("--program", choices=("ops-demo", "chain", "cc"), default="ops-demo")
    p.add_argument("--length", type=_positive_int, default=125, help="op count for the chain program")
    p.add_argument("--no", type=int, default=3)
    p.add_argument("--nu", type=int, default=4)
    return parser


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def _emit(args, report: dict, text: str) -> None:
    body = json.dumps(report, indent=2, default=_json_default) + "\n" if args.format == "json" else text + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(body)
    else:
        sys.stdout.write(body)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _num(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def _stats_lines(stats: dict) -> list[str]:
    lines = [f"{k}: {_num(v)}" for k, v in stats.items() if k != "per_rank_task_counts"]
    lines.append("rank  tasks")
    lines += [f"{r:>4}  {n}" for r, n in enumerate(stats["per_rank_task_counts"])]
    return lines


def cmd_ops_demo(args) -> int:
    scheme = args.scheme or "rr-sparse"
    demo = build_ops_demo(args.nranks, scheme)
    schedule = demo.scheduler.levelize()
    stats = demo.scheduler.execute()
    C = read_dense(demo.ec, demo.C)
    ref = ops_demo_oracle()
    err = float(np.max(np.abs(C - ref)))
    scale = float(np.max(np.abs(ref)))
    ok = err <= args.tol * scale and stats.global_syncs == schedule.level_count
    report = {
        "schema": SCHEMA_OPS,
        "config": _config(args) | {"scheme": scheme},
        "program": demo.program,
        "schedule": schedule.to_json(),
        "stats": stats.to_dict(),
        "result": {
            "tensor": "C",
            "shape": list(C.shape),
            "min": float(C.min()),
            "max": float(C.max()),
            "mean": float(C.mean()),
            "expected": float(ref.flat[0]),
            "max_abs_error": err,
        },
        "ok": bool(ok),
    }
    r = report["result"]
    text = "\n".join(
        ["program:"]
        + [f"  {line}" for line in demo.program]
        + ["", "schedule:", schedule.to_text(), "", "stats:"]
        + [f"  {line}" for line in _stats_lines(report["stats"])]
        + [
            "",
            f"C {r['shape'][0]}x{r['shape'][1]}: min {_num(r['min'])} max {_num(r['max'])} mean {_num(r['mean'])}",
            f"oracle {_num(r['expected'])}, max |error| {_num(err)}",
            "PASS" if ok else "FAIL",
        ]
    )
    _emit(args, report, text)
    return 0 if ok else 1


def _dist_tensor(extents: list[int], tiles: list[int], spin: bool) -> Tensor:
    if len(tiles) == 1:
        tiles = tiles * len(extents)
    if len(tiles) != len(extents):
        raise ValueError("--tiles needs one value or one per extent")
    dims = [TiledIndexSpace(spin_space(e) if spin else IndexSpace(e), t) for e, t in zip(extents, tiles)]
    return Tensor(dims, predicate="spin" if spin else None, name="T")


def cmd_dist_report(args) -> int:
    t = _dist_tensor(args.extents, args.tiles, args.spin)
    schemes = [args.scheme] if args.scheme else ["grid", "rr-dense", "rr-sparse"]
    pg = ProcessGroup(args.nranks)
    rows = {}
    for name in schemes:
        p = get_distribution(name).place(t, pg)
        rep = memory_footprint(p, t).to_dict()
        loads = rep["per_rank_blocks"]
        rep["block_imbalance"] = max(loads) - min(loads)
        if p.grid is not None:
            rep["grid"] = list(p.grid)
        if p.slot_size is not None:
            rep["slot_size"] = p.slot_size
        rows[name] = rep
    report = {
        "schema": SCHEMA_DIST,
        "config": _config(args),
        "tensor": {
            "shape": list(t.shape),
            "tiles": [list(d.tile_sizes) for d in t.dims],
            "nblocks": t.nblocks,
            "nonzero_blocks": len(t.nonzero_blocks()),
            "spin": bool(args.spin),
        },
        "schemes": rows,
    }
    if "rr-sparse" in rows and "rr-dense" in rows:
        report["sparse_over_dense"] = rows["rr-sparse"]["total_elements"] / rows["rr-dense"]["total_elements"]
    lines = [
        f"tensor shape {tuple(t.shape)} blocks {t.nblocks} nonzero {report['tensor']['nonzero_blocks']}"
        f" nranks {args.nranks}",
        f"{'scheme':<10} {'total':>8} {'nonzero':>8} {'overalloc':>10} {'imbalance':>9}  grid",
    ]
    for name, rep in rows.items():
        grid = "x".join(map(str, rep["grid"])) if "grid" in rep else "-"
        lines.append(
            f"{name:<10} {rep['total_elements']:>8} {rep['nonzero_elements']:>8} "
            f"{rep['overallocation_ratio']:>10.4g} {rep['block_imbalance']:>9}  {grid}"
        )
        lines.append(f"{'':<10} per-rank elements {rep['per_rank_elements']}")
    if "sparse_over_dense" in report:
        lines.append(f"rr-sparse / rr-dense total: {_num(report['sparse_over_dense'])}")
    _emit(args, report, "\n".join(lines))
    return 0


def _cc_checks(report: dict, tol: float) -> list[dict]:
    rows = []
    for name, err in report["checks"].items():
        rows.append({"name": name, **err, "status": "PASS" if err["rel_error"] <= tol else "FAIL"})
    fl = report["flops"]
    closed = fl["closed_form"]
    exact = [
        ("cost_naive_raw", fl["raw"]["naive_multiply_adds"], closed["naive"]),
        ("cost_factorized_raw", fl["raw"]["factorized_multiply_adds"], closed["factorized"]),
        ("cost_factorized_dsl", fl["dsl"]["factorized_multiply_adds"], closed["factorized"]),
        ("cost_naive_dsl", fl["dsl"]["naive_multiply_adds"], 2 * closed["naive"]),
    ]
    for name, got, want in exact:
        rows.append({"name": name, "measured": got, "predicted": want, "status": "PASS" if got == want else "FAIL"})
    n_u = report["config"]["n_u"]
    if n_u > 1:
        less = fl["dsl"]["factorized_multiply_adds"] < fl["dsl"]["naive_multiply_adds"]
        rows.append({"name": "factorized_cheaper", "status": "PASS" if less else "FAIL"})
    ch = report["cholesky"]
    rows.append(
        {
            "name": "cholesky_residual",
            "residual": ch["residual"],
            "status": "PASS" if ch["residual"] <= report["config"]["cholesky_tol"] else "FAIL",
        }
    )
    if report["triples"]["skipped"]:
        rows.append({"name": "triples", "status": "SKIP", "reason": report["triples"]["reason"]})
    return rows


def cmd_cc(args) -> int:
    if args.no < 2 or args.nu < 2:
        print("error: cc needs --no >= 2 and --nu >= 2", file=sys.stderr)
        return 2
    cfg = CCDemoConfig(n_o=args.no, n_u=args.nu, seed=args.seed, nranks=args.nranks, scheme=args.scheme or "rr-sparse", tile=args.tile)
    report = run_cc_demo(cfg)
    rows = _cc_checks(report, args.tol)
    ok = all(r["status"] != "FAIL" for r in rows)
    report["config"] = _config(args) | asdict(cfg)
    report["results"] = rows
    report["ok"] = ok
    lines = [f"cc demo n_o={args.no} n_u={args.nu} seed={args.seed} nranks={args.nranks} tol={_num(args.tol)}"]
    for r in rows:
        detail = ""
        if "rel_error" in r:
            detail = f"rel {_num(r['rel_error'])} abs {_num(r['max_abs_error'])}"
        elif "measured" in r:
            detail = f"measured {r['measured']} predicted {r['predicted']}"
        elif "residual" in r:
            detail = f"residual {_num(r['residual'])}"
        elif "reason" in r:
            detail = r["reason"]
        lines.append(f"{r['status']:<5} {r['name']:<24} {detail}")
    lines.append(f"cholesky rank {report['cholesky']['rank']} of {report['cholesky']['dimension']}")
    lines.append(f"levels {report['levels']} global syncs {report['global_syncs']}")
    failed = [r["name"] for r in rows if r["status"] == "FAIL"]
    lines.append("ALL PASS" if ok else "FAILED: " + ", ".join(failed))
    _emit(args, report, "\n".join(lines))
    return 0 if ok else 1


def cmd_schedule_dump(args) -> int:
    if args.program == "ops-demo":
        schedules = {"ops-demo": build_ops_demo(args.nranks, args.scheme or "rr-sparse").scheduler.levelize()}
    elif args.program == "chain":
        sch, _ = chain_program(args.length, nranks=args.nranks)
        schedules = {"chain": sch.levelize()}
    else:
        if args.no < 3 or args.nu < 3:
            print("error: the cc program needs --no >= 3 and --nu >= 3", file=sys.stderr)
            return 2
        rep = run_cc_demo(CCDemoConfig(n_o=args.no, n_u=args.nu, seed=args.seed, nranks=args.nranks), keep_schedules=True)
        report = {"schema": SCHEMA_SCHEDULE_DUMP, "config": _config(args), "schedules": rep["schedules"]}
        text = "\n\n".join(f"# {name}\n{_text_from_json(doc)}" for name, doc in rep["schedules"].items())
        _emit(args, report, text)
        return 0
    report = {
        "schema": SCHEMA_SCHEDULE_DUMP,
        "config": _config(args),
        "schedules": {name: s.to_json() for name, s in schedules.items()},
    }
    text = "\n\n".join(f"# {name}\n{s.to_text()}" for name, s in schedules.items())
    _emit(args, report, text)
    return 0


def _text_from_json(doc: dict) -> str:
    lines = []
    for op in doc["prelude"]:
        lines.append(f"prelude  [{op['index']}] {op['text']}")
    for lv in doc["levels"]:
        lines.append(f"level {lv['level']} ({len(lv['ops'])} ops)")
        lines += [f"  [{op['index']}] {op['text']}" for op in lv["ops"]]
    return "\n".join(lines)


COMMANDS = {
    "ops-demo": cmd_ops_demo,
    "dist-report": cmd_dist_report,
    "cc": cmd_cc,
    "schedule-dump": cmd_schedule_dump,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
