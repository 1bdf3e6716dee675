"""Command-line driver: analyze IR files, validate bounds, emit reports."""
from __future__ import annotations

import argparse
import json
import os
import re
import sys
from importlib import resources
from pathlib import Path

from .analyzer import AnalysisConfig, AnalysisError, UnboundedStoreError, \
    run_analysis
from .ir import ParseError, parse
from .observers import ObserverSpecError, parse_observer
from .oracle import OracleError, build_scenarios, check_bound

EXIT_OK = 0
EXIT_ERROR = 1         # usage errors, parse errors, bound violations
EXIT_INCONCLUSIVE = 2  # unroll-limit, top-widened, unbounded-store


def corpus_dir() -> Path:
    return Path(resources.files("leaktrace") / "corpus")


def corpus_manifest() -> list[tuple[str, dict[str, int]]]:
    """Golden observation-count bounds for the bundled kernels, per
    observer (bits of leakage = log2 of the count).  Desk scale: 8 table
    entries of 4 bytes, spacing 8, 64-byte blocks, 12-bit address space.
    Every value was re-derived with the concrete oracle before pinning;
    counts above the oracle's exact view count (gather d/addr bound 4096
    vs. exact 8, lookup d/addr bound 81 vs. exact 8) are the expected
    accumulation of per-access imprecision over correlated lookups."""
    return [
        ("example2.ir", {"d/addr": 2}),
        ("branch_block.ir", {"i/addr": 2, "i/block:6": 2, "i/block:6~": 1}),
        ("sqm.ir", {"i/addr": 2, "d/addr": 2}),
        ("sq_always_m_tight.ir", {"d/addr": 1, "i/addr": 2, "i/block:6~": 1}),
        ("sq_always_m_loose.ir", {"d/addr": 1, "i/block:5~": 2}),
        ("gather_aligned.ir", {"d/block:6": 1, "d/addr": 4096, "d/bank:2": 16}),
        ("gather_defensive.ir", {"d/addr": 1, "d/block:6": 1, "d/bank:2": 1}),
        ("lookup_branch.ir", {"i/addr": 2, "d/addr": 81}),
        ("secure_retrieve.ir", {"d/addr": 1, "d/block:6": 1, "d/bank:2": 1}),
    ]


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="leaktrace",
        description="Sound per-observer upper bounds on what a program's "
                    "memory-access trace reveals about its secrets.")
    sub = ap.add_subparsers(dest="command", required=True)

    an = sub.add_parser("analyze", help="analyze IR files")
    an.add_argument("files", nargs="+")
    an.add_argument("-o", "--observer", action="append", dest="observers",
                    metavar="SPEC",
                    help="observer spec like d/block:6, i/addr, id/page:12~ "
                         "(repeatable; default: id/addr)")
    an.add_argument("--bitwidth", type=int, default=None,
                    help="override the program's declared bit width")
    an.add_argument("--unroll", type=int, default=4096,
                    help="per-branch loop unroll limit")
    an.add_argument("--cap", type=int, default=256,
                    help="abstract value-set size cap before widening to Top")
    an.add_argument("--align", type=int, default=None,
                    help="model allocator alignment (power of two)")
    an.add_argument("--json", action="store_true", help="emit JSON reports")
    an.add_argument("--dot", metavar="DIR", default=None,
                    help="write per-observer trace DAGs as DOT files")
    an.add_argument("--validate", action="store_true",
                    help="cross-check bounds against the concrete oracle")
    an.add_argument("--samples", type=int, default=50,
                    help="valuation samples for --validate")
    an.add_argument("--seed", type=int, default=None,
                    help="sampling seed (also via LEAKTRACE_SEED)")
    an.add_argument("--witness-file", default=None,
                    help="write bound-violation witnesses as JSON lines")

    rp = sub.add_parser("replay", help="re-run a recorded violation witness")
    rp.add_argument("witness")
    rp.add_argument("file")
    rp.add_argument("--bitwidth", type=int, default=None)

    sub.add_parser("corpus-path", help="print the bundled corpus directory")
    return ap


def _resolve_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    candidate = corpus_dir() / name
    if candidate.exists():
        return candidate
    raise FileNotFoundError(name)


def _sanitize(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", name)


def _print_table(rows: list[tuple]) -> None:
    headers = ("program", "observer", "count", "bits", "status")
    widths = [max(len(str(r[i])) for r in rows + [headers])
              for i in range(len(headers))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    print(fmt.format(*headers))
    for r in rows:
        print(fmt.format(*[str(c) for c in r]))


def _cmd_analyze(args) -> int:
    specs = args.observers or ["id/addr"]
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get("LEAKTRACE_SEED", "0"))
    exit_code = EXIT_OK
    rows = []
    reports = []
    verdict_lines = []
    witnesses = []
    for fname in args.files:
        try:
            path = _resolve_path(fname)
            prog = parse(path.read_text(), name=str(fname))
            width = args.bitwidth or prog.bitwidth
            observers = [parse_observer(s, width) for s in specs]
            cfg = AnalysisConfig(observers=observers, bitwidth=args.bitwidth,
                                 set_cap=args.cap, unroll_limit=args.unroll,
                                 malloc_alignment=args.align)
            analysis = run_analysis(prog, cfg)
            report = analysis.report
        except (ParseError, ObserverSpecError, FileNotFoundError,
                OracleError) as e:
            print(f"error: {fname}: {e}", file=sys.stderr)
            return EXIT_ERROR
        except UnboundedStoreError as e:
            print(f"inconclusive: {fname}: {e}", file=sys.stderr)
            return EXIT_INCONCLUSIVE

        reports.append(report)
        for r in report.results:
            bits = "n/a" if r.bits is None else f"{r.bits:.6g}"
            rows.append((report.program, r.name,
                         "n/a" if r.count is None else r.count, bits, r.status))
        if report.status != "ok":
            exit_code = EXIT_INCONCLUSIVE

        if args.dot:
            outdir = Path(args.dot)
            outdir.mkdir(parents=True, exist_ok=True)
            stem = _sanitize(Path(fname).name)
            for obs in cfg.observers:
                dag = analysis.dags[obs.name]
                final = analysis.final_vertices.get(obs.name)
                out = outdir / f"{stem}__{_sanitize(obs.name)}.dot"
                out.write_text(dag.to_dot(final))

        if args.validate:
            scen = build_scenarios(prog, bitwidth=args.bitwidth,
                                   samples=args.samples, seed=seed,
                                   alignment=args.align)
            verdict = check_bound(prog, cfg, scen)
            verdict_lines.append(
                f"{fname}: validate: "
                f"{'OK' if verdict.ok else 'VIOLATIONS'} "
                f"({verdict.checked_valuations} valuations, "
                f"{verdict.checked_runs} runs, "
                f"{len(verdict.violations)} violations)")
            if not verdict.ok:
                exit_code = EXIT_ERROR
                witnesses.extend(verdict.violations)

    if args.json:
        print(json.dumps([json.loads(r.to_json()) for r in reports],
                         sort_keys=True))
    else:
        _print_table(rows)
    for line in verdict_lines:
        print(line)
    if witnesses:
        if args.witness_file:
            Path(args.witness_file).write_text(
                "\n".join(w.to_json() for w in witnesses) + "\n")
        else:
            for w in witnesses:
                print(w.to_json(), file=sys.stderr)
    return exit_code


def _cmd_replay(args) -> int:
    from .observers import parse_observer as pobs
    from .oracle import high_assignments, run_concrete
    from .observers import view_concrete
    data = json.loads(Path(args.witness).read_text())
    prog = parse(_resolve_path(args.file).read_text(), name=args.file)
    lam = {int(k): v for k, v in data["lam"].items()}
    width = args.bitwidth or prog.bitwidth
    obs = pobs(data["observer"], width)
    views = set()
    for high in high_assignments(prog):
        st = run_concrete(prog, dict(lam), high, bitwidth=args.bitwidth)
        views.add(view_concrete(st.trace, obs))
    print(f"observer {data['observer']}: exact {len(views)} distinct views, "
          f"recorded bound {data['bound']}")
    for v in sorted(views):
        print("  " + " ".join(str(x) for x in v))
    return EXIT_OK if len(views) <= data["bound"] else EXIT_ERROR


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "replay":
            return _cmd_replay(args)
        if args.command == "corpus-path":
            print(corpus_dir())
            return EXIT_OK
    except AnalysisError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
