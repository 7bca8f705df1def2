from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Any

from . import __version__, paths
from .corpus import list_programs
from .errors import BackendError, CedsError, ProgramError, ReportError, SolverFailure
from .explorer import ExploreConfig, SearchOrder, StoreKind, Verdict, VerdictKind, explore
from .ledger import StatsLedger
from .progmodel import parse_program
from .querycache import CacheStats, QueryCache
from .solverbridge import BackendConfig, EnumerationBackend, ExternalBackend


LOG = logging.getLogger(__name__)

EXIT_SAFE = 0
EXIT_ASSERT_FAIL = 1
EXIT_EXHAUSTED = 2
EXIT_USAGE = 3
EXIT_FAILURE = 4

VERDICT_EXIT = {
    VerdictKind.SAFE: EXIT_SAFE,
    VerdictKind.ASSERT_FAIL: EXIT_ASSERT_FAIL,
    VerdictKind.EXHAUSTED: EXIT_EXHAUSTED,
}

# Fixed report keys, in table order.
REPORT_KEYS = (
    "program",
    "store",
    "cache",
    "backend",
    "verdict",
    "equal_checks",
    "syntactic_equal",
    "cache_hits",
    "solver_calls",
    "emptiness_checks",
    "states_generated",
    "states_stored",
    "wall_time_ms",
)


@dataclass(frozen=True)
class RunReport:
    program: str
    store: StoreKind
    cache: bool
    backend: str
    verdict: Verdict
    ledger: StatsLedger
    cache_stats: CacheStats | None = None

    def as_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "program": self.program,
            "store": self.store.value,
            "cache": "on" if self.cache else "off",
            "backend": self.backend,
            "verdict": self.verdict.kind.value,
            "equal_checks": self.ledger.equal_checks,
            "syntactic_equal": self.ledger.syntactic_equal,
            "cache_hits": self.ledger.cache_hits,
            "solver_calls": self.ledger.solver_calls,
            "emptiness_checks": self.ledger.emptiness_checks,
            "states_generated": self.ledger.states_generated,
            "states_stored": self.ledger.states_stored,
            "wall_time_ms": round(self.ledger.wall_time_ms, 3),
            "cache_stats": (self.cache_stats or CacheStats()).as_dict(),
        }
        if self.verdict.kind is VerdictKind.ASSERT_FAIL:
            out["trace"] = [s.as_dict() for s in self.verdict.trace]
        return out


def _table(rows: Sequence[dict[str, Any]]) -> str:
    cells = [[str(r[k]) for k in REPORT_KEYS] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(REPORT_KEYS)]
    lines = ["  ".join(k.ljust(w) for k, w in zip(REPORT_KEYS, widths))]
    for c in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(c, widths)))
    return "\n".join(lines) + "\n"


def emit_report(report: RunReport, fmt: str = "json") -> str:
    if not report.ledger.conserved:
        ledger = report.ledger
        raise ReportError(
            f"ledger not conserved: equal_checks={ledger.equal_checks} but "
            f"{ledger.syntactic_equal}+{ledger.cache_hits}+{ledger.solver_calls}"
        )
    data = report.as_dict()
    if fmt == "json":
        return json.dumps(data, indent=2, sort_keys=True) + "\n"
    if fmt == "text":
        text = _table([data])
        for step in report.verdict.trace:
            text += f"  thread {step.thread} {step.function}@{step.pc}\n"
        return text
    raise ValueError(f"unknown report format {fmt!r}")


def run_program(path: Path, cfg: ExploreConfig) -> RunReport:
    program = parse_program(path.read_text(encoding="utf-8"))
    cache = QueryCache(cfg.cache_capacity) if cfg.cache_enabled else None
    LOG.info("Checking %s (store=%s cache=%s backend=%s)", path.name, cfg.store.value, cfg.cache_enabled, cfg.backend.name)
    verdict, ledger = explore(program, cfg, cache=cache)
    return RunReport(
        program=str(path),
        store=cfg.store,
        cache=cfg.cache_enabled,
        backend=cfg.backend.name,
        verdict=verdict,
        ledger=ledger,
        cache_stats=cache.stats() if cache is not None else None,
    )


ALL_CONFIGS = tuple((store, cache) for store in (StoreKind.MONOLITHIC, StoreKind.SLICED) for cache in (False, True))


def run_bench(
    root: Path,
    base: ExploreConfig,
    *,
    all_configs: bool = False,
    out: IO[str] | None = None,
    err: IO[str] | None = None,
) -> list[RunReport]:
    """Run every corpus program; one JSON line per run on out, a summary table on err."""
    out = out or sys.stdout
    err = err or sys.stderr
    configs = ALL_CONFIGS if all_configs else ((base.store, base.cache_enabled),)

    reports: list[RunReport] = []
    for path in list_programs(root):
        for store, cache in configs:
            report = run_program(path, replace(base, store=store, cache_enabled=cache))
            emit_report(report)
            out.write(json.dumps(report.as_dict(), sort_keys=True) + "\n")
            out.flush()
            reports.append(report)
    err.write(_table([r.as_dict() for r in reports]))
    return reports


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _ArgumentParser(prog="ceds-mc", description="Control-explicit data-symbolic model checker.")
    p.add_argument("program", nargs="?", type=Path, help="program file (.cir)")
    p.add_argument("--store", choices=[s.value for s in StoreKind], default=StoreKind.SLICED.value)
    p.add_argument("--cache", choices=["on", "off"], default="on")
    p.add_argument("--backend", choices=["smtlib", "enum"], default="smtlib")
    p.add_argument("--solver", metavar="PATH", help="SMT-LIB solver binary (default: $CEDS_SOLVER or z3)")
    p.add_argument("--timeout-ms", type=int, default=60_000, help="per-query solver timeout")
    p.add_argument("--max-domain-bits", type=int, default=24, help="enumeration backend cap")
    p.add_argument("--max-states", type=int, default=10**6)
    p.add_argument("--order", choices=[o.value for o in SearchOrder], default=SearchOrder.BFS.value)
    p.add_argument("--bench", metavar="DIR", type=Path, help="run every program in DIR")
    p.add_argument("--all-configs", action="store_true", help="with --bench: all store/cache combinations")
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("-q", "--quiet", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _backend(args: argparse.Namespace, parser: argparse.ArgumentParser) -> BackendConfig:
    if args.backend == "enum":
        return EnumerationBackend(args.max_domain_bits)
    solver = args.solver or paths.solver_path()
    if not solver:
        parser.error("the smtlib backend needs --solver PATH or CEDS_SOLVER")
    return ExternalBackend(solver, paths.solver_args(), args.timeout_ms)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(sys.argv[1:] if argv is None else list(argv))

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    if args.bench is None and args.program is None:
        parser.error("a program file or --bench DIR is required")
    if args.all_configs and args.bench is None:
        parser.error("--all-configs needs --bench")

    try:
        cfg = ExploreConfig(
            store=StoreKind(args.store),
            cache_enabled=args.cache == "on",
            backend=_backend(args, parser),
            max_states=args.max_states,
            search_order=SearchOrder(args.order),
        )
    except ValueError as e:
        parser.error(str(e))

    try:
        if args.bench is not None:
            if not args.bench.is_dir():
                parser.error(f"not a directory: {args.bench}")
            run_bench(args.bench, cfg, all_configs=args.all_configs)
            return EXIT_SAFE

        if not args.program.is_file():
            parser.error(f"no such program file: {args.program}")
        report = run_program(args.program, cfg)
        sys.stdout.write(emit_report(report, args.format))
        return VERDICT_EXIT[report.verdict.kind]
    except ProgramError as e:
        LOG.error("%s: %s", args.program or args.bench, e)
        return EXIT_USAGE
    except (SolverFailure, BackendError, ReportError) as e:
        LOG.error("%s", e)
        return EXIT_FAILURE
    except CedsError as e:
        LOG.error("Internal error: %s", e)
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
