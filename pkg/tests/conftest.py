from __future__ import annotations

import sys
import textwrap
from pathlib import Path

import pytest

from cedsmc_app import paths
from cedsmc_app.eqcheck import CheckerConfig, EqualityChecker
from cedsmc_app.ledger import StatsLedger
from cedsmc_app.querycache import QueryCache
from cedsmc_app.solverbridge import EnumerationSession, ExternalBackend

FAKE_SOLVER = textwrap.dedent(
    """
    import pathlib
    import sys
    import time

    mode = sys.argv[1]
    aux = pathlib.Path(sys.argv[2]) if len(sys.argv) > 2 else None
    replies = {
        "sat": "sat",
        "unsat": "unsat",
        "unknown": "unknown",
        "error": '(error "line 3 column 9: unknown constant")',
        "garbage": "banana",
        "die-once": "unsat",
        "log": "sat",
    }
    for line in sys.stdin:
        text = line.strip()
        if mode == "log" and aux is not None:
            with aux.open("a") as f:
                f.write(text + "\\n")
        if text == "(exit)":
            break
        if text != "(check-sat)":
            continue
        if mode == "die":
            sys.exit(3)
        if mode == "die-once" and aux is not None and not aux.exists():
            aux.write_text("crashed")
            sys.exit(3)
        if mode == "hang":
            time.sleep(30)
            continue
        print(replies[mode], flush=True)
    """
)


@pytest.fixture
def corpus_dir() -> Path:
    return paths.corpus_root()


@pytest.fixture
def fake_solver(tmp_path: Path):
    """Build an ExternalBackend running a scripted SMT-LIB responder."""
    script = tmp_path / "fake_solver.py"
    script.write_text(FAKE_SOLVER, encoding="utf-8")

    def make(mode: str, *, aux: Path | None = None, timeout_ms: int = 5_000) -> ExternalBackend:
        args = [str(script), mode] + ([str(aux)] if aux is not None else [])
        return ExternalBackend(sys.executable, tuple(args), timeout_ms)

    return make


@pytest.fixture(scope="session")
def requires_solver() -> ExternalBackend:
    path = paths.solver_path()
    if not path:
        pytest.skip("no SMT-LIB solver configured (set CEDS_SOLVER)")
    return ExternalBackend(path, paths.solver_args())


@pytest.fixture
def enum_session():
    with EnumerationSession() as session:
        yield session


@pytest.fixture
def make_checker(enum_session):
    def make(*, cache: bool = True, syntactic: bool = True, revalidate_every: int = 0) -> EqualityChecker:
        return EqualityChecker(
            enum_session,
            QueryCache() if cache else None,
            StatsLedger(),
            CheckerConfig(syntactic=syntactic, cache=cache, revalidate_every=revalidate_every),
        )

    return make
