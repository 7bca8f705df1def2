from __future__ import annotations

import os
import shlex
import shutil
from pathlib import Path


def solver_path() -> str | None:
    # SMT-LIB solver binary. Override with CEDS_SOLVER, else look for z3 on PATH.
    env = os.environ.get("CEDS_SOLVER")
    if env:
        return str(Path(env).expanduser())
    return shutil.which("z3")


def solver_args() -> tuple[str, ...] | None:
    """Extra solver arguments from CEDS_SOLVER_ARGS, or None for the defaults."""
    env = os.environ.get("CEDS_SOLVER_ARGS")
    if env is None:
        return None
    return tuple(shlex.split(env))


def corpus_root() -> Path:
    env = os.environ.get("CEDS_CORPUS")
    if env:
        return Path(env).expanduser()
    return Path(__file__).resolve().parent.parent / "corpus"
