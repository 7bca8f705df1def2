from __future__ import annotations

import sys
from pathlib import Path

from .progmodel import parse_program


PROGRAM_SUFFIXES: frozenset[str] = frozenset({".cir"})


def list_programs(root: Path) -> list[Path]:
    """Return program files (direct children) in a corpus directory."""

    if not root.exists():
        return []

    programs: list[Path] = []
    for child in root.iterdir():
        if not child.is_file() or child.name.startswith("."):
            continue
        if child.suffix.lower() not in PROGRAM_SUFFIXES:
            continue
        programs.append(child)

    return sorted(programs, key=lambda p: p.name.casefold())


def _self_test(argv: list[str]) -> int:
    from .paths import corpus_root

    root = Path(argv[1]) if len(argv) > 1 else corpus_root()
    programs = list_programs(root)
    print(f"corpus_root={root.resolve()}")

    for path in programs:
        program = parse_program(path.read_text(encoding="utf-8"))
        assert program.main.body, f"{path} has an empty main"
        print(f"{path.name}: {len(program.functions)} functions, {program.instr_count()} instructions")

    return 0


if __name__ == "__main__":
    raise SystemExit(_self_test(sys.argv))
