"""Shared store for the one-line acceptance verdicts printed after the run."""

LINES: dict[int, str] = {}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES[n] = line
    print(line)
