"""Per-criterion outcomes collected by the acceptance suite."""

LINES: list = []


def record(n: int, ok: bool, detail: str) -> bool:
    LINES.append((n, bool(ok), detail))
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok
