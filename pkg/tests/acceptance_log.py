"""Shared record of acceptance outcomes, printed at the end of the session."""

_RESULTS = {}


def record(number: int, title: str, passed: bool, detail: str) -> str:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    _RESULTS[number] = line
    print(line)
    return line


def lines() -> list:
    return [_RESULTS[k] for k in sorted(_RESULTS)]
