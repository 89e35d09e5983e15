import numpy as np


def rel_err(approx, exact) -> float:
    approx, exact = np.asarray(approx, float), np.asarray(exact, float)
    return float(np.linalg.norm(approx - exact) / max(np.linalg.norm(exact), 1e-10))


def central_diff(f, x, h=1e-5):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, float)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


ACCEPTANCE_LINES: list[str] = []


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
