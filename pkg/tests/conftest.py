import numpy as np
import pytest


def central_difference(f, x: np.ndarray, h: float = 1e-5, region=None, min_h: float = 1e-9) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` w.r.t. array ``x`` (perturbed in place).

    ``region`` is an optional callable returning a hashable description of the
    smooth piece ``f`` is currently on (ReLU signs, active clamps, ...). When
    ``x + h`` and ``x - h`` land on different pieces the step straddles a kink
    and is shrunk until both sides agree, so the oracle stays a derivative.
    """
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        step = h
        while True:
            x[i] = orig + step
            fp, rp = f(), region() if region else None
            x[i] = orig - step
            fm, rm = f(), region() if region else None
            x[i] = orig
            if rp == rm or step <= min_h:
                break
            step /= 10
        grad[i] = (fp - fm) / (2 * step)
    return grad


def naive_forward(params, x) -> np.ndarray:
    """Layer-by-layer recomputation with explicit loops (ReLU hidden, linear output)."""
    h = [float(v) for v in x]
    n = len(params.weights)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = [sum(w[i, j] * h[j] for j in range(w.shape[1])) + b[i] for i in range(w.shape[0])]
        h = [max(v, 0.0) for v in z] if k < n - 1 else z
    return np.array(h)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ---------------------------------------------------

ACCEPTANCE_OUTCOMES: dict[int, tuple[str, bool, str]] = {}


def record_acceptance(number: int, name: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE_OUTCOMES[number] = (name, passed, detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_OUTCOMES):
        name, passed, detail = ACCEPTANCE_OUTCOMES[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {name}: {detail}")
