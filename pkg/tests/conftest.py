import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "qformer", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("qformer")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def full_operator(widths, targets, matrix):
    """Dense operator of ``matrix`` on the ``targets`` registers (big-endian).

    Built by permuting an explicit kron product, independent of the
    tensor-reshaping kernels under test.
    """
    names = list(widths)
    dims = [1 << widths[n] for n in names]
    total = int(np.prod(dims))
    rest = [n for n in names if n not in targets]
    order = list(targets) + rest
    rest_dim = int(np.prod([1 << widths[n] for n in rest])) if rest else 1
    op = np.kron(matrix, np.eye(rest_dim))
    # index map from the (targets, rest) ordering back to the natural one
    perm = np.empty(total, dtype=int)
    shape_order = [1 << widths[n] for n in order]
    for flat in range(total):
        digits = np.unravel_index(flat, shape_order)
        natural = [0] * len(names)
        for name, d in zip(order, digits):
            natural[names.index(name)] = d
        perm[flat] = np.ravel_multi_index(natural, dims)
    out = np.zeros((total, total), dtype=complex)
    out[np.ix_(perm, perm)] = op
    return out


_CRITERIA: dict[int, dict] = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)``; parts of one criterion are ANDed."""
    def record(number: int, passed: bool, detail: str):
        entry = _CRITERIA.setdefault(number, {"passed": True, "details": []})
        entry["passed"] = entry["passed"] and bool(passed)
        entry["details"].append(detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        verdict = "PASS" if entry["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  " + "; ".join(entry["details"]))
