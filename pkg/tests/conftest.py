import numpy as np
import pytest
import scipy.linalg as sla

from stochlspg.gpc import gauss_rule, hermite_space
from stochlspg.problems import build_problem
from stochlspg.sysmodel import ParamSystem


@pytest.fixture(scope="session")
def diffusion1():
    return build_problem("diffusion1")


@pytest.fixture(scope="session")
def rule30():
    return gauss_rule(hermite_space(), 30)


@pytest.fixture
def spd_toy():
    """Small SPD system with smooth, non-polynomial dependence on xi."""
    B = np.array([[2.0, 0.3, 0.0], [0.3, 1.5, 0.2], [0.0, 0.2, 1.0]])
    D = np.diag([0.5, -0.2, 0.3])

    def A(xi):
        return B * np.exp(0.2 * xi) + np.diag(np.exp(D.diagonal() * xi))

    return ParamSystem(3, A, lambda xi: np.array([1.0, np.sin(xi), xi * xi]),
                       spd=True, name="spd_toy")


def stacked_lstsq(sys, basis, rule, M_of):
    """Weighted least squares over all nodes at once: independent LSPG oracle.

    Row block k is ``sqrt(w_k) M_k A_k (psi_k^T (x) I)`` against ``sqrt(w_k) M_k f_k``.
    ``M_of(A, xi)`` returns the weighting matrix at one node.
    """
    rows, rhs = [], []
    for xi, w in zip(rule.nodes, rule.weights):
        A, f = sys.A(xi), sys.f(xi)
        M = M_of(A, xi)
        psi = basis.evaluate(xi)
        rows.append(np.sqrt(w) * np.kron(psi[None, :], M @ A))
        rhs.append(np.sqrt(w) * (M @ f))
    x, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    return x


def energy_M(A, xi):
    return sla.inv(np.linalg.cholesky(A))


def identity_M(A, xi):
    return np.eye(A.shape[0])


def inverse_M(A, xi):
    return sla.inv(A)


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion
# ---------------------------------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "seconds": 0.0})
    if report.when == "call":
        entry["seconds"] += report.duration
    if report.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        verdict = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(
            f"{verdict}  criterion {number:2d}  {e['title']}  ({e['seconds']:.2f} s)")
