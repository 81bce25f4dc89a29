import itertools

import numpy as np
import pytest

from deftlab.crf import CrfParameters, _path_score, lattice_scores


def brute_force(x, theta):
    """All K^n sequences: (log-sum-exp of scores, argmax under the reverse-lexicographic tie rule)."""
    psi = lattice_scores(x, theta)
    n, K = x.shape[0], theta.n_labels
    seqs = list(itertools.product(range(K), repeat=n))
    scores = np.array([_path_score(psi, s) for s in seqs])
    m = scores.max()
    log_z = m + np.log(np.exp(scores - m).sum())
    best = max(scores)
    # lowest label wins at every backtracking step: compare from the last position backwards
    ties = [s for s, v in zip(seqs, scores) if v == best]
    arg = min(ties, key=lambda s: s[::-1])
    return float(log_z), list(arg)


def random_instance(rng, n, K, d, scale=1.0):
    x = rng.normal(size=(n, d))
    theta = CrfParameters(rng.normal(scale=scale, size=(K + 1, K, d)), rng.normal(scale=scale, size=(K + 1, K)))
    return x, theta


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines, printed once at the end of the session
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[criterion])
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
