"""Linear-chain CRF with a weight vector per ordered tag pair.

The score of a label sequence ``y`` for inputs ``x_1..x_n`` is::

    sum_i  W[y_{i-1}, y_i] . x_i + b[y_{i-1}, y_i]

with ``y_0`` a begin-of-sequence pseudo-tag.  ``W`` has shape ``(K+1, K, d)``
and ``b`` shape ``(K+1, K)``: row 0 is the begin pseudo-tag and row ``k+1``
the previous label ``k``.  There is no end transition.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BOS_ROW = 0


def logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


class ShapeError(ValueError):
    pass


@dataclass
class CrfParameters:
    W: np.ndarray  # (K+1, K, d)
    b: np.ndarray  # (K+1, K)

    @property
    def n_labels(self) -> int:
        return self.W.shape[1]

    @property
    def dim(self) -> int:
        return self.W.shape[2]

    @classmethod
    def init(cls, n_labels: int, dim: int, rng: np.random.Generator, scale: float = 0.05):
        W = rng.uniform(-scale, scale, size=(n_labels + 1, n_labels, dim))
        b = np.zeros((n_labels + 1, n_labels))
        return cls(W, b)

    @classmethod
    def zeros(cls, n_labels: int, dim: int):
        return cls(np.zeros((n_labels + 1, n_labels, dim)), np.zeros((n_labels + 1, n_labels)))


def _check(x: np.ndarray, theta: CrfParameters) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"inputs must be a non-empty (n, d) matrix, got shape {x.shape}")
    if x.shape[1] != theta.dim:
        raise ShapeError(f"input width {x.shape[1]} does not match parameter width {theta.dim}")
    return x


def lattice_scores(x: np.ndarray, theta: CrfParameters) -> np.ndarray:
    """Pair scores ``psi[i, p, c]`` of shape ``(n, K+1, K)``."""
    x = _check(x, theta)
    W = np.asarray(theta.W, dtype=np.float64)
    return np.einsum("pcd,nd->npc", W, x) + np.asarray(theta.b, dtype=np.float64)


def _path_score(psi: np.ndarray, y) -> float:
    prev = BOS_ROW
    total = 0.0
    for i, c in enumerate(y):
        total += psi[i, prev, c]
        prev = c + 1
    return total


def sequence_score(x, y, theta: CrfParameters) -> float:
    y = list(y)
    x = _check(x, theta)
    if len(y) != x.shape[0]:
        raise ShapeError(f"{len(y)} labels for {x.shape[0]} positions")
    return float(_path_score(lattice_scores(x, theta), y))


def _forward(psi: np.ndarray) -> np.ndarray:
    n = psi.shape[0]
    alpha = np.empty((n, psi.shape[2]))
    alpha[0] = psi[0, BOS_ROW]
    for i in range(1, n):
        alpha[i] = logsumexp(alpha[i - 1][:, None] + psi[i, 1:], axis=0)
    return alpha


def _backward(psi: np.ndarray) -> np.ndarray:
    n, _, K = psi.shape
    beta = np.zeros((n, K))
    for i in range(n - 2, -1, -1):
        beta[i] = logsumexp(psi[i + 1, 1:] + beta[i + 1][None, :], axis=1)
    return beta


def log_partition(x, theta: CrfParameters) -> float:
    """Log of the sum of exp(score) over all ``K^n`` label sequences (forward recursion)."""
    psi = lattice_scores(x, theta)
    return float(logsumexp(_forward(psi)[-1]))


def pair_marginals(psi: np.ndarray) -> tuple[np.ndarray, float]:
    """Posterior probability of each active pair ``(y_{i-1}, y_i)``, laid out like ``psi``."""
    alpha = _forward(psi)
    beta = _backward(psi)
    log_z = float(logsumexp(alpha[-1]))
    marg = np.zeros_like(psi)
    marg[0, BOS_ROW] = np.exp(psi[0, BOS_ROW] + beta[0] - log_z)
    if psi.shape[0] > 1:
        marg[1:, 1:] = np.exp(alpha[:-1, :, None] + psi[1:, 1:] + beta[1:, None, :] - log_z)
    return marg, log_z


def nll_and_gradient(x, y_gold, theta: CrfParameters):
    """Negative log-likelihood of ``y_gold`` and its gradients.

    Returns ``(loss, dW, db, dx)``: expected minus observed pair-feature counts.
    """
    x = _check(x, theta)
    y = list(y_gold)
    if len(y) != x.shape[0]:
        raise ShapeError(f"{len(y)} labels for {x.shape[0]} positions")
    psi = lattice_scores(x, theta)
    marg, log_z = pair_marginals(psi)
    loss = log_z - _path_score(psi, y)
    d_psi = marg
    prev = BOS_ROW
    for i, c in enumerate(y):
        d_psi[i, prev, c] -= 1.0
        prev = c + 1
    W = np.asarray(theta.W, dtype=np.float64)
    dW = np.einsum("npc,nd->pcd", d_psi, x)
    db = d_psi.sum(axis=0)
    dx = np.einsum("npc,pcd->nd", d_psi, W)
    return float(loss), dW, db, dx


def viterbi_from_scores(psi: np.ndarray) -> tuple[list[int], float]:
    n = psi.shape[0]
    delta = psi[0, BOS_ROW].copy()
    back = np.zeros((n, psi.shape[2]), dtype=np.int64)
    for i in range(1, n):
        cand = delta[:, None] + psi[i, 1:]
        # argmax returns the first maximum, i.e. the lowest previous label
        back[i] = np.argmax(cand, axis=0)
        delta = cand[back[i], np.arange(cand.shape[1])]
    last = int(np.argmax(delta))
    best = float(delta[last])
    path = [last]
    for i in range(n - 1, 0, -1):
        path.append(int(back[i, path[-1]]))
    return path[::-1], best


def viterbi_decode(x, theta: CrfParameters) -> list[int]:
    """Highest-scoring label sequence; ties go to the lower label index while backtracking."""
    return viterbi_from_scores(lattice_scores(x, theta))[0]
