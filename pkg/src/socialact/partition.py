"""Social-group discovery by spectral clustering of learned pairwise affinities."""
from __future__ import annotations

import numpy as np

from .losses import _sigmoid, symmetrized_scores
from .scene import Partition

ZERO_DEGREE = 1e-9
SELF_LOOP = 1.0
# Padding value for the spectrum when every node could be its own cluster:
# the non-trivial eigenvalue of a complete block with self-loops.
SPECTRUM_SENTINEL = 1.0


def affinity_from_logits(gat_logits: np.ndarray) -> np.ndarray:
    """Sigmoid of head-averaged, symmetrised attention scores; zero diagonal."""
    aff = _sigmoid(symmetrized_scores(gat_logits))
    np.fill_diagonal(aff, 0.0)
    return aff


def eigendecomp_symmetric(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal eigenvectors (columns) of a symmetric matrix."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(m, m.T, rtol=0, atol=1e-9):
        raise ValueError("matrix is not symmetric")
    return np.linalg.eigh(0.5 * (m + m.T))


def _inertia(points, labels, centers) -> float:
    return float(((points - centers[labels]) ** 2).sum())


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100, history: list | None = None) -> np.ndarray:
    """Lloyd's algorithm with farthest-first seeding from the max-norm point.

    Fully deterministic; ``seed`` is accepted for interface compatibility and
    ignored. ``history``, if given, receives the within-cluster sum of squares
    after every assignment and every update.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be between 1 and the number of points ({n})")
    chosen = [int(np.argmax(np.linalg.norm(pts, axis=1)))]
    dist = ((pts - pts[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, ((pts - pts[nxt]) ** 2).sum(axis=1))
    centers = pts[chosen].copy()
    labels = None
    for _ in range(max_iter):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        new = np.argmin(d2, axis=1)
        if history is not None:
            history.append(_inertia(pts, new, centers))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            sel = labels == j
            if sel.any():
                centers[j] = pts[sel].mean(axis=0)
        if history is not None:
            history.append(_inertia(pts, labels, centers))
    return labels


def choose_k(eigenvalues: np.ndarray, k_max: int) -> int:
    """Largest eigengap lambda_{k+1} - lambda_k over k = 1..k_max (first on ties)."""
    padded = np.append(eigenvalues, SPECTRUM_SENTINEL)
    k_max = max(1, min(k_max, len(eigenvalues)))
    gaps = padded[1:k_max + 1] - padded[:k_max]
    return int(np.argmax(gaps)) + 1


def spectral_partition(aff: np.ndarray, k_max: int | None = None) -> tuple[Partition, int]:
    """Partition actors from a symmetric affinity in [0, 1] with zero diagonal.

    Nodes with (near) zero degree become singletons. The rest get unit
    self-loops, so a node whose links are all weak stays apart instead of
    being rescaled into a clique by the degree normalisation. The cluster
    count comes from the eigengap of the normalised Laplacian; k-means runs
    on the row-normalised leading eigenvectors. Returns the partition and its
    number of groups.
    """
    A = np.asarray(aff, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or n < 1:
        raise ValueError("affinity must be a non-empty square matrix")
    if k_max is None:
        k_max = min(n, 6)
    if not 1 <= k_max <= n:
        raise ValueError(f"k_max={k_max} must lie in [1, {n}]")
    A = 0.5 * (A + A.T)
    np.fill_diagonal(A, 0.0)
    if n == 1:
        return Partition(((0,),)), 1

    degree = A.sum(axis=1)
    isolated = np.flatnonzero(degree < ZERO_DEGREE)
    live = np.flatnonzero(degree >= ZERO_DEGREE)
    groups = [(int(i),) for i in isolated]
    if live.size:
        B = A[np.ix_(live, live)] + SELF_LOOP * np.eye(live.size)
        d = B.sum(axis=1)
        inv_sqrt = 1.0 / np.sqrt(d)
        L = np.eye(live.size) - inv_sqrt[:, None] * B * inv_sqrt[None, :]
        vals, vecs = eigendecomp_symmetric(L)
        k_live = max(1, k_max - len(groups))
        k = choose_k(vals, min(k_live, live.size))
        U = vecs[:, :k]
        norms = np.linalg.norm(U, axis=1, keepdims=True)
        U = U / np.where(norms > 0, norms, 1.0)
        labels = kmeans(U, k)
        for j in np.unique(labels):
            groups.append(tuple(int(live[i]) for i in np.flatnonzero(labels == j)))
    part = Partition(tuple(groups))
    return part, len(part)
