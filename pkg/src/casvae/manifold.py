"""1-D manifold reducers for VAE latents: PCA and ISOMAP.

Both embed into one coordinate. Eigenvectors come from power iteration, and
the iteration count and final residual are kept on the result so a hit
iteration cap is visible to callers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import (ConfigError, DegenerateGeometryError, DimensionError,
                     DisconnectedGraphError, DomainError)
from .rng import Rng


@dataclass
class Embedding1D:
    coords: np.ndarray
    method: str
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    eigenvalue: float = 0.0


@dataclass
class NeighborGraph:
    n: int
    adjacency: csr_matrix  # symmetric, Euclidean edge weights

    def neighbors(self, i: int) -> dict[int, float]:
        row = self.adjacency.getrow(i)
        return dict(zip(row.indices.tolist(), row.data.tolist()))

    def is_symmetric(self) -> bool:
        return (self.adjacency != self.adjacency.T).nnz == 0


def power_iteration(A: np.ndarray, tol: float = 1e-8, max_iter: int = 1000,
                    seed: int = 0) -> tuple[float, np.ndarray, int, float]:
    """Dominant eigenpair of a symmetric PSD-ish matrix.

    Returns ``(eigenvalue, unit vector, iterations, residual)`` where the
    residual is ``||A v - lambda v||`` relative to ``|lambda|``.
    """
    n = A.shape[0]
    v = Rng(seed).normal(size=n)
    v /= np.linalg.norm(v)
    lam, res = 0.0, np.inf
    for it in range(1, max_iter + 1):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0, v, it, 0.0
        v = w / norm
        Av = A @ v
        lam = float(v @ Av)
        res = float(np.linalg.norm(Av - lam * v) / max(abs(lam), 1e-300))
        if res < tol:
            return lam, v, it, res
    return lam, v, max_iter, res


def _fix_sign(v: np.ndarray) -> np.ndarray:
    # deterministic orientation: largest-magnitude entry positive
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def pca_1d(X, tol: float = 1e-8, max_iter: int = 1000) -> Embedding1D:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise DimensionError("pca_1d needs an n x d array with n >= 2")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (len(X) - 1)
    if np.trace(cov) == 0:
        raise DegenerateGeometryError("data has zero variance")
    lam, v, it, res = power_iteration(cov, tol, max_iter)
    v = _fix_sign(v)
    return Embedding1D(Xc @ v, "pca", it, res, res < tol, lam)


def knn_graph(X, k: int = 10) -> NeighborGraph:
    """Union-symmetrized k-nearest-neighbor graph with Euclidean weights."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if not 1 <= k < n:
        raise ConfigError(f"need 1 <= k < n, got k={k}, n={n}")
    sq = np.sum(X * X, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0)
    np.fill_diagonal(d2, np.inf)
    # stable sort keeps index order among equidistant candidates
    nbrs = np.argsort(d2, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    cols = nbrs.ravel()
    w = np.linalg.norm(X[rows] - X[cols], axis=1)
    # coincident points get a tiny positive weight so the edge survives sparse storage
    w = np.maximum(w, np.finfo(float).tiny)
    A = csr_matrix((w, (rows, cols)), shape=(n, n))
    A = A.maximum(A.T).tocsr()
    A.sort_indices()
    return NeighborGraph(n, A)


def geodesics(g: NeighborGraph) -> np.ndarray:
    """All-pairs shortest paths (Dijkstra per source)."""
    n_comp, labels = connected_components(g.adjacency, directed=False)
    if n_comp > 1:
        raise DisconnectedGraphError(np.bincount(labels).tolist())
    return dijkstra(g.adjacency, directed=False)


def classical_mds_1d(D, tol: float = 1e-8, max_iter: int = 1000) -> Embedding1D:
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    if D.shape != (n, n):
        raise DimensionError("distance matrix must be square")
    if not np.allclose(D, D.T, rtol=1e-12, atol=1e-12):
        raise DomainError("distance matrix must be symmetric")
    sq = D * D
    # B = -1/2 J (D o D) J, with J the centering matrix
    B = -0.5 * (sq - sq.mean(axis=0)[None, :] - sq.mean(axis=1)[:, None] + sq.mean())
    if not np.any(B):
        return Embedding1D(np.zeros(n), "mds", 0, 0.0, True, 0.0)
    lam, v, it, res = power_iteration(B, tol, max_iter)
    if lam < 0:
        # dominant eigenvalue is negative; shift so the top positive one dominates
        shift = -lam
        lam, v, it2, res = power_iteration(B + shift * np.eye(n), tol, max_iter)
        lam -= shift
        it += it2
    if lam <= 0:
        raise DegenerateGeometryError(f"top eigenvalue {lam:.3g} is not positive")
    v = _fix_sign(v)
    return Embedding1D(v * np.sqrt(lam), "mds", it, res, res < tol, lam)


def isomap_1d(X, k: int = 10, tol: float = 1e-8, max_iter: int = 1000) -> Embedding1D:
    emb = classical_mds_1d(geodesics(knn_graph(X, k)), tol, max_iter)
    emb.method = "isomap"
    return emb


def baseline_pipeline(latents, method: str = "isomap", k: int = 10, subsample: int = 2000,
                      seed: int = 0) -> np.ndarray:
    """Reduce latents to one score per row.

    ISOMAP runs on at most ``subsample`` rows; the rest take the coordinate
    of their nearest embedded row.
    """
    X = np.asarray(latents, dtype=np.float64)
    if method == "pca":
        return pca_1d(X).coords
    if method != "isomap":
        raise ConfigError(f"unknown manifold method {method!r}")
    n = len(X)
    if n <= subsample:
        return isomap_1d(X, k).coords
    idx = np.sort(Rng.derive(seed, 7).permutation(n)[:subsample])
    emb = isomap_1d(X[idx], k).coords
    out = np.empty(n)
    out[idx] = emb
    rest = np.setdiff1d(np.arange(n), idx)
    L = X[idx]
    for start in range(0, len(rest), 1024):
        chunk = rest[start:start + 1024]
        d2 = (np.sum(X[chunk] ** 2, 1)[:, None] + np.sum(L ** 2, 1)[None, :] - 2 * X[chunk] @ L.T)
        out[chunk] = emb[np.argmin(d2, axis=1)]
    return out


def write_embedding_csv(coords, path) -> None:
    """Columns ``index,coordinate``."""
    with open(path, "w") as fh:
        fh.write("index,coordinate\n")
        for i, c in enumerate(np.asarray(coords, dtype=np.float64).tolist()):
            fh.write(f"{i},{c!r}\n")
