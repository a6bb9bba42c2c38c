"""Normalized-Laplacian spectra and the spectral pseudo-distance between graphs.

The symmetric eigensolver here (Householder tridiagonalization followed by
implicit QL) is also used by the PCA step in :mod:`gennape.fcm`.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EigenConvergenceError
from .graph import ComputeGraph, undirected_adjacency

DEFAULT_Q = 21
PAD_VALUE = 2.0
MAX_SWEEPS = 10_000


def _tridiagonalize(a: np.ndarray, want_vectors: bool):
    """Householder reduction A = Q T Q^T. Returns (diag, offdiag, Q or None)."""
    a = np.array(a, dtype=float, copy=True)
    n = a.shape[0]
    q = np.eye(n) if want_vectors else None
    off = np.zeros(max(n - 1, 0))
    for k in range(n - 2):
        x = a[k + 1 :, k]
        tail = float(np.dot(x[1:], x[1:]))
        if tail == 0.0:
            off[k] = x[0]
            continue
        norm_x = math.sqrt(x[0] * x[0] + tail)
        alpha = -norm_x if x[0] >= 0 else norm_x
        v = x.copy()
        v[0] -= alpha
        v /= np.linalg.norm(v)
        off[k] = alpha
        # trailing block <- H B H with H = I - 2 v v^T, as a symmetric rank-2 update
        sub = a[k + 1 :, k + 1 :]
        p = 2.0 * (sub @ v)
        w = p - (v @ p) * v
        sub -= np.outer(v, w) + np.outer(w, v)
        if q is not None:
            q[:, k + 1 :] -= 2.0 * np.outer(q[:, k + 1 :] @ v, v)
    if n >= 2:
        off[n - 2] = a[n - 1, n - 2]
    d = np.diag(a).copy()
    return d, off, q


def _implicit_ql(d: np.ndarray, off: np.ndarray, z: np.ndarray | None, max_sweeps: int):
    """Eigenvalues of a symmetric tridiagonal matrix, in place on d (and z)."""
    n = d.shape[0]
    d = [float(v) for v in d]
    e = [float(v) for v in off] + [0.0]
    eps = np.finfo(float).eps
    sweeps = 0
    for l in range(n):
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            sweeps += 1
            if sweeps > max_sweeps:
                raise EigenConvergenceError(f"implicit QL did not converge in {max_sweeps} sweeps")
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + (r if g >= 0 else -r))
            s = c = 1.0
            p = 0.0
            underflow = False
            i = m - 1
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                if z is not None:
                    zi = z[:, i].copy()
                    z[:, i] = c * zi - s * z[:, i + 1]
                    z[:, i + 1] = s * zi + c * z[:, i + 1]
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return np.array(d)


def symmetric_eigh(a: np.ndarray, want_vectors: bool = True, max_sweeps: int = MAX_SWEEPS):
    """Eigen-decomposition of a real symmetric matrix, eigenvalues ascending.

    Returns ``(values, vectors)`` with eigenvectors in columns; ``vectors`` is
    None when ``want_vectors`` is False.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0), (np.zeros((0, 0)) if want_vectors else None)
    a = 0.5 * (a + a.T)
    d, off, q = _tridiagonalize(a, want_vectors)
    vals = _implicit_ql(d, off, q, max_sweeps)
    order = np.argsort(vals, kind="stable")
    vals = vals[order]
    if want_vectors:
        return vals, q[:, order]
    return vals, None


def symmetric_eigvals(a: np.ndarray) -> np.ndarray:
    return symmetric_eigh(a, want_vectors=False)[0]


def laplacian_from_adjacency(adj: np.ndarray) -> np.ndarray:
    adj = np.asarray(adj, dtype=float)
    deg = adj.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    lap = np.diag(nz.astype(float)) - inv_sqrt[:, None] * adj * inv_sqrt[None, :]
    return 0.5 * (lap + lap.T)


def normalized_laplacian(cg: ComputeGraph) -> np.ndarray:
    """I - D^-1/2 A D^-1/2 over the undirected skeleton; isolated rows are zero."""
    return laplacian_from_adjacency(undirected_adjacency(cg))


def signature_from_eigenvalues(vals: np.ndarray, q: int = DEFAULT_Q) -> np.ndarray:
    vals = np.clip(np.sort(np.asarray(vals, dtype=float)), 0.0, 2.0)[:q]
    if vals.shape[0] < q:
        vals = np.concatenate([vals, np.full(q - vals.shape[0], PAD_VALUE)])
    return vals


def signature(cg: ComputeGraph, q: int = DEFAULT_Q) -> np.ndarray:
    """The q smallest normalized-Laplacian eigenvalues, padded with 2.0."""
    if q < 1:
        raise ValueError("q must be positive")
    return signature_from_eigenvalues(symmetric_eigvals(normalized_laplacian(cg)), q)


def signature_distance(s1: np.ndarray, s2: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(s1, dtype=float) - np.asarray(s2, dtype=float)))


def spectral_distance(g1: ComputeGraph, g2: ComputeGraph, q: int = DEFAULT_Q) -> float:
    return signature_distance(signature(g1, q), signature(g2, q))


def pairwise_distances(signatures: Sequence[np.ndarray]) -> np.ndarray:
    s = np.asarray(signatures, dtype=float)
    diff = s[:, None, :] - s[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def alpha_weights(batch_signatures: Sequence[np.ndarray], i: int, sign: int = 1) -> np.ndarray:
    """Softmax of sign * sigma(i, l) over l != i, in batch order with i skipped."""
    if len(batch_signatures) < 2:
        raise ValueError("alpha weights need a batch of at least 2")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    s = np.asarray(batch_signatures, dtype=float)
    others = np.delete(np.arange(len(s)), i)
    dist = np.linalg.norm(s[others] - s[i], axis=1)
    logits = sign * dist
    w = np.exp(logits - logits.max())
    return w / w.sum()


def alpha_matrix(batch_signatures: Sequence[np.ndarray], sign: int = 1) -> np.ndarray:
    """Row i holds alpha_weights(batch, i, sign) scattered into columns l != i; zero diagonal."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    dist = pairwise_distances(batch_signatures)
    n = dist.shape[0]
    if n < 2:
        raise ValueError("alpha weights need a batch of at least 2")
    logits = sign * dist
    np.fill_diagonal(logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def write_signature_cache(path: str | Path, names: Iterable[str], sigs: Iterable[np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, sig in zip(names, sigs):
            fh.write(json.dumps({"name": name, "sig": [float(v) for v in sig]}) + "\n")


def read_signature_cache(path: str | Path) -> dict[str, np.ndarray]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["name"]] = np.asarray(rec["sig"], dtype=float)
    return out
