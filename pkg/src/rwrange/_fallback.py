"""Pure numpy/scipy versions of the compiled kernels in ``_kernels.pyx``."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def _positions(codes, cdx, cdy) -> np.ndarray:
    steps = np.stack([np.asarray(cdx, dtype=np.int64)[codes], np.asarray(cdy, dtype=np.int64)[codes]], axis=-1)
    pos = np.zeros((len(codes) + 1, 2), dtype=np.int64)
    np.cumsum(steps, axis=0, out=pos[1:])
    return pos


def _keys(pos: np.ndarray) -> np.ndarray:
    return (pos[:, 0] << 32) ^ (pos[:, 1] & 0xFFFFFFFF)


def range_checkpoints(codes, cdx, cdy, checkpoints, include_origin=False):
    checkpoints = np.asarray(checkpoints, dtype=np.int64)
    if len(checkpoints) == 0:
        return np.zeros(0, dtype=np.int64)
    n = int(checkpoints[-1])
    if n > len(codes):
        raise ValueError("checkpoint beyond path length")
    pos = _positions(np.asarray(codes)[:n], cdx, cdy)
    first = 0 if include_origin else 1
    _, first_idx = np.unique(_keys(pos[first:]), return_index=True)
    first_idx = np.sort(first_idx) + first  # time index of each first visit
    return np.searchsorted(first_idx, checkpoints, side="right").astype(np.int64)


def range_many(codes, cdx, cdy, starts, lengths, include_origin=False):
    codes = np.asarray(codes)
    out = np.zeros(len(starts), dtype=np.int64)
    for r, (s, n) in enumerate(zip(starts, lengths)):
        if s < 0 or s + n > len(codes):
            raise ValueError("path slice out of bounds")
        pos = _positions(codes[s : s + n], cdx, cdy)
        pos = pos if include_origin else pos[1:]
        out[r] = len(np.unique(_keys(pos)))
    return out


def _layers(pairs_i, pairs_ip, kv, n, k, checkpoints):
    """Run the F_j recursion over an explicit list of pairs (i' <= i)."""
    nl = kv.shape[0]
    F = np.zeros((nl, k + 1, n))
    F[:, 1, :] = 1.0
    for lev in range(nl):
        for j in range(2, k + 1):
            F[lev, j] = np.bincount(pairs_i, weights=F[lev, j - 1, pairs_ip] * kv[lev], minlength=n)
    cs = np.concatenate([np.zeros(F.shape[:2] + (1,)), np.cumsum(F, axis=2)], axis=2)
    return np.ascontiguousarray(cs[:, 2 : k + 1, :][:, :, np.asarray(checkpoints, dtype=np.int64)])


def _kernel_values(d2, lag, inv2eps, norm, lagw, halving=False):
    inv2eps = np.asarray(inv2eps)
    ev = np.empty((len(inv2eps), len(d2)))
    ev[0] = np.exp(-d2 * inv2eps[0])
    for l in range(1, len(inv2eps)):
        ev[l] = ev[l - 1] * ev[l - 1] if halving else np.exp(-d2 * inv2eps[l])
    return np.asarray(lagw)[:, lag] * np.asarray(norm)[:, None] * ev


def alpha_dense(W, inv2eps, norm, lagw, k, checkpoints):
    if k < 2:
        raise ValueError("k must be >= 2")
    W = np.asarray(W)
    n = len(W)
    ip, i = np.triu_indices(n)  # ip <= i
    d = W[i] - W[ip]
    d2 = np.einsum("ij,ij->i", d, d)
    kv = _kernel_values(d2, i - ip, inv2eps, norm, lagw)
    return _layers(i, ip, kv, n, k, checkpoints)


def alpha_binned(W, inv2eps, norm, lagw, k, checkpoints, cutoff, ox=0.0, oy=0.0, halving=False):
    if k < 2:
        raise ValueError("k must be >= 2")
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    W = np.asarray(W)
    n = len(W)
    shifted = W - np.array([ox, oy])
    # sparse_distance_matrix keeps pairs with distance <= cutoff; the compiled
    # kernel keeps d2 < cutoff^2, which differs only on a null set
    mat = cKDTree(shifted).sparse_distance_matrix(cKDTree(W), cutoff, output_type="ndarray")
    i, ip, dist = mat["i"], mat["j"], mat["v"]
    keep = ip <= i
    i, ip = i[keep].astype(np.int64), ip[keep].astype(np.int64)
    d = shifted[i] - W[ip]
    d2 = np.einsum("ij,ij->i", d, d)
    # explicit zero-distance diagonal entries are dropped by the sparse matrix
    diag = np.arange(n)
    have = np.zeros(n, dtype=bool)
    have[i[i == ip]] = True
    missing = diag[~have]
    if ox * ox + oy * oy < cutoff * cutoff and len(missing):
        i = np.concatenate([i, missing])
        ip = np.concatenate([ip, missing])
        d2 = np.concatenate([d2, np.full(len(missing), ox * ox + oy * oy)])
    kv = _kernel_values(d2, i - ip, inv2eps, norm, lagw, halving)
    return _layers(i, ip, kv, n, k, checkpoints)
