"""Topology-preserving 3D thinning kernels.

A foreground voxel is *simple* (removable without changing topology) under
the standard (26, 6) connectivity pair iff
  * its foreground 26-neighbors form exactly one 26-connected component, and
  * the background voxels of its 18-neighborhood form exactly one 6-connected
    component that touches one of its 6 face neighbors.

Thinning repeats six directional subiterations (one border orientation at a
time); within a subiteration, candidates are deleted sequentially in z-major
order with the simplicity test re-evaluated against the current state, so the
result is deterministic and topology is preserved exactly. Endpoints (voxels
with fewer than two foreground 26-neighbors) are never deleted, which keeps
curve ends in place and makes the operation idempotent.
"""

from __future__ import annotations

import numpy as np
from numba import njit


def _build_tables():
    offs = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dz == dy == dx == 0:
                    continue
                offs.append((dz, dy, dx))
    off26 = np.array(offs, dtype=np.int64)  # fixed z-major order

    # 26-adjacency between neighborhood cells (Chebyshev distance 1)
    adj26 = [[] for _ in range(26)]
    for i in range(26):
        for j in range(26):
            if i == j:
                continue
            d = np.abs(off26[i] - off26[j])
            if d.max() == 1:
                adj26[i].append(j)
    maxdeg = max(len(a) for a in adj26)
    adj26_list = np.full((26, maxdeg), -1, dtype=np.int64)
    adj26_cnt = np.zeros(26, dtype=np.int64)
    for i, nbrs in enumerate(adj26):
        adj26_cnt[i] = len(nbrs)
        adj26_list[i, : len(nbrs)] = nbrs

    # the 18 non-corner cells, with 6-adjacency among them
    n18_idx = np.array(
        [i for i in range(26) if np.abs(off26[i]).sum() <= 2], dtype=np.int64
    )
    adj6 = [[] for _ in range(18)]
    for a in range(18):
        for b in range(18):
            if a == b:
                continue
            d = np.abs(off26[n18_idx[a]] - off26[n18_idx[b]])
            if d.sum() == 1:
                adj6[a].append(b)
    maxdeg6 = max(len(a) for a in adj6)
    adj6_list = np.full((18, maxdeg6), -1, dtype=np.int64)
    adj6_cnt = np.zeros(18, dtype=np.int64)
    for i, nbrs in enumerate(adj6):
        adj6_cnt[i] = len(nbrs)
        adj6_list[i, : len(nbrs)] = nbrs

    face18 = np.array(
        [1 if np.abs(off26[n18_idx[a]]).sum() == 1 else 0 for a in range(18)],
        dtype=np.uint8,
    )
    return off26, adj26_list, adj26_cnt, n18_idx, adj6_list, adj6_cnt, face18


(OFF26, ADJ26_LIST, ADJ26_CNT, N18_IDX, ADJ6_LIST, ADJ6_CNT, FACE18) = _build_tables()


@njit(cache=True)
def _is_simple(fg26, adj26_list, adj26_cnt, n18_idx, adj6_list, adj6_cnt, face18):
    # one 26-component of foreground neighbors
    visited = np.zeros(26, dtype=np.uint8)
    stack = np.empty(26, dtype=np.int64)
    ncomp = 0
    for s in range(26):
        if fg26[s] == 1 and visited[s] == 0:
            ncomp += 1
            if ncomp > 1:
                return False
            top = 0
            stack[top] = s
            top += 1
            visited[s] = 1
            while top > 0:
                top -= 1
                cur = stack[top]
                for t in range(adj26_cnt[cur]):
                    nb = adj26_list[cur, t]
                    if fg26[nb] == 1 and visited[nb] == 0:
                        visited[nb] = 1
                        stack[top] = nb
                        top += 1
    if ncomp != 1:
        return False

    # one 6-component of background in the 18-neighborhood touching a face
    visited18 = np.zeros(18, dtype=np.uint8)
    stack18 = np.empty(18, dtype=np.int64)
    ncomp_bg = 0
    for s in range(18):
        if fg26[n18_idx[s]] == 0 and visited18[s] == 0:
            # flood this background component, noting face contact
            touches_face = False
            top = 0
            stack18[top] = s
            top += 1
            visited18[s] = 1
            while top > 0:
                top -= 1
                cur = stack18[top]
                if face18[cur] == 1:
                    touches_face = True
                for t in range(adj6_cnt[cur]):
                    nb = adj6_list[cur, t]
                    if fg26[n18_idx[nb]] == 0 and visited18[nb] == 0:
                        visited18[nb] = 1
                        stack18[top] = nb
                        top += 1
            if touches_face:
                ncomp_bg += 1
                if ncomp_bg > 1:
                    return False
    return ncomp_bg == 1


@njit(cache=True)
def _thin_subiter(vol, cz, cy, cx, off26, adj26_list, adj26_cnt, n18_idx, adj6_list, adj6_cnt, face18):
    """Sequentially delete simple non-endpoint candidates; returns count."""
    removed = 0
    fg26 = np.empty(26, dtype=np.uint8)
    for k in range(cz.shape[0]):
        z = cz[k]
        y = cy[k]
        x = cx[k]
        if vol[z, y, x] == 0:
            continue
        cnt = 0
        for i in range(26):
            f = vol[z + off26[i, 0], y + off26[i, 1], x + off26[i, 2]]
            fg26[i] = f
            cnt += f
        if cnt < 2:  # endpoint or isolated voxel: keep
            continue
        if _is_simple(fg26, adj26_list, adj26_cnt, n18_idx, adj6_list, adj6_cnt, face18):
            vol[z, y, x] = 0
            removed += 1
    return removed


# border orientations, fixed order: -z, +z, -y, +y, -x, +x
_DIRECTIONS = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))


def thin(mask: np.ndarray) -> np.ndarray:
    """Thin a binary uint8 array to a unit-width skeleton (new array)."""
    vol = np.pad(mask.astype(np.uint8), 1)
    nz, ny, nx = vol.shape
    while True:
        removed = 0
        for dz, dy, dx in _DIRECTIONS:
            core = vol[1 : nz - 1, 1 : ny - 1, 1 : nx - 1]
            nbr = vol[1 + dz : nz - 1 + dz, 1 + dy : ny - 1 + dy, 1 + dx : nx - 1 + dx]
            cand = (core == 1) & (nbr == 0)
            if not cand.any():
                continue
            zz, yy, xx = np.nonzero(cand)  # z-major ascending
            removed += _thin_subiter(
                vol,
                zz + 1,
                yy + 1,
                xx + 1,
                OFF26,
                ADJ26_LIST,
                ADJ26_CNT,
                N18_IDX,
                ADJ6_LIST,
                ADJ6_CNT,
                FACE18,
            )
        if removed == 0:
            break
    return vol[1 : nz - 1, 1 : ny - 1, 1 : nx - 1].copy()
