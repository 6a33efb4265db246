"""Hot numeric kernels, each in a numba and a pure-numpy version.

The exported names (``knn``, ``eig_features``, ``region_grow``,
``mean_field_sweeps``, ``energy``) are bound at import time to the numba
version when available and not disabled via ``CLICKSEG_NO_NUMBA`` (see
:mod:`clickseg._accel`). Both versions of every kernel implement the same
contract; :mod:`clickseg.bench` times them against each other.

Determinism notes:
  - k-NN is exact; ties in distance are broken by ascending point index.
  - Region growing is a sequential BFS and runs single-threaded.
  - Mean-field sweeps are synchronous (all rows updated from the previous
    iterate), so the result does not depend on node order.
"""

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA

if HAVE_NUMBA:
    from numba import njit
else:  # pragma: no cover - exercised only when numba is absent
    njit = None


# ---------------------------------------------------------------------------
# exact k nearest neighbors
# ---------------------------------------------------------------------------


def _knn_grid_source(points, k):
    """Exact k-NN via a uniform grid; ring search with index tie-break."""
    n = points.shape[0]

    mins = np.empty(3)
    exts = np.empty(3)
    for d in range(3):
        lo = points[0, d]
        hi = points[0, d]
        for i in range(1, n):
            v = points[i, d]
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        mins[d] = lo
        exts[d] = hi - lo

    # aim at ~4 points per occupied cell, capped at 512 cells per axis
    ndims = 0
    prod_ext = 1.0
    for d in range(3):
        if exts[d] > 0.0:
            ndims += 1
            prod_ext *= exts[d]
    res = np.ones(3, np.int64)
    if ndims > 0:
        target_cells = n / 4.0
        if target_cells < 1.0:
            target_cells = 1.0
        h = (prod_ext / target_cells) ** (1.0 / ndims)
        for d in range(3):
            if exts[d] > 0.0 and h > 0.0:
                r = int(np.ceil(exts[d] / h))
                if r < 1:
                    r = 1
                if r > 512:
                    r = 512
                res[d] = r

    widths = np.empty(3)
    wmin = np.inf
    for d in range(3):
        if exts[d] > 0.0:
            widths[d] = exts[d] / res[d]
            if widths[d] < wmin:
                wmin = widths[d]
        else:
            widths[d] = 1.0
    if not np.isfinite(wmin):
        wmin = 1.0  # all points coincide; a single cell holds everything

    ncells = res[0] * res[1] * res[2]
    cell_of = np.empty(n, np.int64)
    counts = np.zeros(ncells + 1, np.int64)
    for i in range(n):
        cid = 0
        for d in range(3):
            c = int((points[i, d] - mins[d]) / widths[d])
            if c < 0:
                c = 0
            if c >= res[d]:
                c = res[d] - 1
            cid = cid * res[d] + c
        cell_of[i] = cid
        counts[cid + 1] += 1
    for c in range(ncells):
        counts[c + 1] += counts[c]
    starts = counts
    cursor = starts[:-1].copy()
    cell_points = np.empty(n, np.int64)
    for i in range(n):  # ascending i keeps each cell index-sorted
        cid = cell_of[i]
        cell_points[cursor[cid]] = i
        cursor[cid] += 1

    rmax = 0
    for d in range(3):
        if res[d] > rmax:
            rmax = int(res[d])

    out = np.empty((n, k), np.int64)
    best_d = np.empty(k)
    best_j = np.empty(k, np.int64)
    for i in range(n):
        for t in range(k):
            best_d[t] = np.inf
            best_j[t] = -1
        ci = np.empty(3, np.int64)
        for d in range(3):
            c = int((points[i, d] - mins[d]) / widths[d])
            if c < 0:
                c = 0
            if c >= res[d]:
                c = res[d] - 1
            ci[d] = c
        for r in range(rmax + 1):
            x0 = ci[0] - r
            x1 = ci[0] + r
            for x in range(x0, x1 + 1):
                if x < 0 or x >= res[0]:
                    continue
                for y in range(ci[1] - r, ci[1] + r + 1):
                    if y < 0 or y >= res[1]:
                        continue
                    for z in range(ci[2] - r, ci[2] + r + 1):
                        if z < 0 or z >= res[2]:
                            continue
                        # shell cells only: Chebyshev distance exactly r
                        cd = abs(x - ci[0])
                        if abs(y - ci[1]) > cd:
                            cd = abs(y - ci[1])
                        if abs(z - ci[2]) > cd:
                            cd = abs(z - ci[2])
                        if cd != r:
                            continue
                        cid = (x * res[1] + y) * res[2] + z
                        for t in range(starts[cid], starts[cid + 1]):
                            j = cell_points[t]
                            if j == i:
                                continue
                            dx = points[j, 0] - points[i, 0]
                            dy = points[j, 1] - points[i, 1]
                            dz = points[j, 2] - points[i, 2]
                            d2 = dx * dx + dy * dy + dz * dz
                            wd = best_d[k - 1]
                            wj = best_j[k - 1]
                            if d2 > wd:
                                continue
                            if d2 == wd and wj >= 0 and j > wj:
                                continue
                            pos = k - 1
                            while pos > 0 and (
                                best_d[pos - 1] > d2
                                or (best_d[pos - 1] == d2 and best_j[pos - 1] > j)
                            ):
                                best_d[pos] = best_d[pos - 1]
                                best_j[pos] = best_j[pos - 1]
                                pos -= 1
                            best_d[pos] = d2
                            best_j[pos] = j
            if best_j[k - 1] >= 0:
                bound = r * wmin
                if best_d[k - 1] < bound * bound:
                    break
        for t in range(k):
            out[i, t] = best_j[t]
    return out


def knn_numpy(points, k):
    """Exact k-NN by chunked brute force with the index tie-break.

    argpartition finds the k-th distance; every candidate within it (ties
    included) is then ordered by (distance, index) so boundary ties resolve
    exactly like the grid kernel.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    out = np.empty((n, k), np.int64)
    m = min(n - 1, max(2 * k, k + 16))  # candidate pool wide enough for most ties
    chunk = max(1, min(n, 8_000_000 // max(n, 1) + 1))
    for s in range(0, n, chunk):
        q = points[s : s + chunk]
        # exact per-axis accumulation, same arithmetic order as the grid kernel
        d2 = (q[:, 0:1] - points[None, :, 0]) ** 2
        d2 += (q[:, 1:2] - points[None, :, 1]) ** 2
        d2 += (q[:, 2:3] - points[None, :, 2]) ** 2
        rows = np.arange(q.shape[0])
        d2[rows, s + rows] = np.inf
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        cand = np.argpartition(d2, m - 1, axis=1)[:, :m]
        cand.sort(axis=1)  # ascending index, so a stable sort breaks ties by index
        cd = np.take_along_axis(d2, cand, axis=1)
        order = np.argsort(cd, axis=1, kind="stable")
        out[s : s + chunk] = np.take_along_axis(cand, order[:, :k], axis=1)
        # rows whose boundary ties spill past the candidate pool (rare)
        spilled = np.flatnonzero((d2 <= kth[:, None]).sum(axis=1) > m)
        for r in spilled:
            full = np.flatnonzero(d2[r] <= kth[r])
            exact = np.lexsort((full, d2[r, full]))
            out[s + r] = full[exact[:k]]
    return out


# ---------------------------------------------------------------------------
# neighborhood covariance eigen features
# ---------------------------------------------------------------------------

_EIG_EPS = 1e-18


def _eig_features_source(points, neigh):
    """Per-point unit normal and eigenvalue shape features.

    The neighborhood of point i is {i} plus its k neighbors. Degenerate
    (zero-covariance) neighborhoods yield normal (0,0,1) and shape features
    (0,0,0,1) rather than an error.
    """
    n = points.shape[0]
    k = neigh.shape[1]
    normals = np.empty((n, 3))
    shape = np.empty((n, 4))
    cov = np.empty((3, 3))
    m = float(k + 1)
    for i in range(n):
        mx = points[i, 0]
        my = points[i, 1]
        mz = points[i, 2]
        for t in range(k):
            j = neigh[i, t]
            mx += points[j, 0]
            my += points[j, 1]
            mz += points[j, 2]
        mx /= m
        my /= m
        mz /= m
        cxx = 0.0
        cxy = 0.0
        cxz = 0.0
        cyy = 0.0
        cyz = 0.0
        czz = 0.0
        dx = points[i, 0] - mx
        dy = points[i, 1] - my
        dz = points[i, 2] - mz
        cxx += dx * dx
        cxy += dx * dy
        cxz += dx * dz
        cyy += dy * dy
        cyz += dy * dz
        czz += dz * dz
        for t in range(k):
            j = neigh[i, t]
            dx = points[j, 0] - mx
            dy = points[j, 1] - my
            dz = points[j, 2] - mz
            cxx += dx * dx
            cxy += dx * dy
            cxz += dx * dz
            cyy += dy * dy
            cyz += dy * dz
            czz += dz * dz
        cov[0, 0] = cxx / m
        cov[0, 1] = cxy / m
        cov[0, 2] = cxz / m
        cov[1, 0] = cxy / m
        cov[1, 1] = cyy / m
        cov[1, 2] = cyz / m
        cov[2, 0] = cxz / m
        cov[2, 1] = cyz / m
        cov[2, 2] = czz / m
        w, v = np.linalg.eigh(cov)
        l1 = w[2] if w[2] > 0.0 else 0.0
        l2 = w[1] if w[1] > 0.0 else 0.0
        l3 = w[0] if w[0] > 0.0 else 0.0
        if l2 > l1:
            l2 = l1
        if l3 > l2:
            l3 = l2
        if l1 <= _EIG_EPS:
            normals[i, 0] = 0.0
            normals[i, 1] = 0.0
            normals[i, 2] = 1.0
            shape[i, 0] = 0.0
            shape[i, 1] = 0.0
            shape[i, 2] = 0.0
            shape[i, 3] = 1.0
            continue
        nx = v[0, 0]
        ny = v[1, 0]
        nz = v[2, 0]
        if nz < 0.0 or (nz == 0.0 and (nx < 0.0 or (nx == 0.0 and ny < 0.0))):
            nx = -nx
            ny = -ny
            nz = -nz
        nrm = np.sqrt(nx * nx + ny * ny + nz * nz)
        if nrm > 0.0:
            nx /= nrm
            ny /= nrm
            nz /= nrm
        else:
            nx = 0.0
            ny = 0.0
            nz = 1.0
        normals[i, 0] = nx
        normals[i, 1] = ny
        normals[i, 2] = nz
        shape[i, 0] = (l1 - l2) / l1
        shape[i, 1] = (l2 - l3) / l1
        shape[i, 2] = l3 / l1
        vert = abs(nz)
        if vert > 1.0:
            vert = 1.0
        shape[i, 3] = vert
    return normals, shape


def eig_features_numpy(points, neigh):
    """Vectorized version of :func:`_eig_features_source` (batched eigh)."""
    points = np.asarray(points, dtype=np.float64)
    n, k = neigh.shape
    nb = np.concatenate([np.arange(n, dtype=neigh.dtype)[:, None], neigh], axis=1)
    pts = points[nb]  # (n, k+1, 3)
    cen = pts - pts.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", cen, cen) / (k + 1)
    w, v = np.linalg.eigh(cov)
    lam = np.clip(w, 0.0, None)
    l3, l2, l1 = lam[:, 0], np.minimum(lam[:, 1], lam[:, 2]), lam[:, 2]
    l3 = np.minimum(l3, l2)

    normal = v[:, :, 0].copy()
    nx, ny, nz = normal[:, 0], normal[:, 1], normal[:, 2]
    flip = (nz < 0) | ((nz == 0) & ((nx < 0) | ((nx == 0) & (ny < 0))))
    normal[flip] *= -1.0
    nrm = np.sqrt((normal * normal).sum(axis=1))
    ok = nrm > 0
    normal[ok] /= nrm[ok, None]
    normal[~ok] = (0.0, 0.0, 1.0)

    degen = l1 <= _EIG_EPS
    safe_l1 = np.where(degen, 1.0, l1)
    shape = np.empty((n, 4))
    shape[:, 0] = (l1 - l2) / safe_l1
    shape[:, 1] = (l2 - l3) / safe_l1
    shape[:, 2] = l3 / safe_l1
    shape[:, 3] = np.minimum(np.abs(normal[:, 2]), 1.0)
    normal[degen] = (0.0, 0.0, 1.0)
    shape[degen] = (0.0, 0.0, 0.0, 1.0)
    return normal, shape


# ---------------------------------------------------------------------------
# region growing over the k-NN graph
# ---------------------------------------------------------------------------


def _region_grow_source(neigh, normals, colors, cos_max, color_max, min_size, max_size):
    """BFS region growing followed by small-region merge; returns raw labels.

    A neighbor joins a region iff the angle between the region's running mean
    normal and the neighbor's normal stays within the threshold, the neighbor's
    color stays within ``color_max`` of the region's running mean color, and
    the region is below ``max_size``. Regions smaller than ``min_size`` are
    then merged into the adjacent region with the nearest mean color. Labels
    are root ids (not compacted).
    """
    n = neigh.shape[0]
    k = neigh.shape[1]
    labels = np.full(n, -1, np.int64)
    queue = np.empty(n, np.int64)
    color_max2 = color_max * color_max
    region = 0
    for seed in range(n):
        if labels[seed] >= 0:
            continue
        labels[seed] = region
        queue[0] = seed
        qh = 0
        qt = 1
        sn0 = normals[seed, 0]
        sn1 = normals[seed, 1]
        sn2 = normals[seed, 2]
        sc0 = colors[seed, 0]
        sc1 = colors[seed, 1]
        sc2 = colors[seed, 2]
        size = 1
        while qh < qt:
            cur = queue[qh]
            qh += 1
            for t in range(k):
                nb = neigh[cur, t]
                if labels[nb] >= 0:
                    continue
                if size >= max_size:
                    continue
                nl = np.sqrt(sn0 * sn0 + sn1 * sn1 + sn2 * sn2)
                if nl > 1e-12:
                    dot = (
                        sn0 * normals[nb, 0]
                        + sn1 * normals[nb, 1]
                        + sn2 * normals[nb, 2]
                    ) / nl
                else:
                    dot = 1.0
                if dot < cos_max:
                    continue
                dc0 = colors[nb, 0] - sc0 / size
                dc1 = colors[nb, 1] - sc1 / size
                dc2 = colors[nb, 2] - sc2 / size
                if dc0 * dc0 + dc1 * dc1 + dc2 * dc2 > color_max2:
                    continue
                labels[nb] = region
                queue[qt] = nb
                qt += 1
                sn0 += normals[nb, 0]
                sn1 += normals[nb, 1]
                sn2 += normals[nb, 2]
                sc0 += colors[nb, 0]
                sc1 += colors[nb, 1]
                sc2 += colors[nb, 2]
                size += 1
        region += 1

    nreg = region
    parent = np.arange(nreg)
    sizes = np.zeros(nreg, np.int64)
    csum = np.zeros((nreg, 3))
    for i in range(n):
        r = labels[i]
        sizes[r] += 1
        csum[r, 0] += colors[i, 0]
        csum[r, 1] += colors[i, 1]
        csum[r, 2] += colors[i, 2]

    ea = np.empty(n * k, np.int64)
    eb = np.empty(n * k, np.int64)
    ne = 0
    for i in range(n):
        for t in range(k):
            j = neigh[i, t]
            if labels[i] != labels[j]:
                ea[ne] = labels[i]
                eb[ne] = labels[j]
                ne += 1

    passes = 0
    changed = True
    while changed and passes <= nreg:
        changed = False
        passes += 1
        for r in range(nreg):
            if parent[r] != r:
                continue
            if sizes[r] >= min_size:
                continue
            cr0 = csum[r, 0] / sizes[r]
            cr1 = csum[r, 1] / sizes[r]
            cr2 = csum[r, 2] / sizes[r]
            best = -1
            bestd = np.inf
            for e in range(ne):
                ra = ea[e]
                while parent[ra] != ra:
                    ra = parent[ra]
                rb = eb[e]
                while parent[rb] != rb:
                    rb = parent[rb]
                if ra == r and rb != r:
                    other = rb
                elif rb == r and ra != r:
                    other = ra
                else:
                    continue
                d0 = csum[other, 0] / sizes[other] - cr0
                d1 = csum[other, 1] / sizes[other] - cr1
                d2 = csum[other, 2] / sizes[other] - cr2
                d = d0 * d0 + d1 * d1 + d2 * d2
                if d < bestd or (d == bestd and other < best):
                    bestd = d
                    best = other
            if best >= 0:
                parent[r] = best
                sizes[best] += sizes[r]
                csum[best, 0] += csum[r, 0]
                csum[best, 1] += csum[r, 1]
                csum[best, 2] += csum[r, 2]
                changed = True

    out = np.empty(n, np.int64)
    for i in range(n):
        r = labels[i]
        while parent[r] != r:
            r = parent[r]
        out[i] = r
    return out


# ---------------------------------------------------------------------------
# mean-field sweeps
# ---------------------------------------------------------------------------


def _mean_field_source(weights, log_unary, q0, iterations):
    """Synchronous mean-field updates with a Potts pairwise message."""
    m = q0.shape[0]
    c = q0.shape[1]
    q = q0.copy()
    rowsum = np.zeros(m)
    for j in range(m):
        s = 0.0
        for jj in range(m):
            s += weights[j, jj]
        rowsum[j] = s
    for _ in range(iterations):
        qn = np.empty((m, c))
        for j in range(m):
            mx = -np.inf
            for l in range(c):
                s = 0.0
                for jj in range(m):
                    s += weights[j, jj] * q[jj, l]
                val = log_unary[j, l] - (rowsum[j] - s)
                qn[j, l] = val
                if val > mx:
                    mx = val
            z = 0.0
            for l in range(c):
                qn[j, l] = np.exp(qn[j, l] - mx)
                z += qn[j, l]
            for l in range(c):
                qn[j, l] /= z
        q = qn
    return q


def mean_field_numpy(weights, log_unary, q0, iterations):
    """Matrix-product version of :func:`_mean_field_source`."""
    q = q0.copy()
    rowsum = weights.sum(axis=1)
    for _ in range(iterations):
        logits = log_unary - (rowsum[:, None] - weights @ q)
        logits -= logits.max(axis=1, keepdims=True)
        q = np.exp(logits)
        q /= q.sum(axis=1, keepdims=True)
    return q


# ---------------------------------------------------------------------------
# labeling energy
# ---------------------------------------------------------------------------


def _energy_source(weights, psi_u, labeling):
    """Unary sum plus Potts pairwise sum over unordered pairs."""
    m = labeling.shape[0]
    e = 0.0
    for j in range(m):
        e += psi_u[j, labeling[j]]
    for j in range(m):
        lj = labeling[j]
        for jj in range(j + 1, m):
            if labeling[jj] != lj:
                e += weights[j, jj]
    return e


# ---------------------------------------------------------------------------
# path binding
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    knn_numba = njit(cache=True)(_knn_grid_source)
    eig_features_numba = njit(cache=True)(_eig_features_source)
    region_grow_numba = njit(cache=True)(_region_grow_source)
    mean_field_numba = njit(cache=True)(_mean_field_source)
    energy_numba = njit(cache=True)(_energy_source)
else:  # pragma: no cover
    knn_numba = None
    eig_features_numba = None
    region_grow_numba = None
    mean_field_numba = None
    energy_numba = None

def region_grow_numpy(neigh, normals, colors, cos_max, color_max, min_size, max_size):
    """Fallback region growing: interpreted BFS, vectorized small-region merge.

    Produces labels identical to the numba kernel (the merge loop mirrors its
    update order: small regions visited in ascending id, roots re-resolved
    after every union).
    """
    n, k = neigh.shape
    labels = np.full(n, -1, np.int64)
    queue = np.empty(n, np.int64)
    color_max2 = color_max * color_max
    region = 0
    for seed in range(n):
        if labels[seed] >= 0:
            continue
        labels[seed] = region
        queue[0] = seed
        qh, qt = 0, 1
        sn = normals[seed].copy()
        sc = colors[seed].copy()
        size = 1
        while qh < qt:
            cur = queue[qh]
            qh += 1
            for t in range(k):
                nb = neigh[cur, t]
                if labels[nb] >= 0 or size >= max_size:
                    continue
                nl = np.sqrt(sn[0] * sn[0] + sn[1] * sn[1] + sn[2] * sn[2])
                dot = (sn @ normals[nb]) / nl if nl > 1e-12 else 1.0
                if dot < cos_max:
                    continue
                dc = colors[nb] - sc / size
                if dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2] > color_max2:
                    continue
                labels[nb] = region
                queue[qt] = nb
                qt += 1
                sn += normals[nb]
                sc += colors[nb]
                size += 1
        region += 1

    nreg = region
    parent = np.arange(nreg)
    sizes = np.bincount(labels, minlength=nreg)
    csum = np.zeros((nreg, 3))
    np.add.at(csum, labels, colors)

    different = labels[:, None] != labels[neigh]
    ea = np.repeat(labels, k)[different.ravel()]
    eb = labels[neigh].ravel()[different.ravel()]

    def roots():
        r = parent.copy()
        while True:
            rr = parent[r]
            if np.array_equal(rr, r):
                return r
            r = rr

    passes = 0
    changed = True
    while changed and passes <= nreg:
        changed = False
        passes += 1
        for r in range(nreg):
            if parent[r] != r or sizes[r] >= min_size:
                continue
            root = roots()
            ra, rb = root[ea], root[eb]
            cands = np.unique(np.concatenate([rb[(ra == r) & (rb != r)], ra[(rb == r) & (ra != r)]]))
            if len(cands) == 0:
                continue
            mean_r = csum[r] / sizes[r]
            diff = csum[cands] / sizes[cands, None] - mean_r
            d = diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2
            best = int(cands[np.argmin(d)])  # ties resolve to the lowest root id
            parent[r] = best
            sizes[best] += sizes[r]
            csum[best] += csum[r]
            changed = True

    return roots()[labels]


# interpreted fallback for the per-labeling energy (tests use tiny inputs)
energy_python = _energy_source
region_grow_python = region_grow_numpy

_knn_impl = knn_numba if USE_NUMBA else knn_numpy
_eig_impl = eig_features_numba if USE_NUMBA else eig_features_numpy
_grow_impl = region_grow_numba if USE_NUMBA else region_grow_python
_mf_impl = mean_field_numba if USE_NUMBA else mean_field_numpy
_energy_impl = energy_numba if USE_NUMBA else energy_python


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def knn(points, k):
    """(N,3) coordinates -> (N,k) int64 neighbor indices, self excluded."""
    return _knn_impl(_f64(points), int(k))


def eig_features(points, neigh):
    """(N,3) coords + (N,k) neighbors -> (normals (N,3), shape features (N,4))."""
    return _eig_impl(_f64(points), _i64(neigh))


def region_grow(neigh, normals, colors, cos_max, color_max, min_size, max_size):
    """Region labels (root ids, not compacted) for every point."""
    return _grow_impl(
        _i64(neigh),
        _f64(normals),
        _f64(colors),
        float(cos_max),
        float(color_max),
        int(min_size),
        int(max_size),
    )


def mean_field_sweeps(weights, log_unary, q0, iterations):
    """Run ``iterations`` synchronous sweeps starting from ``q0``."""
    return _mf_impl(_f64(weights), _f64(log_unary), _f64(q0), int(iterations))


def energy(weights, psi_u, labeling):
    """Potts energy of one labeling given precomputed unary potentials."""
    return float(_energy_impl(_f64(weights), _f64(psi_u), _i64(labeling)))
