"""Hot numeric kernels: pairwise box predicates, between-triples, mask outlines.

Every kernel has a numba implementation (``*_nb``) and a numpy one
(``*_np``) that must agree bit-for-bit. The public wrappers pick one via
:func:`relscene._accel.numba_enabled`.
"""

import numpy as np

from ._accel import njit, numba_enabled

# ---------------------------------------------------------------------------
# pairwise binary predicates
# ---------------------------------------------------------------------------


def binary_masks_np(centers, sizes, eps, near_factor, overlap_fraction):
    n = centers.shape[0]
    half = sizes / 2.0
    mins = centers - half
    maxs = centers + half

    ix = np.minimum(maxs[:, None, 0], maxs[None, :, 0]) - np.maximum(mins[:, None, 0], mins[None, :, 0])
    iy = np.minimum(maxs[:, None, 1], maxs[None, :, 1]) - np.maximum(mins[:, None, 1], mins[None, :, 1])
    inter = np.maximum(ix, 0.0) * np.maximum(iy, 0.0)
    foot = sizes[:, 0] * sizes[:, 1]
    min_foot = np.minimum(foot[:, None], foot[None, :])

    gap = mins[:, None, 2] - maxs[None, :, 2]
    above = (mins[:, None, 2] >= maxs[None, :, 2] - eps) & (inter >= overlap_fraction * min_foot)
    on = above & (gap <= eps)
    inside = np.all(mins[:, None, :] >= mins[None, :, :] - eps, axis=2) & np.all(
        maxs[:, None, :] <= maxs[None, :, :] + eps, axis=2
    )

    diag = np.eye(n, dtype=bool)
    above &= ~diag
    on &= ~diag
    inside &= ~diag

    dx = centers[:, None, 0] - centers[None, :, 0]
    dy = centers[:, None, 1] - centers[None, :, 1]
    hdist = np.sqrt(dx * dx + dy * dy)
    half_diag = 0.5 * np.sqrt(sizes[:, 0] * sizes[:, 0] + sizes[:, 1] * sizes[:, 1])
    reach = near_factor * (half_diag[:, None] + half_diag[None, :])
    stacked = above | above.T | inside | inside.T
    near = (hdist <= reach) & ~stacked & ~diag
    return above, on, inside, near


@njit(cache=True)
def binary_masks_nb(centers, sizes, eps, near_factor, overlap_fraction):
    n = centers.shape[0]
    mins = np.empty((n, 3))
    maxs = np.empty((n, 3))
    for i in range(n):
        for k in range(3):
            h = sizes[i, k] / 2.0
            mins[i, k] = centers[i, k] - h
            maxs[i, k] = centers[i, k] + h

    above = np.zeros((n, n), dtype=np.bool_)
    on = np.zeros((n, n), dtype=np.bool_)
    inside = np.zeros((n, n), dtype=np.bool_)
    near = np.zeros((n, n), dtype=np.bool_)

    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            ix = min(maxs[i, 0], maxs[j, 0]) - max(mins[i, 0], mins[j, 0])
            iy = min(maxs[i, 1], maxs[j, 1]) - max(mins[i, 1], mins[j, 1])
            inter = max(ix, 0.0) * max(iy, 0.0)
            foot_i = sizes[i, 0] * sizes[i, 1]
            foot_j = sizes[j, 0] * sizes[j, 1]
            if mins[i, 2] >= maxs[j, 2] - eps and inter >= overlap_fraction * min(foot_i, foot_j):
                above[i, j] = True
                if mins[i, 2] - maxs[j, 2] <= eps:
                    on[i, j] = True
            contained = True
            for k in range(3):
                if mins[i, k] < mins[j, k] - eps or maxs[i, k] > maxs[j, k] + eps:
                    contained = False
                    break
            inside[i, j] = contained

    for i in range(n):
        hd_i = 0.5 * np.sqrt(sizes[i, 0] * sizes[i, 0] + sizes[i, 1] * sizes[i, 1])
        for j in range(n):
            if i == j:
                continue
            if above[i, j] or above[j, i] or inside[i, j] or inside[j, i]:
                continue
            dx = centers[i, 0] - centers[j, 0]
            dy = centers[i, 1] - centers[j, 1]
            hd_j = 0.5 * np.sqrt(sizes[j, 0] * sizes[j, 0] + sizes[j, 1] * sizes[j, 1])
            if np.sqrt(dx * dx + dy * dy) <= near_factor * (hd_i + hd_j):
                near[i, j] = True
    return above, on, inside, near


def binary_masks(centers, sizes, eps, near_factor, overlap_fraction):
    """Boolean ``(n, n)`` matrices ``above, on, inside, near``; entry ``[i, j]``
    states the relation of box ``i`` relative to box ``j``."""
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    sizes = np.ascontiguousarray(sizes, dtype=np.float64)
    fn = binary_masks_nb if numba_enabled() else binary_masks_np
    return fn(centers, sizes, float(eps), float(near_factor), float(overlap_fraction))


# ---------------------------------------------------------------------------
# ordered relations (closest / farthest by 3D centroid distance)
# ---------------------------------------------------------------------------


def extrema_np(centers):
    n = centers.shape[0]
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    lo = dist.copy()
    hi = dist.copy()
    np.fill_diagonal(lo, np.inf)
    np.fill_diagonal(hi, -np.inf)
    if n < 2:
        return np.full(n, -1, dtype=np.int64), np.full(n, -1, dtype=np.int64)
    return np.argmin(lo, axis=1).astype(np.int64), np.argmax(hi, axis=1).astype(np.int64)


@njit(cache=True)
def extrema_nb(centers):
    n = centers.shape[0]
    closest = np.full(n, -1, dtype=np.int64)
    farthest = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        best_lo = np.inf
        best_hi = -np.inf
        for j in range(n):
            if i == j:
                continue
            s = 0.0
            for k in range(3):
                d = centers[i, k] - centers[j, k]
                s += d * d
            d = np.sqrt(s)
            if d < best_lo:
                best_lo = d
                closest[i] = j
            if d > best_hi:
                best_hi = d
                farthest[i] = j
    return closest, farthest


def extrema(centers):
    """Index of the nearest and farthest other box per row; ties go to the
    lower index, ``-1`` when there is no other box."""
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    fn = extrema_nb if numba_enabled() else extrema_np
    return fn(centers)


# ---------------------------------------------------------------------------
# ternary "between" in the horizontal plane
# ---------------------------------------------------------------------------


def between_np(centers, sizes, corridor):
    n = centers.shape[0]
    xy = centers[:, :2]
    diag = np.sqrt(sizes[:, 0] * sizes[:, 0] + sizes[:, 1] * sizes[:, 1])
    idx = np.arange(n)
    chunks = []
    for i in range(n):
        for j in range(i + 1, n):
            dx = xy[j, 0] - xy[i, 0]
            dy = xy[j, 1] - xy[i, 1]
            seg2 = dx * dx + dy * dy
            if seg2 <= 0.0:
                continue
            limit = corridor * (0.5 * (diag[i] + diag[j]))
            px = xy[:, 0] - xy[i, 0]
            py = xy[:, 1] - xy[i, 1]
            s = (px * dx + py * dy) / seg2
            ox = px - s * dx
            oy = py - s * dy
            ok = (s > 0.0) & (s < 1.0) & (np.sqrt(ox * ox + oy * oy) <= limit)
            ok &= (idx != i) & (idx != j)
            ts = idx[ok]
            if ts.size:
                chunks.append(np.stack([ts, np.full_like(ts, i), np.full_like(ts, j)], axis=1))
    if not chunks:
        return np.empty((0, 3), dtype=np.int64)
    out = np.concatenate(chunks).astype(np.int64)
    order = np.lexsort((out[:, 2], out[:, 1], out[:, 0]))
    return out[order]


@njit(cache=True)
def _between_scan(centers, diag, corridor, out):
    n = centers.shape[0]
    count = 0
    for t in range(n):
        for i in range(n):
            if i == t:
                continue
            for j in range(i + 1, n):
                if j == t:
                    continue
                dx = centers[j, 0] - centers[i, 0]
                dy = centers[j, 1] - centers[i, 1]
                seg2 = dx * dx + dy * dy
                if seg2 <= 0.0:
                    continue
                px = centers[t, 0] - centers[i, 0]
                py = centers[t, 1] - centers[i, 1]
                s = (px * dx + py * dy) / seg2
                if not (s > 0.0 and s < 1.0):
                    continue
                ox = px - s * dx
                oy = py - s * dy
                if np.sqrt(ox * ox + oy * oy) <= corridor * (0.5 * (diag[i] + diag[j])):
                    if out.shape[0] > 0:
                        out[count, 0] = t
                        out[count, 1] = i
                        out[count, 2] = j
                    count += 1
    return count


@njit(cache=True)
def between_nb(centers, sizes, corridor):
    n = centers.shape[0]
    diag = np.empty(n)
    for i in range(n):
        diag[i] = np.sqrt(sizes[i, 0] * sizes[i, 0] + sizes[i, 1] * sizes[i, 1])
    count = _between_scan(centers, diag, corridor, np.empty((0, 3), dtype=np.int64))
    out = np.empty((count, 3), dtype=np.int64)
    if count:
        _between_scan(centers, diag, corridor, out)
    return out


def between(centers, sizes, corridor):
    """``(k, 3)`` int array of ``(target, anchor_lo, anchor_hi)`` index triples,
    sorted lexicographically."""
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    sizes = np.ascontiguousarray(sizes, dtype=np.float64)
    fn = between_nb if numba_enabled() else between_np
    return fn(centers, sizes, float(corridor))


# ---------------------------------------------------------------------------
# mask outline
# ---------------------------------------------------------------------------


def _shift(a, dy, dx, fill):
    out = np.full_like(a, fill)
    h, w = a.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    yd = slice(max(-dy, 0), h + min(-dy, 0))
    xd = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys, xs] = a[yd, xd]
    return out


def outline_np(mask, width):
    mask = mask.astype(bool)
    interior = mask.copy()
    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        interior &= _shift(mask, dy, dx, False)
    ring = mask & ~interior
    grown = ring.copy()
    for _ in range(width - 1):
        step = grown.copy()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy or dx:
                    step |= _shift(grown, dy, dx, False)
        grown = step
    return ring | (grown & ~mask)


@njit(cache=True)
def outline_nb(mask, width):
    h, w = mask.shape
    ring = np.zeros((h, w), dtype=np.bool_)
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            if (
                y == 0
                or x == 0
                or y == h - 1
                or x == w - 1
                or not mask[y - 1, x]
                or not mask[y + 1, x]
                or not mask[y, x - 1]
                or not mask[y, x + 1]
            ):
                ring[y, x] = True
    r = width - 1
    out = ring.copy()
    if r <= 0:
        return out
    for y in range(h):
        for x in range(w):
            if not ring[y, x]:
                continue
            for yy in range(max(0, y - r), min(h, y + r + 1)):
                for xx in range(max(0, x - r), min(w, x + r + 1)):
                    if not mask[yy, xx]:
                        out[yy, xx] = True
    return out


def outline(mask, width):
    """Stroke pixels for a binary mask: its 4-connected inner boundary ring,
    thickened outward by ``width - 1`` pixels. Never touches the interior."""
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    width = int(width)
    if width < 1:
        raise ValueError("stroke width must be >= 1")
    fn = outline_nb if numba_enabled() else outline_np
    return fn(mask, width)
