"""Brute-force reference implementations used as test oracles.

Everything here is written from first principles with plain Python loops
over nested lists and shares no code with the package under test.
"""

import math
from collections import deque

SOBEL_X = ((-1, 0, 1), (-2, 0, 2), (-1, 0, 1))
SOBEL_Y = ((1, 2, 1), (0, 0, 0), (-1, -2, -1))


def to_lists(a):
    return [[float(v) for v in row] for row in a]


def _clamp(v, n):
    return 0 if v < 0 else n - 1 if v >= n else v


# -- per-pixel band features -------------------------------------------------


def brightness(r, g, b):
    return [[max(r[y][x], g[y][x], b[y][x]) for x in range(len(r[0]))] for y in range(len(r))]


def luma(r, g, b):
    return [[0.299 * r[y][x] + 0.587 * g[y][x] + 0.114 * b[y][x] for x in range(len(r[0]))]
            for y in range(len(r))]


def sobel(img):
    h, w = len(img), len(img[0])
    out = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            gx = gy = 0.0
            for i in range(3):
                for j in range(3):
                    v = img[_clamp(y + i - 1, h)][_clamp(x + j - 1, w)]
                    gx += SOBEL_X[i][j] * v
                    gy += SOBEL_Y[i][j] * v
            out[y][x] = math.sqrt(gx * gx + gy * gy)
    return out


def vdvi(r, g, b):
    h, w = len(r), len(r[0])
    out = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            den = 2 * g[y][x] + r[y][x] + b[y][x]
            out[y][x] = 0.0 if den == 0 else (2 * g[y][x] - r[y][x] - b[y][x]) / den
    return out


# -- PCA via cyclic Jacobi rotations -------------------------------------------


def covariance(r, g, b):
    pix = [(r[y][x], g[y][x], b[y][x]) for y in range(len(r)) for x in range(len(r[0]))]
    n = len(pix)
    mean = [sum(p[k] for p in pix) / n for k in range(3)]
    cov = [[sum((p[i] - mean[i]) * (p[j] - mean[j]) for p in pix) / n for j in range(3)] for i in range(3)]
    return cov, mean


def jacobi_eig(a, sweeps=50):
    """Eigenvalues (descending) and column eigenvectors of a symmetric 3x3 matrix."""
    a = [row[:] for row in a]
    v = [[1.0 if i == j else 0.0 for j in range(3)] for i in range(3)]
    for _ in range(sweeps):
        off = sum(a[i][j] ** 2 for i in range(3) for j in range(3) if i != j)
        if off < 1e-30:
            break
        for p in range(3):
            for q in range(p + 1, 3):
                if abs(a[p][q]) < 1e-300:
                    continue
                theta = (a[q][q] - a[p][p]) / (2 * a[p][q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                for k in range(3):
                    akp, akq = a[k][p], a[k][q]
                    a[k][p], a[k][q] = c * akp - s * akq, s * akp + c * akq
                for k in range(3):
                    apk, aqk = a[p][k], a[q][k]
                    a[p][k], a[q][k] = c * apk - s * aqk, s * apk + c * aqk
                for k in range(3):
                    vkp, vkq = v[k][p], v[k][q]
                    v[k][p], v[k][q] = c * vkp - s * vkq, s * vkp + c * vkq
    order = sorted(range(3), key=lambda i: -a[i][i])
    vals = [a[i][i] for i in order]
    vecs = [[v[k][i] for i in order] for k in range(3)]
    return vals, vecs


def pc1(r, g, b):
    cov, mean = covariance(r, g, b)
    vals, vecs = jacobi_eig(cov)
    e = [vecs[k][0] for k in range(3)]
    if sum(e) < 0:
        e = [-c for c in e]
    h, w = len(r), len(r[0])
    scores = [[(r[y][x] - mean[0]) * e[0] + (g[y][x] - mean[1]) * e[1] + (b[y][x] - mean[2]) * e[2]
               for x in range(w)] for y in range(h)]
    return scores, vals


# -- morphology ------------------------------------------------------------------


def line_pixels(length, direction):
    """Offsets (dy, dx) of a centred line; rows grow downward, 45 degrees points up-right."""
    unit = {0: (0, 1), 45: (-1, 1), 90: (-1, 0), 135: (-1, -1)}[int(direction)]
    start = -((length - 1) // 2)
    return [(k * unit[0], k * unit[1]) for k in range(start, start + length)]


def erode(img, offsets):
    h, w = len(img), len(img[0])
    return [[min(img[_clamp(y + dy, h)][_clamp(x + dx, w)] for dy, dx in offsets) for x in range(w)]
            for y in range(h)]


def reconstruct(marker, mask):
    """Grey reconstruction by threshold decomposition.

    Output at p is the largest level t such that p lies in an 8-connected
    component of {mask >= t} that contains a pixel with marker >= t.
    """
    h, w = len(mask), len(mask[0])
    marker = [[min(marker[y][x], mask[y][x]) for x in range(w)] for y in range(h)]
    levels = sorted({v for row in mask for v in row} | {v for row in marker for v in row})
    out = [[levels[0]] * w for _ in range(h)]
    for t in levels[1:]:
        seen = [[False] * w for _ in range(h)]
        q = deque()
        for y in range(h):
            for x in range(w):
                if marker[y][x] >= t:
                    seen[y][x] = True
                    q.append((y, x))
        while q:
            y, x = q.popleft()
            out[y][x] = t
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and not seen[ny][nx] and mask[ny][nx] >= t:
                        seen[ny][nx] = True
                        q.append((ny, nx))
    return out


def mbi_raw(r, g, b, directions, s_min, s_max, delta_s):
    bright = brightness(r, g, b)
    h, w = len(bright), len(bright[0])
    scales = list(range(s_min, s_max - delta_s + 1, delta_s))

    def tophat(d, s):
        opened = reconstruct(erode(bright, line_pixels(s, d)), bright)
        return [[bright[y][x] - opened[y][x] for x in range(w)] for y in range(h)]

    acc = [[0.0] * w for _ in range(h)]
    cache = {}
    for d in directions:
        for s in scales:
            for key in ((d, s), (d, s + delta_s)):
                if key not in cache:
                    cache[key] = tophat(*key)
            lo, hi = cache[(d, s)], cache[(d, s + delta_s)]
            for y in range(h):
                for x in range(w):
                    acc[y][x] += abs(hi[y][x] - lo[y][x])
    n = len(directions) * len(scales)
    return [[v / n for v in row] for row in acc]


# -- metrics ---------------------------------------------------------------------


def confusion(pred, gt):
    tp = tn = fp = fn = 0
    for prow, grow in zip(pred, gt):
        for p, g in zip(prow, grow):
            if p and g:
                tp += 1
            elif p:
                fp += 1
            elif g:
                fn += 1
            else:
                tn += 1
    return tp, tn, fp, fn


def metric_values(tp, tn, fp, fn):
    def div(a, b):
        return a / b if b else 0.0

    prec, rec = div(tp, tp + fp), div(tp, tp + fn)
    return {
        "accuracy": div(tp + tn, tp + tn + fp + fn),
        "precision": prec,
        "recall": rec,
        "f1": div(2 * prec * rec, prec + rec) if tp + fp and tp + fn else 0.0,
        "branching_factor": div(fp, tp),
        "miss_factor": div(fn, tp),
        "iou": div(tp, tp + fp + fn),
    }
