"""Independent scalar-loop reference implementations.

Everything here is deliberately brute force and shares no code with the
library: plain Python loops, explicit formulas, O(n^2) transforms.  Tests
compare the vectorized implementations against these.
"""

import math

import numpy as np


def threshold_count(values, tau) -> int:
    n = 0
    for v in np.asarray(values).ravel():
        if v > tau:
            n += 1
    return n


def ball_count(radius: float) -> int:
    """Voxels of the discrete ball ||x - c|| <= r around an integer center."""
    n = 0
    reach = int(math.ceil(radius))
    for dx in range(-reach, reach + 1):
        for dy in range(-reach, reach + 1):
            for dz in range(-reach, reach + 1):
                if dx * dx + dy * dy + dz * dz <= radius * radius:
                    n += 1
    return n


# --------------------------------------------------------------------------
# affine resampling
# --------------------------------------------------------------------------

def trilinear(arr, x, y, z) -> float:
    """Index-space trilinear interpolation; sample points outside the grid are 0.

    A point is out of bounds as soon as any coordinate leaves [0, n-1]
    (no partial blending at the edges), matching the resampling convention
    of the library and of standard medical-image resamplers.
    """
    nx, ny, nz = arr.shape
    if not (0 <= x <= nx - 1 and 0 <= y <= ny - 1 and 0 <= z <= nz - 1):
        return 0.0

    def at(i, j, k):
        if 0 <= i < nx and 0 <= j < ny and 0 <= k < nz:
            return float(arr[i, j, k])
        return 0.0

    i0, j0, k0 = math.floor(x), math.floor(y), math.floor(z)
    fx, fy, fz = x - i0, y - j0, z - k0
    total = 0.0
    for di in (0, 1):
        for dj in (0, 1):
            for dk in (0, 1):
                w = (fx if di else 1 - fx) * (fy if dj else 1 - fy) * (fz if dk else 1 - fz)
                total += w * at(i0 + di, j0 + dj, k0 + dk)
    return total


def rotation_zyx(deg):
    ax, ay, az = (math.radians(a) for a in deg)
    rx = np.array([[1, 0, 0], [0, math.cos(ax), -math.sin(ax)], [0, math.sin(ax), math.cos(ax)]])
    ry = np.array([[math.cos(ay), 0, math.sin(ay)], [0, 1, 0], [-math.sin(ay), 0, math.cos(ay)]])
    rz = np.array([[math.cos(az), -math.sin(az), 0], [math.sin(az), math.cos(az), 0], [0, 0, 1]])
    return rz @ ry @ rx


def affine_resample(arr, spacing, scale, rotation_deg, translation_mm) -> np.ndarray:
    """Scalar re-sampling under y = S R (x - c) + c + t: out(y) = in(A^-1 (y - b))."""
    arr = np.asarray(arr, dtype=np.float64)
    spacing = np.asarray(spacing, dtype=np.float64)
    a = np.diag(scale) @ rotation_zyx(rotation_deg)
    center = (np.array(arr.shape) - 1.0) / 2.0 * spacing
    b = center + np.asarray(translation_mm, dtype=np.float64) - a @ center
    a_inv = np.linalg.inv(a)
    out = np.zeros_like(arr)
    for i in range(arr.shape[0]):
        for j in range(arr.shape[1]):
            for k in range(arr.shape[2]):
                y_mm = np.array([i, j, k]) * spacing
                x_mm = a_inv @ (y_mm - b)
                xi, yj, zk = x_mm / spacing
                out[i, j, k] = trilinear(arr, xi, yj, zk)
    return out


# --------------------------------------------------------------------------
# ghosting via brute-force DFT
# --------------------------------------------------------------------------

def _dft(line):
    n = len(line)
    return [
        sum(line[m] * complex(math.cos(-2 * math.pi * f * m / n), math.sin(-2 * math.pi * f * m / n)) for m in range(n))
        for f in range(n)
    ]


def _idft(spectrum):
    n = len(spectrum)
    return [
        sum(
            spectrum[f] * complex(math.cos(2 * math.pi * f * m / n), math.sin(2 * math.pi * f * m / n))
            for f in range(n)
        ).real
        / n
        for m in range(n)
    ]


def ghost_attenuate(arr, axis, strength, num_ghosts, protected_fraction=0.02) -> np.ndarray:
    """O(n^2) DFT along ``axis``; every k-th plane (k = n // num_ghosts) times (1 - strength)."""
    arr = np.asarray(arr, dtype=np.float64)
    moved = np.moveaxis(arr, axis, -1)
    n = moved.shape[-1]
    k = n // num_ghosts
    factors = [1.0] * n
    for f in range(k, n, k):
        if min(f, n - f) > protected_fraction * n:
            factors[f] = 1.0 - strength
    flat = np.ascontiguousarray(moved).reshape(-1, n)
    out_flat = np.empty_like(flat)
    for row in range(flat.shape[0]):
        spectrum = _dft(list(flat[row]))
        spectrum = [s * fac for s, fac in zip(spectrum, factors)]
        out_flat[row] = _idft(spectrum)
    return np.moveaxis(out_flat.reshape(moved.shape), -1, axis)


# --------------------------------------------------------------------------
# bias field
# --------------------------------------------------------------------------

def bias_field_value(dims, coeff_by_monomial, i, j, k) -> float:
    """exp(sum c_pqr u^p v^q w^r) at one voxel, with per-axis [-1, 1] coordinates."""

    def unit(idx, n):
        return 0.0 if n == 1 else -1.0 + 2.0 * idx / (n - 1)

    u, v, w = unit(i, dims[0]), unit(j, dims[1]), unit(k, dims[2])
    log_field = 0.0
    for (p, q, r), c in coeff_by_monomial.items():
        log_field += c * (u**p) * (v**q) * (w**r)
    return math.exp(log_field)


# --------------------------------------------------------------------------
# statistics
# --------------------------------------------------------------------------

def pearson(xs, ys) -> float:
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / math.sqrt(sxx * syy)


def quantile_linear(values, q) -> float:
    """Linear interpolation between order statistics at position q*(n-1)."""
    s = sorted(values)
    pos = q * (len(s) - 1)
    lo = math.floor(pos)
    hi = math.ceil(pos)
    if lo == hi:
        return float(s[lo])
    frac = pos - lo
    return float(s[lo] * (1 - frac) + s[hi] * frac)


def entropy_bits(p: float) -> float:
    h = 0.0
    if p > 0:
        h -= p * math.log2(p)
    if 1 - p > 0:
        h -= (1 - p) * math.log2(1 - p)
    return h


def stack_stats(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-voxel mean / population variance / entropy of an (n, X, Y, Z) stack."""
    samples = np.asarray(samples)
    n = samples.shape[0]
    dims = samples.shape[1:]
    mean = np.zeros(dims)
    var = np.zeros(dims)
    ent = np.zeros(dims)
    for i in range(dims[0]):
        for j in range(dims[1]):
            for k in range(dims[2]):
                vals = [float(samples[s, i, j, k]) for s in range(n)]
                m = sum(vals) / n
                mean[i, j, k] = m
                var[i, j, k] = sum((v - m) ** 2 for v in vals) / n
                ent[i, j, k] = entropy_bits(m)
    return mean, var, ent


def soft_dice(p, y, eps=1.0) -> float:
    inter = s_p = s_y = 0.0
    for pv, yv in zip(np.asarray(p).ravel(), np.asarray(y).ravel()):
        inter += float(pv) * float(yv)
        s_p += float(pv)
        s_y += float(yv)
    return 1.0 - (2.0 * inter + eps) / (s_p + s_y + eps)


def bce(p, y, clip=1e-7) -> float:
    total = 0.0
    flat_p = np.asarray(p).ravel()
    flat_y = np.asarray(y).ravel()
    for pv, yv in zip(flat_p, flat_y):
        pc = min(max(float(pv), clip), 1.0 - clip)
        total += -(float(yv) * math.log(pc) + (1.0 - float(yv)) * math.log(1.0 - pc))
    return total / len(flat_p)


def composite(p, y, w_ce=0.3, w_dice=0.7) -> float:
    return w_ce * bce(p, y) + w_dice * soft_dice(p, y)


def dice_overlap(a, b) -> float:
    sa = sb = inter = 0
    for av, bv in zip(np.asarray(a).ravel(), np.asarray(b).ravel()):
        av = av > 0.5
        bv = bv > 0.5
        sa += av
        sb += bv
        inter += av and bv
    if sa + sb == 0:
        return 1.0
    return 2.0 * inter / (sa + sb)


def spearman(xs, ys) -> float:
    """Rank correlation with average ranks for ties."""

    def ranks(vals):
        order = sorted(range(len(vals)), key=lambda i: vals[i])
        r = [0.0] * len(vals)
        i = 0
        while i < len(order):
            j = i
            while j + 1 < len(order) and vals[order[j + 1]] == vals[order[i]]:
                j += 1
            avg = (i + j) / 2.0 + 1.0
            for idx in order[i : j + 1]:
                r[idx] = avg
            i = j + 1
        return r

    return pearson(ranks(list(xs)), ranks(list(ys)))
