"""Pure-NumPy kernels: the fallback backend.

Hermitian matrix fields use a packed real layout of shape (..., n, n):
diagonal entries are stored as themselves and, for j < k, the (j, k)
slot holds the real part and the (k, j) slot the imaginary part of the
(j, k) entry.  The layout is Hermitian by construction, halves memory
against complex storage, and is what the compiled backend iterates over.

Grid fields are 2n-dimensional periodic arrays with axes ordered
(x_1, y_1, ..., x_n, y_n).
"""

import math

import numpy as np

_CHUNK = 1 << 18


def pack_hermitian(A):
    """Complex Hermitian (..., n, n) -> packed real storage."""
    A = np.asarray(A, dtype=complex)
    n = A.shape[-1]
    out = np.empty(A.shape, dtype=np.float64)
    for j in range(n):
        out[..., j, j] = A[..., j, j].real
        for k in range(j + 1, n):
            out[..., j, k] = A[..., j, k].real
            out[..., k, j] = A[..., j, k].imag
    return out


def unpack_hermitian(P):
    """Packed real storage -> complex Hermitian (..., n, n)."""
    P = np.asarray(P, dtype=np.float64)
    n = P.shape[-1]
    A = np.zeros(P.shape, dtype=complex)
    for j in range(n):
        A[..., j, j] = P[..., j, j]
        for k in range(j + 1, n):
            A[..., j, k] = P[..., j, k] + 1j * P[..., k, j]
            A[..., k, j] = P[..., j, k] - 1j * P[..., k, j]
    return A


def _d2(v, axis, inv_h2):
    return (np.roll(v, -1, axis) - 2.0 * v + np.roll(v, 1, axis)) * inv_h2


def _dmix(v, a, b, inv_h2):
    pp = np.roll(np.roll(v, -1, a), -1, b)
    pm = np.roll(np.roll(v, -1, a), 1, b)
    mp = np.roll(np.roll(v, 1, a), -1, b)
    mm = np.roll(np.roll(v, 1, a), 1, b)
    return (pp - pm - mp + mm) * (0.25 * inv_h2)


def ddc(values, h):
    """Discrete complex Hessian form of a periodic potential.

    Returns the packed Hermitian field A with A_jk = 2 d^2 phi / dz_j dz~_k
    realized by second-order central differences with periodic wrap.
    """
    v = np.asarray(values, dtype=np.float64)
    n = v.ndim // 2
    inv_h2 = 1.0 / (h * h)
    out = np.empty(v.shape + (n, n), dtype=np.float64)
    for j in range(n):
        xj, yj = 2 * j, 2 * j + 1
        out[..., j, j] = 0.5 * (_d2(v, xj, inv_h2) + _d2(v, yj, inv_h2))
        for k in range(j + 1, n):
            xk, yk = 2 * k, 2 * k + 1
            out[..., j, k] = 0.5 * (_dmix(v, xj, xk, inv_h2) + _dmix(v, yj, yk, inv_h2))
            out[..., k, j] = 0.5 * (_dmix(v, xj, yk, inv_h2) - _dmix(v, yj, xk, inv_h2))
    return out


def _sigma_all_flat(P):
    """sigma_0..sigma_n per point from packed storage, minor formulas."""
    n = P.shape[-1]
    out = np.empty(P.shape[:-2] + (n + 1,), dtype=np.float64)
    out[..., 0] = 1.0
    if n == 2:
        d0, d1 = P[..., 0, 0], P[..., 1, 1]
        a, b = P[..., 0, 1], P[..., 1, 0]
        out[..., 1] = d0 + d1
        out[..., 2] = d0 * d1 - (a * a + b * b)
    elif n == 3:
        out[..., 1] = P[..., 0, 0] + P[..., 1, 1] + P[..., 2, 2]
        out[..., 2] = _sig2_3x3(P)
        out[..., 3] = _det_herm3(P, 0, 1, 2)
    elif n == 4:
        d = [P[..., j, j] for j in range(4)]
        s2 = np.zeros_like(d[0])
        for j in range(4):
            for k in range(j + 1, 4):
                s2 += d[j] * d[k] - (P[..., j, k] ** 2 + P[..., k, j] ** 2)
        out[..., 1] = d[0] + d[1] + d[2] + d[3]
        out[..., 2] = s2
        s3 = np.zeros_like(d[0])
        for drop in range(4):
            idx = [j for j in range(4) if j != drop]
            s3 += _det_herm3(P, *idx)
        out[..., 3] = s3
        out[..., 4] = np.linalg.det(unpack_hermitian(P)).real
    else:
        raise ValueError(f"unsupported dimension n={n}")
    return out


def _sig2_3x3(P):
    d0, d1, d2 = P[..., 0, 0], P[..., 1, 1], P[..., 2, 2]
    return (d0 * d1 + d0 * d2 + d1 * d2
            - (P[..., 0, 1] ** 2 + P[..., 1, 0] ** 2)
            - (P[..., 0, 2] ** 2 + P[..., 2, 0] ** 2)
            - (P[..., 1, 2] ** 2 + P[..., 2, 1] ** 2))


def _det_herm3(P, i, j, k):
    """Determinant of the Hermitian principal 3x3 block (i, j, k), i<j<k."""
    di, dj, dk = P[..., i, i], P[..., j, j], P[..., k, k]
    aij, bij = P[..., i, j], P[..., j, i]
    aik, bik = P[..., i, k], P[..., k, i]
    ajk, bjk = P[..., j, k], P[..., k, j]
    tri = (aij * ajk - bij * bjk) * aik + (aij * bjk + bij * ajk) * bik
    return (di * dj * dk - di * (ajk ** 2 + bjk ** 2) - dj * (aik ** 2 + bik ** 2)
            - dk * (aij ** 2 + bij ** 2) + 2.0 * tri)


def sigma_all(P):
    """Elementary symmetric values of each packed Hermitian matrix."""
    return _sigma_all_flat(np.asarray(P, dtype=np.float64))


def newton_tensor(P, k):
    """Packed field of T_{k-1}(A) with d sigma_k(A)[B] = tr(T_{k-1}(A) B)."""
    P = np.asarray(P, dtype=np.float64)
    n = P.shape[-1]
    flat = P.reshape(-1, n, n)
    out = np.empty_like(flat)
    eye = np.eye(n)
    for start in range(0, flat.shape[0], _CHUNK):
        blk = flat[start:start + _CHUNK]
        sig = _sigma_all_flat(blk)
        A = unpack_hermitian(blk)
        T = sig[:, k - 1, None, None] * eye
        if k >= 2:
            T = T - sig[:, k - 2, None, None] * A
        if k >= 3:
            A2 = A @ A
            T = T + sig[:, k - 3, None, None] * A2
        if k >= 4:
            T = T - (A2 @ A)
        out[start:start + _CHUNK] = pack_hermitian(T)
    return out.reshape(P.shape)


def hess_directional(P, delta, h, k):
    """Pointwise tr(T_{k-1}(A) ddc(delta)) over the grid."""
    B = ddc(delta, h)
    T = newton_tensor(P, k)
    n = P.shape[-1]
    out = np.zeros(delta.shape, dtype=np.float64)
    for j in range(n):
        out += T[..., j, j] * B[..., j, j]
        for l in range(j + 1, n):
            out += 2.0 * (T[..., j, l] * B[..., j, l] + T[..., l, j] * B[..., l, j])
    return out


def mean_tensor_over_sigma(P, k):
    """Grid mean of T_{k-1}(A) / sigma_k(A), packed (n, n)."""
    P = np.asarray(P, dtype=np.float64)
    n = P.shape[-1]
    flat = P.reshape(-1, n, n)
    acc = np.zeros((n, n))
    count = 0
    for start in range(0, flat.shape[0], _CHUNK):
        blk = flat[start:start + _CHUNK]
        sig = _sigma_all_flat(blk)
        T = newton_tensor(blk, k)
        acc += (T / sig[:, k, None, None]).sum(axis=0)
        count += blk.shape[0]
    return acc / count


def _binom_row(n):
    return [math.comb(n, j) for j in range(n + 1)]


def _shifted_sigma_ok(sig, t, k, n):
    """sigma_j(lam + t) >= 0 for all j <= k, from sigma values of lam."""
    for j in range(1, k + 1):
        s = 0.0
        for i in range(j + 1):
            s += math.comb(n - i, j - i) * sig[i] * t ** (j - i)
        if s < 0.0:
            return False
    return True


def _repair_shift(sig, k, n, lower_bound_hint):
    """Smallest t with the shifted matrix in the closed cone (bisection)."""
    if _shifted_sigma_ok(sig, 0.0, k, n):
        return 0.0
    hi = max(lower_bound_hint, 1e-30)
    while not _shifted_sigma_ok(sig, hi, k, n):
        hi = 2.0 * hi + 1e-6
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _shifted_sigma_ok(sig, mid, k, n):
            hi = mid
        else:
            lo = mid
    return hi


def sweep_envelope(phi, obstacle, omega, k, h, max_sweeps, tol):
    """Projected Gauss-Seidel sweeps: clamp to the obstacle, then lower
    each point until its form enters the closed Gamma_k cone.

    Mutates phi in place; returns (sweeps_used, last_max_change, converged).
    The lexicographic ordering and latest-neighbor updates are part of
    the method's definition.
    """
    shape = phi.shape
    n = phi.ndim // 2
    flat = phi.reshape(-1)
    ob = obstacle.reshape(-1)
    om = omega.reshape(-1, n, n)
    half_h2 = 0.5 * h * h
    npts = flat.size
    active = np.ones(npts, dtype=bool)
    last = np.inf
    for sweep in range(1, max_sweeps + 1):
        nxt = np.zeros(npts, dtype=bool)
        last = 0.0
        for p in np.nonzero(active)[0]:
            old = flat[p]
            c = min(old, ob[p])
            flat[p] = c
            M = om[p] + _point_ddc(flat, shape, p, h)
            sig = _sigma_all_flat(M[None])[0]
            gersh = _gershgorin_deficit(M)
            t = _repair_shift(sig, k, n, gersh)
            if t > 0.0:
                flat[p] = c - t * half_h2
            change = old - flat[p]
            if change > 1e-15 * (1.0 + abs(old)):
                last = max(last, change)
                _mark_stencil(nxt, shape, p)
        active = nxt
        if last <= tol or not active.any():
            return sweep, last, True
    return max_sweeps, last, False


def _gershgorin_deficit(M):
    n = M.shape[0]
    worst = 0.0
    for j in range(n):
        r = 0.0
        for l in range(n):
            if l != j:
                re = M[min(j, l), max(j, l)]
                im = M[max(j, l), min(j, l)]
                r += math.hypot(re, im)
        worst = min(worst, M[j, j] - r)
    return -worst


def _point_ddc(flat, shape, p, h):
    """Packed ddc matrix at a single flat index (periodic)."""
    n = len(shape) // 2
    idx = np.array(np.unravel_index(p, shape))
    inv_h2 = 1.0 / (h * h)

    def at(offsets):
        q = idx.copy()
        for ax, sh in offsets:
            q[ax] = (q[ax] + sh) % shape[ax]
        return flat[np.ravel_multi_index(q, shape)]

    c0 = flat[p]
    M = np.empty((n, n))
    for j in range(n):
        xj, yj = 2 * j, 2 * j + 1
        dxx = (at([(xj, 1)]) - 2.0 * c0 + at([(xj, -1)])) * inv_h2
        dyy = (at([(yj, 1)]) - 2.0 * c0 + at([(yj, -1)])) * inv_h2
        M[j, j] = 0.5 * (dxx + dyy)
        for l in range(j + 1, n):
            xl, yl = 2 * l, 2 * l + 1

            def mix(a, b):
                return (at([(a, 1), (b, 1)]) - at([(a, 1), (b, -1)])
                        - at([(a, -1), (b, 1)]) + at([(a, -1), (b, -1)])) * (0.25 * inv_h2)

            M[j, l] = 0.5 * (mix(xj, xl) + mix(yj, yl))
            M[l, j] = 0.5 * (mix(xj, yl) - mix(yj, xl))
    return M


def _mark_stencil(mask, shape, p):
    ndim = len(shape)
    idx = np.array(np.unravel_index(p, shape))
    offs = [()]
    for a in range(ndim):
        for s in (-1, 1):
            offs.append(((a, s),))
    for a in range(ndim):
        for b in range(a + 1, ndim):
            for sa in (-1, 1):
                for sb in (-1, 1):
                    offs.append(((a, sa), (b, sb)))
    for off in offs:
        q = idx.copy()
        for ax, sh in off:
            q[ax] = (q[ax] + sh) % shape[ax]
        mask[np.ravel_multi_index(q, shape)] = True
