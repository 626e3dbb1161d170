# cython: language_level=3
"""Compiled kernels: per-point Hessian algebra and stencil loops.

Same surface and packed-Hermitian layout as the reference backend; see
reference.py for the layout contract.  Everything here is single pass
over the flattened periodic grid with neighbor lookup tables, so no
grid-sized temporaries beyond the declared outputs are allocated.
"""

import numpy as np

cimport cython
from libc.math cimport sqrt

ctypedef double f64
ctypedef long long i64

cdef double complex CIM = 1.0j


# ---------------------------------------------------------------- tables

def _flat_strides(shape):
    ndim = len(shape)
    strides = [0] * ndim
    s = 1
    for a in range(ndim - 1, -1, -1):
        strides[a] = s
        s *= shape[a]
    return strides


def _tables(shape):
    """fwd/bwd[a, i] = flat-index jump for +-1 along axis a at coordinate i."""
    ndim = len(shape)
    N = shape[0]
    strides = _flat_strides(shape)
    fwd = np.empty((ndim, N), dtype=np.int64)
    bwd = np.empty((ndim, N), dtype=np.int64)
    for a in range(ndim):
        st = strides[a]
        for i in range(N):
            fwd[a, i] = st if i < N - 1 else -(N - 1) * st
            bwd[a, i] = -st if i > 0 else (N - 1) * st
    return fwd, bwd


cdef inline void _inc_index(i64* idx, int ndim, i64 N) nogil:
    cdef int a = ndim - 1
    while a >= 0:
        idx[a] += 1
        if idx[a] < N:
            return
        idx[a] = 0
        a -= 1


# ------------------------------------------------------------- point ops

cdef inline void _point_ddc(const f64* v, i64 p, const i64* idx,
                            const i64[:, ::1] fwd, const i64[:, ::1] bwd,
                            int n, f64 inv_h2, f64* B) nogil:
    """Packed ddc matrix at flat index p (diag real; [j,l]=re, [l,j]=im)."""
    cdef int j, l, xj, yj, xl, yl
    cdef i64 fx, bx, fy, by, fl, bl
    cdef f64 c0 = v[p]
    cdef f64 dxx, dyy, rxx, ryy, rxy, ryx
    for j in range(n):
        xj = 2 * j
        yj = 2 * j + 1
        fx = p + fwd[xj, idx[xj]]
        bx = p + bwd[xj, idx[xj]]
        fy = p + fwd[yj, idx[yj]]
        by = p + bwd[yj, idx[yj]]
        dxx = (v[fx] - 2.0 * c0 + v[bx]) * inv_h2
        dyy = (v[fy] - 2.0 * c0 + v[by]) * inv_h2
        B[j * n + j] = 0.5 * (dxx + dyy)
        for l in range(j + 1, n):
            xl = 2 * l
            yl = 2 * l + 1
            rxx = _mix(v, p, fwd, bwd, xj, xl, idx, inv_h2)
            ryy = _mix(v, p, fwd, bwd, yj, yl, idx, inv_h2)
            rxy = _mix(v, p, fwd, bwd, xj, yl, idx, inv_h2)
            ryx = _mix(v, p, fwd, bwd, yj, xl, idx, inv_h2)
            B[j * n + l] = 0.5 * (rxx + ryy)
            B[l * n + j] = 0.5 * (rxy - ryx)


cdef inline f64 _mix(const f64* v, i64 p, const i64[:, ::1] fwd,
                     const i64[:, ::1] bwd, int a, int b,
                     const i64* idx, f64 inv_h2) nogil:
    cdef i64 fa = fwd[a, idx[a]]
    cdef i64 ba = bwd[a, idx[a]]
    cdef i64 fb = fwd[b, idx[b]]
    cdef i64 bb = bwd[b, idx[b]]
    return (v[p + fa + fb] - v[p + fa + bb] - v[p + ba + fb] + v[p + ba + bb]) \
        * (0.25 * inv_h2)


cdef inline void _sigma_point(const f64* P, int n, f64* sig) nogil:
    cdef f64 d0, d1, d2, d3, s2
    cdef double complex m[16]
    cdef double complex det
    sig[0] = 1.0
    if n == 2:
        d0 = P[0]; d1 = P[3]
        sig[1] = d0 + d1
        sig[2] = d0 * d1 - (P[1] * P[1] + P[2] * P[2])
    elif n == 3:
        sig[1] = P[0] + P[4] + P[8]
        sig[2] = (P[0] * P[4] + P[0] * P[8] + P[4] * P[8]
                  - (P[1] * P[1] + P[3] * P[3])
                  - (P[2] * P[2] + P[6] * P[6])
                  - (P[5] * P[5] + P[7] * P[7]))
        sig[3] = _det3(P, 3, 0, 1, 2)
    else:
        d0 = P[0]; d1 = P[5]; d2 = P[10]; d3 = P[15]
        sig[1] = d0 + d1 + d2 + d3
        s2 = (d0 * d1 - (P[1] * P[1] + P[4] * P[4])
              + d0 * d2 - (P[2] * P[2] + P[8] * P[8])
              + d0 * d3 - (P[3] * P[3] + P[12] * P[12])
              + d1 * d2 - (P[6] * P[6] + P[9] * P[9])
              + d1 * d3 - (P[7] * P[7] + P[13] * P[13])
              + d2 * d3 - (P[11] * P[11] + P[14] * P[14]))
        sig[2] = s2
        sig[3] = (_det3(P, 4, 1, 2, 3) + _det3(P, 4, 0, 2, 3)
                  + _det3(P, 4, 0, 1, 3) + _det3(P, 4, 0, 1, 2))
        _load_complex(P, 4, m)
        det = _det4(m)
        sig[4] = det.real


cdef inline f64 _det3(const f64* P, int n, int i, int j, int k) nogil:
    """Determinant of the Hermitian principal block (i, j, k) of packed P."""
    cdef f64 di = P[i * n + i], dj = P[j * n + j], dk = P[k * n + k]
    cdef f64 aij = P[i * n + j], bij = P[j * n + i]
    cdef f64 aik = P[i * n + k], bik = P[k * n + i]
    cdef f64 ajk = P[j * n + k], bjk = P[k * n + j]
    cdef f64 tri = (aij * ajk - bij * bjk) * aik + (aij * bjk + bij * ajk) * bik
    return (di * dj * dk - di * (ajk * ajk + bjk * bjk)
            - dj * (aik * aik + bik * bik) - dk * (aij * aij + bij * bij)
            + 2.0 * tri)


cdef inline void _load_complex(const f64* P, int n, double complex* m) nogil:
    cdef int j, k
    for j in range(n):
        m[j * n + j] = P[j * n + j]
        for k in range(j + 1, n):
            m[j * n + k] = P[j * n + k] + CIM * P[k * n + j]
            m[k * n + j] = P[j * n + k] - CIM * P[k * n + j]


cdef inline double complex _det4(const double complex* m) nogil:
    cdef double complex c0, c1, c2, c3
    c0 = _cdet3(m[5], m[6], m[7], m[9], m[10], m[11], m[13], m[14], m[15])
    c1 = _cdet3(m[4], m[6], m[7], m[8], m[10], m[11], m[12], m[14], m[15])
    c2 = _cdet3(m[4], m[5], m[7], m[8], m[9], m[11], m[12], m[13], m[15])
    c3 = _cdet3(m[4], m[5], m[6], m[8], m[9], m[10], m[12], m[13], m[14])
    return m[0] * c0 - m[1] * c1 + m[2] * c2 - m[3] * c3


cdef inline double complex _cdet3(double complex a, double complex b, double complex c,
                                  double complex d, double complex e, double complex f,
                                  double complex g, double complex h, double complex i) nogil:
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


cdef inline void _newton_tensor_point(const f64* P, int n, int k,
                                      const f64* sig, double complex* T) nogil:
    """T_{k-1}(A) from packed A and its sigma values, dense complex."""
    cdef double complex m[16]
    cdef double complex m2[16]
    cdef double complex m3[16]
    cdef int i, j
    _load_complex(P, n, m)
    for i in range(n * n):
        T[i] = 0.0
    for i in range(n):
        T[i * n + i] = sig[k - 1]
    if k >= 2:
        for i in range(n * n):
            T[i] = T[i] - sig[k - 2] * m[i]
    if k >= 3:
        _matmul(m, m, m2, n)
        for i in range(n * n):
            T[i] = T[i] + sig[k - 3] * m2[i]
    if k >= 4:
        _matmul(m2, m, m3, n)
        for i in range(n * n):
            T[i] = T[i] - m3[i]


cdef inline void _matmul(const double complex* a, const double complex* b,
                         double complex* out, int n) nogil:
    cdef int i, j, l
    cdef double complex acc
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for l in range(n):
                acc = acc + a[i * n + l] * b[l * n + j]
            out[i * n + j] = acc


# ------------------------------------------------------------ public API

def ddc(values, double h):
    v = np.ascontiguousarray(values, dtype=np.float64)
    shape = v.shape
    cdef int ndim = v.ndim
    cdef int n = ndim // 2
    cdef i64 N = shape[0]
    fwd_np, bwd_np = _tables(shape)
    out = np.empty(shape + (n, n), dtype=np.float64)
    _ddc_impl(v.reshape(-1), out.reshape(-1, n * n), fwd_np, bwd_np, ndim, n, N, h)
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _ddc_impl(f64[::1] v, f64[:, ::1] out, i64[:, ::1] fwd, i64[:, ::1] bwd,
              int ndim, int n, i64 N, double h):
    cdef i64 npts = v.shape[0]
    cdef f64 inv_h2 = 1.0 / (h * h)
    cdef i64 idx[8]
    cdef i64 p
    cdef int a
    for a in range(ndim):
        idx[a] = 0
    with nogil:
        for p in range(npts):
            _point_ddc(&v[0], p, idx, fwd, bwd, n, inv_h2, &out[p, 0])
            _inc_index(idx, ndim, N)


def sigma_all(P):
    P = np.ascontiguousarray(P, dtype=np.float64)
    n = P.shape[-1]
    if n not in (2, 3, 4):
        raise ValueError(f"unsupported dimension n={n}")
    lead = P.shape[:-2]
    out = np.empty(lead + (n + 1,), dtype=np.float64)
    _sigma_all_impl(P.reshape(-1, n * n), out.reshape(-1, n + 1), n)
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _sigma_all_impl(f64[:, ::1] P, f64[:, ::1] out, int n):
    cdef i64 p, npts = P.shape[0]
    with nogil:
        for p in range(npts):
            _sigma_point(&P[p, 0], n, &out[p, 0])


def newton_tensor(P, int k):
    P = np.ascontiguousarray(P, dtype=np.float64)
    n = P.shape[-1]
    out = np.empty_like(P)
    _newton_tensor_impl(P.reshape(-1, n * n), out.reshape(-1, n * n), n, k)
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _newton_tensor_impl(f64[:, ::1] P, f64[:, ::1] out, int n, int k):
    cdef i64 p, npts = P.shape[0]
    cdef f64 sig[5]
    cdef double complex T[16]
    cdef int j, l
    with nogil:
        for p in range(npts):
            _sigma_point(&P[p, 0], n, sig)
            _newton_tensor_point(&P[p, 0], n, k, sig, T)
            for j in range(n):
                out[p, j * n + j] = T[j * n + j].real
                for l in range(j + 1, n):
                    out[p, j * n + l] = T[j * n + l].real
                    out[p, l * n + j] = T[j * n + l].imag


def hess_directional(P, delta, double h, int k):
    P = np.ascontiguousarray(P, dtype=np.float64)
    d = np.ascontiguousarray(delta, dtype=np.float64)
    shape = d.shape
    cdef int ndim = d.ndim
    cdef int n = ndim // 2
    cdef i64 N = shape[0]
    fwd_np, bwd_np = _tables(shape)
    out = np.empty(shape, dtype=np.float64)
    _hess_dir_impl(P.reshape(-1, n * n), d.reshape(-1), out.reshape(-1),
                   fwd_np, bwd_np, ndim, n, N, h, k)
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _hess_dir_impl(f64[:, ::1] P, f64[::1] d, f64[::1] out,
                   i64[:, ::1] fwd, i64[:, ::1] bwd,
                   int ndim, int n, i64 N, double h, int k):
    cdef i64 npts = d.shape[0]
    cdef f64 inv_h2 = 1.0 / (h * h)
    cdef i64 idx[8]
    cdef i64 p
    cdef int a, j, l
    cdef f64 sig[5]
    cdef f64 B[16]
    cdef double complex T[16]
    cdef f64 acc
    for a in range(ndim):
        idx[a] = 0
    with nogil:
        for p in range(npts):
            _sigma_point(&P[p, 0], n, sig)
            _newton_tensor_point(&P[p, 0], n, k, sig, T)
            _point_ddc(&d[0], p, idx, fwd, bwd, n, inv_h2, B)
            acc = 0.0
            for j in range(n):
                acc += T[j * n + j].real * B[j * n + j]
                for l in range(j + 1, n):
                    acc += 2.0 * (T[j * n + l].real * B[j * n + l]
                                  + T[j * n + l].imag * B[l * n + j])
            out[p] = acc
            _inc_index(idx, ndim, N)


def mean_tensor_over_sigma(P, int k):
    P = np.ascontiguousarray(P, dtype=np.float64)
    n = P.shape[-1]
    acc = np.zeros((n, n), dtype=np.float64)
    _mean_tensor_impl(P.reshape(-1, n * n), acc, n, k)
    return acc / P.reshape(-1, n * n).shape[0]


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _mean_tensor_impl(f64[:, ::1] P, f64[:, ::1] acc, int n, int k):
    cdef i64 p, npts = P.shape[0]
    cdef f64 sig[5]
    cdef double complex T[16]
    cdef int j, l
    cdef f64 w
    with nogil:
        for p in range(npts):
            _sigma_point(&P[p, 0], n, sig)
            _newton_tensor_point(&P[p, 0], n, k, sig, T)
            w = 1.0 / sig[k]
            for j in range(n):
                acc[j, j] += T[j * n + j].real * w
                for l in range(j + 1, n):
                    acc[j, l] += T[j * n + l].real * w
                    acc[l, j] += T[j * n + l].imag * w


# ------------------------------------------------------------ sweep oracle

cdef int _COMB[5][5]


def _init_comb():
    import math
    for i in range(5):
        for j in range(5):
            _COMB[i][j] = math.comb(i, j) if j <= i else 0


_init_comb()


cdef inline bint _shifted_ok(const f64* sig, f64 t, int k, int n) nogil:
    cdef int j, i
    cdef f64 s, tp
    for j in range(1, k + 1):
        s = 0.0
        for i in range(j + 1):
            tp = 1.0
            for _ in range(j - i):
                tp *= t
            s += _COMB[n - i][j - i] * sig[i] * tp
        if s < 0.0:
            return False
    return True


cdef inline f64 _repair_shift(const f64* sig, int k, int n, f64 hint) nogil:
    cdef f64 lo, hi, mid
    cdef int it
    if _shifted_ok(sig, 0.0, k, n):
        return 0.0
    hi = hint if hint > 1e-30 else 1e-30
    while not _shifted_ok(sig, hi, k, n):
        hi = 2.0 * hi + 1e-6
    lo = 0.0
    for it in range(80):
        mid = 0.5 * (lo + hi)
        if _shifted_ok(sig, mid, k, n):
            hi = mid
        else:
            lo = mid
    return hi


cdef inline f64 _gershgorin_deficit(const f64* M, int n) nogil:
    cdef int j, l
    cdef f64 worst = 0.0, r, re, im
    for j in range(n):
        r = 0.0
        for l in range(n):
            if l != j:
                if j < l:
                    re = M[j * n + l]; im = M[l * n + j]
                else:
                    re = M[l * n + j]; im = M[j * n + l]
                r += sqrt(re * re + im * im)
        if M[j * n + j] - r < worst:
            worst = M[j * n + j] - r
    return -worst


def sweep_envelope(phi, obstacle, omega, int k, double h, int max_sweeps, double tol):
    shape = phi.shape
    cdef int ndim = phi.ndim
    cdef int n = ndim // 2
    cdef i64 N = shape[0]
    fwd_np, bwd_np = _tables(shape)
    flat = np.ascontiguousarray(phi, dtype=np.float64).reshape(-1)
    ob = np.ascontiguousarray(obstacle, dtype=np.float64).reshape(-1)
    om = np.ascontiguousarray(omega, dtype=np.float64).reshape(-1, n * n)
    active = np.ones(flat.size, dtype=np.uint8)
    nxt = np.zeros(flat.size, dtype=np.uint8)
    res = _sweep_impl(flat, ob, om, active, nxt, fwd_np, bwd_np,
                      ndim, n, N, h, k, max_sweeps, tol)
    phi[...] = flat.reshape(shape)
    return res


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _sweep_impl(f64[::1] flat, f64[::1] ob, f64[:, ::1] om,
                unsigned char[::1] active, unsigned char[::1] nxt,
                i64[:, ::1] fwd, i64[:, ::1] bwd,
                int ndim, int n, i64 N, double h, int k,
                int max_sweeps, double tol):
    cdef i64 npts = flat.shape[0]
    cdef f64 inv_h2 = 1.0 / (h * h)
    cdef f64 half_h2 = 0.5 * h * h
    cdef i64 idx[8]
    cdef i64 p, q
    cdef int a, b, j, sweep, sa, sb
    cdef f64 M[16]
    cdef f64 sig[5]
    cdef f64 c, old, t, change, last
    cdef bint any_active
    last = 0.0
    for sweep in range(1, max_sweeps + 1):
        for p in range(npts):
            nxt[p] = 0
        last = 0.0
        any_active = False
        for a in range(ndim):
            idx[a] = 0
        with nogil:
            for p in range(npts):
                if active[p]:
                    old = flat[p]
                    c = old if old < ob[p] else ob[p]
                    flat[p] = c
                    _point_ddc(&flat[0], p, idx, fwd, bwd, n, inv_h2, M)
                    for j in range(n * n):
                        M[j] += om[p, j]
                    _sigma_point(M, n, sig)
                    t = _repair_shift(sig, k, n, _gershgorin_deficit(M, n))
                    if t > 0.0:
                        flat[p] = c - t * half_h2
                    change = old - flat[p]
                    if change > 1e-15 * (1.0 + (old if old > 0 else -old)):
                        if change > last:
                            last = change
                        any_active = True
                        # reactivate every point whose stencil sees p
                        nxt[p] = 1
                        for a in range(ndim):
                            nxt[p + fwd[a, idx[a]]] = 1
                            nxt[p + bwd[a, idx[a]]] = 1
                            for b in range(a + 1, ndim):
                                nxt[p + fwd[a, idx[a]] + fwd[b, idx[b]]] = 1
                                nxt[p + fwd[a, idx[a]] + bwd[b, idx[b]]] = 1
                                nxt[p + bwd[a, idx[a]] + fwd[b, idx[b]]] = 1
                                nxt[p + bwd[a, idx[a]] + bwd[b, idx[b]]] = 1
                _inc_index(idx, ndim, N)
        active[:] = nxt
        if last <= tol or not any_active:
            return sweep, last, True
    return max_sweeps, last, False
