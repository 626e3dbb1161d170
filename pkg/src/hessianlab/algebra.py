"""Pointwise linear algebra for (1,1)-forms on C^n, 2 <= n <= 4.

A (1,1)-form alpha = i * sum_jk A_jk dz_j dz~_k is represented by its
Hermitian coefficient matrix A.  All densities are ratios against the
reference form given by the positive-definite metric matrix G:

    density_k(A, G) = sigma_k(lambda(A, G)) / C(n, k)

where lambda(A, G) are the relative eigenvalues (det(A - t G) = 0) and
sigma_k the elementary symmetric polynomials.  The cone Gamma_k is the
set of A whose first k normalized sigma values are strictly positive.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConeViolation, DimensionMismatch, NonHermitianInput, NonPositiveMetric

HERMITIAN_RTOL = 1e-12
METRIC_FLOOR = 1e-10


@dataclass(frozen=True)
class ConeCertificate:
    """Membership certificate for the Gamma_k cone.

    margins[j-1] = sigma_j / C(n, j) of the relative eigenvalues, for
    j = 1..k.  Membership requires every margin to be strictly positive;
    the margins are reported raw and callers pick their own tolerances.
    """

    member: bool
    margins: np.ndarray
    worst_margin: float


@dataclass(frozen=True)
class SigmaValues:
    """Vector (sigma_0, ..., sigma_n) of elementary symmetric polynomials."""

    values: np.ndarray

    def __getitem__(self, j):
        return self.values[j]


def validate_hermitian(A, name="matrix"):
    """Check A is square Hermitian within relative tolerance; return it as complex."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {A.shape}")
    scale = max(1.0, float(np.abs(A).max()))
    if np.abs(A - A.conj().T).max() > HERMITIAN_RTOL * scale:
        raise NonHermitianInput(f"{name} is not Hermitian within {HERMITIAN_RTOL:g} relative")
    return A


def _validate_metric(G):
    G = validate_hermitian(G, name="metric")
    w = np.linalg.eigvalsh(G)
    if w[0] <= METRIC_FLOOR:
        raise NonPositiveMetric(f"metric smallest eigenvalue {w[0]:.3e} <= {METRIC_FLOOR:g}")
    return G


def relative_eigenvalues(A, G):
    """Eigenvalues t solving det(A - t G) = 0, sorted ascending.

    Reduces through a Cholesky factor of G to an ordinary Hermitian
    eigenproblem, so the result is invariant under simultaneous
    congruence of A and G.
    """
    A = validate_hermitian(A)
    G = _validate_metric(G)
    if A.shape != G.shape:
        raise DimensionMismatch(f"shape mismatch {A.shape} vs {G.shape}")
    return scipy.linalg.eigh(A, G, eigvals_only=True)


def sigma(lam):
    """All elementary symmetric polynomials of the vector lam.

    Returns SigmaValues with values[j] = sigma_j, j = 0..n, computed by
    the standard one-pass recurrence.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 1:
        raise DimensionMismatch("eigenvalue vector must be 1-d")
    n = lam.size
    e = np.zeros(n + 1)
    e[0] = 1.0
    for x in lam:
        # update highest degree first so each e_j uses the previous pass
        for j in range(min(n, n), 0, -1):
            e[j] += x * e[j - 1]
    return SigmaValues(e)


def hessian_density(A, G, k):
    """Normalized k-Hessian density alpha^k wedge ref^(n-k) / ref^n.

    Equals sigma_k of the relative eigenvalues divided by C(n, k); it is
    1 when A = G and scales like t^k under A -> t A.
    """
    lam = relative_eigenvalues(A, G)
    n = lam.size
    _check_k(k, n)
    return float(sigma(lam)[k]) / math.comb(n, k)


def _check_k(k, n):
    if not 1 <= k <= n:
        raise DimensionMismatch(f"need 1 <= k <= n, got k={k}, n={n}")


def mixed_hessian_density(mats, G):
    """Polarized density alpha_1 ^ ... ^ alpha_k ^ ref^(n-k) / ref^n.

    Fully symmetric and multilinear in the k arguments; on the diagonal
    it reduces to hessian_density.  Evaluated by inclusion-exclusion
    over subsets of the arguments, which is exact for n <= 4.
    """
    mats = [validate_hermitian(A) for A in mats]
    G = _validate_metric(G)
    k = len(mats)
    n = G.shape[0]
    _check_k(k, n)
    for A in mats:
        if A.shape != G.shape:
            raise DimensionMismatch("all arguments must share the metric's dimension")
    total = 0.0
    for mask in range(1, 1 << k):
        S = sum((mats[i] for i in range(k) if mask >> i & 1), np.zeros_like(G))
        sign = (-1) ** (k - bin(mask).count("1"))
        total += sign * sigma(relative_eigenvalues(S, G))[k]
    return total / math.factorial(k) / math.comb(n, k)


def in_gamma_k(A, G, k):
    """Cone certificate: margins sigma_j / C(n, j) for j = 1..k."""
    lam = relative_eigenvalues(A, G)
    n = lam.size
    _check_k(k, n)
    sig = sigma(lam)
    margins = np.array([sig[j] / math.comb(n, j) for j in range(1, k + 1)])
    return ConeCertificate(member=bool(np.all(margins > 0.0)),
                           margins=margins,
                           worst_margin=float(margins.min()))


def garding_gap(mats, G):
    """mixed density minus the geometric mean of the individual densities.

    Every argument must certify membership in Gamma_k (k = number of
    arguments); the gap is nonnegative up to roundoff for such tuples.
    """
    k = len(mats)
    densities = []
    for i, A in enumerate(mats):
        cert = in_gamma_k(A, G, k)
        if not cert.member:
            raise ConeViolation(f"argument {i} is not in Gamma_{k} "
                                f"(worst margin {cert.worst_margin:.3e})")
        densities.append(hessian_density(A, G, k))
    geo = math.prod(d ** (1.0 / k) for d in densities)
    return mixed_hessian_density(mats, G) - geo


def random_gamma_k_sample(rng, n, k, count=1, spread=1.0):
    """Draw Hermitian matrices in Gamma_k(Id), covering near-boundary points.

    Each draw is B + t * Id with B random Hermitian (entries uniform in
    [-1, 1] scaled by `spread`) and t the smallest shift putting B into
    the closed cone, plus 0.1.
    """
    out = np.empty((count, n, n), dtype=complex)
    for i in range(count):
        re = rng.uniform(-1.0, 1.0, size=(n, n))
        im = rng.uniform(-1.0, 1.0, size=(n, n))
        B = spread * (re + re.T + 1j * (im - im.T)) / 2.0
        t = minimal_cone_shift(np.linalg.eigvalsh(B), k)
        out[i] = B + (t + 0.1) * np.eye(n)
    return out


def minimal_cone_shift(lam, k, tol=1e-14):
    """Smallest t >= 0 with sigma_j(lam + t) >= 0 for all j <= k (bisection)."""
    lam = np.asarray(lam, dtype=float)

    def ok(t):
        sig = sigma(lam + t).values
        return all(sig[j] >= 0.0 for j in range(1, k + 1))

    if ok(0.0):
        return 0.0
    lo, hi = 0.0, max(0.0, -lam.min()) + 1e-30
    while not ok(hi):  # guard against roundoff at the Gershgorin-type bound
        hi = 2.0 * hi + 1e-6
    while hi - lo > tol * (1.0 + hi):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi
