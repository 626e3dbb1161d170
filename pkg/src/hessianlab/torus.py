"""Periodic-grid calculus on the flat torus model.

The manifold is (R/Z)^(2n) with complex coordinates z_j = x_j + i y_j,
grid axes ordered (x_1, y_1, ..., x_n, y_n), and the reference form
represented by the identity matrix, so the reference volume is the
grid average and all densities are plain ratios.
"""

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import pack_hermitian, unpack_hermitian
from .errors import DimensionMismatch, InvalidExponent, IoError

#: ddc stencil offsets: center, +-1 along each axis, and the four corners
#: of every axis pair.  Everything a point's Hessian matrix can read.
_MAGIC = b"HLAB"
_FORMAT_VERSION = 1
_KIND_CODES = {"grid_function": 1, "form_field": 2, "density_field": 3}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid: N points per axis on (R/Z)^(2n)."""

    n: int
    N: int

    def __post_init__(self):
        if not 2 <= self.n <= 4:
            raise DimensionMismatch(f"complex dimension must be in [2, 4], got {self.n}")
        if self.N < 4 or self.N % 2:
            raise DimensionMismatch(f"points per axis must be even and >= 4, got {self.N}")

    @property
    def h(self):
        return 1.0 / self.N

    @property
    def shape(self):
        return (self.N,) * (2 * self.n)

    @property
    def npoints(self):
        return self.N ** (2 * self.n)

    def axis_coordinate(self, axis):
        """Coordinate values along `axis`, broadcastable over the grid."""
        ndim = 2 * self.n
        shape = [1] * ndim
        shape[axis] = self.N
        return (np.arange(self.N) * self.h).reshape(shape)

    def x(self, j):
        """Broadcastable x_j coordinate (j is 1-based)."""
        return self.axis_coordinate(2 * (j - 1))

    def y(self, j):
        """Broadcastable y_j coordinate (j is 1-based)."""
        return self.axis_coordinate(2 * (j - 1) + 1)


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise DimensionMismatch(f"grids differ: {a.grid} vs {b.grid}")


@dataclass(frozen=True)
class GridFunction:
    """Real scalar potential on a torus grid."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise DimensionMismatch(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.isfinite(v).all():
            raise DimensionMismatch("grid function contains non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid, value=0.0):
        return cls(grid, np.full(grid.shape, float(value)))

    def shifted(self, c):
        return GridFunction(self.grid, self.values + c)


@dataclass(frozen=True)
class FormField:
    """Field of packed Hermitian matrices: a real (1,1)-form in coordinates.

    `packed` has shape grid + (n, n) with the diagonal stored as-is and,
    for j < k, slot (j, k) the real and (k, j) the imaginary part of the
    (j, k) coefficient.  The layout cannot represent a non-Hermitian
    matrix, so the Hermitian invariant holds by construction.
    """

    grid: TorusGrid
    packed: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.packed, dtype=np.float64)
        n = self.grid.n
        if p.shape != self.grid.shape + (n, n):
            raise DimensionMismatch(f"packed shape {p.shape} incompatible with grid")
        object.__setattr__(self, "packed", p)

    @classmethod
    def identity(cls, grid, scale=1.0):
        p = np.zeros(grid.shape + (grid.n, grid.n))
        for j in range(grid.n):
            p[..., j, j] = scale
        return cls(grid, p)

    @classmethod
    def from_matrices(cls, grid, matrices, rtol=1e-12):
        """Build from complex matrices; they must be Hermitian within rtol."""
        A = np.asarray(matrices, dtype=complex)
        if A.shape == (grid.n, grid.n):
            A = np.broadcast_to(A, grid.shape + (grid.n, grid.n))
        scale = max(1.0, float(np.abs(A).max()))
        dev = np.abs(A - np.conj(np.swapaxes(A, -1, -2))).max()
        if dev > rtol * scale:
            raise DimensionMismatch(f"matrices deviate from Hermitian by {dev:.3e}")
        return cls(grid, pack_hermitian(A))

    def to_matrices(self):
        return unpack_hermitian(self.packed)

    def __add__(self, other):
        _check_same_grid(self, other)
        return FormField(self.grid, self.packed + other.packed)

    def scaled(self, t):
        return FormField(self.grid, t * self.packed)

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.to_matrices()).min())


@dataclass(frozen=True)
class DensityField:
    """Scalar density measured against the reference volume."""

    grid: TorusGrid
    values: np.ndarray

    #: fields claiming to be measures may dip below zero at most this much
    TOL_NEG = 1e-9

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise DimensionMismatch(f"values shape {v.shape} != grid shape {self.grid.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid, value=1.0):
        return cls(grid, np.full(grid.shape, float(value)))

    @property
    def total_mass(self):
        return float(self.values.mean())

    def check_measure(self):
        lo = float(self.values.min())
        if lo < -self.TOL_NEG:
            raise DimensionMismatch(f"density claimed nonnegative dips to {lo:.3e}")
        return self


def ddc(phi):
    """Discrete complex Hessian (1,1)-form of a potential.

    Second-order central differences with periodic wrap; linear in phi
    and exactly zero on constants.
    """
    return FormField(phi.grid, _kernels.ddc(phi.values, phi.grid.h))


def hessian_form(omega, phi):
    """omega + ddc(phi) as a packed array (the solver's working object)."""
    _check_same_grid(omega, phi)
    return omega.packed + _kernels.ddc(phi.values, phi.grid.h)


def hessian_measure(omega, phi, k):
    """Normalized k-Hessian density of omega + ddc(phi) against the
    reference volume; its grid average is the total mass."""
    n = omega.grid.n
    if not 1 <= k <= n:
        raise DimensionMismatch(f"need 1 <= k <= n, got k={k}")
    sig = _kernels.sigma_all(hessian_form(omega, phi))
    return DensityField(omega.grid, sig[..., k] / math.comb(n, k))


@dataclass(frozen=True)
class GridConeCertificate:
    """Gamma_k membership over a whole grid."""

    member: bool
    worst_margin: float
    margins: np.ndarray  # shape grid + (k,), normalized sigma_j values


def cone_margins(packed, k):
    """Normalized sigma_j margins (j = 1..k) of a packed matrix field."""
    n = packed.shape[-1]
    sig = _kernels.sigma_all(packed)
    return np.stack([sig[..., j] / math.comb(n, j) for j in range(1, k + 1)], axis=-1)


def is_k_subharmonic(omega, phi, k):
    """Pointwise cone certificate for omega + ddc(phi).

    Global membership means every point's first k normalized sigma
    values are strictly positive; the worst margin over the grid is
    reported raw so callers choose their own tolerance.
    """
    margins = cone_margins(hessian_form(omega, phi), k)
    worst = float(margins.min())
    return GridConeCertificate(member=bool(worst > 0.0), worst_margin=worst, margins=margins)


def field_norms(field, p=2.0):
    """Grid norms: lp (against the normalized volume), sup, osc, mean."""
    if p < 1.0:
        raise InvalidExponent(f"need p >= 1, got p={p}")
    v = field.values
    return {
        "lp": float(np.mean(np.abs(v) ** p) ** (1.0 / p)),
        "sup": float(np.abs(v).max()),
        "osc": float(v.max() - v.min()),
        "mean": float(v.mean()),
    }


def pointwise_max(phi, psi):
    """Pointwise maximum of two potentials on the same grid."""
    _check_same_grid(phi, psi)
    return GridFunction(phi.grid, np.maximum(phi.values, psi.values))


def stencil_offsets(ndim):
    """All offsets the discrete Hessian at a point can read."""
    offs = [()]
    for a in range(ndim):
        offs += [((a, 1),), ((a, -1),)]
    for a in range(ndim):
        for b in range(a + 1, ndim):
            offs += [((a, sa), (b, sb)) for sa in (-1, 1) for sb in (-1, 1)]
    return offs


def stencil_interior_mask(mask):
    """Erode a boolean grid mask by the Hessian stencil: True where the
    whole stencil of the point lies inside the input mask."""
    out = mask.copy()
    for off in stencil_offsets(mask.ndim):
        shifted = mask
        for ax, s in off:
            shifted = np.roll(shifted, -s, axis=ax)
        out &= shifted
    return out


def random_smooth_function(grid, rng, modes=3, amplitude=1.0):
    """Random low-frequency trigonometric field, seeded via rng."""
    v = np.zeros(grid.shape)
    ndim = 2 * grid.n
    for _ in range(modes):
        freq = rng.integers(-2, 3, size=ndim)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        coeff = rng.uniform(-1.0, 1.0)
        arg = np.zeros(grid.shape)
        for a in range(ndim):
            arg = arg + 2.0 * np.pi * freq[a] * grid.axis_coordinate(a)
        v += coeff * np.sin(arg + phase)
    peak = np.abs(v).max()
    if peak > 0:
        v *= amplitude / peak
    return GridFunction(grid, v)


def max_cone_scale(omega, phi, k, hi=4.0, steps=60):
    """Largest t in [0, hi] with omega + ddc(t phi) grid-certified in
    Gamma_k (bisection; t = 0 always certifies when omega does)."""
    packed_ddc = _kernels.ddc(phi.values, phi.grid.h)

    def ok(t):
        return cone_margins(omega.packed + t * packed_ddc, k).min() > 0.0

    if ok(hi):
        return hi
    lo, up = 0.0, hi
    for _ in range(steps):
        mid = 0.5 * (lo + up)
        if ok(mid):
            lo = mid
        else:
            up = mid
    return lo


# ------------------------------------------------------------ serialization

def _field_kind(field):
    if isinstance(field, GridFunction):
        return "grid_function"
    if isinstance(field, FormField):
        return "form_field"
    if isinstance(field, DensityField):
        return "density_field"
    raise IoError(f"cannot serialize object of type {type(field).__name__}")


def save_field(field, path):
    """Write the flat binary layout plus a JSON sidecar.

    Header: magic, format version, field kind, n, N (little-endian u32);
    payload: row-major float64 values in the fixed axis order.  The
    round-trip is bit-exact.
    """
    kind = _field_kind(field)
    payload = field.packed if kind == "form_field" else field.values
    payload = np.ascontiguousarray(payload, dtype="<f8")
    header = _MAGIC + struct.pack("<IIII", _FORMAT_VERSION, _KIND_CODES[kind],
                                  field.grid.n, field.grid.N)
    path = str(path)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload.tobytes())
        sidecar = {
            "format": "hessianlab-field",
            "version": _FORMAT_VERSION,
            "kind": kind,
            "n": field.grid.n,
            "N": field.grid.N,
            "axis_order": [f"{c}{j}" for j in range(1, field.grid.n + 1) for c in ("x", "y")],
            "payload_dtype": "<f8",
            "payload_shape": list(payload.shape),
        }
        with open(path + ".json", "w") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write field to {path}: {exc}") from exc
    return path


def load_field(path):
    """Read a field written by save_field; returns the matching type."""
    path = str(path)
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise IoError(f"cannot read field from {path}: {exc}") from exc
    if raw[:4] != _MAGIC:
        raise IoError(f"{path}: bad magic {raw[:4]!r}")
    version, kind_code, n, N = struct.unpack("<IIII", raw[4:20])
    if version != _FORMAT_VERSION:
        raise IoError(f"{path}: unsupported format version {version}")
    kind = _KIND_NAMES.get(kind_code)
    if kind is None:
        raise IoError(f"{path}: unknown field kind {kind_code}")
    grid = TorusGrid(n=n, N=N)
    shape = grid.shape + ((n, n) if kind == "form_field" else ())
    values = np.frombuffer(raw[20:], dtype="<f8").reshape(shape).copy()
    if kind == "grid_function":
        return GridFunction(grid, values)
    if kind == "form_field":
        return FormField(grid, values)
    return DensityField(grid, values)
