"""Damped Newton solvers for the discrete k-Hessian equations.

Two right-hand-side modes on the periodic grid:

  exponential: density(omega + ddc phi) = exp(s (phi - u_ref)) * g
  constant:    density(omega + ddc phi) = c * f,  sup phi = 0, c solved for

Newton runs on the logarithmic residual (log of the normalized density
is concave along cone directions, which keeps damping mild), each step
solves the linearized system matrix-free with BiCGStab, preconditioned
by the constant-coefficient symbol inverted in Fourier space (exact on
a periodic grid; a plain Jacobi preconditioner is available as a
fallback choice).  The line search halves the step until every grid
point keeps at least 10% of its pre-step cone margin and the residual
norm decreases.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import (ConeExit, ConeViolation, DimensionMismatch, MaxIterExceeded,
                     NonPositiveDensity, StageFailed, ZeroMass)
from .torus import DensityField, FormField, GridFunction, cone_margins

OMEGA_MARGIN_FLOOR = 1e-6
DENSITY_FLOOR = 1e-8


@dataclass
class HessianProblem:
    """Problem bundle for one k-Hessian solve."""

    omega: FormField
    density: DensityField
    k: int
    mode: str = "constant"  # "exponential" | "constant"
    s: float = 1.0
    p: float = 2.0  # Lebesgue exponent used for reporting only

    def __post_init__(self):
        n = self.omega.grid.n
        if not 1 <= self.k <= n:
            raise DimensionMismatch(f"need 1 <= k <= n, got k={self.k}, n={n}")
        if self.mode not in ("exponential", "constant"):
            raise DimensionMismatch(f"unknown mode {self.mode!r}")
        if self.mode == "exponential" and self.s <= 0:
            raise DimensionMismatch("exponential mode needs s > 0")


@dataclass
class SolveReport:
    phi: GridFunction
    residual_sup: float
    newton_iters: int
    cone_margin_min: float
    osc: float
    c: float = None
    s: float = None
    trace: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


class _FourierPreconditioner:
    """Inverse of the mean-coefficient linearization, applied in Fourier space."""

    def __init__(self, grid, tensor_mean, s):
        shape = grid.shape
        ndim = 2 * grid.n
        h = grid.h
        N = grid.N
        qs, ss = [], []
        for a in range(ndim):
            m = np.arange(N if a < ndim - 1 else N // 2 + 1)
            theta = 2.0 * np.pi * m / N
            br = [1] * ndim
            br[a] = m.size
            qs.append(((2.0 - 2.0 * np.cos(theta)) / h ** 2).reshape(br))
            ss.append((np.sin(theta) / h).reshape(br))
        n = grid.n
        rshape = shape[:-1] + (N // 2 + 1,)
        sym = np.zeros(rshape)
        for j in range(n):
            sym += tensor_mean[j, j] * (-0.5) * (qs[2 * j] + qs[2 * j + 1])
        for j in range(n):
            for l in range(j + 1, n):
                re, im = tensor_mean[j, l], tensor_mean[l, j]
                sym += (-1.0) * (re * (ss[2 * j] * ss[2 * l] + ss[2 * j + 1] * ss[2 * l + 1])
                                 + im * (ss[2 * j] * ss[2 * l + 1] - ss[2 * j + 1] * ss[2 * l]))
        sym -= s
        if abs(sym.flat[0]) < 1e-300:
            sym.flat[0] = 1.0  # DC mode handled by the mean projection
        self._sym = sym
        self._shape = shape

    def apply(self, r):
        spec = sfft.rfftn(r.reshape(self._shape))
        spec /= self._sym
        return sfft.irfftn(spec, s=self._shape).reshape(-1)


class _JacobiPreconditioner:
    """Diagonal of the linearized operator (trace(T) times the stencil center)."""

    def __init__(self, grid, trace_over_sigma, s):
        diag = -(2.0 / grid.h ** 2) * trace_over_sigma - s
        self._inv = 1.0 / diag.reshape(-1)

    def apply(self, r):
        return self._inv * r


def _point_margins(sig, k):
    """Per-point worst normalized sigma_j margin, j = 1..k."""
    n = sig.shape[-1] - 1
    worst = sig[..., 1] / n
    for j in range(2, k + 1):
        worst = np.minimum(worst, sig[..., j] / math.comb(n, j))
    return worst


class _State:
    """One Newton iterate with everything derived from it."""

    def __init__(self, grid, omega_packed, phi, k):
        self.phi = phi
        self.A = omega_packed + _kernels.ddc(phi, grid.h)
        sig = _kernels.sigma_all(self.A)
        self.sigma_k = sig[..., k]
        self.sigma_km1 = sig[..., k - 1]
        self.margins = _point_margins(sig, k)
        self.density = self.sigma_k / math.comb(grid.n, k)

    def drop_matrix(self):
        self.A = None


def _check_omega(omega, k, margin_floor=OMEGA_MARGIN_FLOOR):
    worst = float(cone_margins(omega.packed, k).min())
    if worst < margin_floor:
        raise ConeViolation(f"omega cone margin {worst:.3e} below {margin_floor:g}")
    return worst


def _floor_density(values, floor):
    clipped = np.maximum(values, floor)
    return clipped, int(np.count_nonzero(values < floor))


def _krylov(matvec, rhs, precond, rtol, maxiter=400):
    npts = rhs.size
    op = spla.LinearOperator((npts, npts), matvec=matvec, dtype=np.float64)
    M = spla.LinearOperator((npts, npts), matvec=precond.apply, dtype=np.float64)
    x, info = spla.bicgstab(op, rhs, rtol=rtol, atol=0.0, M=M, maxiter=maxiter)
    return x, info


def _solve_log_newton(grid, omega_packed, k, log_rhs, s_diag, phi0, tol, max_iter,
                      precondition="fft", project_mean=False, rtol_linear=1e-2):
    """Newton on  log density(omega + ddc phi) - log_rhs = 0.

    log_rhs(phi, density) must return (log right-hand side, linear
    right-hand side) so both the working residual and the reported sup
    residual are exact; it receives the current density so constant-mode
    solves can absorb the mean without recomputing it.  s_diag is the
    phi-derivative of log_rhs (a constant).  With project_mean the
    iteration is restricted to mean-zero updates and the constant
    Fourier mode is excluded (constant-mode solves).
    """
    n = grid.n
    h = grid.h
    phi = phi0.copy()
    state = _State(grid, omega_packed, phi, k)
    if state.margins.min() <= 0.0:
        raise ConeExit(f"initial iterate leaves the cone "
                       f"(margin {state.margins.min():.3e})")
    trace = []
    total_lin = 0
    for it in range(max_iter):
        lr, rhs_linear = log_rhs(phi, state.density)
        R = np.log(state.density) - lr
        if project_mean:
            R -= R.mean()
        res_sup = float(np.abs(state.density - rhs_linear).max())
        rnorm = float(np.sqrt(np.mean(R * R)))
        trace.append({"iter": it, "residual_sup": res_sup, "log_norm": rnorm,
                      "margin_min": float(state.margins.min())})
        if res_sup <= tol:
            return phi, state, it, res_sup, trace, total_lin
        if state.sigma_km1.min() <= 0.0:
            raise ConeExit("linearization lost ellipticity (sigma_{k-1} <= 0)")

        tensor_mean = _kernels.mean_tensor_over_sigma(state.A, k)
        if precondition == "fft":
            pre = _FourierPreconditioner(grid, tensor_mean, s_diag)
        else:
            trace_ts = state.sigma_km1 * (n - k + 1) / state.sigma_k
            pre = _JacobiPreconditioner(grid, trace_ts, s_diag)

        A_cur, sig_cur = state.A, state.sigma_k

        def matvec(v):
            d = v.reshape(grid.shape)
            if project_mean:
                d = d - d.mean()
            out = _kernels.hess_directional(A_cur, d, h, k) / sig_cur - s_diag * d
            if project_mean:
                out = out - out.mean()
            return out.reshape(-1)

        def precond_apply(r):
            out = pre.apply(r)
            if project_mean:
                out = out - out.mean()
            return out

        pre_op = type("P", (), {"apply": staticmethod(precond_apply)})
        delta, info = _krylov(matvec, -R.reshape(-1), pre_op, rtol_linear)
        total_lin += 1
        delta = delta.reshape(grid.shape)
        if project_mean:
            delta = delta - delta.mean()

        # cone-preserving backtracking plus norm decrease
        state.drop_matrix()
        margins_before = state.margins
        t = 1.0
        accepted = None
        while t >= 2.0 ** -45:
            trial_phi = phi + t * delta
            trial = _State(grid, omega_packed, trial_phi, k)
            if np.all(trial.margins >= 0.1 * margins_before):
                lr_t, _ = log_rhs(trial_phi, trial.density)
                R_t = np.log(trial.density) - lr_t
                if project_mean:
                    R_t -= R_t.mean()
                rnorm_t = float(np.sqrt(np.mean(R_t * R_t)))
                if rnorm_t <= (1.0 - 1e-4 * t) * rnorm or rnorm_t < tol * 1e-3:
                    accepted = (trial_phi, trial)
                    break
            t *= 0.5
        if accepted is None:
            raise ConeExit(f"line search failed at iteration {it} "
                           f"(residual {res_sup:.3e})")
        phi, state = accepted
    raise MaxIterExceeded(f"no convergence in {max_iter} Newton iterations "
                          f"(residual {trace[-1]['residual_sup']:.3e})")


def solve_exponential(problem, tol=1e-8, max_iter=200, x0=None, u_ref=None,
                      precondition="fft"):
    """Solve density(omega + ddc phi) = exp(s (phi - u_ref)) g.

    The optional reference potential keeps the exponent bounded for
    large s (penalized envelope stages).  The solution is unique up to
    solver tolerance; re-solving from another start agrees to 10 tol.
    """
    if problem.mode != "exponential":
        raise DimensionMismatch("problem mode must be 'exponential'")
    grid = problem.omega.grid
    _check_omega(problem.omega, problem.k)
    g_raw = problem.density.values
    if g_raw.min() < DENSITY_FLOOR:
        raise NonPositiveDensity(f"exponential mode needs density >= {DENSITY_FLOOR:g}, "
                                 f"min is {g_raw.min():.3e}")
    log_g = np.log(g_raw)
    u = u_ref.values if u_ref is not None else 0.0
    s = problem.s

    def log_rhs(phi, density):
        lr = s * (phi - u) + log_g
        return lr, np.exp(lr)

    phi0 = x0.values.copy() if x0 is not None else np.zeros(grid.shape)
    t0 = time.perf_counter()
    phi, state, iters, res, trace, nlin = _solve_log_newton(
        grid, problem.omega.packed, problem.k, log_rhs, s, phi0, tol, max_iter,
        precondition=precondition)
    out = GridFunction(grid, phi)
    return SolveReport(phi=out, residual_sup=res, newton_iters=iters,
                       cone_margin_min=float(state.margins.min()),
                       osc=float(phi.max() - phi.min()), s=s, trace=trace,
                       diagnostics={"linear_solves": nlin,
                                    "wall_time_s": time.perf_counter() - t0})


def solve_with_constant(problem, tol=1e-8, max_iter=200, x0=None,
                        precondition="fft", floor=DENSITY_FLOOR):
    """Solve density(omega + ddc phi) = c f with sup phi = 0.

    The constant is carried as the mean of the log residual, so the
    Newton iteration runs in the mean-zero subspace; rough right-hand
    sides are warmed up through a short exponential continuation in s.
    Scaling f by t returns (c / t, same phi) up to tolerance.
    """
    if problem.mode != "constant":
        raise DimensionMismatch("problem mode must be 'constant'")
    grid = problem.omega.grid
    _check_omega(problem.omega, problem.k)
    f_raw = problem.density.values
    if f_raw.mean() <= 0.0:
        raise ZeroMass(f"density mean {f_raw.mean():.3e} <= 0")
    f, floored = _floor_density(f_raw, floor)
    log_f = np.log(f)
    t0 = time.perf_counter()

    def run(phi0):
        holder = {"ell": 0.0}

        def log_rhs(phi, density):
            holder["ell"] = float(np.mean(np.log(density) - log_f))
            lr = log_f + holder["ell"]
            return lr, np.exp(lr)

        phi, state, iters, res, trace, nlin = _solve_log_newton(
            grid, problem.omega.packed, problem.k, log_rhs, 0.0, phi0, tol,
            max_iter, precondition=precondition, project_mean=True)
        return phi, state, iters, res, trace, nlin, holder["ell"]

    phi0 = x0.values.copy() if x0 is not None else np.zeros(grid.shape)
    phi0 = phi0 - phi0.mean()
    stages = []
    rough = float(log_f.max() - log_f.min()) > 2.0 and x0 is None
    if rough:
        phi0, stages = _exponential_warmup(problem, f, tol, max_iter, precondition)
    try:
        phi, state, iters, res, trace, nlin, ell = run(phi0)
    except (ConeExit, MaxIterExceeded):
        if rough:
            raise
        phi0, stages = _exponential_warmup(problem, f, tol, max_iter, precondition)
        phi, state, iters, res, trace, nlin, ell = run(phi0)

    c = math.exp(ell)
    shift = phi.max()
    out = GridFunction(grid, phi - shift)
    return SolveReport(phi=out, residual_sup=res, newton_iters=iters,
                       cone_margin_min=float(state.margins.min()),
                       osc=float(phi.max() - phi.min()), c=c, trace=trace,
                       diagnostics={"linear_solves": nlin, "floored_points": floored,
                                    "floor": floor, "warmup_stages": stages,
                                    "wall_time_s": time.perf_counter() - t0})


def _exponential_warmup(problem, f, tol, max_iter, precondition):
    """March the exponential regularization s -> 0 to get a robust start."""
    grid = problem.omega.grid
    c = 1.0 / float(f.mean())
    phi = np.zeros(grid.shape)
    stages = []
    for s in (1.0, 0.3, 0.1, 0.03, 0.01):
        sub = HessianProblem(problem.omega, DensityField(grid, c * f),
                             problem.k, mode="exponential", s=s)
        rep = solve_exponential(sub, tol=max(tol, 1e-10), max_iter=max_iter,
                                x0=GridFunction(grid, phi),
                                precondition=precondition)
        phi = rep.phi.values
        m = float(phi.mean())
        c *= math.exp(s * m)
        phi = phi - m
        stages.append({"s": s, "c": c, "newton_iters": rep.newton_iters})
    return phi, stages


@dataclass
class ContinuationSchedule:
    j_max: int
    records: list
    warnings: list


def continuation_degenerate(omega0, problem, j_max, tol=1e-8, max_iter=200,
                            precondition="fft"):
    """Solve the constant-mode equation along omega_j = omega0 + 2^-j id.

    omega0 must be pointwise positive semi-definite; stages are warm
    started and each record carries (j, c_j, osc_j, residual).  On a
    stage failure the partial schedule is attached to the error.
    """
    grid = omega0.grid
    if omega0.min_eigenvalue() < -1e-10:
        raise ConeViolation(f"omega0 has eigenvalue {omega0.min_eigenvalue():.3e} < 0")
    warnings = []
    if problem.p <= grid.n / problem.k:
        warnings.append(f"p = {problem.p} <= n/k = {grid.n / problem.k}: "
                        "oscillation bound hypothesis not satisfied")
    records = []
    reports = []
    x0 = None
    for j in range(j_max + 1):
        omega_j = FormField(grid, omega0.packed + 2.0 ** -j * FormField.identity(grid).packed)
        stage = HessianProblem(omega_j, problem.density, problem.k,
                               mode="constant", p=problem.p)
        try:
            rep = solve_with_constant(stage, tol=tol, max_iter=max_iter, x0=x0,
                                      precondition=precondition)
        except Exception as exc:
            raise StageFailed(f"continuation stage {j} failed: {exc}", stage=j,
                              schedule=ContinuationSchedule(j_max, records, warnings)) from exc
        x0 = rep.phi
        records.append({"j": j, "c": rep.c, "osc": rep.osc,
                        "residual_sup": rep.residual_sup,
                        "newton_iters": rep.newton_iters})
        reports.append(rep)
    return ContinuationSchedule(j_max, records, warnings), reports


def residual(omega, phi, k, target):
    """Sup and mean-absolute deviation of the k-Hessian density from target."""
    from .torus import hessian_measure

    dens = hessian_measure(omega, phi, k).values
    dev = dens - target.values
    return {"sup": float(np.abs(dev).max()), "l1": float(np.abs(dev).mean())}


def linearization_fd_error(omega, phi, k, delta, eps=1e-5):
    """Relative gap between the analytic directional derivative of the
    density and a centered finite difference (first-order check)."""
    grid = omega.grid
    cnk = math.comb(grid.n, k)
    A = omega.packed + _kernels.ddc(phi.values, grid.h)
    analytic = _kernels.hess_directional(A, delta.values, grid.h, k) / cnk
    dp = _kernels.sigma_all(omega.packed + _kernels.ddc(phi.values + eps * delta.values,
                                                        grid.h))[..., k] / cnk
    dm = _kernels.sigma_all(omega.packed + _kernels.ddc(phi.values - eps * delta.values,
                                                        grid.h))[..., k] / cnk
    fd = (dp - dm) / (2.0 * eps)
    scale = max(float(np.abs(fd).max()), 1e-30)
    return float(np.abs(analytic - fd).max()) / scale
