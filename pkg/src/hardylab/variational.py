"""Minimum-norm solutions of Q(w) = f, Lagrange multipliers and X_Q / X_Q* norms.

The functions accept either a :class:`QuantityDescriptor` (grid quantities)
or a finite-dimensional model exposing ``as_problem()``.  Internally both are
wrapped in a small problem object working on plain arrays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from scipy import optimize

from . import operators as ops
from .quantities import QuantityDescriptor, _kernel
from .spectral_core import Field, random_bandlimited

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# problem adapters


class FieldProblem:
    """Array-level view of a grid quantity: w in H, b and Q(w) in X."""

    def __init__(self, d: QuantityDescriptor):
        self.d = d
        self.grid = d.grid
        self.kernel = _kernel(d)
        self.complex_h = d.complex_h
        self.cell = d.grid.cell

    # conversions
    def unwrap_w(self, w) -> np.ndarray:
        if isinstance(w, Field):
            if w.grid != self.grid:
                raise ValueError("field lives on a different grid")
            return w.values.copy() if self.complex_h else w.values.real.copy()
        arr = np.asarray(w)
        return arr.astype(complex) if self.complex_h else arr.real.astype(float)

    def unwrap_x(self, f) -> np.ndarray:
        if isinstance(f, Field):
            if f.grid != self.grid:
                raise ValueError("field lives on a different grid")
            if not f.is_real(1e-10):
                raise ValueError("data f must be real-valued")
            return f.values.real.copy()
        return np.asarray(f, float).real

    def wrap_w(self, w) -> Field:
        return Field(self.grid, w)

    def wrap_x(self, q) -> Field:
        return Field(self.grid, q)

    # algebra
    def quantity(self, w):
        return self.kernel.quantity(w)

    def tb(self, b, w):
        return self.kernel.tb(b, w)

    def tb_sym(self, b, w):
        if self.kernel.self_adjoint:
            return self.kernel.tb(b, w)
        return 0.5 * (self.kernel.tb(b, w) + self.kernel.tb_adjoint(b, w))

    def h_inner(self, a, b) -> float:
        return float(np.vdot(b, a).real) * self.cell

    def x_inner(self, b, q) -> float:
        return float(np.sum(b * q)) * self.cell

    def zeros_w(self):
        return np.zeros(self.grid.shape, dtype=complex if self.complex_h else float)

    def random_x(self, rng):
        return random_bandlimited(self.grid, rng, self.grid.n // 4, real=True).values.real

    def random_w(self, rng):
        w = random_bandlimited(self.grid, rng, self.grid.n // 4, real=not self.complex_h).values
        return w if self.complex_h else w.real

    def handle(self, b) -> ops.OperatorHandle:
        return ops.make_handle(self.d, Field(self.grid, b))

    def xq_norm(self, b, tol=ops.DEFAULT_TOL, max_iter=ops.DEFAULT_MAX_ITER) -> ops.SpectralEstimate:
        return ops.top_symmetric_eigenvalue(self.handle(b), tol=min(tol, 1e-10))

    def top_eigvec(self, b):
        h = self.handle(b)
        lam, v = ops.top_eigenpair(h, tol=1e-6, max_iter=2000)
        return lam, ops.vector_to_array(v, self.grid, self.complex_h) / np.sqrt(self.cell)

    def phase_fix(self, w):
        """Rotate (complex H) or flip sign (real H) so the dominant mode is positive real."""
        c = np.fft.fftn(w).ravel()
        mag = np.abs(c)
        if mag.max() == 0:
            return w
        i = int(np.argmax(mag >= mag.max() * (1 - 1e-9)))
        rot = np.conj(c[i]) / mag[i]
        if self.complex_h:
            return w * rot
        return w if (rot.real > 0 or (rot.real == 0 and rot.imag >= 0)) else -w


def as_problem(d):
    if isinstance(d, QuantityDescriptor):
        return FieldProblem(d)
    if hasattr(d, "as_problem"):
        return d.as_problem()
    raise TypeError(f"cannot build a variational problem from {type(d).__name__}")


# --------------------------------------------------------------------------
# minimum-norm solve


@dataclass
class SolveOptions:
    """Augmented-Lagrangian settings.

    ``tol`` is the target for the relative residual ||Q w - f|| / ||f||.
    """

    tol: float = 1e-6
    max_outer: int = 80
    max_inner: int = 400
    rho0: float = 10.0
    rho_max: float = 1e12
    init: str = "spectral"
    n_starts: int = 1
    seed: int = ops.DEFAULT_SEED


@dataclass
class MinNormResult:
    solution: Any
    energy: float
    residual: float
    multiplier: Any
    iterations: int
    converged: bool
    outer_iterations: int = 0
    rho: float = 0.0
    # one (outer, rho, residual, energy) record per outer iteration
    history: list = field(default_factory=list)

    def report(self) -> dict:
        return {
            "energy": float(self.energy),
            "residual": float(self.residual),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "outer_iterations": int(self.outer_iterations),
        }


def _inner_minimize(pb, w, lam, f, rho, gtol, max_inner):
    """L-BFGS on the augmented Lagrangian, over the realified coordinates of w."""
    shape = w.shape
    cplx = np.iscomplexobj(w)

    def unpack(x):
        if cplx:
            h = x.size // 2
            return (x[:h] + 1j * x[h:]).reshape(shape)
        return x.reshape(shape)

    def pack(v):
        v = np.asarray(v).ravel()
        return np.concatenate([v.real, v.imag]) if cplx else v.real.copy()

    def fun(x):
        v = unpack(x)
        r = pb.quantity(v) - f
        g = lam + rho * r
        val = pb.h_inner(v, v) + pb.x_inner(lam, r) + 0.5 * rho * pb.x_inner(r, r)
        grad = 2.0 * v + 2.0 * pb.tb_sym(g, v)
        # gradient w.r.t. the coordinates, so scale by the cell volume
        return val, pack(grad) * pb.cell

    sol = optimize.minimize(
        fun, pack(w), jac=True, method="L-BFGS-B",
        options={"maxiter": max_inner, "gtol": gtol * np.sqrt(pb.cell), "ftol": 1e-16, "maxcor": 20},
    )
    return unpack(sol.x), int(sol.nit)


def _initial_point(pb, f, opts, rng, start):
    if opts.init == "spectral" and start == 0:
        lam, v = pb.top_eigvec(f)
        qv = pb.quantity(v)
        fit = pb.x_inner(f, qv) / max(pb.x_inner(qv, qv), 1e-300)
        if fit > 0:
            return np.sqrt(fit) * v
    w = pb.random_w(rng)
    qw = pb.quantity(w)
    fit = abs(pb.x_inner(f, qw)) / max(pb.x_inner(qw, qw), 1e-300)
    return np.sqrt(max(fit, 1e-12)) * w


def _solve_once(pb, f, fnorm, w, opts):
    lam = np.zeros_like(f)
    rho = opts.rho0 / fnorm
    r = pb.quantity(w) - f
    res = np.sqrt(pb.x_inner(r, r)) / fnorm
    total = 0
    outer = 0
    hist = []
    for outer in range(1, opts.max_outer + 1):
        gtol = max(1e-3 * res, 0.1 * opts.tol) * np.sqrt(fnorm)
        w, its = _inner_minimize(pb, w, lam, f, rho, gtol, opts.max_inner)
        total += its
        r = pb.quantity(w) - f
        new_res = np.sqrt(pb.x_inner(r, r)) / fnorm
        hist.append((outer, rho, new_res, pb.h_inner(w, w)))
        lam = lam + rho * r
        if new_res <= opts.tol:
            res = new_res
            break
        if new_res > 0.25 * res:
            rho = min(5.0 * rho, opts.rho_max / fnorm)
        res = new_res
    return w, lam, res, total, outer, rho, hist


def min_norm_solve(d, f, opts: Optional[SolveOptions] = None) -> MinNormResult:
    """Approximately minimize ||w||^2 subject to Q(w) = f.

    Augmented Lagrangian: the inner problem
    ``||w||^2 + <lam, Qw - f> + rho/2 ||Qw - f||^2`` is minimized by gradient
    descent (gradient ``2w + 2 T_g w`` with ``g = lam + rho (Qw - f)``), then
    ``lam <- lam + rho (Qw - f)``; rho doubles when the residual drops by
    less than a factor 0.9.  The reported multiplier is ``b = -lam``, the
    sign for which ``T_b w = w`` at an optimum.  Energies are upper bounds
    for the minimal energy unless certified by a multiplier.
    """
    opts = opts or SolveOptions()
    pb = as_problem(d)
    fa = pb.unwrap_x(f)
    fnorm = np.sqrt(pb.x_inner(fa, fa))
    if fnorm == 0.0:
        z = pb.zeros_w()
        return MinNormResult(pb.wrap_w(z), 0.0, 0.0, pb.wrap_x(np.zeros_like(fa)), 0, True)
    rng = np.random.default_rng(opts.seed)
    best = None
    for start in range(max(1, opts.n_starts)):
        w0 = _initial_point(pb, fa, opts, rng, start)
        w, lam, res, its, outer, rho, hist = _solve_once(pb, fa, fnorm, w0, opts)
        energy = pb.h_inner(w, w)
        cand = (res > opts.tol, energy if res <= opts.tol else res, w, lam, res, its, outer, rho, hist)
        if best is None or cand[:2] < best[:2]:
            best = cand
    _, _, w, lam, res, its, outer, rho, hist = best
    w = pb.phase_fix(w)
    energy = pb.h_inner(w, w)
    converged = res <= opts.tol
    if not converged:
        logger.warning("min_norm_solve stopped at residual %.3e (tol %.1e)", res, opts.tol)
    return MinNormResult(pb.wrap_w(w), energy, res, pb.wrap_x(-lam), its, converged, outer, rho, hist)


# --------------------------------------------------------------------------
# multipliers and norms


def lagrange_residual(d, b, w) -> float:
    """||T_b w - w|| / ||w||; zero exactly when w lies in ker(I - T_b)."""
    pb = as_problem(d)
    wa = pb.unwrap_w(w)
    nw = np.sqrt(pb.h_inner(wa, wa))
    if nw == 0.0:
        raise ValueError("lagrange_residual is undefined for w = 0")
    diff = pb.tb(pb.unwrap_x(b), wa) - wa
    return float(np.sqrt(pb.h_inner(diff, diff)) / nw)


def xq_norm(d, b, tol: float = ops.DEFAULT_TOL, max_iter: int = ops.DEFAULT_MAX_ITER) -> ops.SpectralEstimate:
    """||b||_{X_Q} = sup over unit w of <b, Q w>, the top eigenvalue of sym(T_b)."""
    pb = as_problem(d)
    ba = pb.unwrap_x(b)
    if not np.any(ba):
        return ops.SpectralEstimate(0.0, True, 0)
    return pb.xq_norm(ba, tol, max_iter)


@dataclass
class Budget:
    """Work limits for :func:`xqstar_bounds`."""

    n_samples: int = 8
    tol: float = 1e-6
    max_terms: int = 50
    loose_tol: float = 1e-4
    seed: int = ops.DEFAULT_SEED
    solve: SolveOptions = field(default_factory=SolveOptions)


@dataclass
class XStarBounds:
    lower: float
    upper: float
    terms: int
    stagnated: bool
    best_b: Any = None

    def __iter__(self):
        return iter((self.lower, self.upper))


def xqstar_bounds(d, f, budget: Optional[Budget] = None) -> XStarBounds:
    """Two-sided estimate of ||f||_{X_Q*}.

    lower: max of <f, b>/||b||_{X_Q} over f itself, the solver's multiplier
    and ``n_samples`` random b (both signs).  upper: sum of ||w_j||^2 over a
    greedy decomposition f = sum Q(w_j) + r with ||r|| <= tol ||f||.
    """
    budget = budget or Budget()
    pb = as_problem(d)
    fa = pb.unwrap_x(f)
    fnorm = np.sqrt(pb.x_inner(fa, fa))
    if fnorm == 0.0:
        return XStarBounds(0.0, 0.0, 0, False)

    # greedy decomposition; the first term is the regular solve
    resid = fa.copy()
    upper = 0.0
    terms = 0
    stagnated = False
    first = None
    loose = SolveOptions(**{**budget.solve.__dict__, "tol": budget.loose_tol})
    while np.sqrt(pb.x_inner(resid, resid)) > budget.tol * fnorm:
        if terms >= budget.max_terms:
            stagnated = True
            break
        res = min_norm_solve(d, pb.wrap_x(resid), budget.solve if terms == 0 else loose)
        w = pb.unwrap_w(res.solution)
        if first is None:
            first = pb.unwrap_x(res.multiplier)
        new = resid - pb.quantity(w)
        if np.sqrt(pb.x_inner(new, new)) > 0.95 * np.sqrt(pb.x_inner(resid, resid)):
            stagnated = True
            break
        upper += res.energy
        resid = new
        terms += 1
    if stagnated:
        upper = float("inf")

    # dual lower bound
    rng = np.random.default_rng(budget.seed)
    cands = [fa]
    if first is not None and np.any(first):
        cands.append(first)
    cands += [pb.random_x(rng) for _ in range(budget.n_samples)]
    lower = 0.0
    best_b = None
    for b in cands:
        for sgn in (1.0, -1.0):
            nb = float(pb.xq_norm(sgn * b).value)
            if nb <= 0:
                continue
            ratio = pb.x_inner(fa, sgn * b) / nb
            if ratio > lower:
                lower, best_b = ratio, sgn * b / nb
    return XStarBounds(float(lower), float(upper), terms, stagnated, None if best_b is None else pb.wrap_x(best_b))
