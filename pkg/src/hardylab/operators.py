"""Linear operators T_b on realified Hilbert spaces and their spectral data.

Complex fields are realified as ``[Re w, Im w]`` (dimension 2 N^dim); real
fields as ``Re w`` (dimension N^dim).  The pairing Re sum w conj(g) dV is a
constant multiple of the Euclidean one, so adjoints are plain transposes.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.sparse import linalg as sparse_linalg

from .quantities import QuantityDescriptor, _kernel
from .spectral_core import Field, GridSpec, multiply, product_array, riesz

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 5000
DEFAULT_SEED = 0x5EED
DENSE_CAPACITY = 4096

MATRIX_MAGIC = b"HQM1"
_MHEADER = struct.Struct("<4sII")


class OperatorHandle:
    """Real-linear operator on R^dim, optionally tied to fields on a grid.

    Parameters
    ----------
    dim : realified dimension
    matvec, rmatvec : callables on real vectors (rmatvec is the transpose)
    grid, complex_h : how vectors map to Fields (None for abstract operators)
    descriptor, symbol_field : the quantity and the b that generated T_b
    """

    def __init__(
        self,
        dim: int,
        matvec: Callable,
        rmatvec: Optional[Callable] = None,
        *,
        self_adjoint: bool = False,
        grid: Optional[GridSpec] = None,
        complex_h: bool = False,
        descriptor: Optional[QuantityDescriptor] = None,
        symbol_field: Optional[Field] = None,
        label: str = "",
    ):
        self.dim = int(dim)
        self._matvec = matvec
        if rmatvec is None and not self_adjoint:
            raise ValueError("a transpose is required for non-self-adjoint operators")
        self._rmatvec = matvec if rmatvec is None else rmatvec
        self.self_adjoint = self_adjoint
        self.grid = grid
        self.complex_h = complex_h
        self.descriptor = descriptor
        self.symbol_field = symbol_field
        self.label = label

    @property
    def realified_dim(self) -> int:
        return self.dim

    def __repr__(self):
        return f"OperatorHandle({self.label or 'anonymous'}, dim={self.dim})"

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._matvec(np.asarray(x, float)), float)

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._rmatvec(np.asarray(x, float)), float)

    # field conversions
    def to_vector(self, w: Field) -> np.ndarray:
        if self.grid is None:
            raise TypeError("operator is not attached to a grid")
        if w.grid != self.grid:
            raise ValueError(f"field grid {w.grid} does not match operator grid {self.grid}")
        return field_to_vector(w.values, self.complex_h)

    def to_field(self, x: np.ndarray) -> Field:
        if self.grid is None:
            raise TypeError("operator is not attached to a grid")
        return Field(self.grid, vector_to_array(x, self.grid, self.complex_h))

    def apply(self, w):
        """Apply to a Field (returns a Field) or to a realified vector."""
        if isinstance(w, Field):
            return self.to_field(self.matvec(self.to_vector(w)))
        return self.matvec(w)

    def apply_adjoint(self, w):
        if isinstance(w, Field):
            return self.to_field(self.rmatvec(self.to_vector(w)))
        return self.rmatvec(w)

    def scaled(self, c: float) -> "OperatorHandle":
        c = float(c)
        b = None if self.symbol_field is None else self.symbol_field * c
        return OperatorHandle(
            self.dim,
            lambda x: c * self.matvec(x),
            lambda x: c * self.rmatvec(x),
            self_adjoint=self.self_adjoint,
            grid=self.grid,
            complex_h=self.complex_h,
            descriptor=self.descriptor,
            symbol_field=b,
            label=f"{c:g}*{self.label}",
        )


def field_to_vector(values: np.ndarray, complex_h: bool) -> np.ndarray:
    if complex_h:
        return np.concatenate([values.real.ravel(), values.imag.ravel()])
    return np.ascontiguousarray(values.real.ravel(), dtype=float)


def vector_to_array(x: np.ndarray, grid: GridSpec, complex_h: bool) -> np.ndarray:
    x = np.asarray(x, float)
    if complex_h:
        m = grid.size
        return (x[:m] + 1j * x[m:]).reshape(grid.shape)
    return x.reshape(grid.shape).astype(complex)


# --------------------------------------------------------------------------
# constructors


def make_handle(d: QuantityDescriptor, b: Field) -> OperatorHandle:
    """T_b for the quantity ``d`` with symbol field ``b`` (real part used)."""
    if b.grid != d.grid:
        raise ValueError("symbol field and descriptor live on different grids")
    if not b.is_real(1e-10):
        raise ValueError("the symbol field b must be real-valued")
    k = _kernel(d)
    grid, cplx = d.grid, d.complex_h
    bv = b.values.real

    def mv(x):
        return field_to_vector(k.tb(bv, vector_to_array(x, grid, cplx)), cplx)

    def rmv(x):
        return field_to_vector(k.tb_adjoint(bv, vector_to_array(x, grid, cplx)), cplx)

    return OperatorHandle(
        d.realified_dim,
        mv,
        None if k.self_adjoint else rmv,
        self_adjoint=k.self_adjoint,
        grid=grid,
        complex_h=cplx,
        descriptor=d,
        symbol_field=Field(grid, bv),
        label=f"T_b[{d.to_string()}]",
    )


def real_jacobian_handle(b: Field) -> OperatorHandle:
    """T_b = R1 [b, R2] - R2 [b, R1] on real L2 of the plane (antisymmetric)."""
    grid = b.grid
    if grid.dim != 2:
        raise ValueError("real-notation Jacobian operator needs a 2-D grid")
    r1, r2 = riesz(1).on(grid), riesz(2).on(grid)
    bv = b.values.real

    def rr(a, s):
        return multiply(a, s).real

    def tb(x):
        f = x.reshape(grid.shape)
        # R1 b R2 f - R1 R2 (b f) - R2 b R1 f + R2 R1 (b f); the R1R2 terms cancel
        out = rr(product_array(bv, rr(f, r2)).real, r1) - rr(product_array(bv, rr(f, r1)).real, r2)
        return out.ravel()

    return OperatorHandle(
        grid.size,
        tb,
        lambda x: -tb(x),
        grid=grid,
        complex_h=False,
        symbol_field=Field(grid, bv),
        label="T_b[real_jacobian]",
    )


def matrix_handle(M, label: str = "matrix") -> OperatorHandle:
    M = np.asarray(M, float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix handle needs a square matrix")
    sym = bool(np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())))
    return OperatorHandle(M.shape[0], lambda x: M @ x, None if sym else (lambda x: M.T @ x), self_adjoint=sym, label=label)


def identity_handle(dim: int) -> OperatorHandle:
    return OperatorHandle(dim, lambda x: x.copy(), self_adjoint=True, label="identity")


def self_adjointify(h: OperatorHandle) -> OperatorHandle:
    """T~(f, g) = (T^* g, T f) on the doubled space H x H."""
    n = h.dim

    def mv(x):
        return np.concatenate([h.rmatvec(x[n:]), h.matvec(x[:n])])

    return OperatorHandle(
        2 * n,
        mv,
        self_adjoint=True,
        descriptor=h.descriptor,
        symbol_field=h.symbol_field,
        label=f"tilde({h.label})",
    )


def apply_tb(h: OperatorHandle, w):
    return h.apply(w)


def symmetrized(h: OperatorHandle) -> OperatorHandle:
    if h.self_adjoint:
        return h
    return OperatorHandle(
        h.dim,
        lambda x: 0.5 * (h.matvec(x) + h.rmatvec(x)),
        self_adjoint=True,
        grid=h.grid,
        complex_h=h.complex_h,
        descriptor=h.descriptor,
        symbol_field=h.symbol_field,
        label=f"sym({h.label})",
    )


# --------------------------------------------------------------------------
# spectral estimates


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    converged: bool
    iterations: int

    def __float__(self):
        return float(self.value)


def _start_vector(dim: int, seed: int) -> np.ndarray:
    x = np.random.default_rng(seed).standard_normal(dim)
    return x / np.linalg.norm(x)


def _power(apply: Callable, dim: int, tol: float, max_iter: int, seed: int) -> SpectralEstimate:
    """Top eigenvalue of a positive semidefinite map by power iteration."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = _start_vector(dim, seed)
    lam_prev = None
    for it in range(1, max_iter + 1):
        y = apply(x)
        lam = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return SpectralEstimate(0.0, True, it)
        if lam_prev is not None and abs(lam - lam_prev) <= tol * abs(lam):
            return SpectralEstimate(lam, True, it)
        lam_prev = lam
        x = y / ny
    logger.warning("power iteration did not converge in %d iterations", max_iter)
    return SpectralEstimate(lam, False, max_iter)


def top_eigenpair(
    h: OperatorHandle, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, seed: int = DEFAULT_SEED
):
    """Largest signed eigenvalue of (T + T^T)/2 and a unit eigenvector."""
    s = symmetrized(h)
    sigma = operator_norm(s, tol, max_iter, seed).value
    if sigma == 0.0:
        return 0.0, _start_vector(s.dim, seed)
    x = _start_vector(s.dim, seed + 1)
    lam_prev = None
    for _ in range(max_iter):
        y = s.matvec(x) + sigma * x
        lam = float(x @ y)
        x = y / np.linalg.norm(y)
        if lam_prev is not None and abs(lam - lam_prev) <= 0.1 * tol * abs(lam):
            break
        lam_prev = lam
    return lam - sigma, x


def operator_norm(
    h: OperatorHandle, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, seed: int = DEFAULT_SEED
) -> SpectralEstimate:
    """sqrt of the top eigenvalue of T^T T by power iteration."""
    est = _power(lambda x: h.rmatvec(h.matvec(x)), h.dim, tol, max_iter, seed)
    return SpectralEstimate(float(np.sqrt(max(est.value, 0.0))), est.converged, est.iterations)


def numerical_radius(
    h: OperatorHandle, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, seed: int = DEFAULT_SEED
) -> SpectralEstimate:
    """Top signed eigenvalue of (T + T^T)/2, i.e. sup over unit f of <T f, f>.

    The symmetrization is shifted by its norm so that power iteration picks
    out the largest signed eigenvalue.
    """
    s = symmetrized(h)
    shift = operator_norm(s, tol, max_iter, seed)
    if shift.value == 0.0:
        return SpectralEstimate(0.0, True, shift.iterations)
    sigma = shift.value
    est = _power(lambda x: s.matvec(x) + sigma * x, s.dim, tol * 0.1, max_iter, seed + 1)
    return SpectralEstimate(est.value - sigma, est.converged and shift.converged, shift.iterations + est.iterations)


def top_symmetric_eigenvalue(h: OperatorHandle, tol: float = 1e-10, seed: int = DEFAULT_SEED) -> SpectralEstimate:
    """Largest eigenvalue of (T + T^T)/2 by implicitly restarted Lanczos (ARPACK).

    Same quantity as :func:`numerical_radius`; used where a slow power
    iteration would leave the Rayleigh quotient short of the true value.
    """
    s = symmetrized(h)
    if s.dim <= 64:
        M = np.column_stack([s.matvec(e) for e in np.eye(s.dim)])
        return SpectralEstimate(float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1]), True, s.dim)
    op = sparse_linalg.LinearOperator((s.dim, s.dim), matvec=s.matvec, dtype=float)
    v0 = _start_vector(s.dim, seed)
    try:
        val = sparse_linalg.eigsh(op, k=1, which="LA", tol=tol, v0=v0, return_eigenvectors=False,
                                  ncv=min(s.dim - 1, 40), maxiter=DEFAULT_MAX_ITER)
        return SpectralEstimate(float(val[0]), True, 0)
    except sparse_linalg.ArpackNoConvergence as err:
        vals = err.eigenvalues
        return SpectralEstimate(float(vals[0]) if len(vals) else float("nan"), False, DEFAULT_MAX_ITER)


def dense_matrix(h: OperatorHandle, capacity: int = DENSE_CAPACITY) -> np.ndarray:
    """Assemble the realified matrix column by column."""
    if h.dim > capacity:
        raise MemoryError(
            f"dense assembly capped at realified dimension {capacity}; operator has {h.dim}"
        )
    eye = np.eye(h.dim)
    return np.column_stack([h.matvec(eye[:, i]) for i in range(h.dim)])


def fixed_space(h: OperatorHandle, eig_tol: float = 1e-6, capacity: int = DENSE_CAPACITY) -> list:
    """Orthonormal basis of ker(I - T) for a self-adjoint T (dense eigensolve).

    Returns Fields normalized in the H pairing when the operator is attached
    to a grid, otherwise unit vectors.
    """
    M = dense_matrix(h, capacity)
    scale = max(1.0, float(np.abs(M).max()))
    asym = float(np.abs(M - M.T).max())
    if asym > 1e-8 * scale:
        raise ValueError(f"fixed_space needs a self-adjoint operator (asymmetry {asym:.2e})")
    evals, evecs = np.linalg.eigh(0.5 * (M + M.T))
    sel = np.abs(evals - 1.0) <= eig_tol
    vecs = [evecs[:, i] for i in np.nonzero(sel)[0]]
    if h.grid is None:
        return vecs
    norm = 1.0 / np.sqrt(h.grid.cell)
    return [h.to_field(v * norm) for v in vecs]


# --------------------------------------------------------------------------
# HQM1 matrix format


def write_matrix(path, M) -> None:
    M = np.ascontiguousarray(M, dtype="<f8")
    if M.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    with open(path, "wb") as fh:
        fh.write(_MHEADER.pack(MATRIX_MAGIC, M.shape[0], M.shape[1]))
        fh.write(M.tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _MHEADER.size or raw[:4] != MATRIX_MAGIC:
        raise ValueError(f"{path}: not an HQM1 matrix file")
    _, rows, cols = _MHEADER.unpack_from(raw)
    body = np.frombuffer(raw, dtype="<f8", offset=_MHEADER.size)
    if body.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} entries, found {body.size}")
    return body.reshape(rows, cols).astype(float)
