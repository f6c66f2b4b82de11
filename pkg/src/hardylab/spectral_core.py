"""Periodic grids, sampled fields and exact Fourier-multiplier application.

The real line or plane is modelled by the torus [-L/2, L/2)^dim sampled on
N points per axis.  Every singular integral operator used in the package is a
Fourier multiplier and is applied exactly through the FFT.

Conventions
-----------
* Angular frequencies are ``xi_k = 2*pi*k/L`` for ``k = -N/2, ..., N/2-1``.
* Fourier coefficients are ``c = fftn(values) / N**dim`` so that
  ``f(x_j) = sum_k c_k exp(i xi_k . (x_j - x_0))``.
* The Hilbert space pairing is real: ``<f, g> = Re sum f conj(g) dV``.
"""

from __future__ import annotations

import functools
import logging
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

FIELD_MAGIC = b"HQF1"
_HEADER = struct.Struct("<4sIId")


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on [-L/2, L/2)^dim with N points per axis."""

    dim: int
    n: int
    period: float = 2.0 * np.pi

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {self.dim}")
        n = int(self.n)
        if n < 8 or n & (n - 1):
            raise ValueError(f"points per axis must be a power of two >= 8, got {self.n}")
        if not (np.isfinite(self.period) and self.period > 0):
            raise ValueError(f"period must be positive and finite, got {self.period}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "period", float(self.period))

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def dx(self) -> float:
        return self.period / self.n

    @property
    def cell(self) -> float:
        """Volume element dV = dx**dim."""
        return self.dx**self.dim

    def axis(self) -> np.ndarray:
        return -0.5 * self.period + self.dx * np.arange(self.n)

    def coords(self) -> tuple:
        ax = self.axis()
        return tuple(np.meshgrid(*([ax] * self.dim), indexing="ij"))

    def mode_numbers(self) -> tuple:
        """Integer mode numbers k per axis, FFT ordering, broadcast to the grid."""
        k = np.fft.fftfreq(self.n, d=1.0 / self.n)
        return tuple(np.meshgrid(*([k] * self.dim), indexing="ij"))

    def wavenumbers(self) -> tuple:
        scale = 2.0 * np.pi / self.period
        return tuple(scale * k for k in self.mode_numbers())


class Field:
    """Complex samples of a function on a periodic grid.

    Values are stored as a read-only complex array of shape ``grid.shape``
    (row-major).  Non-finite samples are rejected.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: GridSpec, values):
        arr = np.array(values, dtype=np.complex128)
        if arr.size != grid.size:
            raise ValueError(f"expected {grid.size} samples for {grid}, got {arr.size}")
        arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            bad = int(np.count_nonzero(~np.isfinite(arr)))
            raise ValueError(f"field contains {bad} non-finite samples")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Field is immutable")

    def __repr__(self):
        return f"Field({self.grid!r}, max|f|={np.max(np.abs(self.values)):.3g})"

    @classmethod
    def zeros(cls, grid: GridSpec) -> "Field":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def from_function(cls, grid: GridSpec, func: Callable) -> "Field":
        return cls(grid, func(*grid.coords()))

    @classmethod
    def from_coefficients(cls, grid: GridSpec, coeffs) -> "Field":
        c = np.asarray(coeffs, dtype=complex).reshape(grid.shape)
        return cls(grid, np.fft.ifftn(c) * grid.size)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag

    def coefficients(self) -> np.ndarray:
        return np.fft.fftn(self.values) / self.grid.size

    def mean(self) -> complex:
        return complex(self.values.mean())

    def conj(self) -> "Field":
        return Field(self.grid, np.conj(self.values))

    def real_part(self) -> "Field":
        return Field(self.grid, self.values.real)

    def is_real(self, tol: float = 1e-12) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.values))))
        return bool(np.max(np.abs(self.values.imag)) <= tol * scale)

    def inner(self, other: "Field") -> float:
        _check_same_grid(self, other)
        return real_inner(self.values, other.values, self.grid)

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def _coerce(self, other):
        if isinstance(other, Field):
            _check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return Field(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other):
        if isinstance(other, Field):
            raise TypeError("use dealiased_product for products of fields")
        return Field(self.grid, self.values * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / other)

    def __neg__(self):
        return Field(self.grid, -self.values)


def _check_same_grid(f: Field, g: Field):
    if f.grid != g.grid:
        raise ValueError(f"grid mismatch: {f.grid} vs {g.grid}")


def real_inner(a: np.ndarray, b: np.ndarray, grid: GridSpec) -> float:
    """Real pairing Re sum a conj(b) dV."""
    return float(np.vdot(b, a).real) * grid.cell


# --------------------------------------------------------------------------
# multipliers


@dataclass(frozen=True)
class MultiplierSymbol:
    """A Fourier multiplier m(xi).

    ``evaluator`` receives the tuple of wavenumber arrays and returns the
    symbol values.  When ``zero_at_origin`` is set the value at xi = 0 is
    forced to 0, which is the convention for all singular symbols.
    """

    name: str
    evaluator: Callable
    params: tuple = ()
    zero_at_origin: bool = True
    cacheable: bool = True

    def on(self, grid: GridSpec) -> np.ndarray:
        if self.cacheable:
            return _cached_symbol(self.name, self.params, grid, self)
        return _evaluate_symbol(self, grid)

    def __hash__(self):
        return hash((self.name, self.params))

    def __eq__(self, other):
        if not isinstance(other, MultiplierSymbol):
            return NotImplemented
        if self.cacheable and other.cacheable:
            return (self.name, self.params) == (other.name, other.params)
        return self is other


def _evaluate_symbol(m: MultiplierSymbol, grid: GridSpec) -> np.ndarray:
    xi = grid.wavenumbers()
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.asarray(m.evaluator(xi), dtype=complex)
    vals = np.broadcast_to(vals, grid.shape).copy()
    if m.zero_at_origin:
        vals[(0,) * grid.dim] = 0.0
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"symbol {m.name} is not finite on the frequency lattice")
    vals.setflags(write=False)
    return vals


@functools.lru_cache(maxsize=256)
def _cached_symbol(name, params, grid, m):
    return _evaluate_symbol(m, grid)


def _need_dim(xi, dim, name):
    if len(xi) != dim:
        raise ValueError(f"{name} symbol needs a {dim}-D grid")


def _abs_xi(xi):
    return np.sqrt(sum(x * x for x in xi))


def hilbert() -> MultiplierSymbol:
    """Hilbert transform, symbol -i sgn(xi)."""

    def ev(xi):
        _need_dim(xi, 1, "hilbert")
        return -1j * np.sign(xi[0])

    return MultiplierSymbol("hilbert", ev)


def riesz(j: int) -> MultiplierSymbol:
    """Riesz transform R_j (1-based), symbol -i xi_j/|xi|."""
    if j < 1:
        raise ValueError("Riesz index is 1-based")

    def ev(xi):
        if j > len(xi):
            raise ValueError(f"riesz({j}) needs at least {j} dimensions")
        return -1j * xi[j - 1] / _abs_xi(xi)

    return MultiplierSymbol("riesz", ev, (j,))


def riesz2(j: int, k: int) -> MultiplierSymbol:
    """Second-order Riesz transform R_j R_k, symbol -xi_j xi_k/|xi|^2."""

    def ev(xi):
        return -xi[j - 1] * xi[k - 1] / sum(x * x for x in xi)

    return MultiplierSymbol("riesz2", ev, (j, k))


def _zeta(xi):
    _need_dim(xi, 2, "beurling")
    return xi[0] + 1j * xi[1]


def beurling() -> MultiplierSymbol:
    """Beurling transform, symbol conj(zeta)/zeta with zeta = xi1 + i xi2."""

    def ev(xi):
        z = _zeta(xi)
        return np.conj(z) / z

    return MultiplierSymbol("beurling", ev)


def beurling_conjugate() -> MultiplierSymbol:
    """Inverse (and adjoint) of the Beurling transform, symbol zeta/conj(zeta)."""

    def ev(xi):
        z = _zeta(xi)
        return z / np.conj(z)

    return MultiplierSymbol("beurling_conjugate", ev)


def lambda_op() -> MultiplierSymbol:
    """(-Laplacian)^(1/2), symbol |xi|."""
    return MultiplierSymbol("lambda", _abs_xi)


def lambda_inv() -> MultiplierSymbol:
    """(-Laplacian)^(-1/2), symbol 1/|xi| and 0 at the origin."""
    return MultiplierSymbol("lambda_inv", lambda xi: 1.0 / _abs_xi(xi))


def partial(j: int) -> MultiplierSymbol:
    """Spectral derivative d/dx_j, symbol i xi_j."""
    return MultiplierSymbol("partial", lambda xi: 1j * xi[j - 1], (j,))


def d_zbar_symbol() -> MultiplierSymbol:
    """Wirtinger derivative (d_x + i d_y)/2, symbol i zeta/2."""
    return MultiplierSymbol("d_zbar", lambda xi: 0.5j * _zeta(xi))


def d_z_symbol() -> MultiplierSymbol:
    """Wirtinger derivative (d_x - i d_y)/2, symbol i conj(zeta)/2."""
    return MultiplierSymbol("d_z", lambda xi: 0.5j * np.conj(_zeta(xi)))


def gaussian(t: float) -> MultiplierSymbol:
    """Unit-mass Gaussian mollifier at scale t, symbol exp(-t^2 |xi|^2 / 2)."""
    t = float(t)
    return MultiplierSymbol(
        "gaussian", lambda xi: np.exp(-0.5 * t * t * sum(x * x for x in xi)), (t,), zero_at_origin=False
    )


def custom(name: str, evaluator: Callable, zero_at_origin: bool = True) -> MultiplierSymbol:
    return MultiplierSymbol(name, evaluator, zero_at_origin=zero_at_origin, cacheable=False)


_NAMED = {
    "hilbert": hilbert,
    "beurling": beurling,
    "beurling_conjugate": beurling_conjugate,
    "lambda": lambda_op,
    "lambda_inv": lambda_inv,
}


def symbol_from_string(spec: str) -> MultiplierSymbol:
    """Parse names such as ``hilbert``, ``riesz1``, ``riesz:2``, ``beurling``."""
    s = spec.strip().lower()
    if s in _NAMED:
        return _NAMED[s]()
    if s.startswith("riesz"):
        tail = s[5:].lstrip(":(").rstrip(")")
        if tail.isdigit():
            return riesz(int(tail))
    raise ValueError(f"unknown multiplier symbol {spec!r}")


def multiply(values: np.ndarray, sym: np.ndarray) -> np.ndarray:
    """Array-level multiplier application (no validation)."""
    return np.fft.ifftn(sym * np.fft.fftn(values))


def apply_multiplier(f: Field, m: MultiplierSymbol) -> Field:
    """Return the inverse transform of m(xi) * fhat(xi).

    Examples
    --------
    >>> g = GridSpec(1, 16)
    >>> f = Field.from_function(g, np.cos)
    >>> np.allclose(apply_multiplier(f, hilbert()).values, np.sin(g.axis()))
    True
    """
    if not np.all(np.isfinite(f.values)):
        raise ValueError("apply_multiplier: input field is not finite")
    return Field(f.grid, multiply(f.values, m.on(f.grid)))


def d_zbar(f: Field) -> Field:
    return apply_multiplier(f, d_zbar_symbol())


def d_z(f: Field) -> Field:
    return apply_multiplier(f, d_z_symbol())


def derivative(f: Field, j: int) -> Field:
    return apply_multiplier(f, partial(j))


def cauchy_transform(w: Field, tol: float = 1e-12) -> Field:
    """Invert the d_zbar derivative: uhat = what/(i zeta/2), uhat(0) = 0.

    The data must have zero mean since u is only defined modulo constants
    and d_zbar has no constant component in its range.
    """
    g = w.grid
    if g.dim != 2:
        raise ValueError("cauchy_transform requires a 2-D grid")
    scale = max(1.0, float(np.max(np.abs(w.values))))
    if abs(w.values.mean()) > tol * scale:
        raise ValueError(f"cauchy_transform: data has nonzero mean {w.values.mean():.3e}")
    sym = d_zbar_symbol().on(g)
    inv = np.zeros_like(sym)
    nz = sym != 0
    inv[nz] = 1.0 / sym[nz]
    return Field(g, multiply(w.values, inv))


# --------------------------------------------------------------------------
# dealiased products


def _pad_size(n: int) -> int:
    return 3 * n // 2


def _embed(coef: np.ndarray, m: int) -> np.ndarray:
    n = coef.shape[0]
    off = (m - n) // 2
    out = np.zeros((m,) * coef.ndim, dtype=complex)
    sl = tuple(slice(off, off + n) for _ in range(coef.ndim))
    out[sl] = np.fft.fftshift(coef)
    return np.fft.ifftshift(out)


def _truncate(coef: np.ndarray, n: int) -> np.ndarray:
    m = coef.shape[0]
    off = (m - n) // 2
    sl = tuple(slice(off, off + n) for _ in range(coef.ndim))
    return np.fft.ifftshift(np.fft.fftshift(coef)[sl])


def product_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Alias-free product of two grid arrays (3/2 zero padding).

    The result is the exact projection of the product trigonometric
    polynomial onto the grid's modes -N/2..N/2-1.
    """
    n = a.shape[0]
    d = a.ndim
    m = _pad_size(n)
    scale = (m / n) ** d
    ap = np.fft.ifftn(_embed(np.fft.fftn(a), m)) * scale
    bp = np.fft.ifftn(_embed(np.fft.fftn(b), m)) * scale
    pc = _truncate(np.fft.fftn(ap * bp), n)
    return np.fft.ifftn(pc) / scale


def dealiased_product(f: Field, g: Field) -> Field:
    """Pointwise product with 3/2-rule dealiasing."""
    _check_same_grid(f, g)
    return Field(f.grid, product_array(f.values, g.values))


# --------------------------------------------------------------------------
# helpers


def mode_support(f: Field, rtol: float = 1e-13) -> int:
    """Largest |k| (max over axes) carrying a non-negligible coefficient."""
    c = np.abs(f.coefficients())
    cmax = c.max()
    if cmax == 0:
        return 0
    active = c > rtol * cmax
    ks = np.abs(np.stack(f.grid.mode_numbers()))
    return int(ks[:, active].max())


def random_bandlimited(
    grid: GridSpec,
    rng: np.random.Generator,
    kmax: Optional[int] = None,
    real: bool = False,
    mean_zero: bool = True,
    decay: float = 0.0,
) -> Field:
    """Random trigonometric polynomial with modes |k_i| <= kmax.

    ``decay`` > 0 damps the amplitudes like (1 + |k|^2)^(-decay/2).
    Real output omits the Nyquist mode automatically since kmax < N/2.
    """
    if kmax is None:
        kmax = grid.n // 4
    if not 0 < kmax < grid.n // 2:
        raise ValueError("kmax must satisfy 0 < kmax < N/2")
    ks = grid.mode_numbers()
    mask = np.ones(grid.shape, dtype=bool)
    for k in ks:
        mask &= np.abs(k) <= kmax
    coef = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    if decay:
        coef = coef * (1.0 + sum(k * k for k in ks)) ** (-0.5 * decay)
    coef = np.where(mask, coef, 0.0)
    if mean_zero:
        coef[(0,) * grid.dim] = 0.0
    vals = np.fft.ifftn(coef) * grid.size / np.sqrt(max(mask.sum(), 1))
    if real:
        vals = vals.real
    return Field(grid, vals)


# --------------------------------------------------------------------------
# binary field format


def write_field(path, f: Field) -> None:
    """Write ``f`` in the HQF1 little-endian binary format."""
    g = f.grid
    data = np.ascontiguousarray(f.values.ravel(), dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, g.dim, g.n, g.period))
        fh.write(data.view("<f8").tobytes())


def read_field(path) -> Field:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size or raw[:4] != FIELD_MAGIC:
        raise ValueError(f"{path}: not an HQF1 field file")
    _, dim, n, period = _HEADER.unpack_from(raw)
    grid = GridSpec(int(dim), int(n), period)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != 2 * grid.size:
        raise ValueError(f"{path}: expected {2 * grid.size} floats, found {body.size}")
    return Field(grid, body.view("<c16").astype(np.complex128))
