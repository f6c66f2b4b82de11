"""Quadratic quantities Q, their Gateaux derivatives and the linear families T_b.

Every quantity is tied to a family b -> T_b through the pairing identity

    sum(b * Q(w)) dV == <T_b w, w>          (real pairing on H)

which holds exactly at grid level because all products are dealiased
projections onto the grid modes.

Kinds
-----
planar_jacobian   |S w|^2 - |w|^2 on complex fields (2-D)
line_q1           w^2 - (Hw)^2 on real fields (1-D)
line_q2           2 w Hw on real fields (1-D)
riesz_combination |w|^2 - |Rw|^2 on real fields
wu_bivector(j,k)  R_j a R_k c - R_k a R_j c, the pair (a, c) stored as a + i c
monge_ampere      R11 w R22 w - (R12 w)^2 on real fields (2-D)
paracommutator(A) generic form generated by a symbol A(xi, eta), real fields
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spectral_core import (
    Field,
    GridSpec,
    beurling,
    beurling_conjugate,
    hilbert,
    mode_support,
    multiply,
    product_array,
    riesz,
    riesz2,
)

# --------------------------------------------------------------------------
# paracommutator symbols


def _unit(v: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(r > 0, v / np.where(r > 0, r, 1.0), 0.0)
    return u


@dataclass(frozen=True)
class SymbolA:
    """Real paracommutator symbol A(xi, eta).

    ``evaluator(X, Y)`` takes wavenumber arrays of shape (..., dim) that
    broadcast against each other and returns the real values.  ``bound`` is
    the constant C_A with |A| <= C_A on every lattice.
    """

    tag: str
    evaluator: Callable
    bound: float

    def __call__(self, X, Y) -> np.ndarray:
        return np.asarray(self.evaluator(np.asarray(X, float), np.asarray(Y, float)), dtype=float)

    def tilde(self, X, Y) -> np.ndarray:
        """Quantity symbol A~ with A~(eta, -xi) = A(xi, eta), i.e. A~(x, y) = A(-y, x)."""
        return self(-np.asarray(Y, float), X)


def _wu(m: int):
    def ev(X, Y):
        c = np.sum(_unit(X) * _unit(Y), axis=-1)
        return 1.0 - c**m

    return ev


def _sgn_product(X, Y):
    return 1.0 - np.sign(X[..., 0]) * np.sign(Y[..., 0])


def _monge(X, Y):
    c = np.sum(_unit(X) * _unit(Y), axis=-1)
    nx = np.linalg.norm(X, axis=-1)
    ny = np.linalg.norm(Y, axis=-1)
    live = (nx > 0) & (ny > 0)
    return np.where(live, 0.5 * (1.0 - c * c), 0.0)


SYMBOLS = {
    "one": SymbolA("one", lambda X, Y: np.ones(np.broadcast_shapes(X.shape[:-1], Y.shape[:-1])), 1.0),
    "wu_m1": SymbolA("wu_m1", _wu(1), 2.0),
    "wu_m2": SymbolA("wu_m2", _wu(2), 1.0),
    "hilbert_q1": SymbolA("hilbert_q1", _sgn_product, 2.0),
    "monge_ampere": SymbolA("monge_ampere", _monge, 0.5),
}


def symbol_a(tag: str) -> SymbolA:
    try:
        return SYMBOLS[tag]
    except KeyError:
        raise ValueError(f"unknown paracommutator symbol {tag!r}; known: {sorted(SYMBOLS)}") from None


# --------------------------------------------------------------------------
# descriptors

_REAL_KINDS = {"line_q1", "line_q2", "riesz_combination", "monge_ampere", "paracommutator"}
_DIMS = {
    "planar_jacobian": 2,
    "line_q1": 1,
    "line_q2": 1,
    "wu_bivector": 2,
    "monge_ampere": 2,
}


@dataclass(frozen=True)
class QuantityDescriptor:
    """Names a quadratic quantity Q on a grid, e.g. ``planar_jacobian``.

    ``params`` holds (n,) for riesz_combination, (j, k) for wu_bivector and
    (tag,) for paracommutator.
    """

    kind: str
    grid: GridSpec
    params: tuple = ()

    def __post_init__(self):
        kind = self.kind
        if kind not in _DIMS and kind not in ("riesz_combination", "paracommutator"):
            raise ValueError(f"unknown quantity kind {kind!r}")
        need = _DIMS.get(kind)
        if need is not None and self.grid.dim != need:
            raise ValueError(f"{kind} needs a {need}-D grid, got dim {self.grid.dim}")
        if kind == "riesz_combination":
            n = self.params[0] if self.params else self.grid.dim
            if n != self.grid.dim:
                raise ValueError(f"riesz_combination({n}) does not match grid dim {self.grid.dim}")
            object.__setattr__(self, "params", (int(n),))
        if kind == "wu_bivector":
            j, k = self.params if self.params else (1, 2)
            if j == k or not (1 <= j <= 2 and 1 <= k <= 2):
                raise ValueError(f"wu_bivector needs distinct indices in 1..2, got {(j, k)}")
            object.__setattr__(self, "params", (int(j), int(k)))
        if kind == "paracommutator":
            tag = self.params[0] if self.params else "wu_m1"
            symbol_a(tag)
            object.__setattr__(self, "params", (tag,))

    @property
    def complex_h(self) -> bool:
        """True when H is a complex L2 space (realified dimension 2 N^dim)."""
        return self.kind not in _REAL_KINDS

    @property
    def realified_dim(self) -> int:
        return self.grid.size * (2 if self.complex_h else 1)

    def to_string(self) -> str:
        if self.kind == "wu_bivector":
            return f"wu_bivector:{self.params[0]},{self.params[1]}"
        if self.kind == "paracommutator":
            return f"paracommutator:{self.params[0]}"
        if self.kind == "riesz_combination":
            return f"riesz_combination:{self.params[0]}"
        return self.kind

    @classmethod
    def parse(cls, text: str, grid: GridSpec) -> "QuantityDescriptor":
        """Parse ``kind`` or ``kind:args`` (``wu_bivector:1,2``, ``paracommutator:wu_m1``)."""
        kind, _, arg = text.strip().partition(":")
        kind = kind.strip()
        params: tuple = ()
        if arg:
            if kind == "paracommutator":
                params = (arg.strip(),)
            else:
                try:
                    params = tuple(int(a) for a in arg.split(","))
                except ValueError:
                    raise ValueError(f"bad quantity parameters in {text!r}") from None
        return cls(kind, grid, params)


@functools.lru_cache(maxsize=64)
def _kernel(d: QuantityDescriptor) -> "_Kernel":
    return _KERNELS[d.kind](d)


# --------------------------------------------------------------------------
# array-level kernels

P = product_array


def nyquist_free_mask(grid: GridSpec) -> np.ndarray:
    keep = np.ones(grid.shape)
    for k in grid.mode_numbers():
        keep[np.abs(k) >= grid.n // 2] = 0.0
    return keep


def _rmul(a: np.ndarray, sym: np.ndarray) -> np.ndarray:
    """Real part of a multiplier applied to a real array."""
    return multiply(a, sym).real


class _Kernel:
    """Array kernels; subclasses implement the raw formulas.

    Inputs and outputs are projected onto the modes with |k_i| < N/2 on every
    axis.  On that subspace conjugation maps the mode set to itself, so the
    dealiased products, and hence the pairing identity, are exact for all data.
    """

    real_h = True
    self_adjoint = True

    def __init__(self, d: QuantityDescriptor):
        self.d = d
        self.grid = d.grid
        self.keep = nyquist_free_mask(d.grid)

    def proj(self, a: np.ndarray) -> np.ndarray:
        out = np.fft.ifftn(np.fft.fftn(a) * self.keep)
        return out if np.iscomplexobj(a) and not self.real_h else out.real

    def quantity(self, w):
        return self.proj(self._quantity(self.proj(w))).real

    def gateaux(self, w, g):
        return self.proj(self._gateaux(self.proj(w), self.proj(g))).real

    def tb(self, b, w):
        return self.proj(self._tb(self.proj(b).real, self.proj(w)))

    def tb_adjoint(self, b, w):
        return self.proj(self._tb_adjoint(self.proj(b).real, self.proj(w)))

    def _tb_adjoint(self, b, w):
        return self._tb(b, w)



class _Jacobian(_Kernel):
    real_h = False

    def __init__(self, d):
        super().__init__(d)
        self.S = beurling().on(self.grid)
        self.Sc = beurling_conjugate().on(self.grid)

    def _quantity(self, w):
        sw = multiply(w, self.S)
        return (P(sw, np.conj(sw)) - P(w, np.conj(w))).real

    def _gateaux(self, w, g):
        # symmetric in (w, g): the grid projection does not commute with conj at Nyquist
        sw, sg = multiply(w, self.S), multiply(g, self.S)
        cross = P(sw, np.conj(sg)) + P(sg, np.conj(sw)) - P(w, np.conj(g)) - P(g, np.conj(w))
        return cross.real

    def _tb(self, b, w):
        # S^*(b S w) - b w, equal to conj((S b - b S) conj(S w))
        return multiply(P(b, multiply(w, self.S)), self.Sc) - P(b, w)


class _LineQ1(_Kernel):
    def __init__(self, d):
        super().__init__(d)
        self.H = hilbert().on(self.grid)

    def _quantity(self, w):
        hw = _rmul(w, self.H)
        return P(w, w).real - P(hw, hw).real

    def _gateaux(self, w, g):
        return 2.0 * (P(w, g).real - P(_rmul(w, self.H), _rmul(g, self.H)).real)

    def _tb(self, b, w):
        # [H, b] H w = b w + H(b H w) on mean-zero data
        return P(b, w).real + _rmul(P(b, _rmul(w, self.H)).real, self.H)


class _LineQ2(_Kernel):
    def __init__(self, d):
        super().__init__(d)
        self.H = hilbert().on(self.grid)

    def _quantity(self, w):
        return 2.0 * P(w, _rmul(w, self.H)).real

    def _gateaux(self, w, g):
        return 2.0 * (P(g, _rmul(w, self.H)) + P(w, _rmul(g, self.H))).real

    def _tb(self, b, w):
        return P(b, _rmul(w, self.H)).real - _rmul(P(b, w).real, self.H)


class _Riesz(_Kernel):
    def __init__(self, d):
        super().__init__(d)
        self.R = [riesz(j).on(self.grid) for j in range(1, self.grid.dim + 1)]

    def _quantity(self, w):
        q = P(w, w).real
        for r in self.R:
            rw = _rmul(w, r)
            q = q - P(rw, rw).real
        return q

    def _gateaux(self, w, g):
        q = P(w, g).real
        for r in self.R:
            q = q - P(_rmul(w, r), _rmul(g, r)).real
        return 2.0 * q

    def _tb(self, b, w):
        # [R, b] . R w = b w + sum_j R_j(b R_j w) on mean-zero data
        out = P(b, w).real
        for r in self.R:
            out = out + _rmul(P(b, _rmul(w, r)).real, r)
        return out


class _WuBivector(_Kernel):
    real_h = False

    def __init__(self, d):
        super().__init__(d)
        j, k = d.params
        self.Rj = riesz(j).on(self.grid)
        self.Rk = riesz(k).on(self.grid)

    def _parts(self, w):
        a, c = w.real, w.imag
        return _rmul(a, self.Rj), _rmul(a, self.Rk), _rmul(c, self.Rj), _rmul(c, self.Rk)

    def _quantity(self, w):
        aj, ak, cj, ck = self._parts(w)
        return (P(aj, ck) - P(ak, cj)).real

    def _gateaux(self, w, g):
        aj, ak, cj, ck = self._parts(w)
        pj, pk, qj, qk = self._parts(g)
        return (P(pj, ck) + P(aj, qk) - P(pk, cj) - P(ak, qj)).real

    def _tb(self, b, w):
        aj, ak, cj, ck = self._parts(w)
        first = -_rmul(P(b, ck).real, self.Rj) + _rmul(P(b, cj).real, self.Rk)
        second = -_rmul(P(b, aj).real, self.Rk) + _rmul(P(b, ak).real, self.Rj)
        return 0.5 * (first + 1j * second)


class _MongeAmpere(_Kernel):
    def __init__(self, d):
        super().__init__(d)
        self.R11 = riesz2(1, 1).on(self.grid)
        self.R22 = riesz2(2, 2).on(self.grid)
        self.R12 = riesz2(1, 2).on(self.grid)

    def _quantity(self, w):
        a, c, e = _rmul(w, self.R11), _rmul(w, self.R22), _rmul(w, self.R12)
        return (P(a, c) - P(e, e)).real

    def _gateaux(self, w, g):
        a, c, e = _rmul(w, self.R11), _rmul(w, self.R22), _rmul(w, self.R12)
        a2, c2, e2 = _rmul(g, self.R11), _rmul(g, self.R22), _rmul(g, self.R12)
        return (P(a, c2) + P(a2, c) - 2.0 * P(e, e2)).real

    def _tb(self, b, w):
        a, c, e = _rmul(w, self.R11), _rmul(w, self.R22), _rmul(w, self.R12)
        out = 0.5 * (_rmul(P(b, c).real, self.R11) + _rmul(P(b, a).real, self.R22))
        return out - _rmul(P(b, e).real, self.R12)


class _Paracommutator(_Kernel):
    """H is the band |k_i| <= N/3, where the double sums cannot alias.

    Inputs and T_b outputs are projected onto the band, so handles built on
    this kernel act as P T_b P and accept any realified vector.
    """

    self_adjoint = False

    def __init__(self, d):
        super().__init__(d)
        self.A = symbol_a(d.params[0])
        band = np.ones(self.grid.shape)
        for k in self.grid.mode_numbers():
            band[np.abs(k) > self.grid.n // 3] = 0.0
        self.band = band

    def restrict(self, a):
        return np.fft.ifftn(np.fft.fftn(a) * self.band).real

    def quantity(self, w):
        return super().quantity(self.restrict(w))

    def gateaux(self, w, g):
        return super().gateaux(self.restrict(w), self.restrict(g))

    def tb(self, b, w):
        return self.restrict(super().tb(b, self.restrict(w)))

    def tb_adjoint(self, b, w):
        return self.restrict(super().tb_adjoint(b, self.restrict(w)))

    def _quantity(self, w):
        return paracommutator_form(self.A, self.grid, w, np.conj(w)).real

    def _gateaux(self, w, g):
        return (
            paracommutator_form(self.A, self.grid, w, np.conj(g))
            + paracommutator_form(self.A, self.grid, g, np.conj(w))
        ).real

    def _tb(self, b, w):
        return paracommutator_apply(self.A, self.grid, b, w).real

    def _tb_adjoint(self, b, w):
        swapped = SymbolA(self.A.tag + "*", lambda X, Y: self.A(Y, X), self.A.bound)
        return paracommutator_apply(swapped, self.grid, b, w).real


_KERNELS = {
    "planar_jacobian": _Jacobian,
    "line_q1": _LineQ1,
    "line_q2": _LineQ2,
    "riesz_combination": _Riesz,
    "wu_bivector": _WuBivector,
    "monge_ampere": _MongeAmpere,
    "paracommutator": _Paracommutator,
}


# --------------------------------------------------------------------------
# paracommutator double sums


def _active_modes(coef: np.ndarray, grid: GridSpec, rtol: float = 0.0):
    """Integer mode vectors and coefficients of the nonzero Fourier modes."""
    mag = np.abs(coef)
    thresh = rtol * mag.max() if mag.size else 0.0
    idx = np.nonzero(mag > thresh)
    ks = np.stack([k[idx] for k in grid.mode_numbers()], axis=-1).astype(int)
    return ks, coef[idx]


def _check_support(grid: GridSpec, *arrays):
    limit = grid.n // 3
    for a in arrays:
        k = mode_support(Field(grid, a))
        if k > limit:
            raise ValueError(
                f"paracommutator data has modes up to |k| = {k} > N/3 = {limit}; would alias"
            )


def _flat_index(ks: np.ndarray, n: int) -> np.ndarray:
    idx = np.mod(ks, n)
    flat = idx[..., 0]
    for a in range(1, ks.shape[-1]):
        flat = flat * n + idx[..., a]
    return flat


def _in_range(ks: np.ndarray, n: int) -> np.ndarray:
    return np.all((ks >= -(n // 2)) & (ks < n // 2), axis=-1)


def paracommutator_form(A: SymbolA, grid: GridSpec, w: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Q_A~(w, g)(x) = sum_{xi, eta} w_xi g_eta A~(xi, eta) e^{i(xi+eta)x}, projected to the grid."""
    _check_support(grid, w, g)
    n = grid.n
    scale = 2.0 * np.pi / grid.period
    kw, cw = _active_modes(np.fft.fftn(w) / grid.size, grid)
    kg, cg = _active_modes(np.fft.fftn(g) / grid.size, grid)
    out = np.zeros(grid.size, dtype=complex)
    if len(cw) == 0 or len(cg) == 0:
        return out.reshape(grid.shape)
    At = A.tilde(scale * kw[:, None, :], scale * kg[None, :, :])
    vals = cw[:, None] * cg[None, :] * At
    ksum = kw[:, None, :] + kg[None, :, :]
    keep = _in_range(ksum, n)
    np.add.at(out, _flat_index(ksum[keep], n), vals[keep])
    return np.fft.ifftn(out.reshape(grid.shape)) * grid.size


def paracommutator_apply(A: SymbolA, grid: GridSpec, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(T_b(A) w)^(xi) = sum_eta b^(xi - eta) A(xi, eta) w^(eta), without wrap-around."""
    _check_support(grid, w)
    n = grid.n
    scale = 2.0 * np.pi / grid.period
    bc = (np.fft.fftn(b) / grid.size).ravel()
    ke, ce = _active_modes(np.fft.fftn(w) / grid.size, grid)
    out = np.zeros(grid.size, dtype=complex)
    if len(ce) == 0:
        return out.reshape(grid.shape)
    kx = np.stack([k.ravel() for k in grid.mode_numbers()], axis=-1).astype(int)
    diff = kx[:, None, :] - ke[None, :, :]
    live = _in_range(diff, n)
    Avals = A(scale * kx[:, None, :], scale * ke[None, :, :])
    terms = np.where(live, bc[_flat_index(diff, n)] * Avals * ce[None, :], 0.0)
    out[:] = terms.sum(axis=1)
    return np.fft.ifftn(out.reshape(grid.shape)) * grid.size


# --------------------------------------------------------------------------
# public Field-level API


def _values(d: QuantityDescriptor, w: Field, name: str = "w") -> np.ndarray:
    if w.grid != d.grid:
        raise ValueError(f"{name} lives on {w.grid}, descriptor expects {d.grid}")
    if not d.complex_h and not w.is_real(1e-10):
        raise ValueError(f"{d.kind} acts on real fields; {name} has an imaginary part")
    return w.values.real if not d.complex_h else w.values


def eval_quantity(d: QuantityDescriptor, w: Field) -> Field:
    """Q(w) as a real-valued Field (dealiased)."""
    return Field(d.grid, _kernel(d).quantity(_values(d, w)))


def gateaux(d: QuantityDescriptor, w: Field, g: Field) -> Field:
    """Full Gateaux derivative Q'_w g, so that gateaux(d, w, w) = 2 Q(w)."""
    k = _kernel(d)
    return Field(d.grid, k.gateaux(_values(d, w), _values(d, g, "g")))


def polar_form(d: QuantityDescriptor, w: Field, g: Field) -> Field:
    """Symmetric bilinear form B(w, g) = Q'_w g / 2 with B(w, w) = Q(w).

    For line_q1 this is w g - Hw Hg, for line_q2 it is w Hg + g Hw.
    """
    return gateaux(d, w, g) / 2.0


line_q1_bilinear = polar_form


def pair_derivative(d: QuantityDescriptor, w: Field, g: Field, phi: Field, psi: Field) -> Field:
    """Derivative of (w, g) -> B(w, g) at (w, g) in direction (phi, psi)."""
    return polar_form(d, phi, g) + polar_form(d, w, psi)


def eval_paracommutator_quantity(A: SymbolA, w: Field, g: Field) -> Field:
    """Q_A~(w, g) by a dense double sum over active modes.

    Data must be band-limited to |k| <= N/3 per axis.  With A == 1 this is
    the dealiased product w g.
    """
    if w.grid != g.grid:
        raise ValueError("grid mismatch")
    return Field(w.grid, paracommutator_form(A, w.grid, w.values, g.values))


def real_pairing(b: Field, q: Field) -> float:
    """sum b q dV for real b, q."""
    return float(np.sum(b.values.real * q.values.real) * b.grid.cell)
