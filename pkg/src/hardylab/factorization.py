"""Factorization of H1(R) data as f = omega*gamma - H(omega)H(gamma).

f is the boundary real part of an analytic U in the upper half-plane.
Writing U = B*Phi with B the Blaschke product of the zeros of U and Phi
zero-free, V = B*Phi^(1/2) and W = Phi^(1/2) are analytic with
Re(V W) = Re U, so omega = Re V and gamma = Re W on the real line.  When a
zero has odd order U has no analytic square root and f is not of the form
omega^2 - (H omega)^2.

Two input classes are handled: exact rational functions (zeros known) and
sampled boundary data on a 1-D grid (zeros located by winding numbers).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .spectral_core import Field, GridSpec, apply_multiplier, hilbert

logger = logging.getLogger(__name__)

MIN_BOX = 1e-6
MIN_MODULUS = 1e-8
MEAN_TOL = 1e-8


class FactorizationError(RuntimeError):
    """Zero finding or branch continuation could not be certified."""


# --------------------------------------------------------------------------
# rational functions


def _merge(points, upper: bool) -> Tuple[Tuple[complex, int], ...]:
    out = []
    for p in points:
        if isinstance(p, (tuple, list)) and len(p) == 2:
            z, m = complex(p[0]), int(p[1])
        elif isinstance(p, (tuple, list)) and len(p) == 3:
            z, m = complex(p[0], p[1]), int(p[2])
        else:
            z, m = complex(p), 1
        if m < 1:
            raise ValueError(f"multiplicity must be a positive integer, got {m}")
        if upper and not z.imag > 0:
            raise ValueError(f"zero {z} is not in the open upper half-plane")
        if not upper and not z.imag < 0:
            raise ValueError(f"pole {z} is not in the open lower half-plane")
        for i, (w, k) in enumerate(out):
            if abs(w - z) <= 1e-14 * max(1.0, abs(z)):
                out[i] = (w, k + m)
                break
        else:
            out.append((z, m))
    return tuple(out)


@dataclass(frozen=True)
class RationalHalfPlaneFunction:
    """U(z) = scale * prod (z - z_k)^m_k / prod (z - p_j)^n_j.

    Zeros lie in the open upper half-plane and poles in the open lower one,
    so U is analytic on a neighbourhood of the closed upper half-plane.
    """

    zeros: Tuple[Tuple[complex, int], ...] = ()
    poles: Tuple[Tuple[complex, int], ...] = ()
    scale: complex = 1.0

    def __post_init__(self):
        object.__setattr__(self, "zeros", _merge(self.zeros, True))
        object.__setattr__(self, "poles", _merge(self.poles, False))
        object.__setattr__(self, "scale", complex(self.scale))
        if self.scale == 0:
            raise ValueError("scale must be nonzero")
        if self.pole_degree < self.zero_degree + 1:
            raise ValueError(
                f"need pole degree >= zero degree + 1, got {self.pole_degree} vs {self.zero_degree}"
            )

    @property
    def zero_degree(self) -> int:
        return sum(m for _, m in self.zeros)

    @property
    def pole_degree(self) -> int:
        return sum(n for _, n in self.poles)

    @property
    def in_h1(self) -> bool:
        """Decay |z|^-2 or faster, so the boundary values are integrable."""
        return self.pole_degree >= self.zero_degree + 2

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.full(z.shape, self.scale, dtype=complex)
        for a, m in self.zeros:
            out = out * (z - a) ** m
        for p, n in self.poles:
            out = out / (z - p) ** n
        return out

    def log_outer(self, z):
        """A continuous branch of log(U/B) on the closed upper half-plane.

        U/B = scale * prod (z - conj z_k)^m_k / prod (z - p_j)^n_j has all its
        zeros and poles below the real axis; each factor z - a then has
        positive imaginary part and principal logs add up analytically.
        """
        z = np.asarray(z, dtype=complex)
        out = np.full(z.shape, np.log(self.scale), dtype=complex)
        for a, m in self.zeros:
            out = out + m * np.log(z - np.conj(a))
        for p, n in self.poles:
            out = out - n * np.log(z - p)
        return out

    def boundary(self, grid: GridSpec) -> Field:
        """Re U sampled on a 1-D grid."""
        if grid.dim != 1:
            raise ValueError("boundary data lives on a 1-D grid")
        return Field(grid, self(grid.axis()).real)

    def with_pair(self, a: complex) -> "RationalHalfPlaneFunction":
        """Multiply by ((z - a)/(z - conj a))^2; zero parities are unchanged."""
        a = complex(a)
        return RationalHalfPlaneFunction(
            self.zeros + ((a, 2),), self.poles + ((np.conj(a), 2),), self.scale
        )

    def to_json(self) -> dict:
        return {
            "zeros": [[z.real, z.imag, m] for z, m in self.zeros],
            "poles": [[p.real, p.imag, n] for p, n in self.poles],
            "scale": [self.scale.real, self.scale.imag],
        }

    @classmethod
    def from_json(cls, obj) -> "RationalHalfPlaneFunction":
        if isinstance(obj, str):
            obj = json.loads(obj)
        missing = {"zeros", "poles", "scale"} - set(obj)
        if missing:
            raise ValueError(f"rational function JSON lacks {sorted(missing)}")
        sc = obj["scale"]
        return cls(
            tuple((complex(r, i), int(m)) for r, i, m in obj["zeros"]),
            tuple((complex(r, i), int(n)) for r, i, n in obj["poles"]),
            complex(sc[0], sc[1]) if isinstance(sc, (list, tuple)) else complex(sc),
        )


def blaschke(zeros: Sequence[Tuple[complex, int]]) -> Callable:
    """B(z) = prod ((z - z_k)/(z - conj z_k))^m_k."""
    zeros = tuple((complex(z), int(m)) for z, m in zeros)

    def B(z):
        z = np.asarray(z, dtype=complex)
        out = np.ones(z.shape, dtype=complex)
        for a, m in zeros:
            out = out * ((z - a) / (z - np.conj(a))) ** m
        return out

    return B


# --------------------------------------------------------------------------
# Poisson extension of sampled data


def _check_h1_mean(f: Field):
    v = f.values.real
    scale = max(1.0, float(np.abs(v).sum() * f.grid.cell))
    if abs(v.sum()) * f.grid.cell > MEAN_TOL * scale:
        raise ValueError("H1 data must have zero mean")


def poisson_extend(f: Field, y: float) -> Tuple[Field, Field]:
    """(f * P_y, f * Q_y) on the grid, from the symbols e^{-y|xi|} and -i sgn(xi) e^{-y|xi|}."""
    if f.grid.dim != 1:
        raise ValueError("poisson_extend needs a 1-D grid")
    if not f.is_real(1e-10):
        raise ValueError("poisson_extend needs real data")
    if not y > 0:
        raise ValueError("height y must be positive")
    _check_h1_mean(f)
    (xi,) = f.grid.wavenumbers()
    damp = np.exp(-y * np.abs(xi))
    fh = np.fft.fft(f.values.real)
    p = np.fft.ifft(fh * damp).real
    q = np.fft.ifft(fh * (-1j * np.sign(xi)) * damp).real
    return Field(f.grid, p), Field(f.grid, q)


class SampledExtension:
    """U = f*P_y + i f*Q_y of grid data, evaluated at arbitrary points of the strip."""

    def __init__(self, f: Field):
        if f.grid.dim != 1:
            raise ValueError("sampled extension needs a 1-D grid")
        _check_h1_mean(f)
        g = f.grid
        self.grid = g
        (k,) = g.mode_numbers()
        (xi,) = g.wavenumbers()
        c = np.fft.fft(f.values.real) / g.n
        keep = k > 0
        self.xi = xi[keep]
        self.coef = 2.0 * c[keep]
        self.x0 = -g.period / 2

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        flat = z.ravel()
        out = np.empty(flat.shape, dtype=complex)
        for s in range(0, flat.size, 512):
            zz = flat[s : s + 512]
            out[s : s + 512] = np.exp(1j * np.outer(zz - self.x0, self.xi)) @ self.coef
        return out.reshape(z.shape)

    def top_height(self) -> float:
        """A height above which the lowest active mode dominates, so there are no zeros."""
        mag = np.abs(self.coef)
        if not np.any(mag > 0):
            return 1.0
        i0 = int(np.argmax(mag > mag.max() * 1e-14))
        rest = np.arange(i0 + 1, mag.size)
        y = 1.0
        for _ in range(200):
            lead = mag[i0] * np.exp(-self.xi[i0] * y)
            tail = np.sum(mag[rest] * np.exp(-self.xi[rest] * y))
            if tail < 0.25 * lead:
                return y
            y *= 1.5
        raise FactorizationError("could not find a zero-free height for the extension")


# --------------------------------------------------------------------------
# winding numbers and zero finding


def _unwrapped_phase(fun, a: complex, b: complex, n0: int = 32, min_mod: float = MIN_MODULUS):
    """Total change of arg fun along the segment [a, b], halving steps larger than pi/2."""
    t = np.linspace(0.0, 1.0, n0 + 1)
    vals = fun(a + (b - a) * t)
    for _ in range(40):
        if not np.all(np.isfinite(vals)) or np.min(np.abs(vals)) < min_mod:
            raise FactorizationError(f"|U| < {min_mod:g} on the box boundary near {a}..{b}")
        jump = np.abs(np.angle(vals[1:] / vals[:-1]))
        # a small chord relative to |U| rules out a hidden full turn between samples
        chord = np.abs(vals[1:] - vals[:-1]) / np.minimum(np.abs(vals[1:]), np.abs(vals[:-1]))
        bad = np.nonzero((jump > np.pi / 2) | (chord > 0.5))[0]
        if bad.size == 0:
            return float(np.sum(np.angle(vals[1:] / vals[:-1])))
        mids = 0.5 * (t[bad] + t[bad + 1])
        t = np.insert(t, bad + 1, mids)
        vals = np.insert(vals, bad + 1, fun(a + (b - a) * mids))
    raise FactorizationError("phase refinement did not settle on the box boundary")


def winding_number(fun, x0, x1, y0, y1, min_mod: float = MIN_MODULUS) -> int:
    """Zeros minus poles of fun inside the rectangle, by the argument principle."""
    c = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]
    total = sum(_unwrapped_phase(fun, c[i], c[(i + 1) % 4], min_mod=min_mod) for i in range(4))
    w = total / (2 * np.pi)
    k = int(round(w))
    if abs(w - k) > 0.05:
        raise FactorizationError(f"winding number {w:.3f} is not close to an integer")
    return k


# split fractions tried in turn when a zero sits on a subdivision line
_SPLITS = (0.5 + 0.0123, 0.5 - 0.0371, 0.5 + 0.0617, 0.5 - 0.0893)


def _subdivide(fun, box, count, min_box, min_mod, out):
    x0, x1, y0, y1 = box
    if max(x1 - x0, y1 - y0) <= min_box:
        out.append((complex(0.5 * (x0 + x1), 0.5 * (y0 + y1)), count))
        return
    for frac in _SPLITS:
        xm = x0 + frac * (x1 - x0)
        ym = y0 + frac * (y1 - y0)
        quads = [(x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1)]
        try:
            counts = [winding_number(fun, *q, min_mod=min_mod) for q in quads]

        except FactorizationError:
            continue
        if sum(counts) != count:
            continue
        for q, c in zip(quads, counts):
            if c:
                _subdivide(fun, q, c, min_box, min_mod, out)
        return
    raise FactorizationError(f"could not subdivide box {box} around a zero")


def find_zeros(U, box=None, min_box: float = MIN_BOX, min_mod: float = MIN_MODULUS,
               method: str = "auto") -> List[Tuple[complex, int]]:
    """Zeros of U in the upper half-plane as (point, multiplicity).

    Rational input returns its stored zeros unless ``method="winding"``.
    Sampled input (a Field of real boundary data, or any callable analytic in
    the box) is searched by winding numbers on recursively subdivided
    rectangles, down to side ``min_box``.  ``box`` is (x0, x1, y0, y1).
    """
    if isinstance(U, RationalHalfPlaneFunction) and method != "winding":
        return [(z, m) for z, m in U.zeros]
    if isinstance(U, Field):
        ext = SampledExtension(U)
        if box is None:
            L = U.grid.period
            box = (-L / 2, L / 2, U.grid.period / (4 * U.grid.n), ext.top_height())
        fun = ext
    else:
        fun = U
        if box is None:
            if isinstance(U, RationalHalfPlaneFunction):
                r = 2.0 * (1.0 + max([abs(z) for z, _ in U.zeros] + [abs(p) for p, _ in U.poles]))
                box = (-r, r, 1e-3, r)
            else:
                raise ValueError("a search box is required for callable input")
    x0, x1, y0, y1 = box
    if not (x1 > x0 and y1 > y0 and y0 > 0):
        raise ValueError("box must be a nondegenerate rectangle in the upper half-plane")
    total = winding_number(fun, x0, x1, y0, y1, min_mod)
    if total < 0:
        raise FactorizationError("negative winding number: poles inside the search box")
    out: List[Tuple[complex, int]] = []
    if total:
        # inner boxes shrink onto the zeros, so only exact hits are refused there
        _subdivide(fun, box, total, min_box, 1e-300, out)
    return out


def square_certificate(U, **kw):
    """(is_square, report): U has an analytic square root iff every zero has even order."""
    zeros = find_zeros(U, **kw)
    report = [(z, m, "even" if m % 2 == 0 else "odd") for z, m in zeros]
    return all(m % 2 == 0 for _, m in zeros), report


# --------------------------------------------------------------------------
# factorization


@dataclass
class FactorizationResult:
    omega: Field
    gamma: Field
    zero_report: list
    blaschke_degree: int
    residual_l1: float
    is_square: bool
    # boundary traces Im V = H omega and Im W = H gamma
    omega_conj: Optional[Field] = None
    gamma_conj: Optional[Field] = None
    V: Optional[Callable] = field(default=None, repr=False)
    W: Optional[Callable] = field(default=None, repr=False)

    def report(self) -> dict:
        return {
            "zeros": [[complex(z).real, complex(z).imag, int(m)] for z, m in self.zero_report],
            "blaschke_degree": self.blaschke_degree,
            "residual_l1": self.residual_l1,
            "is_square": self.is_square,
        }


def _residual_l1(f, omega, gamma, homega, hgamma) -> float:
    fl1 = np.abs(f).sum()
    r = f - (omega * gamma - homega * hgamma)
    return float(np.abs(r).sum() / fl1) if fl1 > 0 else float(np.abs(r).sum())


def _factor_rational(U: RationalHalfPlaneFunction, grid: GridSpec) -> FactorizationResult:
    # poles sit strictly below the axis, so the traces are taken at y = 0
    x = grid.axis().astype(complex)
    B = blaschke(U.zeros)

    def W(z):
        return np.exp(0.5 * U.log_outer(z))

    def V(z):
        return B(z) * W(z)

    v, w = V(x), W(x)
    f = U(x).real
    res = _residual_l1(f, v.real, w.real, v.imag, w.imag)
    zeros = list(U.zeros)
    return FactorizationResult(
        Field(grid, v.real), Field(grid, w.real), zeros, U.zero_degree, res,
        all(m % 2 == 0 for _, m in zeros), Field(grid, v.imag), Field(grid, w.imag), V, W,
    )


def _leg_phases(fun, h: float, seq: np.ndarray, min_mod: float) -> np.ndarray:
    """Cumulative arg change along the horizontal polyline through seq + i h."""
    vals = fun(seq + 1j * h)
    steps = np.angle(vals[1:] / vals[:-1])
    for i in np.nonzero(np.abs(steps) > np.pi / 2)[0]:
        steps[i] = _unwrapped_phase(fun, complex(seq[i], h), complex(seq[i + 1], h), min_mod=min_mod)
    return np.concatenate([[0.0], np.cumsum(steps)]), vals


def continue_log(fun, z_ref: complex, targets, min_mod: float = 1e-300) -> np.ndarray:
    """Log of fun at each target, continued from the principal value at z_ref.

    The path runs vertically from z_ref to the target height, then
    horizontally; steps whose phase jump exceeds pi/2 are halved.
    """
    targets = np.asarray(targets, dtype=complex)
    out = np.empty(targets.shape, dtype=complex)
    base = np.log(complex(fun(np.array([z_ref]))[0]))
    x_ref = z_ref.real
    for h in np.unique(targets.imag):
        idx = np.nonzero(targets.imag == h)[0]
        arg_h = base.imag + _unwrapped_phase(fun, z_ref, complex(x_ref, h), min_mod=min_mod)
        xs = targets.real[idx]
        for sel in (xs >= x_ref, xs < x_ref):
            if not np.any(sel):
                continue
            order = np.argsort(xs[sel])
            if xs[sel][order[0]] < x_ref:
                order = order[::-1]
            seq = np.concatenate([[x_ref], xs[sel][order]])
            ph, vals = _leg_phases(fun, h, seq, min_mod)
            lg = np.log(np.abs(vals[1:])) + 1j * (arg_h + ph[1:])
            out[idx[np.nonzero(sel)[0][order]]] = lg
    return out


def _extrapolation_weights(levels: int) -> np.ndarray:
    """Weights of polynomial extrapolation to y = 0 from heights j*eps, j = 1..levels."""
    j = np.arange(1, levels + 1, dtype=float)
    return np.array([np.prod([m / (m - i) for m in j if m != i]) for i in j])


def _factor_sampled(f: Field, tol: float, levels: int = 2) -> FactorizationResult:
    g = f.grid
    ext = SampledExtension(f)
    eps = g.period / (4 * g.n)
    p_eps, _ = poisson_extend(f, eps)
    fl1 = np.abs(f.values.real).sum()
    if np.abs(p_eps.values.real - f.values.real).sum() > max(tol, 1e-3) * fl1 * 1e3:
        raise ValueError("sampled data is not resolved: Poisson extension at y = L/(4N) moves it")
    top = ext.top_height()
    zeros = find_zeros(ext, box=(-g.period / 2, g.period / 2, eps, top))
    B = blaschke(zeros)

    def phi(z):
        return ext(z) / B(z)

    z_ref = complex(0.0, top * 1.5)
    if winding_number(phi, -g.period / 2, g.period / 2, eps, top) != 0:
        raise FactorizationError(f"zeros missed: U/B still winds; found {zeros}")
    x = g.axis()
    pts = np.concatenate([x + 1j * j * eps for j in range(1, levels + 1)])
    lg = continue_log(phi, z_ref, pts)
    w_all = np.exp(0.5 * lg).reshape(levels, g.n)
    v_all = B(pts).reshape(levels, g.n) * w_all
    # Richardson extrapolation from heights eps, 2 eps, ...
    c = _extrapolation_weights(levels)
    w0 = c @ w_all
    v0 = c @ v_all
    res = _residual_l1(f.values.real, v0.real, w0.real, v0.imag, w0.imag)
    return FactorizationResult(
        Field(g, v0.real), Field(g, w0.real), zeros, sum(m for _, m in zeros), res,
        all(m % 2 == 0 for _, m in zeros), Field(g, v0.imag), Field(g, w0.imag),
    )


def factorize(f: Union[Field, RationalHalfPlaneFunction], tol: float = 1e-6,
              grid: Optional[GridSpec] = None, levels: int = 2) -> FactorizationResult:
    """Return omega, gamma with f = omega*gamma - H(omega)H(gamma) on the grid.

    Rational input needs ``grid`` for the boundary samples.  The residual is
    measured with the analytic traces Im V, Im W in place of H omega, H gamma.
    Sampled input is traced at heights j*eps, eps = L/(4N), j = 1..levels,
    and extrapolated to the axis; the residual then carries an
    O((xi_max eps)^levels) extrapolation error.
    """
    if isinstance(f, RationalHalfPlaneFunction):
        if grid is None:
            raise ValueError("rational input needs a grid for the boundary traces")
        if grid.dim != 1:
            raise ValueError("factorization lives on a 1-D grid")
        out = _factor_rational(f, grid)
    elif isinstance(f, Field):
        if not f.is_real(1e-10):
            raise ValueError("f must be real")
        if not np.any(f.values):
            z = Field.zeros(f.grid)
            return FactorizationResult(z, z, [], 0, 0.0, True, z, z)
        out = _factor_sampled(f, tol, levels)
    else:
        raise TypeError(f"cannot factorize {type(f).__name__}")
    if out.residual_l1 > tol:
        logger.warning("factorization residual %.3e exceeds tol %.1e", out.residual_l1, tol)
    return out


# --------------------------------------------------------------------------
# diagnostics


def square_attempt(U: RationalHalfPlaneFunction, grid: GridSpec) -> Tuple[Field, float]:
    """Try f = omega^2 - (H omega)^2 with omega = Re sqrt(U) continued along the line.

    H is the grid Hilbert transform.  Returns omega and the relative L1
    mismatch; the mismatch stays large when U has a zero of odd order.
    """
    x = grid.axis()
    u = U(x.astype(complex))
    s = np.sqrt(np.abs(u)) * np.exp(0.5j * np.unwrap(np.angle(u)))
    om = Field(grid, s.real)
    hom = apply_multiplier(om, hilbert()).values.real
    f = u.real
    err = np.abs(f - (s.real**2 - hom**2)).sum() / np.abs(f).sum()
    return om, float(err)


def hilbert_defect(V: Callable, x: np.ndarray, n_circle: int = 4096, max_circle: int = 2**18) -> float:
    """||Im V - H(Re V)||_2 / ||V||_2 on the sample points x, for V analytic in C+ with V(inf) = 0.

    The conjugate function is computed on the unit circle after the Cayley
    map z = i(1 + s)/(1 - s); there it is an exact FFT multiplier, so the
    check does not see the truncation error of a periodic line grid.  The
    circle resolution doubles until the Fourier tail is negligible.
    """
    n = n_circle
    while True:
        theta = 2 * np.pi * np.arange(n) / n
        s = np.exp(1j * theta[1:])
        z = 1j * (1 + s) / (1 - s)
        u = np.concatenate([[0.0], V(z).real])
        c = np.fft.fft(u) / n
        k = np.fft.fftfreq(n, 1.0 / n)
        tail = np.abs(c[np.abs(k) > n // 4]).max()
        if tail <= 1e-15 * np.abs(c).max() or n >= max_circle:
            break
        n *= 2
    keep = np.abs(c) > 1e-17 * np.abs(c).max()
    ct = (-1j * np.sign(k) * c)[keep]
    # angle of each real sample: x = -cot(theta/2)
    th = 2 * np.arctan2(1.0, -np.asarray(x, float))
    kk = k[keep]
    step = max(1, 2**22 // max(kk.size, 1))
    conj_vals = np.concatenate(
        [(np.exp(1j * np.outer(th[i:i + step], kk)) @ ct).real for i in range(0, th.size, step)]
    )
    hv = conj_vals - ct.sum().real
    vx = V(np.asarray(x, complex))
    return float(np.linalg.norm(vx.imag - hv) / np.linalg.norm(vx))


def load_rational_corpus():
    """The shipped regression corpus: (grid, [(name, RationalHalfPlaneFunction), ...])."""
    from importlib import resources

    raw = json.loads(resources.files("hardylab").joinpath("data/rational_corpus.json").read_text())
    grid = GridSpec(1, raw["grid"]["n"], raw["grid"]["period"])
    return grid, [(d["name"], RationalHalfPlaneFunction.from_json(d)) for d in raw["instances"]]
