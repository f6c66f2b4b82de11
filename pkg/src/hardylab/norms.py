"""Desk-scale estimators for Lp, H1 (maximal function) and dyadic BMO norms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral_core import Field, GridSpec, gaussian, multiply

DIVERGENCE_RATIO = 1e-8


def lp_norm(f: Field, p: float) -> float:
    """(sum |f|^p dV)^(1/p) for finite p >= 1."""
    p = float(p)
    if not (np.isfinite(p) and p >= 1):
        raise ValueError(f"p must be finite and >= 1, got {p}")
    a = np.abs(f.values)
    m = a.max()
    if m == 0:
        return 0.0
    # scale out the maximum to avoid overflow for large p
    return float(m * (np.sum((a / m) ** p) * f.grid.cell) ** (1.0 / p))


@dataclass(frozen=True)
class ScaleLadder:
    """Dyadic mollifier scales t_j = t_min * 2**j, j = 0..levels-1.

    The mollifier is the unit-mass Gaussian with symbol exp(-t^2|xi|^2/2).
    """

    t_min: float
    levels: int
    mollifier: str = "gaussian"

    def __post_init__(self):
        if not self.t_min > 0:
            raise ValueError("t_min must be positive")
        if self.levels < 1:
            raise ValueError("ladder needs at least one level")
        if self.mollifier != "gaussian":
            raise ValueError(f"unsupported mollifier {self.mollifier!r}")

    @property
    def scales(self) -> np.ndarray:
        return self.t_min * 2.0 ** np.arange(self.levels)

    def check(self, grid: GridSpec):
        if self.scales[-1] > grid.period / 4 * (1 + 1e-12):
            raise ValueError(
                f"largest scale {self.scales[-1]:.4g} exceeds L/4 = {grid.period / 4:.4g}"
            )

    @classmethod
    def default(cls, grid: GridSpec) -> "ScaleLadder":
        """t_min = dx and as many levels as fit below L/4."""
        levels = int(np.floor(np.log2(grid.period / 4 / grid.dx) + 1e-12)) + 1
        return cls(grid.dx, max(levels, 1))


@dataclass(frozen=True)
class H1Estimate:
    value: float
    divergent: bool
    mean_ratio: float


def maximal_function(f: Field, ladder: ScaleLadder) -> np.ndarray:
    """max_j |f * chi_{t_j}| on the grid."""
    ladder.check(f.grid)
    fh = np.fft.fftn(f.values)
    out = np.zeros(f.grid.shape)
    for t in ladder.scales:
        sym = gaussian(t).on(f.grid)
        np.maximum(out, np.abs(np.fft.ifftn(sym * fh)), out=out)
    return out


def h1_norm(f: Field, ladder: ScaleLadder | None = None) -> H1Estimate:
    """L1 norm of the ladder maximal function, with a nonzero-mean flag.

    The flag is raised when |fhat(0)| / ||f||_2 exceeds 1e-8; such data
    cannot belong to H1 and the returned value is then only a grid number.
    """
    if ladder is None:
        ladder = ScaleLadder.default(f.grid)
    g = f.grid
    integral = abs(f.values.sum()) * g.cell
    l2 = float(np.sqrt(np.sum(np.abs(f.values) ** 2) * g.cell))
    ratio = integral / l2 if l2 > 0 else 0.0
    value = float(maximal_function(f, ladder).sum() * g.cell)
    return H1Estimate(value, ratio > DIVERGENCE_RATIO, ratio)


def _dyadic_blocks(values: np.ndarray, gen: int) -> np.ndarray:
    """Reshape so that axis -1 enumerates the points of each generation-gen cube."""
    n = values.shape[0]
    k = 2**gen
    s = n // k
    if values.ndim == 1:
        return values.reshape(k, s)
    blocks = values.reshape(k, s, k, s).transpose(0, 2, 1, 3)
    return blocks.reshape(k * k, s * s)


def bmo_norm(b: Field, max_depth: int | None = None) -> float:
    """Max over dyadic cubes (generations 0..max_depth) of mean |b - b_Q|."""
    n = b.grid.n
    top = int(np.log2(n))
    if max_depth is None:
        max_depth = top
    if not 0 <= max_depth <= top:
        raise ValueError(f"max_depth must lie in [0, {top}]")
    best = 0.0
    for gen in range(max_depth + 1):
        blk = _dyadic_blocks(b.values, gen)
        osc = np.abs(blk - blk.mean(axis=1, keepdims=True)).mean(axis=1)
        best = max(best, float(osc.max()))
    return best
