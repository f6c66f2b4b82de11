"""Finite-dimensional models T_b = sum_k b_k A_k on H = R^n, X = R^m.

Here every object of the duality-mapping geometry can be computed: the X_Q
norm of b is the top eigenvalue of T_b, the face D(b) is the image under Q
of the unit sphere of ker(I - T_b), and dual norms of f in X* follow from a
small convex program.  Models with block form [[0, C], [C^T, 0]] ("chiral")
have spectra symmetric about zero for every b, so sup <T_b w, w> = ||T_b||.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.stats import norm as normal_dist
from scipy.stats import qmc

from . import operators as ops

logger = logging.getLogger(__name__)

FIXED_TOL = 1e-8
NORMALIZE_TOL = 1e-9
RANK_TOL = 1e-8
UNCHECKED = "assumption-2ii-unchecked"
VIOLATED = "assumption-2ii-violated"


def _anticommuting_partner(mats: Sequence[np.ndarray]) -> Optional[np.ndarray]:
    """An invertible X with X A_k = -A_k X for all k, if one exists.

    Then X T_b X^-1 = -T_b for every b and all spectra are symmetric.
    """
    n = mats[0].shape[0]
    eye = np.eye(n)
    # vec(X A + A X) = (A^T kron I + I kron A) vec(X)
    rows = [np.kron(A.T, eye) + np.kron(eye, A) for A in mats]
    K = np.vstack(rows)
    _, s, vt = np.linalg.svd(K)
    null = vt[np.sum(s > 1e-10 * max(1.0, s.max())):]
    if null.shape[0] == 0:
        return None
    rng = np.random.default_rng(0)
    X = (rng.standard_normal(null.shape[0]) @ null).reshape(n, n, order="F")
    sv = np.linalg.svd(X, compute_uv=False)
    return X if sv.min() > 1e-8 * sv.max() else None


@dataclass(frozen=True)
class FinDimModel:
    """m symmetric n x n matrices A_k; T_b = sum b_k A_k and Q(w)_k = w^T A_k w."""

    matrices: tuple
    chiral: bool = False
    seed: Optional[int] = None
    label: str = ""
    flags: frozenset = frozenset()

    def __post_init__(self):
        mats = tuple(np.array(A, dtype=float) for A in self.matrices)
        if not mats:
            raise ValueError("a model needs at least one matrix")
        n = mats[0].shape[0]
        for A in mats:
            if A.shape != (n, n):
                raise ValueError("all matrices must be n x n")
            if np.abs(A - A.T).max() > 1e-12 * max(1.0, np.abs(A).max()):
                raise ValueError("model matrices must be symmetric")
            A.setflags(write=False)
        if self.chiral:
            h = n // 2
            if n % 2 or any(np.abs(A[:h, :h]).max() > 0 or np.abs(A[h:, h:]).max() > 0 for A in mats):
                raise ValueError("chiral model matrices must have the form [[0, C], [C^T, 0]]")
        flags = set(self.flags)
        if not self.chiral and "checked" not in flags and _anticommuting_partner(mats) is None:
            flags.add(UNCHECKED)
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "flags", frozenset(flags))

    @property
    def n(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def m(self) -> int:
        return len(self.matrices)

    @property
    def stack(self) -> np.ndarray:
        return np.stack(self.matrices)

    def tb(self, b) -> np.ndarray:
        return np.tensordot(np.asarray(b, float), self.stack, axes=1)

    def quantity(self, w) -> np.ndarray:
        w = np.asarray(w, float)
        return np.einsum("i,kij,j->k", w, self.stack, w)

    def gateaux(self, w, g) -> np.ndarray:
        """Q'_w g = 2 (w^T A_k g)_k."""
        return 2.0 * np.einsum("i,kij,j->k", np.asarray(w, float), self.stack, np.asarray(g, float))

    def spectrum(self, b) -> np.ndarray:
        return np.linalg.eigvalsh(self.tb(b))

    def xq_norm(self, b) -> float:
        """sup over unit w of <b, Q w>, the top eigenvalue of T_b."""
        return float(self.spectrum(b)[-1])

    def operator_norm(self, b) -> float:
        ev = self.spectrum(b)
        return float(max(ev[-1], -ev[0]))

    def check_assumption_2ii(self, n_samples: int = 64, seed: int = 0, tol: float = 1e-10) -> list:
        """Sampled b (plus +-e_k) where the top eigenvalue falls short of ||T_b||."""
        rng = np.random.default_rng(seed)
        cands = [s * e for e in np.eye(self.m) for s in (1.0, -1.0)]
        cands += list(rng.standard_normal((n_samples, self.m)))
        return [b for b in cands if self.operator_norm(b) - self.xq_norm(b) > tol * max(1.0, self.operator_norm(b))]

    def verified(self, n_samples: int = 64, seed: int = 0) -> "FinDimModel":
        """Copy whose flags record the outcome of the sampled Assumption 1.2(ii) check."""
        flags = set(self.flags) - {UNCHECKED}
        if self.check_assumption_2ii(n_samples, seed):
            flags.add(VIOLATED)
        return FinDimModel(self.matrices, self.chiral, self.seed, self.label, frozenset(flags) | {"checked"})

    def doubled(self) -> "FinDimModel":
        """T~_b (w, g) = (T_b g, T_b w): blocks [[0, A_k], [A_k, 0]]."""
        z = np.zeros((self.n, self.n))
        mats = [np.block([[z, A], [A, z]]) for A in self.matrices]
        return FinDimModel(tuple(mats), True, self.seed, f"doubled({self.label})")

    def as_problem(self):
        return FinDimProblem(self)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "seed": self.seed,
            "chiral": self.chiral,
            "label": self.label,
            "matrices": [A.tolist() for A in self.matrices],
        }

    @classmethod
    def from_json(cls, obj) -> "FinDimModel":
        if isinstance(obj, str):
            obj = json.loads(obj)
        mats = tuple(np.array(A, float) for A in obj["matrices"])
        if len(mats) != obj.get("m", len(mats)) or mats[0].shape[0] != obj.get("n", mats[0].shape[0]):
            raise ValueError("model JSON dimensions do not match its matrices")
        return cls(mats, bool(obj.get("chiral", False)), obj.get("seed"), obj.get("label", ""))


def build_model(n: int, m: int, seed: int = 0, chiral: bool = True) -> FinDimModel:
    """Deterministic pseudo-random model; chiral blocks C_k or full symmetric A_k."""
    if n < 1 or m < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    if chiral:
        if n % 2:
            raise ValueError("chiral models need even n")
        h = n // 2
        return chiral_model([rng.standard_normal((h, h)) for _ in range(m)], seed=seed)
    mats = []
    for _ in range(m):
        G = rng.standard_normal((n, n))
        mats.append((G + G.T) / 2)
    return FinDimModel(tuple(mats), False, seed, f"symmetric({n},{m})")


def chiral_model(blocks: Sequence, seed: Optional[int] = None) -> FinDimModel:
    blocks = [np.atleast_2d(np.asarray(C, float)) for C in blocks]
    h = blocks[0].shape[0]
    z = np.zeros((h, h))
    mats = tuple(np.block([[z, C], [C.T, z]]) for C in blocks)
    return FinDimModel(mats, True, seed, f"chiral({2 * h},{len(blocks)})")


def degenerate_chiral_model(half: int, m: int, d: int = 2, seed: int = 0) -> FinDimModel:
    """Chiral model whose b = e_1 has top eigenvalue 1 of multiplicity d.

    C_1 = diag(1, ..., 1, s_{d+1}, ...) with the tail below 1; the other
    blocks are pseudo-random.
    """
    if not 1 <= d <= half:
        raise ValueError("need 1 <= d <= half")
    rng = np.random.default_rng(seed)
    tail = np.linspace(0.6, 0.2, half - d) if half > d else np.array([])
    blocks = [np.diag(np.concatenate([np.ones(d), tail]))]
    blocks += [rng.standard_normal((half, half)) for _ in range(m - 1)]
    out = chiral_model(blocks, seed=seed)
    return FinDimModel(out.matrices, True, seed, f"degenerate_chiral({2 * half},{m},d={d})")


def simple_model() -> FinDimModel:
    """(b, (w, g)) -> (b w, -b g) on R^2: Q(w, g) = w^2 - g^2."""
    return FinDimModel((np.diag([1.0, -1.0]),), False, None, "simple")


def hilbert_type_model(half: int, m: int, seed: int = 0) -> FinDimModel:
    """A_k = [[P_k, R_k], [R_k, -P_k]]; each anticommutes with J = [[0, -I], [I, 0]].

    J plays the part of a Hilbert transform (J^2 = -I), so the doubled
    model carries the linear symmetry L(w, g) = (J w, -J g) of its
    compensated quantity.
    """
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(m):
        P = rng.standard_normal((half, half))
        R = rng.standard_normal((half, half))
        P, R = (P + P.T) / 2, (R + R.T) / 2
        mats.append(np.block([[P, R], [R, -P]]))
    return FinDimModel(tuple(mats), False, seed, f"hilbert_type({2 * half},{m})")


def complex_structure(half: int) -> np.ndarray:
    z, e = np.zeros((half, half)), np.eye(half)
    return np.block([[z, -e], [e, z]])


# --------------------------------------------------------------------------
# adapter for the variational solvers


class FinDimProblem:
    """Array view of a model, with the interface of the grid problems."""

    cell = 1.0
    complex_h = False

    def __init__(self, model: FinDimModel):
        self.model = model

    def unwrap_w(self, w):
        return np.asarray(w, float).copy()

    def unwrap_x(self, f):
        f = np.asarray(f, float)
        if f.shape != (self.model.m,):
            raise ValueError(f"data must have shape ({self.model.m},)")
        return f.copy()

    def wrap_w(self, w):
        return np.asarray(w, float)

    def wrap_x(self, q):
        return np.asarray(q, float)

    def quantity(self, w):
        return self.model.quantity(w)

    def tb(self, b, w):
        return self.model.tb(b) @ w

    tb_sym = tb

    def h_inner(self, a, b) -> float:
        return float(np.dot(a, b))

    def x_inner(self, b, q) -> float:
        return float(np.dot(b, q))

    def zeros_w(self):
        return np.zeros(self.model.n)

    def random_x(self, rng):
        return rng.standard_normal(self.model.m)

    def random_w(self, rng):
        return rng.standard_normal(self.model.n)

    def handle(self, b):
        return ops.matrix_handle(self.model.tb(b), label=self.model.label)

    def xq_norm(self, b, tol=None, max_iter=None) -> ops.SpectralEstimate:
        return ops.SpectralEstimate(self.model.xq_norm(b), True, 1)

    def top_eigvec(self, b):
        ev, V = np.linalg.eigh(self.model.tb(b))
        return ev[-1], V[:, -1]

    def phase_fix(self, w):
        i = int(np.argmax(np.abs(w) >= np.abs(w).max() * (1 - 1e-9)))
        return w if w[i] >= 0 else -w


# --------------------------------------------------------------------------
# duality faces


def fixed_basis(model: FinDimModel, b, tol: float = FIXED_TOL) -> np.ndarray:
    """Orthonormal columns spanning ker(I - T_b)."""
    ev, V = np.linalg.eigh(model.tb(b))
    return V[:, np.abs(ev - 1.0) <= tol]


def normalize(model: FinDimModel, b) -> np.ndarray:
    lam = model.xq_norm(b)
    if not lam > 0:
        raise ValueError("b has no positive part: sup <T_b w, w> <= 0")
    return np.asarray(b, float) / lam


def sphere_points(d: int, count: int, seed: int = 0) -> np.ndarray:
    """Deterministic low-discrepancy points on S^{d-1}: scrambled Halton, Gaussianized, normalized."""
    if d == 1:
        return np.array([[1.0], [-1.0]])[: max(1, min(count, 2))]
    u = qmc.Halton(d, scramble=True, seed=seed).random(count)
    g = normal_dist.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def affine_dimension(points: np.ndarray, tol: float = RANK_TOL) -> int:
    pts = np.atleast_2d(points)
    if len(pts) < 2:
        return 0
    c = pts - pts.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    return int(np.sum(s > tol * max(1.0, np.abs(pts).max())))


def support_vertices(points: np.ndarray, n_dirs: int = 256, seed: int = 0) -> np.ndarray:
    """Points that maximize <u, s> for some sampled direction u."""
    pts = np.atleast_2d(points)
    if len(pts) <= 1:
        return pts.copy()
    dirs = sphere_points(pts.shape[1], n_dirs, seed) if pts.shape[1] > 1 else np.array([[1.0], [-1.0]])
    idx = np.unique(np.argmax(pts @ dirs.T, axis=0))
    return pts[idx]


def hull_distance(p, points: np.ndarray, weight: float = 1e4) -> float:
    """Euclidean distance from p to the convex hull of the rows of points (NNLS)."""
    pts = np.atleast_2d(points)
    A = np.vstack([pts.T, weight * np.ones(len(pts))])
    rhs = np.concatenate([np.asarray(p, float), [weight]])
    lam, _ = optimize.nnls(A, rhs)
    return float(np.linalg.norm(pts.T @ lam - p))


@dataclass
class DualityFace:
    b: np.ndarray
    fixed_basis: np.ndarray
    samples: np.ndarray
    hull_vertices: np.ndarray
    affine_dim: int
    preimages: np.ndarray = field(repr=False, default=None)

    @property
    def d(self) -> int:
        return self.fixed_basis.shape[1]

    def report(self) -> dict:
        return {"b": self.b.tolist(), "d": self.d, "affine_dim": self.affine_dim, "n_samples": len(self.samples),
                "n_vertices": len(self.hull_vertices)}


def duality_face(model: FinDimModel, b, n_samples: int = 256, seed: int = 0) -> DualityFace:
    """D(b) sampled as Q of the unit sphere of ker(I - T_b); b must have top eigenvalue 1."""
    b = np.asarray(b, float)
    lam = model.xq_norm(b)
    if abs(lam - 1.0) > NORMALIZE_TOL:
        raise ValueError(f"b must be normalized (top eigenvalue {lam:.12g} != 1)")
    F = fixed_basis(model, b)
    d = F.shape[1]
    if d == 0:
        raise ValueError("empty fixed space")
    u = sphere_points(d, n_samples, seed)
    if d == 1:
        u = u[:1]  # w and -w have the same image
    W = u @ F.T
    S = np.array([model.quantity(w) for w in W])
    return DualityFace(b, F, S, support_vertices(S, seed=seed), affine_dimension(S), W)


def face_certificate(model: FinDimModel, b, w) -> tuple:
    """(lower, upper) bounds for ||Q w||_*: <b, Q w>/||b||_XQ and ||w||^2."""
    return float(np.dot(b, model.quantity(w)) / model.xq_norm(b)), float(np.dot(w, w))


def simple_top_fraction(model: FinDimModel, n_samples: int = 200, seed: int = 0, gap: float = 1e-8) -> float:
    """Fraction of random b whose top eigenvalue is simple (norm differentiable there)."""
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_samples):
        ev = model.spectrum(rng.standard_normal(model.m))
        hits += ev[-1] - ev[-2] > gap * max(1.0, abs(ev[-1])) if model.n > 1 else 1
    return hits / n_samples


# --------------------------------------------------------------------------
# dual norms


@dataclass
class NormEstimate:
    value: float
    converged: bool
    argument: Optional[np.ndarray] = None


def dual_norm(model: FinDimModel, f, iters: int = 600, seed: int = 0, n_starts: int = 4) -> NormEstimate:
    """sup <b, f> over sup <T_b w, w> <= 1.

    Projected supergradient ascent: step along f - <b, f> Q(v), v the top
    eigenvector, then rescale b to top eigenvalue 1; a Nelder-Mead polish on
    the scale-free ratio <b, f>/lambda_max(b) finishes.
    """
    f = np.asarray(f, float)
    if not np.any(f):
        return NormEstimate(0.0, True, np.zeros(model.m))
    rng = np.random.default_rng(seed)

    def ratio(b):
        lam = model.xq_norm(b)
        return np.dot(b, f) / lam if lam > 1e-14 else -np.inf

    starts = [f] + [rng.standard_normal(model.m) for _ in range(n_starts - 1)]
    best_val, best_b = -np.inf, None
    fn = np.linalg.norm(f)
    for b in starts:
        if model.xq_norm(b) <= 1e-14:
            continue
        b = normalize(model, b)
        for t in range(1, iters + 1):
            ev, V = np.linalg.eigh(model.tb(b))
            v = V[:, -1]
            g = f - np.dot(b, f) * model.quantity(v)
            val = np.dot(b, f)
            if val > best_val:
                best_val, best_b = val, b.copy()
            gn = np.linalg.norm(g)
            if gn < 1e-14 * fn:
                break
            cand = b + (0.5 / np.sqrt(t)) * g / gn * np.linalg.norm(b)
            if model.xq_norm(cand) <= 1e-14:
                break
            b = normalize(model, cand)
    if best_b is None:
        # every b has nonpositive top eigenvalue only if all A_k vanish
        return NormEstimate(float("inf"), False, None)
    res = optimize.minimize(lambda b: -ratio(b), best_b, method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
    if -res.fun > best_val:
        best_val, best_b = -res.fun, normalize(model, res.x)
    return NormEstimate(float(best_val), True, best_b)


def decomposition_norm(model: FinDimModel, f, terms: Optional[int] = None, n_starts: int = 8,
                       seed: int = 0, feas_tol: float = 1e-9) -> NormEstimate:
    """min sum ||w_j||^2 subject to sum Q(w_j) = f, by multi-start SLSQP."""
    f = np.asarray(f, float)
    if not np.any(f):
        return NormEstimate(0.0, True, np.zeros((1, model.n)))
    K = terms or min(6, model.m + 1)
    n = model.n
    A = model.stack
    rng = np.random.default_rng(seed)
    scale = np.sqrt(np.linalg.norm(f))

    def cons(x):
        W = x.reshape(K, n)
        return np.einsum("ji,kil,jl->k", W, A, W) - f

    def cons_jac(x):
        W = x.reshape(K, n)
        # d/dW_j of w_j^T A_k w_j = 2 A_k w_j
        return 2.0 * np.einsum("kil,jl->kji", A, W).reshape(model.m, K * n)

    best = None
    for s in range(n_starts):
        x0 = rng.standard_normal(K * n) * scale / np.sqrt(K)
        res = optimize.minimize(
            lambda x: (x @ x, 2 * x), x0, jac=True, method="SLSQP",
            constraints=[{"type": "eq", "fun": cons, "jac": cons_jac}],
            options={"maxiter": 500, "ftol": 1e-14},
        )
        viol = np.linalg.norm(cons(res.x))
        if viol <= feas_tol * max(1.0, np.linalg.norm(f)):
            val = float(res.x @ res.x)
            if best is None or val < best[0]:
                best = (val, res.x.reshape(K, n))
    if best is None:
        return NormEstimate(float("inf"), False, None)
    return NormEstimate(best[0], True, best[1])


def norm_corollary_check(model: FinDimModel, f, seed: int = 0) -> tuple:
    """(dual_norm, decomposition_norm) estimates of ||f||_{X_Q*}."""
    if model.n > 8 or model.m > 4:
        logger.warning("norm_corollary_check is meant for small models (n <= 4, m <= 3)")
    return dual_norm(model, f, seed=seed), decomposition_norm(model, f, seed=seed)


# --------------------------------------------------------------------------
# extreme points


def extreme_point_check(model: FinDimModel, f, tolerance: float = 1e-4, seed: int = 0,
                        steps: Sequence[float] = (0.2, 0.05)) -> dict:
    """Is f an extreme point of the dual unit ball?

    f is declared non-extreme when f + t u and f - t u both have
    decomposition norm <= 1 + tolerance for a unit direction u tangent to
    the norming functional b of f (2m random tangent directions plus the
    directions to sampled points of D(b)) and t = step * ||f||.  Segments
    through f shorter than the smallest step are not detected.  When f is
    extreme, Q w = f is solved and the energy must be 1 within tolerance.
    """
    from .variational import SolveOptions, min_norm_solve

    f = np.asarray(f, float)
    dn = dual_norm(model, f, seed=seed)
    if abs(dn.value - 1.0) > tolerance:
        raise ValueError(f"f must lie on the unit sphere of X_Q* (norm {dn.value:.8g})")
    b = dn.argument
    rng = np.random.default_rng(seed)
    dirs = []
    nb = b / np.linalg.norm(b)
    for _ in range(2 * model.m):
        u = rng.standard_normal(model.m)
        u -= np.dot(u, nb) * nb
        if np.linalg.norm(u) > 1e-12:
            dirs.append(u / np.linalg.norm(u))
    try:
        face = duality_face(model, normalize(model, b), n_samples=32, seed=seed)
        for s in face.hull_vertices:
            u = s - f
            if np.linalg.norm(u) > 1e-6:
                dirs.append(u / np.linalg.norm(u))
    except ValueError:
        pass
    witness = None
    fn = np.linalg.norm(f)
    for u in dirs:
        for t in np.asarray(steps) * fn:
            up = decomposition_norm(model, f + t * u, seed=seed).value
            if up > 1 + tolerance:
                continue
            dn_ = decomposition_norm(model, f - t * u, seed=seed).value
            if dn_ <= 1 + tolerance:
                witness = (f + t * u, f - t * u)
                break
        if witness is not None:
            break
    out = {"extreme": witness is None, "norming_b": b, "dual_norm": dn.value, "witness": witness}
    if witness is None:
        sol = min_norm_solve(model, f, SolveOptions(tol=1e-10, n_starts=4))
        out["solution"] = sol.solution
        out["energy"] = sol.energy
        out["in_QA"] = bool(sol.converged and abs(sol.energy - 1.0) <= tolerance)
    return out


# --------------------------------------------------------------------------
# Assumption 2.1 search


@dataclass
class Violation:
    b: np.ndarray
    omega: np.ndarray
    gamma: np.ndarray
    q_gap: float
    derivative: float


def assumption2_search(model: FinDimModel, trials: int = 20, seed: int = 0, starts: int = 8,
                       verify_tol: float = 1e-8) -> dict:
    """Search pairs w, g in the class A with Q w = Q g but Q'_w(g) = 0.

    If Q w = Q g with both in A then <b, Q g> = 1 = ||g||^2 for the
    multiplier b of w, so g lies in ker(I - T_b) too.  Each trial draws a
    random b, normalizes it, takes w on the unit sphere of the fixed space
    and minimizes |Q g - Q w|^2 + |Q'_w g|^2 over unit g in the same space,
    away from g = +-w.
    """
    rng = np.random.default_rng(seed)
    found: List[Violation] = []
    dims = []
    for _ in range(trials):
        b = rng.standard_normal(model.m)
        if model.xq_norm(b) <= 0:
            continue
        b = normalize(model, b)
        F = fixed_basis(model, b, 1e-10)
        d = F.shape[1]
        dims.append(d)
        if d < 2:
            continue
        a = rng.standard_normal(d)
        w = F @ (a / np.linalg.norm(a))
        qw = model.quantity(w)

        def resid(c):
            g = F @ (c / np.linalg.norm(c))
            return np.concatenate([model.quantity(g) - qw, model.gateaux(w, g)])

        for _s in range(starts):
            c0 = rng.standard_normal(d)
            sol = optimize.least_squares(resid, c0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
            g = F @ (sol.x / np.linalg.norm(sol.x))
            if min(np.linalg.norm(g - w), np.linalg.norm(g + w)) < 1e-3:
                continue
            gap = float(np.linalg.norm(model.quantity(g) - qw))
            der = float(np.linalg.norm(model.gateaux(w, g)))
            if gap <= verify_tol and der <= verify_tol and abs(np.dot(g, g) - 1) <= verify_tol:
                found.append(Violation(b, w, g, gap, der))
                break
    return {
        "trials": trials,
        "violations": found,
        "fixed_dims": dims,
        "summary": f"{len(found)} violations" if found else f"none found in {trials} trials",
    }
