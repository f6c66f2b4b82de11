import json
from importlib import resources

import numpy as np
import pytest

from hardylab import operators as ops
from hardylab.findim_lab import build_model, fixed_basis, normalize, simple_model
from hardylab.quantities import QuantityDescriptor, eval_quantity, real_pairing
from hardylab.spectral_core import Field, GridSpec, random_bandlimited, read_field
from hardylab.variational import (
    Budget,
    SolveOptions,
    as_problem,
    lagrange_residual,
    min_norm_solve,
    xq_norm,
    xqstar_bounds,
)

DATA = resources.files("hardylab").joinpath("data")
G16 = GridSpec(2, 16)


def shipped(name):
    return read_field(DATA.joinpath(name))


def chiral_instance(seed=3):
    model = build_model(4, 2, 7)
    b = normalize(model, np.random.default_rng(seed).standard_normal(2))
    F = fixed_basis(model, b)
    assert F.shape[1] == 1
    return model, b, F[:, 0]


def jacobian_certified():
    f, b = shipped("jacobian_n16.hqf"), shipped("jacobian_n16_b.hqf")
    d = QuantityDescriptor("planar_jacobian", f.grid)
    return d, f.real_part(), b.real_part()


# ---------------------------------------------------------------- min_norm_solve


def test_solve_zero_data():
    d = QuantityDescriptor("planar_jacobian", G16)
    r = min_norm_solve(d, Field.zeros(G16))
    assert r.energy == 0.0 and r.converged
    assert np.all(r.solution.values == 0)


def test_solve_findim_eigen_instance():
    model, b, w = chiral_instance()
    r = min_norm_solve(model, model.quantity(w))
    assert r.energy == pytest.approx(1.0, abs=1e-3)
    assert r.residual <= 1e-6 and r.converged
    assert r.history and r.history[-1][2] == r.residual


def test_solve_jacobian_feasible_n32():
    g = GridSpec(2, 32)
    d = QuantityDescriptor("planar_jacobian", g)
    w0 = random_bandlimited(g, np.random.default_rng(2), 8)
    r = min_norm_solve(d, eval_quantity(d, w0), SolveOptions(tol=1e-5))
    assert r.residual <= 1e-5
    assert r.energy <= w0.norm() ** 2 + 1e-3


def test_solve_rejects_mismatched_grid():
    d = QuantityDescriptor("planar_jacobian", G16)
    with pytest.raises(ValueError):
        min_norm_solve(d, Field.zeros(GridSpec(2, 32)))


# ---------------------------------------------------------------- lagrange_residual


def test_lagrange_residual_fixed_space():
    d, f, b = jacobian_certified()
    for w in ops.fixed_space(ops.make_handle(d, b), 1e-8):
        assert lagrange_residual(d, b, w) <= 1e-6


def test_lagrange_residual_zero_multiplier_and_generic(rng):
    d = QuantityDescriptor("planar_jacobian", G16)
    w = random_bandlimited(G16, rng)
    assert lagrange_residual(d, Field.zeros(G16), w) == 1.0
    b = random_bandlimited(G16, rng, real=True)
    assert lagrange_residual(d, b, w) > 0
    with pytest.raises(ValueError):
        lagrange_residual(d, b, Field.zeros(G16))


# ---------------------------------------------------------------- xq_norm


def test_xq_norm_small_cases():
    d = QuantityDescriptor("planar_jacobian", G16)
    assert xq_norm(d, Field.zeros(G16)).value == 0.0
    assert xq_norm(simple_model(), np.array([-3.0])).value == pytest.approx(3.0, abs=1e-12)


def test_xq_norm_jacobian_single_mode():
    x, y = G16.coords()
    b = Field(G16, np.cos(x + 2 * y))
    d = QuantityDescriptor("planar_jacobian", G16)
    M = ops.dense_matrix(ops.make_handle(d, b))
    ref = np.linalg.eigvalsh(0.5 * (M + M.T))[-1]
    assert xq_norm(d, b).value == pytest.approx(ref, rel=1e-6)


# ---------------------------------------------------------------- xqstar_bounds


def test_bounds_zero():
    d = QuantityDescriptor("planar_jacobian", G16)
    assert tuple(xqstar_bounds(d, Field.zeros(G16))) == (0.0, 0.0)


def test_bounds_simple_model():
    lo, hi = xqstar_bounds(simple_model(), np.array([0.5]))
    assert lo == pytest.approx(0.5, abs=1e-6) and hi == pytest.approx(0.5, abs=1e-6)


def test_bounds_collapse_on_certified_instance():
    model, b, w = chiral_instance()
    bnd = xqstar_bounds(model, model.quantity(w))
    assert bnd.lower == pytest.approx(1.0, abs=1e-2) and bnd.upper == pytest.approx(1.0, abs=1e-2)


def test_bounds_collapse_on_shipped_jacobian():
    d, f, _ = jacobian_certified()
    bnd = xqstar_bounds(d, f, Budget(n_samples=2))
    assert bnd.lower == pytest.approx(1.0, abs=1e-2) and bnd.upper == pytest.approx(1.0, abs=1e-2)


# ---------------------------------------------------------------- invariants


def test_sandwich_findim(rng):
    model = build_model(4, 2, 11)
    for _ in range(3):
        f = rng.standard_normal(2)
        r = min_norm_solve(model, f)
        bnd = xqstar_bounds(model, f)
        tol = SolveOptions().tol * np.linalg.norm(f)
        assert bnd.lower <= r.energy + tol
        assert bnd.lower <= bnd.upper + tol


def test_multiplier_consistency():
    model, b, w = chiral_instance()
    r = min_norm_solve(model, model.quantity(w), SolveOptions(tol=1e-9))
    assert r.residual <= 1e-8
    nb = xq_norm(model, r.multiplier).value
    assert abs(nb - 1) <= 0.05
    assert lagrange_residual(model, r.multiplier / nb, r.solution) <= 1e-2
    # the multiplier recovers the certificate b
    assert np.allclose(r.multiplier, b, atol=1e-6)


def test_rotation_gauge_jacobian():
    d, f, b = jacobian_certified()
    w0 = ops.fixed_space(ops.make_handle(d, b), 1e-8)[0]
    pb = as_problem(d)
    ref = pb.phase_fix(pb.unwrap_w(w0))
    opts = SolveOptions(tol=1e-9)
    sols = []
    for c in (1.0, np.exp(0.7j)):
        r = min_norm_solve(d, eval_quantity(d, w0 * c), opts)
        sols.append(pb.unwrap_w(r.solution))
    cell = np.sqrt(d.grid.cell)
    assert np.linalg.norm(sols[0] - sols[1]) * cell <= 1e-6
    assert min(np.linalg.norm(sols[0] - ref), np.linalg.norm(sols[0] + ref)) * cell <= 1e-5


def test_scaling():
    d = QuantityDescriptor("planar_jacobian", G16)
    w0 = random_bandlimited(G16, np.random.default_rng(4), 3)
    opts = SolveOptions()
    base = min_norm_solve(d, eval_quantity(d, w0), opts).energy
    for lam in (0.5, 2.0):
        e = min_norm_solve(d, eval_quantity(d, w0 * lam), opts).energy
        assert e == pytest.approx(lam**2 * base, rel=1e-3)


def test_report_schema():
    model, _, w = chiral_instance()
    rep = min_norm_solve(model, model.quantity(w)).report()
    assert {"energy", "residual", "iterations", "converged"} <= set(rep)
    json.dumps(rep)
